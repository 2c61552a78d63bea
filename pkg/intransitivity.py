"""
Intransitivity Measure

Scores how cyclic the dominance structure around a match is. The neighbourhood of
(u, v) is the pair plus their common opponents; pairwise dominance scores become
logit advantages, which are split into a potential-difference (transitive) part
and a divergence-free (cyclic) part. The ratio of their norms, scaled by the
square root of the pair's head-to-head evidence, is I*.
"""

import logging
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Dict, List, Optional, Set, Tuple, Any, Sequence

import numpy as np
import pandas as pd

from graphs import GraphSnapshot, PairTable
from ingest import SURFACE_INDEX, SURFACES, MatchRecord, Surface, Tour

POLICIES = ("zero", "observed_only")

SCORE_COLUMNS = ["match_id", "tour", "surface", "i_raw", "evidence", "i_star", "neighbourhood"]


@dataclass
class IntransitivityParams:
    logit_epsilon: float = 1e-3
    unobserved_policy: str = "zero"

    def __post_init__(self):
        if not 0.0 < self.logit_epsilon < 0.5:
            raise ValueError(f"logit_epsilon must lie in (0, 0.5), got {self.logit_epsilon}")
        if self.unobserved_policy not in POLICIES:
            raise ValueError(f"unobserved_policy must be one of {POLICIES}, got {self.unobserved_policy!r}")

    @classmethod
    def from_config(cls, section: Dict[str, Any]) -> 'IntransitivityParams':
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in section.items() if k in known})


@dataclass
class AdvantageMatrix:
    """Antisymmetric logit advantages over a neighbourhood; nodes[0:2] are the match pair"""
    nodes: Tuple[int, ...]
    matrix: np.ndarray
    observed: np.ndarray

    @property
    def size(self) -> int:
        return len(self.nodes)


@dataclass
class IntransitivityScore:
    match_id: str
    i_raw: float
    evidence_weight: float
    i_star: float
    neighbourhood: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def common_opponents(u: int, v: int, table: PairTable, n_nodes: int) -> Set[int]:
    """Players linked to both u and v in the shared edge set"""
    neighbours = table.neighbours(n_nodes)
    return (neighbours[u] & neighbours[v]) - {u, v}


def logit_advantage(w: float, epsilon: float = 1e-3) -> float:
    w = min(max(w, epsilon), 1.0 - epsilon)
    return float(np.log(w / (1.0 - w)))


def advantage_matrix(nodes: Sequence[int], table: PairTable, surface: Surface,
                     epsilon: float = 1e-3) -> AdvantageMatrix:
    """
    Logit advantages between every pair of neighbourhood nodes on one surface.

    Pairs without history carry 0 and are marked unobserved.
    """
    n = len(nodes)
    s = SURFACE_INDEX[surface]
    matrix = np.zeros((n, n))
    observed = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            score, _ = table.lookup(nodes[i], nodes[j], s)
            if score is None:
                continue
            value = logit_advantage(score, epsilon)
            matrix[i, j] = value
            matrix[j, i] = -value
            observed[i, j] = observed[j, i] = True
    return AdvantageMatrix(nodes=tuple(nodes), matrix=matrix, observed=observed)


def hodge_decompose(advantage: Any, policy: str = "zero") -> Tuple[np.ndarray, np.ndarray]:
    """
    Split an antisymmetric matrix into transitive T and cyclic C with T + C = A.

    Args:
        advantage: AdvantageMatrix or square antisymmetric array
        policy: "zero" fits the potential on the complete graph (unobserved pairs
            count as zero advantage); "observed_only" fits it on observed pairs only
            and leaves T zero elsewhere

    Returns:
        (T, C)
    """
    if isinstance(advantage, AdvantageMatrix):
        A, observed = advantage.matrix, advantage.observed
    else:
        A = np.asarray(advantage, dtype=float)
        observed = ~np.eye(len(A), dtype=bool)
    n = A.shape[0]
    if n < 2:
        raise ValueError(f"Hodge decomposition needs at least 2 nodes, got {n}")
    if policy not in POLICIES:
        raise ValueError(f"Unknown unobserved-pair policy {policy!r}")

    if policy == "zero":
        potential = A.mean(axis=1)
        T = potential[:, None] - potential[None, :]
    else:
        mask = observed & ~np.eye(n, dtype=bool)
        laplacian = np.diag(mask.sum(axis=1)) - mask.astype(float)
        divergence = (A * mask).sum(axis=1)
        potential = np.linalg.lstsq(laplacian, divergence, rcond=None)[0]
        T = (potential[:, None] - potential[None, :]) * mask
    return T, A - T


def intransitivity_index(advantage: Any, policy: str = "zero") -> float:
    """I(A) = (1 + ||C||_F) / (1 + ||T||_F)"""
    T, C = hodge_decompose(advantage, policy)
    return float((1.0 + np.linalg.norm(C)) / (1.0 + np.linalg.norm(T)))


def weighted_intransitivity(match: MatchRecord, snapshot: GraphSnapshot, node_index: Dict[str, int],
                            params: Optional[IntransitivityParams] = None) -> IntransitivityScore:
    """
    I* of a match scored on the graph built before its snapshot.

    Player order inside the match does not matter; a pair without head-to-head
    history scores 0.
    """
    params = params or IntransitivityParams()
    u, v = node_index[match.winner_id], node_index[match.loser_id]
    table = snapshot.table
    score, evidence = table.lookup(u, v, SURFACE_INDEX[match.surface])
    opponents = common_opponents(u, v, table, len(node_index))
    if score is None or evidence <= 0:
        return IntransitivityScore(match.match_id, 0.0, 0.0, 0.0, len(opponents))
    nodes = [min(u, v), max(u, v)] + sorted(opponents)
    advantage = advantage_matrix(nodes, table, match.surface, params.logit_epsilon)
    raw = intransitivity_index(advantage, params.unobserved_policy)
    weight = float(np.sqrt(evidence))
    return IntransitivityScore(match.match_id, raw, weight, raw * weight, len(opponents))


def write_scores(rows: Sequence[Dict[str, Any]], path: str) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(list(rows), columns=SCORE_COLUMNS).to_csv(out, index=False, lineterminator="\n")
    return out


def summarise_intransitivity(frame: pd.DataFrame) -> Tuple[pd.DataFrame, Optional[float]]:
    """
    Mean I* and match count by surface and tour, plus the women/men ratio of overall means.

    Args:
        frame: Rows with tour, surface and i_star columns

    Returns:
        (summary table, ratio or None when a tour is missing)
    """
    summary = (frame.groupby(["surface", "tour"])["i_star"].agg(["mean", "count"])
               .reset_index().rename(columns={"mean": "mean_i_star", "count": "matches"}))
    order = {s.value: i for i, s in enumerate(SURFACES)}
    summary = summary.sort_values(["surface", "tour"], key=lambda c: c.map(order) if c.name == "surface" else c)
    overall = frame.groupby("tour")["i_star"].mean()
    men, women = Tour.MEN.value, Tour.WOMEN.value
    ratio = None
    if men in overall and women in overall and overall[men] > 0:
        ratio = float(overall[women] / overall[men])
    else:
        logging.warning("Women/men intransitivity ratio undefined: a tour is missing or has zero mean I*")
    return summary.reset_index(drop=True), ratio
