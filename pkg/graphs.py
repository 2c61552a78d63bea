"""
Dominance Graphs

Per-tour, per-surface directed dominance graphs. A DominanceLedger keeps the raw
head-to-head history; at any timestamp it yields decay-weighted dominance scores
for every pair with history, from which the three surface graphs and the node
feature matrix of a snapshot are built.
"""

import logging
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple, Any, Iterable

import numpy as np
import pandas as pd
import scipy.sparse as sp

from ingest import (
    MAIN_TIERS, SURFACES, SURFACE_INDEX, Handedness, MatchRecord, PlayerAttributes, Surface, Tier,
)

DAYS_PER_YEAR = 365.25
TIER_ORDER: Tuple[Tier, ...] = (Tier.GRAND_SLAM, Tier.FINALS, Tier.T1000, Tier.T500)
TIER_INDEX: Dict[Tier, int] = {t: i for i, t in enumerate(TIER_ORDER)}

# D within this distance of 0.5 counts as a tie and creates no edge
TIE_TOLERANCE = 1e-12

FEATURE_COLUMNS = [
    "height_cm", "weight_kg", "birth_year", "hand_left", "hand_right",
    "hard_in", "hard_out", "clay_in", "clay_out", "grass_in", "grass_out",
]

DEFAULT_TRANSFER = np.array([
    # played on: hard, clay, grass
    [1.0, 0.01, 0.37],   # target hard
    [0.07, 1.0, 0.09],   # target clay
    [0.45, 0.05, 1.0],   # target grass
])
DEFAULT_PRESTIGE = {Tier.GRAND_SLAM: 1.0, Tier.FINALS: 0.94, Tier.T1000: 0.85, Tier.T500: 0.69}


@dataclass
class GraphParams:
    """Decay rate, surface transfer matrix and tier prestige weights"""
    lambda_decay: float = 0.38
    surface_transfer: np.ndarray = field(default_factory=lambda: DEFAULT_TRANSFER.copy())
    tier_prestige: Dict[Tier, float] = field(default_factory=lambda: dict(DEFAULT_PRESTIGE))

    def __post_init__(self):
        self.surface_transfer = np.asarray(self.surface_transfer, dtype=float)
        if not self.lambda_decay > 0:
            raise ValueError(f"lambda_decay must be positive, got {self.lambda_decay}")
        if self.surface_transfer.shape != (3, 3):
            raise ValueError(f"surface_transfer must be 3x3, got shape {self.surface_transfer.shape}")
        if np.any(self.surface_transfer < 0) or np.any(self.surface_transfer > 1):
            raise ValueError("surface_transfer entries must lie in [0, 1]")
        if not np.all(np.diag(self.surface_transfer) == 1.0):
            raise ValueError("surface_transfer must have a unit diagonal")
        missing = [t.value for t in TIER_ORDER if t not in self.tier_prestige]
        if missing:
            raise ValueError(f"tier_prestige is missing tiers {missing}")
        if any(self.tier_prestige[t] <= 0 for t in TIER_ORDER):
            raise ValueError("tier_prestige weights must be positive")

    @property
    def prestige_vector(self) -> np.ndarray:
        return np.array([self.tier_prestige[t] for t in TIER_ORDER], dtype=float)

    def transfer(self, target: Surface, source: Surface) -> float:
        return float(self.surface_transfer[SURFACE_INDEX[target], SURFACE_INDEX[source]])

    @classmethod
    def from_config(cls, section: Dict[str, Any]) -> 'GraphParams':
        transfer = section.get("surface_transfer")
        matrix = DEFAULT_TRANSFER.copy()
        if transfer:
            matrix = np.array([[float(transfer[t.value][s.value]) for s in SURFACES] for t in SURFACES])
        prestige = dict(DEFAULT_PRESTIGE)
        for name, value in (section.get("tier_prestige") or {}).items():
            prestige[Tier(name)] = float(value)
        return cls(
            lambda_decay=float(section.get("lambda_decay", 0.38)),
            surface_transfer=matrix,
            tier_prestige=prestige,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lambda_decay": self.lambda_decay,
            "surface_transfer": {t.value: {s.value: float(self.surface_transfer[i, j])
                                           for j, s in enumerate(SURFACES)}
                                 for i, t in enumerate(SURFACES)},
            "tier_prestige": {t.value: self.tier_prestige[t] for t in TIER_ORDER},
        }


def decay_coefficient(tau_n: date, tau_k: date, lambda_decay: float) -> float:
    """exp(-lambda * years elapsed between a past match and the evaluation date)"""
    if tau_k > tau_n:
        raise ValueError(f"Match date {tau_k} lies after evaluation date {tau_n}")
    years = (tau_n - tau_k).days / DAYS_PER_YEAR
    return float(np.exp(-lambda_decay * years))


@dataclass
class PairTable:
    """
    Dominance state of every pair with history at one evaluation date.

    Pairs are stored canonically as (a, b) with a < b (node indices); `dominance[r, s]`
    is D(a, b) on surface s and `evidence[r, s]` the matching weight sum.
    """
    timestamp: date
    pairs: np.ndarray
    dominance: np.ndarray
    evidence: np.ndarray
    _rows: Dict[Tuple[int, int], int] = field(default_factory=dict, repr=False)
    _neighbours: Optional[List[Set[int]]] = field(default=None, repr=False)

    def __post_init__(self):
        self._rows = {(int(a), int(b)): r for r, (a, b) in enumerate(self.pairs)}

    def __len__(self) -> int:
        return len(self.pairs)

    def lookup(self, u: int, v: int, surface: int) -> Tuple[Optional[float], float]:
        """(D(u, v), evidence) on a surface, or (None, 0) with no history"""
        if u < v:
            row = self._rows.get((u, v))
            if row is None:
                return None, 0.0
            return float(self.dominance[row, surface]), float(self.evidence[row, surface])
        row = self._rows.get((v, u))
        if row is None:
            return None, 0.0
        return 1.0 - float(self.dominance[row, surface]), float(self.evidence[row, surface])

    def edge_rows(self) -> np.ndarray:
        """Rows forming the shared edge index set: not tied on at least one surface"""
        if len(self.pairs) == 0:
            return np.zeros(0, dtype=int)
        decisive = np.abs(self.dominance - 0.5) > TIE_TOLERANCE
        return np.flatnonzero(decisive.any(axis=1))

    def neighbours(self, n_nodes: int) -> List[Set[int]]:
        """Adjacency sets over the shared edge index set"""
        if self._neighbours is None:
            neighbours: List[Set[int]] = [set() for _ in range(n_nodes)]
            for row in self.edge_rows():
                a, b = int(self.pairs[row, 0]), int(self.pairs[row, 1])
                neighbours[a].add(b)
                neighbours[b].add(a)
            self._neighbours = neighbours
        return self._neighbours


class DominanceLedger:
    """
    Raw head-to-head history over a fixed roster.

    Every match is kept with its date, surface, tier and games proportion so the
    decay term can be re-evaluated at any date. Queries only see matches dated
    strictly before the evaluation date.
    """

    def __init__(self, roster: Sequence[str]):
        self.nodes: Tuple[str, ...] = tuple(roster)
        self.node_index: Dict[str, int] = {p: i for i, p in enumerate(self.nodes)}
        if len(self.node_index) != len(self.nodes):
            raise ValueError("Roster contains duplicate player ids")
        self._pair_codes: Dict[Tuple[int, int], int] = {}
        self._pairs: List[Tuple[int, int]] = []
        self._days: List[int] = []
        self._surfaces: List[int] = []
        self._tiers: List[int] = []
        self._codes: List[int] = []
        self._g: List[float] = []
        self._arrays: Optional[Dict[str, np.ndarray]] = None

    def __len__(self) -> int:
        return len(self._days)

    def add_match(self, match: MatchRecord) -> None:
        if match.tier not in MAIN_TIERS:
            raise ValueError(f"Match {match.match_id} has tier {match.tier.value}; filter tiers first")
        try:
            w = self.node_index[match.winner_id]
            l = self.node_index[match.loser_id]
        except KeyError as e:
            raise ValueError(f"Player {e.args[0]} of match {match.match_id} is not in the roster")
        if w == l:
            raise ValueError(f"Match {match.match_id} has the same player on both sides")

        g = match.games_proportion()
        pair, g_pair = ((w, l), g) if w < l else ((l, w), 1.0 - g)
        code = self._pair_codes.get(pair)
        if code is None:
            code = len(self._pairs)
            self._pair_codes[pair] = code
            self._pairs.append(pair)

        self._days.append(match.date.toordinal())
        self._surfaces.append(SURFACE_INDEX[match.surface])
        self._tiers.append(TIER_INDEX[match.tier])
        self._codes.append(code)
        self._g.append(g_pair)
        self._arrays = None

    def add_matches(self, matches: Iterable[MatchRecord]) -> None:
        for match in matches:
            self.add_match(match)

    def _as_arrays(self) -> Dict[str, np.ndarray]:
        if self._arrays is None:
            self._arrays = {
                "days": np.asarray(self._days, dtype=np.int64),
                "surfaces": np.asarray(self._surfaces, dtype=np.int64),
                "tiers": np.asarray(self._tiers, dtype=np.int64),
                "codes": np.asarray(self._codes, dtype=np.int64),
                "g": np.asarray(self._g, dtype=float),
                "pairs": np.asarray(self._pairs, dtype=np.int64).reshape(-1, 2),
            }
        return self._arrays

    def _weights(self, arrays: Dict[str, np.ndarray], mask: np.ndarray, timestamp: date,
                 params: GraphParams) -> np.ndarray:
        """alpha * beta * phi for every masked match, one column per target surface"""
        elapsed = (timestamp.toordinal() - arrays["days"][mask]) / DAYS_PER_YEAR
        base = params.prestige_vector[arrays["tiers"][mask]] * np.exp(-params.lambda_decay * elapsed)
        return params.surface_transfer[:, arrays["surfaces"][mask]].T * base[:, None]

    def pair_table(self, timestamp: date, params: GraphParams) -> PairTable:
        """Dominance scores of every pair with a match strictly before `timestamp`"""
        arrays = self._as_arrays()
        mask = arrays["days"] < timestamp.toordinal()
        if not mask.any():
            return PairTable(timestamp, np.zeros((0, 2), dtype=np.int64), np.zeros((0, 3)), np.zeros((0, 3)))

        codes = arrays["codes"][mask]
        weights = self._weights(arrays, mask, timestamp, params)
        g = arrays["g"][mask]
        n_codes = len(self._pairs)

        numerator = np.zeros((n_codes, 3))
        denominator = np.zeros((n_codes, 3))
        for s in range(3):
            numerator[:, s] = np.bincount(codes, weights=weights[:, s] * g, minlength=n_codes)
            denominator[:, s] = np.bincount(codes, weights=weights[:, s], minlength=n_codes)

        present = np.unique(codes)
        numerator, denominator = numerator[present], denominator[present]
        dominance = np.full_like(numerator, 0.5)
        positive = denominator > 0
        dominance[positive] = numerator[positive] / denominator[positive]
        return PairTable(timestamp, arrays["pairs"][present], dominance, denominator)

    def pair_history(self, u: str, v: str, timestamp: date) -> List[Dict[str, Any]]:
        """Matches between u and v before `timestamp`, with g from u's side"""
        a, b = self.node_index[u], self.node_index[v]
        code = self._pair_codes.get((min(a, b), max(a, b)))
        if code is None:
            return []
        arrays = self._as_arrays()
        rows = np.flatnonzero((arrays["codes"] == code) & (arrays["days"] < timestamp.toordinal()))
        history = []
        for r in rows:
            g = float(arrays["g"][r])
            history.append({
                "date": date.fromordinal(int(arrays["days"][r])),
                "surface": SURFACES[int(arrays["surfaces"][r])],
                "tier": TIER_ORDER[int(arrays["tiers"][r])],
                "g": g if a < b else 1.0 - g,
            })
        return history


def dominance_score(history: Sequence[Dict[str, Any]], surface: Surface, timestamp: date,
                    params: GraphParams) -> Tuple[Optional[float], float]:
    """
    Evidence-weighted mean games proportion of one ordered pair.

    Args:
        history: Prior matches of the pair as returned by `DominanceLedger.pair_history`
        surface: Target surface
        timestamp: Evaluation date; matches on or after it are ignored
        params: Graph parameters

    Returns:
        (D, evidence_weight); (None, 0.0) when the pair has no prior match
    """
    numerator, denominator = 0.0, 0.0
    seen = False
    for entry in history:
        if entry["date"] >= timestamp:
            continue
        seen = True
        weight = (params.transfer(surface, entry["surface"]) * params.tier_prestige[entry["tier"]]
                  * decay_coefficient(timestamp, entry["date"], params.lambda_decay))
        numerator += weight * entry["g"]
        denominator += weight
    if not seen:
        return None, 0.0
    if denominator <= 0:
        return 0.5, 0.0
    return numerator / denominator, denominator


@dataclass
class SurfaceGraph:
    """Directed dominance graph of one surface at one snapshot"""
    snapshot_index: int
    surface: Surface
    nodes: Tuple[str, ...]
    edges: np.ndarray
    weights: np.ndarray
    features: Optional[np.ndarray] = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def adjacency(self) -> sp.csr_matrix:
        """A with A[u, v] = w_uv on edges"""
        n = self.n_nodes
        if len(self.edges) == 0:
            return sp.csr_matrix((n, n))
        return sp.csr_matrix((self.weights, (self.edges[:, 0], self.edges[:, 1])), shape=(n, n))

    def degrees(self) -> Tuple[np.ndarray, np.ndarray]:
        """Unweighted (in, out) degrees"""
        n = self.n_nodes
        if len(self.edges) == 0:
            return np.zeros(n), np.zeros(n)
        out_deg = np.bincount(self.edges[:, 0], minlength=n).astype(float)
        in_deg = np.bincount(self.edges[:, 1], minlength=n).astype(float)
        return in_deg, out_deg


@dataclass
class GraphSnapshot:
    """The three surface graphs of one snapshot plus the pair table they came from"""
    index: int
    timestamp: date
    table: PairTable
    graphs: Dict[Surface, SurfaceGraph]

    @property
    def nodes(self) -> Tuple[str, ...]:
        return next(iter(self.graphs.values())).nodes

    @property
    def features(self) -> Optional[np.ndarray]:
        return self.graphs[Surface.HARD].features


def build_surface_graphs(index: int, timestamp: date, ledger: DominanceLedger,
                         params: GraphParams) -> GraphSnapshot:
    """
    Build the hard, clay and grass graphs at one snapshot.

    The edge index set is shared across surfaces. On each surface an edge points
    from the dominant player with weight max(D, 1 - D); a surface where the pair's
    score is tied contributes no edge.
    """
    table = ledger.pair_table(timestamp, params)
    rows = table.edge_rows()
    pairs = table.pairs[rows]
    graphs: Dict[Surface, SurfaceGraph] = {}
    for s, surface in enumerate(SURFACES):
        scores = table.dominance[rows, s]
        keep = np.abs(scores - 0.5) > TIE_TOLERANCE
        forward = scores > 0.5
        src = np.where(forward, pairs[:, 0], pairs[:, 1])[keep]
        dst = np.where(forward, pairs[:, 1], pairs[:, 0])[keep]
        weights = np.where(forward, scores, 1.0 - scores)[keep]
        graphs[surface] = SurfaceGraph(
            snapshot_index=index,
            surface=surface,
            nodes=ledger.nodes,
            edges=np.stack([src, dst], axis=1).astype(np.int64) if len(src) else np.zeros((0, 2), dtype=np.int64),
            weights=weights.astype(float),
        )
    logging.debug(f"Snapshot {index} ({timestamp}): {len(rows)} shared edges from {len(table)} pairs")
    return GraphSnapshot(index=index, timestamp=timestamp, table=table, graphs=graphs)


def _birth_year(value: date) -> float:
    start = date(value.year, 1, 1)
    length = (date(value.year + 1, 1, 1) - start).days
    return value.year + (value - start).days / length


def static_features(nodes: Sequence[str], attributes: Iterable[PlayerAttributes]) -> np.ndarray:
    """Unnormalised height, weight, birth year and handedness one-hot"""
    by_id = {a.player_id: a for a in attributes}
    missing = [p for p in nodes if p not in by_id or not by_id[p].is_complete()]
    if missing:
        raise ValueError(f"{len(missing)} players lack complete attributes (e.g. {missing[:3]}); impute first")
    rows = []
    for player in nodes:
        a = by_id[player]
        rows.append([
            a.height_cm, a.weight_kg, _birth_year(a.birth_date),
            1.0 if a.handedness == Handedness.LEFT else 0.0,
            1.0 if a.handedness == Handedness.RIGHT else 0.0,
        ])
    return np.asarray(rows, dtype=float).reshape(len(nodes), 5)


def l2_normalise_columns(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=0)
    safe = np.where(norms > 0, norms, 1.0)
    return matrix / safe


def node_features(snapshot: GraphSnapshot, static: np.ndarray) -> np.ndarray:
    """
    Feature matrix of one snapshot: static columns plus in/out degree per surface,
    each column scaled to unit Euclidean norm (all-zero columns stay zero).
    The result is attached to every surface graph of the snapshot.
    """
    dynamic = []
    for surface in SURFACES:
        in_deg, out_deg = snapshot.graphs[surface].degrees()
        dynamic.extend([in_deg, out_deg])
    raw = np.column_stack([static] + dynamic)
    features = l2_normalise_columns(raw)
    for graph in snapshot.graphs.values():
        graph.features = features
    return features


def write_graph_dump(snapshot: GraphSnapshot, directory: str) -> Tuple[Path, Path]:
    """Edge list (u, v, surface, weight) and node feature files for one snapshot"""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    nodes = snapshot.nodes
    rows = []
    for surface in SURFACES:
        graph = snapshot.graphs[surface]
        for (u, v), w in zip(graph.edges, graph.weights):
            rows.append({"u": nodes[u], "v": nodes[v], "surface": surface.value, "weight": float(w)})
    edges_path = out / f"edges_{snapshot.index:05d}.csv"
    pd.DataFrame(rows, columns=["u", "v", "surface", "weight"]).to_csv(edges_path, index=False, lineterminator="\n")

    features_path = out / f"features_{snapshot.index:05d}.csv"
    if snapshot.features is not None:
        frame = pd.DataFrame(snapshot.features, columns=FEATURE_COLUMNS)
        frame.insert(0, "player_id", list(nodes))
        frame.to_csv(features_path, index=False, lineterminator="\n")
    return edges_path, features_path
