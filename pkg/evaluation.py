"""
Evaluation

Scores a prediction ledger: accuracy and Brier per method, Tukey-style
calibration bins, intransitivity-stratified robustness bins with player-cluster
bootstrap intervals, and the Spearman trend between I* and the model's Brier
gap to the market.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Any

import numpy as np
import pandas as pd
from scipy import stats

from ingest import SURFACES, Tour

METHOD_COLUMNS = {
    "model": "p_model",
    "elo": "p_elo",
    "welo": "p_welo",
    "bt": "p_bt",
    "shin": "p_shin",
}

MID_RANGE_EDGES = (0.375, 0.625)
CALIBRATION_COLUMNS = ["bin_low", "bin_high", "mean_predicted", "observed_frequency", "count"]
MIN_TREND_PAIRS = 10


@dataclass
class EvaluationParams:
    bootstrap_resamples: int = 10000
    robustness_bins: int = 3
    calibration_depth: int = 5

    def __post_init__(self):
        if self.bootstrap_resamples < 1:
            raise ValueError(f"bootstrap_resamples must be positive, got {self.bootstrap_resamples}")
        if not 2 <= self.robustness_bins <= 5:
            raise ValueError(f"robustness_bins must lie in [2, 5], got {self.robustness_bins}")
        if self.calibration_depth < 1:
            raise ValueError(f"calibration_depth must be positive, got {self.calibration_depth}")

    @classmethod
    def from_config(cls, section: Dict[str, Any]) -> 'EvaluationParams':
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in section.items() if k in known})


@dataclass
class BootstrapResult:
    point: float
    low: float
    high: float
    samples: np.ndarray = field(repr=False)

    @property
    def ci(self) -> Tuple[float, float]:
        return self.low, self.high


def _scored_rows(frame: pd.DataFrame, column: str) -> Tuple[np.ndarray, np.ndarray]:
    if column not in frame.columns:
        raise ValueError(f"Ledger has no probability column {column!r}")
    present = frame[column].notna()
    if not present.any():
        raise ValueError(f"No rows with a {column} probability to score")
    if not present.all():
        logging.warning(f"Ignoring {int((~present).sum())} rows without {column}")
    rows = frame.loc[present]
    return rows[column].to_numpy(dtype=float), rows["outcome"].to_numpy(dtype=float)


def accuracy(frame: pd.DataFrame, column: str = "p_model") -> float:
    """Share of matches whose predicted winner won; p = 0.5 predicts player_b"""
    p, outcome = _scored_rows(frame, column)
    return float(np.mean((p > 0.5).astype(float) == outcome))


def brier(frame: pd.DataFrame, column: str = "p_model") -> float:
    p, outcome = _scored_rows(frame, column)
    return float(np.mean((p - outcome) ** 2))


def brier_difference(frame: pd.DataFrame, column: str = "p_model", benchmark: str = "p_shin") -> np.ndarray:
    """Per-match Brier contribution of `column` minus that of `benchmark`"""
    outcome = frame["outcome"].to_numpy(dtype=float)
    return ((frame[column].to_numpy(dtype=float) - outcome) ** 2
            - (frame[benchmark].to_numpy(dtype=float) - outcome) ** 2)


def calibration_edges(depth: int = 5) -> np.ndarray:
    """
    Bin edges on [0, 1] from recursive halving towards both tails.

    depth levels give 1/2, 1/4, ... 1/2**depth and their mirrors; the two mid-range
    edges 0.375 and 0.625 split the central bins.
    """
    if depth < 1:
        raise ValueError(f"Calibration depth must be positive, got {depth}")
    edges = {0.0, 1.0, *MID_RANGE_EDGES}
    for k in range(1, depth + 1):
        edges.add(0.5 ** k)
        edges.add(1.0 - 0.5 ** k)
    return np.array(sorted(edges))


def calibration_curve(frame: pd.DataFrame, column: str = "p_model", depth: int = 5) -> pd.DataFrame:
    """
    Mean prediction and observed win frequency per calibration bin.

    Bins are [low, high) except the last, which includes 1. Every bin is emitted;
    empty bins have count 0 and NaN means.
    """
    p, outcome = _scored_rows(frame, column)
    edges = calibration_edges(depth)
    bins = np.clip(np.searchsorted(edges, p, side="right") - 1, 0, len(edges) - 2)
    rows = []
    for b in range(len(edges) - 1):
        mask = bins == b
        count = int(mask.sum())
        rows.append({
            "bin_low": float(edges[b]),
            "bin_high": float(edges[b + 1]),
            "mean_predicted": float(p[mask].mean()) if count else float("nan"),
            "observed_frequency": float(outcome[mask].mean()) if count else float("nan"),
            "count": count,
        })
    return pd.DataFrame(rows, columns=CALIBRATION_COLUMNS)


def cluster_bootstrap_ci(frame: pd.DataFrame, statistic: Callable[[pd.DataFrame], float],
                         resamples: int = 10000, seed: int = 0,
                         players: Tuple[str, str] = ("player_a", "player_b")) -> BootstrapResult:
    """
    Percentile 95% interval from resampling players with replacement.

    Resample b draws len(players) players with default_rng(seed + b) and keeps every
    match involving any drawn player. The point estimate is the statistic on the
    full frame.

    Args:
        frame: Ledger rows carrying both player ids
        statistic: Function of a ledger subset
        resamples: Number of resamples
        seed: Base seed

    Returns:
        BootstrapResult with the per-resample values
    """
    if resamples < 1:
        raise ValueError(f"resamples must be positive, got {resamples}")
    frame = frame.reset_index(drop=True)
    roster = np.array(sorted(set(frame[players[0]]) | set(frame[players[1]])))
    if len(roster) == 0:
        raise ValueError("Cannot bootstrap an empty ledger")
    position = {p: i for i, p in enumerate(roster)}
    a = frame[players[0]].map(position).to_numpy()
    b = frame[players[1]].map(position).to_numpy()

    samples = np.empty(resamples)
    for r in range(resamples):
        rng = np.random.default_rng(seed + r)
        drawn = np.bincount(rng.integers(0, len(roster), size=len(roster)), minlength=len(roster)) > 0
        samples[r] = statistic(frame.loc[drawn[a] | drawn[b]])
    low, high = np.percentile(samples, [2.5, 97.5])
    return BootstrapResult(point=float(statistic(frame)), low=float(low), high=float(high), samples=samples)


def _mean_difference(column: str, benchmark: str) -> Callable[[pd.DataFrame], float]:
    def statistic(rows: pd.DataFrame) -> float:
        return float(brier_difference(rows, column, benchmark).mean())
    return statistic


def robustness_bins(frame: pd.DataFrame, n_bins: int = 3, column: str = "i_star") -> List[pd.DataFrame]:
    """
    Partition the ledger by I*.

    Bin 0 holds the I* = 0 rows; the rest are sorted by I* (stable in ledger
    order) and split into n_bins near-equal groups.
    """
    if column not in frame.columns or frame[column].isna().any():
        raise ValueError(f"Every ledger row needs a {column} value")
    zero = frame[frame[column] == 0]
    nonzero = frame[frame[column] != 0].sort_values(column, kind="mergesort")
    if len(nonzero) < max(n_bins, 3):
        raise ValueError(f"Need at least {max(n_bins, 3)} rows with non-zero {column}, got {len(nonzero)}")
    positions = np.array_split(np.arange(len(nonzero)), n_bins)
    return [zero] + [nonzero.iloc[p] for p in positions]


def robustness_table(frame: pd.DataFrame, params: Optional[EvaluationParams] = None, seed: int = 0,
                     with_ci: bool = True) -> pd.DataFrame:
    """
    Brier scores of the model, Shin and WElo per I* bin with model-minus-benchmark gaps.

    Rows lacking a Shin probability are left out. With `with_ci`, each gap
    carries a cluster-bootstrap 95% interval.
    """
    params = params or EvaluationParams()
    usable = frame[frame["p_shin"].notna()]
    if len(usable) < len(frame):
        logging.warning(f"Robustness analysis skips {len(frame) - len(usable)} rows without market odds")

    rows = []
    for index, part in enumerate(robustness_bins(usable, params.robustness_bins)):
        row: Dict[str, Any] = {
            "bin": index,
            "i_low": float(part["i_star"].min()) if len(part) else float("nan"),
            "i_high": float(part["i_star"].max()) if len(part) else float("nan"),
            "n": len(part),
        }
        for name in ("model", "shin", "welo"):
            row[f"brier_{name}"] = brier(part, METHOD_COLUMNS[name]) if len(part) else float("nan")
        for benchmark in ("shin", "welo"):
            key = f"model_minus_{benchmark}"
            row[key] = row["brier_model"] - row[f"brier_{benchmark}"]
            if with_ci and len(part):
                result = cluster_bootstrap_ci(part, _mean_difference("p_model", METHOD_COLUMNS[benchmark]),
                                              params.bootstrap_resamples, seed)
                row[f"{key}_low"], row[f"{key}_high"] = result.ci
        rows.append(row)
    return pd.DataFrame(rows)


def spearman_trend(i_star: Sequence[float], differences: Sequence[float]) -> Tuple[float, float]:
    """
    Spearman rank correlation with average ranks for ties.

    Returns:
        (rho, two-sided p-value from the t approximation)
    """
    x = np.asarray(i_star, dtype=float)
    y = np.asarray(differences, dtype=float)
    if len(x) != len(y):
        raise ValueError(f"Length mismatch: {len(x)} I* values, {len(y)} differences")
    if len(x) < MIN_TREND_PAIRS:
        raise ValueError(f"Spearman trend needs at least {MIN_TREND_PAIRS} pairs, got {len(x)}")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ValueError("Spearman trend is undefined for all-tied inputs")
    result = stats.spearmanr(x, y)
    return float(result[0]), float(result[1])


def _summary_row(rows: pd.DataFrame, tour: str, surface: str) -> Dict[str, Any]:
    row: Dict[str, Any] = {"tour": tour, "surface": surface, "count": len(rows)}
    for name, column in METHOD_COLUMNS.items():
        row[f"acc_{name}"] = accuracy(rows, column) if len(rows) else float("nan")
        row[f"brier_{name}"] = brier(rows, column) if len(rows) else float("nan")
    return row


def performance_summary(frame: pd.DataFrame) -> pd.DataFrame:
    """
    Accuracy and Brier of every method by tour and surface.

    Methods are compared on the rows where all of them have a probability, so
    Count is shared. Tour `both` pools the tours; surface `all` pools surfaces.
    """
    columns = list(METHOD_COLUMNS.values())
    common = frame.dropna(subset=columns)
    if len(common) < len(frame):
        logging.warning(f"Performance summary uses {len(common)} of {len(frame)} rows (missing probabilities)")
    if common.empty:
        raise ValueError("No ledger rows carry every method's probability")

    rows = []
    tours = [t.value for t in Tour if t.value in set(common["tour"])] + ["both"]
    for tour in tours:
        by_tour = common if tour == "both" else common[common["tour"] == tour]
        for surface in [s.value for s in SURFACES] + ["all"]:
            part = by_tour if surface == "all" else by_tour[by_tour["surface"] == surface]
            if len(part):
                rows.append(_summary_row(part, tour, surface))
    return pd.DataFrame(rows)


@dataclass
class EvaluationReport:
    performance: pd.DataFrame
    calibration: Dict[str, pd.DataFrame]
    robustness: Optional[pd.DataFrame]
    trend: Optional[Tuple[float, float]]

    def artifacts(self) -> Dict[str, pd.DataFrame]:
        out = {"performance": self.performance}
        for name, curve in self.calibration.items():
            out[f"calibration_{name}"] = curve
        if self.robustness is not None:
            out["robustness"] = self.robustness
        if self.trend is not None:
            out["spearman"] = pd.DataFrame([{"rho": self.trend[0], "p_value": self.trend[1]}])
        return out


def evaluate_ledger(frame: pd.DataFrame, params: Optional[EvaluationParams] = None, seed: int = 0,
                    with_ci: bool = True) -> EvaluationReport:
    """
    Full evaluation of a ledger subset.

    Robustness and trend analyses need rows with I* and market odds; when there
    are too few, they are skipped with a warning.
    """
    params = params or EvaluationParams()
    if frame.empty:
        raise ValueError("Cannot evaluate an empty ledger")
    performance = performance_summary(frame)
    calibration = {name: calibration_curve(frame, column, params.calibration_depth)
                   for name, column in METHOD_COLUMNS.items() if frame[column].notna().any()}

    robustness = trend = None
    market = frame[frame["p_shin"].notna()]
    try:
        robustness = robustness_table(market, params, seed, with_ci)
    except ValueError as e:
        logging.warning(f"Robustness bins skipped: {e}")
    try:
        trend = spearman_trend(market["i_star"], brier_difference(market, "p_model", "p_shin"))
    except ValueError as e:
        logging.warning(f"Spearman trend skipped: {e}")
    return EvaluationReport(performance=performance, calibration=calibration, robustness=robustness, trend=trend)


def write_report(tables: Dict[str, pd.DataFrame], directory: str, prefix: str = "") -> List[Path]:
    """Write each table as `{prefix}{name}.csv` under `directory`"""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    written = []
    for name, table in tables.items():
        path = root / f"{prefix}{name}.csv"
        table.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")
        written.append(path)
    return written
