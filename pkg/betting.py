"""
Betting Simulation

Replays a prediction ledger against bookmaker odds. Kelly staking resets the
bankroll to 1 before every bet; unit staking backs the favourite of the chosen
probability column with one unit. An optional I* threshold γ restricts the
matches considered. Also provides the annualised Sharpe ratio, the validation
search for γ and a Monte-Carlo test against random bets on the same odds.
"""

import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Any, Iterable

import numpy as np
import pandas as pd

from events import EventBus, event_bus as default_event_bus

STAKING_RULES = ("kelly", "unit", "kelly_favourite")
RANDOM_STAKE_RULES = ("strategy", "unit", "kelly")
ANNUALISATION_DAYS = 365.25
MC_CHUNK = 256

BET_COLUMNS = ["match_id", "date", "side", "stake", "odds", "prob", "i_star", "payout", "profit"]
REPORT_COLUMNS = ["method", "staking", "gamma", "bets", "staked", "returned", "profit", "roi", "sharpe",
                  "p_bs", "random_stake", "skipped"]
CURVE_COLUMNS = ["gamma", "kelly_roi", "kelly_bets", "unit_roi", "unit_bets"]
REPORT_METHODS = {"model": "p_model", "welo": "p_welo", "elo": "p_elo", "bt": "p_bt"}


@dataclass
class StrategyConfig:
    staking: str = "kelly"
    gamma: Optional[float] = None
    probability_column: str = "p_model"

    def __post_init__(self):
        if self.staking not in STAKING_RULES:
            raise ValueError(f"staking must be one of {STAKING_RULES}, got {self.staking!r}")
        if self.gamma is not None and self.gamma < 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")

    @classmethod
    def from_config(cls, section: Dict[str, Any]) -> 'StrategyConfig':
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in section.items() if k in known})

    def label(self) -> str:
        gamma = "none" if self.gamma is None else f"{self.gamma:g}"
        return f"{self.probability_column}/{self.staking}/gamma={gamma}"


@dataclass
class BetRecord:
    match_id: str
    date: str
    side: str
    stake: float
    odds: float
    prob: float
    i_star: float
    payout: float
    profit: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class SimulationResult:
    strategy: StrategyConfig
    bets: List[BetRecord]
    staked: float
    returned: float
    profit: float
    skipped: int
    eligible: int

    @property
    def roi(self) -> float:
        return self.profit / self.staked if self.staked > 0 else float("nan")

    def daily_profit(self) -> pd.Series:
        if not self.bets:
            return pd.Series(dtype=float)
        frame = pd.DataFrame([b.to_dict() for b in self.bets])
        return frame.groupby("date")["profit"].sum().sort_index()


@dataclass
class ThresholdSearch:
    gamma: float
    score: float
    curve: pd.DataFrame = field(repr=False)


@dataclass
class SignificanceResult:
    p_value: float
    observed_roi: float
    trials: int
    bets: int
    random_stake: str
    null_rois: np.ndarray = field(repr=False)


def kelly_fraction(p: float, odds: float) -> float:
    """f* = (p * o - 1) / (o - 1), floored at 0"""
    if odds <= 1:
        raise ValueError(f"Decimal odds must exceed 1, got {odds}")
    return max((p * odds - 1.0) / (odds - 1.0), 0.0)


def _kelly(p: np.ndarray, odds: np.ndarray) -> np.ndarray:
    return np.maximum((p * odds - 1.0) / (odds - 1.0), 0.0)


def _market(frame: pd.DataFrame, column: str) -> Tuple[pd.DataFrame, int]:
    """Rows with a probability and valid odds on both sides, plus the count skipped for missing odds"""
    if column not in frame.columns:
        raise ValueError(f"Ledger has no probability column {column!r}")
    rows = frame[frame[column].notna()]
    priced = rows["odds_a"].notna() & rows["odds_b"].notna() & (rows["odds_a"] > 1) & (rows["odds_b"] > 1)
    skipped = int((~priced).sum())
    return rows[priced], skipped


def _eligible(rows: pd.DataFrame, gamma: Optional[float]) -> pd.DataFrame:
    return rows if gamma is None else rows[rows["i_star"] >= gamma]


def _stakes(p: np.ndarray, odds_a: np.ndarray, odds_b: np.ndarray, staking: str) -> Tuple[np.ndarray, np.ndarray]:
    """
    Side (True = player_a) and stake per row under a staking rule.

    Unit and kelly_favourite back the favourite, with p = 0.5 backing player_b;
    Kelly backs whichever side has the larger positive fraction.
    """
    favourite_a = p > 0.5
    if staking == "unit":
        return favourite_a, np.ones_like(p)
    f_a, f_b = _kelly(p, odds_a), _kelly(1.0 - p, odds_b)
    if staking == "kelly_favourite":
        return favourite_a, np.where(favourite_a, f_a, f_b)
    side_a = f_a >= f_b
    return side_a, np.where(side_a, f_a, f_b)


def simulate(frame: pd.DataFrame, strategy: StrategyConfig, bus: Optional[EventBus] = None) -> SimulationResult:
    """
    Replay the ledger under a staking strategy.

    Matches without odds are skipped and counted. Totals are exactly rounded
    sums, so reordering the ledger leaves them unchanged.

    Args:
        frame: Prediction ledger rows
        strategy: Staking rule, optional I* threshold and probability column

    Returns:
        SimulationResult with one BetRecord per placed bet
    """
    rows, skipped = _market(frame, strategy.probability_column)
    if skipped:
        logging.warning(f"{strategy.label()}: skipped {skipped} matches without usable odds")
    rows = _eligible(rows, strategy.gamma)

    p = rows[strategy.probability_column].to_numpy(dtype=float)
    odds_a = rows["odds_a"].to_numpy(dtype=float)
    odds_b = rows["odds_b"].to_numpy(dtype=float)
    side_a, stake = _stakes(p, odds_a, odds_b, strategy.staking)
    won = np.where(side_a, rows["outcome"].to_numpy() == 1, rows["outcome"].to_numpy() == 0)
    odds = np.where(side_a, odds_a, odds_b)
    prob = np.where(side_a, p, 1.0 - p)

    bets = []
    for k, (match_id, day, i_star) in enumerate(zip(rows["match_id"], rows["date"], rows["i_star"])):
        if stake[k] <= 0:
            continue
        payout = stake[k] * odds[k] if won[k] else 0.0
        bets.append(BetRecord(
            match_id=str(match_id), date=str(day), side="a" if side_a[k] else "b", stake=float(stake[k]),
            odds=float(odds[k]), prob=float(prob[k]), i_star=float(i_star), payout=float(payout),
            profit=float(payout - stake[k]),
        ))

    result = SimulationResult(
        strategy=strategy,
        bets=bets,
        staked=math.fsum(b.stake for b in bets),
        returned=math.fsum(b.payout for b in bets),
        profit=math.fsum(b.profit for b in bets),
        skipped=skipped,
        eligible=len(rows),
    )
    (bus or default_event_bus).publish_event("betting.simulated", {
        "strategy": strategy.label(), "bets": len(bets), "staked": result.staked, "roi": result.roi,
    }, source="betting")
    logging.info(f"{strategy.label()}: {len(bets)} bets, staked {result.staked:.2f}, ROI {result.roi:.4f}")
    return result


def sharpe(daily_profit: Any) -> Optional[float]:
    """
    Annualised Sharpe ratio of daily profits.

    Returns None, with a warning, for fewer than two days or zero variance.
    """
    values = np.asarray(daily_profit, dtype=float)
    if values.size < 2:
        logging.warning(f"Sharpe ratio undefined: {values.size} betting days")
        return None
    sigma = values.std(ddof=1)
    if sigma == 0:
        logging.warning("Sharpe ratio undefined: daily profit has zero variance")
        return None
    return float(values.mean() / sigma * math.sqrt(ANNUALISATION_DAYS))


def threshold_grid(i_star: np.ndarray, step: float = 0.05) -> np.ndarray:
    """Multiples of `step` up to max I*, merged with every observed I*"""
    if step <= 0:
        raise ValueError(f"Grid step must be positive, got {step}")
    top = float(i_star.max()) if i_star.size else 0.0
    regular = np.round(np.arange(0.0, top + step / 2, step), 10)
    return np.unique(np.concatenate([regular[regular <= top], i_star, [0.0]]))


def threshold_search(frame: pd.DataFrame, probability_column: str = "p_model", step: float = 0.05) -> ThresholdSearch:
    """
    γ maximising the mean of Kelly ROI and unit ROI on a (validation) ledger.

    A candidate counts only when both staking rules place at least one bet. Ties
    resolve to the smallest γ.

    Returns:
        ThresholdSearch with the chosen γ and the per-γ curve
    """
    rows, skipped = _market(frame, probability_column)
    if skipped:
        logging.warning(f"Threshold search ignores {skipped} matches without usable odds")
    p = rows[probability_column].to_numpy(dtype=float)
    odds_a = rows["odds_a"].to_numpy(dtype=float)
    odds_b = rows["odds_b"].to_numpy(dtype=float)
    outcome = rows["outcome"].to_numpy()
    i_star = rows["i_star"].to_numpy(dtype=float)

    profits = {}
    for staking in ("kelly", "unit"):
        side_a, stake = _stakes(p, odds_a, odds_b, staking)
        won = np.where(side_a, outcome == 1, outcome == 0)
        odds = np.where(side_a, odds_a, odds_b)
        profits[staking] = (stake, np.where(won, stake * (odds - 1.0), -stake))

    curve = []
    best_gamma, best_score = 0.0, -math.inf
    for gamma in threshold_grid(i_star, step):
        mask = i_star >= gamma
        point: Dict[str, Any] = {"gamma": float(gamma)}
        for staking, (stake, profit) in profits.items():
            placed = mask & (stake > 0)
            staked = stake[placed].sum()
            point[f"{staking}_bets"] = int(placed.sum())
            point[f"{staking}_roi"] = float(profit[placed].sum() / staked) if staked > 0 else float("nan")
        curve.append(point)
        if point["kelly_bets"] == 0 or point["unit_bets"] == 0:
            continue
        score = 0.5 * (point["kelly_roi"] + point["unit_roi"])
        if score > best_score:
            best_gamma, best_score = float(gamma), score

    if best_score == -math.inf:
        logging.warning("No threshold places both Kelly and unit bets; defaulting to gamma = 0")
        best_score = float("nan")
    logging.info(f"Threshold search over {len(curve)} candidates: gamma = {best_gamma:g}, score {best_score:.4f}")
    return ThresholdSearch(gamma=best_gamma, score=best_score, curve=pd.DataFrame(curve, columns=CURVE_COLUMNS))


def significance_mc(result: SimulationResult, frame: pd.DataFrame, trials: int = 10000, seed: int = 0,
                    random_stake: str = "strategy") -> SignificanceResult:
    """
    Monte-Carlo test of a strategy against random bets.

    Each trial places as many bets as the strategy did, each on a uniformly drawn
    match and side from the same priced, γ-eligible universe. Stakes are 1 unit,
    or the Kelly fraction of the drawn side's probability; "strategy" picks unit
    for unit staking and Kelly otherwise. A trial that stakes nothing has ROI 0.
    p_bs is the share of trials with ROI at least the observed one.

    Args:
        result: Observed simulation
        frame: Ledger the strategy ran on
        trials: Number of random trials
        seed: Base seed; trials draw from one generator seeded seed + 1
        random_stake: "strategy", "unit" or "kelly"
    """
    if random_stake not in RANDOM_STAKE_RULES:
        raise ValueError(f"random_stake must be one of {RANDOM_STAKE_RULES}, got {random_stake!r}")
    n = len(result.bets)
    if n == 0:
        raise ValueError("Significance test needs at least one observed bet")
    strategy = result.strategy
    rows, _ = _market(frame, strategy.probability_column)
    rows = _eligible(rows, strategy.gamma)
    if rows.empty:
        raise ValueError("Significance test universe is empty")
    convention = random_stake
    if convention == "strategy":
        convention = "unit" if strategy.staking == "unit" else "kelly"

    p = rows[strategy.probability_column].to_numpy(dtype=float)
    odds_a = rows["odds_a"].to_numpy(dtype=float)
    odds_b = rows["odds_b"].to_numpy(dtype=float)
    a_won = rows["outcome"].to_numpy() == 1

    rng = np.random.default_rng(seed + 1)
    rois = np.empty(trials)
    for start in range(0, trials, MC_CHUNK):
        size = min(MC_CHUNK, trials - start)
        pick = rng.integers(0, len(rows), size=(size, n))
        side_a = rng.random((size, n)) < 0.5
        odds = np.where(side_a, odds_a[pick], odds_b[pick])
        won = np.where(side_a, a_won[pick], ~a_won[pick])
        if convention == "unit":
            stake = np.ones((size, n))
        else:
            stake = _kelly(np.where(side_a, p[pick], 1.0 - p[pick]), odds)
        staked = stake.sum(axis=1)
        profit = np.where(won, stake * (odds - 1.0), -stake).sum(axis=1)
        rois[start:start + size] = np.divide(profit, staked, out=np.zeros(size), where=staked > 0)

    observed = result.roi
    p_value = float(np.mean(rois >= observed))
    logging.info(f"{strategy.label()}: p_bs = {p_value:.4f} over {trials} trials ({convention} stakes)")
    return SignificanceResult(p_value=p_value, observed_roi=observed, trials=trials, bets=n,
                              random_stake=convention, null_rois=rois)


def report_row(method: str, result: SimulationResult, significance: Optional[SignificanceResult]) -> Dict[str, Any]:
    strategy = result.strategy
    return {
        "method": method,
        "staking": strategy.staking,
        "gamma": strategy.gamma,
        "bets": len(result.bets),
        "staked": result.staked,
        "returned": result.returned,
        "profit": result.profit,
        "roi": result.roi,
        "sharpe": sharpe(result.daily_profit()),
        "p_bs": significance.p_value if significance else None,
        "random_stake": significance.random_stake if significance else None,
        "skipped": result.skipped,
    }


def betting_report(frame: pd.DataFrame, gamma: Optional[float], methods: Optional[Dict[str, str]] = None,
                   stakings: Sequence[str] = ("kelly", "unit"), trials: int = 10000, seed: int = 0,
                   random_stake: str = "strategy",
                   bus: Optional[EventBus] = None) -> Tuple[pd.DataFrame, Dict[str, SimulationResult]]:
    """
    Report rows per method and staking rule, unfiltered and (when γ is given) filtered.

    Returns:
        (report table, simulations keyed by strategy label)
    """
    methods = methods or {m: c for m, c in REPORT_METHODS.items() if c in frame.columns}
    gammas: List[Optional[float]] = [None] if gamma is None else [None, gamma]
    rows, simulations = [], {}
    for method, column in methods.items():
        for staking in stakings:
            for g in gammas:
                strategy = StrategyConfig(staking=staking, gamma=g, probability_column=column)
                result = simulate(frame, strategy, bus)
                significance = (significance_mc(result, frame, trials, seed, random_stake)
                                if result.bets else None)
                rows.append(report_row(method, result, significance))
                simulations[strategy.label()] = result
    return pd.DataFrame(rows, columns=REPORT_COLUMNS), simulations


def write_bets(bets: Iterable[BetRecord], path: str) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame([b.to_dict() for b in bets], columns=BET_COLUMNS).to_csv(
        out, index=False, lineterminator="\n", float_format="%.12g")
    return out
