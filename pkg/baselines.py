"""
Reference Predictors

Benchmarks every model prediction is compared against:
- Elo with a match-count dependent K-factor
- Weighted Elo scaling each update by the games-won proportion
- Bradley-Terry strengths fitted by Iterative Luce Spectral Ranking on a rolling window
- Shin de-margined bookmaker probabilities
"""

import logging
from dataclasses import dataclass, field, asdict
from datetime import date, timedelta
from typing import Dict, List, Optional, Tuple, Any, Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy import optimize
from scipy.sparse.linalg import spsolve

from ingest import MatchRecord

SHIN_TOLERANCE = 1e-10


@dataclass
class BaselineParams:
    elo_initial: float = 1500.0
    elo_k_numerator: float = 250.0
    elo_k_offset: float = 5.0
    elo_k_exponent: float = 0.4
    welo_delta: float = 2.0
    bt_window_days: int = 730
    bt_regularisation: float = 0.01
    bt_tolerance: float = 1e-6
    bt_max_iterations: int = 10000

    def __post_init__(self):
        if self.elo_k_numerator <= 0 or self.elo_k_offset <= 0:
            raise ValueError("Elo K-factor constants must be positive")
        if self.bt_window_days < 1:
            raise ValueError(f"bt_window_days must be >= 1, got {self.bt_window_days}")
        if self.bt_regularisation <= 0:
            raise ValueError(f"bt_regularisation must be positive, got {self.bt_regularisation}")

    @classmethod
    def from_config(cls, section: Dict[str, Any]) -> 'BaselineParams':
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in section.items() if k in known})

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class EloState:
    """Ratings and prior match counts per player"""
    initial: float = 1500.0
    ratings: Dict[str, float] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)

    def rating(self, player: str) -> float:
        return self.ratings.get(player, self.initial)

    def count(self, player: str) -> int:
        return self.counts.get(player, 0)


def elo_predict(rating_a: float, rating_b: float) -> float:
    """Probability that A beats B"""
    return 1.0 / (1.0 + 10.0 ** ((rating_b - rating_a) / 400.0))


def k_factor(matches_played: int, params: BaselineParams) -> float:
    return params.elo_k_numerator / (params.elo_k_offset + matches_played) ** params.elo_k_exponent


def _apply_update(state: EloState, match: MatchRecord, params: BaselineParams, multiplier: float) -> EloState:
    w, l = match.winner_id, match.loser_id
    r_w, r_l = state.rating(w), state.rating(l)
    p_w = elo_predict(r_w, r_l)
    surprise = 1.0 - p_w
    state.ratings[w] = r_w + k_factor(state.count(w), params) * surprise * multiplier
    state.ratings[l] = r_l - k_factor(state.count(l), params) * surprise * multiplier
    state.counts[w] = state.count(w) + 1
    state.counts[l] = state.count(l) + 1
    return state


def elo_update(state: EloState, match: MatchRecord, params: BaselineParams) -> EloState:
    """Standard Elo update of both players; mutates and returns the state"""
    return _apply_update(state, match, params, 1.0)


def welo_update(state: EloState, match: MatchRecord, params: BaselineParams) -> EloState:
    """Elo update scaled by 1 + delta * (games proportion - 0.5) for both players"""
    multiplier = 1.0 + params.welo_delta * (match.games_proportion() - 0.5)
    return _apply_update(state, match, params, multiplier)


@dataclass
class BradleyTerryFit:
    strengths: Dict[str, float]
    iterations: int
    converged: bool

    def strength(self, player: str) -> float:
        # unseen players sit at the reference strength
        return self.strengths.get(player, 1.0)

    def predict(self, a: str, b: str) -> float:
        s_a, s_b = self.strength(a), self.strength(b)
        return s_a / (s_a + s_b)


def _stationary_distribution(rates: sp.csr_matrix) -> np.ndarray:
    """Stationary distribution of the continuous-time chain with the given transition rates"""
    n = rates.shape[0]
    generator = (rates - sp.diags(np.asarray(rates.sum(axis=1)).ravel())).T.tolil()
    generator[n - 1, :] = np.ones(n)
    rhs = np.zeros(n)
    rhs[n - 1] = 1.0
    solution = spsolve(generator.tocsc(), rhs)
    return np.maximum(np.asarray(solution).ravel(), 1e-300)


def bt_fit_ilsr(matches: Sequence[MatchRecord], regularisation: float = 0.01, tol: float = 1e-6,
                max_iterations: int = 10000, initial: Optional[Dict[str, float]] = None) -> BradleyTerryFit:
    """
    Bradley-Terry strengths by Iterative Luce Spectral Ranking.

    Every player also plays `regularisation` virtual wins and losses against a
    reference player whose strength is fixed to 1 after each iteration.

    Args:
        matches: Matches in the fitting window
        regularisation: Virtual games against the reference player
        tol: Stop when the largest relative strength change falls below this
        max_iterations: Iteration cap; the last iterate is returned unconverged
        initial: Optional warm start strengths

    Returns:
        BradleyTerryFit with strengths normalised so the reference equals 1
    """
    if not matches:
        raise ValueError("Cannot fit Bradley-Terry strengths on an empty window")
    players = sorted({m.winner_id for m in matches} | {m.loser_id for m in matches})
    index = {p: i for i, p in enumerate(players)}
    n = len(players)
    ref = n

    winners = np.array([index[m.winner_id] for m in matches] + list(range(n)) + [ref] * n)
    losers = np.array([index[m.loser_id] for m in matches] + [ref] * n + list(range(n)))
    weights = np.concatenate([np.ones(len(matches)), np.full(2 * n, regularisation)])

    strengths = np.ones(n + 1)
    if initial:
        for p, i in index.items():
            strengths[i] = initial.get(p, 1.0)

    converged = False
    iteration = 0
    for iteration in range(1, max_iterations + 1):
        # the loser moves probability mass to the winner at rate 1 / (s_w + s_l)
        rate = weights / (strengths[winners] + strengths[losers])
        rates = sp.csr_matrix((rate, (losers, winners)), shape=(n + 1, n + 1))
        updated = _stationary_distribution(rates)
        updated = updated / updated[ref]
        change = np.max(np.abs(updated - strengths) / strengths)
        strengths = updated
        if change < tol:
            converged = True
            break

    if not converged:
        logging.warning(f"ILSR did not converge after {max_iterations} iterations; using the last iterate")
    return BradleyTerryFit(strengths={p: float(strengths[i]) for p, i in index.items()},
                           iterations=iteration, converged=converged)


@dataclass
class ShinResult:
    p_a: float
    p_b: float
    z: float
    overround: float
    arbitrage: bool = False


def _shin_probabilities(implied: np.ndarray, total: float, z: float) -> np.ndarray:
    return (np.sqrt(z * z + 4.0 * (1.0 - z) * implied ** 2 / total) - z) / (2.0 * (1.0 - z))


def shin_probabilities(odds_a: float, odds_b: float) -> ShinResult:
    """
    Fair two-outcome probabilities under the Shin insider-trading model.

    Args:
        odds_a: Decimal odds on A (> 1)
        odds_b: Decimal odds on B (> 1)

    Returns:
        ShinResult; arbitrage odds (overround below 1) return normalised implied
        probabilities with the flag set
    """
    if odds_a <= 1.0 or odds_b <= 1.0:
        raise ValueError(f"Decimal odds must exceed 1, got ({odds_a}, {odds_b})")
    implied = np.array([1.0 / odds_a, 1.0 / odds_b])
    total = float(implied.sum())

    if total < 1.0:
        logging.warning(f"Arbitrage odds ({odds_a}, {odds_b}): overround {total:.4f} < 1")
        p = implied / total
        return ShinResult(float(p[0]), float(p[1]), 0.0, total, arbitrage=True)

    def excess(z: float) -> float:
        return float(_shin_probabilities(implied, total, z).sum()) - 1.0

    lo, hi = 0.0, max(total - 1.0, 0.0)
    while excess(hi) > 0 and hi < 0.5:
        hi = min(max(2.0 * hi, 1e-6), 0.5)
    if excess(lo) <= 0:
        z = 0.0
    elif excess(hi) > 0:
        z = hi
    else:
        z = optimize.brentq(excess, lo, hi, xtol=SHIN_TOLERANCE)
    p = _shin_probabilities(implied, total, z)
    p = p / p.sum()
    return ShinResult(float(p[0]), float(p[1]), z, total)


class BaselineTracker:
    """
    Causal sweep of all rating baselines over one tour.

    Matches are queued with `observe` and only admitted once a later evaluation
    date is requested, in date order, so predictions at date tau only ever see
    matches dated strictly before tau.
    """

    def __init__(self, params: Optional[BaselineParams] = None):
        self.params = params or BaselineParams()
        self.elo = EloState(initial=self.params.elo_initial)
        self.welo = EloState(initial=self.params.elo_initial)
        self._pending: List[MatchRecord] = []
        self._history: List[MatchRecord] = []
        self._last_fit: Optional[BradleyTerryFit] = None
        self._last_fit_date: Optional[date] = None

    def observe(self, matches: Iterable[MatchRecord]) -> None:
        self._pending.extend(matches)

    def advance_to(self, timestamp: date) -> int:
        """Admit every queued match dated before `timestamp`; returns how many"""
        self._pending.sort(key=lambda m: (m.date, m.match_id))
        ready = [m for m in self._pending if m.date < timestamp]
        self._pending = [m for m in self._pending if m.date >= timestamp]
        for m in ready:
            elo_update(self.elo, m, self.params)
            welo_update(self.welo, m, self.params)
        self._history.extend(ready)
        return len(ready)

    def bradley_terry(self, timestamp: date) -> Optional[BradleyTerryFit]:
        if self._last_fit is not None and self._last_fit_date == timestamp:
            return self._last_fit
        start = timestamp - timedelta(days=self.params.bt_window_days)
        window = [m for m in self._history if start <= m.date < timestamp]
        if not window:
            return None
        fit = bt_fit_ilsr(
            window,
            regularisation=self.params.bt_regularisation,
            tol=self.params.bt_tolerance,
            max_iterations=self.params.bt_max_iterations,
            initial=self._last_fit.strengths if self._last_fit else None,
        )
        self._last_fit, self._last_fit_date = fit, timestamp
        return fit

    def predict(self, a: str, b: str, timestamp: date) -> Dict[str, float]:
        """Pre-match probabilities that a beats b from every rating baseline"""
        self.advance_to(timestamp)
        fit = self.bradley_terry(timestamp)
        return {
            "p_elo": elo_predict(self.elo.rating(a), self.elo.rating(b)),
            "p_welo": elo_predict(self.welo.rating(a), self.welo.rating(b)),
            "p_bt": fit.predict(a, b) if fit is not None else 0.5,
        }
