"""
Synthetic Tours

Small seeded tours for tests and `selftest`: weekly eight-player knockouts with
latent surface strengths, a rock-paper-scissors component so intransitivity is
non-trivial, set-by-set scores and margined bookmaker odds.
"""

from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd

from ingest import (
    SURFACES, Handedness, MatchRecord, PlayerAttributes, Surface, Tier, Tour,
    make_match_id, write_match_ledger,
)

TIER_CYCLE = (Tier.T500, Tier.T1000, Tier.T500, Tier.GRAND_SLAM, Tier.T1000, Tier.FINALS)
BOOKMAKER_MARGIN = 1.05


@dataclass
class SyntheticTour:
    tour: Tour
    matches: List[MatchRecord]
    attributes: List[PlayerAttributes]
    strengths: Dict[str, np.ndarray]


def _surface_for_week(week: int) -> Surface:
    # spring clay, early-summer grass, hard otherwise
    phase = week % 52
    if 14 <= phase < 23:
        return Surface.CLAY
    if 23 <= phase < 27:
        return Surface.GRASS
    return Surface.HARD


def _play_match(rng: np.random.Generator, p_set: float, best_of: int) -> Tuple[bool, int, int, List[Tuple[int, int]]]:
    """Simulate sets until one side wins; returns (first player won, sets, sets, games per set)"""
    need = best_of // 2 + 1
    sets_a = sets_b = 0
    games: List[Tuple[int, int]] = []
    while sets_a < need and sets_b < need:
        lost_games = int(rng.integers(0, 5))
        if rng.random() < p_set:
            sets_a += 1
            games.append((6, lost_games))
        else:
            sets_b += 1
            games.append((lost_games, 6))
    return sets_a > sets_b, sets_a, sets_b, games


def synthetic_tour(tour: Tour = Tour.MEN, n_players: int = 16, weeks: int = 60, start: date = date(2014, 1, 6),
                   seed: int = 0, cycle_strength: float = 0.6, with_odds: bool = True) -> SyntheticTour:
    """
    Generate a seeded tour.

    Args:
        tour: Tour of every generated match
        n_players: Roster size (>= 8)
        weeks: One tournament per week
        start: Monday of the first week
        seed: Generator seed
        cycle_strength: Logit bonus of group g over group g+1 (mod 3)
        with_odds: Attach margined odds derived from the true set probability

    Returns:
        SyntheticTour with matches in date order
    """
    if n_players < 8:
        raise ValueError(f"A synthetic tour needs at least 8 players, got {n_players}")
    rng = np.random.default_rng(seed)
    prefix = "M" if tour == Tour.MEN else "W"
    players = [f"{prefix}{i:03d}" for i in range(n_players)]
    base = rng.normal(scale=0.8, size=n_players)
    strengths = {p: base[i] + rng.normal(scale=0.3, size=len(SURFACES)) for i, p in enumerate(players)}

    attributes = []
    for i, p in enumerate(players):
        attributes.append(PlayerAttributes(
            player_id=p,
            height_cm=float(np.round(rng.normal(185 if tour == Tour.MEN else 172, 6), 1)),
            weight_kg=float(np.round(rng.normal(80 if tour == Tour.MEN else 63, 5), 1)),
            birth_date=date(1985, 1, 1) + timedelta(days=int(rng.integers(0, 5000))),
            handedness=Handedness.LEFT if rng.random() < 0.15 else Handedness.RIGHT,
            name=f"Player {p}",
        ))

    def set_probability(a: int, b: int, surface: Surface) -> float:
        s = list(SURFACES).index(surface)
        logit = strengths[players[a]][s] - strengths[players[b]][s]
        if (a % 3) == (b + 1) % 3:
            logit += cycle_strength
        elif (b % 3) == (a + 1) % 3:
            logit -= cycle_strength
        return float(1.0 / (1.0 + np.exp(-logit)))

    matches: List[MatchRecord] = []
    for week in range(weeks):
        monday = start + timedelta(weeks=week)
        tier = TIER_CYCLE[week % len(TIER_CYCLE)]
        surface = _surface_for_week(week)
        best_of = 5 if tier == Tier.GRAND_SLAM and tour == Tour.MEN else 3
        tournament = f"Event {week:03d}"
        draw = [int(i) for i in rng.choice(n_players, size=8, replace=False)]
        for round_code, day in (("QF", 1), ("SF", 4), ("F", 6)):
            winners = []
            for k in range(0, len(draw), 2):
                a, b = draw[k], draw[k + 1]
                p_set = set_probability(a, b, surface)
                a_won, sets_a, sets_b, games = _play_match(rng, p_set, best_of)
                w, l = (a, b) if a_won else (b, a)
                p_w = p_set if a_won else 1.0 - p_set
                odds_w = odds_l = None
                if with_odds:
                    belief = float(np.clip(p_w + rng.normal(scale=0.05), 0.03, 0.97))
                    odds_w = round(1.0 / (belief * BOOKMAKER_MARGIN), 2)
                    odds_l = round(1.0 / ((1.0 - belief) * BOOKMAKER_MARGIN), 2)
                    odds_w, odds_l = max(odds_w, 1.01), max(odds_l, 1.01)
                day_of_match = monday + timedelta(days=day)
                games_w = sum(g[0] if a_won else g[1] for g in games)
                games_l = sum(g[1] if a_won else g[0] for g in games)
                matches.append(MatchRecord(
                    match_id=make_match_id(tour, day_of_match, tournament, round_code, players[w], players[l]),
                    date=day_of_match, tour=tour, tournament=tournament, tier=tier, round=round_code,
                    surface=surface, best_of=best_of, winner_id=players[w], loser_id=players[l],
                    games_winner=games_w, games_loser=games_l,
                    sets_winner=max(sets_a, sets_b), sets_loser=min(sets_a, sets_b),
                    odds_winner=odds_w, odds_loser=odds_l,
                ))
                winners.append(w)
            draw = winners
    return SyntheticTour(tour=tour, matches=matches, attributes=attributes, strengths=strengths)


def write_player_attributes(attributes: List[PlayerAttributes], path: str) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = [{
        "player_id": a.player_id,
        "name": a.name,
        "height_cm": a.height_cm,
        "weight_kg": a.weight_kg,
        "birth_date": a.birth_date.isoformat() if a.birth_date else "",
        "handedness": "L" if a.handedness == Handedness.LEFT else "R" if a.handedness == Handedness.RIGHT else "",
    } for a in attributes]
    pd.DataFrame(rows, columns=["player_id", "name", "height_cm", "weight_kg", "birth_date", "handedness"]).to_csv(
        out, index=False, lineterminator="\n")
    return out


def write_synthetic_dataset(directory: str, tours: Tuple[Tour, ...] = (Tour.MEN, Tour.WOMEN),
                            seed: int = 0, **kwargs) -> Dict[str, Dict[str, Path]]:
    """Write match ledgers and attribute files for each tour under `directory`"""
    root = Path(directory)
    written: Dict[str, Dict[str, Path]] = {}
    for offset, tour in enumerate(tours):
        data = synthetic_tour(tour, seed=seed + offset, **kwargs)
        written[tour.value] = {
            "ledger": write_match_ledger(data.matches, str(root / "ledger" / f"matches_{tour.value}.csv")),
            "attributes": write_player_attributes(data.attributes, str(root / f"players_{tour.value}.csv")),
        }
    return written
