"""
Match Data Ingestion

This module turns raw tennis-data result files into an ordered snapshot sequence:
- Parses per-year result CSVs (per-set games, Pinnacle odds) into MatchRecord objects
- Drops retirements, walkovers and unparseable scores, and reports what was dropped
- Imputes missing player attributes with tour-specific medians
- Filters to the top tiers and groups matches into tournament-round snapshots
- Reads and writes the canonical match ledger used by every downstream command
"""

import hashlib
import logging
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Any, Iterable

import numpy as np
import pandas as pd


class Tour(Enum):
    MEN = "men"
    WOMEN = "women"


class Surface(Enum):
    HARD = "hard"
    CLAY = "clay"
    GRASS = "grass"


class Tier(Enum):
    GRAND_SLAM = "grand_slam"
    FINALS = "finals"
    T1000 = "t1000"
    T500 = "t500"
    OTHER = "other"


class Handedness(Enum):
    LEFT = "left"
    RIGHT = "right"


# Fixed surface order shared by graphs, the dominance ledger and node features
SURFACES: Tuple[Surface, ...] = (Surface.HARD, Surface.CLAY, Surface.GRASS)
SURFACE_INDEX: Dict[Surface, int] = {s: i for i, s in enumerate(SURFACES)}

MAIN_TIERS = frozenset({Tier.GRAND_SLAM, Tier.FINALS, Tier.T1000, Tier.T500})

TIER_LABELS: Dict[str, Tier] = {
    "grand slam": Tier.GRAND_SLAM,
    "masters cup": Tier.FINALS,
    "tour championships": Tier.FINALS,
    "wta finals": Tier.FINALS,
    "atp finals": Tier.FINALS,
    "masters 1000": Tier.T1000,
    "masters": Tier.T1000,
    "wta1000": Tier.T1000,
    "wta 1000": Tier.T1000,
    "premier mandatory": Tier.T1000,
    "premier 5": Tier.T1000,
    "atp500": Tier.T500,
    "atp 500": Tier.T500,
    "international gold": Tier.T500,
    "wta500": Tier.T500,
    "wta 500": Tier.T500,
    "premier": Tier.T500,
}

ROUND_CODES: Dict[str, str] = {
    "1st round": "R1",
    "2nd round": "R2",
    "3rd round": "R3",
    "4th round": "R4",
    "quarterfinals": "QF",
    "semifinals": "SF",
    "the final": "F",
    "final": "F",
    "round robin": "RR",
    "r128": "R128",
    "r64": "R64",
    "r32": "R32",
    "r16": "R16",
    "qf": "QF",
    "sf": "SF",
    "f": "F",
    "rr": "RR",
}

# Round-robin days sort by date alone, so they take the lowest rank
ROUND_ORDER: Dict[str, int] = {
    "RR": 0,
    "R128": 1, "R1": 1,
    "R64": 2, "R2": 2,
    "R32": 3, "R3": 3,
    "R16": 4, "R4": 4,
    "QF": 5,
    "SF": 6,
    "F": 7,
}

SET_COLUMNS = [(f"W{i}", f"L{i}") for i in range(1, 6)]
REQUIRED_COLUMNS = ["Date", "Tournament", "Surface", "Round", "Winner", "Loser", "W1", "L1"]
ODDS_COLUMNS = ("PSW", "PSL")

MATCH_LEDGER_COLUMNS = [
    "match_id", "date", "tour", "tournament", "tier", "round", "surface", "best_of",
    "winner_id", "loser_id", "games_winner", "games_loser", "sets_winner", "sets_loser",
    "odds_winner", "odds_loser",
]

# Used only when a tour has no known value at all for a field
ATTRIBUTE_FALLBACK: Dict[str, Dict[str, Any]] = {
    "men": {"height_cm": 185.0, "weight_kg": 80.0, "birth_date": date(1992, 1, 1)},
    "women": {"height_cm": 173.0, "weight_kg": 64.0, "birth_date": date(1994, 1, 1)},
}


@dataclass(frozen=True)
class MatchRecord:
    """One completed professional singles match"""
    match_id: str
    date: date
    tour: Tour
    tournament: str
    tier: Tier
    round: str
    surface: Surface
    best_of: int
    winner_id: str
    loser_id: str
    games_winner: int
    games_loser: int
    sets_winner: int = 0
    sets_loser: int = 0
    odds_winner: Optional[float] = None
    odds_loser: Optional[float] = None

    @property
    def season(self) -> int:
        return self.date.year

    @property
    def has_odds(self) -> bool:
        return self.odds_winner is not None and self.odds_loser is not None

    def games_proportion(self) -> float:
        """Proportion of games won by the winner"""
        return self.games_winner / float(self.games_winner + self.games_loser)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "match_id": self.match_id,
            "date": self.date.isoformat(),
            "tour": self.tour.value,
            "tournament": self.tournament,
            "tier": self.tier.value,
            "round": self.round,
            "surface": self.surface.value,
            "best_of": self.best_of,
            "winner_id": self.winner_id,
            "loser_id": self.loser_id,
            "games_winner": self.games_winner,
            "games_loser": self.games_loser,
            "sets_winner": self.sets_winner,
            "sets_loser": self.sets_loser,
            "odds_winner": self.odds_winner,
            "odds_loser": self.odds_loser,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'MatchRecord':
        return cls(
            match_id=str(data["match_id"]),
            date=_as_date(data["date"]),
            tour=Tour(data["tour"]),
            tournament=str(data["tournament"]),
            tier=Tier(data["tier"]),
            round=str(data["round"]),
            surface=Surface(data["surface"]),
            best_of=int(data["best_of"]),
            winner_id=str(data["winner_id"]),
            loser_id=str(data["loser_id"]),
            games_winner=int(data["games_winner"]),
            games_loser=int(data["games_loser"]),
            sets_winner=int(data.get("sets_winner", 0)),
            sets_loser=int(data.get("sets_loser", 0)),
            odds_winner=_optional_float(data.get("odds_winner")),
            odds_loser=_optional_float(data.get("odds_loser")),
        )


@dataclass
class PlayerAttributes:
    """Static player attributes; None marks a missing value before imputation"""
    player_id: str
    height_cm: Optional[float] = None
    weight_kg: Optional[float] = None
    birth_date: Optional[date] = None
    handedness: Optional[Handedness] = None
    name: str = ""

    def is_complete(self) -> bool:
        return None not in (self.height_cm, self.weight_kg, self.birth_date, self.handedness)


@dataclass(frozen=True)
class Snapshot:
    """One tournament round treated as a discrete time step"""
    index: int
    tour: Tour
    tournament: str
    season: int
    round: str
    timestamp: date
    matches: Tuple[MatchRecord, ...]


@dataclass
class ParseReport:
    """What a parse run kept, dropped and rejected"""
    source: str = ""
    rows: int = 0
    kept: int = 0
    dropped_incomplete: int = 0
    dropped_unparseable_score: int = 0
    rejected: List[Tuple[int, str]] = field(default_factory=list)
    unmatched_names: List[str] = field(default_factory=list)

    def merge(self, other: 'ParseReport') -> None:
        self.rows += other.rows
        self.kept += other.kept
        self.dropped_incomplete += other.dropped_incomplete
        self.dropped_unparseable_score += other.dropped_unparseable_score
        self.rejected.extend(other.rejected)
        for name in other.unmatched_names:
            if name not in self.unmatched_names:
                self.unmatched_names.append(name)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "source": self.source,
            "rows": self.rows,
            "kept": self.kept,
            "dropped_incomplete": self.dropped_incomplete,
            "dropped_unparseable_score": self.dropped_unparseable_score,
            "rejected": [{"row": r, "reason": why} for r, why in self.rejected],
            "unmatched_names": list(self.unmatched_names),
        }


def _as_date(value: Any) -> date:
    if isinstance(value, date):
        return value
    return date.fromisoformat(str(value)[:10])


def _optional_float(value: Any) -> Optional[float]:
    if value is None:
        return None
    try:
        result = float(value)
    except (TypeError, ValueError):
        return None
    if np.isnan(result):
        return None
    return result


def _clean_text(value: Any) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return ""
    return " ".join(str(value).split())


def make_match_id(tour: Tour, match_date: date, tournament: str, round_code: str,
                  winner_id: str, loser_id: str) -> str:
    """Deterministic match identifier from the fields that identify a match"""
    key = "|".join([tour.value, match_date.isoformat(), tournament, round_code, winner_id, loser_id])
    return hashlib.sha1(key.encode("utf-8")).hexdigest()[:16]


def canonical_round(label: str) -> str:
    """Map a source round label to its canonical code"""
    text = _clean_text(label)
    return ROUND_CODES.get(text.lower(), text)


def round_order(round_code: str) -> int:
    return ROUND_ORDER.get(round_code, 0)


def parse_tier(label: str) -> Tier:
    return TIER_LABELS.get(_clean_text(label).lower(), Tier.OTHER)


def parse_surface(label: str) -> Optional[Surface]:
    try:
        return Surface(_clean_text(label).lower())
    except ValueError:
        return None


def _parse_dates(series: pd.Series) -> pd.Series:
    """ISO dates first, then the day-first form some source files use"""
    parsed = pd.to_datetime(series, errors="coerce", format="%Y-%m-%d")
    missing = parsed.isna()
    if missing.any():
        parsed[missing] = pd.to_datetime(series[missing], errors="coerce", format="%d/%m/%Y")
    return parsed


def _detect_tour(columns: Iterable[str]) -> Optional[Tour]:
    cols = set(columns)
    if "ATP" in cols:
        return Tour.MEN
    if "WTA" in cols:
        return Tour.WOMEN
    return None


def load_player_map(path: str) -> Dict[str, str]:
    """Load a `name,player_id` mapping file"""
    map_path = Path(path)
    if not map_path.exists():
        raise FileNotFoundError(f"Player mapping file not found: {map_path}")
    frame = pd.read_csv(map_path, dtype=str)
    missing = {"name", "player_id"} - set(frame.columns)
    if missing:
        raise ValueError(f"Player mapping file {map_path} is missing columns: {sorted(missing)}")
    return {_clean_text(n): _clean_text(p) for n, p in zip(frame["name"], frame["player_id"])}


def parse_match_csv(path: str, tour: Optional[Tour] = None, player_map: Optional[Dict[str, str]] = None,
                    strict: bool = False, report: Optional[ParseReport] = None) -> List[MatchRecord]:
    """
    Parse one tennis-data result file into match records.

    Args:
        path: CSV file following the tennis-data column convention
        tour: Tour of the file; detected from the ATP/WTA column when omitted
        player_map: Optional name -> player_id mapping; unmatched names are reported
        strict: Raise on the first row whose mandatory fields cannot be parsed
        report: Optional ParseReport filled with counts and rejections

    Returns:
        Completed matches sorted by date
    """
    csv_path = Path(path)
    if not csv_path.exists():
        raise FileNotFoundError(f"Match file not found: {csv_path}")
    if report is None:
        report = ParseReport()
    report.source = str(csv_path)

    frame = pd.read_csv(csv_path, dtype=str, keep_default_na=True, encoding="utf-8")
    frame.columns = [c.strip() for c in frame.columns]
    missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"Malformed header in {csv_path}: missing columns {missing}")

    tour = tour or _detect_tour(frame.columns)
    if tour is None:
        raise ValueError(f"Cannot determine tour for {csv_path}: no ATP/WTA column and no tour given")
    tier_column = "Series" if "Series" in frame.columns else ("Tier" if "Tier" in frame.columns else None)
    if tier_column is None:
        raise ValueError(f"Malformed header in {csv_path}: missing Series/Tier column")

    dates = _parse_dates(frame["Date"])
    records: List[MatchRecord] = []
    unmatched = set()

    for position, row in enumerate(frame.to_dict("records")):
        row_number = position + 2  # header is line 1
        report.rows += 1

        status = _clean_text(row.get("Comment")).lower()
        if status and status != "completed":
            report.dropped_incomplete += 1
            continue

        winner_name = _clean_text(row.get("Winner"))
        loser_name = _clean_text(row.get("Loser"))
        surface = parse_surface(row.get("Surface"))
        match_ts = dates.iloc[position]
        reason = None
        if pd.isna(match_ts):
            reason = f"unparseable date {row.get('Date')!r}"
        elif not winner_name or not loser_name:
            reason = "missing player name"
        elif surface is None:
            reason = f"unsupported surface {row.get('Surface')!r}"
        if reason is not None:
            if strict:
                raise ValueError(f"{csv_path}: row {row_number} rejected: {reason}")
            report.rejected.append((row_number, reason))
            logging.warning(f"{csv_path}: row {row_number} rejected: {reason}")
            continue

        games_winner, games_loser, sets_winner, sets_loser = 0, 0, 0, 0
        played_sets = 0
        for w_col, l_col in SET_COLUMNS:
            w_games = _optional_float(row.get(w_col))
            l_games = _optional_float(row.get(l_col))
            if w_games is None or l_games is None:
                continue
            played_sets += 1
            games_winner += int(w_games)
            games_loser += int(l_games)
            if w_games > l_games:
                sets_winner += 1
            elif l_games > w_games:
                sets_loser += 1
        if played_sets == 0 or games_winner + games_loser <= 0:
            report.dropped_unparseable_score += 1
            continue

        if player_map is not None:
            for name in (winner_name, loser_name):
                if name not in player_map:
                    unmatched.add(name)
            winner_id = player_map.get(winner_name, winner_name)
            loser_id = player_map.get(loser_name, loser_name)
        else:
            winner_id, loser_id = winner_name, loser_name

        tier = parse_tier(row.get(tier_column))
        best_of = _coerce_best_of(row.get("Best of"), tour, tier, row_number)
        odds_w = _optional_float(row.get(ODDS_COLUMNS[0]))
        odds_l = _optional_float(row.get(ODDS_COLUMNS[1]))
        if odds_w is None or odds_l is None or odds_w <= 1.0 or odds_l <= 1.0:
            odds_w, odds_l = None, None

        match_date = match_ts.date()
        tournament = _clean_text(row.get("Tournament"))
        round_code = canonical_round(row.get("Round"))
        records.append(MatchRecord(
            match_id=make_match_id(tour, match_date, tournament, round_code, winner_id, loser_id),
            date=match_date,
            tour=tour,
            tournament=tournament,
            tier=tier,
            round=round_code,
            surface=surface,
            best_of=best_of,
            winner_id=winner_id,
            loser_id=loser_id,
            games_winner=games_winner,
            games_loser=games_loser,
            sets_winner=sets_winner,
            sets_loser=sets_loser,
            odds_winner=odds_w,
            odds_loser=odds_l,
        ))

    for name in sorted(unmatched):
        if name not in report.unmatched_names:
            report.unmatched_names.append(name)
    if unmatched:
        logging.warning(f"{csv_path}: {len(unmatched)} player names not found in the mapping file")

    report.kept += len(records)
    logging.info(f"Parsed {csv_path}: kept {len(records)} of {report.rows} rows "
                 f"({report.dropped_incomplete} incomplete, {report.dropped_unparseable_score} unparseable scores, "
                 f"{len(report.rejected)} rejected)")
    return sort_records(records)


def _coerce_best_of(value: Any, tour: Tour, tier: Tier, row_number: int) -> int:
    five_allowed = tour == Tour.MEN and tier == Tier.GRAND_SLAM
    parsed = _optional_float(value)
    if parsed is None:
        return 5 if five_allowed else 3
    best_of = int(parsed)
    if best_of == 5 and not five_allowed:
        logging.warning(f"Row {row_number}: best-of-5 outside a men's Grand Slam, treated as best-of-3")
        return 3
    if best_of not in (3, 5):
        return 5 if five_allowed else 3
    return best_of


def sort_records(records: Iterable[MatchRecord]) -> List[MatchRecord]:
    """Stable date order; ties keep tournament/round/match id order"""
    return sorted(records, key=lambda r: (r.date, r.tournament, round_order(r.round), r.match_id))


def parse_match_files(paths: Iterable[str], player_map: Optional[Dict[str, str]] = None,
                      strict: bool = False, report: Optional[ParseReport] = None) -> List[MatchRecord]:
    """Parse and merge several per-year files"""
    merged: List[MatchRecord] = []
    for path in paths:
        file_report = ParseReport()
        merged.extend(parse_match_csv(path, player_map=player_map, strict=strict, report=file_report))
        if report is not None:
            report.merge(file_report)
    return sort_records(merged)


def filter_tiers(records: Iterable[MatchRecord]) -> List[MatchRecord]:
    """Keep Grand Slams, tour finals, 1000 and 500 events"""
    return [r for r in records if r.tier in MAIN_TIERS]


def tour_roster(records: Iterable[MatchRecord], tour: Tour) -> List[str]:
    """Sorted set of players appearing in a tour's matches"""
    players = set()
    for r in records:
        if r.tour == tour:
            players.add(r.winner_id)
            players.add(r.loser_id)
    return sorted(players)


def load_player_attributes(path: str) -> List[PlayerAttributes]:
    """Read the player attribute file; blanks stay missing"""
    attr_path = Path(path)
    if not attr_path.exists():
        raise FileNotFoundError(f"Player attribute file not found: {attr_path}")
    frame = pd.read_csv(attr_path, dtype=str)
    if "player_id" not in frame.columns:
        raise ValueError(f"Malformed header in {attr_path}: missing player_id column")

    attrs = []
    for row in frame.to_dict("records"):
        birth = _clean_text(row.get("birth_date"))
        try:
            birth_date = date.fromisoformat(birth) if birth else None
        except ValueError:
            logging.warning(f"Unparseable birth date {birth!r} for {row.get('player_id')}")
            birth_date = None
        hand = _clean_text(row.get("handedness")).lower()
        handedness = {"l": Handedness.LEFT, "left": Handedness.LEFT,
                      "r": Handedness.RIGHT, "right": Handedness.RIGHT}.get(hand)
        attrs.append(PlayerAttributes(
            player_id=_clean_text(row["player_id"]),
            height_cm=_positive_or_none(row.get("height_cm")),
            weight_kg=_positive_or_none(row.get("weight_kg")),
            birth_date=birth_date,
            handedness=handedness,
            name=_clean_text(row.get("name")),
        ))
    return attrs


def _positive_or_none(value: Any) -> Optional[float]:
    parsed = _optional_float(value)
    if parsed is None or parsed <= 0:
        return None
    return parsed


def impute_attributes(attrs: Iterable[PlayerAttributes], roster: Iterable[str], tour: Tour) -> List[PlayerAttributes]:
    """
    Complete every roster player's attributes.

    Missing height, weight and birth date take the tour-specific median of the known
    values among roster players; missing handedness becomes right-handed. Roster
    players absent from `attrs` get a fully imputed record.
    """
    roster = list(roster)
    if not roster:
        raise ValueError(f"Cannot impute attributes for an empty {tour.value} roster")

    by_id = {a.player_id: a for a in attrs}
    known = [by_id[p] for p in roster if p in by_id]
    fallback = ATTRIBUTE_FALLBACK[tour.value]

    def median_of(values: List[float], name: str) -> Optional[float]:
        if not values:
            logging.warning(f"No known {name} values for the {tour.value} roster, using fallback")
            return None
        return float(np.median(values))

    height = median_of([a.height_cm for a in known if a.height_cm is not None], "height_cm")
    weight = median_of([a.weight_kg for a in known if a.weight_kg is not None], "weight_kg")
    birth_ordinal = median_of([float(a.birth_date.toordinal()) for a in known if a.birth_date is not None],
                              "birth_date")
    height = fallback["height_cm"] if height is None else height
    weight = fallback["weight_kg"] if weight is None else weight
    birth = fallback["birth_date"] if birth_ordinal is None else date.fromordinal(int(np.floor(birth_ordinal)))

    completed = []
    imputed_count = 0
    for player_id in roster:
        source = by_id.get(player_id, PlayerAttributes(player_id=player_id))
        record = PlayerAttributes(
            player_id=player_id,
            height_cm=source.height_cm if source.height_cm is not None else height,
            weight_kg=source.weight_kg if source.weight_kg is not None else weight,
            birth_date=source.birth_date if source.birth_date is not None else birth,
            handedness=source.handedness if source.handedness is not None else Handedness.RIGHT,
            name=source.name,
        )
        if not source.is_complete():
            imputed_count += 1
        completed.append(record)
    logging.info(f"Imputed attributes for {imputed_count} of {len(roster)} {tour.value} players")
    return completed


def build_snapshots(records: Iterable[MatchRecord], tour: Tour) -> List[Snapshot]:
    """
    Group a tour's matches into tournament-round snapshots.

    An edition is (tournament, season). Round-robin matches form one snapshot per day.
    Snapshots are ordered by earliest match date, then canonical round order, then
    tournament name, and indexed from 0.
    """
    groups: Dict[Tuple[str, int, str, Optional[date]], List[MatchRecord]] = {}
    for r in records:
        if r.tour != tour:
            continue
        day = r.date if r.round == "RR" else None
        groups.setdefault((r.tournament, r.season, r.round, day), []).append(r)

    ordered = sorted(
        groups.items(),
        key=lambda item: (min(m.date for m in item[1]), round_order(item[0][2]), item[0][0], item[0][1]),
    )
    snapshots = []
    for index, ((tournament, season, round_code, _), matches) in enumerate(ordered):
        matches = sort_records(matches)
        snapshots.append(Snapshot(
            index=index,
            tour=tour,
            tournament=tournament,
            season=season,
            round=round_code,
            timestamp=matches[0].date,
            matches=tuple(matches),
        ))
    return snapshots


def select_window(snapshots: Iterable[Snapshot], start: date, end: date) -> List[Snapshot]:
    """Snapshots whose timestamp lies inside [start, end]"""
    return [s for s in snapshots if start <= s.timestamp <= end]


def write_match_ledger(records: Iterable[MatchRecord], path: str) -> Path:
    """Write the canonical match ledger (stable column order, ISO dates)"""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([r.to_dict() for r in sort_records(records)], columns=MATCH_LEDGER_COLUMNS)
    frame.to_csv(out, index=False, lineterminator="\n")
    return out


def read_match_ledger(path: str) -> List[MatchRecord]:
    ledger_path = Path(path)
    if not ledger_path.exists():
        raise FileNotFoundError(f"Match ledger not found: {ledger_path}")
    frame = pd.read_csv(ledger_path, dtype={"match_id": str, "winner_id": str, "loser_id": str,
                                           "tournament": str, "round": str})
    missing = [c for c in MATCH_LEDGER_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"Malformed match ledger {ledger_path}: missing columns {missing}")
    frame = frame.astype(object).where(frame.notna(), None)
    return sort_records(MatchRecord.from_dict(row) for row in frame.to_dict("records"))
