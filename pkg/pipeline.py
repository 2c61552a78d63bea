"""
Walk-Forward Pipeline

Sequential retrain-and-predict sweep over one tour's snapshots, and Pareto-front
extraction over tuning trials.

At every prediction snapshot only matches dated strictly before its timestamp
are visible. The earliest share of that history builds the training graphs and
the most recent share provides the labelled training sets. The model is trained
on a fixed schedule and scores the snapshot's matches, alongside the rating
baselines, Shin probabilities and I*. Outcomes are admitted to history only
after the snapshot has been scored.
"""

import logging
from dataclasses import dataclass, field, asdict
from datetime import date, timedelta
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Any, Iterable, Sequence

import numpy as np
import pandas as pd

from baselines import BaselineParams, BaselineTracker, shin_probabilities
from events import EventBus, event_bus as default_event_bus
from graphs import (
    DominanceLedger, GraphParams, GraphSnapshot, build_surface_graphs, node_features, static_features,
)
from ingest import (
    SURFACE_INDEX, MatchRecord, PlayerAttributes, Snapshot, Tour, build_snapshots, impute_attributes,
    filter_tiers, select_window, sort_records, tour_roster,
)
from intransitivity import IntransitivityParams, weighted_intransitivity
from magnet import (
    MagnetHyperparams, ModelState, build_training_set, init_state, laplacian_bundle,
    predict_match_probabilities, save_checkpoint, train, write_loss_trace,
)

PREDICTION_GRAPH_POLICIES = ("full", "train")
TOUR_SEED_OFFSET = {Tour.MEN: 0, Tour.WOMEN: 1}

# Contract between the sweep and the evaluation/betting commands; keep the order stable
PREDICTION_LEDGER_COLUMNS = [
    "match_id", "tour", "period", "snapshot", "date", "tournament", "round", "surface", "best_of",
    "player_a", "player_b", "outcome",
    "p_model", "p_model_set", "p_elo", "p_welo", "p_bt", "p_shin",
    "odds_a", "odds_b", "i_star", "i_raw", "evidence", "neighbourhood",
]


def _as_date(value: Any) -> date:
    return value if isinstance(value, date) else date.fromisoformat(str(value))


@dataclass
class WalkForwardConfig:
    tour: Tour = Tour.MEN
    history_start: date = date(2014, 1, 1)
    validation_start: date = date(2019, 8, 29)
    validation_end: date = date(2022, 11, 20)
    test_start: date = date(2023, 1, 1)
    test_end: date = date(2025, 6, 8)
    train_fraction: float = 0.15
    initial_epochs: int = 150
    retrain_epochs: int = 30
    retrain_interval: int = 38
    seed: int = 0
    prediction_graph: str = "full"
    save_checkpoints: bool = False

    def __post_init__(self):
        ordered = [self.history_start, self.validation_start, self.validation_end, self.test_start, self.test_end]
        if any(a > b for a, b in zip(ordered, ordered[1:])) or self.validation_end >= self.test_start:
            raise ValueError(f"Date ranges must be ordered and non-overlapping: {[d.isoformat() for d in ordered]}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.retrain_interval < 1 or self.initial_epochs < 1 or self.retrain_epochs < 0:
            raise ValueError("Epoch counts and retrain interval must be positive")
        if self.prediction_graph not in PREDICTION_GRAPH_POLICIES:
            raise ValueError(f"prediction_graph must be one of {PREDICTION_GRAPH_POLICIES}")

    @classmethod
    def from_config(cls, section: Dict[str, Any], model: Dict[str, Any], tour: Tour, seed: int) -> 'WalkForwardConfig':
        return cls(
            tour=tour,
            history_start=_as_date(section["history_start"]),
            validation_start=_as_date(section["validation_start"]),
            validation_end=_as_date(section["validation_end"]),
            test_start=_as_date(section["test_start"]),
            test_end=_as_date(section["test_end"]),
            train_fraction=float(section.get("train_fraction", 0.15)),
            initial_epochs=int(model.get("initial_epochs", 150)),
            retrain_epochs=int(model.get("retrain_epochs", 30)),
            retrain_interval=int(model.get("retrain_interval_snapshots", 38)),
            seed=int(seed) + TOUR_SEED_OFFSET[tour],
            prediction_graph=section.get("prediction_graph", "full"),
            save_checkpoints=bool(section.get("save_checkpoints", False)),
        )

    def period_of(self, timestamp: date) -> Optional[str]:
        if self.validation_start <= timestamp <= self.validation_end:
            return "validation"
        if self.test_start <= timestamp <= self.test_end:
            return "test"
        return None


@dataclass
class PredictionRecord:
    """One predicted match, oriented so player_a is the smaller player id"""
    match_id: str
    tour: str
    period: str
    snapshot: int
    date: str
    tournament: str
    round: str
    surface: str
    best_of: int
    player_a: str
    player_b: str
    outcome: int
    p_model: float
    p_model_set: float
    p_elo: float
    p_welo: float
    p_bt: float
    p_shin: Optional[float]
    odds_a: Optional[float]
    odds_b: Optional[float]
    i_star: float
    i_raw: float
    evidence: float
    neighbourhood: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TrainingRun:
    snapshot: int
    epochs: int
    samples: int
    final_loss: float
    trace: List[float] = field(default_factory=list, repr=False)


@dataclass
class WalkForwardResult:
    records: List[PredictionRecord]
    training: List[TrainingRun]
    state: Optional[ModelState]
    artifacts: List[str] = field(default_factory=list)


@dataclass
class ModelContext:
    """Everything the sweep needs besides the matches"""
    graph: GraphParams = field(default_factory=GraphParams)
    hyperparams: MagnetHyperparams = field(default_factory=MagnetHyperparams)
    baselines: BaselineParams = field(default_factory=BaselineParams)
    intransitivity: IntransitivityParams = field(default_factory=IntransitivityParams)


def split_history(history: Iterable[MatchRecord], train_fraction: float) -> Tuple[List[MatchRecord], List[MatchRecord]]:
    """Earliest (1 - f) share by date builds graphs, the most recent f share trains; the training share is never empty"""
    ordered = sort_records(history)
    n = len(ordered)
    n_train = max(1, int(round(n * train_fraction)))
    n_graph = max(n - n_train, 0)
    return ordered[:n_graph], ordered[n_graph:]


def training_graph(index: int, graph_part: Sequence[MatchRecord], train_part: Sequence[MatchRecord],
                   nodes: Sequence[str], params: GraphParams) -> GraphSnapshot:
    """
    Surface graphs built from the graph share alone.

    Scores are evaluated the day after the last graph match, or at the first
    training match when the graph share is empty. No training match is an edge.
    """
    ledger = DominanceLedger(nodes)
    ledger.add_matches(graph_part)
    timestamp = graph_part[-1].date + timedelta(days=1) if graph_part else train_part[0].date
    return build_surface_graphs(index, timestamp, ledger, params)


def _orient(match: MatchRecord) -> Tuple[str, str, int, Optional[float], Optional[float]]:
    if match.winner_id <= match.loser_id:
        return match.winner_id, match.loser_id, 1, match.odds_winner, match.odds_loser
    return match.loser_id, match.winner_id, 0, match.odds_loser, match.odds_winner


class WalkForwardRunner:
    """
    Walk-forward sweep for one tour.

    Args:
        config: Dates, schedule and seed for the tour
        context: Graph, model, baseline and intransitivity parameters
        bus: Event bus receiving progress events
        checkpoint_dir: Where checkpoints and loss traces go when enabled
    """

    def __init__(self, config: WalkForwardConfig, context: Optional[ModelContext] = None,
                 bus: Optional[EventBus] = None, checkpoint_dir: Optional[str] = None):
        self.config = config
        self.context = context or ModelContext()
        self.bus = bus or default_event_bus
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.state: Optional[ModelState] = None
        self._train_snapshot: Optional[GraphSnapshot] = None
        self.training: List[TrainingRun] = []
        self.artifacts: List[str] = []

    def run(self, matches: Iterable[MatchRecord], attributes: Iterable[PlayerAttributes]) -> WalkForwardResult:
        cfg, ctx = self.config, self.context
        matches = [m for m in sort_records(matches) if m.tour == cfg.tour and m.date >= cfg.history_start]
        main = filter_tiers(matches)
        if len(main) < len(matches):
            logging.info(f"Walk-forward {cfg.tour.value}: skipping {len(matches) - len(main)} matches outside the main tiers")
        matches = main
        roster = tour_roster(matches, cfg.tour)
        if not roster:
            raise ValueError(f"No {cfg.tour.value} matches on or after {cfg.history_start}")
        static = static_features(roster, impute_attributes(attributes, roster, cfg.tour))

        snapshots = select_window(build_snapshots(matches, cfg.tour), cfg.history_start, cfg.test_end)
        ledger = DominanceLedger(roster)
        tracker = BaselineTracker(ctx.baselines)
        history: List[MatchRecord] = []
        records: List[PredictionRecord] = []
        prediction_count = 0

        logging.info(f"Walk-forward {cfg.tour.value}: {len(snapshots)} snapshots, {len(roster)} players")
        for snapshot in snapshots:
            period = cfg.period_of(snapshot.timestamp)
            if period is not None:
                visible = sort_records(m for m in history if m.date < snapshot.timestamp)
                if not visible:
                    raise ValueError(f"Empty history at prediction snapshot {snapshot.index} ({snapshot.timestamp})")
                if self.state is None:
                    self._train(snapshot, visible, ledger, static, cfg.initial_epochs)
                elif cfg.retrain_epochs > 0 and prediction_count % cfg.retrain_interval == 0:
                    self._train(snapshot, visible, ledger, static, cfg.retrain_epochs)
                records.extend(self._predict(snapshot, period, ledger, static, tracker))
                prediction_count += 1
                self.bus.publish_event("walkforward.snapshot", {
                    "tour": cfg.tour.value, "snapshot": snapshot.index, "period": period,
                    "matches": len(snapshot.matches),
                }, source="pipeline")

            ledger.add_matches(snapshot.matches)
            tracker.observe(snapshot.matches)
            history.extend(snapshot.matches)

        self.bus.publish_event("walkforward.completed", {
            "tour": cfg.tour.value, "records": len(records), "trainings": len(self.training),
        }, source="pipeline")
        logging.info(f"Walk-forward {cfg.tour.value} finished: {len(records)} predictions, "
                     f"{len(self.training)} training runs")
        return WalkForwardResult(records=records, training=self.training, state=self.state, artifacts=self.artifacts)

    def _train_graph(self, snapshot: Snapshot, visible: List[MatchRecord], ledger: DominanceLedger,
                     static: np.ndarray) -> Tuple[GraphSnapshot, List[MatchRecord]]:
        graph_part, train_part = split_history(visible, self.config.train_fraction)
        graph = training_graph(snapshot.index, graph_part, train_part, ledger.nodes, self.context.graph)
        node_features(graph, static)
        return graph, train_part

    def _train(self, snapshot: Snapshot, visible: List[MatchRecord], ledger: DominanceLedger,
               static: np.ndarray, epochs: int) -> None:
        hp = self.context.hyperparams
        graph, train_part = self._train_graph(snapshot, visible, ledger, static)
        bundle = laplacian_bundle(graph, hp.q)
        samples = build_training_set(train_part, ledger.node_index)
        state = self.state or init_state(graph.features.shape[1], hp, self.config.seed)
        self.state, trace = train(state, samples, bundle, graph.features, hp, epochs)
        self._train_snapshot = graph
        run = TrainingRun(snapshot=snapshot.index, epochs=epochs, samples=len(samples),
                          final_loss=trace[-1] if trace else float("nan"), trace=trace)
        self.training.append(run)
        self.bus.publish_event("walkforward.trained", {
            "tour": self.config.tour.value, "snapshot": snapshot.index, "epochs": epochs,
            "samples": len(samples), "loss": run.final_loss,
        }, source="pipeline")

        if self.config.save_checkpoints and self.checkpoint_dir is not None:
            stem = f"{self.config.tour.value}_{snapshot.index:05d}"
            ckpt = save_checkpoint(self.state, hp, str(self.checkpoint_dir / f"checkpoint_{stem}.npz"))
            loss = write_loss_trace(trace, str(self.checkpoint_dir / f"loss_{stem}.csv"))
            self.artifacts.extend([str(ckpt), str(loss)])

    def _predict(self, snapshot: Snapshot, period: str, ledger: DominanceLedger, static: np.ndarray,
                 tracker: BaselineTracker) -> List[PredictionRecord]:
        cfg, ctx = self.config, self.context
        tau = snapshot.timestamp
        full = build_surface_graphs(snapshot.index, tau, ledger, ctx.graph)
        node_features(full, static)
        scoring = full if cfg.prediction_graph == "full" else self._train_snapshot
        bundle = laplacian_bundle(scoring, ctx.hyperparams.q)

        index = ledger.node_index
        oriented = [_orient(m) for m in snapshot.matches]
        p_set, p_match = predict_match_probabilities(
            self.state, ctx.hyperparams, bundle, scoring.features,
            [SURFACE_INDEX[m.surface] for m in snapshot.matches],
            [index[o[0]] for o in oriented], [index[o[1]] for o in oriented],
            [m.best_of for m in snapshot.matches],
        )

        records = []
        for k, (m, (a, b, outcome, odds_a, odds_b)) in enumerate(zip(snapshot.matches, oriented)):
            baseline = tracker.predict(a, b, tau)
            p_shin = None
            if odds_a is not None and odds_b is not None and odds_a > 1 and odds_b > 1:
                p_shin = shin_probabilities(odds_a, odds_b).p_a
            score = weighted_intransitivity(m, full, index, ctx.intransitivity)
            records.append(PredictionRecord(
                match_id=m.match_id, tour=cfg.tour.value, period=period, snapshot=snapshot.index,
                date=m.date.isoformat(), tournament=m.tournament, round=m.round, surface=m.surface.value,
                best_of=m.best_of, player_a=a, player_b=b, outcome=outcome,
                p_model=float(p_match[k]), p_model_set=float(p_set[k]),
                p_elo=baseline["p_elo"], p_welo=baseline["p_welo"], p_bt=baseline["p_bt"], p_shin=p_shin,
                odds_a=odds_a, odds_b=odds_b, i_star=score.i_star, i_raw=score.i_raw,
                evidence=score.evidence_weight, neighbourhood=score.neighbourhood,
            ))
        return records


def walk_forward_run(config: WalkForwardConfig, matches: Iterable[MatchRecord],
                     attributes: Iterable[PlayerAttributes], context: Optional[ModelContext] = None,
                     bus: Optional[EventBus] = None, checkpoint_dir: Optional[str] = None) -> WalkForwardResult:
    """Run the walk-forward sweep for one tour and return its prediction records"""
    return WalkForwardRunner(config, context, bus, checkpoint_dir).run(matches, attributes)


def write_prediction_ledger(records: Iterable[PredictionRecord], path: str) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([r.to_dict() for r in records], columns=PREDICTION_LEDGER_COLUMNS)
    frame = frame.sort_values(["tour", "snapshot", "match_id"], kind="mergesort")
    frame.to_csv(out, index=False, lineterminator="\n", float_format="%.12g")
    return out


def read_prediction_ledger(path: str) -> pd.DataFrame:
    ledger_path = Path(path)
    if not ledger_path.exists():
        raise FileNotFoundError(f"Prediction ledger not found: {ledger_path}")
    frame = pd.read_csv(ledger_path, dtype={"match_id": str, "player_a": str, "player_b": str})
    missing = [c for c in PREDICTION_LEDGER_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"Malformed prediction ledger {ledger_path}: missing columns {missing}")
    return frame[PREDICTION_LEDGER_COLUMNS]


TRIAL_OBJECTIVES = ("brier_men", "brier_women")


def pareto_front(trials: Any) -> pd.DataFrame:
    """
    Trials not dominated when minimising (brier_men, brier_women).

    A trial is dominated when another is no worse on both objectives and strictly
    better on one. Input order is preserved.
    """
    frame = pd.DataFrame(trials).reset_index(drop=True)
    missing = [c for c in TRIAL_OBJECTIVES if c not in frame.columns]
    if missing:
        raise ValueError(f"Trials need columns {TRIAL_OBJECTIVES}; missing {missing}")
    if frame.empty:
        return frame
    points = frame[list(TRIAL_OBJECTIVES)].to_numpy(dtype=float)
    no_worse = (points[None, :, :] <= points[:, None, :]).all(axis=2)
    better = (points[None, :, :] < points[:, None, :]).any(axis=2)
    dominated = (no_worse & better).any(axis=1)
    return frame.loc[~dominated].reset_index(drop=True)


def read_trials(path: str) -> pd.DataFrame:
    trials_path = Path(path)
    if not trials_path.exists():
        raise FileNotFoundError(f"Trial file not found: {trials_path}")
    return pd.read_csv(trials_path)
