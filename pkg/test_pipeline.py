"""
Tests for the walk-forward sweep, the prediction ledger and the Pareto front
"""

import dataclasses
import tempfile
import unittest
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pandas as pd

from events import EventBus
from fixtures import synthetic_tour
from graphs import GraphParams
from ingest import MatchRecord, Surface, Tier, Tour, make_match_id
from magnet import MagnetHyperparams
from pipeline import (
    PREDICTION_LEDGER_COLUMNS, ModelContext, WalkForwardConfig, pareto_front, read_prediction_ledger,
    split_history, training_graph, walk_forward_run, write_prediction_ledger,
)


def small_config(**overrides) -> WalkForwardConfig:
    values = dict(
        tour=Tour.MEN,
        history_start=date(2014, 1, 1),
        validation_start=date(2014, 7, 1),
        validation_end=date(2014, 10, 31),
        test_start=date(2014, 11, 1),
        test_end=date(2015, 3, 1),
        initial_epochs=8,
        retrain_epochs=3,
        retrain_interval=5,
        seed=11,
    )
    values.update(overrides)
    return WalkForwardConfig(**values)


def small_context() -> ModelContext:
    return ModelContext(hyperparams=MagnetHyperparams(hidden=8, initial_epochs=8, retrain_epochs=3,
                                                      retrain_interval_snapshots=5))


def played(day: date, tournament: str, tier: Tier, round_code: str, winner: str, loser: str) -> MatchRecord:
    return MatchRecord(
        match_id=make_match_id(Tour.MEN, day, tournament, round_code, winner, loser),
        date=day, tour=Tour.MEN, tournament=tournament, tier=tier, round=round_code, surface=Surface.HARD,
        best_of=3, winner_id=winner, loser_id=loser, games_winner=12, games_loser=7,
    )


def as_frame(result) -> pd.DataFrame:
    return pd.DataFrame([r.to_dict() for r in result.records], columns=PREDICTION_LEDGER_COLUMNS)


class TestWalkForward(unittest.TestCase):
    """End-to-end sweep on a synthetic tour"""

    @classmethod
    def setUpClass(cls):
        cls.tour = synthetic_tour(Tour.MEN, n_players=16, weeks=60, seed=3)
        cls.bus = EventBus()
        cls.result = walk_forward_run(small_config(), cls.tour.matches, cls.tour.attributes,
                                      small_context(), bus=cls.bus)
        cls.frame = as_frame(cls.result)

    def test_every_window_match_is_predicted(self):
        """One record per match inside the validation and test windows"""
        cfg = small_config()
        expected = [m for m in self.tour.matches if cfg.period_of(m.date) is not None]
        self.assertEqual(len(self.frame), len(expected))
        self.assertEqual(set(self.frame["period"]), {"validation", "test"})

    def test_probabilities_and_orientation(self):
        """All probabilities lie in (0, 1) and player_a sorts first"""
        for column in ("p_model", "p_model_set", "p_elo", "p_welo", "p_bt", "p_shin"):
            values = self.frame[column].dropna()
            self.assertTrue(((values > 0) & (values < 1)).all(), column)
        self.assertTrue((self.frame["player_a"] < self.frame["player_b"]).all())
        self.assertTrue(self.frame["outcome"].isin([0, 1]).all())
        self.assertTrue((self.frame["i_star"] >= 0).all())

    def test_retraining_schedule(self):
        """Initial fit at the first prediction snapshot, then every fifth prediction snapshot"""
        snapshots = sorted(self.frame["snapshot"].unique())
        expected = [snapshots[i] for i in range(0, len(snapshots), 5)]
        self.assertEqual([run.snapshot for run in self.result.training], expected)
        self.assertEqual(self.result.training[0].epochs, 8)
        self.assertTrue(all(run.epochs == 3 for run in self.result.training[1:]))

    def test_events_published(self):
        """Progress events mirror the sweep"""
        self.assertEqual(len(self.bus.get_event_history("walkforward.trained", limit=1000)),
                         len(self.result.training))
        completed = self.bus.get_event_history("walkforward.completed")
        self.assertEqual(completed[-1].data["records"], len(self.frame))

    def test_deterministic(self):
        """Same inputs and seed give an identical ledger"""
        again = walk_forward_run(small_config(), self.tour.matches, self.tour.attributes, small_context(),
                                 bus=EventBus())
        pd.testing.assert_frame_equal(as_frame(again), self.frame)

    def test_future_perturbation_leaves_past_untouched(self):
        """Changing late matches never alters earlier predictions"""
        cutoff = date(2015, 1, 15)
        perturbed = [
            dataclasses.replace(m, games_winner=m.games_winner + 5, odds_winner=None, odds_loser=None)
            if m.date >= cutoff else m
            for m in self.tour.matches
        ]
        changed = as_frame(walk_forward_run(small_config(), perturbed, self.tour.attributes, small_context(),
                                            bus=EventBus()))
        before = self.frame[pd.to_datetime(self.frame["date"]).dt.date < cutoff].reset_index(drop=True)
        after = changed[pd.to_datetime(changed["date"]).dt.date < cutoff].reset_index(drop=True)
        self.assertGreater(len(before), 0)
        pd.testing.assert_frame_equal(before, after)

    def test_train_graph_policy(self):
        """Scoring on the training graphs changes model probabilities but not baselines"""
        other = as_frame(walk_forward_run(small_config(prediction_graph="train"), self.tour.matches,
                                          self.tour.attributes, small_context(), bus=EventBus()))
        pd.testing.assert_series_equal(other["p_elo"], self.frame["p_elo"])
        pd.testing.assert_series_equal(other["i_star"], self.frame["i_star"])

    def test_checkpoints_written(self):
        """Each training run leaves a checkpoint and a loss trace"""
        with tempfile.TemporaryDirectory() as tmp:
            result = walk_forward_run(small_config(save_checkpoints=True, validation_end=date(2014, 7, 20),
                                                   test_start=date(2014, 7, 21), test_end=date(2014, 8, 1)),
                                      self.tour.matches, self.tour.attributes, small_context(),
                                      bus=EventBus(), checkpoint_dir=tmp)
            self.assertEqual(len(result.artifacts), 2 * len(result.training))
            for artifact in result.artifacts:
                self.assertTrue(Path(artifact).exists())

    def test_other_tiers_are_skipped(self):
        """Matches outside the main tiers never reach the graphs or the ledger"""
        cfg = small_config()
        target = next(m for m in self.tour.matches if cfg.period_of(m.date) is not None)
        matches = [dataclasses.replace(m, tier=Tier.OTHER) if m is target else m for m in self.tour.matches]
        frame = as_frame(walk_forward_run(cfg, matches, self.tour.attributes, small_context(), bus=EventBus()))
        self.assertEqual(len(frame), len(self.frame) - 1)
        self.assertNotIn(target.match_id, set(frame["match_id"]))

    def test_empty_history(self):
        """A prediction window opening before any match is an error"""
        cfg = small_config(validation_start=date(2014, 1, 2))
        with self.assertRaises(ValueError):
            walk_forward_run(cfg, self.tour.matches, self.tour.attributes, small_context(), bus=EventBus())


class TestTrainingPartition(unittest.TestCase):
    """Graph and training shares of the visible history"""

    def setUp(self):
        slam, t500 = "Australian Open", "Adelaide"
        # snapshot order: one slam round spread over three days, then a shorter event's round
        self.s1 = played(date(2020, 1, 15), slam, Tier.GRAND_SLAM, "R128", "p01", "p02")
        self.s2 = played(date(2020, 1, 16), slam, Tier.GRAND_SLAM, "R128", "p03", "p04")
        self.s3 = played(date(2020, 1, 17), slam, Tier.GRAND_SLAM, "R128", "p05", "p06")
        self.b1 = played(date(2020, 1, 16), t500, Tier.T500, "R32", "p07", "p08")
        self.history = [self.s1, self.s2, self.s3, self.b1]
        self.nodes = [f"p{i:02d}" for i in range(1, 9)]

    def test_split_by_count(self):
        """85/15 split by count, always leaving a training set"""
        start = date(2014, 1, 6)
        history = [played(start + timedelta(days=i), "Event", Tier.T500, "R32", "p01", "p02") for i in range(100)]
        graph, train = split_history(list(reversed(history)), 0.15)
        self.assertEqual((len(graph), len(train)), (85, 15))
        self.assertEqual(train[0], history[85])
        self.assertEqual(split_history(history[:1], 0.15), ([], history[:1]))

    def test_split_is_chronological(self):
        """Every graph match is dated no later than every training match"""
        graph, train = split_history(self.history, 0.5)
        self.assertEqual([m.match_id for m in graph], [self.s1.match_id, self.b1.match_id])
        self.assertEqual([m.match_id for m in train], [self.s2.match_id, self.s3.match_id])

        rng = np.random.default_rng(8)
        for _ in range(20):
            history = [played(date(2020, 1, 1) + timedelta(days=int(rng.integers(0, 30))), f"Event {k % 3}",
                              Tier.T500, "R32", "p01", "p02") for k in range(40)]
            graph, train = split_history(history, 0.15)
            self.assertLessEqual(max(m.date for m in graph), min(m.date for m in train))

    def test_training_matches_are_not_edges(self):
        """The training graph holds exactly the graph share's pairs"""
        graph_part, train_part = split_history(self.history, 0.5)
        snapshot = training_graph(3, graph_part, train_part, self.nodes, GraphParams())
        index = {p: i for i, p in enumerate(self.nodes)}

        def pair(m):
            a, b = index[m.winner_id], index[m.loser_id]
            return (min(a, b), max(a, b))

        pairs = {tuple(int(v) for v in row) for row in snapshot.table.pairs}
        self.assertEqual(pairs, {pair(m) for m in graph_part})
        self.assertTrue(pairs.isdisjoint(pair(m) for m in train_part))
        self.assertEqual(snapshot.timestamp, date(2020, 1, 17))

    def test_empty_graph_share(self):
        graph_part, train_part = split_history([self.s1], 0.15)
        snapshot = training_graph(0, graph_part, train_part, self.nodes, GraphParams())
        self.assertEqual(len(snapshot.table), 0)
        self.assertEqual(snapshot.timestamp, self.s1.date)


class TestConfigAndLedger(unittest.TestCase):
    """Configuration and ledger file contract"""

    def test_invalid_dates(self):
        """Overlapping validation and test windows are rejected"""
        with self.assertRaises(ValueError):
            small_config(test_start=date(2014, 10, 1))
        with self.assertRaises(ValueError):
            small_config(train_fraction=1.0)

    def test_from_config_offsets_women_seed(self):
        section = {"history_start": "2014-01-01", "validation_start": "2019-08-29", "validation_end": "2022-11-20",
                   "test_start": "2023-01-01", "test_end": "2025-06-08"}
        men = WalkForwardConfig.from_config(section, {}, Tour.MEN, 100)
        women = WalkForwardConfig.from_config(section, {"retrain_interval_snapshots": 20}, Tour.WOMEN, 100)
        self.assertEqual((men.seed, women.seed), (100, 101))
        self.assertEqual(women.retrain_interval, 20)

    def test_ledger_round_trip(self):
        """Written ledgers read back with the documented column order"""
        tour = synthetic_tour(Tour.WOMEN, weeks=40, seed=5)
        cfg = small_config(tour=Tour.WOMEN, validation_start=date(2014, 9, 1), validation_end=date(2014, 9, 30),
                           test_start=date(2014, 10, 1), test_end=date(2014, 10, 20))
        result = walk_forward_run(cfg, tour.matches, tour.attributes, small_context(), bus=EventBus())
        with tempfile.TemporaryDirectory() as tmp:
            path = write_prediction_ledger(result.records, str(Path(tmp) / "predictions.csv"))
            frame = read_prediction_ledger(str(path))
        self.assertEqual(list(frame.columns), PREDICTION_LEDGER_COLUMNS)
        self.assertEqual(len(frame), len(result.records))

    def test_missing_ledger(self):
        with self.assertRaises(FileNotFoundError):
            read_prediction_ledger("/nonexistent/predictions.csv")


class TestParetoFront(unittest.TestCase):
    """Non-dominated trial extraction"""

    def test_single_trial(self):
        front = pareto_front([{"brier_men": 0.2, "brier_women": 0.21, "q": 0.25}])
        self.assertEqual(len(front), 1)

    def test_definitional_example(self):
        """Two trade-off trials survive, the dominated one does not"""
        trials = [{"brier_men": 0.21, "brier_women": 0.22}, {"brier_men": 0.22, "brier_women": 0.21},
                  {"brier_men": 0.23, "brier_women": 0.23}]
        front = pareto_front(trials)
        self.assertEqual(front[["brier_men", "brier_women"]].values.tolist(), [[0.21, 0.22], [0.22, 0.21]])

    def test_brute_force_oracle(self):
        """Matches a pairwise dominance scan on random trial sets"""
        rng = np.random.default_rng(6)
        for _ in range(30):
            n = int(rng.integers(1, 40))
            points = np.round(rng.uniform(0.2, 0.23, size=(n, 2)), 3)
            frame = pd.DataFrame(points, columns=["brier_men", "brier_women"])
            keep = []
            for i in range(n):
                dominated = any(
                    points[j, 0] <= points[i, 0] and points[j, 1] <= points[i, 1]
                    and (points[j, 0] < points[i, 0] or points[j, 1] < points[i, 1])
                    for j in range(n)
                )
                if not dominated:
                    keep.append(i)
            front = pareto_front(frame)
            self.assertEqual(front.values.tolist(), points[keep].tolist())

    def test_missing_objective(self):
        with self.assertRaises(ValueError):
            pareto_front([{"brier_men": 0.2}])


if __name__ == '__main__':
    unittest.main()
