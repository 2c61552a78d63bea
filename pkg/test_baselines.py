"""
Tests for Elo, weighted Elo, rolling Bradley-Terry and Shin de-margining
"""

import itertools
import unittest
from datetime import date, timedelta

import numpy as np
from scipy.optimize import minimize

from baselines import (
    BaselineParams, BaselineTracker, EloState, bt_fit_ilsr, elo_predict, elo_update, k_factor,
    shin_probabilities, welo_update,
)
from ingest import MatchRecord, Surface, Tier, Tour, make_match_id


def match(day: date, winner: str, loser: str, games_w: int = 12, games_l: int = 6) -> MatchRecord:
    return MatchRecord(
        match_id=make_match_id(Tour.WOMEN, day, "Cup", "R1", winner, loser),
        date=day, tour=Tour.WOMEN, tournament="Cup", tier=Tier.T1000, round="R1", surface=Surface.CLAY,
        best_of=3, winner_id=winner, loser_id=loser, games_winner=games_w, games_loser=games_l,
        sets_winner=2, sets_loser=0,
    )


class TestElo(unittest.TestCase):
    """Standard Elo"""

    def setUp(self):
        self.params = BaselineParams()

    def test_prediction_values(self):
        """Equal ratings give 0.5; a 400 point edge gives 10/11"""
        self.assertEqual(elo_predict(1500, 1500), 0.5)
        self.assertAlmostEqual(elo_predict(1900, 1500), 10 / 11, places=12)
        self.assertAlmostEqual(elo_predict(1620, 1480) + elo_predict(1480, 1620), 1.0, places=12)

    def test_first_match_update(self):
        """A debut win between new players moves the winner by 0.5 * 250 / 5^0.4"""
        state = elo_update(EloState(), match(date(2014, 1, 6), "a", "b"), self.params)
        self.assertAlmostEqual(state.ratings["a"] - 1500, 0.5 * 250 / 5 ** 0.4, places=9)
        self.assertAlmostEqual(state.ratings["a"] - 1500, 65.66, delta=0.05)
        self.assertAlmostEqual(state.ratings["b"] - 1500, -0.5 * 250 / 5 ** 0.4, places=9)
        self.assertEqual(state.counts, {"a": 1, "b": 1})

    def test_k_factor_shrinks(self):
        """Experienced players move less"""
        self.assertGreater(k_factor(0, self.params), k_factor(50, self.params))

    def test_loser_uses_own_k(self):
        """Each side is scaled by its own match count"""
        state = EloState(ratings={"a": 1500, "b": 1500}, counts={"a": 0, "b": 20})
        elo_update(state, match(date(2014, 1, 6), "a", "b"), self.params)
        self.assertAlmostEqual(state.ratings["a"] - 1500, 0.5 * k_factor(0, self.params), places=9)
        self.assertAlmostEqual(state.ratings["b"] - 1500, -0.5 * k_factor(20, self.params), places=9)


class TestWeightedElo(unittest.TestCase):
    """Games-proportion weighted Elo"""

    def setUp(self):
        self.params = BaselineParams()

    def test_even_games_matches_elo(self):
        """A 50% games split reproduces the standard update"""
        m = match(date(2014, 1, 6), "a", "b", 12, 12)
        self.assertEqual(welo_update(EloState(), m, self.params).ratings,
                         elo_update(EloState(), m, self.params).ratings)

    def test_double_bagel_doubles_update(self):
        """Winning every game doubles the rating change"""
        m = match(date(2014, 1, 6), "a", "b", 12, 0)
        plain = elo_update(EloState(), m, self.params).ratings["a"] - 1500
        weighted = welo_update(EloState(), m, self.params).ratings["a"] - 1500
        self.assertAlmostEqual(weighted, 2 * plain, places=9)


class TestBradleyTerry(unittest.TestCase):
    """ILSR fits"""

    def test_single_observation(self):
        """One win orders the two players without reaching certainty"""
        fit = bt_fit_ilsr([match(date(2020, 1, 1), "a", "b")])
        self.assertTrue(fit.converged)
        p = fit.predict("a", "b")
        self.assertGreater(p, 0.5)
        self.assertLess(p, 1.0)
        self.assertAlmostEqual(p + fit.predict("b", "a"), 1.0, places=12)

    def test_symmetric_round_robin(self):
        """Everyone splitting 1-1 gives equal strengths"""
        players = ["a", "b", "c"]
        matches = []
        for x, y in itertools.combinations(players, 2):
            matches.append(match(date(2020, 1, 1), x, y))
            matches.append(match(date(2020, 1, 2), y, x))
        fit = bt_fit_ilsr(matches)
        for x, y in itertools.combinations(players, 2):
            self.assertAlmostEqual(fit.predict(x, y), 0.5, places=6)

    def test_matches_likelihood_maximiser(self):
        """Strengths agree with direct maximisation of the regularised likelihood"""
        wins = {("a", "b"): 3, ("b", "a"): 1, ("b", "c"): 2, ("c", "b"): 2,
                ("c", "d"): 4, ("d", "a"): 1, ("a", "c"): 2, ("d", "b"): 1}
        matches = []
        for (w, l), count in wins.items():
            matches.extend(match(date(2020, 1, 1), w, l) for _ in range(count))
        fit = bt_fit_ilsr(matches, regularisation=0.01, tol=1e-10)
        players = ["a", "b", "c", "d"]
        lam = 0.01

        def negative_log_likelihood(theta):
            s = dict(zip(players, theta))
            total = 0.0
            for (w, l), count in wins.items():
                total -= count * (s[w] - np.logaddexp(s[w], s[l]))
            for p in players:
                total -= lam * (s[p] - np.logaddexp(s[p], 0.0))
                total -= lam * (0.0 - np.logaddexp(s[p], 0.0))
            return total

        result = minimize(negative_log_likelihood, np.zeros(4), method="BFGS", options={"gtol": 1e-10})
        oracle = dict(zip(players, np.exp(result.x)))
        for x, y in itertools.combinations(players, 2):
            expected = oracle[x] / (oracle[x] + oracle[y])
            self.assertAlmostEqual(fit.predict(x, y), expected, delta=1e-4)

    def test_unseen_player_sits_at_reference(self):
        fit = bt_fit_ilsr([match(date(2020, 1, 1), "a", "b")])
        self.assertEqual(fit.strength("zz"), 1.0)

    def test_empty_window(self):
        with self.assertRaises(ValueError):
            bt_fit_ilsr([])


class TestShin(unittest.TestCase):
    """Shin de-margining"""

    def test_fair_odds(self):
        """Even odds without margin stay at (0.5, 0.5)"""
        result = shin_probabilities(2.0, 2.0)
        self.assertAlmostEqual(result.p_a, 0.5, places=12)
        self.assertAlmostEqual(result.z, 0.0, places=9)
        self.assertFalse(result.arbitrage)

    def test_self_consistency(self):
        """The solved z maps the fair probabilities back onto the raw implied ones"""
        result = shin_probabilities(1.50, 2.75)
        self.assertAlmostEqual(result.overround, 1 / 1.5 + 1 / 2.75, places=12)
        self.assertAlmostEqual(result.p_a + result.p_b, 1.0, places=9)
        for p, odds in ((result.p_a, 1.50), (result.p_b, 2.75)):
            implied = np.sqrt(result.overround * (result.z * p + (1 - result.z) * p * p))
            self.assertAlmostEqual(implied, 1 / odds, delta=1e-8)

    def test_favourite_preserved(self):
        """De-margining keeps the favourite and shrinks its edge towards the raw ratio"""
        rng = np.random.default_rng(2)
        for _ in range(200):
            p = rng.uniform(0.05, 0.95)
            margin = rng.uniform(1.0, 1.1)
            odds_a, odds_b = 1 / (p * margin), 1 / ((1 - p) * margin)
            if odds_a <= 1 or odds_b <= 1:
                continue
            result = shin_probabilities(odds_a, odds_b)
            self.assertAlmostEqual(result.p_a + result.p_b, 1.0, places=9)
            self.assertEqual(result.p_a > result.p_b, odds_a < odds_b)

    def test_arbitrage_flagged(self):
        """Overround below 1 returns normalised implied probabilities"""
        result = shin_probabilities(2.2, 2.1)
        self.assertTrue(result.arbitrage)
        self.assertAlmostEqual(result.p_a, (1 / 2.2) / (1 / 2.2 + 1 / 2.1), places=12)

    def test_invalid_odds(self):
        with self.assertRaises(ValueError):
            shin_probabilities(1.0, 3.0)


class TestBaselineTracker(unittest.TestCase):
    """Causal sweep"""

    def test_only_earlier_matches_are_used(self):
        """Matches on or after the evaluation date never influence a prediction"""
        tracker = BaselineTracker()
        day = date(2021, 3, 1)
        tracker.observe([match(day - timedelta(days=1), "a", "b"), match(day, "a", "b"),
                         match(day + timedelta(days=3), "b", "a")])
        p = tracker.predict("a", "b", day)
        solo = BaselineTracker()
        solo.observe([match(day - timedelta(days=1), "a", "b")])
        self.assertEqual(p, solo.predict("a", "b", day))
        self.assertEqual(tracker.elo.count("a"), 1)

    def test_updates_in_date_order(self):
        """Out-of-order observation is applied chronologically"""
        base = date(2021, 3, 1)
        matches = [match(base + timedelta(days=d), w, l) for d, w, l in ((0, "a", "b"), (1, "b", "c"), (2, "c", "a"))]
        forward, backward = BaselineTracker(), BaselineTracker()
        forward.observe(matches)
        backward.observe(reversed(matches))
        later = base + timedelta(days=10)
        self.assertEqual(forward.predict("a", "c", later), backward.predict("a", "c", later))

    def test_empty_history_is_even(self):
        """Without history every baseline predicts 0.5"""
        p = BaselineTracker().predict("a", "b", date(2020, 1, 1))
        self.assertEqual(p, {"p_elo": 0.5, "p_welo": 0.5, "p_bt": 0.5})

    def test_bt_window(self):
        """Matches older than the window are ignored by Bradley-Terry"""
        tracker = BaselineTracker(BaselineParams(bt_window_days=30))
        tracker.observe([match(date(2020, 1, 1), "a", "b")])
        self.assertEqual(tracker.predict("a", "b", date(2020, 6, 1))["p_bt"], 0.5)

    def test_bt_fit_reused_only_for_latest_date(self):
        """One fit is kept: the same date reuses it, a new date replaces it"""
        tracker = BaselineTracker()
        base = date(2021, 3, 1)
        tracker.observe([match(base, "a", "b"), match(base + timedelta(days=2), "b", "c")])
        first_day, second_day = base + timedelta(days=1), base + timedelta(days=5)
        tracker.advance_to(first_day)
        first = tracker.bradley_terry(first_day)
        self.assertIs(tracker.bradley_terry(first_day), first)
        tracker.advance_to(second_day)
        second = tracker.bradley_terry(second_day)
        self.assertIsNot(second, first)
        self.assertIs(tracker.bradley_terry(second_day), second)
        self.assertFalse(hasattr(tracker, "_bt_cache"))

    def test_params_from_config(self):
        params = BaselineParams.from_config({"welo_delta": 1.5, "unknown": 1})
        self.assertEqual(params.welo_delta, 1.5)


if __name__ == '__main__':
    unittest.main()
