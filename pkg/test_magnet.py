"""
Tests for the magnetic Laplacian, the complex Chebyshev network and its training loop
"""

import tempfile
import unittest
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.sparse as sp

from graphs import DominanceLedger, GraphParams, build_surface_graphs, node_features
from ingest import SURFACES, Surface, Tier, Tour, MatchRecord, make_match_id
from magnet import (
    MagnetHyperparams, ModelState, SurfaceOperator, TrainingSet, build_training_set, chebyshev_rescale,
    edge_probability, forward, init_state, largest_eigenvalue, laplacian_bundle, load_checkpoint,
    loss_and_gradients, magnetic_laplacian, match_win_probability, predict_match_probabilities,
    save_checkpoint, set_win_probabilities, set_win_probability, train, write_loss_trace,
)

PLAYERS = [f"p{i}" for i in range(6)]


def random_adjacency(rng: np.random.Generator, n: int, density: float = 0.3) -> np.ndarray:
    """Directed weighted adjacency with at most one direction per pair"""
    adjacency = np.zeros((n, n))
    for u in range(n):
        for v in range(u + 1, n):
            if rng.random() < density:
                w = 0.5 + 0.5 * rng.random()
                if rng.random() < 0.5:
                    adjacency[u, v] = w
                else:
                    adjacency[v, u] = w
    return adjacency


def operator_from(adjacency, q: float) -> SurfaceOperator:
    entry = magnetic_laplacian(adjacency, q)
    entry.rescaled, entry.lambda_max = chebyshev_rescale(entry.laplacian)
    return entry


def random_bundle(rng: np.random.Generator, n: int, q: float = 0.25):
    return {surface: operator_from(random_adjacency(rng, n, 0.5), q) for surface in SURFACES}


def random_state(rng: np.random.Generator, input_dim: int, hp: MagnetHyperparams, seed: int = 3) -> ModelState:
    state = init_state(input_dim, hp, seed)
    state.W = rng.normal(scale=0.5, size=state.W.shape)
    state.b = rng.normal(scale=0.1, size=2)
    return state


def transitive_fixture():
    """Six players where p_i beat p_j 2-0 for every i < j, on hard courts"""
    start = date(2020, 1, 6)
    matches = []
    day = 0
    for i in range(6):
        for j in range(i + 1, 6):
            d = start + timedelta(days=day)
            matches.append(MatchRecord(
                match_id=make_match_id(Tour.MEN, d, "Open", "R1", PLAYERS[i], PLAYERS[j]),
                date=d, tour=Tour.MEN, tournament="Open", tier=Tier.T500, round="R1",
                surface=Surface.HARD, best_of=3, winner_id=PLAYERS[i], loser_id=PLAYERS[j],
                games_winner=12, games_loser=4, sets_winner=2, sets_loser=0,
            ))
            day += 1
    ledger = DominanceLedger(PLAYERS)
    ledger.add_matches(matches)
    snapshot = build_surface_graphs(0, start + timedelta(days=day + 1), ledger, GraphParams())
    static = np.tile([185.0, 80.0, 1995.0, 0.0, 1.0], (6, 1))
    features = node_features(snapshot, static)
    return matches, snapshot, features, ledger


class TestMagneticLaplacian(unittest.TestCase):
    """Laplacian construction and spectrum"""

    def test_two_node_example(self):
        """u -> v with unit weight at q = 1/4 gives [[1, -i], [i, 1]]"""
        entry = magnetic_laplacian(np.array([[0.0, 1.0], [0.0, 0.0]]), 0.25)
        np.testing.assert_allclose(entry.laplacian.toarray(), np.array([[1, -1j], [1j, 1]]), atol=1e-12)
        np.testing.assert_allclose(entry.degree, [0.5, 0.5])

    def test_hermitian_with_bounded_spectrum(self):
        """Random directed graphs give Hermitian Laplacians with eigenvalues in [0, 2]"""
        rng = np.random.default_rng(11)
        for trial in range(40):
            n = int(rng.integers(2, 30))
            q = float(rng.uniform(0, 0.25))
            dense = magnetic_laplacian(random_adjacency(rng, n), q).laplacian.toarray()
            np.testing.assert_allclose(dense, dense.conj().T, atol=1e-12)
            eigenvalues = np.linalg.eigvalsh(dense)
            self.assertGreaterEqual(eigenvalues.min(), -1e-10)
            self.assertLessEqual(eigenvalues.max(), 2 + 1e-8)

    def test_isolated_nodes_get_identity_rows(self):
        """A node without edges has a unit diagonal and no off-diagonal entries"""
        adjacency = np.zeros((3, 3))
        adjacency[0, 1] = 0.8
        dense = magnetic_laplacian(adjacency, 0.25).laplacian.toarray()
        np.testing.assert_allclose(dense[2], [0, 0, 1])
        np.testing.assert_allclose(dense[:, 2], [0, 0, 1])

    def test_power_iteration_matches_dense_solver(self):
        """Power iteration estimates the largest eigenvalue"""
        rng = np.random.default_rng(5)
        laplacian = magnetic_laplacian(random_adjacency(rng, 30, 0.4), 0.25).laplacian
        estimate, converged = largest_eigenvalue(laplacian)
        exact = np.linalg.eigvalsh(laplacian.toarray()).max()
        self.assertTrue(converged)
        self.assertAlmostEqual(estimate, exact, delta=1e-5 * exact)

    def test_rescale_two_node(self):
        """Rescaling maps the two-node spectrum {0, 2} onto {-1, 1}"""
        entry = operator_from(np.array([[0.0, 1.0], [0.0, 0.0]]), 0.25)
        self.assertAlmostEqual(entry.lambda_max, 2.0, places=5)
        eigenvalues = np.linalg.eigvalsh(entry.rescaled.toarray())
        np.testing.assert_allclose(sorted(eigenvalues), [-1, 1], atol=1e-5)

    def test_edgeless_graph_uses_fallback(self):
        """An edgeless graph rescales with lambda_max = 2 to the zero operator"""
        rescaled, lambda_max = chebyshev_rescale(sp.identity(4, dtype=complex, format="csr"))
        self.assertEqual(lambda_max, 2.0)
        self.assertEqual(abs(rescaled).sum(), 0.0)

    def test_bundle_covers_all_surfaces(self):
        """laplacian_bundle builds one operator per surface"""
        _, snapshot, _, _ = transitive_fixture()
        bundle = laplacian_bundle(snapshot, 0.25)
        self.assertEqual(set(bundle), set(SURFACES))
        for entry in bundle.values():
            self.assertEqual(entry.rescaled.shape, (6, 6))


class TestForward(unittest.TestCase):
    """Embeddings and the prediction head"""

    def setUp(self):
        self.rng = np.random.default_rng(21)
        self.hp = MagnetHyperparams(hidden=4, K=2, layers=2)
        self.features = self.rng.random((6, 5))

    def test_embedding_shape(self):
        """Embeddings are |V| x 2F real matrices"""
        state = init_state(5, self.hp, seed=1)
        embeddings = forward(random_bundle(self.rng, 6), self.features, state, self.hp)
        for surface in SURFACES:
            self.assertEqual(embeddings[surface].shape, (6, 8))
            self.assertTrue(np.isrealobj(embeddings[surface]))

    def test_q_zero_matches_symmetrised_graph(self):
        """At q = 0 a directed graph and its symmetrised version give the same embeddings"""
        hp = MagnetHyperparams(q=0.0, hidden=4)
        adjacency = random_adjacency(self.rng, 6, 0.6)
        directed = {s: operator_from(adjacency, 0.0) for s in SURFACES}
        symmetric = {s: operator_from((adjacency + adjacency.T) / 2.0, 0.0) for s in SURFACES}
        state = init_state(5, hp, seed=4)
        a = forward(directed, self.features, state, hp)
        b = forward(symmetric, self.features, state, hp)
        for surface in SURFACES:
            np.testing.assert_allclose(a[surface], b[surface], atol=1e-10)

    def test_zero_head_gives_even_odds(self):
        """A freshly initialised head predicts (0.5, 0.5) for every pair"""
        state = init_state(5, self.hp, seed=1)
        embeddings = forward(random_bundle(self.rng, 6), self.features, state, self.hp)[Surface.CLAY]
        np.testing.assert_allclose(edge_probability(embeddings[0], embeddings[1], state), [0.5, 0.5])
        self.assertEqual(set_win_probability(0, 1, embeddings, state), 0.5)

    def test_order_consistency(self):
        """p_uv + p_vu = 1 for all pairs"""
        state = random_state(self.rng, 5, self.hp)
        embeddings = forward(random_bundle(self.rng, 6), self.features, state, self.hp)[Surface.HARD]
        us, vs = np.triu_indices(6, k=1)
        forward_p = set_win_probabilities(embeddings, us, vs, state)
        reverse_p = set_win_probabilities(embeddings, vs, us, state)
        np.testing.assert_allclose(forward_p + reverse_p, 1.0, atol=1e-12)

    def test_feature_dimension_checked(self):
        """Features with the wrong width are rejected"""
        state = init_state(4, self.hp, seed=1)
        with self.assertRaises(ValueError):
            forward(random_bundle(self.rng, 6), self.features, state, self.hp)

    def test_dropout_only_in_train_mode(self):
        """Evaluation is deterministic; train mode zeroes some embedding entries"""
        state = random_state(self.rng, 5, self.hp)
        bundle = random_bundle(self.rng, 6)
        a = forward(bundle, self.features, state, self.hp)[Surface.HARD]
        b = forward(bundle, self.features, state, self.hp)[Surface.HARD]
        np.testing.assert_array_equal(a, b)
        dropped = forward(bundle, self.features, state, self.hp, train_mode=True, step=2)[Surface.HARD]
        self.assertTrue((dropped == 0).any())


class TestMatchProbability(unittest.TestCase):
    """Set-to-match conversion"""

    def test_reference_values(self):
        """p = 0.6 gives 0.648 (best of 3) and 0.68256 (best of 5)"""
        self.assertAlmostEqual(match_win_probability(0.6, 3), 0.648, places=12)
        self.assertAlmostEqual(match_win_probability(0.6, 5), 0.68256, places=12)

    def test_even_and_extremes(self):
        """0.5, 0 and 1 are fixed points"""
        for best_of in (3, 5):
            self.assertEqual(match_win_probability(0.5, best_of), 0.5)
            self.assertEqual(match_win_probability(0.0, best_of), 0.0)
            self.assertAlmostEqual(match_win_probability(1.0, best_of), 1.0, places=12)

    def test_monotone_and_amplifying(self):
        """Best of 5 amplifies a set edge more than best of 3"""
        p = np.linspace(0.5, 1.0, 51)
        p3, p5 = match_win_probability(p, 3), match_win_probability(p, 5)
        self.assertTrue(np.all(np.diff(p3) >= 0))
        self.assertTrue(np.all(p5 >= p3 - 1e-12))

    def test_invalid_format(self):
        """Only best of 3 and best of 5 exist"""
        with self.assertRaises(ValueError):
            match_win_probability(0.6, 4)


class TestGradients(unittest.TestCase):
    """Analytic gradients against central finite differences"""

    def _check(self, use_activation: bool):
        rng = np.random.default_rng(8 if use_activation else 9)
        hp = MagnetHyperparams(hidden=3, K=2, layers=2, use_activation=use_activation, dropout=0.3)
        bundle = random_bundle(rng, 6)
        features = rng.random((6, 4))
        state = random_state(rng, 4, hp)
        samples = TrainingSet(
            surfaces=rng.integers(0, 3, size=12),
            us=rng.integers(0, 3, size=12),
            vs=rng.integers(3, 6, size=12),
            labels=rng.integers(0, 2, size=12).astype(float),
        )
        _, grads = loss_and_gradients(state, samples, bundle, features, hp, train_mode=True, step=5)

        def loss_at(candidate):
            value, _ = loss_and_gradients(candidate, samples, bundle, features, hp, train_mode=True, step=5)
            return value

        eps = 1e-5
        for layer in range(hp.layers):
            for _ in range(6):
                index = tuple(int(rng.integers(d)) for d in state.thetas[layer].shape)
                for direction, part in ((1.0, np.real), (1j, np.imag)):
                    plus, minus = state.copy(), state.copy()
                    plus.thetas[layer][index] += eps * direction
                    minus.thetas[layer][index] -= eps * direction
                    numeric = (loss_at(plus) - loss_at(minus)) / (2 * eps)
                    analytic = part(grads[f"theta_{layer}"][index])
                    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-8)
        for _ in range(6):
            index = tuple(int(rng.integers(d)) for d in state.W.shape)
            plus, minus = state.copy(), state.copy()
            plus.W[index] += eps
            minus.W[index] -= eps
            numeric = (loss_at(plus) - loss_at(minus)) / (2 * eps)
            np.testing.assert_allclose(grads["W"][index], numeric, rtol=1e-4, atol=1e-8)

    def test_linear_network(self):
        """Gradient check without activation"""
        self._check(use_activation=False)

    def test_with_activation(self):
        """Gradient check with the complex ReLU"""
        self._check(use_activation=True)


class TestTraining(unittest.TestCase):
    """Training loop, determinism and checkpoints"""

    def setUp(self):
        self.matches, self.snapshot, self.features, self.ledger = transitive_fixture()
        # an edgeless operator keeps the network linear in the degree features
        empty = build_surface_graphs(0, date(2019, 1, 1), DominanceLedger(PLAYERS), GraphParams())
        self.bundle = laplacian_bundle(empty, 0.25)
        self.samples = build_training_set(self.matches, self.ledger.node_index)
        self.hp = MagnetHyperparams(hidden=8, K=2, layers=2)

    def test_training_set_expansion(self):
        """Each set becomes one sample labelled by its winner"""
        self.assertEqual(len(self.samples), 30)
        self.assertTrue(np.all(self.samples.labels == 1.0))
        split = MatchRecord.from_dict({**self.matches[0].to_dict(), "sets_winner": 2, "sets_loser": 1})
        three = build_training_set([split], self.ledger.node_index)
        self.assertEqual(three.labels.tolist(), [1.0, 1.0, 0.0])

    def test_separable_fixture_is_learned(self):
        """150 epochs fit every training match of a transitive ranking"""
        state = init_state(self.features.shape[1], self.hp, seed=7)
        trained, trace = train(state, self.samples, self.bundle, self.features, self.hp, epochs=150)
        self.assertEqual(len(trace), 150)
        self.assertLess(np.median(trace[-10:]), np.median(trace[:10]))
        index = self.ledger.node_index
        us = [index[m.winner_id] for m in self.matches]
        vs = [index[m.loser_id] for m in self.matches]
        p_set, p_match = predict_match_probabilities(
            trained, self.hp, self.bundle, self.features, [0] * len(us), us, vs, [3] * len(us))
        self.assertTrue(np.all(p_set > 0.5))
        self.assertTrue(np.all(p_match >= p_set))

    def test_training_is_deterministic(self):
        """Same seed and inputs give identical loss traces"""
        runs = []
        for _ in range(2):
            state = init_state(self.features.shape[1], self.hp, seed=7)
            _, trace = train(state, self.samples, self.bundle, self.features, self.hp, epochs=20)
            runs.append(trace)
        self.assertEqual(runs[0], runs[1])

    def test_input_state_untouched(self):
        """train works on a copy"""
        state = init_state(self.features.shape[1], self.hp, seed=7)
        before = state.thetas[0].copy()
        train(state, self.samples, self.bundle, self.features, self.hp, epochs=3)
        np.testing.assert_array_equal(state.thetas[0], before)
        self.assertEqual(state.step, 0)

    def test_empty_training_set(self):
        """No training edges is an error"""
        state = init_state(self.features.shape[1], self.hp, seed=7)
        empty = build_training_set([], self.ledger.node_index)
        with self.assertRaises(ValueError):
            train(state, empty, self.bundle, self.features, self.hp, epochs=1)

    def test_checkpoint_round_trip(self):
        """A reloaded checkpoint continues training exactly like the original"""
        state = init_state(self.features.shape[1], self.hp, seed=7)
        trained, _ = train(state, self.samples, self.bundle, self.features, self.hp, epochs=4)
        with tempfile.TemporaryDirectory() as tmp:
            path = save_checkpoint(trained, self.hp, str(Path(tmp) / "model.npz"))
            loaded, hp = load_checkpoint(str(path))
        self.assertEqual(hp, self.hp)
        self.assertEqual(loaded.step, 4)
        self.assertEqual(loaded.seed, 7)
        for (name, a), (_, b) in zip(trained.parameters(), loaded.parameters()):
            np.testing.assert_array_equal(a, b, err_msg=name)
        _, original_trace = train(trained, self.samples, self.bundle, self.features, self.hp, epochs=3)
        _, loaded_trace = train(loaded, self.samples, self.bundle, self.features, self.hp, epochs=3)
        self.assertEqual(original_trace, loaded_trace)

    def test_missing_checkpoint(self):
        """Loading a missing checkpoint raises FileNotFoundError"""
        with self.assertRaises(FileNotFoundError):
            load_checkpoint("/nonexistent/model.npz")

    def test_loss_trace_file(self):
        """Loss traces are written as epoch,loss"""
        with tempfile.TemporaryDirectory() as tmp:
            path = write_loss_trace([0.7, 0.6, 0.5], str(Path(tmp) / "loss.csv"))
            frame = pd.read_csv(path)
        self.assertEqual(list(frame.columns), ["epoch", "loss"])
        self.assertEqual(frame["epoch"].tolist(), [1, 2, 3])


class TestHyperparams(unittest.TestCase):
    """Hyperparameter validation"""

    def test_defaults(self):
        hp = MagnetHyperparams()
        self.assertEqual((hp.q, hp.K, hp.hidden, hp.retrain_interval_snapshots), (0.25, 2, 64, 38))

    def test_out_of_range(self):
        """q above 1/4, K below 1 and heavy smoothing are rejected"""
        for kwargs in ({"q": 0.3}, {"K": 0}, {"label_smoothing": 0.5}, {"layers": 0}):
            with self.assertRaises(ValueError):
                MagnetHyperparams(**kwargs)

    def test_from_config_ignores_unknown_keys(self):
        hp = MagnetHyperparams.from_config({"q": 0.1, "hidden": 16, "comment": "x"})
        self.assertEqual((hp.q, hp.hidden), (0.1, 16))


if __name__ == '__main__':
    unittest.main()
