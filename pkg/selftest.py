"""
Self-Test Suite for courtgraph

Property and oracle checks that run offline on bundled synthetic data:
Laplacian structure, gradient correctness, probability algebra, the Hodge
split, betting algebra and walk-forward causality.

Usage:
    python selftest.py
    python selftest.py --quick    # Reduced sample counts
    python selftest.py --verbose  # Per-check timings
    python courtgraph.py selftest
"""

import argparse
import dataclasses
import math
import sys
import time
from datetime import date
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import optimize

# Check registry
checks: Dict[str, Dict[str, Any]] = {}


def property_check(name: str, description: str = ""):
    """Decorator to register a self-test check; the check receives `quick`"""
    def decorator(func: Callable[[bool], None]):
        checks[name] = {
            "description": description,
            "func": func,
            "passed": False,
            "error": None,
            "time": 0.0,
        }
        return func
    return decorator


def _random_directed_graph(rng: np.random.Generator, n: int) -> np.ndarray:
    density = rng.uniform(0.05, 0.6)
    adjacency = np.where(rng.random((n, n)) < density, rng.uniform(0.05, 1.0, (n, n)), 0.0)
    np.fill_diagonal(adjacency, 0.0)
    return adjacency


# ============================================================================
# Spectral layer
# ============================================================================

@property_check(
    name="laplacian_properties",
    description="Magnetic Laplacian is Hermitian with spectrum in [0, 2]; q = 0 gives the symmetric normalised Laplacian"
)
def check_laplacian_properties(quick: bool) -> None:
    from magnet import magnetic_laplacian

    rng = np.random.default_rng(100)
    for _ in range(50 if quick else 500):
        n = int(rng.integers(2, 51))
        adjacency = _random_directed_graph(rng, n)
        q = float(rng.uniform(0.0, 0.5))
        L = magnetic_laplacian(adjacency, q).laplacian.toarray()
        assert np.abs(L - L.conj().T).max() <= 1e-10, "Laplacian is not Hermitian"
        spectrum = np.linalg.eigvalsh(L)
        assert spectrum.min() >= -1e-8 and spectrum.max() <= 2 + 1e-8, f"Spectrum {spectrum.min()}..{spectrum.max()}"

        sym = (adjacency + adjacency.T) * 0.5
        degree = sym.sum(axis=1)
        inv_sqrt = np.where(degree > 0, 1.0 / np.sqrt(np.where(degree > 0, degree, 1.0)), 0.0)
        reference = np.eye(n) - inv_sqrt[:, None] * sym * inv_sqrt[None, :]
        L0 = magnetic_laplacian(adjacency, 0.0).laplacian.toarray()
        assert np.abs(L0.imag).max() == 0.0, "q = 0 Laplacian has an imaginary part"
        assert np.abs(L0.real - reference).max() <= 1e-12, "q = 0 differs from the symmetric normalised Laplacian"


@property_check(
    name="gradient_check",
    description="Analytic gradients of every parameter class match central differences"
)
def check_gradients(quick: bool) -> None:
    from ingest import SURFACES
    from magnet import (
        MagnetHyperparams, TrainingSet, chebyshev_rescale, init_state, loss_and_gradients, magnetic_laplacian,
    )

    rng = np.random.default_rng(200)
    for use_activation in (False, True):
        hp = MagnetHyperparams(hidden=3, K=2, layers=2, use_activation=use_activation, dropout=0.3)
        bundle = {}
        for surface in SURFACES:
            entry = magnetic_laplacian(_random_directed_graph(rng, 6), hp.q)
            entry.rescaled, entry.lambda_max = chebyshev_rescale(entry.laplacian)
            bundle[surface] = entry
        features = rng.random((6, 4))
        state = init_state(4, hp, seed=1)
        state.W = rng.normal(scale=0.5, size=state.W.shape)
        state.b = rng.normal(scale=0.1, size=2)
        samples = TrainingSet(surfaces=rng.integers(0, 3, size=10), us=rng.integers(0, 3, size=10),
                              vs=rng.integers(3, 6, size=10), labels=rng.integers(0, 2, size=10).astype(float))
        _, grads = loss_and_gradients(state, samples, bundle, features, hp, train_mode=True, step=3)

        def loss_at(candidate) -> float:
            return loss_and_gradients(candidate, samples, bundle, features, hp, train_mode=True, step=3)[0]

        def compare(analytic: float, numeric: float, label: str) -> None:
            assert abs(analytic - numeric) <= 1e-4 * max(abs(analytic), abs(numeric)) + 1e-8, \
                f"{label}: analytic {analytic} vs numeric {numeric}"

        eps = 1e-5
        probes = 3 if quick else 8
        for layer in range(hp.layers):
            for _ in range(probes):
                index = tuple(int(rng.integers(d)) for d in state.thetas[layer].shape)
                for direction, part in ((1.0, np.real), (1j, np.imag)):
                    plus, minus = state.copy(), state.copy()
                    plus.thetas[layer][index] += eps * direction
                    minus.thetas[layer][index] -= eps * direction
                    compare(float(part(grads[f"theta_{layer}"][index])),
                            (loss_at(plus) - loss_at(minus)) / (2 * eps), f"theta_{layer}{index}")
        for name in ("W", "b"):
            for _ in range(probes):
                index = tuple(int(rng.integers(d)) for d in getattr(state, name).shape)
                plus, minus = state.copy(), state.copy()
                getattr(plus, name)[index] += eps
                getattr(minus, name)[index] -= eps
                compare(float(grads[name][index]), (loss_at(plus) - loss_at(minus)) / (2 * eps), f"{name}{index}")


@property_check(
    name="probability_algebra",
    description="Order-consistent set probabilities and monotone best-of-n conversion"
)
def check_probability_algebra(quick: bool) -> None:
    from magnet import MagnetHyperparams, init_state, match_win_probability, set_win_probabilities

    rng = np.random.default_rng(300)
    hp = MagnetHyperparams(hidden=4)
    state = init_state(5, hp, seed=0)
    for _ in range(1000 if quick else 10000):
        state.W = rng.normal(scale=2.0, size=state.W.shape)
        state.b = rng.normal(size=2)
        embeddings = rng.normal(size=(2, state.W.shape[1] // 2))
        forward_p = set_win_probabilities(embeddings, [0], [1], state)[0]
        reverse_p = set_win_probabilities(embeddings, [1], [0], state)[0]
        assert abs(forward_p + reverse_p - 1.0) <= 1e-12, f"p_uv + p_vu = {forward_p + reverse_p}"

    grid = np.linspace(0.0, 1.0, 1001)
    for best_of in (3, 5):
        values = match_win_probability(grid, best_of)
        assert np.all(np.diff(values) > 0), f"Best-of-{best_of} conversion is not increasing"
        assert match_win_probability(0.5, best_of) == 0.5, f"Best-of-{best_of} moves 0.5"
        assert match_win_probability(0.0, best_of) == 0.0 and match_win_probability(1.0, best_of) == 1.0


# ============================================================================
# Intransitivity
# ============================================================================

@property_check(
    name="hodge_oracle",
    description="Transitive part equals the least-squares potential fit; perfect 3-cycle gives 1 + sqrt(6)"
)
def check_hodge(quick: bool) -> None:
    from intransitivity import hodge_decompose, intransitivity_index

    rng = np.random.default_rng(400)
    for _ in range(100 if quick else 1000):
        n = int(rng.integers(2, 9))
        upper = np.triu(rng.normal(size=(n, n)), k=1)
        A = upper - upper.T
        T, C = hodge_decompose(A)
        rows = [(i, j) for i in range(n) for j in range(n) if i != j]
        design = np.zeros((len(rows), n))
        for r, (i, j) in enumerate(rows):
            design[r, i], design[r, j] = 1.0, -1.0
        s = np.linalg.lstsq(design, np.array([A[i, j] for i, j in rows]), rcond=None)[0]
        assert np.abs(T - (s[:, None] - s[None, :])).max() <= 1e-8, "T differs from the least-squares fit"
        assert np.abs(T + C - A).max() <= 1e-12, "T + C does not reconstruct A"

    cycle = np.array([[0.0, 1.0, -1.0], [-1.0, 0.0, 1.0], [1.0, -1.0, 0.0]])
    assert abs(intransitivity_index(cycle) - (1 + math.sqrt(6))) <= 1e-10, "Perfect cycle index is off"


# ============================================================================
# Betting
# ============================================================================

@property_check(
    name="betting_algebra",
    description="Kelly fraction maximises log growth; bet order leaves ROI unchanged"
)
def check_betting(quick: bool) -> None:
    from betting import StrategyConfig, kelly_fraction, simulate
    from events import EventBus

    rng = np.random.default_rng(500)
    for _ in range(100):
        p = float(rng.uniform(0.05, 0.95))
        odds = float(rng.uniform(1.05, 6.0))
        f = kelly_fraction(p, odds)
        growth = lambda x: -(p * math.log(1 + x * (odds - 1)) + (1 - p) * math.log(1 - x))
        best = optimize.minimize_scalar(growth, bounds=(0.0, 1.0 - 1e-9), method="bounded",
                                        options={"xatol": 1e-12}).x
        expected = best if p * odds > 1 else 0.0
        assert abs(f - expected) <= 1e-6, f"Kelly {f} vs oracle {expected} at p={p}, o={odds}"

    n = 300
    truth = rng.uniform(0.15, 0.85, size=n)
    belief = np.clip(truth + rng.normal(scale=0.08, size=n), 0.1, 0.9)
    frame = pd.DataFrame({
        "match_id": [f"m{i:04d}" for i in range(n)],
        "date": [f"2023-01-{1 + i % 28:02d}" for i in range(n)],
        "outcome": (rng.random(n) < truth).astype(int),
        "p_model": np.clip(truth + rng.normal(scale=0.05, size=n), 0.02, 0.98),
        "odds_a": np.round(1 / (belief * 1.05), 2),
        "odds_b": np.round(1 / ((1 - belief) * 1.05), 2),
        "i_star": rng.uniform(0, 4, size=n),
    })
    bus = EventBus()
    for staking in ("kelly", "unit"):
        base = simulate(frame, StrategyConfig(staking=staking), bus)
        for seed in range(3 if quick else 10):
            again = simulate(frame.sample(frac=1.0, random_state=seed), StrategyConfig(staking=staking), bus)
            assert (again.staked, again.profit, again.roi) == (base.staked, base.profit, base.roi), \
                f"{staking} totals depend on bet order"


# ============================================================================
# Walk-forward causality
# ============================================================================

@property_check(
    name="causality",
    description="Perturbing future matches leaves earlier predictions bit-identical"
)
def check_causality(quick: bool) -> None:
    from events import EventBus
    from fixtures import synthetic_tour
    from ingest import Tour
    from magnet import MagnetHyperparams
    from pipeline import PREDICTION_LEDGER_COLUMNS, ModelContext, WalkForwardConfig, walk_forward_run

    weeks = 30 if quick else 45
    tour = synthetic_tour(Tour.WOMEN, n_players=12, weeks=weeks, seed=600)
    config = WalkForwardConfig(tour=Tour.WOMEN, history_start=date(2014, 1, 1), validation_start=date(2014, 3, 1),
                               validation_end=date(2014, 4, 30), test_start=date(2014, 5, 1),
                               test_end=date(2014, 12, 31), initial_epochs=5, retrain_epochs=2,
                               retrain_interval=4, seed=6)
    context = ModelContext(hyperparams=MagnetHyperparams(hidden=6, initial_epochs=5, retrain_epochs=2))

    def ledger(matches) -> pd.DataFrame:
        result = walk_forward_run(config, matches, tour.attributes, context, bus=EventBus())
        return pd.DataFrame([r.to_dict() for r in result.records], columns=PREDICTION_LEDGER_COLUMNS)

    baseline = ledger(tour.matches)
    dates = sorted({m.date for m in tour.matches})
    for cutoff in (dates[len(dates) // 2], dates[(3 * len(dates)) // 4]):
        perturbed = [dataclasses.replace(m, winner_id=m.loser_id, loser_id=m.winner_id, odds_winner=None,
                                         odds_loser=None) if m.date >= cutoff else m for m in tour.matches]
        changed = ledger(perturbed)
        before = baseline[baseline["date"] < cutoff.isoformat()].reset_index(drop=True)
        after = changed[changed["date"] < cutoff.isoformat()].reset_index(drop=True)
        assert len(before) > 0, "No predictions before the perturbation cutoff"
        pd.testing.assert_frame_equal(before, after)


# ============================================================================
# Runner
# ============================================================================

def run_check(name: str, quick: bool = False, verbose: bool = False) -> bool:
    """Run a single check"""
    if name not in checks:
        print(f"Unknown check: {name}")
        return False

    info = checks[name]
    info["error"] = None
    start_time = time.time()
    try:
        info["func"](quick)
        info["passed"] = True
    except Exception as e:
        info["passed"] = False
        info["error"] = f"{type(e).__name__}: {e}"
    info["time"] = time.time() - start_time

    if verbose:
        status = "PASS" if info["passed"] else "FAIL"
        suffix = f": {info['error']}" if info["error"] else ""
        print(f"  {status} - {name} ({info['time']:.3f}s){suffix}")
    return info["passed"]


def run_all_checks(quick: bool = False, verbose: bool = False,
                   names: Optional[List[str]] = None) -> Tuple[bool, float]:
    """Run the registered checks (or a subset); returns (all passed, total seconds)"""
    all_passed = True
    total_time = 0.0
    for name in names or list(checks):
        passed = run_check(name, quick, verbose)
        total_time += checks[name]["time"]
        if not passed:
            all_passed = False
            if not verbose:
                print(f"  FAIL {name}: {checks[name]['error']}")
    return all_passed, total_time


def print_summary(all_passed: bool, total_time: float, quick: bool) -> None:
    mode = "Quick" if quick else "Full"
    passed_count = sum(1 for c in checks.values() if c["passed"])
    print("\n" + "=" * 70)
    print(f"SELFTEST SUMMARY ({mode} Mode)")
    print("=" * 70)
    print(f"Checks run: {len(checks)}")
    print(f"Passed: {passed_count}")
    print(f"Failed: {len(checks) - passed_count}")
    print(f"Total time: {total_time:.3f}s")
    if all_passed:
        print("\nAll property checks passed")
    else:
        print("\nFailed checks:")
        for name, info in checks.items():
            if not info["passed"]:
                print(f"  {name}: {info['error']}")
    print("=" * 70)


def run_selftest(quick: bool = False, verbose: bool = False) -> bool:
    print("\n" + "=" * 70)
    print(" courtgraph - property and oracle checks")
    print("=" * 70)
    all_passed, total_time = run_all_checks(quick, verbose)
    print_summary(all_passed, total_time, quick)
    return all_passed


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="courtgraph property and oracle checks")
    parser.add_argument("--quick", action="store_true", help="Run with reduced sample counts")
    parser.add_argument("--verbose", action="store_true", help="Show per-check results")
    parser.add_argument("--list", action="store_true", help="List available checks")
    args = parser.parse_args(argv)

    if args.list:
        print("Available checks:")
        for name, info in checks.items():
            print(f"  - {name}: {info['description']}")
        return 0
    return 0 if run_selftest(args.quick, args.verbose) else 1


if __name__ == "__main__":
    sys.exit(main())
