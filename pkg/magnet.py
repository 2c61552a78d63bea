"""
Complex Spectral Network

Magnetic-Laplacian graph convolution over the surface graphs:
- Normalised magnetic Laplacian and its Chebyshev rescaling
- Stacked Chebyshev filters with complex weights shared across surfaces
- Linear softmax head over concatenated real/imaginary node embeddings
- Full-batch training with label smoothing, dropout and decoupled-weight-decay Adam
- Set-to-match probability conversion and versioned checkpoints

Gradients are derived by hand. For a real loss and complex tensor Z, the gradient
is carried as dL/dRe(Z) + i dL/dIm(Z); for U = P @ theta that gives
G_theta = P^H G_U and G_P = G_U theta^H.
"""

import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Any, Iterable, Sequence

import numpy as np
import pandas as pd
import scipy.sparse as sp

from graphs import GraphSnapshot, SurfaceGraph
from ingest import SURFACES, SURFACE_INDEX, MatchRecord, Surface

CHECKPOINT_VERSION = 1
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

POWER_TOLERANCE = 1e-6
POWER_MAX_ITERATIONS = 1000
LAMBDA_MAX_FALLBACK = 2.0


@dataclass
class MagnetHyperparams:
    q: float = 0.25
    K: int = 2
    layers: int = 2
    hidden: int = 64
    use_activation: bool = False
    label_smoothing: float = 0.19
    learning_rate: float = 0.003
    weight_decay: float = 1e-4
    dropout: float = 0.3
    initial_epochs: int = 150
    retrain_epochs: int = 30
    retrain_interval_snapshots: int = 38

    def __post_init__(self):
        if not 0.0 <= self.q <= 0.25:
            raise ValueError(f"q must lie in [0, 0.25], got {self.q}")
        if self.K < 1 or self.layers < 1 or self.hidden < 1:
            raise ValueError(f"K, layers and hidden must be >= 1, got {self.K}, {self.layers}, {self.hidden}")
        if not 0.0 <= self.label_smoothing <= 0.2:
            raise ValueError(f"label_smoothing must lie in [0, 0.2], got {self.label_smoothing}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be positive and weight_decay non-negative")

    @classmethod
    def from_config(cls, section: Dict[str, Any]) -> 'MagnetHyperparams':
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in section.items() if k in known})

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class SurfaceOperator:
    """Laplacian entry of one surface graph"""
    sym_adjacency: sp.csr_matrix
    degree: np.ndarray
    phase: sp.csr_matrix
    laplacian: sp.csr_matrix
    rescaled: Optional[sp.csr_matrix] = None
    lambda_max: float = LAMBDA_MAX_FALLBACK


LaplacianBundle = Dict[Surface, SurfaceOperator]


def magnetic_laplacian(graph: Any, q: float) -> SurfaceOperator:
    """
    Normalised magnetic Laplacian of a directed weighted graph.

    Args:
        graph: SurfaceGraph or square (sparse or dense) adjacency with A[u, v] = w_uv
        q: Phase parameter

    Returns:
        SurfaceOperator with the Laplacian filled in; nodes without edges get identity rows
    """
    adjacency = graph.adjacency() if isinstance(graph, SurfaceGraph) else sp.csr_matrix(graph)
    adjacency = adjacency.astype(float)
    n = adjacency.shape[0]

    sym = ((adjacency + adjacency.T) * 0.5).tocsr()
    sym.eliminate_zeros()
    phase = (2.0 * np.pi * q * (adjacency - adjacency.T)).tocsr()
    degree = np.asarray(sym.sum(axis=1)).ravel()
    inv_sqrt = np.zeros(n)
    positive = degree > 0
    inv_sqrt[positive] = 1.0 / np.sqrt(degree[positive])

    coo = sym.tocoo()
    angles = np.asarray(phase[coo.row, coo.col]).ravel() if coo.nnz else np.zeros(0)
    values = inv_sqrt[coo.row] * coo.data * inv_sqrt[coo.col] * np.exp(1j * angles)
    propagation = sp.csr_matrix((values, (coo.row, coo.col)), shape=(n, n), dtype=complex)
    laplacian = (sp.identity(n, dtype=complex, format="csr") - propagation).tocsr()
    return SurfaceOperator(sym_adjacency=sym, degree=degree, phase=phase, laplacian=laplacian)


def largest_eigenvalue(matrix: sp.spmatrix, tol: float = POWER_TOLERANCE,
                       max_iterations: int = POWER_MAX_ITERATIONS) -> Tuple[float, bool]:
    """Power iteration on a Hermitian PSD matrix; returns (lambda, converged)"""
    n = matrix.shape[0]
    rng = np.random.default_rng(0)
    x = rng.normal(size=n) + 1j * rng.normal(size=n)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iterations):
        y = matrix @ x
        lam = float(np.real(np.vdot(x, y)))
        residual = np.linalg.norm(y - lam * x)
        if residual <= tol * max(abs(lam), 1.0):
            return lam, True
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0, True
        x = y / norm
    return lam, False


def chebyshev_rescale(laplacian: sp.spmatrix) -> Tuple[sp.csr_matrix, float]:
    """
    Rescale L_N to spectrum [-1, 1]: 2 L_N / lambda_max - I.

    lambda_max falls back to the bound 2.0 when power iteration does not converge,
    when it returns a non-positive value, and when L_N has no off-diagonal entries
    (edgeless graph), so an edgeless graph propagates nothing.
    """
    n = laplacian.shape[0]
    identity = sp.identity(n, dtype=complex, format="csr")
    off_diagonal = sp.csr_matrix(laplacian - sp.diags(laplacian.diagonal()))
    off_diagonal.eliminate_zeros()

    lambda_max = LAMBDA_MAX_FALLBACK
    if off_diagonal.nnz > 0:
        estimate, converged = largest_eigenvalue(laplacian)
        if converged and estimate > 0:
            lambda_max = min(estimate, LAMBDA_MAX_FALLBACK)
        else:
            logging.warning(f"Power iteration did not settle (estimate {estimate:.6f}); "
                            f"using lambda_max={LAMBDA_MAX_FALLBACK}")
    rescaled = ((2.0 / lambda_max) * laplacian - identity).tocsr()
    return rescaled, lambda_max


def laplacian_bundle(snapshot: GraphSnapshot, q: float) -> LaplacianBundle:
    """Magnetic Laplacian and rescaled operator for all three surfaces"""
    bundle: LaplacianBundle = {}
    for surface in SURFACES:
        entry = magnetic_laplacian(snapshot.graphs[surface], q)
        entry.rescaled, entry.lambda_max = chebyshev_rescale(entry.laplacian)
        bundle[surface] = entry
    return bundle


@dataclass
class ModelState:
    """Trainable tensors, Adam moments and the seed they were created from"""
    thetas: List[np.ndarray]
    W: np.ndarray
    b: np.ndarray
    seed: int
    step: int = 0
    moments: Dict[str, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.thetas[0].shape[1]

    @property
    def output_channels(self) -> int:
        return self.thetas[-1].shape[2]

    def parameters(self) -> List[Tuple[str, np.ndarray]]:
        params = [(f"theta_{i}", t) for i, t in enumerate(self.thetas)]
        params.extend([("W", self.W), ("b", self.b)])
        return params

    def copy(self) -> 'ModelState':
        return ModelState(
            thetas=[t.copy() for t in self.thetas],
            W=self.W.copy(),
            b=self.b.copy(),
            seed=self.seed,
            step=self.step,
            moments={k: (m.copy(), v.copy()) for k, (m, v) in self.moments.items()},
        )

    def check_shapes(self, hp: MagnetHyperparams, input_dim: int) -> None:
        if len(self.thetas) != hp.layers:
            raise ValueError(f"State has {len(self.thetas)} layers, hyperparameters say {hp.layers}")
        fan_in = input_dim
        for i, theta in enumerate(self.thetas):
            expected = (hp.K + 1, fan_in, hp.hidden)
            if theta.shape != expected:
                raise ValueError(f"theta_{i} has shape {theta.shape}, expected {expected}")
            fan_in = hp.hidden
        if self.W.shape != (2, 4 * hp.hidden) or self.b.shape != (2,):
            raise ValueError(f"Head shapes {self.W.shape}/{self.b.shape} do not match hidden={hp.hidden}")


def init_state(input_dim: int, hp: MagnetHyperparams, seed: int) -> ModelState:
    """Complex filters with variance-preserving scale; zero head"""
    rng = np.random.default_rng(seed)
    thetas = []
    fan_in = input_dim
    for _ in range(hp.layers):
        scale = np.sqrt(1.0 / (2.0 * (hp.K + 1) * fan_in))
        shape = (hp.K + 1, fan_in, hp.hidden)
        theta = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
        thetas.append(np.ascontiguousarray(theta))
        fan_in = hp.hidden
    return ModelState(thetas=thetas, W=np.zeros((2, 4 * hp.hidden)), b=np.zeros(2), seed=seed)


def _chebyshev_basis(operator: sp.spmatrix, z: np.ndarray, K: int) -> List[np.ndarray]:
    basis = [z]
    if K >= 1:
        basis.append(operator @ z)
    for _ in range(2, K + 1):
        basis.append(2.0 * (operator @ basis[-1]) - basis[-2])
    return basis


def _dropout_mask(shape: Tuple[int, ...], rate: float, seed: int, step: int, surface: int) -> np.ndarray:
    rng = np.random.default_rng([seed, step, surface])
    return (rng.random(shape) >= rate) / (1.0 - rate)


def _forward_surface(operator: sp.spmatrix, features: np.ndarray, state: ModelState,
                     hp: MagnetHyperparams, train_mode: bool, step: int,
                     surface: int) -> Tuple[np.ndarray, Dict[str, Any]]:
    z = features.astype(complex)
    cache: Dict[str, Any] = {"bases": [], "masks": []}
    for theta in state.thetas:
        basis = _chebyshev_basis(operator, z, hp.K)
        u = sum(basis[k] @ theta[k] for k in range(hp.K + 1))
        cache["bases"].append(basis)
        if hp.use_activation:
            mask = np.real(u) >= 0
            cache["masks"].append(mask)
            z = u * mask
        else:
            z = u
    h = np.concatenate([np.real(z), np.imag(z)], axis=1)
    if train_mode and hp.dropout > 0:
        drop = _dropout_mask(h.shape, hp.dropout, state.seed, step, surface)
        cache["dropout"] = drop
        h = h * drop
    return h, cache


def _backward_surface(grad_h: np.ndarray, operator: sp.spmatrix, state: ModelState, hp: MagnetHyperparams,
                      cache: Dict[str, Any], grads: Dict[str, np.ndarray]) -> None:
    if "dropout" in cache:
        grad_h = grad_h * cache["dropout"]
    channels = state.output_channels
    grad_z = grad_h[:, :channels] + 1j * grad_h[:, channels:]
    for layer in reversed(range(len(state.thetas))):
        theta = state.thetas[layer]
        basis = cache["bases"][layer]
        grad_u = grad_z * cache["masks"][layer] if hp.use_activation else grad_z
        grad_theta = grads[f"theta_{layer}"]
        for k in range(hp.K + 1):
            grad_theta[k] += basis[k].conj().T @ grad_u
        if layer == 0:
            break
        # adjoint of the Chebyshev recurrence; the rescaled Laplacian is Hermitian
        grad_basis = [grad_u @ theta[k].conj().T for k in range(hp.K + 1)]
        for k in range(hp.K, 1, -1):
            grad_basis[k - 1] = grad_basis[k - 1] + 2.0 * (operator @ grad_basis[k])
            grad_basis[k - 2] = grad_basis[k - 2] - grad_basis[k]
        if hp.K >= 1:
            grad_basis[0] = grad_basis[0] + operator @ grad_basis[1]
        grad_z = grad_basis[0]


def forward(bundle: LaplacianBundle, features: np.ndarray, state: ModelState, hp: MagnetHyperparams,
            train_mode: bool = False, step: int = 0,
            surfaces: Optional[Iterable[Surface]] = None) -> Dict[Surface, np.ndarray]:
    """
    Node embeddings per surface: |V| x 2F real (real parts, then imaginary parts).

    Dropout is applied only in train_mode, with a mask drawn from (seed, step, surface).
    """
    if features.shape[1] != state.input_dim:
        raise ValueError(f"Feature dimension {features.shape[1]} does not match model input {state.input_dim}")
    embeddings = {}
    for surface in (surfaces if surfaces is not None else SURFACES):
        operator = bundle[surface].rescaled
        if operator.shape[0] != features.shape[0]:
            raise ValueError(f"Operator for {surface.value} has {operator.shape[0]} nodes, "
                             f"features have {features.shape[0]}")
        embeddings[surface], _ = _forward_surface(operator, features, state, hp, train_mode, step,
                                                  SURFACE_INDEX[surface])
    return embeddings


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def edge_probability(h_u: np.ndarray, h_v: np.ndarray, state: ModelState) -> np.ndarray:
    """softmax(W [h_u; h_v] + b); works on single rows or stacked rows"""
    edge = np.concatenate([np.atleast_2d(h_u), np.atleast_2d(h_v)], axis=1)
    probs = _softmax(edge @ state.W.T + state.b)
    return probs[0] if np.ndim(h_u) == 1 else probs


def set_win_probabilities(embeddings: np.ndarray, us: Sequence[int], vs: Sequence[int],
                          state: ModelState) -> np.ndarray:
    """Order-consistent set probability for many (u, v) pairs at once"""
    us, vs = np.asarray(us, dtype=int), np.asarray(vs, dtype=int)
    forward_z = edge_probability(embeddings[us], embeddings[vs], state)
    reverse_z = edge_probability(embeddings[vs], embeddings[us], state)
    return 0.5 * (forward_z[:, 0] + reverse_z[:, 1])


def set_win_probability(u: int, v: int, embeddings: np.ndarray, state: ModelState) -> float:
    """p_uv = ((z_uv)_1 + (z_vu)_2) / 2"""
    return float(set_win_probabilities(embeddings, [u], [v], state)[0])


def match_win_probability(p: Any, best_of: int) -> Any:
    """Match probability from an i.i.d. set probability for best-of-3 or best-of-5"""
    if best_of == 3:
        return p ** 2 + 2 * p ** 2 * (1 - p)
    if best_of == 5:
        return p ** 3 + 3 * p ** 3 * (1 - p) + 6 * p ** 3 * (1 - p) ** 2
    raise ValueError(f"best_of must be 3 or 5, got {best_of}")


@dataclass
class TrainingSet:
    """One sample per set: surface index, node pair and whether u won the set"""
    surfaces: np.ndarray
    us: np.ndarray
    vs: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


def build_training_set(matches: Iterable[MatchRecord], node_index: Dict[str, int]) -> TrainingSet:
    """Expand matches into per-set samples oriented winner-first"""
    surfaces, us, vs, labels = [], [], [], []
    for m in matches:
        u, v = node_index[m.winner_id], node_index[m.loser_id]
        won, lost = m.sets_winner, m.sets_loser
        if won + lost == 0:
            won = 1
        for label, count in ((1.0, won), (0.0, lost)):
            surfaces.extend([SURFACE_INDEX[m.surface]] * count)
            us.extend([u] * count)
            vs.extend([v] * count)
            labels.extend([label] * count)
    return TrainingSet(
        surfaces=np.asarray(surfaces, dtype=int),
        us=np.asarray(us, dtype=int),
        vs=np.asarray(vs, dtype=int),
        labels=np.asarray(labels, dtype=float),
    )


def loss_and_gradients(state: ModelState, samples: TrainingSet, bundle: LaplacianBundle,
                       features: np.ndarray, hp: MagnetHyperparams, train_mode: bool = True,
                       step: int = 0) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Label-smoothed cross-entropy averaged over both orientations of every sample.

    Returns:
        (loss, gradients) with complex gradients for the filters and real ones for the head
    """
    if len(samples) == 0:
        raise ValueError("No training samples")
    grads: Dict[str, np.ndarray] = {name: np.zeros_like(p) for name, p in state.parameters()}
    n_total = float(len(samples))
    eps = hp.label_smoothing
    total_loss = 0.0
    width = 2 * state.output_channels

    for surface in SURFACES:
        s = SURFACE_INDEX[surface]
        rows = np.flatnonzero(samples.surfaces == s)
        if len(rows) == 0:
            continue
        operator = bundle[surface].rescaled
        h, cache = _forward_surface(operator, features, state, hp, train_mode, step, s)
        us, vs = samples.us[rows], samples.vs[rows]
        smoothed = samples.labels[rows] * (1.0 - eps) + eps / 2.0
        grad_h = np.zeros_like(h)

        for first, second, target_first in ((us, vs, smoothed), (vs, us, 1.0 - smoothed)):
            edge = np.concatenate([h[first], h[second]], axis=1)
            logits = edge @ state.W.T + state.b
            target = np.column_stack([target_first, 1.0 - target_first])
            total_loss -= float(np.sum(target * _log_softmax(logits)))
            grad_logits = (_softmax(logits) - target) / (2.0 * n_total)
            grads["W"] += grad_logits.T @ edge
            grads["b"] += grad_logits.sum(axis=0)
            grad_edge = grad_logits @ state.W
            np.add.at(grad_h, first, grad_edge[:, :width])
            np.add.at(grad_h, second, grad_edge[:, width:])

        _backward_surface(grad_h, operator, state, hp, cache, grads)

    return total_loss / (2.0 * n_total), grads


def adam_step(state: ModelState, grads: Dict[str, np.ndarray], hp: MagnetHyperparams) -> None:
    """One AdamW update in place; complex tensors are updated through their real view"""
    state.step += 1
    t = state.step
    for name, param in state.parameters():
        values = param.view(np.float64)
        grad = grads[name].view(np.float64) if np.iscomplexobj(grads[name]) else grads[name]
        m, v = state.moments.get(name, (np.zeros_like(values), np.zeros_like(values)))
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * grad
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * grad * grad
        state.moments[name] = (m, v)
        m_hat = m / (1.0 - ADAM_BETA1 ** t)
        v_hat = v / (1.0 - ADAM_BETA2 ** t)
        if name != "b":
            values *= 1.0 - hp.learning_rate * hp.weight_decay
        values -= hp.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def train(state: ModelState, samples: TrainingSet, bundle: LaplacianBundle, features: np.ndarray,
          hp: MagnetHyperparams, epochs: int) -> Tuple[ModelState, List[float]]:
    """
    Full-batch training for a number of epochs (one Adam step each).

    Returns a new state; the input state is left untouched so it can keep serving
    predictions while a copy trains.
    """
    if len(samples) == 0:
        raise ValueError("No training edges: cannot train on an empty window")
    state.check_shapes(hp, features.shape[1])
    trained = state.copy()
    trace = []
    for _ in range(epochs):
        loss, grads = loss_and_gradients(trained, samples, bundle, features, hp,
                                         train_mode=True, step=trained.step)
        adam_step(trained, grads, hp)
        trace.append(loss)
    if trace:
        logging.info(f"Trained {epochs} epochs on {len(samples)} set samples: "
                     f"loss {trace[0]:.4f} -> {trace[-1]:.4f}")
    return trained, trace


def predict_match_probabilities(state: ModelState, hp: MagnetHyperparams, bundle: LaplacianBundle,
                                features: np.ndarray, surfaces: Sequence[int], us: Sequence[int],
                                vs: Sequence[int], best_of: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    """(set probability, match probability) of u beating v for each requested match"""
    surfaces = np.asarray(surfaces, dtype=int)
    us, vs, best_of = np.asarray(us, dtype=int), np.asarray(vs, dtype=int), np.asarray(best_of, dtype=int)
    p_set = np.zeros(len(us))
    needed = [SURFACES[s] for s in sorted(set(surfaces.tolist()))]
    embeddings = forward(bundle, features, state, hp, train_mode=False, surfaces=needed)
    for surface in needed:
        rows = np.flatnonzero(surfaces == SURFACE_INDEX[surface])
        p_set[rows] = set_win_probabilities(embeddings[surface], us[rows], vs[rows], state)
    p_match = np.where(best_of == 5, match_win_probability(p_set, 5), match_win_probability(p_set, 3))
    return p_set, p_match


def save_checkpoint(state: ModelState, hp: MagnetHyperparams, path: str) -> Path:
    """Versioned .npz with every tensor, Adam moments, step, seed and hyperparameters"""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    arrays: Dict[str, np.ndarray] = {
        "version": np.array(CHECKPOINT_VERSION),
        "seed": np.array(state.seed),
        "step": np.array(state.step),
        "hyperparams": np.array(json.dumps(hp.to_dict(), sort_keys=True)),
        "W": state.W,
        "b": state.b,
    }
    for i, theta in enumerate(state.thetas):
        arrays[f"theta_{i}"] = theta
    for name, (m, v) in state.moments.items():
        arrays[f"adam_m__{name}"] = m
        arrays[f"adam_v__{name}"] = v
    with open(out, "wb") as f:
        np.savez(f, **arrays)
    return out


def load_checkpoint(path: str) -> Tuple[ModelState, MagnetHyperparams]:
    source = Path(path)
    if not source.exists():
        raise FileNotFoundError(f"Checkpoint not found: {source}")
    with np.load(source, allow_pickle=False) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"Unsupported checkpoint version {version} in {source}")
        hp = MagnetHyperparams.from_config(json.loads(str(data["hyperparams"])))
        thetas = [data[f"theta_{i}"].copy() for i in range(hp.layers)]
        moments = {}
        for key in data.files:
            if key.startswith("adam_m__"):
                name = key[len("adam_m__"):]
                moments[name] = (data[key].copy(), data[f"adam_v__{name}"].copy())
        state = ModelState(thetas=thetas, W=data["W"].copy(), b=data["b"].copy(),
                           seed=int(data["seed"]), step=int(data["step"]), moments=moments)
    return state, hp


def write_loss_trace(trace: Sequence[float], path: str, start_epoch: int = 1) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({"epoch": np.arange(start_epoch, start_epoch + len(trace)), "loss": list(trace)})
    frame.to_csv(out, index=False, lineterminator="\n", float_format="%.10g")
    return out
