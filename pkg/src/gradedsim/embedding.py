"""Trainable embedding network: small fully connected layers with exact gradients.

The network maps a precomputed feature vector to a descriptor through one to
three affine layers with ReLU on hidden layers and identity on the output,
optionally followed by L2 normalization. `backward_pair` returns the exact
gradient of the graded contrastive loss of a siamese pair with shared weights,
including the normalization Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .loss import LossConfig, gcl_loss

# Pre-normalization norms below this produce the zero vector, flagged degenerate.
NORM_EPS = 1e-12

MAX_LAYERS = 3


@dataclass(frozen=True)
class Descriptor:
    """Fixed-dimension real descriptor vector."""

    values: np.ndarray
    normalized: bool = False
    degenerate: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 1:
            raise InvalidInputError(f"descriptor must be a 1-d vector, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("descriptor contains non-finite entries")
        if self.normalized and abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise InvalidInputError("descriptor flagged normalized but norm differs from 1")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.size


class EmbeddingModel:
    """Parameters of the embedding network.

    `weights[i]` has shape (dims[i+1], dims[i]); hidden layers use ReLU, the
    output layer is affine, and the output is L2-normalized when
    `output_normalize` is set.
    """

    def __init__(self, weights, biases, output_normalize: bool = True):
        if not (1 <= len(weights) <= MAX_LAYERS) or len(weights) != len(biases):
            raise InvalidInputError("model must have 1 to 3 (weight, bias) layer pairs")
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise InvalidInputError(f"layer {i}: incompatible weight/bias shapes")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise InvalidInputError(f"layer {i}: input dim does not match previous output")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise InvalidInputError(f"layer {i}: non-finite parameters")
        self.output_normalize = bool(output_normalize)

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.output_normalize,
        )


def initialize_model(dims, seed: int, output_normalize: bool = True) -> EmbeddingModel:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization."""
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise InvalidInputError("need at least input and output dimensions")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return EmbeddingModel(weights, biases, output_normalize)


@dataclass
class ModelGradients:
    """Per-parameter gradients, shape-congruent with a model."""

    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, model: EmbeddingModel) -> "ModelGradients":
        return cls(
            [np.zeros_like(w) for w in model.weights],
            [np.zeros_like(b) for b in model.biases],
        )

    def add_(self, other: "ModelGradients") -> None:
        for dw, ow in zip(self.d_weights, other.d_weights):
            dw += ow
        for db, ob in zip(self.d_biases, other.d_biases):
            db += ob

    def scale_(self, factor: float) -> None:
        for dw in self.d_weights:
            dw *= factor
        for db in self.d_biases:
            db *= factor

    def max_abs(self) -> float:
        vals = [np.max(np.abs(a)) if a.size else 0.0 for a in self.d_weights + self.d_biases]
        return float(max(vals))


def _forward_cached(model: EmbeddingModel, x: np.ndarray):
    """Forward pass keeping per-layer activations for backpropagation.

    Returns (activations, pre_activations, output, prenorm) where
    activations[0] is the input and prenorm is None unless normalizing.
    """
    acts = [x]
    pres = []
    a = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = w @ a + b
        pres.append(z)
        a = np.maximum(z, 0.0) if i < last else z
        acts.append(a)
    if not model.output_normalize:
        return acts, pres, a, None
    n = float(np.linalg.norm(a))
    if n < NORM_EPS:
        return acts, pres, np.zeros_like(a), n
    return acts, pres, a / n, n


def forward(model: EmbeddingModel, x) -> Descriptor:
    """Descriptor of one input feature vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size != model.dims[0]:
        raise InvalidInputError(f"input dim {x.shape} does not match model input {model.dims[0]}")
    _, _, out, prenorm = _forward_cached(model, x)
    if model.output_normalize:
        degenerate = prenorm < NORM_EPS
        return Descriptor(out, normalized=not degenerate, degenerate=degenerate)
    return Descriptor(out)


def embed_matrix(model: EmbeddingModel, features: np.ndarray) -> np.ndarray:
    """Row-wise descriptors of an (n, input_dim) feature matrix."""
    a = np.asarray(features, dtype=float)
    if a.ndim != 2 or a.shape[1] != model.dims[0]:
        raise InvalidInputError(f"feature matrix shape {a.shape} does not match model input")
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        a = a @ w.T + b
        if i < last:
            np.maximum(a, 0.0, out=a)
    if model.output_normalize:
        norms = np.linalg.norm(a, axis=1, keepdims=True)
        safe = norms >= NORM_EPS
        a = np.where(safe, a / np.where(safe, norms, 1.0), 0.0)
    return a


def _backprop_branch(model, acts, pres, out, prenorm, g_out, grads: ModelGradients) -> None:
    """Accumulate one branch's parameter gradients given dloss/d(output)."""
    if model.output_normalize:
        if prenorm < NORM_EPS:
            return  # output clamped to the zero vector; treated as constant
        delta = (g_out - out * (out @ g_out)) / prenorm
    else:
        delta = g_out
    for i in range(len(model.weights) - 1, -1, -1):
        grads.d_weights[i] += np.outer(delta, acts[i])
        grads.d_biases[i] += delta
        if i > 0:
            delta = (model.weights[i].T @ delta) * (pres[i - 1] > 0.0)


def backward_pair(
    model: EmbeddingModel,
    input_a,
    input_b,
    psi: float,
    cfg: LossConfig = LossConfig(),
) -> tuple[float, ModelGradients]:
    """Loss and exact shared-weight gradients for one siamese pair.

    Both branches accumulate into the same gradient (weight sharing). The
    gradient of the distance at d = 0 takes the zero-vector subgradient.
    """
    xa = np.asarray(input_a, dtype=float)
    xb = np.asarray(input_b, dtype=float)
    if xa.shape != (model.dims[0],) or xb.shape != (model.dims[0],):
        raise InvalidInputError("pair inputs must match the model input dimension")
    acts_a, pres_a, out_a, n_a = _forward_cached(model, xa)
    acts_b, pres_b, out_b, n_b = _forward_cached(model, xb)
    diff = out_a - out_b
    d = float(np.linalg.norm(diff))
    res = gcl_loss(d, psi, cfg)
    grads = ModelGradients.zeros_like(model)
    if d == 0.0:
        return res.loss, grads
    g_d = (res.dloss_dd / d) * diff
    _backprop_branch(model, acts_a, pres_a, out_a, n_a, g_d, grads)
    _backprop_branch(model, acts_b, pres_b, out_b, n_b, -g_d, grads)
    return res.loss, grads
