"""Finite-difference verification of the analytic gradients.

Two suites: descriptor-level (gradients of the graded loss with respect to
both descriptors) and model-level (shared-weight siamese gradients for every
parameter, including the normalization Jacobian). Errors are reported as the
max-norm difference relative to the larger gradient max-norm.

Random configurations that land within finite-difference reach of a
non-smooth point (a ReLU kink or the margin branch boundary) are redrawn:
the analytic gradient is well defined there, but central differences are not
a meaningful reference across a kink.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import EmbeddingModel, backward_pair, initialize_model, _forward_cached
from .errors import InvalidInputError
from .loss import LossConfig, gcl_descriptor_gradients, gcl_loss

LOSS_TOLERANCE = 1e-5
MODEL_TOLERANCE = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max-norm difference over the larger of the two max-norms.

    The scale is floored: central differences at h around 1e-6 only resolve
    gradients down to roughly 1e-10 absolute, so structurally-zero gradients
    (for example the last-layer bias of an unnormalized siamese pair, which
    cancels between branches) must not read their measurement noise as error.
    """
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = max(
        np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0), floor
    )
    return float(np.max(np.abs(analytic - numeric), initial=0.0) / scale)


def loss_gradient_check(
    trials: int = 1000,
    seed: int = 0,
    dims: tuple[int, int] = (2, 64),
    h: float = 1e-5,
    cfg: LossConfig = LossConfig(),
) -> float:
    """Max relative error of descriptor-level gradients over random triples."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        while True:
            dim = int(rng.integers(dims[0], dims[1] + 1))
            a = rng.normal(scale=0.5, size=dim)
            direction = rng.normal(size=dim)
            direction /= np.linalg.norm(direction)
            length = float(rng.uniform(0.02, 3.0 * cfg.margin_tau))
            b = a + length * direction
            psi = float(rng.uniform())
            if abs(length - cfg.margin_tau) > 1e-3:
                break
        ga, gb, _ = gcl_descriptor_gradients(a, b, psi, cfg)
        fd_a = np.empty(dim)
        fd_b = np.empty(dim)
        for i in range(dim):
            for vec, fd in ((a, fd_a), (b, fd_b)):
                orig = vec[i]
                vec[i] = orig + h
                up = gcl_loss(float(np.linalg.norm(a - b)), psi, cfg).loss
                vec[i] = orig - h
                dn = gcl_loss(float(np.linalg.norm(a - b)), psi, cfg).loss
                vec[i] = orig
                fd[i] = (up - dn) / (2.0 * h)
        worst = max(worst, relative_error(ga, fd_a), relative_error(gb, fd_b))
    return worst


def _pair_loss(model: EmbeddingModel, xa, xb, psi: float, cfg: LossConfig) -> float:
    _, _, out_a, _ = _forward_cached(model, xa)
    _, _, out_b, _ = _forward_cached(model, xb)
    d = float(np.linalg.norm(out_a - out_b))
    return gcl_loss(d, psi, cfg).loss


def _min_preactivation(model: EmbeddingModel, x) -> float:
    _, pres, _, _ = _forward_cached(model, x)
    return min(float(np.min(np.abs(z))) for z in pres)


def model_gradient_check(
    trials: int = 200,
    seed: int = 0,
    h: float = 1e-6,
    cfg: LossConfig = LossConfig(),
    dim_range: tuple[int, int] = (2, 8),
) -> float:
    """Max relative error of full siamese parameter gradients over random models."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        while True:
            n_layers = int(rng.integers(1, 4))
            dims = [int(rng.integers(dim_range[0], dim_range[1] + 1)) for _ in range(n_layers + 1)]
            normalize = bool(rng.integers(0, 2))
            model = initialize_model(dims, seed=int(rng.integers(0, 2**31)), output_normalize=normalize)
            xa = rng.normal(size=dims[0])
            xb = rng.normal(size=dims[0])
            psi = float(rng.uniform())
            _, _, out_a, prenorm_a = _forward_cached(model, xa)
            _, _, out_b, prenorm_b = _forward_cached(model, xb)
            d = float(np.linalg.norm(out_a - out_b))
            smooth = (
                d > 1e-3
                and abs(d - cfg.margin_tau) > 1e-3
                and _min_preactivation(model, xa) > 1e-4
                and _min_preactivation(model, xb) > 1e-4
                and (not normalize or min(prenorm_a, prenorm_b) > 1e-3)
            )
            if smooth:
                break
        _, grads = backward_pair(model, xa, xb, psi, cfg)
        for li in range(len(model.weights)):
            for arr, g in ((model.weights[li], grads.d_weights[li]),
                           (model.biases[li], grads.d_biases[li])):
                fd = np.empty_like(arr)
                it = np.nditer(arr, flags=["multi_index"])
                while not it.finished:
                    idx = it.multi_index
                    orig = arr[idx]
                    arr[idx] = orig + h
                    up = _pair_loss(model, xa, xb, psi, cfg)
                    arr[idx] = orig - h
                    dn = _pair_loss(model, xa, xb, psi, cfg)
                    arr[idx] = orig
                    fd[idx] = (up - dn) / (2.0 * h)
                    it.iternext()
                # h = 1e-6 leaves ~1e-10 absolute roundoff in the quotient, so
                # structurally-zero gradient blocks need a wider scale floor
                worst = max(worst, relative_error(g, fd, floor=1e-4))
    return worst


@dataclass(frozen=True)
class GradCheckReport:
    loss_trials: int
    model_trials: int
    max_rel_error_loss: float
    max_rel_error_model: float
    loss_tolerance: float = LOSS_TOLERANCE
    model_tolerance: float = MODEL_TOLERANCE

    @property
    def passed(self) -> bool:
        if self.loss_trials == 0 and self.model_trials == 0:
            return True
        ok_loss = self.loss_trials == 0 or self.max_rel_error_loss <= self.loss_tolerance
        ok_model = self.model_trials == 0 or self.max_rel_error_model <= self.model_tolerance
        return ok_loss and ok_model


def run_gradcheck(
    trials: int = 200, seed: int = 0, dims: tuple[int, int] = (2, 16)
) -> GradCheckReport:
    """Both finite-difference suites with `trials` configurations each."""
    if trials < 0:
        raise InvalidInputError("trials must be non-negative")
    if trials == 0:
        return GradCheckReport(0, 0, 0.0, 0.0)
    loss_err = loss_gradient_check(trials=trials, seed=seed, dims=dims)
    model_err = model_gradient_check(trials=trials, seed=seed + 1)
    return GradCheckReport(trials, trials, loss_err, model_err)
