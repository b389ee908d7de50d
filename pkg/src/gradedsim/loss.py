"""Contrastive and graded contrastive losses with analytic gradients.

For a descriptor distance d, margin tau and graded similarity psi in [0, 1]:

    binary loss   = 0.5 * d^2                 (similar pair, y = 1)
                  = 0.5 * max(tau - d, 0)^2   (dissimilar pair, y = 0)

    graded loss   = psi * 0.5 * d^2 + (1 - psi) * 0.5 * max(tau - d, 0)^2

with distance gradients

    binary: d (y = 1) and min(d - tau, 0) (y = 0)
    graded: d + tau * (psi - 1) when d < tau, d * psi when d >= tau.

At psi = 1 and psi = 0 the graded forms reduce exactly (bit for bit) to the
binary ones, and both gradient branches agree at d = tau.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class LossConfig:
    """Margin plus the threshold for deriving binary labels from psi."""

    margin_tau: float = 0.5
    positive_threshold: float = 0.5

    def __post_init__(self):
        if not (np.isfinite(self.margin_tau) and self.margin_tau > 0):
            raise InvalidInputError(f"margin must be positive, got {self.margin_tau!r}")
        if not (0.0 < self.positive_threshold < 1.0):
            raise InvalidInputError(
                f"positive threshold must lie in (0, 1), got {self.positive_threshold!r}"
            )


@dataclass(frozen=True)
class PairLossResult:
    """Loss value and its gradient with respect to the descriptor distance."""

    loss: float
    dloss_dd: float


def l2_distance(a, b) -> float:
    """Euclidean distance between two equal-dimension descriptors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidInputError(f"descriptor shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def _check_distance(d: float) -> float:
    # +inf passes through (an overflowing distance gives an infinite loss,
    # which training reports as divergence); NaN and negatives are invalid.
    if math.isnan(d) or d < 0:
        raise InvalidInputError(f"distance must be non-negative, got {d!r}")
    return float(d)


def cl_loss(d: float, y: int, cfg: LossConfig = LossConfig()) -> PairLossResult:
    """Binary contrastive loss and gradient for a pair labeled y in {0, 1}."""
    d = _check_distance(d)
    if y not in (0, 1):
        raise InvalidInputError(f"label must be 0 or 1, got {y!r}")
    tau = cfg.margin_tau
    if y == 1:
        return PairLossResult(loss=0.5 * d * d, dloss_dd=d)
    slack = max(tau - d, 0.0)
    return PairLossResult(loss=0.5 * slack * slack, dloss_dd=min(d - tau, 0.0))


def gcl_loss(d: float, psi: float, cfg: LossConfig = LossConfig()) -> PairLossResult:
    """Graded contrastive loss and gradient for similarity psi in [0, 1]."""
    d = _check_distance(d)
    if not (np.isfinite(psi) and 0.0 <= psi <= 1.0):
        raise InvalidInputError(f"psi must lie in [0, 1], got {psi!r}")
    tau = cfg.margin_tau
    slack = max(tau - d, 0.0)
    loss = psi * (0.5 * d * d) + (1.0 - psi) * (0.5 * slack * slack)
    if d < tau:
        grad = d + tau * (psi - 1.0)
    else:
        grad = d * psi
    return PairLossResult(loss=loss, dloss_dd=grad)


def gcl_descriptor_gradients(
    a, b, psi: float, cfg: LossConfig = LossConfig()
) -> tuple[np.ndarray, np.ndarray, float]:
    """Gradients of the graded loss with respect to both descriptors.

    Chain rule through d = ||a - b||: grad_a = dloss_dd * (a - b) / d and
    grad_b = -grad_a. At d = 0 the subgradient choice is the zero vector.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidInputError(f"descriptor shape mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    d = float(np.linalg.norm(diff))
    res = gcl_loss(d, psi, cfg)
    if d == 0.0:
        ga = np.zeros_like(a)
        return ga, ga.copy(), res.loss
    ga = (res.dloss_dd / d) * diff
    return ga, -ga, res.loss


def binary_label_from_psi(psi: float, cfg: LossConfig = LossConfig()) -> int:
    """1 iff psi strictly exceeds the positive threshold."""
    if not (np.isfinite(psi) and 0.0 <= psi <= 1.0):
        raise InvalidInputError(f"psi must lie in [0, 1], got {psi!r}")
    return 1 if psi > cfg.positive_threshold else 0
