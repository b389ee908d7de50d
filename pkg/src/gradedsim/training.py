"""Plain stochastic gradient descent over graded-pair batches.

Each batch averages the per-pair shared-weight gradients and takes one step
with a learning rate that is divided by the decay factor after every
`decay_every_pairs` training pairs. Published defaults: initial rate 0.1 for
the graded loss and 0.01 for the binary loss, decay factor 10 every 250k
pairs, margin 0.5, batch size 64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .embedding import EmbeddingModel, ModelGradients, backward_pair
from .errors import InvalidInputError, TrainingDivergedError
from .loss import LossConfig, binary_label_from_psi
from .mining import DEFAULT_BATCH_SIZE, epoch_schedule, get_strategy
from .pairs import GradedPairSet

GCL_DEFAULT_LR = 0.1
CL_DEFAULT_LR = 0.01


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer schedule and loss selection."""

    loss_kind: str = "gcl"
    initial_lr: float | None = None  # None: 0.1 for gcl, 0.01 for cl
    lr_decay_factor: float = 10.0
    decay_every_pairs: int = 250_000
    batch_size: int = DEFAULT_BATCH_SIZE
    margin_tau: float = 0.5
    positive_threshold: float = 0.5
    strategy: str = "A"
    epochs: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.loss_kind not in ("gcl", "cl"):
            raise InvalidInputError(f"loss kind must be 'gcl' or 'cl', got {self.loss_kind!r}")
        if self.initial_lr is not None and self.initial_lr < 0:
            raise InvalidInputError("initial learning rate must be non-negative")
        if not self.lr_decay_factor > 0:
            raise InvalidInputError("decay factor must be positive")
        if self.decay_every_pairs < 1 or self.batch_size < 1 or self.epochs < 0:
            raise InvalidInputError("counts must be positive (epochs may be zero)")
        get_strategy(self.strategy)
        self.loss_config()  # validates margin and threshold

    @property
    def resolved_initial_lr(self) -> float:
        if self.initial_lr is not None:
            return self.initial_lr
        return GCL_DEFAULT_LR if self.loss_kind == "gcl" else CL_DEFAULT_LR

    def loss_config(self) -> LossConfig:
        return LossConfig(margin_tau=self.margin_tau, positive_threshold=self.positive_threshold)


def lr_at(pairs_seen: int, cfg: TrainConfig) -> float:
    """Learning rate after `pairs_seen` pairs: stepwise decay by the factor."""
    if pairs_seen < 0:
        raise InvalidInputError("pairs_seen must be non-negative")
    steps = pairs_seen // cfg.decay_every_pairs
    return cfg.resolved_initial_lr / cfg.lr_decay_factor**steps


@dataclass
class TrainReport:
    """Per-batch trace of one training run."""

    model: EmbeddingModel
    batch_losses: list[float] = field(default_factory=list)
    lr_history: list[float] = field(default_factory=list)
    pairs_seen_history: list[int] = field(default_factory=list)
    pairs_seen: int = 0

    @property
    def batches(self) -> int:
        return len(self.batch_losses)


def train(
    model: EmbeddingModel,
    pairs: GradedPairSet,
    features,
    cfg: TrainConfig = TrainConfig(),
    on_batch_end: Callable[[int, EmbeddingModel], None] | None = None,
) -> TrainReport:
    """Optimize the model in place over `cfg.epochs` epochs of sampled batches.

    `features` maps every id appearing in the pair set to its input vector
    (anything supporting `features[id]`). The binary loss path derives labels
    by thresholding psi and reuses the graded backward pass at psi in {0, 1},
    which is exactly the binary loss. A non-finite batch loss aborts.
    """
    lc = cfg.loss_config()
    vectors: dict[str, np.ndarray] = {}
    for pid in list(pairs.query_ids) + list(pairs.map_ids):
        if pid in vectors:
            continue
        try:
            vectors[pid] = np.asarray(features[pid], dtype=float)
        except (KeyError, IndexError):
            raise InvalidInputError(f"id {pid!r} is not resolvable in the feature store") from None

    report = TrainReport(model=model)
    binary = cfg.loss_kind == "cl"
    batch_index = 0
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        for batch in epoch_schedule(pairs, cfg.strategy, cfg.batch_size, rng):
            lr = lr_at(report.pairs_seen, cfg)
            grads = ModelGradients.zeros_like(model)
            total = 0.0
            for pair in batch.pairs:
                psi = float(binary_label_from_psi(pair.psi, lc)) if binary else pair.psi
                try:
                    loss, g = backward_pair(
                        model, vectors[pair.query_id], vectors[pair.map_id], psi, lc
                    )
                except InvalidInputError:
                    if any(not np.all(np.isfinite(w)) for w in model.weights) or any(
                        not np.all(np.isfinite(b)) for b in model.biases
                    ):
                        raise TrainingDivergedError(
                            f"parameters became non-finite by batch {batch_index} "
                            f"(pairs seen: {report.pairs_seen}, lr: {lr})"
                        ) from None
                    raise
                total += loss
                grads.add_(g)
            mean_loss = total / len(batch)
            if not math.isfinite(mean_loss):
                raise TrainingDivergedError(
                    f"non-finite loss {mean_loss!r} at batch {batch_index} "
                    f"(pairs seen: {report.pairs_seen}, lr: {lr})"
                )
            grads.scale_(1.0 / len(batch))
            for w, dw in zip(model.weights, grads.d_weights):
                w -= lr * dw
            for b, db in zip(model.biases, grads.d_biases):
                b -= lr * db
            report.pairs_seen += len(batch)
            report.batch_losses.append(mean_loss)
            report.lr_history.append(lr)
            report.pairs_seen_history.append(report.pairs_seen)
            batch_index += 1
            if on_batch_end is not None:
                on_batch_end(batch_index, model)
    return report
