"""Meta-training loop: sample contaminated tasks, average their gradients,
take one optimizer step per iteration.

Each task is forwarded separately so that normalization statistics never mix
across tasks; the per-task gradients are reduced in a canonical content-based
order, which makes the parameter update exactly invariant to the order in
which tasks were sampled within an iteration.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DivergenceError
from .model import Architecture, DetectorModel, HEAD_DSVDD, HEADS
from .nn import BN_BATCH, BN_IDENTITY, BN_MODES, Adam
from .scores import ScoreVector
from .tasks import MetaDataset, MixtureConfig, TaskBatch, sample_iteration_tasks

DIVERGENCE_PATIENCE = 5


def meta_oe_loss(scores: ScoreVector, y) -> float:
    """Mixed objective: mean of s over normal rows and of the inverse score a
    over contaminant rows, (1/B) * sum((1-y)*s + y*a)."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != len(scores):
        raise ValueError("labels and scores disagree on length")
    return float(np.mean((1.0 - y) * scores.s + y * scores.a))


def one_class_loss(scores: ScoreVector) -> float:
    """Plain one-class objective: mean of s."""
    if len(scores) == 0:
        raise ValueError("empty score vector")
    return float(np.mean(scores.s))


def no_bn_trivial_loss_value(pi: float) -> float:
    """Analytic infimum of the mixed objective summed over a 2-pool meta-set
    when the model has no batch normalization: 4*sqrt(pi*(1-pi)).

    At this optimum the network maps every input to a sphere around the
    center, independent of the input's source pool, so the value is a floor
    that adaptive (batch-normalized) training must undercut.
    """
    if not 0.5 <= pi <= 1.0:
        raise ValueError(f"pi must lie in [0.5, 1], got {pi}")
    return 4.0 * math.sqrt(pi * (1.0 - pi))


@dataclass(frozen=True)
class TrainConfig:
    iterations: int
    tasks_per_iter: int
    batch_size: int
    pi: float
    learning_rate: float
    seed: int
    head: str = HEAD_DSVDD
    hidden: tuple[int, ...] = (64, 64, 64)
    latent_dim: int = 32
    input_bn: bool = False
    bn_mode: str = BN_BATCH
    bn_mask: tuple[bool, ...] | None = None
    loss: str = "meta_oe"  # meta_oe | one_class
    center_frozen: bool = False
    with_replacement: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be at least 1")
        if self.head not in HEADS:
            raise ConfigError(f"unknown head {self.head!r}")
        if self.bn_mode not in BN_MODES:
            raise ConfigError(f"unknown bn_mode {self.bn_mode!r}")
        if self.loss not in ("meta_oe", "one_class"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        # batch_size / pi / tasks_per_iter are validated by MixtureConfig
        self.mixture()

    def mixture(self) -> MixtureConfig:
        return MixtureConfig(
            pi=self.pi,
            batch_size=self.batch_size,
            tasks_per_iter=self.tasks_per_iter,
            with_replacement=self.with_replacement,
        )

    def architecture(self, input_dim: int) -> Architecture:
        return Architecture(
            input_dim=input_dim,
            hidden=tuple(self.hidden),
            latent_dim=self.latent_dim,
            input_bn=self.input_bn,
        )


@dataclass
class TrainReport:
    loss_curve: list[float]
    seed: int
    wall_clock_s: float
    diverged_iterations: int = 0

    @property
    def final_loss(self) -> float:
        return self.loss_curve[-1]


def _task_key(task: TaskBatch) -> bytes:
    """Content-based ordering key so gradient reduction ignores sample order."""
    h = hashlib.blake2b(digest_size=16)
    h.update(task.x.tobytes())
    h.update(task.y.tobytes())
    return h.digest()


def average_task_gradients(
    model: DetectorModel,
    tasks: list[TaskBatch],
    loss_kind: str,
    mode: str,
    record: bool = False,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss and mean gradients over tasks, each forwarded separately.

    Per-task contributions are summed in a canonical content-based order, so
    the result is bit-identical under any permutation of ``tasks``.
    """
    contribs = []
    for task in tasks:
        loss, grads = model.loss_and_grads(
            task.x, task.y, loss_kind=loss_kind, mode=mode, record=record
        )
        contribs.append((_task_key(task), loss, grads))
    contribs.sort(key=lambda c: c[0])

    mean_loss = 0.0
    for _, loss, _ in contribs:
        mean_loss += loss
    mean_loss /= len(contribs)

    avg: dict[str, np.ndarray] = {}
    for name in contribs[0][2]:
        total = contribs[0][2][name].copy()
        for _, _, grads in contribs[1:]:
            total += grads[name]
        total /= len(contribs)
        avg[name] = total
    return mean_loss, avg


def train(meta: MetaDataset, cfg: TrainConfig) -> tuple[DetectorModel, TrainReport]:
    """Run the full meta-training loop and return the trained model.

    Per iteration: sample ``tasks_per_iter`` contaminated tasks, forward and
    backprop each task batch on its own (its own normalization statistics),
    average the per-task losses and gradients, and apply one Adam step.
    """
    if cfg.pi < 1.0 and meta.k < 2 and meta.anomaly_pool is None:
        raise ConfigError("pi < 1 needs at least two pools in the meta-set")

    root = np.random.SeedSequence(cfg.seed)
    init_ss, task_ss = root.spawn(2)
    model = DetectorModel(
        cfg.architecture(meta.dim),
        head=cfg.head,
        rng=np.random.default_rng(init_ss),
        bn_mode=cfg.bn_mode,
        bn_mask=cfg.bn_mask,
        center_frozen=cfg.center_frozen,
    )
    adam = Adam(model.params(), cfg.learning_rate)
    task_rng = np.random.default_rng(task_ss)
    mixture = cfg.mixture()
    # identity stays identity during training; frozen trains on batch stats
    train_mode = BN_IDENTITY if cfg.bn_mode == BN_IDENTITY else BN_BATCH

    losses: list[float] = []
    bad_streak = 0
    diverged = 0
    started = time.perf_counter()
    for _ in range(cfg.iterations):
        tasks = sample_iteration_tasks(meta, mixture, task_rng)
        mean_loss, avg = average_task_gradients(
            model, tasks, loss_kind=cfg.loss, mode=train_mode, record=True
        )
        losses.append(mean_loss)

        if not math.isfinite(mean_loss):
            bad_streak += 1
            diverged += 1
            if bad_streak >= DIVERGENCE_PATIENCE:
                raise DivergenceError(
                    f"loss non-finite for {bad_streak} consecutive iterations "
                    f"(last={mean_loss!r}, iteration={len(losses)})"
                )
            continue
        bad_streak = 0
        adam.step(model.params(), avg)

    if cfg.bn_mode == "frozen":
        model.freeze_batch_stats()

    report = TrainReport(
        loss_curve=losses,
        seed=cfg.seed,
        wall_clock_s=time.perf_counter() - started,
        diverged_iterations=diverged,
    )
    return model, report
