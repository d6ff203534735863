"""Kernel training: maximize the studentized separation objective.

Gradients are exact: the objective is differentiated through the three Gram
blocks of a balanced minibatch, and each trainable kernel propagates the
resulting Gram cotangents to its parameters (feature-net weights by
reverse-mode accumulation, bandwidths and the mixing weight through their
unconstrained reparameterizations).  Optimization is plain bias-corrected
adaptive moments in ascent direction, with early stopping on a held-out
validation slice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DatasetSplit, RandomSource, Sample
from .kernels import DeepG, DeepM, DeepO, FeatureNet, Kernel, median_heuristic
from .stats import DEFAULT_REG

__all__ = [
    "TrainConfig",
    "TrainReport",
    "AdamState",
    "adam_step",
    "grad_objective",
    "objective_with_grad",
    "train_kernel",
    "validation_size",
    "initialize_kernel",
    "save_train_report",
]


class TrainingError(ValueError):
    """Training preconditions violated."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    reg: float = DEFAULT_REG
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 4:
            raise TrainingError("batch size must be at least 4")
        if self.learning_rate <= 0:
            raise TrainingError("learning rate must be positive")
        if self.max_epochs < 0 or self.patience < 0:
            raise TrainingError("epochs and patience must be non-negative")


@dataclass
class TrainReport:
    """Per-epoch objectives and the selected checkpoint.

    The initialization counts as epoch 0 and competes for selection, so
    training can never return something worse (on validation) than its
    starting point.  ``best_epoch`` is 1-based; 0 means the initialization
    was kept.  ``params`` and ``kernel`` carry the checkpoint with the best
    validation objective.
    """

    epochs_run: int
    train_objective: list[float]
    val_objective: list[float]
    init_val_objective: float
    best_epoch: int
    params: np.ndarray
    kernel: Kernel
    n_validation: int


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    cfg: TrainConfig,
    step: int,
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected adaptive-moments update in ascent direction.

    ``step`` is 1-based.
    """
    if params.shape != grads.shape:
        raise TrainingError("parameter and gradient shapes differ")
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads**2
    m_hat = m / (1.0 - cfg.beta1**step)
    v_hat = v / (1.0 - cfg.beta2**step)
    new_params = params + cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return new_params, AdamState(m, v)


def objective_with_grad(
    kernel: Kernel, x_batch: Sample, y_batch: Sample, reg: float = DEFAULT_REG
) -> tuple[float, np.ndarray]:
    """Objective value and its exact gradient w.r.t. the kernel parameters."""
    n = x_batch.size
    if n != y_batch.size:
        raise TrainingError("batches must be balanced")
    if n < 2:
        raise TrainingError("batches need at least 2 points per class")

    kxx = kernel.gram(x_batch, x_batch)
    kyy = kernel.gram(y_batch, y_batch)
    kxy = kernel.gram(x_batch, y_batch)

    mmd = (
        (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
        + (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
        - 2.0 * kxy.mean()
    )
    h = kxx + kyy - kxy - kxy.T
    row = h.sum(axis=1)
    total = row.sum()
    var = 4.0 / n**3 * np.dot(row, row) - 4.0 / n**4 * total**2
    var_pos = max(var, 0.0)
    denom_sq = var_pos + reg
    if denom_sq <= 0.0:
        raise TrainingError("degenerate objective: zero variance and no regularizer")
    value = mmd / math.sqrt(denom_sq)

    d_mmd = 1.0 / math.sqrt(denom_sq)
    d_var = -0.5 * mmd * denom_sq ** (-1.5) if var > 0.0 else 0.0

    off = (np.ones((n, n)) - np.eye(n)) / (n * (n - 1))
    # d(var)/dH_ij depends on the row only
    g_row = (8.0 / n**3) * row - (8.0 / n**4) * total
    g_h = np.repeat(g_row[:, None], n, axis=1)

    d_kxx = d_mmd * off + d_var * g_h
    d_kyy = d_mmd * off + d_var * g_h
    d_kxy = d_mmd * (-2.0 / n**2) * np.ones((n, n)) + d_var * (-(g_h + g_h.T))

    grad = (
        kernel.grad_params(x_batch, x_batch, d_kxx)
        + kernel.grad_params(y_batch, y_batch, d_kyy)
        + kernel.grad_params(x_batch, y_batch, d_kxy)
    )
    if grad.size and not np.all(np.isfinite(grad)):
        raise TrainingError("non-finite gradient: parameters are exploding")
    return float(value), grad


def grad_objective(
    kernel: Kernel, x_batch: Sample, y_batch: Sample, reg: float = DEFAULT_REG
) -> np.ndarray:
    """Exact gradient of the training objective (see ``objective_with_grad``)."""
    return objective_with_grad(kernel, x_batch, y_batch, reg)[1]


def validation_size(n_train: int) -> int:
    """Held-out slice size: floor(min(sqrt(10 n), n / 10)), at least 2."""
    return max(2, int(min(math.sqrt(10.0 * n_train), 0.1 * n_train)))


def _clone_kernel(kernel: Kernel) -> Kernel:
    if isinstance(kernel, DeepO):
        return DeepO(kernel.sigma)
    if isinstance(kernel, DeepG):
        return DeepG(kernel.phi.copy(), kernel.sigma)
    if isinstance(kernel, DeepM):
        return DeepM(
            kernel.phi.copy(), kernel.phi_prime.copy(),
            kernel.sigma, kernel.sigma0, kernel.tau,
        )
    # frozen kernels carry no state worth cloning
    return kernel


def train_kernel(
    split: DatasetSplit | tuple[Sample, Sample],
    kernel_init: Kernel,
    cfg: TrainConfig,
    rng: RandomSource | None = None,
) -> TrainReport:
    """Minibatch ascent on the studentized objective with early stopping.

    A validation slice is carved from the training pair by a seeded
    permutation; each epoch runs shuffled, class-paired, equal-sized batches
    (a ragged final batch is dropped) and ends with a validation pass.
    Training stops once ``patience`` consecutive epochs bring no validation
    improvement, and the best checkpoint is returned.  Identical config and
    seed reproduce the report bit for bit.
    """
    if isinstance(split, DatasetSplit):
        x_tr, y_tr = split.train
    else:
        x_tr, y_tr = split
    if x_tr.size != y_tr.size:
        raise TrainingError("training pair must be balanced")
    if rng is None:
        rng = RandomSource(cfg.seed)

    n_tr = x_tr.size
    n_val = validation_size(n_tr)
    if n_tr - n_val < 4:
        raise TrainingError(
            f"n_train={n_tr} too small to carve a validation slice of {n_val}"
        )

    gen_val = rng.fork(0).generator()
    perm_x = gen_val.permutation(n_tr)
    perm_y = gen_val.permutation(n_tr)
    x_val, y_val = x_tr.take(perm_x[:n_val]), y_tr.take(perm_y[:n_val])
    x_gd, y_gd = x_tr.take(perm_x[n_val:]), y_tr.take(perm_y[n_val:])
    n_gd = x_gd.size
    batch = min(cfg.batch_size, n_gd)

    kernel = _clone_kernel(kernel_init)
    params = kernel.param_vector()
    state = AdamState.zeros(params.size)

    def validation_objective() -> float:
        from .stats import objective_J

        return objective_J(x_val, y_val, kernel, cfg.reg)

    init_val = validation_objective()
    best_params = params.copy()
    best_val = init_val
    best_epoch = 0
    train_hist: list[float] = []
    val_hist: list[float] = []
    stale = 0
    step = 0
    epochs_run = 0

    for epoch in range(1, cfg.max_epochs + 1):
        gen_epoch = rng.fork(1, epoch).generator()
        order_x = gen_epoch.permutation(n_gd)
        order_y = gen_epoch.permutation(n_gd)
        n_batches = max(n_gd // batch, 1)
        batch_values = []
        for b in range(n_batches):
            sl = slice(b * batch, (b + 1) * batch)
            xb = x_gd.take(order_x[sl])
            yb = y_gd.take(order_y[sl])
            value, grad = objective_with_grad(kernel, xb, yb, cfg.reg)
            batch_values.append(value)
            if params.size:
                step += 1
                params, state = adam_step(params, grad, state, cfg, step)
                kernel.set_param_vector(params)
        epochs_run = epoch
        train_hist.append(float(np.mean(batch_values)))
        val_value = validation_objective()
        val_hist.append(val_value)
        if val_value > best_val:
            best_val = val_value
            best_params = params.copy()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
        if stale >= cfg.patience:
            break

    kernel.set_param_vector(best_params)
    return TrainReport(
        epochs_run=epochs_run,
        train_objective=train_hist,
        val_objective=val_hist,
        init_val_objective=init_val,
        best_epoch=best_epoch,
        params=best_params,
        kernel=kernel,
        n_validation=n_val,
    )


def initialize_kernel(
    arch: str,
    x_tr: Sample,
    y_tr: Sample,
    rng: RandomSource,
    hidden: tuple[int, ...] = (32, 32, 32),
    feature_dim: int | None = None,
) -> Kernel:
    """Fresh trainable kernel: net weights fan-in uniform, bandwidths from the
    median heuristic on a subsample of at most 512 pooled points, mixing
    weight started at 1/2."""
    half = 256
    gx = rng.fork(2).generator()
    ix = gx.choice(x_tr.size, size=min(half, x_tr.size), replace=False)
    iy = gx.choice(y_tr.size, size=min(half, y_tr.size), replace=False)
    sigma = median_heuristic(x_tr.take(ix), y_tr.take(iy))

    if arch == "deep-o":
        return DeepO(sigma)
    d = x_tr.dim
    widths = [d, *hidden, feature_dim or hidden[-1]]
    if arch == "deep-g":
        return DeepG(FeatureNet.initialize(widths, rng.fork(3)), sigma)
    if arch == "deep-m":
        phi = FeatureNet.initialize(widths, rng.fork(3))
        shift = FeatureNet.initialize([d, *hidden, d], rng.fork(4))
        return DeepM(phi, shift, sigma, sigma, tau=0.5)
    raise TrainingError(f"unknown trainable architecture {arch!r}")


def save_train_report(report: TrainReport, path: str | Path) -> None:
    """Per-epoch CSV of training and validation objective."""
    lines = ["epoch,train_objective,val_objective"]
    for i, (tr, va) in enumerate(zip(report.train_objective, report.val_objective), 1):
        lines.append(f"{i},{tr:.10g},{va:.10g}")
    Path(path).write_text("\n".join(lines) + "\n")
