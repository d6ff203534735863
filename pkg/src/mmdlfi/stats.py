"""Diagonal-removed U-statistics for two- and three-sample kernel testing.

The building block is the unbiased inner product between empirical kernel
embeddings: for one sample it averages the off-diagonal Gram entries, for two
distinct samples it averages all of them.  Everything else -- the squared-MMD
estimate, the three-sample statistic, its data-dependent threshold, the
witness scores, the studentized training objective -- is assembled from that
block and stays linear in the kernel.
"""

from __future__ import annotations

import numpy as np

from .data import Sample
from .kernels import Kernel, ProductWitness

__all__ = [
    "u_inner",
    "mmd_u_squared",
    "t_statistic",
    "gamma_threshold",
    "witness_score",
    "witness_scores",
    "variance_estimator",
    "objective_J",
    "objective_from_grams",
    "ume_statistic",
]

DEFAULT_REG = 1e-8


class StatisticsError(ValueError):
    """Statistic preconditions violated (sizes, flags)."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise StatisticsError(msg)


def u_inner(a: Sample, b: Sample, kernel: Kernel, same: bool = False) -> float:
    """Unbiased inner product of empirical kernel embeddings.

    With ``same`` the two arguments must be the same sample and the diagonal
    Gram entries are dropped: the result is ``sum_{i != j} K(a_i, a_j) /
    (n (n - 1))``.  Otherwise it is the plain mean of the cross Gram block.
    """
    if same:
        _require(a.size >= 2, "same-sample inner product needs at least 2 points")
        _require(
            a is b or np.array_equal(a.points, b.points),
            "same=True requires both arguments to be the same sample",
        )
        g = kernel.gram(a, a)
        n = a.size
        return float((g.sum() - np.trace(g)) / (n * (n - 1)))
    _require(a.size >= 1 and b.size >= 1, "samples must be nonempty")
    return float(kernel.gram(a, b).mean())


def mmd_u_squared(x: Sample, y: Sample, kernel: Kernel) -> float:
    """Unbiased estimate of the squared MMD between the generating laws.

    May be negative; its expectation over i.i.d. draws equals MMD^2(P_X, P_Y).
    """
    _require(x.size >= 2 and y.size >= 2, "squared-MMD estimate needs >= 2 points per sample")
    return (
        u_inner(x, x, kernel, same=True)
        + u_inner(y, y, kernel, same=True)
        - 2.0 * u_inner(x, y, kernel)
    )


def t_statistic(x: Sample, y: Sample, z: Sample, kernel: Kernel) -> float:
    """Cross statistic (1/(nm)) sum_{ij} [K(z_j, y_i) - K(z_j, x_i)].

    When ``z`` is passed the very object ``x`` (or ``y``), the corresponding
    block uses the same-sample diagonal-removed convention; this is what makes
    the data-dependent threshold consistent with the squared-MMD comparison.
    """
    _require(x.size == y.size, f"simulator samples must be balanced, got {x.size} != {y.size}")
    _require(x.size >= 1 and z.size >= 1, "samples must be nonempty")
    zy = u_inner(z, y, kernel, same=z is y)
    zx = u_inner(z, x, kernel, same=z is x)
    return zy - zx


def gamma_threshold(x: Sample, y: Sample, pi: float, kernel: Kernel) -> float:
    """Data-dependent threshold pi * MMD_u^2(x, y) + T(x, y, x).

    Geometrically: rejecting when the statistic exceeds this threshold asks
    whether the test embedding projects further than ``pi`` along the segment
    from the embedding of ``x`` to the embedding of ``y``.
    """
    _require(0.0 <= pi <= 1.0, f"pi={pi} outside [0, 1]")
    _require(x.size == y.size and x.size >= 2, "threshold needs balanced samples of size >= 2")
    return pi * mmd_u_squared(x, y, kernel) + t_statistic(x, y, x, kernel)


def witness_scores(z: Sample, x_ev: Sample, y_ev: Sample, kernel: Kernel) -> np.ndarray:
    """Witness score of every point of ``z``:

        f(z) = (1/n_ev) sum_i [K(z, y_ev_i) - K(z, x_ev_i)].

    The mean of these scores over ``z`` equals ``t_statistic(x_ev, y_ev, z)``.
    """
    _require(x_ev.size == y_ev.size, "evaluation samples must be balanced")
    _require(x_ev.size >= 1, "evaluation samples must be nonempty")
    gy = kernel.gram(z, y_ev)
    gx = kernel.gram(z, x_ev)
    return (gy - gx).mean(axis=1)


def witness_score(z_point, x_ev: Sample, y_ev: Sample, kernel: Kernel) -> float:
    """Witness score of a single point (int index or coordinate vector)."""
    if x_ev.kind == "categorical":
        z = Sample.categorical([int(z_point)], x_ev.support)
    else:
        z = Sample.real(np.atleast_2d(np.asarray(z_point, dtype=np.float64)))
    return float(witness_scores(z, x_ev, y_ev, kernel)[0])


def variance_estimator(x: Sample, y: Sample, kernel: Kernel) -> float:
    """Plug-in variance estimate of the squared-MMD statistic.

    With H_ij = K(x_i, x_j) + K(y_i, y_j) - K(x_i, y_j) - K(y_i, x_j),

        sigma^2 = (4/n^3) sum_i (sum_j H_ij)^2 - (4/n^4) (sum_ij H_ij)^2,

    which is non-negative up to rounding by the AM-QM inequality.
    """
    _require(x.size == y.size, "variance estimate needs balanced samples")
    n = x.size
    _require(n >= 2, "variance estimate needs at least 2 points per sample")
    h = _h_matrix(x, y, kernel)
    row = h.sum(axis=1)
    return float(4.0 / n**3 * np.dot(row, row) - 4.0 / n**4 * row.sum() ** 2)


def _h_matrix(x: Sample, y: Sample, kernel: Kernel) -> np.ndarray:
    kxx = kernel.gram(x, x)
    kyy = kernel.gram(y, y)
    kxy = kernel.gram(x, y)
    return kxx + kyy - kxy - kxy.T


def objective_from_grams(
    kxx: np.ndarray, kyy: np.ndarray, kxy: np.ndarray, reg: float = DEFAULT_REG
) -> float:
    """Studentized objective from precomputed Gram blocks (shared with training)."""
    n = kxx.shape[0]
    mmd = (
        (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
        + (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
        - 2.0 * kxy.mean()
    )
    h = kxx + kyy - kxy - kxy.T
    row = h.sum(axis=1)
    var = 4.0 / n**3 * np.dot(row, row) - 4.0 / n**4 * row.sum() ** 2
    denom_sq = max(var, 0.0) + reg
    if denom_sq <= 0.0:
        raise StatisticsError("degenerate objective: zero variance and no regularizer")
    return float(mmd / np.sqrt(denom_sq))


def objective_J(x: Sample, y: Sample, kernel: Kernel, reg: float = DEFAULT_REG) -> float:
    """Training objective: squared-MMD estimate over its estimated deviation,

        J = MMD_u^2(x, y) / sqrt(max(sigma^2, 0) + reg).

    Invariant under positive rescaling of the kernel (for reg -> 0), so it
    scores the direction of a kernel, not its magnitude.
    """
    _require(x.size == y.size and x.size >= 2, "objective needs balanced samples of size >= 2")
    _require(reg >= 0.0, "regularizer must be non-negative")
    return objective_from_grams(
        kernel.gram(x, x), kernel.gram(y, y), kernel.gram(x, y), reg
    )


def ume_statistic(
    x: Sample, y: Sample, z: Sample, witnesses: Sample, kernel: Kernel
) -> float:
    """Difference of squared embedding distances at fixed witness locations.

    With features psi(z) = (K(z, w_1), ..., K(z, w_J)) / sqrt(J) and
    U^2(a, b) = || mean psi(a) - mean psi(b) ||^2, returns
    U^2(z, y) - U^2(z, x).  Additive in ``z`` up to a term that depends only
    on ``x`` and ``y``.
    """
    _require(x.size == y.size, "simulator samples must be balanced")
    _require(witnesses.size >= 1, "at least one witness location is required")
    psi_x = kernel.gram(x, witnesses) / np.sqrt(witnesses.size)
    psi_y = kernel.gram(y, witnesses) / np.sqrt(witnesses.size)
    psi_z = kernel.gram(z, witnesses) / np.sqrt(witnesses.size)
    mx = psi_x.mean(axis=0)
    my = psi_y.mean(axis=0)
    mz = psi_z.mean(axis=0)
    to_y = mz - my
    to_x = mz - mx
    return float(np.dot(to_y, to_y) - np.dot(to_x, to_x))


def product_witness_constant(x: Sample, y: Sample, kernel: ProductWitness) -> float:
    """For K(x, y) = f(x) f(y): mean f(y) - mean f(x), the factor relating the
    cross statistic to the plain average of f over the test sample."""
    return float(kernel.scores(y).mean() - kernel.scores(x).mean())
