"""Monte Carlo harness: toy instance, error-rate sweeps, contours, power curves.

The sweep estimates, for every cell of an (m, n) grid, the total error (type I
plus type II) of the threshold test on the odd/even perturbation instance.
Cells draw category counts directly (counts are sufficient for the indicator
kernel, and every statistic is a count functional), with one RNG stream per
(row, col, trial) so results are identical however the work is partitioned.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DataError, DiscreteDistribution, RandomSource
from .kernels import DiscreteIdentity

__all__ = [
    "ToyInstance",
    "make_toy",
    "ErrorGrid",
    "tradeoff_sweep",
    "extract_contour",
    "power_curve",
    "AsymmetryReport",
    "contour_asymmetry",
    "grid_to_csv",
    "contour_to_csv",
    "save_grid",
    "save_contour",
    "DEFAULT_GRID",
]

DEFAULT_GRID = (25, 50, 100, 200, 400, 800, 1600, 3200)


@dataclass(frozen=True)
class ToyInstance:
    """Odd/even perturbation of the uniform law on 1..k.

    Categories get mass (1 +/- eps)/k with the sign set by index parity; the
    two laws mirror each other around uniform and their squared MMD under the
    indicator kernel is 4 eps^2 / k.
    """

    k: int
    epsilon: float
    px: DiscreteDistribution
    py: DiscreteDistribution
    kernel: DiscreteIdentity
    true_mmd_sq: float


def make_toy(k: int, epsilon: float) -> ToyInstance:
    if k < 2 or k % 2 != 0:
        raise DataError("support size must be an even integer >= 2")
    if not 0.0 <= epsilon < 1.0:
        raise DataError("perturbation must lie in [0, 1) to keep masses positive")
    idx = np.arange(1, k + 1)
    sign = np.where(idx % 2 == 1, 1.0, -1.0)
    px = DiscreteDistribution((1.0 + epsilon * sign) / k)
    py = DiscreteDistribution(2.0 / k - px.pmf)
    return ToyInstance(
        k=k,
        epsilon=epsilon,
        px=px,
        py=py,
        kernel=DiscreteIdentity(k),
        true_mmd_sq=4.0 * epsilon**2 / k,
    )


def _reject_from_counts(
    cx: np.ndarray, cy: np.ndarray, cz: np.ndarray, n: int, m: int, pi: float
) -> bool:
    """Threshold-test decision from category counts under the indicator kernel.

    Identical arithmetic to the sample-based statistics: every Gram sum over
    the indicator kernel is a count contraction.
    """
    xy = float(cx @ cy) / n**2
    xx_u = float(cx @ (cx - 1)) / (n * (n - 1))
    yy_u = float(cy @ (cy - 1)) / (n * (n - 1))
    t = float(cz @ (cy - cx)) / (n * m)
    gamma = pi * (xx_u + yy_u - 2.0 * xy) + xy - xx_u
    return t >= gamma


@dataclass(frozen=True)
class ErrorGrid:
    """Total-error estimates over an (m, n) grid.

    Arrays are indexed ``[i_m, j_n]``.  Cells skipped for being degenerate
    (n < 2) carry zero trials and NaN rates.  The standard error treats the
    total as a binomial proportion, clipping it into [0, 1] first.
    """

    m_values: np.ndarray
    n_values: np.ndarray
    trials: np.ndarray
    type1: np.ndarray
    type2: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.type1 + self.type2

    @property
    def se(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            p = np.clip(self.total, 0.0, 1.0)
            return np.sqrt(p * (1.0 - p) / np.where(self.trials > 0, self.trials, np.nan))

    def transpose(self) -> "ErrorGrid":
        """Swap the roles of m and n (for symmetry diagnostics)."""
        return ErrorGrid(
            m_values=self.n_values.copy(),
            n_values=self.m_values.copy(),
            trials=self.trials.T.copy(),
            type1=self.type1.T.copy(),
            type2=self.type2.T.copy(),
        )


def _sweep_cell(args) -> tuple[int, int, int, int]:
    (px, py, seed, stream, row, col, n, m, trials, pi) = args
    base = RandomSource(seed, stream)
    rejects_null = 0
    accepts_alt = 0
    for trial in range(trials):
        gen = base.fork(row, col, trial).generator()
        cx = gen.multinomial(n, px)
        cy = gen.multinomial(n, py)
        cz0 = gen.multinomial(m, px)
        cz1 = gen.multinomial(m, py)
        if _reject_from_counts(cx, cy, cz0, n, m, pi):
            rejects_null += 1
        if not _reject_from_counts(cx, cy, cz1, n, m, pi):
            accepts_alt += 1
    return row, col, rejects_null, accepts_alt


def tradeoff_sweep(
    instance: ToyInstance,
    m_grid,
    n_grid,
    trials: int,
    pi: float,
    rng: RandomSource,
    workers: int = 1,
) -> ErrorGrid:
    """Estimate total error per (m, n) cell on the toy instance.

    Each trial draws simulator samples of size n from both laws and one test
    sample of size m under each hypothesis (the alternative places the test
    law at the signal law), then runs the threshold test.  Type I counts
    rejections under the null, type II acceptances under the alternative.
    """
    m_values = np.asarray(list(m_grid), dtype=np.int64)
    n_values = np.asarray(list(n_grid), dtype=np.int64)
    if m_values.size == 0 or n_values.size == 0:
        raise DataError("grids must be nonempty")
    if trials < 1:
        raise DataError("need at least one trial per cell")

    tasks = []
    for i, m in enumerate(m_values):
        for j, n in enumerate(n_values):
            if n < 2:
                continue
            tasks.append(
                (instance.px.pmf, instance.py.pmf, rng.seed, rng.stream,
                 i, j, int(n), int(m), trials, pi)
            )

    shape = (m_values.size, n_values.size)
    cell_trials = np.zeros(shape, dtype=np.int64)
    type1 = np.full(shape, np.nan)
    type2 = np.full(shape, np.nan)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_cell, tasks, chunksize=1))
    else:
        results = [_sweep_cell(t) for t in tasks]

    for row, col, rej0, acc1 in results:
        cell_trials[row, col] = trials
        type1[row, col] = rej0 / trials
        type2[row, col] = acc1 / trials
    return ErrorGrid(m_values, n_values, cell_trials, type1, type2)


def extract_contour(grid: ErrorGrid, level: float) -> np.ndarray:
    """Level crossing of the total error, one point per m with a crossing.

    Within each m row the first downward crossing of ``level`` along
    increasing n is interpolated linearly in log n; rows that never cross
    are omitted.  Returns an array of (m, n_at_level) pairs.
    """
    if not 0.0 < level < 1.0:
        raise DataError("contour level must lie in (0, 1)")
    points = []
    total = grid.total
    for i, m in enumerate(grid.m_values):
        n_star = _cross_in_log(grid.n_values, total[i], level)
        if n_star is not None:
            points.append((float(m), n_star))
    return np.array(points).reshape(-1, 2)


def _cross_in_log(xs: np.ndarray, values: np.ndarray, level: float) -> float | None:
    for j in range(len(xs) - 1):
        a, b = values[j], values[j + 1]
        if np.isnan(a) or np.isnan(b):
            continue
        if a >= level > b:
            frac = (a - level) / (a - b)
            log_x = math.log(xs[j]) + frac * (math.log(xs[j + 1]) - math.log(xs[j]))
            return math.exp(log_x)
    return None


@dataclass(frozen=True)
class AsymmetryReport:
    """Quantified asymmetry of a contour under swapping m and n.

    ``log_gap`` is |ln n*(m_ref) - ln m*(n_ref)|; the tolerance is three times
    the combined interpolation uncertainty (half the bracketing grid interval
    in log space per crossing).  A crossing that exists in one direction but
    not the other is reported as asymmetric with an infinite gap.
    """

    n_at_m: float | None
    m_at_n: float | None
    log_gap: float
    log_tolerance: float
    asymmetric: bool


def contour_asymmetry(
    grid: ErrorGrid, level: float, m_ref: int, n_ref: int
) -> AsymmetryReport:
    n_at_m = _ref_crossing(grid, level, m_ref)
    m_at_n = _ref_crossing(grid.transpose(), level, n_ref)
    widths = []
    for value, axis in ((n_at_m, grid.n_values), (m_at_n, grid.m_values)):
        if value is not None:
            widths.append(_bracket_width(axis, value))
    tol = 3.0 * sum(w / 2.0 for w in widths)
    if n_at_m is None and m_at_n is None:
        return AsymmetryReport(None, None, float("nan"), tol, False)
    if n_at_m is None or m_at_n is None:
        return AsymmetryReport(n_at_m, m_at_n, float("inf"), tol, True)
    gap = abs(math.log(n_at_m) - math.log(m_at_n))
    return AsymmetryReport(n_at_m, m_at_n, gap, tol, gap > tol)


def _ref_crossing(grid: ErrorGrid, level: float, ref: int) -> float | None:
    rows = np.where(grid.m_values == ref)[0]
    if rows.size == 0:
        raise DataError(f"reference value {ref} is not on the grid")
    return _cross_in_log(grid.n_values, grid.total[rows[0]], level)


def _bracket_width(axis: np.ndarray, value: float) -> float:
    logs = np.log(axis.astype(np.float64))
    pos = np.searchsorted(logs, math.log(value))
    lo = max(pos - 1, 0)
    hi = min(pos, logs.size - 1)
    if lo == hi:
        return 0.0
    return float(logs[hi] - logs[lo])


def power_curve(
    instance: ToyInstance,
    nu_grid,
    m: int,
    n: int,
    trials: int,
    pi: float,
    rng: RandomSource,
) -> list[tuple[float, float, float]]:
    """Rejection rate of the threshold test against mixture rates.

    The test sample follows (1 - nu) P_X + nu P_Y; returns (nu, rate, se)
    rows.  The rate is non-decreasing in nu up to Monte Carlo noise.
    """
    rows = []
    for idx, nu in enumerate(nu_grid):
        pz = instance.px.mixed_with(instance.py, float(nu))
        rejects = 0
        for trial in range(trials):
            gen = rng.fork(idx, trial).generator()
            cx = gen.multinomial(n, instance.px.pmf)
            cy = gen.multinomial(n, instance.py.pmf)
            cz = gen.multinomial(m, pz.pmf)
            if _reject_from_counts(cx, cy, cz, n, m, pi):
                rejects += 1
        rate = rejects / trials
        rows.append((float(nu), rate, math.sqrt(rate * (1.0 - rate) / trials)))
    return rows


# ---------------------------------------------------------------------------
# delimited output
# ---------------------------------------------------------------------------


def grid_to_csv(grid: ErrorGrid) -> str:
    lines = ["m,n,trials,type1,type2,total,se"]
    se = grid.se
    total = grid.total
    for i, m in enumerate(grid.m_values):
        for j, n in enumerate(grid.n_values):
            lines.append(
                f"{m},{n},{grid.trials[i, j]},{grid.type1[i, j]:.10g},"
                f"{grid.type2[i, j]:.10g},{total[i, j]:.10g},{se[i, j]:.10g}"
            )
    return "\n".join(lines) + "\n"


def contour_to_csv(points: np.ndarray) -> str:
    lines = ["m,n_at_level"]
    for m, n_star in points:
        lines.append(f"{m:.10g},{n_star:.10g}")
    return "\n".join(lines) + "\n"


def save_grid(grid: ErrorGrid, path: str | Path) -> None:
    Path(path).write_text(grid_to_csv(grid))


def save_contour(points: np.ndarray, path: str | Path) -> None:
    Path(path).write_text(contour_to_csv(points))
