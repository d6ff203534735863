"""The threshold test, null calibration, p-values and discovery significances.

Calibration follows the subsampling scheme: the statistic is recomputed on
repeated without-replacement draws from held-out null data, giving an
empirical null distribution from which p-values are read off.  Significances
come either from a normal approximation of the score distribution or, for
thresholded (0/1) scores, from an exact binomial tail evaluated in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import gammaln, ndtr, ndtri_exp

from .data import RandomSource, Sample
from .kernels import Kernel
from .stats import gamma_threshold, t_statistic, witness_scores

__all__ = [
    "TestDecision",
    "CalibrationTable",
    "psi_test",
    "calibrate_null",
    "estimate_p_value",
    "optimize_threshold",
    "significance_gaussian",
    "significance_binomial",
    "gaussian_error_rates",
    "boosted_test",
    "required_batches",
    "save_calibration",
    "load_calibration",
    "SIGNIFICANCE_CAP",
]

# double precision limit of the inverse normal CDF; larger magnitudes saturate
SIGNIFICANCE_CAP = 38.5


class CalibrationError(ValueError):
    """Calibration preconditions violated."""


class InferenceError(ValueError):
    """Invalid inference inputs."""


@dataclass(frozen=True)
class TestDecision:
    """Outcome of the threshold test; rejects when statistic >= threshold."""

    statistic: float
    threshold: float
    reject: bool
    pi: float


def psi_test(x: Sample, y: Sample, z: Sample, pi: float, kernel: Kernel) -> TestDecision:
    """Run the projection test: reject when the cross statistic reaches the
    data-dependent threshold.  Ties reject."""
    stat = t_statistic(x, y, z, kernel)
    thr = gamma_threshold(x, y, pi, kernel)
    return TestDecision(statistic=stat, threshold=thr, reject=stat >= thr, pi=pi)


@dataclass(frozen=True)
class CalibrationTable:
    """Empirical null distribution of the statistic plus score moments.

    ``draws`` holds the statistic values of the null resamples; ``theta0`` /
    ``sigma0`` are the mean and standard deviation of the witness scores on
    null calibration points, ``theta1`` the score mean on signal calibration
    points (NaN when no signal calibration sample was supplied).
    """

    draws: np.ndarray
    m: int
    theta0: float
    theta1: float
    sigma0: float

    def __post_init__(self):
        draws = np.asarray(self.draws, dtype=np.float64)
        if draws.ndim != 1 or draws.size < 1:
            raise CalibrationError("calibration table needs at least one draw")
        draws = draws.copy()
        draws.setflags(write=False)
        object.__setattr__(self, "draws", draws)

    @property
    def k(self) -> int:
        return self.draws.size


def _rows_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    seen = {row.tobytes() for row in np.ascontiguousarray(a)}
    return any(row.tobytes() in seen for row in np.ascontiguousarray(b))


def calibrate_null(
    x_cal: Sample,
    x_ev: Sample,
    y_ev: Sample,
    m: int,
    k: int,
    kernel: Kernel,
    rng: RandomSource,
    y_cal: Sample | None = None,
    allow_overlap: bool = False,
) -> CalibrationTable:
    """Null calibration by subsampling held-out data.

    Repetition ``r`` draws ``m`` positions of ``x_cal`` without replacement
    (fresh independent draw each time, overlaps across repetitions allowed)
    and records the statistic against the evaluation samples.  Because the
    statistic is additive over the test points, each draw is the mean of
    precomputed per-point witness scores.

    ``x_cal`` must be held out from the evaluation data; for real-vector
    samples an exact duplicate-row check enforces this unless
    ``allow_overlap`` is set (categorical samples share values by nature and
    are not checked -- build splits through ``DatasetSplit.from_pools``).
    """
    if k < 1:
        raise CalibrationError("need at least one calibration repetition")
    if m < 1:
        raise CalibrationError("subsample size must be at least 1")
    if m > x_cal.size:
        raise CalibrationError(
            f"insufficient calibration data: m={m} exceeds |x_cal|={x_cal.size}"
        )
    if not allow_overlap and x_cal.kind == "real":
        if _rows_overlap(x_cal.points, x_ev.points) or _rows_overlap(
            x_cal.points, y_ev.points
        ):
            raise CalibrationError(
                "calibration points duplicate evaluation points; pass "
                "allow_overlap=True to override"
            )

    scores = witness_scores(x_cal, x_ev, y_ev, kernel)
    draws = np.empty(k)
    for r in range(k):
        gen = rng.fork(r).generator()
        pos = gen.choice(x_cal.size, size=m, replace=False, shuffle=False)
        draws[r] = scores[pos].mean()

    theta0 = float(scores.mean())
    sigma0 = float(scores.std(ddof=1)) if scores.size > 1 else 0.0
    if y_cal is not None:
        theta1 = float(witness_scores(y_cal, x_ev, y_ev, kernel).mean())
    else:
        theta1 = float("nan")
    return CalibrationTable(draws=draws, m=m, theta0=theta0, theta1=theta1, sigma0=sigma0)


def estimate_p_value(t_hat: float, table: CalibrationTable, smoothed: bool = False) -> float:
    """Empirical p-value of an observed statistic against the null table.

    Unsmoothed: fraction of null draws strictly above the observation (an
    unbiased estimate, but it can return 0).  Smoothed: add-one correction
    ``(1 + #{draws >= t}) / (k + 1)``, always strictly inside (0, 1].
    """
    k = table.k
    if smoothed:
        return float((1 + np.sum(t_hat <= table.draws)) / (k + 1))
    return float(np.sum(t_hat < table.draws) / k)


def optimize_threshold(
    x_opt: Sample, y_opt: Sample, x_ev: Sample, y_ev: Sample, kernel: Kernel
) -> float:
    """Best score threshold for the indicator statistic 1{score > t}.

    Scans every observed witness score as a candidate, scoring each by the
    normal-approximation significance (TP + TN - 1) / sqrt(TN (1 - TN)); the
    ``x_opt`` / ``y_opt`` points must be disjoint from evaluation and
    calibration data.
    """
    scores0 = witness_scores(x_opt, x_ev, y_ev, kernel)
    scores1 = witness_scores(y_opt, x_ev, y_ev, kernel)
    return threshold_scan(scores0, scores1)


def threshold_scan(scores0: np.ndarray, scores1: np.ndarray) -> float:
    """Threshold search on raw score arrays (null scores, signal scores).

    Candidates with a degenerate true-negative rate (0 or 1) are skipped;
    ties prefer the smaller threshold.
    """
    scores0 = np.asarray(scores0, dtype=np.float64)
    scores1 = np.asarray(scores1, dtype=np.float64)
    candidates = np.sort(np.concatenate([scores0, scores1]))
    best_t = None
    best_val = -np.inf
    for t in candidates:
        tn = float(np.mean(scores0 < t))
        if tn <= 0.0 or tn >= 1.0:
            continue
        tp = float(np.mean(scores1 > t))
        val = (tp + tn - 1.0) / math.sqrt(tn * (1.0 - tn))
        if val > best_val:
            best_val = val
            best_t = float(t)
    if best_t is None:
        raise InferenceError("all threshold candidates are degenerate")
    return best_t


def significance_gaussian(t_hat: float, m: int, table: CalibrationTable) -> float:
    """Normal-approximation discovery significance (t - theta0) / (sigma0 / sqrt(m))."""
    if m < 1:
        raise InferenceError("test sample size must be at least 1")
    if not table.sigma0 > 0:
        raise InferenceError("null score deviation is zero; significance undefined")
    return float((t_hat - table.theta0) / (table.sigma0 / math.sqrt(m)))


def _log_binomial_mass_sum(lo: int, hi: int, m: int, theta: float) -> float:
    """log sum_{i=lo..hi} P(Bin(m, theta) = i), accumulated in log space."""
    if lo > hi:
        return -math.inf
    i = np.arange(lo, hi + 1)
    log_terms = (
        gammaln(m + 1)
        - gammaln(i + 1)
        - gammaln(m - i + 1)
        + i * math.log(theta)
        + (m - i) * math.log1p(-theta)
    )
    peak = log_terms.max()
    return float(min(peak + math.log(np.sum(np.exp(log_terms - peak))), 0.0))


def log_binomial_cdf(count: int, m: int, theta: float) -> float:
    """log P(Bin(m, theta) <= count), summed stably in log space."""
    if not 0 <= count <= m:
        raise InferenceError(f"count {count} outside 0..{m}")
    if not 0.0 < theta < 1.0:
        raise InferenceError("success probability must lie strictly in (0, 1)")
    return _log_binomial_mass_sum(0, count, m, theta)


def log_binomial_sf(count: int, m: int, theta: float) -> float:
    """log P(Bin(m, theta) > count), summed stably in log space."""
    if not 0 <= count <= m:
        raise InferenceError(f"count {count} outside 0..{m}")
    if not 0.0 < theta < 1.0:
        raise InferenceError("success probability must lie strictly in (0, 1)")
    return _log_binomial_mass_sum(count + 1, m, m, theta)


def significance_binomial(t_hat_count: int, m: int, theta0: float) -> float:
    """Binomial-tail discovery significance for thresholded scores.

    Maps the exact null CDF of the success count through the inverse normal
    CDF.  Both tails are evaluated in log space (the upper tail through the
    survival function), so the result keeps full relative precision far
    beyond where a linear-space CDF rounds to 0 or 1.  Saturated values are
    clamped at +/-SIGNIFICANCE_CAP (the double precision limit of the
    inverse normal).
    """
    log_p = log_binomial_cdf(t_hat_count, m, theta0)
    if log_p <= math.log(0.5):
        z = float(ndtri_exp(log_p))
    else:
        z = -float(ndtri_exp(log_binomial_sf(t_hat_count, m, theta0)))
    if math.isnan(z):
        raise InferenceError("binomial significance is undefined for these inputs")
    return float(np.clip(z, -SIGNIFICANCE_CAP, SIGNIFICANCE_CAP))


def gaussian_error_rates(
    gamma: float, cal: CalibrationTable, var0: float, var1: float, m: int
) -> tuple[float, float]:
    """Normal-approximation error probabilities of thresholding the score mean
    at ``gamma`` with ``m`` test points:

        type I  = Phi(-(gamma - theta0) / sqrt(var0 / m))
        type II = Phi(-(theta1 - gamma) / sqrt(var1 / m)).
    """
    if var0 <= 0 or var1 <= 0:
        raise InferenceError("score variances must be positive")
    if math.isnan(cal.theta1):
        raise InferenceError("calibration table lacks signal scores (theta1)")
    type1 = float(ndtr(-(gamma - cal.theta0) / math.sqrt(var0 / m)))
    type2 = float(ndtr(-(cal.theta1 - gamma) / math.sqrt(var1 / m)))
    return type1, type2


def required_batches(alpha: float) -> int:
    """Batches needed to boost a total-error-1/3 test down to error alpha."""
    if not 0.0 < alpha < 1.0:
        raise InferenceError("alpha must lie in (0, 1)")
    return math.ceil(18.0 * math.log(2.0 / alpha))


def boosted_test(
    base: Callable[[int], bool], alpha: float, n_batches: int | None = None
) -> bool:
    """Majority vote over independent runs of a weak test.

    ``base(j)`` must run the test on the j-th disjoint data batch and return
    its decision.  Provided the base test has total error at most 1/3 per
    batch and ``n_batches >= required_batches(alpha)``, the majority decision
    has total error at most ``alpha``.
    """
    need = required_batches(alpha)
    if n_batches is None:
        n_batches = need
    if n_batches < need:
        raise InferenceError(
            f"insufficient batches: got {n_batches}, boosting to alpha={alpha} "
            f"needs {need}"
        )
    votes = sum(bool(base(j)) for j in range(n_batches))
    return votes / n_batches >= 0.5


# ---------------------------------------------------------------------------
# text serialization: header (k, m, theta0, theta1, sigma0), one draw per line
# ---------------------------------------------------------------------------

_MAGIC = "# mmdlfi calibration v1"


def save_calibration(table: CalibrationTable, path: str | Path) -> None:
    lines = [
        _MAGIC,
        f"k = {table.k}",
        f"m = {table.m}",
        f"theta0 = {float(table.theta0)!r}",
        f"theta1 = {float(table.theta1)!r}",
        f"sigma0 = {float(table.sigma0)!r}",
    ]
    lines.extend(repr(float(v)) for v in table.draws)
    Path(path).write_text("\n".join(lines) + "\n")


def load_calibration(path: str | Path) -> CalibrationTable:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != _MAGIC:
        raise CalibrationError(f"{path}: not a calibration file")
    fields: dict[str, str] = {}
    draws: list[float] = []
    for line in lines[1:]:
        line = line.strip()
        if not line:
            continue
        if "=" in line:
            key, _, val = line.partition("=")
            fields[key.strip()] = val.strip()
        else:
            draws.append(float(line))
    table = CalibrationTable(
        draws=np.array(draws),
        m=int(fields["m"]),
        theta0=float(fields["theta0"]),
        theta1=float(fields["theta1"]),
        sigma0=float(fields["sigma0"]),
    )
    if table.k != int(fields["k"]):
        raise CalibrationError(f"{path}: header k={fields['k']} but {table.k} draws")
    return table
