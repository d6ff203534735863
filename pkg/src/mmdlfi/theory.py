"""Closed-form sample-complexity planners and exact statistic moments.

The bound calculators set every unnamed universal constant to 1 and say so in
their output: they are order-of-magnitude planning tools, not guarantees.
Logarithms are natural throughout.

For discrete instances on a finite support the mean and variance of the
centered decision statistic (threshold minus cross statistic) are computed
exactly from the kernel's spectral decomposition, by summing the variances of
the five constituent pair sums and their ten covariances with the exact
combinatorial coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DiscreteDistribution
from .kernels import SpectralDecomposition

__all__ = [
    "ProblemParams",
    "BoundResult",
    "LowerBoundResult",
    "LambdaNorms",
    "lambda_norms",
    "upper_bound_planner",
    "lower_bound_planner",
    "jstar_certified",
    "exact_moments_discrete",
    "mean_direct_discrete",
]

CONSTANT_CAVEAT = "universal constants set to 1; treat as order-of-magnitude guidance"


class TheoryError(ValueError):
    """Invalid planner inputs."""


@dataclass(frozen=True)
class ProblemParams:
    """Problem description for the sample-complexity planners.

    c_density   -- bound on the mu-densities of all three distributions
    epsilon     -- guaranteed MMD separation of the two simulator laws
    delta       -- smallest signal rate counted as a discovery, in (0, 1]
    r_misspec   -- allowed off-segment misspecification radius (relative)
    alpha       -- target total error (type I + type II)
    """

    c_density: float
    epsilon: float
    delta: float
    alpha: float
    r_misspec: float = 0.0

    def __post_init__(self):
        if self.c_density <= 0:
            raise TheoryError("density bound must be positive")
        if self.epsilon <= 0:
            raise TheoryError("separation epsilon must be positive")
        if not 0.0 < self.delta <= 1.0:
            raise TheoryError("signal rate delta must lie in (0, 1]")
        if not 0.0 < self.alpha < 1.0:
            raise TheoryError("error target alpha must lie in (0, 1)")
        if self.r_misspec < 0:
            raise TheoryError("misspecification radius must be non-negative")


@dataclass(frozen=True)
class LambdaNorms:
    sup: float          # largest eigenvalue
    l2: float           # sqrt(sum of all squared eigenvalues)
    l2_tail: float      # sqrt(sum_{j=2..J} lambda_j^2)
    truncated: bool     # J exceeded the spectrum length and was clipped


def lambda_norms(spec: SpectralDecomposition, j: int) -> LambdaNorms:
    """Sup norm, full l2 norm and the tail norm over eigenvalues 2..j."""
    if j < 2:
        raise TheoryError("tail norm needs j >= 2")
    lam = spec.eigenvalues
    truncated = j > lam.size
    j_eff = min(j, lam.size)
    return LambdaNorms(
        sup=float(lam[0]),
        l2=float(np.sqrt(np.sum(lam**2))),
        l2_tail=float(np.sqrt(np.sum(lam[1:j_eff] ** 2))),
        truncated=truncated,
    )


@dataclass(frozen=True)
class BoundResult:
    """Joint sufficient sample sizes for the threshold test (constants = 1)."""

    min_m_n: float          # required value of min{m, n}
    min_n_sqrt_nm: float    # required value of min{n, sqrt(n m)}
    constant_caveat: str = CONSTANT_CAVEAT


def upper_bound_planner(p: ProblemParams, spec: SpectralDecomposition) -> BoundResult:
    """Sufficient sample sizes: the test succeeds at total error alpha once

        min{m, n}        >= C lambda_sup log(1/alpha) ((1 + R) / (eps delta))^2
        min{n, sqrt(nm)} >= C ||lambda||_2 log(1/alpha) / (delta eps^2).
    """
    norms = lambda_norms(spec, j=2)
    log_term = float(np.log(1.0 / p.alpha))
    first = (
        p.c_density
        * norms.sup
        * log_term
        * ((1.0 + p.r_misspec) / (p.epsilon * p.delta)) ** 2
    )
    second = p.c_density * norms.l2 * log_term / (p.delta * p.epsilon**2)
    return BoundResult(first, second)


@dataclass(frozen=True)
class LowerBoundResult:
    """Necessary sample sizes for any test (constants = 1).

    ``mixed_min`` is the required value of delta * m + sqrt(m n).
    ``top_eigenfunction_constant`` reports the numerical check that the kernel's
    row integrals are constant (a precondition of the bound); it is reported,
    not enforced.
    """

    m_min: float
    n_min: float
    mixed_min: float
    top_eigenfunction_constant: bool
    constant_caveat: str = CONSTANT_CAVEAT


def lower_bound_planner(
    p: ProblemParams, spec: SpectralDecomposition, j: int
) -> LowerBoundResult:
    """Necessary sample sizes:

        m              >= lambda_2 log(1/alpha) / (eps^2 delta^2)
        n              >= ||lambda||_{2J} sqrt(log(1/alpha)) / eps^2
        delta m + sqrt(m n) >= ||lambda||_{2J} sqrt(log(1/alpha)) / (eps^2 delta).
    """
    norms = lambda_norms(spec, j)
    lam = spec.eigenvalues
    lam2 = float(lam[1]) if lam.size >= 2 else 0.0
    log_term = float(np.log(1.0 / p.alpha))
    m_min = lam2 * log_term / (p.epsilon**2 * p.delta**2)
    n_min = norms.l2_tail * np.sqrt(log_term) / p.epsilon**2
    mixed = norms.l2_tail * np.sqrt(log_term) / (p.epsilon**2 * p.delta)
    row_integrals = spec.reconstruct() @ spec.mu
    constant_top = bool(
        np.all(np.abs(row_integrals - lam[0]) <= 1e-8 * max(1.0, abs(lam[0])))
    )
    return LowerBoundResult(float(m_min), float(n_min), float(mixed), constant_top)


def jstar_certified(spec: SpectralDecomposition, epsilon: float) -> int:
    """Largest truncation level J >= 2 with 2 eps sqrt(J - 1) <= ||lambda||_{2J}.

    Certifies that the lower-bound perturbations up to level J stay valid
    densities.  Returns 1 when no level qualifies.
    """
    if epsilon <= 0:
        raise TheoryError("epsilon must be positive")
    lam = spec.eigenvalues
    best = 1
    tail_sq = 0.0
    for j in range(2, lam.size + 1):
        tail_sq += float(lam[j - 1] ** 2)
        if 2.0 * epsilon * np.sqrt(j - 1) <= np.sqrt(tail_sq):
            best = j
    return best


# ---------------------------------------------------------------------------
# exact moments of (threshold - statistic) for discrete instances
# ---------------------------------------------------------------------------


def _second_moments(spec: SpectralDecomposition, dist: DiscreteDistribution):
    first = spec.coefficients(dist.pmf)       # <p e_l>
    second = spec.pair_coefficients(dist.pmf)  # <p e_l e_l'>
    return first, second


def exact_moments_discrete(
    px: DiscreteDistribution,
    py: DiscreteDistribution,
    pz: DiscreteDistribution,
    spec: SpectralDecomposition,
    n: int,
    m: int,
    pi: float,
) -> tuple[float, float]:
    """Exact mean and variance of ``gamma_threshold - t_statistic``.

    The mean equals ``(pi - nu) * MMD^2(P_X, P_Y)`` where ``nu`` is the
    projection of the test law onto the segment between the simulator laws.
    The variance is the exact fifteen-term sum over the five pair sums
    (cross blocks X-Z, Y-Z, X-X, Y-Y, X-Y) and their covariances.
    """
    if n < 2 or m < 2:
        raise TheoryError("moment formulas need n >= 2 and m >= 2")
    if not (px.k == py.k == pz.k == spec.size):
        raise TheoryError("distributions and spectrum must share one support")
    lam = spec.eigenvalues

    x, x2 = _second_moments(spec, px)
    y, y2 = _second_moments(spec, py)
    z, z2 = _second_moments(spec, pz)

    mmd_sq = float(np.sum(lam * (x - y) ** 2))
    if mmd_sq > 0:
        nu = float(np.sum(lam * (z - x) * (y - x)) / mmd_sq)
    else:
        nu = 0.0
    mean = (pi - nu) * mmd_sq

    ux, uy, uz = lam * x, lam * y, lam * z
    cx = x2 - np.outer(x, x)   # centered second moments
    cy = y2 - np.outer(y, y)
    cz = z2 - np.outer(z, z)

    def quad(u, c, v):
        return float(u @ c @ v)

    def hadamard(a2, b2):
        return float(lam @ (a2 * b2) @ lam)

    s_xz = float(np.sum(ux * z))
    s_yz = float(np.sum(uy * z))
    s_xy = float(np.sum(ux * y))
    s_xx = float(np.sum(ux * x))
    s_yy = float(np.sum(uy * y))

    # variances of the raw pair sums
    var_i = (
        n * (n - 1) * m * quad(ux, cz, ux)
        + n * m * (m - 1) * quad(uz, cx, uz)
        + n * m * (hadamard(x2, z2) - s_xz**2)
    )
    var_ii = (
        n * (n - 1) * m * quad(uy, cz, uy)
        + n * m * (m - 1) * quad(uz, cy, uz)
        + n * m * (hadamard(y2, z2) - s_yz**2)
    )
    pairs = n * (n - 1) / 2.0
    var_iii = pairs * (hadamard(x2, x2) - s_xx**2) + n * (n - 1) * (n - 2) * quad(
        ux, cx, ux
    )
    var_iv = pairs * (hadamard(y2, y2) - s_yy**2) + n * (n - 1) * (n - 2) * quad(
        uy, cy, uy
    )
    var_v = (
        n**2 * (n - 1) * (quad(ux, cy, ux) + quad(uy, cx, uy))
        + n**2 * (hadamard(x2, y2) - s_xy**2)
    )

    # covariances between pair sums sharing a sample (the rest vanish)
    cov_i_ii = n**2 * m * quad(ux, cz, uy)
    cov_i_iii = n * (n - 1) * m * quad(uz, cx, ux)
    cov_i_v = n**2 * m * quad(uz, cx, uy)
    cov_ii_iv = n * (n - 1) * m * quad(uz, cy, uy)
    cov_ii_v = n**2 * m * quad(uz, cy, ux)
    cov_iii_v = n**2 * (n - 1) * quad(ux, cx, uy)
    cov_iv_v = n**2 * (n - 1) * quad(uy, cy, ux)

    pibar = 1.0 - pi
    a_i = 1.0 / (n * m)
    a_ii = -1.0 / (n * m)
    a_iii = -2.0 * pibar / (n * (n - 1))
    a_iv = 2.0 * pi / (n * (n - 1))
    a_v = (pibar - pi) / n**2

    variance = (
        a_i**2 * var_i
        + a_ii**2 * var_ii
        + a_iii**2 * var_iii
        + a_iv**2 * var_iv
        + a_v**2 * var_v
        + 2.0 * a_i * a_ii * cov_i_ii
        + 2.0 * a_i * a_iii * cov_i_iii
        + 2.0 * a_i * a_v * cov_i_v
        + 2.0 * a_ii * a_iv * cov_ii_iv
        + 2.0 * a_ii * a_v * cov_ii_v
        + 2.0 * a_iii * a_v * cov_iii_v
        + 2.0 * a_iv * a_v * cov_iv_v
    )
    return float(mean), float(variance)


def mean_direct_discrete(
    px: DiscreteDistribution,
    py: DiscreteDistribution,
    pz: DiscreteDistribution,
    kernel_matrix: np.ndarray,
    pi: float,
) -> float:
    """Second closed form of the mean, straight from pmf contractions:

        E[gamma - T] = px' K pz - py' K pz - (1 - pi) px' K px
                       + pi py' K py + (1 - 2 pi) px' K py.

    Independent of any eigendecomposition; used to cross-check the spectral
    route.
    """
    k = np.asarray(kernel_matrix, dtype=np.float64)
    vx, vy, vz = px.pmf, py.pmf, pz.pmf
    return float(
        vx @ k @ vz
        - vy @ k @ vz
        - (1.0 - pi) * (vx @ k @ vx)
        + pi * (vy @ k @ vy)
        + (1.0 - 2.0 * pi) * (vx @ k @ vy)
    )
