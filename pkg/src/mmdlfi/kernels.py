"""Kernels, Gram evaluation, spectral decompositions and trainable architectures.

All kernels are symmetric and positive semidefinite.  The trainable family
keeps its constrained parameters in an unconstrained reparameterization
(bandwidths as logs, the mixing weight as a logistic preimage) so that the
optimizer in :mod:`mmdlfi.training` can work on a flat parameter vector.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import RandomSource, Sample

__all__ = [
    "Kernel",
    "DiscreteIdentity",
    "Gaussian",
    "ProductWitness",
    "Scaled",
    "FeatureNet",
    "DeepO",
    "DeepG",
    "DeepM",
    "SpectralDecomposition",
    "eigendecompose",
    "median_heuristic",
    "save_kernel",
    "load_kernel",
]


class KernelError(ValueError):
    """Kernel evaluation or construction failure."""


def _points(sample_or_array, kind: str) -> np.ndarray:
    if isinstance(sample_or_array, Sample):
        if sample_or_array.kind != kind:
            raise KernelError(
                f"kernel expects {kind} points, got {sample_or_array.kind}"
            )
        return sample_or_array.points
    arr = np.asarray(sample_or_array)
    if kind == "real":
        return np.atleast_2d(np.asarray(arr, dtype=np.float64))
    return np.atleast_1d(np.asarray(arr, dtype=np.int64))


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise squared euclidean distances, clipped at 0 against rounding."""
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    d = aa + bb - 2.0 * (a @ b.T)
    return np.maximum(d, 0.0)


class Kernel:
    """Base kernel: subclasses provide vectorized ``gram``."""

    point_kind = "real"

    def gram(self, a, b) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x, y) -> float:
        """Single evaluation K(x, y)."""
        xa = _points(x, self.point_kind)
        yb = _points(y, self.point_kind)
        return float(self.gram(xa, yb)[0, 0])

    # trainable-parameter protocol; frozen kernels expose an empty vector
    def param_vector(self) -> np.ndarray:
        return np.zeros(0)

    def set_param_vector(self, vec: np.ndarray) -> None:
        if np.asarray(vec).size:
            raise KernelError("kernel has no trainable parameters")

    def grad_params(self, a, b, dk: np.ndarray) -> np.ndarray:
        """Gradient of ``sum(dk * gram(a, b))`` w.r.t. the parameter vector."""
        return np.zeros(0)


@dataclass
class DiscreteIdentity(Kernel):
    """Indicator kernel on the categories ``1..k``: K(x, y) = 1{x = y}."""

    k: int
    point_kind: str = field(default="categorical", init=False, repr=False)

    def __post_init__(self):
        if self.k < 1:
            raise KernelError("support size must be at least 1")

    def gram(self, a, b) -> np.ndarray:
        ia = _points(a, "categorical")
        ib = _points(b, "categorical")
        return (ia[:, None] == ib[None, :]).astype(np.float64)

    def matrix(self) -> np.ndarray:
        """The k-by-k kernel matrix on the full support."""
        return np.eye(self.k)


@dataclass
class Gaussian(Kernel):
    """Gaussian kernel exp(-||x - y||^2 / sigma^2).

    ``normalized`` switches on the ``sigma**(-d)`` prefactor; it rescales all
    statistics by a constant and leaves test decisions unchanged.
    """

    sigma: float
    normalized: bool = False

    def __post_init__(self):
        if self.sigma <= 0:
            raise KernelError("bandwidth must be positive")

    def gram(self, a, b) -> np.ndarray:
        xa = _points(a, "real")
        xb = _points(b, "real")
        g = np.exp(-_sqdist(xa, xb) / self.sigma**2)
        if self.normalized:
            g *= self.sigma ** (-xa.shape[1])
        return g


@dataclass
class ProductWitness(Kernel):
    """Rank-one kernel K(x, y) = f(x) f(y) for a fixed witness function ``f``.

    ``f`` receives the raw point array of a batch -- ``(n, d)`` floats or
    ``(n,)`` category indices -- and returns one score per point.
    """

    f: Callable[[np.ndarray], np.ndarray]
    point_kind: str = "real"

    def scores(self, a) -> np.ndarray:
        pts = _points(a, self.point_kind)
        out = np.asarray(self.f(pts), dtype=np.float64).reshape(-1)
        if out.shape[0] != pts.shape[0]:
            raise KernelError("witness function must return one value per point")
        return out

    def gram(self, a, b) -> np.ndarray:
        return np.outer(self.scores(a), self.scores(b))


@dataclass
class Scaled(Kernel):
    """``factor * base`` for a positive factor; used for scale-invariance checks."""

    base: Kernel
    factor: float

    def __post_init__(self):
        if self.factor <= 0:
            raise KernelError("scale factor must be positive")
        self.point_kind = self.base.point_kind

    def gram(self, a, b) -> np.ndarray:
        return self.factor * self.base.gram(a, b)


# ---------------------------------------------------------------------------
# feature networks and the trainable deep kernels
# ---------------------------------------------------------------------------


class FeatureNet:
    """Fully connected rectifier network; hidden layers ReLU, output linear."""

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        for w, b in zip(self.weights, self.biases):
            if w.shape[0] != b.shape[0]:
                raise KernelError("weight/bias shape mismatch")

    @classmethod
    def initialize(cls, widths: Sequence[int], rng: RandomSource) -> "FeatureNet":
        """Symmetric-uniform init scaled by fan-in; ``widths[0]`` is the input dim."""
        if len(widths) < 2:
            raise KernelError("a feature net needs at least input and output widths")
        gen = rng.generator()
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(gen.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(gen.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases)

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def param_vector(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def set_param_vector(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = vec[pos : pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[i] = vec[pos : pos + b.size].copy()
            pos += b.size
        if pos != vec.size:
            raise KernelError(f"parameter vector has {vec.size} entries, need {pos}")

    def forward(self, x: np.ndarray) -> np.ndarray:
        z = np.asarray(x, dtype=np.float64)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = z @ w.T + b
            if i < last:
                z = np.maximum(z, 0.0)
        return z

    def forward_cached(self, x: np.ndarray):
        """Forward pass keeping layer inputs and pre-activations for backprop."""
        z = np.asarray(x, dtype=np.float64)
        inputs, preacts = [], []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(z)
            a = z @ w.T + b
            preacts.append(a)
            z = np.maximum(a, 0.0) if i < last else a
        return z, (inputs, preacts)

    def backward(self, cache, grad_out: np.ndarray) -> np.ndarray:
        """Parameter gradient of ``sum(grad_out * forward(x))``; layout matches
        :meth:`param_vector`."""
        inputs, preacts = cache
        last = len(self.weights) - 1
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        g = np.asarray(grad_out, dtype=np.float64)
        for i in range(last, -1, -1):
            if i < last:
                g = g * (preacts[i] > 0.0)
            grads_w[i] = g.T @ inputs[i]
            grads_b[i] = g.sum(axis=0)
            if i > 0:
                g = g @ self.weights[i]
        parts = []
        for gw, gb in zip(grads_w, grads_b):
            parts.append(gw.ravel())
            parts.append(gb.ravel())
        return np.concatenate(parts)

    def copy(self) -> "FeatureNet":
        return FeatureNet([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def _sigmoid(t: float) -> float:
    if t >= 0:
        return float(1.0 / (1.0 + np.exp(-t)))
    e = np.exp(t)
    return float(e / (1.0 + e))


def _logit(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise KernelError("mixing weight must lie strictly inside (0, 1)")
    return float(np.log(p / (1.0 - p)))


class DeepO(Kernel):
    """Gaussian kernel on raw inputs with a trainable bandwidth."""

    def __init__(self, sigma: float):
        if sigma <= 0:
            raise KernelError("bandwidth must be positive")
        self.log_sigma = float(np.log(sigma))

    @property
    def sigma(self) -> float:
        return float(np.exp(self.log_sigma))

    def gram(self, a, b) -> np.ndarray:
        xa = _points(a, "real")
        xb = _points(b, "real")
        return np.exp(-_sqdist(xa, xb) / self.sigma**2)

    def param_vector(self) -> np.ndarray:
        return np.array([self.log_sigma])

    def set_param_vector(self, vec: np.ndarray) -> None:
        self.log_sigma = float(np.asarray(vec).reshape(1)[0])

    def grad_params(self, a, b, dk: np.ndarray) -> np.ndarray:
        xa = _points(a, "real")
        xb = _points(b, "real")
        d = _sqdist(xa, xb)
        k = np.exp(-d / self.sigma**2)
        # d/dlog(sigma) of -d/sigma^2 is 2 d/sigma^2
        return np.array([np.sum(dk * k * 2.0 * d / self.sigma**2)])


class DeepG(Kernel):
    """Gaussian kernel on learned features: K(x, y) = G_sigma(phi(x), phi(y))."""

    def __init__(self, phi: FeatureNet, sigma: float):
        if sigma <= 0:
            raise KernelError("bandwidth must be positive")
        self.phi = phi
        self.log_sigma = float(np.log(sigma))

    @property
    def sigma(self) -> float:
        return float(np.exp(self.log_sigma))

    def gram(self, a, b) -> np.ndarray:
        u = self.phi.forward(_points(a, "real"))
        v = self.phi.forward(_points(b, "real"))
        return np.exp(-_sqdist(u, v) / self.sigma**2)

    def param_vector(self) -> np.ndarray:
        return np.concatenate([self.phi.param_vector(), [self.log_sigma]])

    def set_param_vector(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        self.phi.set_param_vector(vec[:-1])
        self.log_sigma = float(vec[-1])

    def grad_params(self, a, b, dk: np.ndarray) -> np.ndarray:
        xa = _points(a, "real")
        xb = _points(b, "real")
        u, cache_a = self.phi.forward_cached(xa)
        v, cache_b = self.phi.forward_cached(xb)
        d = _sqdist(u, v)
        s2 = self.sigma**2
        k = np.exp(-d / s2)
        w = dk * k * (-1.0 / s2)  # dL/dD_ij
        gu = 2.0 * (w.sum(axis=1)[:, None] * u - w @ v)
        gv = 2.0 * (w.sum(axis=0)[:, None] * v - w.T @ u)
        g_net = self.phi.backward(cache_a, gu) + self.phi.backward(cache_b, gv)
        g_log_sigma = np.sum(dk * k * 2.0 * d / s2)
        return np.concatenate([g_net, [g_log_sigma]])


class DeepM(Kernel):
    """Mixing architecture over two learned feature maps:

        K(x, y) = [(1 - tau) G_sigma(phi(x), phi(y)) + tau]
                  * G_sigma0(x + phi'(x), y + phi'(y)).

    ``phi'`` must map the input space into itself.  ``tau`` in (0, 1) keeps K
    positive semidefinite; it is stored as a logistic preimage.
    """

    def __init__(self, phi: FeatureNet, phi_prime: FeatureNet, sigma: float,
                 sigma0: float, tau: float):
        if sigma <= 0 or sigma0 <= 0:
            raise KernelError("bandwidths must be positive")
        if phi_prime.in_dim != phi_prime.out_dim:
            raise KernelError("the shift net must preserve the input dimension")
        self.phi = phi
        self.phi_prime = phi_prime
        self.log_sigma = float(np.log(sigma))
        self.log_sigma0 = float(np.log(sigma0))
        self.logit_tau = _logit(tau)

    @property
    def sigma(self) -> float:
        return float(np.exp(self.log_sigma))

    @property
    def sigma0(self) -> float:
        return float(np.exp(self.log_sigma0))

    @property
    def tau(self) -> float:
        return _sigmoid(self.logit_tau)

    def _pieces(self, a, b):
        xa = _points(a, "real")
        xb = _points(b, "real")
        u = self.phi.forward(xa)
        v = self.phi.forward(xb)
        sa = xa + self.phi_prime.forward(xa)
        sb = xb + self.phi_prime.forward(xb)
        d1 = _sqdist(u, v)
        d0 = _sqdist(sa, sb)
        g1 = np.exp(-d1 / self.sigma**2)
        g0 = np.exp(-d0 / self.sigma0**2)
        return d1, d0, g1, g0

    def gram(self, a, b) -> np.ndarray:
        _, _, g1, g0 = self._pieces(a, b)
        tau = self.tau
        return ((1.0 - tau) * g1 + tau) * g0

    def param_vector(self) -> np.ndarray:
        return np.concatenate([
            self.phi.param_vector(),
            self.phi_prime.param_vector(),
            [self.log_sigma, self.log_sigma0, self.logit_tau],
        ])

    def set_param_vector(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        n1 = self.phi.n_params
        n2 = self.phi_prime.n_params
        self.phi.set_param_vector(vec[:n1])
        self.phi_prime.set_param_vector(vec[n1 : n1 + n2])
        self.log_sigma, self.log_sigma0, self.logit_tau = (float(v) for v in vec[-3:])

    def grad_params(self, a, b, dk: np.ndarray) -> np.ndarray:
        xa = _points(a, "real")
        xb = _points(b, "real")
        u, cache_ua = self.phi.forward_cached(xa)
        v, cache_vb = self.phi.forward_cached(xb)
        pa, cache_pa = self.phi_prime.forward_cached(xa)
        pb, cache_pb = self.phi_prime.forward_cached(xb)
        sa = xa + pa
        sb = xb + pb
        d1 = _sqdist(u, v)
        d0 = _sqdist(sa, sb)
        s2, s02 = self.sigma**2, self.sigma0**2
        g1 = np.exp(-d1 / s2)
        g0 = np.exp(-d0 / s02)
        tau = self.tau

        dg1 = dk * (1.0 - tau) * g0
        dg0 = dk * ((1.0 - tau) * g1 + tau)
        g_logit_tau = np.sum(dk * (1.0 - g1) * g0) * tau * (1.0 - tau)
        g_log_sigma = np.sum(dg1 * g1 * 2.0 * d1 / s2)
        g_log_sigma0 = np.sum(dg0 * g0 * 2.0 * d0 / s02)

        w1 = dg1 * g1 * (-1.0 / s2)
        gu = 2.0 * (w1.sum(axis=1)[:, None] * u - w1 @ v)
        gv = 2.0 * (w1.sum(axis=0)[:, None] * v - w1.T @ u)
        g_phi = self.phi.backward(cache_ua, gu) + self.phi.backward(cache_vb, gv)

        w0 = dg0 * g0 * (-1.0 / s02)
        gsa = 2.0 * (w0.sum(axis=1)[:, None] * sa - w0 @ sb)
        gsb = 2.0 * (w0.sum(axis=0)[:, None] * sb - w0.T @ sa)
        g_shift = self.phi_prime.backward(cache_pa, gsa) + self.phi_prime.backward(
            cache_pb, gsb
        )
        return np.concatenate(
            [g_phi, g_shift, [g_log_sigma, g_log_sigma0, g_logit_tau]]
        )


# ---------------------------------------------------------------------------
# spectral decomposition on finite supports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenpairs of the integral operator f -> sum_x mu(x) K(x, .) f(x).

    ``eigenfunctions[:, j]`` is e_j evaluated on the support; the e_j are
    orthonormal in L2(mu) and ``sum_j lam_j e_j(x) e_j(y)`` reconstructs K.
    """

    eigenvalues: np.ndarray          # non-increasing
    eigenfunctions: np.ndarray       # (N, N), column j = e_j on the support
    mu: np.ndarray                   # base-measure weights, positive
    support: Sample | None = None

    @property
    def size(self) -> int:
        return self.eigenvalues.size

    def reconstruct(self) -> np.ndarray:
        e = self.eigenfunctions
        return (e * self.eigenvalues) @ e.T

    def coefficients(self, pmf: np.ndarray) -> np.ndarray:
        """First-order coefficients <p e_j> of a pmf's mu-density, all j."""
        return self.eigenfunctions.T @ np.asarray(pmf, dtype=np.float64)

    def pair_coefficients(self, pmf: np.ndarray) -> np.ndarray:
        """Second-order coefficients <p e_i e_j> as an (N, N) matrix."""
        e = self.eigenfunctions
        return e.T @ (np.asarray(pmf, dtype=np.float64)[:, None] * e)


def eigendecompose(
    kernel: Kernel,
    support: Sample | None = None,
    mu: np.ndarray | None = None,
    tol: float = 1e-8,
) -> SpectralDecomposition:
    """Spectral decomposition of ``kernel`` restricted to a finite support.

    For a :class:`DiscreteIdentity` kernel the support defaults to the full
    category range.  ``mu`` defaults to uniform weights summing to one.
    """
    if support is None:
        if isinstance(kernel, DiscreteIdentity):
            support = Sample.categorical(np.arange(1, kernel.k + 1), kernel.k)
        else:
            raise KernelError("a finite support is required for this kernel")
    n = support.size
    if mu is None:
        mu = np.full(n, 1.0 / n)
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape != (n,) or mu.min() <= 0:
        raise KernelError("mu must assign positive weight to every support point")

    k = kernel.gram(support, support)
    root = np.sqrt(mu)
    sym = root[:, None] * k * root[None, :]
    sym = 0.5 * (sym + sym.T)
    vals, vecs = np.linalg.eigh(sym)
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    scale = max(abs(vals[0]), 1.0) if vals.size else 1.0
    if vals.size and vals[-1] < -tol * scale:
        raise KernelError(
            f"kernel is not positive semidefinite on this support "
            f"(lambda_min = {vals[-1]:.3e})"
        )
    funcs = vecs / root[:, None]
    return SpectralDecomposition(vals, funcs, mu, support)


def median_heuristic(x: Sample, y: Sample) -> float:
    """Median of the strictly positive pairwise distances of the pooled sample."""
    if x.kind != "real" or y.kind != "real":
        raise KernelError("the median heuristic is only defined for real vectors")
    pooled = np.vstack([x.points, y.points])
    if pooled.shape[0] < 2:
        raise KernelError("need at least two pooled points")
    d2 = _sqdist(pooled, pooled)
    iu = np.triu_indices(pooled.shape[0], k=1)
    dists = np.sqrt(d2[iu])
    dists = dists[dists > 0]
    if dists.size == 0:
        raise KernelError("all pairwise distances are zero")
    return float(np.median(dists))


# ---------------------------------------------------------------------------
# flat-text serialization: header with the architecture, then one parameter
# per line (full-precision decimals, row-major)
# ---------------------------------------------------------------------------

_MAGIC = "# mmdlfi kernel v1"


def _format_kernel(kernel: Kernel) -> str:
    out = io.StringIO()
    out.write(_MAGIC + "\n")

    def header(**kv):
        for key, val in kv.items():
            out.write(f"{key} = {val}\n")

    def weights(vec: np.ndarray):
        out.write("weights =\n")
        for v in vec:
            out.write(f"{float(v)!r}\n")

    if isinstance(kernel, DiscreteIdentity):
        header(type="identity", k=kernel.k)
    elif isinstance(kernel, Gaussian):
        header(type="gaussian", sigma=repr(kernel.sigma),
               normalized=str(kernel.normalized).lower())
    elif isinstance(kernel, DeepO):
        header(type="deep-o", sigma=repr(kernel.sigma))
    elif isinstance(kernel, DeepG):
        header(type="deep-g", sigma=repr(kernel.sigma),
               widths=",".join(map(str, kernel.phi.widths)))
        weights(kernel.phi.param_vector())
    elif isinstance(kernel, DeepM):
        header(type="deep-m", sigma=repr(kernel.sigma), sigma0=repr(kernel.sigma0),
               tau=repr(kernel.tau),
               widths=",".join(map(str, kernel.phi.widths)),
               shift_widths=",".join(map(str, kernel.phi_prime.widths)))
        weights(np.concatenate([kernel.phi.param_vector(),
                                kernel.phi_prime.param_vector()]))
    else:
        raise KernelError(f"kernel of type {type(kernel).__name__} is not serializable")
    return out.getvalue()


def save_kernel(kernel: Kernel, path: str | Path) -> None:
    Path(path).write_text(_format_kernel(kernel))


def _net_from_widths(widths: list[int]) -> FeatureNet:
    zeros_w = [np.zeros((o, i)) for i, o in zip(widths[:-1], widths[1:])]
    zeros_b = [np.zeros(o) for o in widths[1:]]
    return FeatureNet(zeros_w, zeros_b)


def load_kernel(path: str | Path) -> Kernel:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != _MAGIC:
        raise KernelError(f"{path}: not a kernel file")
    fields: dict[str, str] = {}
    values: list[float] = []
    in_weights = False
    for line in lines[1:]:
        line = line.strip()
        if not line:
            continue
        if in_weights:
            values.append(float(line))
        elif line == "weights =":
            in_weights = True
        else:
            key, _, val = line.partition("=")
            fields[key.strip()] = val.strip()
    t = fields.get("type")
    if t == "identity":
        return DiscreteIdentity(int(fields["k"]))
    if t == "gaussian":
        return Gaussian(float(fields["sigma"]), fields.get("normalized") == "true")
    if t == "deep-o":
        return DeepO(float(fields["sigma"]))
    if t == "deep-g":
        net = _net_from_widths([int(w) for w in fields["widths"].split(",")])
        kernel = DeepG(net, float(fields["sigma"]))
        net.set_param_vector(np.array(values))
        return kernel
    if t == "deep-m":
        phi = _net_from_widths([int(w) for w in fields["widths"].split(",")])
        shift = _net_from_widths([int(w) for w in fields["shift_widths"].split(",")])
        kernel = DeepM(phi, shift, float(fields["sigma"]),
                       float(fields["sigma0"]), float(fields["tau"]))
        vec = np.array(values)
        phi.set_param_vector(vec[: phi.n_params])
        shift.set_param_vector(vec[phi.n_params :])
        return kernel
    raise KernelError(f"{path}: unknown kernel type {t!r}")
