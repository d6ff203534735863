"""Samples, discrete distributions, dataset splits and reproducible randomness.

Every stochastic routine in the package draws from a :class:`RandomSource`,
a thin value-like wrapper around a counter-based Philox generator.  Forking
a source with a tuple of integers yields an independent stream, so Monte
Carlo cells can be assigned streams like ``rng.fork(row, col, trial)`` and
produce identical results no matter how work is partitioned across workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

__all__ = [
    "Sample",
    "DatasetSplit",
    "DiscreteDistribution",
    "RandomSource",
    "sample_discrete",
    "sample_mixture",
    "subsample_without_replacement",
    "category_counts",
    "load_sample",
    "save_sample",
]


class DataError(ValueError):
    """Invalid sample, distribution or split construction."""


@dataclass(frozen=True)
class RandomSource:
    """Seeded, splittable source of randomness.

    ``(seed, stream)`` fully determines every draw.  ``fork`` derives an
    independent stream by extending the stream path; distinct paths map to
    statistically independent Philox streams via numpy's SeedSequence
    spawn-key mechanism.
    """

    seed: int
    stream: tuple[int, ...] = ()

    def fork(self, *ids: int) -> "RandomSource":
        return RandomSource(self.seed, self.stream + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        return np.random.Generator(np.random.Philox(seq))


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Sample:
    """An ordered, immutable collection of points.

    Two variants exist and never mix:

    * ``real`` -- ``points`` is a float64 array of shape ``(n, d)``;
    * ``categorical`` -- ``points`` is an int64 array of shape ``(n,)``
      holding indices in ``1..support``.
    """

    points: np.ndarray
    kind: str
    support: int | None = None

    def __post_init__(self):
        if self.kind not in ("real", "categorical"):
            raise DataError(f"unknown sample kind {self.kind!r}")
        pts = np.asarray(self.points)
        if self.kind == "real":
            pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
            if pts.ndim != 2:
                raise DataError("real sample must be a (n, d) array")
        else:
            pts = np.asarray(pts, dtype=np.int64)
            if pts.ndim != 1:
                raise DataError("categorical sample must be a flat index array")
            if self.support is None:
                raise DataError("categorical sample needs a support size")
            if pts.size and (pts.min() < 1 or pts.max() > self.support):
                raise DataError(f"categorical indices must lie in 1..{self.support}")
        object.__setattr__(self, "points", _freeze(pts))

    @classmethod
    def real(cls, points: Iterable) -> "Sample":
        return cls(np.asarray(points, dtype=np.float64), "real")

    @classmethod
    def categorical(cls, indices: Iterable, support: int) -> "Sample":
        return cls(np.asarray(indices, dtype=np.int64), "categorical", int(support))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        if self.kind != "real":
            raise DataError("dimension is only defined for real samples")
        return self.points.shape[1]

    def take(self, positions: np.ndarray) -> "Sample":
        """New sample holding the points at ``positions`` (order preserved)."""
        return Sample(self.points[np.asarray(positions)], self.kind, self.support)

    def slice(self, start: int, stop: int) -> "Sample":
        return Sample(self.points[start:stop], self.kind, self.support)

    def compatible_with(self, other: "Sample") -> bool:
        if self.kind != other.kind:
            return False
        if self.kind == "real":
            return self.dim == other.dim
        return self.support == other.support


def _check_pair(x: Sample, y: Sample, name: str) -> None:
    if not x.compatible_with(y):
        raise DataError(f"{name} samples live in different spaces")


@dataclass(frozen=True)
class DatasetSplit:
    """Train / eval / calibration (/ threshold-optimization) sample pairs.

    Calibration data must be held out from train and eval; constructing the
    split via :meth:`from_pools` guarantees this by slicing disjoint index
    ranges.  ``eval_within_train`` records the permitted reuse of training
    points for evaluation.
    """

    train: tuple[Sample, Sample]
    eval: tuple[Sample, Sample]
    cal: tuple[Sample, Sample]
    opt: tuple[Sample, Sample] | None = None
    eval_within_train: bool = False

    def __post_init__(self):
        _check_pair(*self.train, name="train")
        _check_pair(*self.eval, name="eval")
        _check_pair(*self.cal, name="cal")
        if self.opt is not None:
            _check_pair(*self.opt, name="opt")

    @classmethod
    def from_pools(
        cls,
        x_pool: Sample,
        y_pool: Sample,
        n_train: int,
        n_eval: int,
        n_cal: int,
        n_opt: int = 0,
        eval_within_train: bool = False,
    ) -> "DatasetSplit":
        """Carve a split out of two pooled samples by index ranges.

        With ``eval_within_train`` the eval pair is the leading slice of the
        train pair and consumes no extra pool; otherwise eval points follow
        the training block.  Calibration (and opt) ranges always come after
        everything else, so they are disjoint from train and eval.
        """
        need = n_train + (0 if eval_within_train else n_eval) + n_cal + n_opt
        if n_eval > n_train and eval_within_train:
            raise DataError("eval slice larger than the training block")
        for pool in (x_pool, y_pool):
            if pool.size < need:
                raise DataError(
                    f"pool of size {pool.size} cannot provide {need} points"
                )

        def carve(pool: Sample) -> dict:
            pos = 0
            train = pool.slice(pos, pos + n_train)
            pos += n_train
            if eval_within_train:
                ev = train.slice(0, n_eval)
            else:
                ev = pool.slice(pos, pos + n_eval)
                pos += n_eval
            cal = pool.slice(pos, pos + n_cal)
            pos += n_cal
            opt = pool.slice(pos, pos + n_opt) if n_opt else None
            return {"train": train, "eval": ev, "cal": cal, "opt": opt}

        cx, cy = carve(x_pool), carve(y_pool)
        opt = (cx["opt"], cy["opt"]) if n_opt else None
        return cls(
            train=(cx["train"], cy["train"]),
            eval=(cx["eval"], cy["eval"]),
            cal=(cx["cal"], cy["cal"]),
            opt=opt,
            eval_within_train=eval_within_train,
        )


@dataclass(frozen=True)
class DiscreteDistribution:
    """Probability mass function on the categories ``1..k``."""

    pmf: np.ndarray

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=np.float64)
        if pmf.ndim != 1 or pmf.size < 1:
            raise DataError("pmf must be a nonempty vector")
        if pmf.min() < 0:
            raise DataError("pmf entries must be non-negative")
        if abs(pmf.sum() - 1.0) > 1e-12:
            raise DataError(f"pmf sums to {pmf.sum():.17g}, not 1")
        object.__setattr__(self, "pmf", _freeze(pmf))

    @property
    def k(self) -> int:
        return self.pmf.size

    def mixed_with(self, other: "DiscreteDistribution", nu: float) -> "DiscreteDistribution":
        """The mixture ``(1 - nu) * self + nu * other``."""
        if not 0.0 <= nu <= 1.0:
            raise DataError(f"mixture rate {nu} outside [0, 1]")
        if other.k != self.k:
            raise DataError("mixture components have different supports")
        return DiscreteDistribution((1.0 - nu) * self.pmf + nu * other.pmf)


def sample_discrete(dist: DiscreteDistribution, count: int, rng: RandomSource) -> Sample:
    """``count`` i.i.d. categorical draws from ``dist`` (1-based indices)."""
    if count < 1:
        raise DataError("count must be at least 1")
    gen = rng.generator()
    idx = gen.choice(dist.k, size=count, p=dist.pmf) + 1
    return Sample.categorical(idx, dist.k)


def sample_mixture(
    px: DiscreteDistribution,
    py: DiscreteDistribution,
    nu: float,
    count: int,
    rng: RandomSource,
) -> Sample:
    """I.i.d. draws from the mixture ``(1 - nu) * px + nu * py``."""
    return sample_discrete(px.mixed_with(py, nu), count, rng)


def subsample_without_replacement(s: Sample, m: int, rng: RandomSource) -> Sample:
    """Uniformly random ``m``-subset of the positions of ``s``, order randomized.

    Positions, not values, are the sampling unit: duplicated points are
    eligible independently.
    """
    if m > s.size:
        raise DataError(
            f"cannot subsample {m} points from a sample of size {s.size}: "
            "insufficient calibration data"
        )
    gen = rng.generator()
    pos = gen.choice(s.size, size=m, replace=False)
    return s.take(pos)


def category_counts(s: Sample) -> np.ndarray:
    """Occurrence counts per category, shape ``(support,)``."""
    if s.kind != "categorical":
        raise DataError("counts are only defined for categorical samples")
    return np.bincount(s.points - 1, minlength=s.support)


# ---------------------------------------------------------------------------
# plain-text dataset files: one point per line, reals comma-separated,
# categorical points as bare integers; optional "# dim=d" / "# k=k" header.
# ---------------------------------------------------------------------------

def save_sample(s: Sample, path: str | Path) -> None:
    path = Path(path)
    lines = []
    if s.kind == "real":
        lines.append(f"# dim={s.dim}")
        for row in s.points:
            lines.append(",".join(f"{v:.17g}" for v in row))
    else:
        lines.append(f"# k={s.support}")
        for v in s.points:
            lines.append(str(int(v)))
    path.write_text("\n".join(lines) + "\n")


def load_sample(path: str | Path) -> Sample:
    path = Path(path)
    dim = k = None
    rows: list[str] = []
    for raw in path.read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            header = line[1:].strip()
            if header.startswith("dim="):
                dim = int(header[4:])
            elif header.startswith("k="):
                k = int(header[2:])
            continue
        rows.append(line)
    if not rows:
        raise DataError(f"{path}: no points found")
    if dim is not None or ("," in rows[0] or "." in rows[0] or "e" in rows[0].lower()):
        pts = np.array([[float(v) for v in r.split(",")] for r in rows])
        if dim is not None and pts.shape[1] != dim:
            raise DataError(f"{path}: header dim={dim} but rows have {pts.shape[1]} fields")
        return Sample.real(pts)
    idx = np.array([int(r) for r in rows], dtype=np.int64)
    support = k if k is not None else int(idx.max())
    return Sample.categorical(idx, support)
