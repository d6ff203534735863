"""Key-value run configuration shared by all CLI commands.

Config files are plain text, one ``key = value`` per line with ``#`` comments;
dotted keys group settings into blocks (kernel, train, test, experiment,
bounds, io).  Unknown keys are rejected and every numeric range is validated
at parse time, so a bad configuration fails before any work starts.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Callable

from .experiments import DEFAULT_GRID

__all__ = ["RunConfig", "ConfigError"]


class ConfigError(ValueError):
    """Malformed or out-of-range configuration."""


def _int_at_least(lo: int) -> Callable[[str], int]:
    def parse(raw: str) -> int:
        val = int(raw)
        if val < lo:
            raise ConfigError(f"must be an integer >= {lo}, got {val}")
        return val

    return parse


def _float_in(lo: float, hi: float, open_lo=False, open_hi=False) -> Callable[[str], float]:
    def parse(raw: str) -> float:
        val = float(raw)
        if val < lo or val > hi or (open_lo and val == lo) or (open_hi and val == hi):
            lo_b = "(" if open_lo else "["
            hi_b = ")" if open_hi else "]"
            raise ConfigError(f"must lie in {lo_b}{lo}, {hi}{hi_b}, got {val}")
        return val

    return parse


def _positive_float(raw: str) -> float:
    val = float(raw)
    if val <= 0:
        raise ConfigError(f"must be positive, got {val}")
    return val


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _int_list(raw: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in raw.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {raw!r}") from exc
    if not vals or min(vals) < 1:
        raise ConfigError("expected a nonempty list of positive integers")
    return vals


def _choice(*options: str) -> Callable[[str], str]:
    def parse(raw: str) -> str:
        val = raw.strip()
        if val not in options:
            raise ConfigError(f"must be one of {', '.join(options)}; got {val!r}")
        return val

    return parse


def _string(raw: str) -> str:
    return raw.strip()


def _default_workers() -> int:
    env = os.environ.get("MMDLFI_WORKERS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


# key -> (parser, default); None defaults mean "derived elsewhere"
_SCHEMA: dict[str, tuple[Callable[[str], Any], Any]] = {
    "seed": (int, 0),
    "workers": (_int_at_least(1), None),
    "kernel.type": (_choice("identity", "gaussian", "deep-o", "deep-g", "deep-m"), "identity"),
    "kernel.k": (_int_at_least(1), 100),
    "kernel.sigma": (_positive_float, 1.0),
    "kernel.sigma0": (_positive_float, 1.0),
    "kernel.tau": (_float_in(0.0, 1.0, open_lo=True, open_hi=True), 0.5),
    "kernel.layers": (_int_list, (32, 32, 32)),
    "kernel.feature_dim": (_int_at_least(1), 32),
    "kernel.normalized": (_bool, False),
    "kernel.file": (_string, ""),
    "train.learning_rate": (_positive_float, 1e-3),
    "train.batch_size": (_int_at_least(4), 128),
    "train.max_epochs": (_int_at_least(0), 200),
    "train.patience": (_int_at_least(0), 10),
    "train.reg": (_float_in(0.0, float("inf")), 1e-8),
    "test.pi": (_float_in(0.0, 1.0), None),
    "test.delta": (_float_in(0.0, 1.0, open_lo=True), 1.0),
    "test.alpha": (_float_in(0.0, 1.0, open_lo=True, open_hi=True), 0.05),
    "test.m": (_int_at_least(0), 0),
    "test.k_cal": (_int_at_least(1), 500),
    "test.smoothed": (_bool, False),
    "experiment.k": (_int_at_least(2), 100),
    "experiment.epsilon": (_float_in(0.0, 1.0, open_hi=True), 0.3),
    "experiment.m_grid": (_int_list, DEFAULT_GRID),
    "experiment.n_grid": (_int_list, DEFAULT_GRID),
    "experiment.trials": (_int_at_least(1), 1000),
    "experiment.level": (_float_in(0.0, 1.0, open_lo=True, open_hi=True), 0.1),
    "experiment.m_ref": (_int_at_least(1), 100),
    "experiment.n_ref": (_int_at_least(1), 100),
    "bounds.epsilon": (_positive_float, None),
    "bounds.delta": (_float_in(0.0, 1.0, open_lo=True), 1.0),
    "bounds.alpha": (_float_in(0.0, 1.0, open_lo=True, open_hi=True), 0.05),
    "bounds.r": (_float_in(0.0, float("inf")), 0.0),
    "bounds.c": (_positive_float, 1.0),
    "bounds.j": (_int_at_least(2), None),
    "io.x": (_string, ""),
    "io.y": (_string, ""),
    "io.z": (_string, ""),
    "io.x_cal": (_string, ""),
    "io.y_cal": (_string, ""),
    "io.x_opt": (_string, ""),
    "io.y_opt": (_string, ""),
    "io.calibration": (_string, ""),
    "io.kernel_out": (_string, ""),
    "io.report": (_string, ""),
    "io.out_dir": (_string, "."),
}


class RunConfig:
    """Validated configuration; reads fall back to schema defaults."""

    def __init__(self, values: dict[str, Any] | None = None):
        self._values: dict[str, Any] = dict(values or {})

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        values: dict[str, Any] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            values.update(cls._parse_entry(key.strip(), val.strip(), f"{source}:{lineno}"))
        return cls(values)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.parse(Path(path).read_text(), source=str(path))

    @staticmethod
    def _parse_entry(key: str, raw: str, where: str) -> dict[str, Any]:
        if key not in _SCHEMA:
            raise ConfigError(f"{where}: unknown key {key!r}")
        parser, _ = _SCHEMA[key]
        try:
            return {key: parser(raw)}
        except ConfigError as exc:
            raise ConfigError(f"{where}: {key}: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"{where}: {key}: {exc}") from None

    def override(self, key: str, raw: str) -> None:
        self._values.update(self._parse_entry(key, raw, "<override>"))

    def set(self, key: str, value: Any) -> None:
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        self._values[key] = value

    def __contains__(self, key: str) -> bool:
        return key in self._values

    def get(self, key: str) -> Any:
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        if key in self._values:
            return self._values[key]
        _, default = _SCHEMA[key]
        return default

    @property
    def seed(self) -> int:
        return self.get("seed")

    @property
    def workers(self) -> int:
        val = self.get("workers")
        return val if val is not None else _default_workers()

    def pi(self) -> float:
        """Projection fraction: explicit test.pi, else half the signal rate."""
        val = self.get("test.pi")
        return val if val is not None else self.get("test.delta") / 2.0
