"""Command-line surface: test, train, sweep, bounds, spectrum, pvalue.

Machine-readable ``key = value`` results go to stdout (with ``#`` comment
headers that always include the seed); diagnostics go to stderr and any
validation failure exits nonzero without partial output.  Artifacts are
written atomically (temp file, then rename).
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .data import DataError, RandomSource, load_sample
from .experiments import (
    contour_asymmetry,
    contour_to_csv,
    extract_contour,
    grid_to_csv,
    make_toy,
    tradeoff_sweep,
)
from .inference import (
    CalibrationError,
    InferenceError,
    SIGNIFICANCE_CAP,
    calibrate_null,
    estimate_p_value,
    load_calibration,
    optimize_threshold,
    psi_test,
    save_calibration,
    significance_binomial,
    significance_gaussian,
)
from .kernels import (
    DiscreteIdentity,
    Gaussian,
    Kernel,
    KernelError,
    eigendecompose,
    load_kernel,
    save_kernel,
)
from .stats import StatisticsError, t_statistic, witness_scores
from .theory import (
    ProblemParams,
    TheoryError,
    jstar_certified,
    lambda_norms,
    lower_bound_planner,
    upper_bound_planner,
)
from .training import TrainConfig, TrainingError, initialize_kernel, save_train_report, train_kernel

_ERRORS = (
    ConfigError,
    DataError,
    KernelError,
    StatisticsError,
    CalibrationError,
    InferenceError,
    TheoryError,
    TrainingError,
    OSError,
)


class CliError(Exception):
    """Command-level validation failure."""


def _atomic_write(path: Path, writer: Callable[[Path], None]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    tmp = Path(tmp_name)
    try:
        writer(tmp)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, val = item.partition("=")
        cfg.override(key.strip(), val.strip())
    if args.seed is not None:
        cfg.set("seed", args.seed)
    if args.workers is not None:
        cfg.set("workers", args.workers)
    return cfg


def _require_path(cfg: RunConfig, key: str, flag: str) -> Path:
    raw = cfg.get(key)
    if not raw:
        raise CliError(f"missing required input: set {key} (or pass {flag})")
    path = Path(raw)
    if not path.exists():
        raise CliError(f"{path}: file not found")
    return path


def _build_fixed_kernel(cfg: RunConfig) -> Kernel:
    if cfg.get("kernel.file"):
        return load_kernel(_require_path(cfg, "kernel.file", "--set kernel.file=..."))
    ktype = cfg.get("kernel.type")
    if ktype == "identity":
        return DiscreteIdentity(cfg.get("kernel.k"))
    if ktype == "gaussian":
        return Gaussian(cfg.get("kernel.sigma"), cfg.get("kernel.normalized"))
    raise CliError(
        f"kernel.type={ktype} has trainable parameters; train it first and point "
        "kernel.file at the result"
    )


def _emit(lines: list[str]) -> None:
    sys.stdout.write("\n".join(lines) + "\n")


def _fmt(value: float) -> str:
    return f"{value:.10g}"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_test(args) -> int:
    cfg = _load_config(args)
    for flag, key in (("x", "io.x"), ("y", "io.y"), ("z", "io.z"),
                      ("x_cal", "io.x_cal"), ("y_cal", "io.y_cal"),
                      ("x_opt", "io.x_opt"), ("y_opt", "io.y_opt"),
                      ("calibration", "io.calibration")):
        val = getattr(args, flag, None)
        if val:
            cfg.set(key, val)

    x = load_sample(_require_path(cfg, "io.x", "--x"))
    y = load_sample(_require_path(cfg, "io.y", "--y"))
    z = load_sample(_require_path(cfg, "io.z", "--z"))
    kernel = _build_fixed_kernel(cfg)
    pi = cfg.pi()
    seed = cfg.seed
    decision = psi_test(x, y, z, pi, kernel)

    lines = [
        f"# mmdlfi test v{__version__}",
        f"# seed={seed} pi={_fmt(pi)} n={x.size} m={z.size}",
        f"statistic = {_fmt(decision.statistic)}",
        f"threshold = {_fmt(decision.threshold)}",
        f"reject = {str(decision.reject).lower()}",
    ]

    table = None
    cache = cfg.get("io.calibration")
    if cache and Path(cache).exists():
        table = load_calibration(cache)
    elif cfg.get("io.x_cal"):
        x_cal = load_sample(_require_path(cfg, "io.x_cal", "--x-cal"))
        y_cal = None
        if cfg.get("io.y_cal"):
            y_cal = load_sample(_require_path(cfg, "io.y_cal", "--y-cal"))
        m_cal = cfg.get("test.m") or z.size
        table = calibrate_null(
            x_cal, x, y, m=m_cal, k=cfg.get("test.k_cal"), kernel=kernel,
            rng=RandomSource(seed).fork(3), y_cal=y_cal,
        )
        if cache:
            _atomic_write(Path(cache), lambda p: save_calibration(table, p))
            lines.append(f"calibration_cache = {cache}")

    if table is not None:
        p_val = estimate_p_value(decision.statistic, table, cfg.get("test.smoothed"))
        lines.append(f"p_value = {_fmt(p_val)}")
        if table.sigma0 > 0:
            z_gauss = significance_gaussian(decision.statistic, z.size, table)
            lines.append(f"z_gaussian = {_fmt(z_gauss)}")

    if cfg.get("io.x_opt") and cfg.get("io.y_opt"):
        if not cfg.get("io.x_cal"):
            raise CliError("binomial significance needs io.x_cal for the null rate")
        x_opt = load_sample(_require_path(cfg, "io.x_opt", "--x-opt"))
        y_opt = load_sample(_require_path(cfg, "io.y_opt", "--y-opt"))
        x_cal = load_sample(_require_path(cfg, "io.x_cal", "--x-cal"))
        t_opt = optimize_threshold(x_opt, y_opt, x, y, kernel)
        theta0 = float(np.mean(witness_scores(x_cal, x, y, kernel) > t_opt))
        if not 0.0 < theta0 < 1.0:
            raise CliError(
                "thresholded null rate is degenerate; more calibration data needed"
            )
        count = int(np.sum(witness_scores(z, x, y, kernel) > t_opt))
        z_binom = significance_binomial(count, z.size, theta0)
        lines.append(f"t_opt = {_fmt(t_opt)}")
        lines.append(f"z_binomial = {_fmt(z_binom)}")
        lines.append(f"binomial_saturated = {str(abs(z_binom) >= SIGNIFICANCE_CAP).lower()}")

    _emit(lines)
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    for flag, key in (("x", "io.x"), ("y", "io.y"),
                      ("kernel_out", "io.kernel_out"), ("report", "io.report")):
        val = getattr(args, flag, None)
        if val:
            cfg.set(key, val)

    x = load_sample(_require_path(cfg, "io.x", "--x"))
    y = load_sample(_require_path(cfg, "io.y", "--y"))
    if x.kind != "real":
        raise CliError("trainable kernels need real-vector data")
    if x.size == y.size and np.array_equal(x.points, y.points):
        raise CliError("degenerate training data: the two classes are identical")
    out_path = cfg.get("io.kernel_out")
    if not out_path:
        raise CliError("missing output path: set io.kernel_out (or pass --kernel-out)")

    arch = cfg.get("kernel.type")
    if arch not in ("deep-o", "deep-g", "deep-m"):
        raise CliError(f"kernel.type={arch} is not trainable; pick deep-o, deep-g or deep-m")
    seed = cfg.seed
    rng = RandomSource(seed)
    kernel0 = initialize_kernel(
        arch, x, y, rng.fork(1),
        hidden=tuple(cfg.get("kernel.layers")),
        feature_dim=cfg.get("kernel.feature_dim"),
    )
    train_cfg = TrainConfig(
        learning_rate=cfg.get("train.learning_rate"),
        batch_size=cfg.get("train.batch_size"),
        max_epochs=cfg.get("train.max_epochs"),
        patience=cfg.get("train.patience"),
        reg=cfg.get("train.reg"),
        seed=seed,
    )
    report = train_kernel((x, y), kernel0, train_cfg, rng=rng.fork(2))

    _atomic_write(Path(out_path), lambda p: save_kernel(report.kernel, p))
    lines = [
        f"# mmdlfi train v{__version__}",
        f"# seed={seed} arch={arch} n_train={x.size}",
        f"kernel_file = {out_path}",
        f"epochs_run = {report.epochs_run}",
        f"best_epoch = {report.best_epoch}",
    ]
    if report.val_objective:
        lines.append(f"best_val_objective = {_fmt(max(report.val_objective))}")
    report_path = cfg.get("io.report")
    if report_path:
        _atomic_write(Path(report_path), lambda p: save_train_report(report, p))
        lines.append(f"report_file = {report_path}")
    _emit(lines)
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out_dir or cfg.get("io.out_dir"))
    seed = cfg.seed
    instance = make_toy(cfg.get("experiment.k"), cfg.get("experiment.epsilon"))
    pi = cfg.pi()
    level = cfg.get("experiment.level")
    grid = tradeoff_sweep(
        instance,
        cfg.get("experiment.m_grid"),
        cfg.get("experiment.n_grid"),
        trials=cfg.get("experiment.trials"),
        pi=pi,
        rng=RandomSource(seed),
        workers=cfg.workers,
    )
    contour = extract_contour(grid, level)

    grid_path = out_dir / "error_grid.csv"
    contour_path = out_dir / "contour.csv"
    _atomic_write(grid_path, lambda p: p.write_text(grid_to_csv(grid)))
    _atomic_write(contour_path, lambda p: p.write_text(contour_to_csv(contour)))

    lines = [
        f"# mmdlfi sweep v{__version__}",
        f"# seed={seed} pi={_fmt(pi)} trials={cfg.get('experiment.trials')} "
        f"workers={cfg.workers}",
        f"grid_csv = {grid_path}",
        f"contour_csv = {contour_path}",
        f"contour_points = {len(contour)}",
    ]
    m_ref, n_ref = cfg.get("experiment.m_ref"), cfg.get("experiment.n_ref")
    if m_ref in grid.m_values and n_ref in grid.n_values:
        asym = contour_asymmetry(grid, level, m_ref, n_ref)
        lines.append(f"asymmetric = {str(asym.asymmetric).lower()}")
        if asym.n_at_m is not None:
            lines.append(f"n_at_m{m_ref} = {_fmt(asym.n_at_m)}")
        if asym.m_at_n is not None:
            lines.append(f"m_at_n{n_ref} = {_fmt(asym.m_at_n)}")
    if not args.no_figures:
        from .plotting import render_error_grid

        fig_path = out_dir / "error_grid.png"
        render_error_grid(grid, contour, level, fig_path)
        lines.append(f"figure = {fig_path}")
    _emit(lines)
    return 0


def cmd_bounds(args) -> int:
    cfg = _load_config(args)
    if cfg.get("kernel.type") != "identity" or cfg.get("kernel.file"):
        raise CliError(
            "bounds need a kernel with a finite support and known spectrum; "
            "only kernel.type=identity is supported here"
        )
    epsilon = cfg.get("bounds.epsilon")
    if epsilon is None:
        raise CliError("bounds.epsilon must be set (MMD separation, > 0)")
    params = ProblemParams(
        c_density=cfg.get("bounds.c"),
        epsilon=epsilon,
        delta=cfg.get("bounds.delta"),
        alpha=cfg.get("bounds.alpha"),
        r_misspec=cfg.get("bounds.r"),
    )
    spec = eigendecompose(DiscreteIdentity(cfg.get("kernel.k")))
    j = cfg.get("bounds.j") or spec.size
    norms = lambda_norms(spec, j)
    upper = upper_bound_planner(params, spec)
    lower = lower_bound_planner(params, spec, j)
    jstar = jstar_certified(spec, epsilon)
    lines = [
        f"# mmdlfi bounds v{__version__}",
        f"# seed={cfg.seed} k={cfg.get('kernel.k')} epsilon={_fmt(epsilon)} "
        f"delta={_fmt(params.delta)} alpha={_fmt(params.alpha)} r={_fmt(params.r_misspec)}",
        f"lambda_sup = {_fmt(norms.sup)}",
        f"lambda_l2 = {_fmt(norms.l2)}",
        f"lambda_l2_tail = {_fmt(norms.l2_tail)}",
        f"upper_min_m_n = {_fmt(upper.min_m_n)}",
        f"upper_min_n_sqrt_nm = {_fmt(upper.min_n_sqrt_nm)}",
        f"lower_m = {_fmt(lower.m_min)}",
        f"lower_n = {_fmt(lower.n_min)}",
        f"lower_delta_m_plus_sqrt_mn = {_fmt(lower.mixed_min)}",
        f"top_eigenfunction_constant = {str(lower.top_eigenfunction_constant).lower()}",
        f"jstar = {jstar}",
        f"# {upper.constant_caveat}",
    ]
    _emit(lines)
    return 0


def cmd_spectrum(args) -> int:
    cfg = _load_config(args)
    if args.support:
        support = load_sample(Path(args.support))
        kernel = _build_fixed_kernel(cfg)
        spec = eigendecompose(kernel, support)
    else:
        if cfg.get("kernel.type") != "identity":
            raise CliError("continuous kernels need --support FILE with finite points")
        spec = eigendecompose(DiscreteIdentity(cfg.get("kernel.k")))
    lines = [f"# mmdlfi spectrum v{__version__}", f"# seed={cfg.seed}", "j,lambda"]
    for idx, lam in enumerate(spec.eigenvalues, 1):
        lines.append(f"{idx},{lam:.10g}")
    _emit(lines)
    return 0


def cmd_pvalue(args) -> int:
    cfg = _load_config(args)
    for flag, key in (("x", "io.x"), ("y", "io.y"), ("z", "io.z"),
                      ("calibration", "io.calibration")):
        val = getattr(args, flag, None)
        if val:
            cfg.set(key, val)
    table = load_calibration(_require_path(cfg, "io.calibration", "--calibration"))
    x = load_sample(_require_path(cfg, "io.x", "--x"))
    y = load_sample(_require_path(cfg, "io.y", "--y"))
    z = load_sample(_require_path(cfg, "io.z", "--z"))
    kernel = _build_fixed_kernel(cfg)
    t_hat = t_statistic(x, y, z, kernel)
    p_val = estimate_p_value(t_hat, table, cfg.get("test.smoothed"))
    lines = [
        f"# mmdlfi pvalue v{__version__}",
        f"# seed={cfg.seed} k_cal={table.k} m_cal={table.m}",
        f"statistic = {_fmt(t_hat)}",
        f"p_value = {_fmt(p_val)}",
    ]
    if table.sigma0 > 0:
        lines.append(f"z_gaussian = {_fmt(significance_gaussian(t_hat, z.size, table))}")
    _emit(lines)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="path to a key=value config file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config entry (repeatable)")
    parser.add_argument("--seed", type=int, help="override the seed")
    parser.add_argument("--workers", type=int,
                        help="worker processes (default $MMDLFI_WORKERS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmdlfi",
        description="kernel MMD tests for likelihood-free signal detection",
    )
    parser.add_argument("--version", action="version", version=f"mmdlfi {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="run the threshold test and estimate a p-value")
    _add_common(p)
    p.add_argument("--x", help="null simulator sample file")
    p.add_argument("--y", help="signal simulator sample file")
    p.add_argument("--z", help="test sample file")
    p.add_argument("--x-cal", dest="x_cal", help="held-out null calibration sample")
    p.add_argument("--y-cal", dest="y_cal", help="held-out signal calibration sample")
    p.add_argument("--x-opt", dest="x_opt", help="threshold-search null sample")
    p.add_argument("--y-opt", dest="y_opt", help="threshold-search signal sample")
    p.add_argument("--calibration", help="calibration table cache (read or write)")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("train", help="train a kernel on labeled simulator data")
    _add_common(p)
    p.add_argument("--x", help="null training sample file")
    p.add_argument("--y", help="signal training sample file")
    p.add_argument("--kernel-out", dest="kernel_out", help="output kernel file")
    p.add_argument("--report", help="per-epoch objective CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="Monte Carlo (m, n) error sweep on the toy instance")
    _add_common(p)
    p.add_argument("--out-dir", dest="out_dir", help="output directory")
    p.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bounds", help="sample-complexity planner tables")
    _add_common(p)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("spectrum", help="dump kernel eigenvalues on a finite support")
    _add_common(p)
    p.add_argument("--support", help="support points file for continuous kernels")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("pvalue", help="p-value from a cached calibration table")
    _add_common(p)
    p.add_argument("--x", help="null evaluation sample file")
    p.add_argument("--y", help="signal evaluation sample file")
    p.add_argument("--z", help="test sample file")
    p.add_argument("--calibration", help="calibration table file")
    p.set_defaults(func=cmd_pvalue)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, *_ERRORS) as exc:
        print(f"mmdlfi {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
