"""Command-line entry point: simulate, fit, infer, density, pipeline, report.

Exit codes: 0 success, 1 I/O error, 2 configuration error, 3 numeric
failure.  The top-level seed comes from --seed, falling back to the
TRANSMIX_SEED environment variable, falling back to 0.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .contrast import ConfigurationError, ContrastConfig, grid_for_config
from .density import SieveConfig, mixture_marginal, select_p
from .ecf import InsufficientDataError, Series, load_series_csv, save_series_csv
from .estimate import (CompactSpec, OptimizationFailureError, SelectionConfig,
                       fit_compact, select_order)
from .inference import BootstrapError, bootstrap_sigma, confidence_intervals
from .model import InvalidParameterError, ThetaParams
from .simulate import (HmmSimConfig, ReducibleChainError, gaussian_noise,
                       laplace_noise, sample)

EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class CliError(Exception):
    def __init__(self, msg, code):
        super().__init__(msg)
        self.code = code


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("TRANSMIX_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise CliError(f"TRANSMIX_SEED is not an integer: {env!r}", EXIT_CONFIG)
    return 0


def _read_config_file(path) -> dict:
    """Flat key = value config file; '#' starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read config file {path}: {exc}", EXIT_IO)
    for line_no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{line_no}: expected key = value", EXIT_CONFIG)
        key, val = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = val.strip("\"'")
    return out


def _apply_config_defaults(args, cfg: dict, parser: argparse.ArgumentParser):
    """Config file values fill in options the flags left at their default."""
    for key, raw in cfg.items():
        if not hasattr(args, key):
            raise CliError(f"unknown config key: {key}", EXIT_CONFIG)
        if parser.get_default(key) == getattr(args, key):
            default = parser.get_default(key)
            if isinstance(default, bool):
                setattr(args, key, raw.lower() in ("1", "true", "yes"))
            elif isinstance(default, int) and default is not None:
                setattr(args, key, int(raw))
            elif isinstance(default, float) and default is not None:
                setattr(args, key, float(raw))
            else:
                setattr(args, key, raw)


def _parse_matrix(text: str) -> np.ndarray:
    try:
        rows = [[float(v) for v in row.split(",")] for row in text.split(";")]
        return np.array(rows, dtype=float)
    except ValueError as exc:
        raise CliError(f"cannot parse matrix {text!r}: {exc}", EXIT_CONFIG)


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")], dtype=float)
    except ValueError as exc:
        raise CliError(f"cannot parse vector {text!r}: {exc}", EXIT_CONFIG)


def _noise_from_args(name: str, scale: float):
    if name == "gaussian":
        return gaussian_noise(scale)
    if name == "laplace":
        return laplace_noise(scale)
    raise CliError(f"unknown noise family: {name}", EXIT_CONFIG)


def _load_series(path, has_header) -> Series:
    path = Path(path)
    if not path.exists():
        raise CliError(f"input file not found: {path}", EXIT_IO)
    if path.stat().st_size == 0:
        raise CliError(f"input file is empty: {path}", EXIT_IO)
    try:
        return load_series_csv(path, has_header=has_header)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO)
    except (ValueError, InsufficientDataError) as exc:
        raise CliError(f"bad series in {path}: {exc}", EXIT_IO)


def _file_digest(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def _fmt(x: float) -> str:
    return "%.17g" % x


def _write_json(path, payload) -> None:
    try:
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO)


# ---------------------------------------------------------------------------
# Subcommands

def cmd_simulate(args, parser):
    if args.config:
        # option defaults live on the subparser, not the root parser
        _apply_config_defaults(args, _read_config_file(args.config),
                               getattr(args, "parser", parser))
    seed = _resolve_seed(args)
    P = _parse_matrix(args.transition)
    m = _parse_vector(args.means)
    noise = _noise_from_args(args.noise, args.noise_scale)
    try:
        cfg = HmmSimConfig(P=P, m_true=m, noise=noise, n=args.n, seed=seed)
        series, states = sample(cfg)
    except (ValueError, ReducibleChainError) as exc:
        raise CliError(str(exc), EXIT_CONFIG)
    try:
        save_series_csv(args.out, series)
        if args.states_out:
            np.savetxt(args.states_out, states, fmt="%d")
    except OSError as exc:
        raise CliError(f"cannot write output: {exc}", EXIT_IO)
    return 0


def _contrast_config(args) -> ContrastConfig:
    try:
        return ContrastConfig(a=args.cf_halfwidth, q_order=args.quad_order)
    except ConfigurationError as exc:
        raise CliError(str(exc), EXIT_CONFIG)


def _selection_config(args, seed) -> SelectionConfig:
    return SelectionConfig(k_max=args.k_max, lambda_coeff=args.lambda_coeff,
                           multistart=args.multistart, seed=seed)


def _compact_spec(args) -> CompactSpec:
    try:
        return CompactSpec(m_bound=args.m_bound, gap_min=args.gap_min,
                           det_min=args.det_min, q_floor=args.q_floor)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG)


def _run_fit(series, args, seed):
    ccfg = _contrast_config(args)
    scfg = _selection_config(args, seed)
    grid = grid_for_config(series, ccfg)
    try:
        if args.k is not None:
            spec = _compact_spec(args)
            theta = fit_compact(args.k, spec, grid, ccfg, scfg, y=series.y)
            fit = {
                "k_hat": args.k,
                "theta_hat": theta.to_json_dict(),
                "mode": "compact",
            }
            return theta, fit, grid, ccfg, scfg
        result = select_order(grid, ccfg, scfg, y=series.y)
    except OptimizationFailureError as exc:
        raise CliError(f"optimization failed: {exc}", EXIT_NUMERIC)
    fit = {
        "k_hat": result.k_hat,
        "theta_tilde": result.theta_tilde.to_json_dict(),
        "theta_hat": result.theta_hat.to_json_dict(),
        "Mn_value": result.Mn_value,
        "Cn_value": result.Cn_value,
        "per_k": {str(k): {"Cn": v["Cn"], "Mn": v["Mn"],
                           "theta": v["theta"].to_json_dict()}
                  for k, v in result.per_k.items()},
        "mode": "select_order",
    }
    return result.theta_hat, fit, grid, ccfg, scfg


def _echo_config(args, seed) -> dict:
    echo = {k: v for k, v in sorted(vars(args).items())
            if k not in ("func", "parser") and not callable(v)}
    echo["seed"] = seed
    return echo


def cmd_fit(args, parser):
    seed = _resolve_seed(args)
    series = _load_series(args.input, args.has_header)
    theta, fit, *_ = _run_fit(series, args, seed)
    report = {
        "tool_version": __version__,
        "input": {"path": str(args.input), "sha256": _file_digest(args.input),
                  "n": series.n},
        "fit": fit,
        "config": _echo_config(args, seed),
    }
    _write_json(args.out, report)
    return 0


def cmd_infer(args, parser):
    seed = _resolve_seed(args)
    series = _load_series(args.input, args.has_header)
    ccfg = _contrast_config(args)
    scfg = _selection_config(args, seed)
    spec = _compact_spec(args)
    grid = grid_for_config(series, ccfg)
    block_len = None if args.block_len == "auto" else int(args.block_len)
    try:
        theta = fit_compact(args.k, spec, grid, ccfg, scfg, y=series.y)
        cov = bootstrap_sigma(series, args.k, spec, ccfg,
                              SelectionConfig(k_max=args.k, multistart=1,
                                              seed=seed),
                              replicates=args.replicates, block_len=block_len,
                              seed=seed, theta_hat=theta)
        intervals = confidence_intervals(theta, cov, series.n, args.level)
    except (OptimizationFailureError, BootstrapError) as exc:
        raise CliError(f"inference failed: {exc}", EXIT_NUMERIC)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG)
    report = {
        "tool_version": __version__,
        "input": {"path": str(args.input), "sha256": _file_digest(args.input),
                  "n": series.n},
        "theta_hat": theta.to_json_dict(),
        "covariance": {"sigma": cov.sigma.tolist(), "method": cov.method,
                       "replicates": cov.replicates, "block_len": cov.block_len,
                       "failed": cov.n_failed},
        "intervals": {"level": args.level, "bounds": intervals.tolist()},
        "config": _echo_config(args, seed),
    }
    _write_json(args.out, report)
    return 0


def _theta_from_file(path) -> ThetaParams:
    try:
        payload = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError(f"cannot read theta file {path}: {exc}", EXIT_IO)
    except json.JSONDecodeError as exc:
        raise CliError(f"bad JSON in {path}: {exc}", EXIT_CONFIG)
    for key in ("theta_hat",):
        if key in payload:
            payload = payload[key]
            break
    if "fit" in payload:
        payload = payload["fit"]["theta_hat"]
    try:
        return ThetaParams.from_json_dict(payload)
    except (KeyError, InvalidParameterError) as exc:
        raise CliError(f"bad theta in {path}: {exc}", EXIT_CONFIG)


def _density_summary(dfit) -> dict:
    return {
        "p_hat": dfit.p_hat,
        "f_hat": dfit.f_hat.to_json_dict(),
        "ell_table": {str(p): v for p, v in dfit.ell_table.items()},
        "pen_table": {str(p): v for p, v in dfit.pen_table.items()},
        "Dn_table": {str(p): v for p, v in dfit.Dn_table.items()},
    }


def cmd_density(args, parser):
    seed = _resolve_seed(args)
    series = _load_series(args.input, args.has_header)
    theta = _theta_from_file(args.theta)
    cfg = SieveConfig(p_max=args.p_max, b0=args.b0, a0=args.a0,
                      kappa=args.kappa)
    dfit = select_p(series, theta, cfg, seed=seed, restarts=args.restarts)
    report = {
        "tool_version": __version__,
        "input": {"path": str(args.input), "sha256": _file_digest(args.input),
                  "n": series.n},
        "density": _density_summary(dfit),
        "config": _echo_config(args, seed),
    }
    _write_json(args.out, report)
    if args.curve_out:
        emit_density_curve(args.curve_out, dfit, series)
    return 0


def emit_density_curve(path, dfit, series) -> None:
    """Sampled fitted curves: x, noise density, marginal density."""
    s_hat = mixture_marginal(dfit.f_hat, dfit.theta_hat)
    lo = float(np.min(series.y)) - 3.0
    hi = float(np.max(series.y)) + 3.0
    x = np.linspace(lo, hi, 801)
    fx = dfit.f_hat.pdf(x)
    sx = s_hat(x)
    lines = ["x,f_hat,s_hat"]
    lines += [f"{_fmt(a)},{_fmt(b)},{_fmt(c)}" for a, b, c in zip(x, fx, sx)]
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO)


def emit_plot_data(out_dir, series, dfit=None) -> None:
    """Histogram of the data plus, when available, density curves and the
    per-p selection table."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create {out_dir}: {exc}", EXIT_IO)
    counts, edges = np.histogram(series.y, bins=60, density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    lines = ["bin_center,density"]
    lines += [f"{_fmt(c)},{_fmt(d)}" for c, d in zip(centers, counts)]
    (out / "histogram.csv").write_text("\n".join(lines) + "\n")
    if dfit is not None:
        emit_density_curve(out / "density_curve.csv", dfit, series)
        rows = ["p,ell_n,pen,Dn"]
        for p in sorted(dfit.Dn_table):
            rows.append(f"{p},{_fmt(dfit.ell_table[p])},"
                        f"{_fmt(dfit.pen_table[p])},{_fmt(dfit.Dn_table[p])}")
        (out / "dn_table.csv").write_text("\n".join(rows) + "\n")


def cmd_pipeline(args, parser):
    seed = _resolve_seed(args)
    series = _load_series(args.input, args.has_header)
    theta, fit, grid, ccfg, scfg = _run_fit(series, args, seed)
    report = {
        "tool_version": __version__,
        "input": {"path": str(args.input), "sha256": _file_digest(args.input),
                  "n": series.n},
        "fit": fit,
    }
    dfit = None
    if args.replicates > 0:
        spec = _compact_spec(args)
        block_len = None if args.block_len == "auto" else int(args.block_len)
        try:
            cov = bootstrap_sigma(series, theta.k, spec, ccfg,
                                  SelectionConfig(k_max=theta.k, multistart=1,
                                                  seed=seed),
                                  replicates=args.replicates,
                                  block_len=block_len, seed=seed,
                                  theta_hat=theta)
            intervals = confidence_intervals(theta, cov, series.n, args.level)
        except (BootstrapError, OptimizationFailureError) as exc:
            raise CliError(f"bootstrap failed: {exc}", EXIT_NUMERIC)
        report["covariance"] = {"sigma": cov.sigma.tolist(),
                                "replicates": cov.replicates,
                                "block_len": cov.block_len,
                                "failed": cov.n_failed}
        report["intervals"] = {"level": args.level,
                               "bounds": intervals.tolist()}
    if args.density:
        cfg = SieveConfig(p_max=args.p_max, b0=args.b0, a0=args.a0,
                          kappa=args.kappa)
        dfit = select_p(series, theta, cfg, seed=seed, restarts=args.restarts)
        report["density"] = _density_summary(dfit)
    report["config"] = _echo_config(args, seed)
    _write_json(args.out, report)
    if args.plot_dir:
        emit_plot_data(args.plot_dir, series, dfit)
    return 0


def cmd_report(args, parser):
    try:
        payload = json.loads(Path(args.report).read_text())
    except OSError as exc:
        raise CliError(f"cannot read report {args.report}: {exc}", EXIT_IO)
    except json.JSONDecodeError as exc:
        raise CliError(f"bad JSON in {args.report}: {exc}", EXIT_CONFIG)
    series = _load_series(args.input, args.has_header)
    dfit = None
    if "density" in payload:
        from .density import DensityFit, GaussianMixtureDensity
        d = payload["density"]
        f_hat = GaussianMixtureDensity(pi=np.array(d["f_hat"]["pi"]),
                                       alpha=np.array(d["f_hat"]["alpha"]),
                                       u=np.array(d["f_hat"]["u"]))
        theta = ThetaParams.from_json_dict(
            payload["fit"]["theta_hat"] if "fit" in payload
            else payload["theta_hat"])
        dfit = DensityFit(
            p_hat=d["p_hat"], f_hat=f_hat, theta_hat=theta,
            ell_table={int(p): v for p, v in d["ell_table"].items()},
            pen_table={int(p): v for p, v in d["pen_table"].items()},
            Dn_table={int(p): v for p, v in d["Dn_table"].items()})
    emit_plot_data(args.out_dir, series, dfit)
    return 0


# ---------------------------------------------------------------------------
# Argument wiring

def _add_common_io(p):
    p.add_argument("--input", required=True, help="single-column series CSV")
    p.add_argument("--has-header", action="store_true",
                   help="skip the first line of the input file")
    p.add_argument("--seed", type=int, default=None)


def _add_contrast_flags(p):
    p.add_argument("--cf-halfwidth", dest="cf_halfwidth", type=float, default=2.0)
    p.add_argument("--quad-order", dest="quad_order", type=int, default=32)


def _add_fit_flags(p):
    p.add_argument("--k", type=int, default=None,
                   help="known order: fit on the compact set instead of selecting")
    p.add_argument("--k-max", dest="k_max", type=int, default=4)
    p.add_argument("--lambda-coeff", dest="lambda_coeff", type=float, default=0.5)
    p.add_argument("--multistart", type=int, default=20)
    _add_compact_flags(p)


def _add_compact_flags(p):
    p.add_argument("--m-bound", dest="m_bound", type=float, default=5.0)
    p.add_argument("--gap-min", dest="gap_min", type=float, default=0.1)
    p.add_argument("--det-min", dest="det_min", type=float, default=0.01)
    p.add_argument("--q-floor", dest="q_floor", type=float, default=0.0)


def _add_density_flags(p):
    p.add_argument("--p-max", dest="p_max", type=int, default=20)
    p.add_argument("--kappa", type=float, default=1.0 / 3.0)
    p.add_argument("--b0", type=float, default=1.0)
    p.add_argument("--a0", type=float, default=2.0)
    p.add_argument("--restarts", type=int, default=3)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="transmix",
        description="Semi-parametric estimation of translation mixtures "
                    "with dependent regimes")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic regime-switching series")
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--transition", default="0.8,0.2;0.3,0.7",
                   help="row-stochastic matrix, rows ';'-separated")
    p.add_argument("--means", default="0,2", help="comma-separated translations")
    p.add_argument("--noise", default="gaussian", choices=["gaussian", "laplace"])
    p.add_argument("--noise-scale", dest="noise_scale", type=float, default=1.0)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--states-out", dest="states_out", default=None)
    p.set_defaults(func=cmd_simulate, parser=p)

    p = sub.add_parser("fit", help="estimate order and parametric part")
    _add_common_io(p)
    _add_contrast_flags(p)
    _add_fit_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("infer", help="bootstrap covariance and intervals")
    _add_common_io(p)
    _add_contrast_flags(p)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--k-max", dest="k_max", type=int, default=4)
    p.add_argument("--lambda-coeff", dest="lambda_coeff", type=float, default=0.5)
    p.add_argument("--multistart", type=int, default=20)
    _add_compact_flags(p)
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--block-len", dest="block_len", default="auto")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("density", help="sieve estimate of the noise density")
    _add_common_io(p)
    p.add_argument("--theta", required=True,
                   help="JSON file holding theta (fit report accepted)")
    _add_density_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--curve-out", dest="curve_out", default=None)
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("pipeline", help="fit, then optional bootstrap and density")
    _add_common_io(p)
    _add_contrast_flags(p)
    _add_fit_flags(p)
    p.add_argument("--replicates", type=int, default=0,
                   help="bootstrap replicates; 0 skips inference")
    p.add_argument("--block-len", dest="block_len", default="auto")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--density", action="store_true")
    _add_density_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--plot-dir", dest="plot_dir", default=None)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("report", help="emit plot CSVs from an existing report")
    _add_common_io(p)
    p.add_argument("--report", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
