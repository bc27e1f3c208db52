"""Subcommands hkn, cdf, outage, validate and bench.

Each ``cmd_*`` takes the parsed namespace, writes its rows and returns an
exit code. Library errors are turned into one-line messages by ``run``.
"""
import argparse
import logging
import math
import os
import platform
import sys
import time
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy
from dotenv import dotenv_values
from pydantic import ValidationError

from app.core.config import HGM_X0, MAX_TERMS, PRECISION_BITS, RK_STEP, SEED, SERIES_EPS, THREADS
from app.core.errors import ConvergenceError, MismatchError, ModelError, NumericalError, UsageError, WishartError
from app.core.models import CdfOptions, HknParams, MimoConfig, RkOptions, SeriesControl, Spectrum
from app.cli import output
from app.numerics.cdf import cdf_curve, outage_curve, spectrum_from_k
from app.numerics.hgm import hgm_x, hgm_x_enhanced, make_ic
from app.numerics.hkn import hkn_quadrature, hkn_series
from app.numerics.oracle import empirical_cdf_grid

logger = logging.getLogger(__name__)

METHOD_ALIASES = {"quad": "quadrature"}
SUBCOMMANDS = ("hkn", "cdf", "outage", "validate", "bench")

# (n_t, n_r, lambdas, x points); each small case is a 20-point curve around the bulk edge
BENCH_SUITES = {
    "small": [(5, nr, [0.1, 0.2, 0.3, 0.4, 0.5],
               np.linspace(0.5, 1.5, 20) * (math.sqrt(5) + math.sqrt(nr)) ** 2) for nr in range(5, 10)],
    "moderate": [(10, 10, [float(i) for i in range(1, 11)], [10 ** 1.5, 10 ** 1.6, 10 ** 1.7])],
    "large": [(5, 5, [0.4e5, 0.8e5, 1.2e5, 1.6e5, 2.0e5], [1.995e5, 2.0e5, 2.005e5])],
}


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(value: float) -> float:
    return 10.0 * math.log10(value)


def parse_floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}")


def parse_grid(text: str) -> List[float]:
    """'lo:hi:n' -> n evenly spaced points from lo to hi inclusive."""
    parts = text.split(":")
    if len(parts) != 3:
        raise UsageError(f"grid must look like lo:hi:n, got {text!r}")
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise UsageError(f"grid must look like lo:hi:n, got {text!r}")
    if n < 1:
        raise UsageError(f"grid needs at least one point, got {n}")
    return np.linspace(lo, hi, n).tolist()


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _method(text: str) -> str:
    return METHOD_ALIASES.get(text, text)


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value file pre-setting any flag")
    parser.add_argument("--threads", type=int, default=THREADS)
    parser.add_argument("--log-level", default=None)
    parser.add_argument("--no-timing", action="store_true", help="write wall_ms=0 for byte-stable output")
    parser.add_argument("--out", choices=["csv", "json"], default="csv")
    parser.add_argument("--out-file", default=None)
    parser.add_argument("--seed", type=int, default=SEED)
    parser.add_argument("--eps", type=float, default=SERIES_EPS)
    parser.add_argument("--max-terms", type=int, default=MAX_TERMS)
    parser.add_argument("--quad-tol", type=float, default=1e-13)
    parser.add_argument("--rk-mode", choices=["fixed", "adaptive", "dop853"], default="adaptive")
    parser.add_argument("--rk-step", type=float, default=RK_STEP)
    parser.add_argument("--abs-tol", type=float, default=1e-14)
    parser.add_argument("--rel-tol", type=float, default=1e-12)
    parser.add_argument("--x0", type=float, default=HGM_X0)
    parser.add_argument("--precision-bits", type=int, default=None,
                        help=f"big-float determinant precision, e.g. {PRECISION_BITS}")


def _model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--nt", type=int, required=True)
    parser.add_argument("--nr", type=int, required=True)
    parser.add_argument("--lambdas", type=parse_floats, default=None)
    parser.add_argument("--shape", type=parse_floats, default=None)
    parser.add_argument("--k-db", type=float, default=None, help="Rician K-factor in dB")
    parser.add_argument("--method", type=_method, default="hgm",
                        choices=["series", "quadrature", "hgm", "hgm-enhanced"])


def _x_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--x", type=parse_floats, default=None)
    parser.add_argument("--x-grid", type=parse_grid, default=None)
    parser.add_argument("--log10-x", type=parse_floats, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wishart-hgm", description="Largest-eigenvalue CDF of noncentral Wishart matrices")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("hkn", help="evaluate H^k_n(x, lambda)")
    _common(p)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--method", type=_method, default="series",
                   choices=["series", "quadrature", "hgm", "hgm-enhanced"])
    p.set_defaults(func=cmd_hkn)

    p = sub.add_parser("cdf", help="Pr(phi_s <= x)")
    _common(p)
    _model_flags(p)
    _x_flags(p)
    p.add_argument("--emit-plot", default=None, help="write a gnuplot script for the CSV")
    p.set_defaults(func=cmd_cdf)

    p = sub.add_parser("outage", help="MRC outage probability over a Gamma_b grid")
    _common(p)
    _model_flags(p)
    p.add_argument("--gamma-th-db", type=float, default=8.2)
    p.add_argument("--gamma-b-db", type=parse_floats, default=None)
    p.add_argument("--gamma-b-db-grid", type=parse_grid, default=None)
    p.add_argument("--emit-plot", default=None, help="write a gnuplot script for the CSV")
    p.set_defaults(func=cmd_outage)

    p = sub.add_parser("validate", help="compare the analytic CDF with Monte-Carlo")
    _common(p)
    _model_flags(p)
    _x_flags(p)
    p.add_argument("--samples", type=int, default=100_000)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("bench", help="wall time and accuracy per method")
    _common(p)
    p.add_argument("--suite", choices=sorted(BENCH_SUITES), default="small")
    p.add_argument("--methods", type=lambda s: [_method(m) for m in s.split(",") if m], default=["quadrature", "hgm"])
    p.set_defaults(func=cmd_bench)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    """Pre-set flag defaults of the chosen subcommand from a --config file."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    if not os.path.exists(known.config):
        raise UsageError(f"config file {known.config} not found")
    name = next((a for a in argv if a in SUBCOMMANDS), None)
    if name is None:
        return
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    target = subparsers.choices[name]
    actions = {a.dest: a for a in target._actions}
    defaults = {}
    for key, raw in dotenv_values(known.config).items():
        dest = key.strip().lstrip("-").replace("-", "_")
        if dest == "lambda":
            dest = "lam"
        if dest not in actions:
            raise UsageError(f"config key {key!r} is not a flag of {name}")
        action = actions[dest]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[dest] = str(raw).lower() in ("1", "true", "yes", "on")
        else:
            # argparse applies the flag's type to string defaults
            defaults[dest] = raw
            action.required = False
    target.set_defaults(**defaults)
    logger.debug(f"config {known.config}: {sorted(defaults)}")


def _options(args) -> CdfOptions:
    try:
        return CdfOptions(
            series=SeriesControl(eps=args.eps, max_terms=args.max_terms),
            quad_tol=args.quad_tol,
            rk=RkOptions(mode=args.rk_mode, step=args.rk_step, abs_tol=args.abs_tol, rel_tol=args.rel_tol),
            x0=args.x0,
            precision_bits=args.precision_bits,
            seed=args.seed,
            threads=max(1, args.threads),
        )
    except ValidationError as e:
        raise UsageError(f"invalid numerical option: {e.errors()[0]['msg']}") from e


def _model(args, gamma_th: Optional[float] = None):
    try:
        K = db_to_linear(args.k_db) if args.k_db is not None else 0.0
        cfg = MimoConfig(n_t=args.nt, n_r=args.nr, K=K, gamma_th=gamma_th)
        if args.lambdas is not None:
            spec = Spectrum(lambdas=args.lambdas)
        elif args.shape is not None:
            if args.k_db is None:
                raise UsageError("--shape needs --k-db to fix the eigenvalue sum")
            spec = spectrum_from_k(args.shape, K, args.nt, args.nr)
        else:
            raise UsageError("one of --lambdas or --shape is required")
    except ValidationError as e:
        raise ModelError(f"invalid model: {e.errors()[0]['msg']}") from e
    if spec.s != cfg.s:
        raise ModelError(f"{spec.s} eigenvalues given but min(nt, nr) = {cfg.s}")
    return spec, cfg


def _xs(args) -> List[float]:
    xs = []
    if args.x:
        xs += args.x
    if args.x_grid:
        xs += args.x_grid
    if args.log10_x:
        xs += [10.0 ** v for v in args.log10_x]
    if not xs:
        raise UsageError("give --x, --x-grid or --log10-x")
    return xs


def _ms(args, seconds: float) -> int:
    return 0 if args.no_timing else int(round(seconds * 1000))


def _emit_plot(args, columns: List[str], x_column: str, y_column: str, x_label: str, y_label: str,
               log_y: bool) -> None:
    if not args.emit_plot:
        return
    if not args.out_file or args.out != "csv":
        raise UsageError("--emit-plot needs --out csv and --out-file")
    output.write_plot_script(args.emit_plot, args.out_file, x_column, y_column, columns, x_label, y_label, log_y)


def cmd_hkn(args) -> int:
    if args.x < 0 or args.lam < 0:
        raise UsageError("--x and --lambda must be nonnegative")
    try:
        p = HknParams(k=args.k, n=args.n)
    except ValidationError as e:
        raise UsageError(f"invalid (k, n): {e.errors()[0]['msg']}") from e
    opts = _options(args)
    start = time.perf_counter()
    terms, rel = 0, 0.0
    if args.x == 0:
        sign, log10_mag = 0, 0.0
    elif args.method == "series" or args.method == "quadrature":
        res = hkn_series(p, args.x, args.lam, opts.series) if args.method == "series" \
            else hkn_quadrature(p, args.x, args.lam, opts.quad_tol)
        if not res.converged:
            raise ConvergenceError(f"{args.method} for H^{args.k}_{args.n}({args.x:g}, {args.lam:g}) did not "
                                   f"converge: {res.reason} at N={res.n_terms_or_steps}",
                                   partial=res.value, terms_used=res.n_terms_or_steps, diagnostics=res.diagnostics)
        sign, log10_mag, terms, rel = res.value.sign, res.value.log10_mag, res.n_terms_or_steps, res.rel_err_estimate
    elif args.method == "hgm":
        res = hgm_x(args.k, args.n, args.lam, min(opts.x0, args.x), args.x, opts.rk, opts.series)
        sign, log10_mag, terms, rel = res.value.sign, res.value.log10_mag, res.steps, res.rel_err_estimate
    else:
        ic = make_ic(args.k, args.n, args.lam, opts.ic_fraction * args.x, "quadrature", opts.series, opts.quad_tol)
        res = hgm_x_enhanced(args.k, args.n, args.lam, ic, args.x, opts.rk)
        sign, log10_mag, terms, rel = res.value.sign, res.value.log10_mag, res.steps, res.rel_err_estimate
    value = output.format_scaled(sign, log10_mag)
    row = {"k": args.k, "n": args.n, "x": float(args.x), "lambda": float(args.lam), "value": value,
           "method": args.method, "terms_or_steps": terms, "rel_err": float(rel),
           "wall_ms": _ms(args, time.perf_counter() - start)}
    output.emit([row], output.HKN_COLUMNS, args.out, args.out_file)
    return 0


def _cdf_rows(args, results) -> List[Dict]:
    return [{"x": r.x, "cdf": r.value, "abs_err": r.abs_err_estimate, "method": r.method,
             "wall_ms": _ms(args, r.wall_time), "flag": "cancellation" if r.cancellation else ""}
            for r in results]


def cmd_cdf(args) -> int:
    spec, cfg = _model(args)
    opts = _options(args)
    results = cdf_curve(_xs(args), spec, cfg, args.method, opts)
    rows = _cdf_rows(args, results)
    columns = list(output.CDF_COLUMNS)
    if any(r.cancellation for r in results):
        columns.append("flag")
    output.emit(rows, columns, args.out, args.out_file, meta={"n_t": cfg.n_t, "n_r": cfg.n_r,
                                                               "lambdas": spec.lambdas})
    _emit_plot(args, columns, "x", "cdf", "x", "Pr(phi_s <= x)", log_y=False)
    return 0


def cmd_outage(args) -> int:
    opts = _options(args)
    spec, cfg = _model(args, gamma_th=db_to_linear(args.gamma_th_db))
    grid_db = (args.gamma_b_db or []) + (args.gamma_b_db_grid or [])
    if not grid_db:
        raise UsageError("give --gamma-b-db or --gamma-b-db-grid")
    results = outage_curve(spec, cfg, [db_to_linear(g) for g in grid_db], args.method, opts)
    rows = [{"gamma_b_db": float(g), "x": r.x, "outage": r.value, "abs_err": r.abs_err_estimate}
            for g, r in zip(grid_db, results)]
    output.emit(rows, output.OUTAGE_COLUMNS, args.out, args.out_file,
                meta={"gamma_th_db": args.gamma_th_db, "K": cfg.K, "lambdas": spec.lambdas, "method": args.method})
    _emit_plot(args, output.OUTAGE_COLUMNS, "gamma_b_db", "outage", "Gamma_b [dB]", "outage probability",
               log_y=True)
    return 0


def cmd_validate(args) -> int:
    spec, cfg = _model(args)
    opts = _options(args)
    xs = sorted(_xs(args))
    analytic = cdf_curve(xs, spec, cfg, args.method, opts)
    mc = empirical_cdf_grid(xs, spec, cfg, args.samples, args.seed, workers=opts.threads)
    rows, worst = [], 0.0
    for r, m in zip(analytic, mc):
        sd = math.hypot(m.std_err, r.abs_err_estimate)
        diff = r.value - m.p_hat
        z = diff / sd if sd > 0 else (0.0 if abs(diff) < 1e-12 else math.inf)
        worst = max(worst, abs(z))
        rows.append({"x": r.x, "analytic": r.value, "abs_err": r.abs_err_estimate, "mc": m.p_hat,
                     "std_err": m.std_err, "z": z})
    output.emit(rows, output.VALIDATE_COLUMNS, args.out, args.out_file,
                meta={"samples": args.samples, "seed": args.seed, "rng": mc[0].rng, "method": args.method})
    if worst > 3.0:
        raise MismatchError(f"analytic and Monte-Carlo CDF differ by {worst:.2f} standard deviations")
    return 0


def run_bench(suite: str, methods: Sequence[str], opts: CdfOptions = CdfOptions()) -> List[Dict]:
    """One row per (case, method, x); rel_dev is measured against the first method that succeeded."""
    rows = []
    for n_t, n_r, lams, xs in BENCH_SUITES[suite]:
        xs = [float(x) for x in xs]
        spec, cfg = Spectrum(lambdas=lams), MimoConfig(n_t=n_t, n_r=n_r)
        reference: Optional[List[float]] = None
        for method in methods:
            start = time.perf_counter()
            try:
                values = [r.value for r in cdf_curve(xs, spec, cfg, method, opts)]
                status = "ok"
            except NumericalError as e:
                logger.warning(f"bench {suite} ({n_t},{n_r}) {method}: {e.detail}")
                values, status = [math.nan] * len(xs), e.code
            wall = time.perf_counter() - start
            if reference is None and status == "ok":
                reference = values
            for i, (x, v) in enumerate(zip(xs, values)):
                ref = reference[i] if reference is not None else math.nan
                dev = abs(v - ref) / abs(ref) if ref and math.isfinite(v) else math.nan
                rows.append({"suite": suite, "n_t": n_t, "n_r": n_r, "method": method, "x": x,
                             "cdf": v, "rel_dev": dev, "wall_s": wall, "status": status})
        logger.info(f"bench {suite} ({n_t},{n_r}) done")
    return rows


def cmd_bench(args) -> int:
    rows = run_bench(args.suite, args.methods, _options(args))
    for row in rows:
        row["wall_ms"] = _ms(args, row.pop("wall_s"))
    meta = {"suite": args.suite, "methods": args.methods, "python": platform.python_version(),
            "machine": platform.machine(), "system": platform.system(), "cpu_count": os.cpu_count(),
            "numpy": np.__version__, "scipy": scipy.__version__}
    output.emit(rows, output.BENCH_COLUMNS, args.out, args.out_file, meta=meta)
    return 0


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        if args.log_level:
            logging.getLogger().setLevel(args.log_level.upper())
        return args.func(args)
    except WishartError as e:
        print(e.one_line(), file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.error(f"unexpected failure: {e}", exc_info=True)
        err = WishartError(f"{type(e).__name__}: {e}")
        print(err.one_line(), file=sys.stderr)
        return err.exit_code
