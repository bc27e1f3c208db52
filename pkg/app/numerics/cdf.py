"""CDF of the largest eigenvalue of a noncentral complex Wishart matrix.

    Pr(phi_s <= x) = e^{-sum lam} / (prod_{i<j}(lam_i - lam_j) ((t-s)!)^s) * det Phi(x)

with Phi_ij = H^{t-i}_{t-s+1}(x, lam_j). Prefactor and determinant are
combined in the log domain and only the final probability is converted to a
native float.
"""
import logging
import math
import time
from multiprocessing import Pool
from typing import Dict, List, Optional, Sequence, Tuple

import mpmath
import numpy as np
from pydantic import ValidationError
from scipy import linalg, special

from app.core.errors import AssemblyError, ModelError, NumericalError
from app.core.models import CdfOptions, CdfResult, HknParams, MimoConfig, Spectrum
from app.core.scaled import ScaledReal
from app.numerics.hgm import hgm_column
from app.numerics.hkn import hkn_quadrature, hkn_series

logger = logging.getLogger(__name__)

METHODS = ("series", "quadrature", "hgm", "hgm-enhanced")

Matrix = List[List[ScaledReal]]


def row_params(cfg: MimoConfig) -> Tuple[List[int], int]:
    """(k for rows i = 1..s, n) with k = t - i and n = t - s + 1."""
    return [cfg.t - i for i in range(1, cfg.s + 1)], cfg.t - cfg.s + 1


def _check_model(spec: Spectrum, cfg: MimoConfig, method: str) -> None:
    if spec.s != cfg.s:
        raise ModelError(f"spectrum has {spec.s} eigenvalues but min(n_t, n_r) = {cfg.s}")
    if method not in METHODS:
        raise ModelError(f"unknown method {method!r}, expected one of {', '.join(METHODS)}")


# -- assembly -------------------------------------------------------------------

def _entry_task(k: int, n: int, x: float, lam: float, method: str, opts: CdfOptions):
    p = HknParams(k=k, n=n)
    if method == "series":
        return hkn_series(p, x, lam, opts.series)
    return hkn_quadrature(p, x, lam, opts.quad_tol)


def _column_task(ks: List[int], n: int, lam: float, xs: List[float], opts: CdfOptions, enhanced: bool):
    return hgm_column(ks, n, lam, xs, opts, enhanced=enhanced)


def _run(func, tasks: List[tuple], threads: int) -> list:
    if threads > 1 and len(tasks) > 1:
        with Pool(processes=min(threads, len(tasks))) as pool:
            return pool.starmap(func, tasks)
    return [func(*task) for task in tasks]


def assemble_grid(xs: Sequence[float], spec: Spectrum, cfg: MimoConfig, method: str,
                  opts: CdfOptions = CdfOptions()) -> Tuple[Dict[float, Matrix], Dict[float, np.ndarray]]:
    """Phi(x) and the per-entry relative error estimates for every x in xs.

    HGM methods integrate one trajectory per column j which yields every row
    and every x at once.
    """
    _check_model(spec, cfg, method)
    ks, n = row_params(cfg)
    xs = sorted({float(x) for x in xs})
    s = cfg.s
    phis = {x: [[ScaledReal.zero()] * s for _ in range(s)] for x in xs}
    errs = {x: np.zeros((s, s)) for x in xs}

    if method in ("hgm", "hgm-enhanced"):
        tasks = [(ks, n, lam, xs, opts, method == "hgm-enhanced") for lam in spec.lambdas]
        try:
            columns = _run(_column_task, tasks, opts.threads)
        except NumericalError as e:
            raise AssemblyError(f"{method} column failed: {e.detail}", diagnostics=e.diagnostics) from e
        for j, col in enumerate(columns):
            for x in xs:
                for i, k in enumerate(ks):
                    phis[x][i][j] = col.at(x, k)
                errs[x][:, j] = col.rel_err_estimate
        return phis, errs

    tasks, index = [], []
    for x in xs:
        for i, k in enumerate(ks):
            for j, lam in enumerate(spec.lambdas):
                tasks.append((k, n, x, lam, method, opts))
                index.append((x, i, j))
    results = _run(_entry_task, tasks, opts.threads)
    for (x, i, j), res in zip(index, results):
        if not res.converged:
            raise AssemblyError(f"entry ({i + 1},{j + 1}) = H^{ks[i]}_{n}({x:g}, {spec.lambdas[j]:g}) "
                                f"did not converge with {method} ({res.reason})", entry=(i + 1, j + 1),
                                diagnostics=res.diagnostics)
        phis[x][i][j] = res.value
        errs[x][i, j] = res.rel_err_estimate
    return phis, errs


def assemble_phi(x: float, spec: Spectrum, cfg: MimoConfig, method: str = "hgm",
                 opts: CdfOptions = CdfOptions()) -> Matrix:
    phis, _ = assemble_grid([x], spec, cfg, method, opts)
    return phis[float(x)]


# -- prefactor and determinant --------------------------------------------------

def log_prefactor(spec: Spectrum, cfg: MimoConfig) -> ScaledReal:
    """e^{-sum lam} / (prod_{i<j}(lam_i - lam_j) ((t-s)!)^s) as sign and log magnitude."""
    if spec.s != cfg.s:
        raise ModelError(f"spectrum has {spec.s} eigenvalues but min(n_t, n_r) = {cfg.s}")
    lams = spec.lambdas
    gaps = np.diff(lams)
    if len(gaps) and gaps.min() < 1e-12 * lams[-1]:
        raise ModelError(f"spectrum is ill-conditioned: smallest gap {gaps.min():.3e} "
                         f"against largest eigenvalue {lams[-1]:.3e}")
    s, t = cfg.s, cfg.t
    log_vdm = math.fsum(math.log(lams[j] - lams[i]) for i in range(s) for j in range(i + 1, s))
    log_mag = -spec.total - log_vdm - s * special.gammaln(t - s + 1)
    # ascending spectrum: every lam_i - lam_j with i < j is negative
    sign = -1 if (s * (s - 1) // 2) % 2 else 1
    return ScaledReal.from_log(sign, float(log_mag))


def _equilibrate(m: Matrix) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(signs, log magnitudes, column offsets, row offsets) with every row and column max at e^0."""
    sign = np.array([[e.sign for e in row] for row in m], dtype=float)
    logs = np.array([[e.log_mag for e in row] for row in m], dtype=float)
    with np.errstate(invalid="ignore"):
        col = np.max(logs, axis=0)
        col[~np.isfinite(col)] = 0.0
        logs = logs - col[None, :]
        row = np.max(logs, axis=1)
        row[~np.isfinite(row)] = 0.0
        logs = logs - row[:, None]
    return sign, logs, col, row


def det_scaled(m: Matrix, precision_bits: Optional[int] = None) -> ScaledReal:
    """Determinant of a matrix of ScaledReal entries.

    Row and column exponent offsets are factored out first so the LU
    pivoting sees normalized significands. With precision_bits the
    factorization runs in mpmath at that working precision.
    """
    s = len(m)
    if any(len(row) != s for row in m):
        raise ValueError("det_scaled needs a square matrix")
    if s == 0:
        return ScaledReal.one()
    sign, logs, col, row = _equilibrate(m)
    shift = math.fsum(col) + math.fsum(row)

    if precision_bits is not None:
        with mpmath.workprec(precision_bits):
            A = mpmath.matrix(s, s)
            for i in range(s):
                for j in range(s):
                    e = m[i][j]
                    if e.is_zero:
                        continue
                    offset = mpmath.mpf(col[j]) + mpmath.mpf(row[i])
                    if e.hp is not None:
                        A[i, j] = mpmath.mpf(e.hp) * mpmath.exp(-offset)
                    else:
                        A[i, j] = e.sign * mpmath.exp(mpmath.mpf(e.log_mag) - offset)
            d = mpmath.det(A)
            if d == 0:
                return ScaledReal.zero()
            return ScaledReal.from_log(1 if d > 0 else -1, float(mpmath.log(abs(d))) + shift)

    A = sign * np.exp(logs)
    lu, piv = linalg.lu_factor(A, check_finite=False)
    diag = np.diag(lu)
    if np.any(diag == 0.0):
        return ScaledReal.zero()
    swaps = int(np.sum(piv != np.arange(s)))
    det_sign = (-1) ** swaps * int(np.prod(np.sign(diag)))
    return ScaledReal.from_log(det_sign, math.fsum(np.log(np.abs(diag))) + shift)


def error_estimate(phi: Matrix, entry_errs, trials: int = 32, seed: int = 0,
                   prefactor: Optional[ScaledReal] = None, precision_bits: Optional[int] = None) -> float:
    """Spread of prefactor * det under random entry perturbations.

    Each trial multiplies entry (i, j) by 1 + u with u uniform on
    [-entry_errs[i][j], entry_errs[i][j]] (relative errors); the sample
    standard deviation of the resulting values is returned.
    """
    if trials < 10:
        raise ValueError(f"error estimate needs at least 10 trials, got {trials}")
    errs = np.asarray(entry_errs, dtype=float)
    if not np.any(errs):
        return 0.0
    pref = prefactor if prefactor is not None else ScaledReal.one()
    rng = np.random.default_rng(seed)
    s = len(phi)
    values = []
    for _ in range(trials):
        u = rng.uniform(-1.0, 1.0, size=(s, s)) * errs
        perturbed = [[phi[i][j].scale(math.log1p(u[i, j])) for j in range(s)] for i in range(s)]
        values.append((pref * det_scaled(perturbed, precision_bits)).to_float())
    return float(np.std(values, ddof=1))


# -- CDF and outage -------------------------------------------------------------

def _is_suspect(value: float) -> bool:
    return not (-0.01 <= value <= 1.01) or (value != 0.0 and abs(value) < 1e-16)


def cdf_curve(xs: Sequence[float], spec: Spectrum, cfg: MimoConfig, method: str = "hgm",
              opts: CdfOptions = CdfOptions()) -> List[CdfResult]:
    """Pr(phi_s <= x) for each x, sharing HGM trajectories across the grid."""
    _check_model(spec, cfg, method)
    xs = [float(x) for x in xs]
    if any(x < 0 for x in xs):
        raise ModelError(f"CDF arguments must be nonnegative, got {min(xs)}")
    pref = log_prefactor(spec, cfg)
    positive = [x for x in xs if x > 0]
    start = time.perf_counter()
    phis, errs = assemble_grid(positive, spec, cfg, method, opts) if positive else ({}, {})
    share = (time.perf_counter() - start) / max(1, len(set(positive)))

    results = []
    for x in xs:
        if x == 0.0:
            results.append(CdfResult(x=x, value=0.0, method=method))
            continue
        t0 = time.perf_counter()
        det = det_scaled(phis[x], opts.precision_bits)
        value = (pref * det).to_float()
        abs_err = error_estimate(phis[x], errs[x], opts.error_trials, opts.seed, pref, opts.precision_bits)
        suspect = _is_suspect(value)
        if suspect:
            logger.warning(f"CDF at x={x:g} is {value:.3e}: cancellation suspected")
        wall = share + time.perf_counter() - t0
        results.append(CdfResult(x=x, value=value, abs_err_estimate=abs_err, method=method, cancellation=suspect,
                                 wall_time=wall,
                                 diagnostics={"log_det": det.log_mag, "log_prefactor": pref.log_mag,
                                              "max_entry_rel_err": float(np.max(errs[x]))}))
        logger.info(f"cdf {method} x={x:g}: {value:.9e} +- {abs_err:.2e} ({wall:.3f}s)")
    return results


def cdf_largest_eig(x: float, spec: Spectrum, cfg: MimoConfig, method: str = "hgm",
                    opts: CdfOptions = CdfOptions()) -> CdfResult:
    return cdf_curve([x], spec, cfg, method, opts)[0]


def outage_threshold(cfg: MimoConfig, gamma_b: float) -> float:
    """x = (K + 1) Gamma_th / Gamma_b."""
    if cfg.gamma_th is None:
        raise ModelError("outage needs a threshold SNR gamma_th")
    if gamma_b <= 0:
        raise ModelError(f"gamma_b must be positive, got {gamma_b}")
    return (cfg.K + 1.0) * cfg.gamma_th / gamma_b


def outage_probability(spec: Spectrum, cfg: MimoConfig, method: str = "hgm",
                       opts: CdfOptions = CdfOptions()) -> CdfResult:
    if cfg.gamma_b is None:
        raise ModelError("outage needs a transmit SNR gamma_b")
    return cdf_largest_eig(outage_threshold(cfg, cfg.gamma_b), spec, cfg, method, opts)


def outage_curve(spec: Spectrum, cfg: MimoConfig, gamma_b_grid: Sequence[float], method: str = "hgm",
                 opts: CdfOptions = CdfOptions()) -> List[CdfResult]:
    """Outage probability for each Gamma_b; the x-grid is evaluated in one pass."""
    xs = [outage_threshold(cfg, g) for g in gamma_b_grid]
    by_x = {r.x: r for r in cdf_curve(sorted(set(xs)), spec, cfg, method, opts)}
    out = []
    for g, x in zip(gamma_b_grid, xs):
        r = by_x[x]
        out.append(r.model_copy(update={"diagnostics": {**r.diagnostics, "gamma_b": float(g)}}))
    return out


def spectrum_from_k(shape: Sequence[float], K: float, n_t: int, n_r: int) -> Spectrum:
    """Rescale shape so the eigenvalues sum to K n_t n_r."""
    if K <= 0:
        raise ModelError(f"Rician factor must be positive to give a nonzero spectrum, got K={K}")
    if not shape or any(v <= 0 for v in shape):
        raise ModelError("spectrum shape entries must be positive")
    factor = K * n_t * n_r / math.fsum(shape)
    try:
        return Spectrum(lambdas=sorted(v * factor for v in shape))
    except ValidationError as e:
        raise ModelError(f"scaled spectrum is invalid: {e.errors()[0]['msg']}") from e
