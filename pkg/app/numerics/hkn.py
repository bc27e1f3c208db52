"""Scalar evaluators for H^k_n(x, lam) = int_0^x y^k e^{-y} 0F1(;n;lam y) dy."""
import logging
import math
import time
from typing import List, Optional, Tuple

import mpmath
import numpy as np
from scipy import integrate, optimize, special

from app.core.config import MP_DPS, STALL_WINDOW
from app.core.errors import ConvergenceError, DomainError
from app.core.models import HknParams, HknResult, SeriesControl
from app.core.scaled import ScaledReal
from app.numerics.specfun import log_of1, lower_incomplete_gamma

logger = logging.getLogger(__name__)

_UNIT_ROUNDOFF = np.finfo(float).eps / 2
# Partial sums carrying fewer than ~6 significant digits never count as converged
_CANCELLATION_LIMIT = 1e-6
# Quadrature window: drop the part of the integrand below e^{-WINDOW} of its peak
_LOG_WINDOW = 80.0


def _check(x: float, lam: float) -> None:
    if x < 0 or lam < 0 or math.isnan(x) or math.isnan(lam):
        raise DomainError(f"H^k_n needs x >= 0 and lambda >= 0, got x={x}, lambda={lam}")


def _shell_indices(N: int) -> Tuple[np.ndarray, np.ndarray]:
    if N == 0:
        return np.zeros(1, dtype=int), np.zeros(1, dtype=int)
    p = np.concatenate([np.full(N + 1, N), np.arange(N)])
    q = np.concatenate([np.arange(N + 1), np.full(N, N)])
    return p, q


def _shell_terms(k: int, n: int, x: float, lam: float, N: int):
    """Terms of shell N (max(p, q) == N), each factor held in native double.

    Returns the terms without the x^{k+1}/(k+1) prefactor, the p indices and a
    mask of terms whose factors are all representable.
    """
    p, q = _shell_indices(N)
    m = p + q
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        factors = (
            special.poch(k + 1, m),
            special.poch(k + 2, m),
            np.power(x, m, dtype=float),
            special.factorial(q),
            np.power(lam, p, dtype=float),
            special.poch(n, p),
            special.factorial(p),
        )
        ok = np.ones(p.shape, dtype=bool)
        for f in factors:
            ok &= np.isfinite(f)
        a, b, c, d, e, f_, g = factors
        terms = (a / b) * (c / d) * (e / f_ / g)
        terms = np.where(q % 2 == 1, -terms, terms)
    ok &= np.isfinite(terms)
    terms = np.where(ok, terms, 0.0)
    return terms, p, ok


def _tail_estimate(prev: float, last: float) -> float:
    """Truncation error after the last shell, extrapolating the shell ratio geometrically."""
    if prev == 0.0:
        return abs(last)
    r = abs(last) / abs(prev)
    return abs(last) * r / (1.0 - r) if r < 0.5 else abs(last)


def _sum_shells(k: int, n: int, x: float, lam: float, ctl: SeriesControl, orders: int):
    sums = [0.0] * (orders + 1)
    shell_lists: List[List[float]] = [[] for _ in range(orders + 1)]
    abs_sum = 0.0
    unrepresentable = 0
    stall_start: Optional[int] = None
    cancelling = False
    prev_shell = last_shell = 0.0
    for N in range(ctl.max_terms):
        terms, p, ok = _shell_terms(k, n, x, lam, N)
        summer = math.fsum if ctl.compensated else np.sum
        shells = [float(summer(terms * p.astype(float) ** j)) for j in range(orders + 1)]
        abs_sum += float(np.sum(np.abs(terms)))
        representable = bool(ok.all())
        small = all(abs(sh) < ctl.eps * abs(s) or (sh == 0.0 and s == 0.0)
                    for sh, s in zip(shells, sums))
        for j in range(orders + 1):
            shell_lists[j].append(shells[j])
            sums[j] = math.fsum(shell_lists[j]) if ctl.compensated else sums[j] + shells[j]
        prev_shell, last_shell = last_shell, shells[0]
        cancelling = abs_sum * _UNIT_ROUNDOFF > _CANCELLATION_LIMIT * abs(sums[0])
        if N >= 1 and representable and small and not cancelling:
            return sums, N, True, None, abs_sum, _tail_estimate(prev_shell, last_shell)
        if representable:
            unrepresentable = 0
            continue
        if stall_start is None:
            stall_start = N
            logger.debug(f"series terms leave double range at N={N} (k={k}, n={n}, x={x}, lambda={lam})")
        unrepresentable += 1
        if unrepresentable >= STALL_WINDOW:
            return sums, stall_start, False, "stall", abs_sum, abs(last_shell)
    reason = "cancellation" if cancelling else "max-terms"
    return sums, ctl.max_terms, False, reason, abs_sum, abs(last_shell)


def hkn_series(p: HknParams, x: float, lam: float, ctl: SeriesControl = SeriesControl()) -> HknResult:
    """Square truncation of the double series for H^k_n in double arithmetic.

    The truncation stops at the first N with |H_N - H_{N-1}| < eps |H_{N-1}|.
    It also reports converged=False when shells keep containing terms whose
    factors overflow (stall) or when cancellation leaves the partial sum
    without significant digits.
    """
    _check(x, lam)
    if x == 0.0:
        return HknResult(value=ScaledReal.zero(), n_terms_or_steps=0, converged=True, method="series")
    start = time.perf_counter()
    sums, N, converged, reason, abs_sum, tail = _sum_shells(p.k, p.n, x, lam, ctl, orders=0)
    log_pref = (p.k + 1) * math.log(x) - math.log(p.k + 1)
    value = ScaledReal.from_float(sums[0]).scale(log_pref)
    err = ScaledReal.from_float(tail + abs_sum * _UNIT_ROUNDOFF).scale(log_pref)
    rel = math.inf if value.is_zero else math.exp(min(err.log_mag - value.log_mag, 700.0))
    if not converged:
        logger.warning(f"series for H^{p.k}_{p.n}({x}, {lam}) did not converge: {reason} at N={N}")
    return HknResult(
        value=value,
        n_terms_or_steps=N,
        converged=converged,
        abs_err_estimate=err.to_float(),
        rel_err_estimate=abs(rel),
        method="series",
        reason=reason,
        diagnostics={"wall_time": time.perf_counter() - start, "abs_term_sum": abs_sum},
    )


def hkn_theta_moments(p: HknParams, x: float, lam: float, ctl: SeriesControl = SeriesControl(),
                      order: int = 3) -> Tuple[List[float], int]:
    """theta_lam^j H^k_n(x, lam) for j = 0..order by termwise differentiation."""
    _check(x, lam)
    if x == 0.0:
        return [0.0] * (order + 1), 0
    sums, N, converged, reason, _, _ = _sum_shells(p.k, p.n, x, lam, ctl, orders=order)
    if not converged:
        raise ConvergenceError(f"theta moments of H^{p.k}_{p.n}({x}, {lam}) did not converge ({reason})",
                               partial=sums, terms_used=N)
    pref = x ** (p.k + 1) / (p.k + 1)
    return [s * pref for s in sums], N


def hkn_series_mp(p: HknParams, x: float, lam: float, ctl: SeriesControl = SeriesControl(),
                  dps: int = 60) -> HknResult:
    """The same truncation in mpmath arithmetic; converges where doubles stall."""
    _check(x, lam)
    if x == 0.0:
        return HknResult(value=ScaledReal.zero(), n_terms_or_steps=0, converged=True, method="series-mp")
    k, n = p.k, p.n
    with mpmath.workdps(dps):
        X, L = mpmath.mpf(x), mpmath.mpf(lam)
        eps = mpmath.mpf(ctl.eps)
        total = mpmath.mpf(0)
        for N in range(ctl.max_terms):
            shell = mpmath.mpf(0)
            for pp, qq in zip(*_shell_indices(N)):
                pp, qq = int(pp), int(qq)
                t = (mpmath.mpf(k + 1) / (k + 1 + pp + qq) * X ** (pp + qq) * L ** pp
                     / (mpmath.factorial(qq) * mpmath.rf(n, pp) * mpmath.factorial(pp)))
                shell += -t if qq % 2 else t
            prev = total
            total += shell
            if N >= 1 and abs(shell) < eps * abs(prev):
                value = total * X ** (k + 1) / (k + 1)
                err = abs(shell) * X ** (k + 1) / (k + 1)
                return HknResult(value=ScaledReal.from_mpf(value), n_terms_or_steps=N, converged=True,
                                 abs_err_estimate=float(err), rel_err_estimate=float(err / abs(value)),
                                 method="series-mp")
        value = total * X ** (k + 1) / (k + 1)
    logger.warning(f"mp series for H^{k}_{n}({x}, {lam}) did not converge in {ctl.max_terms} shells")
    return HknResult(value=ScaledReal.from_mpf(value), n_terms_or_steps=ctl.max_terms, converged=False,
                     method="series-mp", reason="max-terms")


def log_integrand(k: int, n: int, lam: float, y: float) -> float:
    if y <= 0.0:
        return 0.0 if k == 0 else -math.inf
    return k * math.log(y) - y + log_of1(n, lam * y)


def integration_window(k: int, n: int, x: float, lam: float) -> Tuple[float, float, float, float]:
    """(a, peak, b, log_peak): the part of [0, x] where the integrand is within e^{-80} of its peak."""
    f = lambda y: log_integrand(k, n, lam, y)
    res = optimize.minimize_scalar(lambda y: -f(y), bounds=(0.0, x), method="bounded",
                                   options={"xatol": 1e-10 * max(1.0, x)})
    peak = float(res.x)
    for cand in (x, 0.0):
        if f(cand) >= f(peak):
            peak = cand
    top = f(peak)
    level = top - _LOG_WINDOW
    a, b = 0.0, x
    if peak > 0.0 and f(0.0) < level:
        lo = peak * 1e-300 if k else 0.0
        if f(lo) < level:
            a = optimize.brentq(lambda y: f(y) - level, lo, peak, xtol=1e-12 * max(1.0, peak))
    if peak < x and f(x) < level:
        b = optimize.brentq(lambda y: f(y) - level, peak, x, xtol=1e-12 * max(1.0, x))
    return a, peak, b, top


def hkn_quadrature(p: HknParams, x: float, lam: float, tol: float = 1e-13) -> HknResult:
    """Adaptive Gauss-Kronrod quadrature of the integrand scaled by its peak.

    The integrand is evaluated in log form and divided by its maximum on
    [0, x], so arguments where e^{2 sqrt(lam y)} overflows stay finite. The
    result carries the peak back in as a log offset.
    """
    _check(x, lam)
    if tol <= 0:
        raise DomainError(f"quadrature tolerance must be positive, got {tol}")
    if x == 0.0:
        return HknResult(value=ScaledReal.zero(), n_terms_or_steps=0, converged=True, method="quadrature")
    start = time.perf_counter()
    k, n = p.k, p.n
    if lam == 0.0:
        value = lower_incomplete_gamma(k + 1, x)
        return HknResult(value=ScaledReal.from_float(value), converged=True, method="quadrature",
                         abs_err_estimate=abs(value) * 1e-15, rel_err_estimate=1e-15,
                         diagnostics={"closed_form": True})
    a, peak, b, top = integration_window(k, n, x, lam)
    g = lambda y: math.exp(log_integrand(k, n, lam, y) - top)
    points = [peak] if a < peak < b else None
    # full_output turns QUADPACK warnings into a trailing message element
    out = integrate.quad(g, a, b, points=points, epsabs=0.0, epsrel=max(tol, 1e-14),
                         limit=1000, full_output=1)
    val, err, info = out[:3]
    converged = len(out) < 4
    reason = None
    if not converged:
        reason = "subdivision budget exhausted"
        logger.warning(f"quadrature for H^{k}_{n}({x}, {lam}) did not reach tol={tol}: {out[3]}")
    value = ScaledReal.from_float(val).scale(top)
    return HknResult(
        value=value,
        n_terms_or_steps=int(info.get("neval", 0)),
        converged=converged,
        abs_err_estimate=ScaledReal.from_float(err).scale(top).to_float(),
        rel_err_estimate=err / val if val else math.inf,
        method="quadrature",
        reason=reason,
        diagnostics={"window": (a, b), "peak": peak, "wall_time": time.perf_counter() - start},
    )


def hkn_quadrature_mp(p: HknParams, x: float, lam: float, dps: int = MP_DPS) -> HknResult:
    """Tanh-sinh quadrature in mpmath over the same window; returns an mpf-backed value."""
    _check(x, lam)
    if x == 0.0:
        return HknResult(value=ScaledReal.zero(), converged=True, method="quadrature-mp")
    k, n = p.k, p.n
    a, peak, b, _ = integration_window(k, n, x, lam) if lam > 0 else (0.0, x, x, 0.0)
    nodes = sorted({a, peak, b})
    if len(nodes) == 2:
        nodes = list(np.linspace(a, b, 5))
    with mpmath.workdps(dps):
        L = mpmath.mpf(lam)
        f = lambda y: y ** k * mpmath.exp(-y) * mpmath.hyp0f1(n, L * y)
        value, err = mpmath.quad(f, [mpmath.mpf(t) for t in nodes], error=True)
        rel = float(abs(err / value)) if value else math.inf
    return HknResult(value=ScaledReal.from_mpf(value), converged=True, method="quadrature-mp",
                     abs_err_estimate=float(min(abs(err), mpmath.mpf("1e300"))), rel_err_estimate=rel)


def hkn_saddle_limit(p: HknParams, lam: float) -> ScaledReal:
    """Saddle-point approximation of lim_{x -> inf} H^k_n(x, lam)."""
    a = 1 + 2 * p.k - p.n + 0.5
    if lam <= 0 or lam + 2 * a <= 0:
        raise DomainError(f"saddle limit needs lambda > 0 and lambda + 2(1+2k-n+1/2) > 0, "
                          f"got lambda={lam}, k={p.k}, n={p.n}")
    r = math.sqrt(lam)
    s0 = 0.5 * (r + math.sqrt(lam + 2 * a))
    P = (s0 - r) ** 2 - a * math.log(s0)
    P2 = 2.0 + a / s0 ** 2
    log_value = (math.log(2.0) + special.gammaln(2 * p.n - 1) - special.gammaln(p.n - 0.5)
                 + (0.5 - p.n) * math.log(4.0 * r) + lam - P + 0.5 * math.log(2 * math.pi / P2))
    return ScaledReal.from_log(1, log_value)


def hkn_limit(p: HknParams, lam: float, dps: int = MP_DPS) -> ScaledReal:
    """Exact lim_{x -> inf} H^k_n(x, lam) = Gamma(k+1) 1F1(k+1; n; lam)."""
    if lam < 0:
        raise DomainError(f"lambda must be nonnegative, got {lam}")
    with mpmath.workdps(dps):
        return ScaledReal.from_mpf(mpmath.gamma(p.k + 1) * mpmath.hyp1f1(p.k + 1, p.n, mpmath.mpf(lam)))
