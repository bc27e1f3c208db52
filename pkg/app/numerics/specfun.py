import logging
import math
from typing import Tuple, Union

import mpmath
import numpy as np
from scipy import special

from app.core.config import MP_DPS
from app.core.errors import ConvergenceError, DomainError, NumericalError
from app.core.models import SeriesControl
from app.core.scaled import ScaledReal

logger = logging.getLogger(__name__)

_LOG_2SQRTPI = math.log(2.0 * math.sqrt(math.pi))


def pochhammer(a: float, i: int) -> float:
    """Rising factorial (a)_i; raises when the value leaves double range."""
    if i < 0:
        raise DomainError(f"pochhammer order must be nonnegative, got {i}")
    if i == 0:
        return 1.0
    value = float(special.poch(a, i))
    if not math.isfinite(value):
        raise NumericalError(f"(a)_i overflows for a={a}, i={i}; use log_pochhammer")
    return value


def log_pochhammer(a: float, i: int) -> Tuple[int, float]:
    """Sign and log-magnitude of (a)_i."""
    if i < 0:
        raise DomainError(f"pochhammer order must be nonnegative, got {i}")
    if i == 0:
        return 1, 0.0
    if a > 0:
        return 1, float(special.gammaln(a + i) - special.gammaln(a))
    sign, acc = 1, 0.0
    for j in range(i):
        f = a + j
        if f == 0.0:
            return 0, -math.inf
        if f < 0:
            sign = -sign
        acc += math.log(abs(f))
    return sign, acc


def _check_args(n: int, z: float) -> None:
    if n < 1:
        raise DomainError(f"0F1 parameter n must be a positive integer, got {n}")
    if z < 0 or math.isnan(z):
        raise DomainError(f"0F1 argument must be nonnegative, got {z}")


def _of1_terms(n: int, z: float, ctl: SeriesControl, weighted: bool) -> Tuple[float, int]:
    term = 1.0
    terms = [0.0 if weighted else 1.0]
    total = terms[0]
    for i in range(1, ctl.max_terms):
        term *= z / ((n + i - 1) * i)
        contrib = i * term if weighted else term
        terms.append(contrib)
        total = math.fsum(terms) if ctl.compensated else total + contrib
        if not math.isfinite(total):
            raise ConvergenceError(f"0F1 series overflowed at term {i} (n={n}, z={z})",
                                   partial=total, terms_used=i + 1)
        if abs(contrib) < ctl.eps * abs(total):
            return total, i + 1
        if total == 0.0 and term == 0.0:
            return total, i + 1
    raise ConvergenceError(f"0F1 series did not converge in {ctl.max_terms} terms (n={n}, z={z})",
                           partial=total, terms_used=ctl.max_terms)


def of1(n: int, z: float, ctl: SeriesControl = SeriesControl()) -> Tuple[float, int]:
    """0F1(;n;z) by series; returns (value, terms_used)."""
    _check_args(n, z)
    if z == 0.0:
        return 1.0, 1
    return _of1_terms(n, z, ctl, weighted=False)


def of1_theta(n: int, z: float, ctl: SeriesControl = SeriesControl()) -> Tuple[float, int]:
    """theta_z 0F1(;n;z) = sum i z^i / ((n)_i i!)."""
    _check_args(n, z)
    if z == 0.0:
        return 0.0, 1
    return _of1_terms(n, z, ctl, weighted=True)


def log_of1(n: int, z: float) -> float:
    """log 0F1(;n;z), valid far beyond double range of the value itself."""
    _check_args(n, z)
    if z == 0.0:
        return 0.0
    if z < 1.0:
        return math.log(of1(n, z)[0])
    r = 2.0 * math.sqrt(z)
    scaled = float(special.ive(n - 1, r))
    if scaled > 0.0 and math.isfinite(scaled):
        return special.gammaln(n) + 0.5 * (1 - n) * math.log(z) + math.log(scaled) + r
    logger.debug(f"ive underflow at n={n}, z={z}; falling back to mpmath")
    with mpmath.workdps(MP_DPS):
        return float(mpmath.log(mpmath.hyp0f1(n, z)))


def log_of1_theta(n: int, z: float) -> float:
    """log theta_z 0F1(;n;z) using theta_z 0F1(;n;z) = z 0F1(;n+1;z) / n."""
    _check_args(n, z)
    if z == 0.0:
        return -math.inf
    return math.log(z) + log_of1(n + 1, z) - math.log(n)


def of1_mp(n: int, z, dps: int = MP_DPS):
    with mpmath.workdps(dps):
        return +mpmath.hyp0f1(n, mpmath.mpf(z))


def of1_theta_mp(n: int, z, dps: int = MP_DPS):
    with mpmath.workdps(dps):
        z = mpmath.mpf(z)
        return z * mpmath.hyp0f1(n + 1, z) / n


def asymptotic_constant(n: int) -> float:
    """c_n with 0F1(;n;z) ~ c_n e^{2 sqrt z} (sqrt z)^{1/2-n}, from I_nu(r) ~ e^r / sqrt(2 pi r)."""
    if n < 1:
        raise DomainError(f"n must be a positive integer, got {n}")
    return math.exp(special.gammaln(n) - _LOG_2SQRTPI)


def fit_asymptotic_constant(n: int, zs=(1e4, 1e5, 1e6), dps: int = 40) -> float:
    """Numerical c_n: extrapolate the series-to-envelope ratio to z = infinity.

    The ratio behaves like c_n (1 + a/sqrt z + b/z + ...), so a quadratic fit
    in 1/sqrt z evaluated at 0 recovers c_n.
    """
    u, ratios = [], []
    with mpmath.workdps(dps):
        for z in zs:
            z = mpmath.mpf(z)
            rz = mpmath.sqrt(z)
            envelope = mpmath.exp(2 * rz) * rz ** (mpmath.mpf(1) / 2 - n)
            ratios.append(float(mpmath.hyp0f1(n, z) / envelope))
            u.append(float(1 / rz))
    coeffs = np.polyfit(u, ratios, deg=min(2, len(zs) - 1))
    return float(coeffs[-1])


def log_of1_asymptotic(n: int, z: float) -> float:
    if z <= 0:
        raise DomainError(f"asymptotic form needs z > 0, got {z}")
    rz = math.sqrt(z)
    return math.log(asymptotic_constant(n)) + 2.0 * rz + (0.5 - n) * math.log(rz)


def of1_asymptotic(n: int, z: float) -> Union[float, ScaledReal]:
    """Large-z form of 0F1; a ScaledReal comes back when the value leaves double range."""
    log_value = log_of1_asymptotic(n, z)
    value = ScaledReal.from_log(1, log_value)
    if value.exceeds_native():
        return value
    return value.to_float()


def lower_incomplete_gamma(a: float, x: float) -> float:
    """gamma(a, x) = int_0^x y^{a-1} e^{-y} dy."""
    if a <= 0:
        raise DomainError(f"incomplete gamma needs a > 0, got {a}")
    if x < 0:
        raise DomainError(f"incomplete gamma needs x >= 0, got {x}")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return float(special.gamma(a))
    return float(special.gammainc(a, x) * special.gamma(a))


def regularized_lower_gamma(a: float, x: float) -> float:
    return float(special.gammainc(a, x))
