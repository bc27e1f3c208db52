"""Coefficient matrices of the ODE systems satisfied by H^k_n and the gauge machinery.

State conventions:
  4-D, in x or lam:  f = (u, theta_lam u, theta_lam^2 u, theta_lam^3 u), u = H^k_n
  3-D, in x:         g = (H, F, theta_x F),  F = 0F1(;n;x lam)
  3-D, in phi:       g = (H, v, theta_phi v), phi = sqrt x, psi = sqrt lam,
                     v = e^{-2 phi psi} 0F1(;n;phi^2 psi^2)
"""
import logging
import math
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import DomainError, SingularPointError
from app.core.models import GaugeTransform, OdeSystem

logger = logging.getLogger(__name__)


def _require_positive(name: str, value: float) -> None:
    if not value > 0:
        raise SingularPointError(f"{name}={value} is at or beyond the singular point 0")


# -- 4-D systems ----------------------------------------------------------------

def lambda_lode_coefficients(x: float, lam: float, k: int, n: int) -> Tuple[float, float, float, float]:
    """(b0, b1, b2, b3) of theta^4 + b3 theta^3 + b2 theta^2 + b1 theta + b0 in theta_lam.

    b3 = 2n-4-lam and b0 = (k+1) x lam^2 are the values for which every row
    of build_P4 is compatible with this operator.
    """
    b3 = 2 * n - 4 - lam
    b2 = n * n - 5 * n + 5 - (x + k + n) * lam
    b1 = x * lam ** 2 - (n - 1) * x * lam - (k + 1) * (n - 1) * lam - (n - 2) * (n - 1)
    b0 = (k + 1) * x * lam ** 2
    return b0, b1, b2, b3


def build_P4(x: float, lam: float, k: int, n: int) -> np.ndarray:
    """d f / dx = P f."""
    _require_positive("x", x)
    _require_positive("lambda", lam)
    a1 = (k + 1) * lam
    a2 = lam - n + 1
    a3 = (k + 1) * lam + n - 1
    a5 = (k + 1) * x * lam ** 2
    a6 = x * lam ** 2 - (n - 1) * (x * lam + (k + 1) * lam + n - 1)
    a7 = -(x + n - 1) * lam + (n - 1) * (n - 2)
    a8 = -(n - 2) * (k + 1) * x * lam ** 2
    a9 = (k - n + 3) * x * lam ** 2 + (n - 1) ** 2 * (x * lam + (k + 1) * lam + n - 1)
    a10 = x * lam ** 2 + (n - 1) ** 2 * (lam - n + 2)
    a11 = -x * lam - (n - 1) ** 2
    m = np.array([
        [a1, a2, -1.0, 0.0],
        [0.0, a3, a2 + 1, -1.0],
        [a5, a6, a7, n - 1.0],
        [a8, a9, a10, a11],
    ], dtype=float)
    return m / (x * lam)


def build_Q4(x: float, lam: float, k: int, n: int) -> np.ndarray:
    """d f / dlam = Q f (companion form)."""
    _require_positive("x", x)
    _require_positive("lambda", lam)
    b0, b1, b2, b3 = lambda_lode_coefficients(x, lam, k, n)
    m = np.zeros((4, 4))
    m[0, 1] = m[1, 2] = m[2, 3] = 1.0
    m[3] = [-b0, -b1, -b2, -b3]
    return m / lam


def p4_system(lam: float, k: int, n: int) -> OdeSystem:
    return OdeSystem(dim=4, matrix_fn=lambda x: build_P4(x, lam, k, n), variable_tag="x",
                     params={"lambda": lam, "k": k, "n": n})


def q4_system(x: float, k: int, n: int) -> OdeSystem:
    return OdeSystem(dim=4, matrix_fn=lambda lam: build_Q4(x, lam, k, n), variable_tag="lambda",
                     params={"x": x, "k": k, "n": n})


def _central(fn: Callable[[float], np.ndarray], t: float, h: float) -> np.ndarray:
    return (fn(t + h) - fn(t - h)) / (2 * h)


def integrability_residual(x: float, lam: float, k: int, n: int, h: float = 1e-5) -> float:
    """max|d_lam P - d_x Q + PQ - QP| relative to ||P|| ||Q|| + ||d_lam P||."""
    P, Q = build_P4(x, lam, k, n), build_Q4(x, lam, k, n)
    dP = _central(lambda l: build_P4(x, l, k, n), lam, h * lam)
    dQ = _central(lambda t: build_Q4(t, lam, k, n), x, h * x)
    res = dP - dQ + P @ Q - Q @ P
    scale = np.abs(P).max() * np.abs(Q).max() + np.abs(dP).max()
    return float(np.abs(res).max() / scale)


def weak_integrability_residual(x: float, lam: float, k: int, n: int, h: float = 1e-5) -> float:
    """The commutator-free condition d_lam P = d_x Q, relative to the derivative sizes."""
    dP = _central(lambda l: build_P4(x, l, k, n), lam, h * lam)
    dQ = _central(lambda t: build_Q4(t, lam, k, n), x, h * x)
    return float(np.abs(dP - dQ).max() / (np.abs(dP).max() + np.abs(dQ).max()))


# -- 3-D systems ----------------------------------------------------------------

def build_A3_x(x: float, lam: float, k: int, n: int) -> np.ndarray:
    """d g / dx for g = (H, F, theta_x F)."""
    _require_positive("x", x)
    if lam < 0:
        raise DomainError(f"lambda must be nonnegative, got {lam}")
    return np.array([
        [0.0, x ** k * math.exp(-x), 0.0],
        [0.0, 0.0, 1.0 / x],
        [0.0, lam, -(n - 1) / x],
    ])


def x_system(lam: float, k: int, n: int) -> OdeSystem:
    return OdeSystem(dim=3, matrix_fn=lambda x: build_A3_x(x, lam, k, n), variable_tag="x",
                     params={"lambda": lam, "k": k, "n": n})


def g2_exponent(phi: float, psi: float) -> float:
    """-phi^2 + 2 phi psi: zero at phi = 0 and phi = 2 psi, maximal (psi^2) at phi = psi."""
    return -phi * phi + 2.0 * phi * psi


def build_A3_phi(phi: float, psi: float, k: int, n: int) -> np.ndarray:
    _require_positive("phi", phi)
    m, log_m = build_A3_phi_log(phi, psi, k, n)
    with np.errstate(over="ignore"):
        return m * np.exp(log_m)


def build_A3_phi_log(phi: float, psi: float, k: int, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """A3_phi split as M * exp(L); only the H <- v coupling carries a log scale."""
    return build_A3_phi_stack(phi, psi, [k], n)


def build_A3_phi_stack(phi: float, psi: float, ks: Sequence[int], n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Stacked system for one column: state (H_{k_1}, ..., H_{k_m}, v, theta_phi v)."""
    _require_positive("phi", phi)
    if psi < 0:
        raise DomainError(f"psi must be nonnegative, got {psi}")
    m = len(ks)
    dim = m + 2
    M = np.zeros((dim, dim))
    L = np.zeros((dim, dim))
    iv, it = m, m + 1
    log_phi = math.log(phi)
    d = g2_exponent(phi, psi)
    for row, k in enumerate(ks):
        M[row, iv] = 2.0
        L[row, iv] = (2 * k + 1) * log_phi + d
    M[iv, it] = 1.0 / phi
    M[it, iv] = -2.0 * (2 * n - 1) * psi
    M[it, it] = -(4.0 * phi * psi + 2.0 * (n - 1)) / phi
    return M, L


class _PhiStack:
    """build_A3_phi_stack with fixed (psi, ks, n); the last phi is cached since
    the integrator asks for M and L separately at the same point."""

    def __init__(self, psi: float, ks: Sequence[int], n: int):
        if psi < 0:
            raise DomainError(f"psi must be nonnegative, got {psi}")
        m = len(ks)
        self.psi = psi
        self.m = m
        self.weights = 2.0 * np.asarray(ks, dtype=float) + 1.0
        self.M0 = np.zeros((m + 2, m + 2))
        self.M0[:m, m] = 2.0
        self.M0[m + 1, m] = -2.0 * (2 * n - 1) * psi
        self.n = n
        self._phi = None
        self._ML = None

    def __call__(self, phi: float) -> Tuple[np.ndarray, np.ndarray]:
        if phi == self._phi:
            return self._ML
        _require_positive("phi", phi)
        m, psi = self.m, self.psi
        M = self.M0.copy()
        M[m, m + 1] = 1.0 / phi
        M[m + 1, m + 1] = -(4.0 * phi * psi + 2.0 * (self.n - 1)) / phi
        L = np.zeros_like(M)
        L[:m, m] = self.weights * math.log(phi) + g2_exponent(phi, psi)
        self._phi, self._ML = phi, (M, L)
        return M, L


def phi_system(psi: float, ks: Sequence[int], n: int) -> OdeSystem:
    ks = list(ks)
    stack = _PhiStack(psi, ks, n)
    return OdeSystem(
        dim=len(ks) + 2,
        matrix_fn=lambda phi: stack(phi)[0],
        log_scale_fn=lambda phi: stack(phi)[1],
        variable_tag="phi",
        params={"psi": psi, "ks": ks, "n": n},
    )


# -- gauges ---------------------------------------------------------------------

def diagonal_gauge(log_diag: Callable[[float], np.ndarray], dlog_diag: Callable[[float], np.ndarray],
                   name: str) -> GaugeTransform:
    dim = len(log_diag(1.0))

    def G(t):
        return np.diag(np.exp(log_diag(t)))

    def G_prime(t):
        return np.diag(np.exp(log_diag(t)) * dlog_diag(t))

    return GaugeTransform(dim=dim, G=G, G_prime=G_prime, log_diag=log_diag, dlog_diag=dlog_diag, name=name)


def identity_gauge(dim: int) -> GaugeTransform:
    return diagonal_gauge(lambda t: np.zeros(dim), lambda t: np.zeros(dim), name="identity")


def _h_mask(dim: int, n_h: int) -> np.ndarray:
    mask = np.zeros(dim)
    mask[:n_h] = 1.0
    return mask


def gauge_G2(psi: float, n_h: int = 1) -> GaugeTransform:
    """diag(e^{-phi^2+2 phi psi}, ..., 1, 1) on the H components; used for phi < psi."""
    if psi < 0:
        raise DomainError(f"psi must be nonnegative, got {psi}")
    mask = _h_mask(n_h + 2, n_h)
    return diagonal_gauge(lambda phi: mask * g2_exponent(phi, psi),
                          lambda phi: mask * (2.0 * psi - 2.0 * phi), name="G2")


def gauge_G3(psi: float, n_h: int = 1) -> GaugeTransform:
    """Constant diag(e^{psi^2}, ..., 1, 1); used for phi >= psi."""
    if psi < 0:
        raise DomainError(f"psi must be nonnegative, got {psi}")
    mask = _h_mask(n_h + 2, n_h)
    return diagonal_gauge(lambda phi: mask * psi * psi, lambda phi: np.zeros(n_h + 2), name="G3")


def dense_gauge(G: Callable[[float], np.ndarray], G_prime: Optional[Callable[[float], np.ndarray]] = None,
                h: float = 1e-6, name: str = "dense") -> GaugeTransform:
    """A general gauge; G' falls back to central differences when not supplied."""
    if G_prime is None:
        def G_prime(t):
            step = h * max(1.0, abs(t))
            return (G(t + step) - G(t - step)) / (2 * step)
    dim = G(1.0).shape[0]
    return GaugeTransform(dim=dim, G=G, G_prime=G_prime, name=name)


def inverse_gauge(g: GaugeTransform) -> GaugeTransform:
    if g.is_diagonal:
        return diagonal_gauge(lambda t: -g.log_diag(t), lambda t: -g.dlog_diag(t), name=f"{g.name}^-1")

    def G(t):
        return np.linalg.inv(g.G(t))

    def G_prime(t):
        inv = np.linalg.inv(g.G(t))
        return -inv @ g.G_prime(t) @ inv

    return GaugeTransform(dim=g.dim, G=G, G_prime=G_prime, name=f"{g.name}^-1")


def _full_log_scale(sys: OdeSystem, t: float) -> np.ndarray:
    if sys.log_scale_fn is None:
        return np.zeros((sys.dim, sys.dim))
    return sys.log_scale_fn(t)


def apply_gauge(sys: OdeSystem, g: GaugeTransform) -> OdeSystem:
    """System for h with f = G h: h' = (G^{-1} A G - G^{-1} G') h.

    Diagonal exponential gauges are applied on the log scale so couplings
    like e^{-phi^2 + 2 phi psi} cancel exactly instead of overflowing.
    """
    if g.dim != sys.dim:
        raise DomainError(f"gauge dimension {g.dim} does not match system dimension {sys.dim}")
    if g.is_diagonal:
        def matrix_fn(t):
            M = sys.matrix_fn(t).astype(float).copy()
            L = _full_log_scale(sys, t)
            diag = np.diag(L).copy()
            if np.any(diag != 0):
                np.fill_diagonal(M, np.diag(M) * np.exp(diag))
            M[np.diag_indices_from(M)] -= g.dlog_diag(t)
            return M

        def log_scale_fn(t):
            d = g.log_diag(t)
            L = _full_log_scale(sys, t) + d[None, :] - d[:, None]
            np.fill_diagonal(L, 0.0)
            return L

        return OdeSystem(dim=sys.dim, matrix_fn=matrix_fn, log_scale_fn=log_scale_fn,
                         variable_tag=sys.variable_tag, params={**sys.params, "gauge": g.name})

    def dense_fn(t):
        Gm = g.G(t)
        try:
            return np.linalg.solve(Gm, sys.matrix(t) @ Gm - g.G_prime(t))
        except np.linalg.LinAlgError as e:
            raise SingularPointError(f"gauge {g.name} is not invertible at {t}") from e

    return OdeSystem(dim=sys.dim, matrix_fn=dense_fn, variable_tag=sys.variable_tag,
                     params={**sys.params, "gauge": g.name})


def gauge_state(g: GaugeTransform, t: float, state: np.ndarray, log_offset: np.ndarray):
    """Map f = state * e^{log_offset} to h = G^{-1} f, keeping the log offsets separate."""
    if g.is_diagonal:
        return state.copy(), log_offset - g.log_diag(t)
    f = state * np.exp(log_offset)
    return np.linalg.solve(g.G(t), f), np.zeros_like(log_offset)
