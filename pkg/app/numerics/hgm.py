"""HGM drivers: integrate the Pfaffian systems from a baseline initial condition."""
import logging
import math
import time
from typing import Dict, List, Optional, Sequence, Tuple

import mpmath
import numpy as np

from app.core.config import LAMBDA0, MP_DPS, RK_STEP
from app.core.errors import ConvergenceError, DomainError, HandoffError
from app.core.models import (
    CdfOptions,
    ColumnResult,
    EvalResult,
    HknParams,
    InitialCondition,
    RkOptions,
    SeriesControl,
)
from app.core.scaled import ScaledReal
from app.numerics.hkn import hkn_quadrature, hkn_series, hkn_theta_moments
from app.numerics.pfaffian import (
    apply_gauge,
    gauge_G2,
    gauge_G3,
    gauge_state,
    p4_system,
    phi_system,
    q4_system,
)
from app.numerics.runge_kutta import rk_integrate
from app.numerics.specfun import of1, of1_theta

logger = logging.getLogger(__name__)

# 0F1 arguments above this go through mpmath so theta_phi v keeps its digits
_NATIVE_Z_LIMIT = 100.0
# Series initial conditions are summed to this tolerance
_IC_EPS = 1e-15
# Largest relative drift of (v, theta_phi v) tolerated at the G2 -> G3 handoff
_HANDOFF_TOL = 1e-6


def _v_components(n: int, x0: float, lam: float) -> Tuple[float, float, float]:
    """(v, theta_phi v, log offset) with the pair scaled by the shared offset."""
    z = x0 * lam
    a = 2.0 * math.sqrt(x0) * math.sqrt(lam)
    if z == 0.0:
        return 1.0, 0.0, 0.0
    if z <= _NATIVE_Z_LIMIT:
        F, _ = of1(n, z)
        TF, _ = of1_theta(n, z)
        e = math.exp(-a)
        return e * F, e * (2.0 * TF - a * F), 0.0
    with mpmath.workdps(MP_DPS):
        Z = mpmath.mpf(z)
        F = mpmath.hyp0f1(n, Z)
        TF = Z * mpmath.hyp0f1(n + 1, Z) / n
        log_v = float(mpmath.log(F) - mpmath.mpf(a))
        ratio = float(2 * TF / F - mpmath.mpf(a))
    return 1.0, ratio, log_v


def make_column_ic(ks: Sequence[int], n: int, lam: float, x0: float, method: str = "series",
                   ctl: SeriesControl = SeriesControl(), quad_tol: float = 1e-13) -> InitialCondition:
    """State (H_{k_1}, ..., H_{k_m}, v, theta_phi v) at phi0 = sqrt(x0)."""
    if x0 <= 0:
        raise DomainError(f"initial point must be positive, got x0={x0}")
    if lam < 0:
        raise DomainError(f"lambda must be nonnegative, got {lam}")
    if method == "series":
        ctl = ctl.model_copy(update={"eps": min(ctl.eps, _IC_EPS)})
    state, offset = [], []
    rel_err = abs_err = 0.0
    for k in ks:
        p = HknParams(k=k, n=n)
        res = hkn_series(p, x0, lam, ctl) if method == "series" else hkn_quadrature(p, x0, lam, quad_tol)
        if not res.converged:
            raise ConvergenceError(f"{method} initial condition for H^{k}_{n}({x0}, {lam}) did not converge",
                                   partial=res.value, terms_used=res.n_terms_or_steps,
                                   diagnostics={"reason": res.reason})
        if res.value.is_zero:
            state.append(0.0)
            offset.append(0.0)
        else:
            state.append(float(res.value.sign))
            offset.append(res.value.log_mag)
        rel_err = max(rel_err, res.rel_err_estimate)
        abs_err = max(abs_err, res.abs_err_estimate)
    v, tv, log_v = _v_components(n, x0, lam)
    state += [v, tv]
    offset += [log_v, log_v]
    return InitialCondition(var=math.sqrt(x0), state=np.array(state), log_offset=np.array(offset),
                            provenance="series" if method == "series" else "quadrature",
                            est_abs_error=abs_err, est_rel_error=rel_err, variable_tag="phi")


def make_ic(k: int, n: int, lam: float, x0: float, method: str = "series",
            ctl: SeriesControl = SeriesControl(), quad_tol: float = 1e-13) -> InitialCondition:
    return make_column_ic([k], n, lam, x0, method, ctl, quad_tol)


def ic_values(ic: InitialCondition) -> List[ScaledReal]:
    return [ScaledReal.from_float(float(s)).scale(float(o)) for s, o in zip(ic.state, ic.log_offset)]


def _read(state: np.ndarray, offset: np.ndarray, m: int, extra: Optional[np.ndarray] = None) -> List[ScaledReal]:
    out = []
    for i in range(m):
        shift = offset[i] + (extra[i] if extra is not None else 0.0)
        out.append(ScaledReal.from_float(float(state[i])).scale(float(shift)))
    return out


def _integrate_plain(ks: List[int], n: int, psi: float, ic: InitialCondition, phis: List[float],
                     rk: RkOptions) -> Tuple[Dict[float, List[ScaledReal]], int]:
    m = len(ks)
    sys = phi_system(psi, ks, n)
    traj = rk_integrate(sys, ic, max(phis), rk, stops=phis)
    out = {}
    for phi in phis:
        cp = traj.at(phi)
        out[phi] = _read(cp.state, cp.log_offset, m)
    return out, traj.n_steps


def _check_handoff(n: int, psi: float, m: int, state: np.ndarray, offset: np.ndarray) -> None:
    """Compare the integrated (v, theta_phi v) at phi = psi with a direct evaluation."""
    lam = psi * psi
    v, tv, log_v = _v_components(n, lam, lam)
    expected = np.array([v, tv])
    with np.errstate(over="ignore", invalid="ignore"):
        got = state[m:] * np.exp(offset[m:] - log_v)
        jump = float(np.max(np.abs(got - expected)) / np.max(np.abs(expected)))
    if not jump <= _HANDOFF_TOL:
        raise HandoffError(f"state at the gauge handoff phi=psi={psi} is off by {jump:.3e} relative",
                           diagnostics={"jump": jump, "psi": psi})


def _integrate_gauged(ks: List[int], n: int, psi: float, ic: InitialCondition, phis: List[float],
                      rk: RkOptions) -> Tuple[Dict[float, List[ScaledReal]], int]:
    """G2 on phi < psi, G3 on phi >= psi, with the state handed over at phi = psi."""
    m = len(ks)
    base = phi_system(psi, ks, n)
    g2, g3 = gauge_G2(psi, n_h=m), gauge_G3(psi, n_h=m)
    phi_end = max(phis)
    out: Dict[float, List[ScaledReal]] = {}
    steps = 0
    phi, state, offset = ic.var, np.asarray(ic.state, float), np.asarray(ic.log_offset, float)

    if phi < psi:
        state, offset = gauge_state(g2, phi, state, offset)
        seg_end = min(psi, phi_end)
        seg_stops = [p for p in phis if p <= seg_end]
        seg_ic = InitialCondition(var=phi, state=state, log_offset=offset, provenance=ic.provenance)
        traj = rk_integrate(apply_gauge(base, g2), seg_ic, seg_end, rk, stops=seg_stops)
        steps += traj.n_steps
        for p in seg_stops:
            cp = traj.at(p)
            out[p] = _read(cp.state, cp.log_offset, m, g2.log_diag(p))
        if phi_end <= psi:
            return out, steps
        last = traj.final
        _check_handoff(n, psi, m, last.state, last.log_offset + g2.log_diag(psi))
        phi = psi
        state = last.state
        offset = last.log_offset + g2.log_diag(psi) - g3.log_diag(psi)
    else:
        state, offset = gauge_state(g3, phi, state, offset)

    seg_stops = [p for p in phis if p >= phi]
    seg_ic = InitialCondition(var=phi, state=state, log_offset=offset, provenance=ic.provenance)
    traj = rk_integrate(apply_gauge(base, g3), seg_ic, phi_end, rk, stops=seg_stops)
    steps += traj.n_steps
    for p in seg_stops:
        cp = traj.at(p)
        out[p] = _read(cp.state, cp.log_offset, m, g3.log_diag(p))
    return out, steps


def hgm_column(ks: Sequence[int], n: int, lam: float, xs: Sequence[float], opts: CdfOptions = CdfOptions(),
               enhanced: bool = False, ic: Optional[InitialCondition] = None) -> ColumnResult:
    """H^k_n(x, lam) for all k in ks and x in xs from one phi-trajectory.

    Plain mode starts from a series initial condition at opts.x0. Enhanced
    mode starts from quadrature at opts.ic_fraction * min(xs) and integrates
    the gauged systems, so values far outside double range come back as
    ScaledReal.
    """
    start = time.perf_counter()
    ks = list(ks)
    xs_sorted = sorted({float(x) for x in xs})
    if not xs_sorted or xs_sorted[0] <= 0:
        raise DomainError(f"HGM targets must be positive, got {xs}")
    if lam < 0:
        raise DomainError(f"lambda must be nonnegative, got {lam}")
    psi = math.sqrt(lam)
    if ic is None:
        if enhanced:
            ic = make_column_ic(ks, n, lam, opts.ic_fraction * xs_sorted[0], "quadrature",
                                opts.series, opts.quad_tol)
        else:
            x0 = min(opts.x0, xs_sorted[0])
            try:
                ic = make_column_ic(ks, n, lam, x0, "series", opts.series)
            except ConvergenceError:
                logger.warning(f"series initial condition failed at x0={x0}, lambda={lam}; using quadrature")
                ic = make_column_ic(ks, n, lam, x0, "quadrature", opts.series, opts.quad_tol)
    phis = [math.sqrt(x) for x in xs_sorted]
    if phis[0] < ic.var:
        raise DomainError(f"initial condition at phi={ic.var} lies beyond target phi={phis[0]}")
    targets = [p for p in phis if p > ic.var]
    values: Dict[float, List[ScaledReal]] = {}
    steps = 0
    if targets:
        integrate = _integrate_gauged if enhanced else _integrate_plain
        values, steps = integrate(ks, n, psi, ic, targets, opts.rk)
    at_start = ic_values(ic)[: len(ks)]
    table = [values.get(p, at_start) for p in phis]
    wall = time.perf_counter() - start
    method = "hgm-enhanced" if enhanced else "hgm"
    logger.info(f"{method} column n={n} lambda={lam:g}: {len(ks)} rows x {len(xs_sorted)} points, "
                f"{steps} steps, {wall:.3f}s")
    return ColumnResult(xs=xs_sorted, ks=ks, values=table, steps=steps, method=method,
                        rel_err_estimate=ic.est_rel_error + opts.rk.rel_tol,
                        diagnostics={"ic_var": ic.var, "ic_provenance": ic.provenance, "wall_time": wall})


def hgm_x(k: int, n: int, lam: float, x0: float, x: float, opts: RkOptions = RkOptions(),
          ctl: SeriesControl = SeriesControl()) -> EvalResult:
    """H^k_n(x, lam) by the stabile 3-D system in phi from a series start at x0."""
    if x < x0:
        raise DomainError(f"target x={x} lies below the initial point x0={x0}")
    col = hgm_column([k], n, lam, [x], CdfOptions(x0=x0, rk=opts, series=ctl))
    return EvalResult(value=col.values[0][0], rel_err_estimate=col.rel_err_estimate, method="hgm",
                      steps=col.steps, wall_time=col.diagnostics["wall_time"], diagnostics=col.diagnostics)


def hgm_x_enhanced(k: int, n: int, lam: float, ic: InitialCondition, x: float,
                   opts: RkOptions = RkOptions()) -> EvalResult:
    """H^k_n(x, lam) through the G2/G3-gauged systems; the ic comes from make_ic."""
    if ic.provenance != "quadrature":
        logger.debug(f"enhanced HGM started from a {ic.provenance} initial condition")
    col = hgm_column([k], n, lam, [x], CdfOptions(rk=opts), enhanced=True, ic=ic)
    return EvalResult(value=col.values[0][0], rel_err_estimate=col.rel_err_estimate, method="hgm-enhanced",
                      steps=col.steps, wall_time=col.diagnostics["wall_time"], diagnostics=col.diagnostics)


def hgm_lambda_curve(k: int, n: int, x: float, lambda0: float, lams: Sequence[float],
                     opts: RkOptions = RkOptions(mode="fixed", step=RK_STEP),
                     ctl: SeriesControl = SeriesControl(), reference: bool = False) -> List[EvalResult]:
    """H^k_n(x, lam) along the 4-D lambda-direction system, one trajectory for all lams.

    This direction is not stabile: errors in the start vector excite a
    solution growing like e^lam, so results drift away from the truth as lam
    grows. With reference=True each result records its deviation from
    quadrature.
    """
    lams = sorted({float(l) for l in lams})
    if not lams or lams[0] < lambda0:
        raise DomainError(f"lambda targets must be >= lambda0={lambda0}, got {lams}")
    start = time.perf_counter()
    p = HknParams(k=k, n=n)
    moments, N = hkn_theta_moments(p, x, lambda0, ctl, order=3)
    ic = InitialCondition(var=lambda0, state=np.array(moments), provenance="series", variable_tag="lambda")
    traj = rk_integrate(q4_system(x, k, n), ic, lams[-1], opts, stops=lams)
    results = []
    for lam in lams:
        h = moments[0] if lam == lambda0 else float(traj.at(lam).state[0])
        diag = {"lambda": lam, "ic_terms": N}
        if reference:
            ref = hkn_quadrature(p, x, lam).value.to_float()
            diag["reference"] = ref
            diag["deviation"] = abs(h - ref) / abs(ref) if ref else math.inf
        results.append(EvalResult(value=ScaledReal.from_float(h), method="hgm-lambda", steps=traj.n_steps,
                                  terms_used=N, wall_time=time.perf_counter() - start, diagnostics=diag))
    logger.info(f"hgm-lambda H^{k}_{n}(x={x}): {lambda0:g} -> {lams[-1]:g} in {traj.n_steps} steps")
    return results


def hgm_lambda(k: int, n: int, x: float, lambda0: float = LAMBDA0, lam: float = 1.0,
               opts: RkOptions = RkOptions(mode="fixed", step=RK_STEP),
               ctl: SeriesControl = SeriesControl(), reference: bool = False) -> EvalResult:
    return hgm_lambda_curve(k, n, x, lambda0, [lam], opts, ctl, reference)[-1]


def hgm_x_4d(k: int, n: int, lam: float, x0: float, x: float, opts: RkOptions = RkOptions(),
             ctl: SeriesControl = SeriesControl()) -> EvalResult:
    """H^k_n(x, lam) along the 4-D x-direction system from a series start at x0."""
    if lam <= 0:
        raise DomainError(f"the 4-D system needs lambda > 0, got {lam}")
    start = time.perf_counter()
    p = HknParams(k=k, n=n)
    moments, N = hkn_theta_moments(p, x0, lam, ctl, order=3)
    ic = InitialCondition(var=x0, state=np.array(moments), provenance="series", variable_tag="x")
    traj = rk_integrate(p4_system(lam, k, n), ic, x, opts)
    return EvalResult(value=ScaledReal.from_float(float(traj.final.state[0])), method="hgm-4d",
                      steps=traj.n_steps, terms_used=N, wall_time=time.perf_counter() - start)
