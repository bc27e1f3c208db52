import math

import numpy as np
import pytest
from scipy import stats

from app.core.errors import AssemblyError, ModelError
from app.core.models import CdfOptions, MimoConfig, Spectrum
from app.core.scaled import ScaledReal
from app.numerics.cdf import (
    assemble_grid,
    cdf_curve,
    cdf_largest_eig,
    det_scaled,
    error_estimate,
    log_prefactor,
    outage_curve,
    outage_probability,
    outage_threshold,
    row_params,
    spectrum_from_k,
)


def scaled(m):
    return [[ScaledReal.from_float(float(v)) for v in row] for row in m]


def test_row_params():
    assert row_params(MimoConfig(n_t=5, n_r=7)) == ([6, 5, 4, 3, 2], 3)
    assert row_params(MimoConfig(n_t=3, n_r=1)) == ([2], 3)


def test_prefactor_single_eigenvalue():
    pref = log_prefactor(Spectrum(lambdas=[2.0]), MimoConfig(n_t=1, n_r=3))
    assert pref.sign == 1
    assert pref.log_mag == pytest.approx(-2.0 - math.log(2.0))


def test_prefactor_sign_follows_vandermonde():
    pref = log_prefactor(Spectrum(lambdas=[1.0, 3.0]), MimoConfig(n_t=2, n_r=2))
    assert pref.sign == -1
    assert pref.log_mag == pytest.approx(-4.0 - math.log(2.0))


def test_prefactor_rejects_near_degenerate_spectrum():
    with pytest.raises(ModelError):
        log_prefactor(Spectrum(lambdas=[1.0, 1.0 + 1e-13]), MimoConfig(n_t=2, n_r=2))


def test_determinant_of_identity():
    d = det_scaled(scaled(np.eye(3)))
    assert d.sign == 1
    assert d.log_mag == pytest.approx(0.0, abs=1e-15)


def test_determinant_beyond_double_range():
    big = ScaledReal.from_log(1, 300 * math.log(10.0))
    m = [[big if i == j else ScaledReal.zero() for j in range(3)] for i in range(3)]
    d = det_scaled(m)
    assert d.log10_mag == pytest.approx(900.0, rel=1e-12)
    assert det_scaled(m, precision_bits=106).log10_mag == pytest.approx(900.0, rel=1e-12)


@pytest.mark.parametrize("bits", [None, 106])
def test_determinant_matches_numpy(bits):
    rng = np.random.default_rng(3)
    a = rng.normal(size=(4, 4))
    assert det_scaled(scaled(a), bits).to_float() == pytest.approx(np.linalg.det(a), rel=1e-11)


def test_singular_determinant_is_zero():
    assert det_scaled(scaled([[1.0, 2.0], [2.0, 4.0]])).is_zero


def test_error_estimate_scales_with_entry_errors():
    rng = np.random.default_rng(5)
    phi = scaled(rng.normal(size=(3, 3)) + 3 * np.eye(3))
    assert error_estimate(phi, np.zeros((3, 3))) == 0.0
    small = error_estimate(phi, np.full((3, 3), 1e-8), seed=11)
    large = error_estimate(phi, np.full((3, 3), 2e-8), seed=11)
    assert small > 0
    assert large / small == pytest.approx(2.0, rel=1e-3)
    with pytest.raises(ValueError):
        error_estimate(phi, np.ones((3, 3)), trials=5)


@pytest.mark.parametrize("t,lam", [(3, 2.0), (5, 4.5)])
def test_single_eigenvalue_is_noncentral_chi_square(t, lam):
    # 2 phi ~ chi'^2 with 2t degrees of freedom and noncentrality 2 lam
    spec, cfg = Spectrum(lambdas=[lam]), MimoConfig(n_t=1, n_r=t)
    for x in (1.0, 4.0, 10.0):
        expected = stats.ncx2.cdf(2 * x, 2 * t, 2 * lam)
        for method in ("series", "hgm"):
            assert cdf_largest_eig(x, spec, cfg, method).value == pytest.approx(expected, rel=1e-8)


def test_methods_agree(small_model):
    spec, cfg = small_model
    xs = [1.0, 3.0, 6.0]
    curves = {m: [r.value for r in cdf_curve(xs, spec, cfg, m)]
              for m in ("series", "quadrature", "hgm", "hgm-enhanced")}
    for values in curves.values():
        assert values == pytest.approx(curves["quadrature"], abs=1e-8)


def test_cdf_is_a_distribution(small_model):
    spec, cfg = small_model
    xs = np.linspace(0.5, 20.0, 20).tolist()
    values = [r.value for r in cdf_curve(xs, spec, cfg)]
    assert all(b >= a - 1e-10 for a, b in zip(values, values[1:]))
    assert all(-1e-10 <= v <= 1 + 1e-10 for v in values)
    assert cdf_largest_eig(0.0, spec, cfg).value == 0.0
    assert cdf_largest_eig(60.0, spec, cfg).value == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(ModelError):
        cdf_largest_eig(-1.0, spec, cfg)


def test_result_carries_diagnostics(small_model):
    spec, cfg = small_model
    res = cdf_largest_eig(3.0, spec, cfg, "quadrature")
    assert not res.cancellation
    assert res.abs_err_estimate < 1e-8
    assert {"log_det", "log_prefactor", "max_entry_rel_err"} <= set(res.diagnostics)


def test_worker_pool_gives_same_grid(small_model):
    spec, cfg = small_model
    xs = [1.0, 2.0]
    serial, _ = assemble_grid(xs, spec, cfg, "quadrature", CdfOptions(threads=1))
    pooled, _ = assemble_grid(xs, spec, cfg, "quadrature", CdfOptions(threads=2))
    for x in xs:
        assert [[e.to_float() for e in row] for row in serial[x]] == \
               [[e.to_float() for e in row] for row in pooled[x]]


def test_spectrum_mismatch_and_unknown_method(small_model):
    spec, _ = small_model
    with pytest.raises(ModelError):
        cdf_largest_eig(1.0, spec, MimoConfig(n_t=3, n_r=3))
    with pytest.raises(ModelError):
        cdf_largest_eig(1.0, spec, MimoConfig(n_t=2, n_r=2), method="magic")


def test_series_failure_names_the_entry():
    spec, cfg = Spectrum(lambdas=[30.0]), MimoConfig(n_t=1, n_r=3)
    with pytest.raises(AssemblyError) as info:
        cdf_largest_eig(30.0, spec, cfg, "series")
    assert info.value.entry == (1, 1)
    assert cdf_largest_eig(30.0, spec, cfg, "hgm").value == pytest.approx(
        stats.ncx2.cdf(60.0, 6, 60.0), rel=1e-8)


def test_spectrum_from_rician_factor():
    spec = spectrum_from_k([1.0, 2.0, 3.0, 4.0], 5.0, 4, 5)
    assert spec.total == pytest.approx(100.0)
    assert spec.lambdas[-1] / spec.lambdas[0] == pytest.approx(4.0)
    with pytest.raises(ModelError):
        spectrum_from_k([1.0, 2.0], 0.0, 2, 2)


def test_outage_threshold():
    cfg = MimoConfig(n_t=2, n_r=2, K=5.0, gamma_th=4.0)
    assert outage_threshold(cfg, 2.0) == pytest.approx(12.0)
    with pytest.raises(ModelError):
        outage_threshold(MimoConfig(n_t=2, n_r=2), 1.0)


def test_outage_curve_is_monotone():
    cfg = MimoConfig(n_t=2, n_r=2, K=5.0, gamma_th=10 ** 0.82)
    spec = spectrum_from_k([1.0, 2.0], cfg.K, 2, 2)
    grid = [10.0, 20.0, 40.0, 80.0]
    outage = [r.value for r in outage_curve(spec, cfg, grid)]
    assert all(b <= a + 1e-10 for a, b in zip(outage, outage[1:]))
    assert [r.diagnostics["gamma_b"] for r in outage_curve(spec, cfg, grid)] == grid

    stricter = cfg.model_copy(update={"gamma_th": 2 * cfg.gamma_th, "gamma_b": 20.0})
    assert outage_probability(spec, stricter).value >= outage[1] - 1e-10
