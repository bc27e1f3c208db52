import math

import numpy as np
import pytest

from app.core.errors import DomainError
from app.core.models import HknParams, SeriesControl
from app.numerics.hkn import (
    hkn_limit,
    hkn_quadrature,
    hkn_quadrature_mp,
    hkn_saddle_limit,
    hkn_series,
    hkn_series_mp,
    hkn_theta_moments,
    integration_window,
)
from app.numerics.specfun import lower_incomplete_gamma


def test_zero_lambda_is_incomplete_gamma():
    res = hkn_series(HknParams(k=2, n=3), 1.5, 0.0)
    assert res.converged
    assert res.real == pytest.approx(lower_incomplete_gamma(3, 1.5), rel=1e-10)
    quad = hkn_quadrature(HknParams(k=2, n=3), 1.5, 0.0)
    assert quad.real == pytest.approx(lower_incomplete_gamma(3, 1.5), rel=1e-13)


def test_x_zero_gives_zero():
    assert hkn_series(HknParams(k=0, n=1), 0.0, 3.0).value.is_zero
    assert hkn_quadrature(HknParams(k=0, n=1), 0.0, 3.0).value.is_zero


@pytest.mark.parametrize("k,n,x,lam", [(2, 3, 5.0, 5.0), (0, 1, 1.0, 2.0), (4, 2, 3.0, 0.7)])
def test_series_agrees_with_quadrature(k, n, x, lam):
    p = HknParams(k=k, n=n)
    s = hkn_series(p, x, lam)
    q = hkn_quadrature(p, x, lam)
    assert s.converged and q.converged
    assert s.real == pytest.approx(q.real, rel=1e-8)


def test_quadrature_matches_mpmath():
    p = HknParams(k=1, n=2)
    assert hkn_quadrature(p, 2.0, 3.0).real == pytest.approx(hkn_quadrature_mp(p, 2.0, 3.0).real, rel=1e-11)


def test_series_stalls_at_large_arguments():
    res = hkn_series(HknParams(k=2, n=3), 30.0, 30.0)
    assert not res.converged
    assert res.reason == "stall"
    # (4)_168 is the first factor past double range
    assert res.n_terms_or_steps == 84


def test_big_number_series_converges_where_doubles_stall():
    p = HknParams(k=2, n=3)
    mp = hkn_series_mp(p, 30.0, 30.0, SeriesControl(eps=1e-12))
    assert mp.converged
    assert mp.n_terms_or_steps > 84
    assert mp.real == pytest.approx(hkn_quadrature(p, 30.0, 30.0).real, rel=1e-8)


def test_compensated_summation_agrees():
    p = HknParams(k=3, n=2)
    plain = hkn_series(p, 4.0, 4.0)
    comp = hkn_series(p, 4.0, 4.0, SeriesControl(compensated=True))
    assert comp.real == pytest.approx(plain.real, rel=1e-12)


def test_theta_moments_match_finite_differences():
    p = HknParams(k=1, n=2)
    x, lam, h = 1.0, 0.5, 1e-4
    moments, _ = hkn_theta_moments(p, x, lam, SeriesControl(eps=1e-15))
    up = hkn_series(p, x, lam * math.exp(h), SeriesControl(eps=1e-15)).real
    down = hkn_series(p, x, lam * math.exp(-h), SeriesControl(eps=1e-15)).real
    # theta_lam = d / d log lam
    assert moments[0] == pytest.approx(hkn_series(p, x, lam).real, rel=1e-10)
    assert moments[1] == pytest.approx((up - down) / (2 * h), rel=1e-6)


def test_large_lambda_quadrature_stays_in_log_form():
    # e^{-lam} H^0_1(lam, lam) tends to 1/2
    lam = 1e8
    res = hkn_quadrature(HknParams(k=0, n=1), lam, lam)
    assert res.converged
    assert math.exp(res.value.log_mag - lam) == pytest.approx(0.5, abs=1e-3)


def test_integration_window_brackets_peak():
    a, peak, b, top = integration_window(2, 3, 50.0, 10.0)
    assert 0.0 <= a <= peak <= b <= 50.0
    assert np.isfinite(top)


def test_saddle_limit_tracks_exact_limit():
    p = HknParams(k=2, n=3)
    approx = hkn_saddle_limit(p, 400.0)
    exact = hkn_limit(p, 400.0)
    assert math.exp(approx.log_mag - exact.log_mag) == pytest.approx(1.0, rel=2e-2)


def test_limit_is_reached_by_quadrature():
    p = HknParams(k=1, n=2)
    assert hkn_quadrature(p, 200.0, 3.0).real == pytest.approx(hkn_limit(p, 3.0).to_float(), rel=1e-10)


def test_saddle_limit_precondition():
    with pytest.raises(DomainError):
        hkn_saddle_limit(HknParams(k=0, n=5), 1.0)
    with pytest.raises(DomainError):
        hkn_series(HknParams(k=0, n=1), -1.0, 1.0)


@pytest.mark.parametrize("k,n,x,lam", [(2, 3, 2.0, 2.0), (0, 1, 1.0, 5.0), (4, 2, 3.0, 0.7), (1, 4, 6.0, 3.0)])
def test_series_error_estimate_tracks_realized_error(k, n, x, lam):
    p = HknParams(k=k, n=n)
    s = hkn_series(p, x, lam, SeriesControl(eps=1e-10))
    exact = hkn_series_mp(p, x, lam, SeriesControl(eps=1e-30)).real
    realized = abs(s.real - exact) / abs(exact)
    assert s.rel_err_estimate <= 1e-10
    assert realized <= 10 * s.rel_err_estimate + 1e-15


def test_saddle_limit_at_moderate_lambda():
    p, lam = HknParams(k=2, n=3), 25.0
    far = hkn_quadrature(p, 50.0 * lam, lam).value
    ratio = math.exp(far.log_mag - hkn_saddle_limit(p, lam).log_mag)
    assert 0.9 <= ratio <= 1.1
