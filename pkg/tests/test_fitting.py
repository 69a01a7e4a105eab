import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from coalescence_lab import fitting as ft
from coalescence_lab.fitting import FitError, FitWarning
from coalescence_lab.reproduce import _jac_err, jacobian_check


def emg_oracle(t, lifetime, amplitude, t0, fwhm):
    """Exponential decay convolved with the Gaussian response by direct quadrature."""
    s = fwhm * ft.FWHM_TO_SIGMA
    f = lambda u: np.exp(-u / lifetime) / lifetime * np.exp(-(t - t0 - u) ** 2 / (2 * s * s)) \
        / (s * np.sqrt(2 * np.pi))
    c = t - t0
    hi = max(c, 0.0) + 12 * s + 60 * lifetime
    pts = [c] if 0 < c < hi else None
    return amplitude * integrate.quad(f, 0, hi, points=pts, epsabs=1e-14, limit=400)[0]


@pytest.mark.parametrize("t", [-1.0, 0.0, 0.3, 1.0, 4.0])
@pytest.mark.parametrize("fwhm", [0.05, 0.4, 1.5])
def test_emg_matches_convolution_oracle(t, fwhm):
    got = float(ft.emg(np.array([t]), 0.83, 100.0, 0.2, fwhm)[0])
    assert got == pytest.approx(emg_oracle(t, 0.83, 100.0, 0.2, fwhm), rel=1e-8, abs=1e-12)


def test_emg_narrow_response_is_exponential():
    t = np.array([-0.5, 0.5, 2.0, 10.0])
    v = ft.emg(t, 0.83, 1.0, 0.0, 1e-6)
    assert np.all(np.isfinite(v))
    np.testing.assert_allclose(v[1:], np.exp(-t[1:] / 0.83) / 0.83, rtol=1e-5)
    assert v[0] == pytest.approx(0.0, abs=1e-300)


def test_lorentzian_noiseless_recovery():
    nu = np.linspace(-4, 4, 81)
    y = ft.lorentzian(nu, 0.1, 0.9, 3.0, 0.2)
    r = ft.fit_lorentzian(nu, y)
    assert r.converged
    assert r["fwhm"] == pytest.approx(0.9, abs=1e-6)
    assert r["center"] == pytest.approx(0.1, abs=1e-6)
    assert r["peak"] == pytest.approx(3.0, abs=1e-6)
    assert r["offset"] == pytest.approx(0.2, abs=1e-6)


def test_lorentzian_without_offset():
    nu = np.linspace(-4, 4, 81)
    r = ft.fit_lorentzian(nu, ft.lorentzian(nu, 0.0, 1.1, 2.0), fit_offset=False)
    assert set(r.params) == {"center", "fwhm", "peak"}
    assert r["fwhm"] == pytest.approx(1.1, abs=1e-6)


@pytest.mark.parametrize("free", [False, True])
def test_emg_noiseless_recovery(free):
    t = np.arange(-3, 8, 0.064)
    y = ft.emg(t, 0.83, 1000.0, 0.5, 0.4)
    r = ft.fit_exp_gauss(t, y, detector_fwhm=None if free else 0.4)
    assert r["lifetime"] == pytest.approx(0.83, abs=1e-4)
    assert r["t0"] == pytest.approx(0.5, abs=1e-4)
    if free:
        assert r["detector_fwhm"] == pytest.approx(0.4, abs=1e-4)


def test_degenerate_inputs():
    nu = np.linspace(-4, 4, 40)
    with pytest.raises(FitError, match="zero variance"):
        ft.fit_lorentzian(nu, np.ones_like(nu))
    with pytest.raises(FitError, match="at least 8"):
        ft.fit_lorentzian(nu[:5], ft.lorentzian(nu[:5], 0, 1, 1))
    narrow = np.linspace(-0.3, 0.3, 20)
    with pytest.raises(FitError, match="twice the FWHM"):
        ft.fit_lorentzian(narrow, ft.lorentzian(narrow, 0, 1, 1))
    t = np.linspace(0, 1, 20)
    with pytest.raises(FitError, match="three .*lifetimes"):
        ft.fit_exp_gauss(t, ft.emg(t, 0.83, 10, 0.0, 0.1), detector_fwhm=0.1)
    with pytest.raises(FitError):
        ft.fit_lorentzian(nu, nu[:-1])


def test_nonconvergence_warns_or_raises():
    nu = np.linspace(-4, 4, 81)
    y = ft.lorentzian(nu, 0.3, 0.9, 3.0, 0.2)
    p0 = [-1.0, 2.5, 1.0, 0.0]
    with pytest.warns(FitWarning, match="did not converge"):
        r = ft.fit_lorentzian(nu, y, p0=p0, max_iter=1)
    assert not r.converged and r.iterations == 1
    assert np.isfinite(r["fwhm"])
    with pytest.raises(FitError):
        ft.fit_lorentzian(nu, y, p0=p0, max_iter=1, strict=True)


def test_identifiability_warning():
    t = np.arange(-10, 12, 0.05)
    y = ft.emg(t, 0.1, 1000.0, 0.0, 1.5)
    with pytest.warns(FitWarning, match="poorly identifiable"):
        ft.fit_exp_gauss(t, y)


def test_jacobians_match_finite_differences():
    assert jacobian_check(seed=123, n=50) < 1e-6


@settings(max_examples=50)
@given(st.floats(0.2, 3.0), st.floats(1.0, 1e4), st.floats(-1.0, 1.0), st.floats(0.02, 2.0))
def test_emg_jacobian_property(lifetime, amp, t0, fwhm):
    t = np.linspace(-3, 10, 30)
    J = ft.emg_jacobian(t, lifetime, amp, t0, fwhm)
    assert _jac_err(lambda q: ft.emg(t, *q), J, [lifetime, amp, t0, fwhm]) < 1e-5


def test_result_serialization():
    nu = np.linspace(-4, 4, 81)
    r = ft.fit_lorentzian(nu, ft.lorentzian(nu, 0.0, 0.9, 1.0) + 0.01 * np.cos(nu))
    d = r.to_dict()
    assert set(d["params"]["fwhm"]) == {"value", "sigma"}
    assert '"converged": true' in r.to_json()


def _zscores(fit_once, truth, n=200):
    zs = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FitWarning)
        for i in range(n):
            r = fit_once(np.random.default_rng(1000 + i))
            zs.append({k: (r[k] - v) / r.errors[k] for k, v in truth.items()})
    return {k: np.array([z[k] for z in zs]) for k in truth}


def test_lorentzian_estimator_calibration():
    nu = np.linspace(-5, 5, 101)
    truth = {"center": 0.05, "fwhm": 1.1, "peak": 100.0, "offset": 2.0}
    clean = ft.lorentzian(nu, **truth)
    sig = 0.05 * clean

    def once(rng):
        return ft.fit_lorentzian(nu, clean + sig * rng.standard_normal(len(nu)), sigma=sig)

    for k, z in _zscores(once, truth).items():
        assert abs(z.mean()) < 0.2, k
        assert 0.5 <= z.var() <= 2.0, k


def test_emg_estimator_calibration():
    t = np.arange(-3, 8, 0.064)
    truth = {"lifetime": 0.83, "amplitude": 5000.0, "t0": 0.3}
    clean = ft.emg(t, 0.83, 5000.0, 0.3, 0.995)
    sig = np.sqrt(np.maximum(clean, 1.0))

    def once(rng):
        return ft.fit_exp_gauss(t, clean + sig * rng.standard_normal(len(t)), detector_fwhm=0.995,
                                sigma=sig)

    for k, z in _zscores(once, truth).items():
        assert abs(z.mean()) < 0.2, k
        assert 0.5 <= z.var() <= 2.0, k


def test_decay_histogram():
    rng = np.random.default_rng(0)
    x = rng.exponential(0.83, 100_000)
    t, c = ft.decay_histogram(x, 0.064, (0.0, 6.4))
    assert len(t) == 100 and t[0] == pytest.approx(0.032)
    assert c.sum() == np.sum(x < 6.4)
    r = ft.fit_exp_gauss(t, c, detector_fwhm=0.01, sigma=np.sqrt(np.maximum(c, 1)))
    assert r["lifetime"] == pytest.approx(0.83, abs=4 * r.errors["lifetime"] + 0.005)
