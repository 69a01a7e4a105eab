import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from coalescence_lab import hom_model as hm
from coalescence_lab.hom_model import CoincidenceModel
from coalescence_lab.photon_models import WavepacketSpec, pdc_wavepacket, qd_wavepacket
from coalescence_lab.reproduce import oracle_coalescence, paper_model

# frozen from 2-D quadrature of joint_density (reproduce.oracle_coalescence)
ORACLE_PC_EPS0 = 0.31652442348411775
ORACLE_PC_EPS165 = 0.27169478410653886
# frozen from 1-D quadrature of joint_density along t1 = t2 plus the background density
ORACLE_PC0_QD_OVERLAP = 0.9090269853607047
ORACLE_PC0_FLAT = 0.9875316633384976
# frozen from brentq on coalescence_zero
CAL_FWHM_QD_OVERLAP = 0.99503987595526

rates = st.floats(0.2, 10.0)
dephasing = st.floats(0.0, 5.0)


def density_oracle(model, tau, pol):
    """Convolved C(tau) by nested quadrature of the joint density (no background)."""
    sig = model.tau_sigma

    def raw(t):
        f = lambda s: float(hm.joint_density(model, s, s + t, pol))
        a = max(0.0, -t)
        return integrate.quad(f, a, a + 60.0, epsabs=1e-14, limit=200)[0]

    if sig == 0:
        return raw(tau)
    g = lambda s: raw(tau - s) * np.exp(-s * s / (2 * sig * sig)) / (sig * np.sqrt(2 * np.pi))
    return integrate.quad(g, -10 * sig, 10 * sig, points=[tau], epsabs=1e-13, limit=200)[0]


def test_pc_paper_parameters_frozen():
    m = paper_model()
    assert hm.coalescence_probability(m) == pytest.approx(ORACLE_PC_EPS165, abs=1e-12)
    assert hm.coalescence_probability(paper_model(0.0)) == pytest.approx(ORACLE_PC_EPS0,
                                                                         abs=1e-12)


def test_pc_matches_2d_oracle_off_paper_point():
    m = CoincidenceModel(qd_wavepacket(0.5, 0.4), pdc_wavepacket(1.7), epsilon=0.05)
    assert hm.coalescence_probability(m) == pytest.approx(oracle_coalescence(m), abs=1e-9)


def test_perpendicular_area_is_half():
    m = paper_model(0.0)
    f = lambda t2, t1: float(hm.joint_density(m, t1, t2, "perpendicular"))
    a = integrate.dblquad(f, 0, np.inf, 0, np.inf)[0]
    assert a == pytest.approx(0.5, abs=1e-9)


def test_identical_pure_sources_coalesce_fully():
    wp = WavepacketSpec(1.3)
    assert hm.coalescence_probability(CoincidenceModel(wp, wp)) == pytest.approx(1.0, abs=1e-12)
    assert hm.coalescence_zero(CoincidenceModel(wp, wp, detector_fwhm=0.5)) == \
        pytest.approx(1.0, abs=1e-12)


def test_pc_ideal_detector_frozen():
    assert hm.coalescence_zero(paper_model()) == pytest.approx(ORACLE_PC0_QD_OVERLAP, abs=1e-10)
    flat = paper_model(background_shape="flat_within_peak")
    assert hm.coalescence_zero(flat) == pytest.approx(ORACLE_PC0_FLAT, abs=1e-10)


def test_calibrated_detector_frozen():
    fw = hm.calibrate_detector(paper_model(), 0.42)
    assert fw == pytest.approx(CAL_FWHM_QD_OVERLAP, abs=1e-8)
    assert hm.coalescence_zero(paper_model(detector_fwhm=fw)) == pytest.approx(0.42, abs=1e-8)


def test_calibration_unreachable_target():
    with pytest.raises(hm.CalibrationError):
        hm.calibrate_detector(paper_model(), 0.97)


@pytest.mark.parametrize("pol", hm.POLARIZATIONS)
@pytest.mark.parametrize("fwhm", [0.0, 0.4, 0.995])
@pytest.mark.parametrize("tau", [0.0, 0.13, -0.5, 1.7])
def test_density_matches_nested_quadrature(pol, fwhm, tau):
    m = paper_model(0.0, detector_fwhm=fwhm)
    got = float(hm.cross_correlation_density(m, tau, pol))
    assert got == pytest.approx(density_oracle(m, tau, pol), rel=1e-7, abs=1e-12)


@pytest.mark.parametrize("pol", hm.POLARIZATIONS)
def test_closed_and_quad_methods_agree(pol):
    m = paper_model(detector_fwhm=0.6)
    tau = np.array([-2.0, -0.3, 0.0, 0.2, 1.1])
    a = hm.cross_correlation_density(m, tau, pol, method="closed")
    b = hm.cross_correlation_density(m, tau, pol, method="quad")
    np.testing.assert_allclose(a, b, rtol=1e-8, atol=1e-13)


def test_density_integrates_to_peak_areas():
    m = paper_model(detector_fwhm=0.995)
    a_perp, a_par = hm.peak_areas(m)
    for pol, want in (("perpendicular", a_perp), ("parallel", a_par)):
        got = integrate.quad(lambda t: float(hm.cross_correlation_density(m, t, pol)),
                             -30, 30, points=[0.0], limit=400)[0]
        assert got == pytest.approx(want, rel=1e-7)


def test_exp_gauss_conv_no_overflow():
    v = hm.exp_gauss_conv(5.0, 1e-4, np.array([-3.0, 0.0, 3.0, 50.0]))
    assert np.all(np.isfinite(v))
    np.testing.assert_allclose(v[:3], np.exp(-5.0 * np.abs([-3.0, 0.0, 3.0])), rtol=1e-3)


def test_background_shapes_have_equal_area():
    for shape in hm.BACKGROUND_SHAPES:
        m = paper_model(background_shape=shape, detector_fwhm=0.8)
        half = m.period / 2
        area = integrate.quad(lambda t: float(hm.multiphoton_background(m, t, True)), -half - 6,
                              half + 6, points=[0.0, -half, half], limit=400)[0]
        assert area == pytest.approx(0.165 * 0.5, rel=1e-6)


def test_gated_closed_equals_quad_and_frozen():
    m = paper_model()
    for w, f_ref, r_ref in ((0.29, 0.64779344118728, 0.2376799557623357),
                            (0.14, 0.7496174581092833, 0.08489054929029877)):
        f, r = hm.gated_coalescence(m, w)
        fq, rq = hm.gated_coalescence(m, w, method="quad")
        assert (f, r) == pytest.approx((fq, rq), abs=1e-9)
        assert (f, r) == pytest.approx((f_ref, r_ref), abs=1e-10)


def test_gating_wide_window_recovers_ungated():
    m = paper_model()
    f, r = hm.gated_coalescence(m, 200.0)
    assert r == pytest.approx(1.0, abs=1e-9)
    assert f == pytest.approx(hm.coalescence_probability(m), abs=1e-9)


def test_emission_background_gating_option():
    f, r = hm.gated_coalescence(paper_model(), 0.29, background_gating="emission")
    assert 0 < f < 1 and r == pytest.approx(0.2376799557623357, abs=1e-10)


def test_metrics_and_curves(tmp_path):
    m = paper_model(detector_fwhm=0.995)
    met = hm.coalescence_metrics(m)
    assert [w for w, _, _ in met.gated] == [0.14, 0.29]
    tau = np.linspace(-6, 6, 1201)
    curves = hm.write_curves_csv(tmp_path / "c.csv", m, tau)
    assert np.all(curves["C_par"] <= curves["C_perp"])
    text = (tmp_path / "c.csv").read_text().splitlines()
    assert text[0] == "tau,C_perp,C_par,C_par_ideal_detector"
    assert len(text) == 1202


# --- properties -------------------------------------------------------------

@settings(max_examples=60)
@given(rates, dephasing, rates, st.floats(0.0, 1.0), st.floats(0.0, 2.0),
       st.floats(-5.0, 5.0))
def test_density_nonnegative_and_parallel_below_perp(a1, g1, a2, eps, fwhm, tau):
    m = CoincidenceModel(WavepacketSpec(a1, g1), WavepacketSpec(a2), epsilon=eps,
                         detector_fwhm=fwhm)
    perp = float(hm.cross_correlation_density(m, tau, "perpendicular"))
    par = float(hm.cross_correlation_density(m, tau, "parallel"))
    assert par >= -1e-15
    assert par <= perp + 1e-15


@settings(max_examples=60)
@given(rates, dephasing, rates, dephasing, st.floats(0.0, 2.0), st.floats(-3.0, 3.0))
def test_swap_symmetry(a1, g1, a2, g2, fwhm, tau):
    """Exchanging the sources mirrors C(tau) and leaves P_c unchanged."""
    w1, w2 = WavepacketSpec(a1, g1), WavepacketSpec(a2, g2)
    m = CoincidenceModel(w1, w2, detector_fwhm=fwhm)
    s = CoincidenceModel(w2, w1, detector_fwhm=fwhm)
    assert hm.coalescence_probability(m) == pytest.approx(hm.coalescence_probability(s),
                                                          rel=1e-12)
    for pol in hm.POLARIZATIONS:
        a = float(hm.cross_correlation_density(m, tau, pol))
        b = float(hm.cross_correlation_density(s, -tau, pol))
        assert a == pytest.approx(b, rel=1e-10, abs=1e-15)


@settings(max_examples=40)
@given(rates, dephasing, rates, st.floats(0.0, 2.0))
def test_pc_bounds_and_epsilon_scaling(a1, g1, a2, eps):
    m = CoincidenceModel(WavepacketSpec(a1, g1), WavepacketSpec(a2))
    p0 = hm.coalescence_probability(m)
    assert 0.0 < p0 <= 1.0 + 1e-12
    assert hm.coalescence_probability(m.with_(epsilon=eps)) == pytest.approx(p0 / (1 + eps),
                                                                             rel=1e-12)


@settings(max_examples=30)
@given(st.floats(0.5, 3.0), st.floats(0.2, 3.0), st.floats(0.0, 0.5))
def test_pc_decreases_with_dephasing(t1, filt, eps):
    wp_pdc = pdc_wavepacket(filt)
    vals = [hm.coalescence_probability(CoincidenceModel(qd_wavepacket(t1, t2), wp_pdc,
                                                        epsilon=eps))
            for t2 in np.linspace(2 * t1, 0.1 * t1, 6)]
    assert np.all(np.diff(vals) < 0)


@settings(max_examples=20)
@given(st.floats(0.0, 0.5), st.sampled_from(hm.BACKGROUND_SHAPES))
def test_pc_zero_decreases_with_jitter(eps, shape):
    m = paper_model(eps, background_shape=shape)
    vals = [hm.coalescence_zero(m.with_(detector_fwhm=w)) for w in np.linspace(0, 2, 9)]
    assert np.all(np.diff(vals) < 0)


@settings(max_examples=20)
@given(st.floats(0.0, 0.5))
def test_gating_tradeoff_monotone(eps):
    m = paper_model(eps)
    res = [hm.gated_coalescence(m, w) for w in (0.05, 0.1, 0.2, 0.4, 0.8, 2.0)]
    frac = [f for f, _ in res]
    ret = [r for _, r in res]
    assert np.all(np.diff(frac) < 0)
    assert np.all(np.diff(ret) > 0)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        paper_model(-0.1)
    with pytest.raises(ValueError):
        hm.cross_correlation_density(paper_model(), 0.0, "diagonal")
    with pytest.raises(ValueError):
        paper_model(background_shape="nope")
