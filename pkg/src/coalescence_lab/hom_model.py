"""Analytic two-photon coincidence model for a QD photon meeting a PDC photon.

Joint detection densities at the two beam-splitter outputs::

    G_perp(t1, t2) = 1/4 [p1(t1) p2(t2) + p2(t1) p1(t2)]
    G_par(t1, t2)  = G_perp - 1/2 xi1(t1) xi2(t1) xi1(t2) xi2(t2) exp(-gsum |t1 - t2|)

with p = |xi|^2 and gsum the summed pure-dephasing rate.  Integrating over
the common time gives the Delta-n = 0 cross-correlation C(tau); the
multi-photon background and the Gaussian detector response are added on top.

For one-sided exponential packets sharing an origin every quantity reduces
to sums of ``c * exp(-r |tau|)`` terms, handled in closed form.  Anything
else goes through adaptive quadrature.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, optimize
from scipy.special import erf, erfcx

from .photon_models import TWO_PI, WavepacketSpec

FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))
POLARIZATIONS = ("parallel", "perpendicular")
BACKGROUND_SHAPES = ("qd_overlap", "flat_within_peak")
DEFAULT_PERIOD = 1000.0 / 76.0  # ns at 76 MHz

_QUAD_OPTS = dict(epsabs=0.0, epsrel=1e-11, limit=400)


@dataclass(frozen=True)
class CoincidenceModel:
    wp_qd: WavepacketSpec
    wp_pdc: WavepacketSpec
    epsilon: float = 0.0
    detector_fwhm: float = 0.0
    background_shape: str = "qd_overlap"
    period: float = DEFAULT_PERIOD

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.detector_fwhm < 0:
            raise ValueError("detector_fwhm must be >= 0")
        if self.background_shape not in BACKGROUND_SHAPES:
            raise ValueError(f"unknown background_shape {self.background_shape!r}")

    @property
    def gamma_sum(self) -> float:
        return self.wp_qd.dephasing_rate + self.wp_pdc.dephasing_rate

    @property
    def delta_nu(self) -> float:
        return self.wp_qd.detuning - self.wp_pdc.detuning

    @property
    def tau_sigma(self) -> float:
        """Std. dev. of the difference of two detector timing errors."""
        return np.sqrt(2.0) * self.detector_fwhm * FWHM_TO_SIGMA

    @property
    def closed_form(self) -> bool:
        q, p = self.wp_qd, self.wp_pdc
        return (q.shape == p.shape == "one_sided" and q.origin == p.origin
                and self.delta_nu == 0.0)

    def with_(self, **kw) -> "CoincidenceModel":
        return replace(self, **kw)


@dataclass
class CoalescenceMetrics:
    p_c: float
    p_c_zero: float
    gated: list = field(default_factory=list)  # (window, p_c_fraction, retention)


def _check_pol(polarization):
    if polarization not in POLARIZATIONS:
        raise ValueError(f"polarization must be one of {POLARIZATIONS}")


def coherence_factor(model: CoincidenceModel, dt):
    dt = np.asarray(dt, dtype=float)
    out = np.exp(-model.gamma_sum * np.abs(dt))
    if model.delta_nu:
        out = out * np.cos(TWO_PI * model.delta_nu * dt)
    return out


def joint_density(model: CoincidenceModel, t1, t2, polarization: str):
    """Cross-port joint detection density (1/ns^2) at emission times t1, t2."""
    _check_pol(polarization)
    q, p = model.wp_qd, model.wp_pdc
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    perp = 0.25 * (q.intensity(t1) * p.intensity(t2) + p.intensity(t1) * q.intensity(t2))
    if polarization == "perpendicular":
        return perp
    overlap = q.amplitude(t1) * p.amplitude(t1) * q.amplitude(t2) * p.amplitude(t2)
    g = perp - 0.5 * overlap * coherence_factor(model, t1 - t2)
    # AM-GM keeps g >= 0; clip round-off only
    return np.maximum(g, 0.0)


# --- closed-form pieces -----------------------------------------------------

def _exp_terms(model: CoincidenceModel, polarization: str):
    """C(tau) without background as a list of (coef, rate): sum coef*exp(-rate|tau|)."""
    a1, a2 = model.wp_qd.decay_rate, model.wp_pdc.decay_rate
    c = 0.25 * a1 * a2 / (a1 + a2)
    terms = [(c, a1), (c, a2)]
    if polarization == "parallel":
        abar = 0.5 * (a1 + a2)
        terms.append((-0.5 * a1 * a2 / (a1 + a2), abar + model.gamma_sum))
    return terms


def _gauss_erfcx(rate, sigma, t):
    """exp(-t^2 / 2 sigma^2) * erfcx((rate sigma^2 - t) / (sigma sqrt 2)), overflow-free."""
    with np.errstate(over="ignore", under="ignore"):
        z = t / sigma
        g = np.exp(-0.5 * z * z)
    u = (rate * sigma - z) / np.sqrt(2.0)
    neg = u < 0
    # erfcx(u) = 2 exp(u^2) - erfcx(-u); the exp(u^2) part combines with g analytically
    tail = 2.0 * np.exp(np.minimum(-rate * t + 0.5 * (rate * sigma) ** 2, 700.0))
    return np.where(neg, tail - g * erfcx(np.abs(u)), g * erfcx(np.abs(u)))


def exp_gauss_conv(rate, sigma, tau):
    """exp(-rate |tau|) convolved with a unit-area Gaussian of std ``sigma``."""
    tau = np.asarray(tau, dtype=float)
    if sigma == 0:
        return np.exp(-rate * np.abs(tau))
    return 0.5 * (_gauss_erfcx(rate, sigma, tau) + _gauss_erfcx(rate, sigma, -tau))


def _box_gauss_conv(half_width, sigma, tau):
    """Indicator of |tau| <= half_width convolved with a Gaussian."""
    tau = np.asarray(tau, dtype=float)
    if sigma == 0:
        return (np.abs(tau) <= half_width).astype(float)
    s2 = sigma * np.sqrt(2.0)
    return 0.5 * (erf((half_width - tau) / s2) + erf((half_width + tau) / s2))


# --- quadrature pieces ------------------------------------------------------

def _pair_density_quad(model, tau, polarization):
    q, p = model.wp_qd, model.wp_pdc
    lo = min(q.support()[0], p.support()[0])
    hi = max(q.support()[1], p.support()[1])
    a, b = lo - min(tau, 0.0), hi - max(tau, 0.0)
    if b <= a:
        return 0.0
    pts = sorted({x for x in (q.origin, p.origin, q.origin - tau, p.origin - tau) if a < x < b})
    f = lambda t: float(joint_density(model, t, t + tau, polarization))
    val, _ = integrate.quad(f, a, b, points=pts or None, **_QUAD_OPTS)
    return val


def _conv_quad(func, sigma, tau, kinks=()):
    if sigma == 0:
        return func(tau)
    w = 10.0 * sigma
    g = lambda s: np.exp(-s * s / (2 * sigma * sigma)) / (sigma * np.sqrt(TWO_PI))
    pts = [tau - k for k in kinks if -w < tau - k < w]
    val, _ = integrate.quad(lambda s: func(tau - s) * g(s), -w, w,
                            points=pts or None, **_QUAD_OPTS)
    return val


# --- public densities -------------------------------------------------------

def multiphoton_background(model: CoincidenceModel, tau, convolved: bool = False,
                           area_perp: float = 0.5):
    """QD-QD accidental coincidences, total area ``epsilon * area_perp``."""
    tau = np.asarray(tau, dtype=float)
    area = model.epsilon * area_perp
    sigma = model.tau_sigma if convolved else 0.0
    if model.background_shape == "qd_overlap":
        g = model.wp_qd.decay_rate
        return area * 0.5 * g * exp_gauss_conv(g, sigma, tau)
    half = 0.5 * model.period
    return area / model.period * _box_gauss_conv(half, sigma, tau)


def cross_correlation_density(model: CoincidenceModel, tau, polarization: str,
                              detector: bool = True, background: bool = True,
                              method: str = "auto"):
    """Delta-n = 0 coincidence density C(tau) (1/ns), tau = t2 - t1."""
    _check_pol(polarization)
    if method == "auto":
        method = "closed" if model.closed_form else "quad"
    sigma = model.tau_sigma if detector else 0.0
    tau_arr = np.asarray(tau, dtype=float)
    if method == "closed":
        if not model.closed_form:
            raise ValueError("closed form needs one-sided packets with a common origin")
        out = np.zeros_like(tau_arr)
        for c, r in _exp_terms(model, polarization):
            out = out + c * exp_gauss_conv(r, sigma, tau_arr)
    elif method == "quad":
        kinks = (0.0, model.wp_qd.origin - model.wp_pdc.origin,
                 model.wp_pdc.origin - model.wp_qd.origin)
        f = lambda t: _pair_density_quad(model, t, polarization)
        out = np.vectorize(lambda t: _conv_quad(f, sigma, t, kinks))(tau_arr).astype(float)
    else:
        raise ValueError(f"unknown method {method!r}")
    if background and model.epsilon > 0:
        out = out + multiphoton_background(model, tau_arr, convolved=detector)
    return out


def interference_area(model: CoincidenceModel, method: str = "auto") -> float:
    """A_perp - A_par for the interfering pair alone (no background)."""
    if method == "auto":
        method = "closed" if model.closed_form else "quad"
    if method == "closed":
        a1, a2 = model.wp_qd.decay_rate, model.wp_pdc.decay_rate
        abar = 0.5 * (a1 + a2)
        return 0.5 * a1 * a2 / (abar * (abar + model.gamma_sum))
    return _gated_overlap_quad(model, -np.inf, np.inf)


def peak_areas(model: CoincidenceModel, method: str = "auto") -> tuple[float, float]:
    """(A_perp, A_par) of the Delta-n = 0 peak, background included."""
    a_perp = 0.5
    bg = model.epsilon * a_perp
    return a_perp + bg, a_perp - interference_area(model, method) + bg


def coalescence_probability(model: CoincidenceModel, method: str = "auto") -> float:
    """P_c = (A_perp - A_par) / A_perp; independent of detector jitter."""
    a_perp, a_par = peak_areas(model, method)
    return (a_perp - a_par) / a_perp


def coalescence_zero(model: CoincidenceModel, method: str = "auto") -> float:
    """Post-selected P_c(0) on the detector-convolved densities at tau = 0."""
    c_perp = float(cross_correlation_density(model, 0.0, "perpendicular", method=method))
    c_par = float(cross_correlation_density(model, 0.0, "parallel", method=method))
    return (c_perp - c_par) / c_perp


# --- gating -----------------------------------------------------------------

def _window_frac(wp: WavepacketSpec, lo, hi):
    return float(wp.cdf(hi) - wp.cdf(lo))


def _gated_overlap_quad(model, lo, hi):
    q, p = model.wp_qd, model.wp_pdc
    lo = max(lo, min(q.support()[0], p.support()[0]))
    hi = min(hi, max(q.support()[1], p.support()[1]))
    if hi <= lo:
        return 0.0
    h = lambda t: q.amplitude(t) * p.amplitude(t)
    f = lambda t2, t1: float(0.5 * h(t1) * h(t2) * coherence_factor(model, t1 - t2))
    # split on the diagonal so the |t1 - t2| kink sits on a boundary
    upper, _ = integrate.dblquad(f, lo, hi, lambda t1: t1, lambda t1: hi,
                                 epsabs=1e-14, epsrel=1e-10)
    return 2.0 * upper


def _gated_overlap_closed(model, w):
    a1, a2 = model.wp_qd.decay_rate, model.wp_pdc.decay_rate
    abar = 0.5 * (a1 + a2)
    g = model.gamma_sum
    b = abar - g
    e_b = w if b == 0 else -np.expm1(-b * w) / b
    inner = -np.expm1(-2 * abar * w) / (2 * abar) - np.exp(-(abar + g) * w) * e_b
    return 0.5 * a1 * a2 * 2.0 / (abar + g) * inner


def gated_areas(model: CoincidenceModel, window: float, background_gating: str = "relative",
                method: str = "auto") -> tuple[float, float, float]:
    """(interfering A_perp, A_perp - A_par, background) with emission times in [0, w].

    ``background_gating="relative"`` keeps the multi-photon weight at
    ``epsilon`` times the gated perpendicular area; ``"emission"`` gates the
    two QD emission times of each background pair like any other photon.
    """
    if not window > 0:
        raise ValueError("window must be > 0")
    if method == "auto":
        method = "closed" if model.closed_form else "quad"
    t0 = model.wp_qd.origin
    lo = 0.0
    if np.isinf(window):
        a_perp, ov = 0.5, interference_area(model, method)
        fq = 1.0
    else:
        fq = _window_frac(model.wp_qd, lo, window)
        fp = _window_frac(model.wp_pdc, lo, window)
        a_perp = 0.5 * fq * fp
        if method == "closed" and t0 == 0.0:
            ov = _gated_overlap_closed(model, window)
        else:
            ov = _gated_overlap_quad(model, lo, window)
    if background_gating == "relative":
        bg = model.epsilon * a_perp
    elif background_gating == "emission":
        bg = model.epsilon * 0.5 * fq ** 2
    else:
        raise ValueError(f"unknown background_gating {background_gating!r}")
    return a_perp, ov, bg


def gated_coalescence(model: CoincidenceModel, window: float,
                      background_gating: str = "relative", method: str = "auto"):
    """(p_c_fraction, retention) after gating both emission times to [0, window] ns."""
    a_perp, ov, bg = gated_areas(model, window, background_gating, method)
    if a_perp + bg == 0:
        return 0.0, 0.0
    return float(ov / (a_perp + bg)), float(a_perp / 0.5)


def coalescence_metrics(model: CoincidenceModel, windows=(0.29, 0.14),
                        background_gating: str = "relative") -> CoalescenceMetrics:
    gated = [(w, *gated_coalescence(model, w, background_gating)) for w in sorted(windows)]
    return CoalescenceMetrics(coalescence_probability(model), coalescence_zero(model), gated)


# --- detector calibration ---------------------------------------------------

class CalibrationError(ValueError):
    pass


def calibrate_detector(model: CoincidenceModel, target_p_c_zero: float,
                       fwhm_max: float = 2.0, tol: float = 1e-9) -> float:
    """Single-detector FWHM (ns) for which ``coalescence_zero`` equals the target.

    P_c(0) falls strictly with jitter, so the root on [0, fwhm_max] is unique.
    """
    f = lambda w: coalescence_zero(model.with_(detector_fwhm=w)) - target_p_c_zero
    top = f(0.0)
    if abs(top) < 1e-12:
        return 0.0
    bottom = f(fwhm_max)
    if top < 0 or bottom > 0:
        raise CalibrationError(
            f"P_c(0)={target_p_c_zero} unreachable for detector FWHM in [0, {fwhm_max}] ns "
            f"(range {bottom + target_p_c_zero:.4f}..{top + target_p_c_zero:.4f})")
    return optimize.brentq(f, 0.0, fwhm_max, xtol=tol, rtol=4 * np.finfo(float).eps)


# --- curve export -----------------------------------------------------------

def model_curves(model: CoincidenceModel, tau):
    """The three zero-peak curves: perpendicular, parallel, parallel with ideal detectors."""
    tau = np.asarray(tau, dtype=float)
    return {
        "tau": tau,
        "C_perp": cross_correlation_density(model, tau, "perpendicular"),
        "C_par": cross_correlation_density(model, tau, "parallel"),
        "C_par_ideal_detector": cross_correlation_density(model, tau, "parallel", detector=False),
    }


def write_curves_csv(path, model: CoincidenceModel, tau):
    curves = model_curves(model, tau)
    cols = ["tau", "C_perp", "C_par", "C_par_ideal_detector"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in zip(*(curves[c] for c in cols)):
            w.writerow([repr(float(v)) for v in row])
    return curves
