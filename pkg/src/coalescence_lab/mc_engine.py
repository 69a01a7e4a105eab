"""Trial-by-trial Monte Carlo of the HOM and HBT experiments.

Each trial is one pump pulse.  Photon presence is Bernoulli per trial,
emission times are drawn from the wavepacket intensities and the two-photon
interference is imposed by thinning the cross-port assignment of QD-PDC
pairs.  Trials are generated in fixed-size chunks, each seeded from
``SeedSequence(seed, spawn_key=(chunk,))``, so the output does not depend on
the number of worker threads.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy import integrate, optimize
from scipy.special import erfc

from . import hom_model
from .hom_model import FWHM_TO_SIGMA, CoincidenceModel
from .tagstream import (CHANNEL_HERALD, CHANNEL_HOM1, CHANNEL_HOM2, TagStream,
                        TagStreamHeader, empty_records, params_digest, sort_order)

CHUNK_TRIALS = 1 << 18
SOURCE_DARK, SOURCE_PDC, SOURCE_QD, SOURCE_HERALD = 0, 1, 2, 3

# Paper-mode detected rates at 76 MHz: QD 30,000 /s, unheralded PDC 300 /s,
# QD rate half the heralded PDC rate.
PAPER_REP_RATE = 76.0
PAPER_P_QD = 30_000 / (PAPER_REP_RATE * 1e6)
PAPER_P_PDC_GIVEN_HERALD = PAPER_P_QD / 0.5
PAPER_P_HERALD = 300 / (PAPER_REP_RATE * 1e6) / PAPER_P_PDC_GIVEN_HERALD
PAPER_HBT_RATIO = 0.165
PAPER_DETECTOR_FWHM = 0.995  # ns, from calibrate_detector(target P_c(0)=0.42)


class ParameterError(ValueError):
    pass


def hbt_zero_ratio(p_qd: float, p_qd2: float, dark_rate_per_trial: float = 0.0) -> float:
    """Expected zero-peak / side-peak area ratio for the Bernoulli trial model.

    Two independent QD photons (presence p_qd, p_qd2) split 50/50, plus
    Poisson dark counts of mean ``dark_rate_per_trial`` on each channel.
    """
    p1, p2, d = p_qd, p_qd2, dark_rate_per_trial
    zero = 0.5 * p1 * p2 + d * (p1 + p2) + d * d
    side = (0.5 * (p1 + p2) + d) ** 2
    return zero / side if side > 0 else 0.0


def calibrate_p_qd2(target_ratio: float = PAPER_HBT_RATIO, p_qd: float = PAPER_P_QD,
                    dark_rate_per_trial: float = 0.0) -> float:
    """Second-photon probability giving the requested HBT zero-peak ratio."""
    if not 0 <= target_ratio < 0.5:
        raise ParameterError(f"zero-peak ratio {target_ratio} unreachable: a single-photon "
                             f"source stays below 0.5")
    if not 0 < p_qd <= 1:
        raise ParameterError("p_qd must be in (0, 1]")
    f = lambda p2: hbt_zero_ratio(p_qd, p2, dark_rate_per_trial) - target_ratio
    lo = f(0.0)
    if lo == 0:
        return 0.0
    if lo > 0 or f(p_qd) < 0:
        raise ParameterError(f"zero-peak ratio {target_ratio} unreachable with p_qd={p_qd} "
                             f"and dark rate {dark_rate_per_trial}")
    return optimize.brentq(f, 0.0, p_qd, xtol=1e-14, rtol=1e-12)


def p_qd2_for_epsilon(epsilon: float, p_pdc: float, p_qd: float) -> float:
    """Second-photon probability that makes the heralded HOM background weight ``epsilon``.

    Inverse of :func:`effective_epsilon`.
    """
    if epsilon < 0:
        raise ParameterError("epsilon must be >= 0")
    den = p_qd * (2 * p_pdc + 1) + 2 * epsilon * p_pdc * p_qd - epsilon * p_pdc
    q2 = epsilon * p_pdc * p_qd / den if den > 0 else -1.0
    if not 0 <= q2 <= 1:
        raise ParameterError(f"epsilon={epsilon} unreachable with p_pdc={p_pdc}, p_qd={p_qd}")
    return q2


@dataclass(frozen=True)
class ExperimentParams:
    """Per-trial probabilities and detector settings (times in ns)."""

    rep_rate: float = PAPER_REP_RATE
    n_trials: int = 1_000_000
    p_herald: float = PAPER_P_HERALD
    p_pdc_given_herald: float = PAPER_P_PDC_GIVEN_HERALD
    p_qd: float = PAPER_P_QD
    p_qd2: float = calibrate_p_qd2(PAPER_HBT_RATIO, PAPER_P_QD)
    qd_pdc_ratio_check: float = 0.5
    detector_fwhm: float = PAPER_DETECTOR_FWHM
    dark_rate_per_trial: float = 0.0
    dead_time: float = 0.0
    seed: int = 0
    polarization: str = "parallel"
    # QD blinking: after an emission the dot goes dark with prob qd_dark_prob
    # for a geometric number of trials with mean qd_dark_trials
    qd_dark_prob: float = 0.0
    qd_dark_trials: float = 1.0

    def __post_init__(self):
        for name in ("p_herald", "p_pdc_given_herald", "p_qd", "p_qd2", "qd_dark_prob"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ParameterError(f"{name}={v} is not a probability")
        if not self.rep_rate > 0:
            raise ParameterError("rep_rate must be > 0")
        if self.n_trials < 0:
            raise ParameterError("n_trials must be >= 0")
        for name in ("detector_fwhm", "dark_rate_per_trial", "dead_time"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")
        if self.polarization not in hom_model.POLARIZATIONS:
            raise ParameterError(f"polarization must be one of {hom_model.POLARIZATIONS}")
        if self.qd_dark_trials < 1:
            raise ParameterError("qd_dark_trials must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ParameterError("seed must fit in 64 bits")

    @property
    def period(self) -> float:
        return 1000.0 / self.rep_rate

    @property
    def period_ps(self) -> int:
        return int(round(1e6 / self.rep_rate))

    @property
    def jitter_sigma(self) -> float:
        return self.detector_fwhm * FWHM_TO_SIGMA

    @property
    def window_allowance_ps(self) -> int:
        return int(math.ceil(4000.0 * self.jitter_sigma))

    def replace(self, **kw) -> "ExperimentParams":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


def accelerated_params(p_qd: float = 0.1, ratio: float = 0.5, p_herald: float = 0.1,
                       **kw) -> ExperimentParams:
    """Parameters with the paper's rate ratios but high per-trial probabilities.

    Keeps QD/PDC = ``ratio`` among heralded trials so that desk-scale runs
    collect enough coincidences.
    """
    return ExperimentParams(p_qd=p_qd, p_pdc_given_herald=p_qd / ratio, p_herald=p_herald,
                            qd_pdc_ratio_check=ratio, **kw)


def effective_epsilon(params: ExperimentParams) -> float:
    """Non-interfering Delta-n=0 area relative to the interfering one, heralded mode."""
    p, q1, q2 = params.p_pdc_given_herald, params.p_qd, params.p_qd2
    w_hom = p * (q1 * (1 - q2) + q2 * (1 - q1))
    if w_hom == 0:
        return float("inf") if q1 * q2 > 0 else 0.0
    return q1 * q2 * (2 * p + 1) / w_hom


def model_for_params(params: ExperimentParams, model: CoincidenceModel) -> CoincidenceModel:
    """Copy of ``model`` with the background weight and jitter the MC actually has."""
    return model.with_(epsilon=effective_epsilon(params), detector_fwhm=params.detector_fwhm,
                       period=params.period)


# --- chunk generation -------------------------------------------------------

def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chunk,)))


def _generate_chunk(args):
    params, model, mode, chunk, start, n = args
    rng = _chunk_rng(params.seed, chunk)
    T = params.period
    out = {}
    if mode == "hom":
        h_idx = np.flatnonzero(rng.random(n) < params.p_herald)
        pdc_idx = h_idx[rng.random(len(h_idx)) < params.p_pdc_given_herald]
    else:
        h_idx = np.empty(0, dtype=np.int64)
        pdc_idx = h_idx
    out["herald_trial"] = start + h_idx
    out["herald_jitter"] = rng.normal(0.0, 1.0, len(h_idx))
    out["pdc_trial"] = start + pdc_idx
    out["pdc_time"] = model.wp_pdc.sample_times(rng, len(pdc_idx))
    qd_trials, qd_times = [], []
    for p in (params.p_qd, params.p_qd2):
        idx = np.flatnonzero(rng.random(n) < p)
        qd_trials.append(start + idx)
        qd_times.append(model.wp_qd.sample_times(rng, len(idx)))
    out["qd_trial"] = np.concatenate(qd_trials)
    out["qd_time"] = np.concatenate(qd_times)
    n_ph = len(pdc_idx) + len(out["qd_trial"])
    out["port_u"] = rng.random(n_ph)      # pdc photons first, then qd
    out["pair_u"] = rng.random(len(pdc_idx))
    out["jitter"] = rng.normal(0.0, 1.0, n_ph)
    out["blink_u"] = rng.random(len(out["qd_trial"]))
    if params.qd_dark_prob > 0:
        out["blink_len"] = rng.geometric(1.0 / params.qd_dark_trials, len(out["qd_trial"]))
    else:
        out["blink_len"] = np.zeros(len(out["qd_trial"]), dtype=np.int64)
    d = params.dark_rate_per_trial
    dark_trial, dark_ch = [], []
    for ch in (CHANNEL_HOM1, CHANNEL_HOM2):
        k = rng.poisson(d, n) if d > 0 else np.zeros(n, dtype=np.int64)
        tr = np.repeat(np.arange(n), k)
        dark_trial.append(start + tr)
        dark_ch.append(np.full(len(tr), ch, dtype=np.uint8))
    out["dark_trial"] = np.concatenate(dark_trial)
    out["dark_channel"] = np.concatenate(dark_ch)
    out["dark_time"] = rng.uniform(0.0, T, len(out["dark_trial"]))
    return out


def _merge_chunks(chunks):
    keys = chunks[0].keys()
    return {k: np.concatenate([c[k] for c in chunks]) for k in keys}


def _blink_mask(trial, blink_u, blink_len, dark_prob):
    """Keep-mask for QD photons once the dark-state dynamics are applied."""
    keep = np.ones(len(trial), dtype=bool)
    if dark_prob <= 0 or len(trial) == 0:
        return keep
    order = np.argsort(trial, kind="stable")
    dark_until = -1
    last_emit = -1
    tr = trial[order].tolist()
    bu = blink_u[order].tolist()
    bl = blink_len[order].tolist()
    for j, t in enumerate(tr):
        if t <= dark_until:
            keep[order[j]] = False
            continue
        if t == last_emit:
            continue  # second photon of an emitting trial
        last_emit = t
        if bu[j] < dark_prob:
            dark_until = t + bl[j]
    return keep


def _dead_time_mask(trial, channel, time_ps, dead_ps):
    """Non-paralyzable per-channel dead time within each trial (input sorted)."""
    keep = np.ones(len(trial), dtype=bool)
    if dead_ps <= 0 or len(trial) < 2:
        return keep
    same = (trial[1:] == trial[:-1]) & (channel[1:] == channel[:-1])
    close = same & ((time_ps[1:] - time_ps[:-1]) < dead_ps)
    if not close.any():
        return keep
    # only groups containing a too-close pair need the sequential pass
    starts = np.flatnonzero(np.r_[True, ~same])
    ends = np.r_[starts[1:], len(trial)]
    group_of = np.repeat(np.arange(len(starts)), ends - starts)
    for g in np.unique(group_of[1:][close]):
        last = None
        for i in range(starts[g], ends[g]):
            if last is not None and time_ps[i] - last < dead_ps:
                keep[i] = False
            else:
                last = time_ps[i]
    return keep


def interference_ratio(model: CoincidenceModel, t_qd, t_pdc):
    """D(t1 - t2) * R(t1, t2): the interfering share of the pair density."""
    q, p = model.wp_qd, model.wp_pdc
    t1, t2 = np.asarray(t_qd, float), np.asarray(t_pdc, float)
    log_num = np.log(2.0) + q.log_amplitude(t1) + p.log_amplitude(t1) \
        + q.log_amplitude(t2) + p.log_amplitude(t2)
    log_den = np.logaddexp(2 * q.log_amplitude(t1) + 2 * p.log_amplitude(t2),
                           2 * q.log_amplitude(t2) + 2 * p.log_amplitude(t1))
    r = np.exp(log_num - log_den)
    if np.any(r > 1.0 + 1e-9):
        raise AssertionError("thinning ratio R exceeded 1")
    return np.minimum(r, 1.0) * hom_model.coherence_factor(model, t1 - t2)


def _simulate(params: ExperimentParams, model: CoincidenceModel, mode: str,
              threads: int = 1) -> TagStream:
    n_trials = int(params.n_trials)
    jobs = []
    for c, start in enumerate(range(0, n_trials, CHUNK_TRIALS)):
        jobs.append((params, model, mode, c, start, min(CHUNK_TRIALS, n_trials - start)))
    header = TagStreamHeader(rep_rate=params.rep_rate, n_trials=n_trials, seed=params.seed,
                             params_digest=params_digest(params))
    if not jobs:
        return TagStream(header, empty_records(), np.empty(0, np.int64), np.empty(0, np.uint8))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            chunks = list(ex.map(_generate_chunk, jobs))
    else:
        chunks = [_generate_chunk(j) for j in jobs]
    raw = _merge_chunks(chunks)

    n_pdc = len(raw["pdc_trial"])
    qd_keep = _blink_mask(raw["qd_trial"], raw["blink_u"], raw["blink_len"], params.qd_dark_prob)
    trial = np.concatenate([raw["pdc_trial"], raw["qd_trial"]])
    t_emit = np.concatenate([raw["pdc_time"], raw["qd_time"]])
    src = np.concatenate([np.full(n_pdc, SOURCE_PDC, np.uint8),
                          np.full(len(raw["qd_trial"]), SOURCE_QD, np.uint8)])
    keep = np.concatenate([np.ones(n_pdc, bool), qd_keep])
    port_u, jitter = raw["port_u"][keep], raw["jitter"][keep]
    trial, t_emit, src = trial[keep], t_emit[keep], src[keep]

    # independent 50/50 routing unless the trial holds exactly one photon per source
    port = np.where(port_u < 0.5, CHANNEL_HOM1, CHANNEL_HOM2).astype(np.uint8)
    uniq, inv = np.unique(trial, return_inverse=True)
    n_p = np.bincount(inv, weights=(src == SOURCE_PDC), minlength=len(uniq))
    n_q = np.bincount(inv, weights=(src == SOURCE_QD), minlength=len(uniq))
    hom_trial = (n_p == 1) & (n_q == 1)
    in_pair = hom_trial[inv]
    pdc_i = np.flatnonzero(in_pair & (src == SOURCE_PDC))
    qd_i = np.flatnonzero(in_pair & (src == SOURCE_QD))
    pdc_i = pdc_i[np.argsort(trial[pdc_i], kind="stable")]
    qd_i = qd_i[np.argsort(trial[qd_i], kind="stable")]
    if len(pdc_i):
        # pair_u is indexed by pdc photon order in the raw arrays
        pair_u = raw["pair_u"][pdc_i]
        if params.polarization == "parallel":
            dr = interference_ratio(model, t_emit[qd_i], t_emit[pdc_i])
        else:
            dr = np.zeros(len(pdc_i))
        cross = pair_u < 0.5 * (1.0 - dr)
        other = np.where(port[pdc_i] == CHANNEL_HOM1, CHANNEL_HOM2, CHANNEL_HOM1)
        port[qd_i] = np.where(cross, other, port[pdc_i]).astype(np.uint8)

    sigma = params.jitter_sigma
    t_det = t_emit + sigma * jitter
    allow = params.window_allowance_ps
    hi_ps = params.period_ps + allow
    det_ps = np.rint(t_det * 1000.0).astype(np.int64)
    emit_ps = np.rint(t_emit * 1000.0).astype(np.int64)
    inside = (det_ps >= -allow) & (det_ps < hi_ps)

    h_ps = np.clip(np.rint(sigma * raw["herald_jitter"] * 1000.0).astype(np.int64),
                   -allow, hi_ps - 1)
    dark_ps = np.minimum(np.floor(raw["dark_time"] * 1000.0).astype(np.int64),
                         params.period_ps - 1)

    all_trial = np.concatenate([raw["herald_trial"], trial[inside], raw["dark_trial"]])
    all_ch = np.concatenate([np.full(len(h_ps), CHANNEL_HERALD, np.uint8), port[inside],
                             raw["dark_channel"]])
    all_t = np.concatenate([h_ps, det_ps[inside], dark_ps])
    all_emit = np.concatenate([np.zeros(len(h_ps), np.int64), emit_ps[inside], dark_ps])
    all_src = np.concatenate([np.full(len(h_ps), SOURCE_HERALD, np.uint8), src[inside],
                              np.full(len(dark_ps), SOURCE_DARK, np.uint8)])
    rec = empty_records(len(all_trial))
    rec["trial"] = all_trial
    rec["channel"] = all_ch
    rec["time_ps"] = all_t
    order = sort_order(rec)
    rec, all_emit, all_src = rec[order], all_emit[order], all_src[order]
    dead = _dead_time_mask(rec["trial"], rec["channel"], rec["time_ps"],
                           int(round(params.dead_time * 1000.0)))
    return TagStream(header, rec[dead], all_emit[dead], all_src[dead])


def run_hom_simulation(params: ExperimentParams, model: CoincidenceModel,
                       threads: int = 1) -> TagStream:
    """Heralded HOM experiment; deterministic in ``params.seed``.

    The wavepackets and dephasing come from ``model``; detector jitter and the
    multi-photon probability come from ``params``.
    """
    return _simulate(params, model, "hom", threads)


def run_hbt_simulation(params: ExperimentParams, model: CoincidenceModel | None = None,
                       threads: int = 1) -> TagStream:
    """QD-only autocorrelation run (PDC arm blocked)."""
    if not params.p_qd > 0:
        raise ParameterError("HBT simulation needs p_qd > 0")
    if model is None:
        from .photon_models import pdc_wavepacket, qd_wavepacket
        model = CoincidenceModel(qd_wavepacket(0.83, 0.29), pdc_wavepacket(0.9))
    return _simulate(params, model, "hbt", threads)


# --- analytic expectations for the simulated ensemble -----------------------

def _emg_cdf(t, rate, sigma):
    """CDF of an Exp(rate) time plus N(0, sigma) jitter."""
    t = np.asarray(t, dtype=float)
    if sigma == 0:
        return np.where(t > 0, -np.expm1(-rate * np.maximum(t, 0)), 0.0)
    z = t / (sigma * np.sqrt(2))
    phi = 0.5 * erfc(-z)
    # exp(-rate t + rate^2 sigma^2 / 2) * Phi(t/sigma - rate sigma), overflow-safe
    tail = 0.5 * hom_model._gauss_erfcx(rate, sigma, t)
    return phi - tail


def _check_expectable(params):
    if params.qd_dark_prob > 0:
        raise ParameterError("analytic expectation assumes no QD blinking")
    if params.dead_time > 0:
        raise ParameterError("analytic expectation assumes zero dead time")


def _mean_photons(params, heralded=True):
    """Expected photons per channel per (heralded) trial by source."""
    p = params.p_pdc_given_herald if heralded else params.p_herald * params.p_pdc_given_herald
    return 0.5 * p, 0.5 * (params.p_qd + params.p_qd2)


def expected_zero_peak_density(params: ExperimentParams, model: CoincidenceModel, tau,
                               polarization: str | None = None):
    """Expected Delta-n = 0 pair density (1/ns per heralded trial) of the simulation."""
    _check_expectable(params)
    pol = polarization or params.polarization
    tau = np.asarray(tau, dtype=float)
    p, q1, q2 = params.p_pdc_given_herald, params.p_qd, params.p_qd2
    base = model.with_(epsilon=0.0, detector_fwhm=params.detector_fwhm)
    w_hom = p * (q1 * (1 - q2) + q2 * (1 - q1))
    out = w_hom * hom_model.cross_correlation_density(base, tau, pol)
    out = out + 2 * p * q1 * q2 * hom_model.cross_correlation_density(base, tau, "perpendicular")
    g = model.wp_qd.decay_rate
    out = out + 0.5 * q1 * q2 * 0.5 * g * hom_model.exp_gauss_conv(g, base.tau_sigma, tau)
    d = params.dark_rate_per_trial
    if d > 0:
        if model.wp_qd.shape != "one_sided" or model.wp_pdc.shape != "one_sided":
            raise ParameterError("dark-count expectation needs one-sided packets")
        T = params.period
        s = params.jitter_sigma
        n_pdc, n_qd = _mean_photons(params)

        def in_window(lo, hi):
            # expected photons per channel with detection time in [lo, hi)
            return (n_pdc * (_emg_cdf(hi, model.wp_pdc.decay_rate, s)
                             - _emg_cdf(lo, model.wp_pdc.decay_rate, s))
                    + n_qd * (_emg_cdf(hi, g, s) - _emg_cdf(lo, g, s)))

        # dark on ch1 x photon on ch2: t2 = t_dark + tau, t_dark ~ U[0, T)
        out = out + d / T * in_window(tau, T + tau)
        # photon on ch1 x dark on ch2: t1 = t_dark - tau
        out = out + d / T * in_window(-tau, T - tau)
        out = out + d * d * np.clip(T - np.abs(tau), 0, None) / T ** 2
    return out


def expected_zero_peak_counts(params: ExperimentParams, model: CoincidenceModel,
                              edges_ps, n_heralded: int, polarization: str | None = None,
                              sub: int = 16):
    """Expected histogram counts in the Delta-n = 0 row for ``n_heralded`` trials."""
    edges = np.asarray(edges_ps, dtype=float) / 1000.0
    lo, hi = edges[:-1], edges[1:]
    # Gauss-Legendre per bin
    x, w = np.polynomial.legendre.leggauss(sub)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    pts = mid[:, None] + half[:, None] * x[None, :]
    dens = expected_zero_peak_density(params, model, pts.ravel(), polarization)
    return n_heralded * (dens.reshape(pts.shape) * w[None, :]).sum(axis=1) * half


def expected_areas(params: ExperimentParams, model: CoincidenceModel,
                   window: float = float("inf"), span: float | None = None):
    """Expected (A_perp, A_par) per heralded trial, optionally emission-gated to [0, w].

    Ungated dark-count pairs are counted within |tau| <= span/2 (default: one period).
    """
    _check_expectable(params)
    p, q1, q2 = params.p_pdc_given_herald, params.p_qd, params.p_qd2
    base = model.with_(epsilon=0.0)
    w_hom = p * (q1 * (1 - q2) + q2 * (1 - q1))
    a_int, ov, _ = hom_model.gated_areas(base, window)
    fq = 1.0 if np.isinf(window) else float(model.wp_qd.cdf(window) - model.wp_qd.cdf(0.0))
    extra = 2 * p * q1 * q2 * a_int + 0.5 * q1 * q2 * fq ** 2
    a_perp = w_hom * a_int + extra
    a_par = w_hom * (a_int - ov) + extra
    d = params.dark_rate_per_trial
    if d > 0:
        T = params.period
        if np.isinf(window):
            span = T if span is None else span
            no_dark = params.replace(dark_rate_per_trial=0.0)
            # dark pairs are polarization independent; integrate the difference
            extra_d = lambda t: float(
                expected_zero_peak_density(params, model, t, "perpendicular")
                - expected_zero_peak_density(no_dark, model, t, "perpendicular"))
            dark_area, _ = integrate.quad(extra_d, -span / 2, span / 2, limit=400,
                                          points=[0.0])
        else:
            n_pdc, n_qd = _mean_photons(params)
            fp = float(model.wp_pdc.cdf(window) - model.wp_pdc.cdf(0.0))
            dw = d * window / T
            dark_area = 2 * dw * (n_pdc * fp + n_qd * fq) + dw * dw
        a_perp += dark_area
        a_par += dark_area
    return a_perp, a_par
