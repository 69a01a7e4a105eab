"""Paper-reproduction checks: one function per acceptance criterion.

Each ``criterion_*`` function returns a list of :class:`Row`; ``run_all``
strings them together and ``write_outputs`` emits the comparison table.
Monte Carlo checks use fixed seeds derived from ``DEFAULT_SEED`` so a rerun
reproduces every number bit for bit.
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate

from . import correlation, fitting, hom_model, mc_engine, tagstream
from .hom_model import CoincidenceModel
from .photon_models import (FabryPerotSpec, fp_transmission, intensity_fwhm, pdc_wavepacket,
                            qd_wavepacket, spectral_density)

DEFAULT_SEED = 20100
PAPER_EPSILON = 0.165
PAPER_P_C_ZERO = 0.42


@dataclass
class Row:
    criterion: int
    name: str
    paper: float | None     # published number, None for purely structural checks
    computed: float
    lo: float
    hi: float
    note: str = ""
    passed: bool = field(init=False)

    def __post_init__(self):
        self.computed = float(self.computed)
        self.passed = bool(self.lo <= self.computed <= self.hi)

    @property
    def tolerance(self) -> str:
        return f"[{self.lo:.6g}, {self.hi:.6g}]"


def paper_model(epsilon: float = PAPER_EPSILON, detector_fwhm: float = 0.0,
                background_shape: str = "qd_overlap") -> CoincidenceModel:
    return CoincidenceModel(qd_wavepacket(0.83, 0.29), pdc_wavepacket(0.9), epsilon=epsilon,
                            detector_fwhm=detector_fwhm, background_shape=background_shape)


def hom_params(n_trials: int = 10_000_000, seed: int = DEFAULT_SEED, **kw):
    """Accelerated HOM parameters with the multi-photon weight set to the paper's epsilon."""
    p_qd, ratio = 0.1, 0.5
    kw.setdefault("p_qd2", mc_engine.p_qd2_for_epsilon(PAPER_EPSILON, p_qd / ratio, p_qd))
    kw.setdefault("detector_fwhm", mc_engine.PAPER_DETECTOR_FWHM)
    return mc_engine.accelerated_params(p_qd, ratio, 0.1, n_trials=n_trials, seed=seed, **kw)


def hbt_params(n_trials: int = 10_000_000, seed: int = DEFAULT_SEED + 2, p_qd: float = 0.05):
    return mc_engine.ExperimentParams(
        p_qd=p_qd, p_qd2=mc_engine.calibrate_p_qd2(mc_engine.PAPER_HBT_RATIO, p_qd),
        n_trials=n_trials, seed=seed)


def oracle_coalescence(model: CoincidenceModel) -> float:
    """P_c by direct 2-D quadrature of the joint densities (no closed forms)."""
    def area(pol):
        f = lambda t2, t1: float(hom_model.joint_density(model, t1, t2, pol))
        # split on the diagonal where |t1 - t2| has a kink
        lo, _ = integrate.dblquad(f, 0, np.inf, 0, lambda t1: t1, epsabs=1e-13, epsrel=1e-11)
        hi, _ = integrate.dblquad(f, 0, np.inf, lambda t1: t1, np.inf, epsabs=1e-13,
                                  epsrel=1e-11)
        return lo + hi
    a_perp, a_par = area("perpendicular"), area("parallel")
    return (a_perp - a_par) / a_perp / (1.0 + model.epsilon)


# --- criteria ---------------------------------------------------------------

def criterion_model_pc() -> list[Row]:
    pc = hom_model.coalescence_probability(paper_model())
    return [Row(1, "P_c,max (T1=0.83, T2=0.29, 0.9 GHz, eps=0.165)", 0.27, pc, 0.24, 0.30)]


def criterion_ideal_limits() -> list[Row]:
    m0 = paper_model(epsilon=0.0)
    closed = hom_model.coalescence_probability(m0, method="closed")
    oracle = oracle_coalescence(m0)
    qd = qd_wavepacket(0.83, 2 * 0.83)
    same = CoincidenceModel(qd, qd)
    return [
        Row(2, "P_c at eps=0 (closed form)", None, closed, 0.3165 - 1e-4, 0.3165 + 1e-4),
        Row(2, "P_c at eps=0 (2-D quadrature oracle)", None, oracle, 0.3165 - 1e-4,
            0.3165 + 1e-4),
        Row(2, "|closed form - oracle|", None, abs(closed - oracle), 0.0, 1e-4),
        Row(2, "P_c identical transform-limited sources", None,
            hom_model.coalescence_probability(same), 1 - 1e-6, 1 + 1e-6),
    ]


def criterion_gating(background_gating: str = "relative") -> list[Row]:
    m = paper_model()
    rows = []
    for w, paper_f, paper_r, (flo, fhi), (rlo, rhi) in [
            (0.29, 0.61, 0.25, (0.55, 0.67), (0.22, 0.28)),
            (0.14, 0.75, None, (0.69, 0.81), (0.08, 0.12))]:
        frac, ret = hom_model.gated_coalescence(m, w, background_gating)
        rows.append(Row(3, f"gated P_c,fraction, w={w} ns", paper_f, frac, flo, fhi))
        rows.append(Row(3, f"gated retention, w={w} ns", paper_r, ret, rlo, rhi))
    return rows


def criterion_detector_calibration() -> list[Row]:
    rows = []
    m = paper_model()
    fw = hom_model.calibrate_detector(m, PAPER_P_C_ZERO)
    grid = np.linspace(0.0, 2.0, 41)
    vals = np.array([hom_model.coalescence_zero(m.with_(detector_fwhm=w)) for w in grid])
    monotone = bool(np.all(np.diff(vals) < 0))
    rows.append(Row(4, "calibrated detector FWHM (ns)", None, fw, 1e-9, 2.0 - 1e-9,
                    "root of P_c(0) = 0.42"))
    rows.append(Row(4, "P_c(0) at calibrated FWHM", PAPER_P_C_ZERO,
                    hom_model.coalescence_zero(m.with_(detector_fwhm=fw)),
                    PAPER_P_C_ZERO - 1e-3, PAPER_P_C_ZERO + 1e-3))
    rows.append(Row(4, "P_c(0) strictly decreasing in FWHM (root unique)", None,
                    float(monotone), 1, 1))
    for shape in hom_model.BACKGROUND_SHAPES:
        ms = paper_model(background_shape=shape)
        note = f"calibrated FWHM {hom_model.calibrate_detector(ms, PAPER_P_C_ZERO):.4f} ns"
        rows.append(Row(4, f"P_c(0) ideal detector, background {shape}", None,
                        hom_model.coalescence_zero(ms), 0.86, 0.99, note))
    return rows


def hom_streams(seed: int = DEFAULT_SEED, n_trials: int = 10_000_000, threads: int = 1,
                **kw):
    model = paper_model(detector_fwhm=mc_engine.PAPER_DETECTOR_FWHM)
    base = hom_params(n_trials, seed, **kw)
    perp = mc_engine.run_hom_simulation(base.replace(polarization="perpendicular"), model,
                                        threads)
    par = mc_engine.run_hom_simulation(base.replace(polarization="parallel", seed=seed + 1),
                                       model, threads)
    return base, model, perp, par


def zero_peak_chi2(hist, params, model, polarization, min_expected: float = 5.0):
    """Chi^2 and degrees of freedom of the dn = 0 row against the analytic expectation."""
    expected = mc_engine.expected_zero_peak_counts(params, model, hist.edges,
                                                   hist.total_heralded_trials, polarization)
    obs = hist.row(0)
    use = expected >= min_expected
    chi2 = float(np.sum((obs[use] - expected[use]) ** 2 / expected[use]))
    return chi2, int(use.sum())


def criterion_mc_equivalence(seed: int = DEFAULT_SEED, threads: int = 1,
                             n_trials: int = 10_000_000, _cache: dict | None = None) -> list[Row]:
    params, model, perp, par = hom_streams(seed, n_trials, threads)
    if _cache is not None:
        _cache["hom"] = (params, model, perp, par)
    hp, hq, est, _ = correlation.heralded_analysis(perp, par, (0, 0))
    rows = []
    for pol, h in (("perpendicular", hp), ("parallel", hq)):
        chi2, dof = zero_peak_chi2(h, params, model, pol)
        rows.append(Row(5, f"chi2/dof dn=0 histogram vs model, {pol}", None, chi2 / dof,
                        0.5, 2.0, f"{dof} bins, {h.total_heralded_trials} heralded trials"))
    target = hom_model.coalescence_probability(paper_model())
    rows.append(Row(5, "MC P_c (dn=0 areas)", 0.27, est.value, target - 2 * est.sigma,
                    target + 2 * est.sigma, f"sigma {est.sigma:.4f}; model {target:.4f}"))
    return rows


def criterion_hbt(seed: int = DEFAULT_SEED + 2, threads: int = 1,
                  n_trials: int = 10_000_000, _cache: dict | None = None) -> list[Row]:
    params = hbt_params(n_trials, seed)
    stream = mc_engine.run_hbt_simulation(params, threads=threads)
    if _cache is not None:
        _cache["hbt"] = (params, stream)
    hist = correlation.autocorrelation(stream, (-1, 1))
    r = correlation.zero_peak_ratio(hist, (-1, 1))
    return [
        Row(6, "HBT zero-peak / adjacent-peak ratio", mc_engine.PAPER_HBT_RATIO, r.value,
            0.150, 0.180, f"sigma {r.sigma:.4f}"),
        Row(6, "HBT zero peak below half the side peaks", None, r.value, 0.0, 0.5 - 1e-12),
    ]


def synthetic_spectrum(kind: str, seed: int, noise: float = 0.05, n: int = 201):
    """Noisy synthetic spectrum (GHz, arb.) with multiplicative Gaussian noise."""
    rng = np.random.default_rng(seed)
    nu = np.linspace(-5.0, 5.0, n)
    if kind == "qd":
        y = spectral_density(qd_wavepacket(0.83, 0.29), nu)
    elif kind == "pdc":
        # broadband down-conversion through a 0.9 GHz etalon
        fp = FabryPerotSpec(free_spectral_range=50.0, finesse=50.0 / 0.9)
        y = np.exp(-0.5 * (nu / 100.0) ** 2) * fp_transmission(fp, nu)
    else:
        raise ValueError(kind)
    y = y / y.max() * 1000.0
    return nu, y * (1.0 + noise * rng.standard_normal(n))


def _detection_times(stream, source):
    sel = (stream.source == source) & (stream.records["channel"] != tagstream.CHANNEL_HERALD)
    return stream.records["time_ps"][sel] / 1000.0


def fit_decay(times_ns, detector_fwhm, t_range=(-4.0, 8.0)):
    t, y = fitting.decay_histogram(times_ns, 0.064, t_range)
    sigma = np.sqrt(np.maximum(y, 1.0))
    return fitting.fit_exp_gauss(t, y, detector_fwhm=detector_fwhm, sigma=sigma)


def jacobian_check(seed: int = 7, n: int = 50) -> float:
    """Largest relative analytic-vs-central-difference Jacobian error over random points."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        nu = rng.uniform(-3, 3, 25)
        p = [rng.uniform(-0.5, 0.5), rng.uniform(0.3, 2), rng.uniform(0.5, 5), rng.uniform(0, 1)]
        worst = max(worst, _jac_err(lambda q: fitting.lorentzian(nu, *q),
                                    fitting.lorentzian_jacobian(nu, *p), p))
        t = rng.uniform(-2, 6, 25)
        p = [rng.uniform(0.3, 2), rng.uniform(10, 1000), rng.uniform(-0.5, 0.5),
             rng.uniform(0.1, 1.2)]
        worst = max(worst, _jac_err(lambda q: fitting.emg(t, *q),
                                    fitting.emg_jacobian(t, *p), p))
    return worst


def _jac_err(f, J, p):
    p = np.asarray(p, dtype=float)
    num = np.empty_like(J)
    for k in range(len(p)):
        h = 1e-4 * max(1.0, abs(p[k]))
        d = np.zeros_like(p)
        d[k] = h
        # five-point central difference, O(h^4)
        num[:, k] = (8 * (f(p + d) - f(p - d)) - (f(p + 2 * d) - f(p - 2 * d))) / (12 * h)
    scale = np.maximum(np.abs(J), np.abs(J).max(axis=0, keepdims=True) * 1e-3)
    scale = np.where(scale > 0, scale, 1.0)
    return float(np.max(np.abs(num - J) / scale))


def criterion_fits(seed: int = DEFAULT_SEED, threads: int = 1,
                   _cache: dict | None = None) -> list[Row]:
    rows = []
    nu, y = synthetic_spectrum("qd", seed + 10)
    fq = fitting.fit_lorentzian(nu, y)
    rows.append(Row(7, "QD linewidth fit (GHz)", 1.1, fq["fwhm"], 1.0, 1.2))
    nu, y = synthetic_spectrum("pdc", seed + 11)
    fp = fitting.fit_lorentzian(nu, y)
    rows.append(Row(7, "filtered PDC linewidth fit (GHz)", 0.9, fp["fwhm"], 0.8, 1.0))

    cache = _cache or {}
    if "hbt" in cache:
        params, hbt = cache["hbt"]
    else:
        params = hbt_params(n_trials=2_000_000, seed=seed + 12)
        hbt = mc_engine.run_hbt_simulation(params, threads=threads)
    ft = fit_decay(_detection_times(hbt, mc_engine.SOURCE_QD), params.detector_fwhm)
    rows.append(Row(7, "QD lifetime from MC decay (ns)", 0.83, ft["lifetime"], 0.79, 0.87,
                    f"+- {ft.errors['lifetime']:.4f}"))
    if "hom" in cache:
        hp, _, perp, _ = cache["hom"]
    else:
        hp, _, perp, _ = hom_streams(seed + 13, 2_000_000, threads)
    fd = fit_decay(_detection_times(perp, mc_engine.SOURCE_PDC), hp.detector_fwhm)
    dur = np.log(2.0) * fd["lifetime"]
    rows.append(Row(7, "PDC pulse duration from MC (ns)", 0.14, dur, 0.14 * 0.8, 0.14 * 1.2,
                    f"model {intensity_fwhm(pdc_wavepacket(0.9)):.4f} ns"))
    rows.append(Row(7, "max relative Jacobian error", None, jacobian_check(), 0.0, 1e-6))
    return rows


def blinking_params(n_trials: int = 10_000_000, seed: int = DEFAULT_SEED + 4):
    return hom_params(n_trials, seed, qd_dark_prob=0.3, qd_dark_trials=3.0)


def criterion_unheralded(seed: int = DEFAULT_SEED + 4, threads: int = 1,
                         n_trials: int = 10_000_000, near=(1,), far=(8, 9, 10)) -> list[Row]:
    model = paper_model(detector_fwhm=mc_engine.PAPER_DETECTOR_FWHM)
    base = blinking_params(n_trials, seed)
    perp = mc_engine.run_hom_simulation(base.replace(polarization="perpendicular"), model,
                                        threads)
    par = mc_engine.run_hom_simulation(base.replace(polarization="parallel", seed=seed + 1),
                                       model, threads)
    _, _, her, _ = correlation.heralded_analysis(perp, par, (0, 0))
    dmax = max(far)
    hp, _, unh, _ = correlation.unheralded_analysis(perp, par, (-dmax, dmax))
    a_near = sum(correlation.peak_area(hp, s * d) for d in near for s in (-1, 1))
    a_far = sum(correlation.peak_area(hp, s * d) for d in far for s in (-1, 1))
    ratio = (a_near / (2 * len(near))) / (a_far / (2 * len(far)))
    r_sig = ratio * np.sqrt(1.0 / a_near + 1.0 / a_far)
    return [
        Row(8, "unheralded P_c below heralded P_c", 0.132, unh.value, -1.0,
            her.value - 2 * np.hypot(her.sigma, unh.sigma),
            f"heralded {her.value:.4f} +- {her.sigma:.4f}; unheralded +- {unh.sigma:.4f}"),
        Row(8, "near (|dn|=1) / far (|dn|=8-10) side-peak ratio", None, ratio, 0.0,
            1.0 - 3 * r_sig, f"sigma {r_sig:.4f}"),
    ]


def _stream_bytes(stream, fmt):
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "s." + ("tags" if fmt == "binary" else "csv"))
        tagstream.save_stream(path, stream)
        with open(path, "rb") as fh:
            blob = fh.read()
        back = tagstream.load_stream(path)
    return blob, back


def brute_force_pairs(stream, dn_lo, dn_hi) -> int:
    """Number of channel-1 x channel-2 pairs with dn in range, by explicit double loop."""
    rec = stream.records
    t1 = rec["trial"][rec["channel"] == 1].astype(np.int64)
    t2 = rec["trial"][rec["channel"] == 2].astype(np.int64)
    n = 0
    for a in t1:
        d = t2 - a
        n += int(np.count_nonzero((d >= dn_lo) & (d <= dn_hi)))
    return n


def criterion_invariants(seed: int = DEFAULT_SEED + 6) -> list[Row]:
    model = paper_model(detector_fwhm=mc_engine.PAPER_DETECTOR_FWHM)
    params = hom_params(300_000, seed, dark_rate_per_trial=1e-3, dead_time=0.05)
    a = mc_engine.run_hom_simulation(params, model)
    b = mc_engine.run_hom_simulation(params, model, threads=3)
    bin_a, back_a = _stream_bytes(a, "binary")
    bin_b, _ = _stream_bytes(b, "binary")
    csv_a, back_c = _stream_bytes(a, "csv")
    rows = [
        Row(9, "byte-identical reruns (1 vs 3 threads)", None, float(bin_a == bin_b), 1, 1),
        Row(9, "binary round-trip exact", None, float(back_a.equals(a)), 1, 1),
        Row(9, "CSV round-trip exact", None, float(back_c.equals(a)), 1, 1),
        Row(9, "binary size = 64 + 16 N", None,
            float(len(bin_a) == tagstream.HEADER_SIZE + tagstream.RECORD_SIZE * len(a)), 1, 1),
    ]
    h = correlation.build_cross_correlation(a, (-3, 3))
    rows.append(Row(9, "histogram count conservation", None,
                    float(h.total() + h.pairs_outside_span == brute_force_pairs(a, -3, 3)),
                    1, 1, f"{h.total()} pairs binned"))
    return rows


CRITERIA = {
    1: criterion_model_pc,
    2: criterion_ideal_limits,
    3: criterion_gating,
    4: criterion_detector_calibration,
    5: criterion_mc_equivalence,
    6: criterion_hbt,
    7: criterion_fits,
    8: criterion_unheralded,
    9: criterion_invariants,
}


def run_all(seed: int = DEFAULT_SEED, threads: int = 1) -> list[Row]:
    cache: dict = {}
    rows = []
    rows += criterion_model_pc()
    rows += criterion_ideal_limits()
    rows += criterion_gating()
    rows += criterion_detector_calibration()
    rows += criterion_mc_equivalence(seed, threads, _cache=cache)
    rows += criterion_hbt(seed + 2, threads, _cache=cache)
    rows += criterion_fits(seed, threads, _cache=cache)
    rows += criterion_unheralded(seed + 4, threads)
    rows += criterion_invariants(seed + 6)
    return rows


def format_table(rows: list[Row]) -> str:
    out = io.StringIO()
    out.write("| # | quantity | paper | computed | tolerance | pass |\n")
    out.write("|---|---|---|---|---|---|\n")
    for r in rows:
        paper = "-" if r.paper is None else f"{r.paper:g}"
        out.write(f"| {r.criterion} | {r.name} | {paper} | {r.computed:.6g} | {r.tolerance} | "
                  f"{'PASS' if r.passed else 'FAIL'} |\n")
    return out.getvalue()


def write_outputs(out_dir, rows: list[Row], seed: int) -> bool:
    os.makedirs(out_dir, exist_ok=True)
    ok = all(r.passed for r in rows)
    doc = {"seed": seed, "all_pass": ok, "n_rows": len(rows),
           "rows": [{**asdict(r), "tolerance": r.tolerance} for r in rows]}
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "report.md"), "w") as fh:
        fh.write(format_table(rows))
    with open(os.path.join(out_dir, "report.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["criterion", "quantity", "paper", "computed", "lo", "hi", "pass", "note"])
        for r in rows:
            w.writerow([r.criterion, r.name, "" if r.paper is None else r.paper,
                        repr(r.computed), r.lo, r.hi, int(r.passed), r.note])
    return ok
