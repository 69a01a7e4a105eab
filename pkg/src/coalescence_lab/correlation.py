"""Herald conditioning, Delta-n resolved correlation histograms and coalescence estimators.

A pair is a channel-1 record in trial l and a channel-2 record in trial m;
it lands at trial difference dn = m - l and delay tau = t2 - t1.  Pairing is
exhaustive within the requested dn range.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .tagstream import CHANNEL_HERALD, CHANNEL_HOM1, CHANNEL_HOM2, TagStream, TagStreamHeader

DEFAULT_BIN_PS = 64
PAIR_CHUNK = 1 << 20


class AnalysisError(ValueError):
    pass


@dataclass
class CorrelationHistogram:
    dn_lo: int
    dn_hi: int
    bin_width: int            # ps
    edges: np.ndarray         # ps, shared by every dn row
    counts: np.ndarray        # (n_dn, n_bins) int64
    total_heralded_trials: int
    pairs_outside_span: int = 0

    @property
    def dn_values(self) -> np.ndarray:
        return np.arange(self.dn_lo, self.dn_hi + 1)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def row(self, dn: int) -> np.ndarray:
        if not self.dn_lo <= dn <= self.dn_hi:
            raise AnalysisError(f"dn={dn} outside histogram range [{self.dn_lo}, {self.dn_hi}]")
        return self.counts[dn - self.dn_lo]

    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "CorrelationHistogram") -> "CorrelationHistogram":
        if (self.dn_lo, self.dn_hi) != (other.dn_lo, other.dn_hi) or \
                not np.array_equal(self.edges, other.edges):
            raise AnalysisError("histograms have different binning")
        return CorrelationHistogram(self.dn_lo, self.dn_hi, self.bin_width, self.edges,
                                    self.counts + other.counts,
                                    self.total_heralded_trials + other.total_heralded_trials,
                                    self.pairs_outside_span + other.pairs_outside_span)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dn", "tau_ps", "count"])
            centers = self.centers
            for i, dn in enumerate(self.dn_values):
                for c, n in zip(centers, self.counts[i]):
                    w.writerow([int(dn), repr(float(c)), int(n)])


@dataclass(frozen=True)
class CoalescenceEstimate:
    value: float
    sigma: float

    def to_dict(self) -> dict:
        return {"value": self.value, "sigma": self.sigma}


def tau_edges(period_ps: int, bin_width: int = DEFAULT_BIN_PS, span_ps: int | None = None):
    """Bin edges centred on tau = 0.

    Without ``span_ps`` the span is the largest odd multiple of ``bin_width``
    that fits in one period; the sub-bin residual at the edges is dropped.
    """
    if bin_width <= 0:
        raise AnalysisError("bin_width must be positive")
    if span_ps is None:
        n = int(period_ps // bin_width)
        if n % 2 == 0:
            n -= 1
        if n < 1:
            raise AnalysisError("bin_width larger than the trial period")
    else:
        if span_ps % bin_width:
            raise AnalysisError(f"bin_width {bin_width} does not divide the tau span {span_ps}")
        n = span_ps // bin_width
    half = n * bin_width / 2.0
    return np.linspace(-half, half, n + 1)


def condition_on_herald(stream: TagStream) -> TagStream:
    """Drop trials without a herald record and renumber the rest 1, 2, ..."""
    rec = stream.records
    heralded = np.unique(rec["trial"][rec["channel"] == CHANNEL_HERALD])
    keep = np.isin(rec["trial"], heralded)
    out = stream.select(keep)
    out.records = out.records.copy()
    out.records["trial"] = np.searchsorted(heralded, out.records["trial"]) + 1
    h = stream.header
    out.header = TagStreamHeader(h.format_version, h.rep_rate, len(heralded), h.seed,
                                 h.params_digest)
    return out


def _pairs(trial1, trial2, dn_lo, dn_hi):
    """Index pairs (i, j) with trial2[j] - trial1[i] in [dn_lo, dn_hi]; trial2 sorted."""
    start = np.searchsorted(trial2, trial1 + dn_lo, side="left")
    stop = np.searchsorted(trial2, trial1 + dn_hi, side="right")
    n = stop - start
    total = int(n.sum())
    i = np.repeat(np.arange(len(trial1)), n)
    offs = np.repeat(np.cumsum(n) - n, n)
    j = np.repeat(start, n) + (np.arange(total) - offs)
    return i, j


def build_cross_correlation(stream: TagStream, dn_range=(-5, 5),
                            bin_width: int = DEFAULT_BIN_PS, span_ps: int | None = None,
                            n_trials: int | None = None) -> CorrelationHistogram:
    """Histogram of (dn, tau) over all channel-1 x channel-2 pairs."""
    dn_lo, dn_hi = (int(dn_range[0]), int(dn_range[1]))
    if dn_hi < dn_lo:
        raise AnalysisError("empty dn range")
    edges = tau_edges(stream.header.period_ps, bin_width, span_ps)
    n_bins = len(edges) - 1
    rec = stream.records
    r1 = rec[rec["channel"] == CHANNEL_HOM1]
    r2 = rec[rec["channel"] == CHANNEL_HOM2]
    tr1 = r1["trial"].astype(np.int64)
    tr2 = r2["trial"].astype(np.int64)
    t1 = r1["time_ps"].astype(np.int64)
    t2 = r2["time_ps"].astype(np.int64)
    counts = np.zeros((dn_hi - dn_lo + 1) * n_bins, dtype=np.int64)
    outside = 0
    lo_edge = edges[0]
    # bound the pair buffer: about PAIR_CHUNK pairs per block
    per_rec = max(1.0, len(tr2) / max(1, (tr2[-1] - tr2[0] + 1) if len(tr2) else 1)
                  * (dn_hi - dn_lo + 1))
    step = max(1, int(PAIR_CHUNK / per_rec))
    for s in range(0, len(tr1), step):
        i, j = _pairs(tr1[s:s + step], tr2, dn_lo, dn_hi)
        i += s
        dn = tr2[j] - tr1[i]
        tau = t2[j] - t1[i]
        b = np.floor((tau - lo_edge) / bin_width).astype(np.int64)
        ok = (b >= 0) & (b < n_bins)
        outside += int((~ok).sum())
        counts += np.bincount((dn[ok] - dn_lo) * n_bins + b[ok], minlength=len(counts))
    n_tr = stream.header.n_trials if n_trials is None else n_trials
    return CorrelationHistogram(dn_lo, dn_hi, int(bin_width), edges,
                                counts.reshape(dn_hi - dn_lo + 1, n_bins), n_tr, outside)


def autocorrelation(stream: TagStream, dn_range=(-5, 5), bin_width: int = DEFAULT_BIN_PS,
                    span_ps: int | None = None) -> CorrelationHistogram:
    """Unconditioned channel-1 x channel-2 correlation (HBT)."""
    return build_cross_correlation(stream, dn_range, bin_width, span_ps)


def peak_area(hist: CorrelationHistogram, dn: int, tau_window: float | None = None) -> int:
    """Counts in the dn peak with |tau| <= tau_window ps (default: whole row)."""
    row = hist.row(dn)
    if tau_window is None:
        return int(row.sum())
    c = hist.centers
    return int(row[np.abs(c) <= tau_window].sum())


def side_peak_mean(hist: CorrelationHistogram, dns=None) -> float:
    if dns is None:
        dns = [d for d in hist.dn_values if d != 0]
    return float(np.mean([peak_area(hist, d) for d in dns]))


def zero_peak_ratio(hist: CorrelationHistogram, dns=(-1, 1)) -> CoalescenceEstimate:
    """Zero-peak area over the mean of the given side peaks, with Poisson sigma."""
    a0 = peak_area(hist, 0)
    side = [peak_area(hist, d) for d in dns]
    s = float(np.sum(side))
    if s == 0:
        raise AnalysisError("side peaks are empty")
    k = len(side)
    r = a0 * k / s
    sigma = r * np.sqrt((1.0 / a0 if a0 else 0.0) + 1.0 / s)
    if a0 == 0:
        sigma = k / s
    return CoalescenceEstimate(float(r), float(sigma))


def _ratio_estimate(a_perp: float, a_par: float) -> CoalescenceEstimate:
    if a_perp <= 0:
        raise AnalysisError("perpendicular area is zero")
    value = (a_perp - a_par) / a_perp
    sigma = np.sqrt(a_par * (a_perp + a_par) / a_perp ** 3)
    if sigma == 0:
        # a_par = 0: one-count upper fluctuation keeps sigma > 0
        sigma = np.sqrt((a_perp + 1.0) / a_perp ** 3)
    return CoalescenceEstimate(float(value), float(sigma))


def estimate_coalescence(hist_perp: CorrelationHistogram, hist_par: CorrelationHistogram,
                         tau_window: float | None = None) -> CoalescenceEstimate:
    """P_c = (A_perp - A_par) / A_perp from the dn = 0 peaks."""
    return _ratio_estimate(peak_area(hist_perp, 0, tau_window), peak_area(hist_par, 0, tau_window))


def estimate_zero_coalescence(hist_perp: CorrelationHistogram, hist_par: CorrelationHistogram,
                              center_bin_width: int = DEFAULT_BIN_PS) -> CoalescenceEstimate:
    """P_c(0) from the tau = 0 bin(s) of width ``center_bin_width`` ps."""
    if center_bin_width % hist_perp.bin_width:
        raise AnalysisError("center_bin_width must be a multiple of the histogram bin width")
    half = center_bin_width / 2.0
    c = hist_perp.centers
    sel = np.abs(c) < half
    a_perp = int(hist_perp.row(0)[sel].sum())
    a_par = int(hist_par.row(0)[sel].sum())
    if a_perp == 0:
        raise AnalysisError("empty centre bin")
    return _ratio_estimate(a_perp, a_par)


def gate_stream(stream: TagStream, window_ns: float, gate_on: str = "emission") -> TagStream:
    """Keep heralds and the channel-1/2 records whose time lies in [0, window]."""
    if not window_ns > 0:
        raise AnalysisError("gate window must be > 0")
    if gate_on == "emission":
        if stream.emission_ps is None:
            raise AnalysisError("stream carries no emission times; use gate_on='detection'")
        t = stream.emission_ps
    elif gate_on == "detection":
        t = stream.records["time_ps"]
    else:
        raise AnalysisError(f"unknown gate_on {gate_on!r}")
    w_ps = window_ns * 1000.0
    keep = (stream.records["channel"] == CHANNEL_HERALD) | ((t >= 0) & (t <= w_ps))
    return stream.select(keep)


def gated_estimate(stream_perp: TagStream, stream_par: TagStream, window_ns: float,
                   gate_on: str = "emission", heralded: bool = True,
                   bin_width: int = DEFAULT_BIN_PS):
    """Gated P_c and the retained fraction of the perpendicular dn = 0 peak."""
    if heralded:
        stream_perp, stream_par = condition_on_herald(stream_perp), condition_on_herald(stream_par)
    h = lambda s: build_cross_correlation(s, (0, 0), bin_width)
    full = peak_area(h(stream_perp), 0)
    gp = h(gate_stream(stream_perp, window_ns, gate_on))
    gq = h(gate_stream(stream_par, window_ns, gate_on))
    est = estimate_coalescence(gp, gq)
    retention = peak_area(gp, 0) / full if full else 0.0
    return est, retention


def heralded_analysis(stream_perp: TagStream, stream_par: TagStream, dn_range=(-5, 5),
                      bin_width: int = DEFAULT_BIN_PS, center_bin_width: int = DEFAULT_BIN_PS):
    hp = build_cross_correlation(condition_on_herald(stream_perp), dn_range, bin_width)
    hq = build_cross_correlation(condition_on_herald(stream_par), dn_range, bin_width)
    return hp, hq, estimate_coalescence(hp, hq), estimate_zero_coalescence(hp, hq, center_bin_width)


def unheralded_analysis(stream_perp: TagStream, stream_par: TagStream, dn_range=(-5, 5),
                        bin_width: int = DEFAULT_BIN_PS, center_bin_width: int = DEFAULT_BIN_PS):
    """Cross-correlation on raw trial numbers, ignoring the herald channel."""
    hp = build_cross_correlation(stream_perp, dn_range, bin_width)
    hq = build_cross_correlation(stream_par, dn_range, bin_width)
    return hp, hq, estimate_coalescence(hp, hq), estimate_zero_coalescence(hp, hq, center_bin_width)


def write_report(path, **entries):
    """JSON report; CoalescenceEstimate values become {value, sigma} objects."""
    def conv(v):
        if isinstance(v, CoalescenceEstimate):
            return v.to_dict()
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [conv(x) for x in v]
        if isinstance(v, np.generic):
            return v.item()
        return v

    with open(path, "w") as fh:
        json.dump(conv(entries), fh, indent=2, sort_keys=True)
        fh.write("\n")
