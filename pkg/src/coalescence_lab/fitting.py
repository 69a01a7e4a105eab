"""Least-squares recovery of linewidths and lifetimes from characterization data.

Two model functions with analytic Jacobians:

* Lorentzian spectrum ``peak / (1 + ((nu - center) / (fwhm/2))**2) + offset``
* exponential decay convolved with a Gaussian detector response (an
  exponentially modified Gaussian, EMG), evaluated through ``erfcx`` so that
  narrow responses do not overflow.

Both are minimized by a small Levenberg-Marquardt loop.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc, erfcx

from .hom_model import FWHM_TO_SIGMA

SQRT2 = np.sqrt(2.0)
SQRT2PI = np.sqrt(2.0 * np.pi)

# Levenberg-Marquardt constants: initial damping, multiplicative up/down
# factors, and the damping ceiling that counts as a stall.
LM_LAMBDA0 = 1e-3
LM_UP = 10.0
LM_DOWN = 10.0
LM_LAMBDA_MAX = 1e16


class FitError(RuntimeError):
    pass


class FitWarning(UserWarning):
    pass


@dataclass
class FitResult:
    params: dict
    errors: dict
    residual_sum: float
    converged: bool
    iterations: int
    n_points: int
    warnings: list = field(default_factory=list)

    def __getitem__(self, key):
        return self.params[key]

    def to_dict(self) -> dict:
        return {
            "params": {k: {"value": float(v), "sigma": float(self.errors[k])}
                       for k, v in self.params.items()},
            "residual_sum": float(self.residual_sum),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "n_points": int(self.n_points),
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def levenberg_marquardt(resid, jac, p0, max_iter=200, xtol=1e-10, ftol=1e-15):
    """Minimize ``sum(resid(p)**2)``.

    Marquardt scaling: the damping term is ``lambda * diag(J^T J)``.  A step
    is accepted only if it lowers the cost (ties are rejected).  Returns
    ``(p, cost, J, iterations, converged)``.
    """
    p = np.array(p0, dtype=float)
    r = resid(p)
    cost = float(r @ r)
    lam = LM_LAMBDA0
    J = jac(p)
    for it in range(1, max_iter + 1):
        g = J.T @ r
        A = J.T @ J
        d = np.diag(A).copy()
        d[d == 0] = 1.0
        while True:
            try:
                step = np.linalg.solve(A + lam * np.diag(d), -g)
            except np.linalg.LinAlgError:
                step = None
            if step is not None:
                p_new = p + step
                r_new = resid(p_new)
                cost_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
                if cost_new < cost:
                    break
            lam *= LM_UP
            if lam > LM_LAMBDA_MAX:
                return p, cost, J, it, True  # no descent direction left: at a minimum
        small_step = np.linalg.norm(step) <= xtol * (np.linalg.norm(p) + xtol)
        small_drop = (cost - cost_new) <= ftol * max(cost, 1e-300)
        p, r, cost = p_new, r_new, cost_new
        J = jac(p)
        lam = max(lam / LM_DOWN, 1e-12)
        if small_step or small_drop:
            return p, cost, J, it, True
    return p, cost, J, max_iter, False


def _finish(names, p, cost, J, it, converged, n, weighted, warn, strict):
    dof = max(n - len(p), 1)
    try:
        cov = np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError:
        cov = np.full((len(p), len(p)), np.inf)
    if not weighted:
        cov = cov * cost / dof
    err = np.sqrt(np.abs(np.diag(cov)))
    if not converged:
        msg = f"fit did not converge after {it} iterations"
        if strict:
            raise FitError(msg)
        warn.append(msg)
    for m in warn:
        warnings.warn(m, FitWarning, stacklevel=3)
    return FitResult(dict(zip(names, map(float, p))), dict(zip(names, map(float, err))),
                     float(cost), converged, it, n, warn)


def _prepare(x, y, sigma, min_points):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise FitError("x and y must be 1-D arrays of equal length")
    if len(x) < min_points:
        raise FitError(f"need at least {min_points} samples, got {len(x)}")
    if np.ptp(y) == 0:
        raise FitError("degenerate data: zero variance")
    w = np.ones_like(y) if sigma is None else 1.0 / np.broadcast_to(np.asarray(sigma, float), y.shape)
    return x, y, w


# --- Lorentzian -------------------------------------------------------------

LORENTZ_PARAMS = ("center", "fwhm", "peak", "offset")


def lorentzian(nu, center, fwhm, peak, offset=0.0):
    u = 2.0 * (np.asarray(nu, float) - center) / fwhm
    return peak / (1.0 + u * u) + offset


def lorentzian_jacobian(nu, center, fwhm, peak, offset=0.0):
    nu = np.asarray(nu, float)
    u = 2.0 * (nu - center) / fwhm
    den = 1.0 + u * u
    L = 1.0 / den
    dL_du = -2.0 * u / den ** 2
    return np.column_stack([
        peak * dL_du * (-2.0 / fwhm),
        peak * dL_du * (-u / fwhm),
        L,
        np.ones_like(nu),
    ])


def _lorentz_init(x, y):
    order = np.argsort(x)
    x, y = x[order], y[order]
    offset = float(np.min(y))
    i0 = int(np.argmax(y))
    peak = float(y[i0] - offset)
    half = offset + 0.5 * peak
    left = i0
    while left > 0 and y[left] > half:
        left -= 1
    right = i0
    while right < len(y) - 1 and y[right] > half:
        right += 1
    fwhm = float(x[right] - x[left])
    if fwhm <= 0:
        fwhm = float(np.ptp(x)) / 4
    return np.array([x[i0], fwhm, peak, offset])


def fit_lorentzian(nu, y, sigma=None, p0=None, fit_offset=True, strict=False,
                   max_iter=200) -> FitResult:
    """Fit a Lorentzian line; parameters ``center, fwhm, peak, offset``."""
    x, y, w = _prepare(nu, y, sigma, 8)
    start = _lorentz_init(x, y) if p0 is None else np.asarray(p0, float)
    if x.max() - x.min() < 2.0 * abs(start[1]):
        raise FitError("samples must span at least twice the FWHM")
    names = LORENTZ_PARAMS if fit_offset else LORENTZ_PARAMS[:3]
    free = slice(0, len(names))

    def full(p):
        return p if fit_offset else np.r_[p, 0.0]

    resid = lambda p: w * (lorentzian(x, *full(p)) - y)
    jac = lambda p: w[:, None] * lorentzian_jacobian(x, *full(p))[:, free]
    p, cost, J, it, ok = levenberg_marquardt(resid, jac, start[free], max_iter)
    p[1] = abs(p[1])
    return _finish(names, p, cost, J, it, ok, len(x), sigma is not None, [], strict)


# --- exponential decay with Gaussian response --------------------------------

def emg(t, lifetime, amplitude, t0, detector_fwhm):
    """``amplitude`` times the unit-area EMG density at ``t``."""
    t = np.asarray(t, float)
    lam = 1.0 / lifetime
    s = detector_fwhm * FWHM_TO_SIGMA
    if s == 0:
        return amplitude * np.where(t >= t0, lam * np.exp(-lam * np.maximum(t - t0, 0)), 0.0)
    z = (t0 - t + lam * s * s) / (SQRT2 * s)
    h = np.exp(-(t - t0) ** 2 / (2 * s * s))
    # erfcx branch for z >= 0, direct erfc branch for z < 0 (no overflow either way)
    safe_pos = np.where(z >= 0, z, 0.0)
    safe_neg = np.minimum(lam * (t0 - t) + 0.5 * lam * lam * s * s, 0.0)
    g = np.where(z >= 0, 0.5 * lam * h * erfcx(safe_pos),
                 0.5 * lam * np.exp(safe_neg) * erfc(np.where(z < 0, z, 0.0)))
    return amplitude * g


def emg_jacobian(t, lifetime, amplitude, t0, detector_fwhm):
    """Columns: d/d lifetime, d/d amplitude, d/d t0, d/d detector_fwhm."""
    t = np.asarray(t, float)
    lam = 1.0 / lifetime
    s = detector_fwhm * FWHM_TO_SIGMA
    g = emg(t, lifetime, 1.0, t0, detector_fwhm)
    h = np.exp(-(t - t0) ** 2 / (2 * s * s))
    m = t0 - t
    dg_dlam = g * (1.0 / lam + m + lam * s * s) - lam * s / SQRT2PI * h
    dg_dt0 = lam * g - lam * h / (SQRT2PI * s)
    dg_ds = lam * lam * s * g - lam / np.sqrt(np.pi) * h * (lam / SQRT2 - m / (SQRT2 * s * s))
    return np.column_stack([
        amplitude * dg_dlam * (-lam * lam),
        g,
        amplitude * dg_dt0,
        amplitude * dg_ds * FWHM_TO_SIGMA,
    ])


def _emg_init(x, y, fwhm):
    w = np.clip(y, 0, None)
    tot = w.sum()
    if tot <= 0:
        raise FitError("degenerate data: no positive counts")
    dx = np.median(np.diff(np.sort(x))) if len(x) > 1 else 1.0
    mean = float((w * x).sum() / tot)
    var = float((w * (x - mean) ** 2).sum() / tot)
    if fwhm is None:
        # tail slope between 60% and 5% of the maximum after the peak
        i0 = int(np.argmax(y))
        tail = (np.arange(len(y)) > i0) & (y < 0.6 * y[i0]) & (y > 0.05 * y[i0])
        if tail.sum() >= 3:
            slope = np.polyfit(x[tail], np.log(y[tail]), 1)[0]
            tau = -1.0 / slope if slope < 0 else np.sqrt(var) / 2
        else:
            tau = np.sqrt(var) / 2
        s2 = max(var - tau * tau, (dx / 2) ** 2)
        fwhm0 = np.sqrt(s2) / FWHM_TO_SIGMA
    else:
        s2 = (fwhm * FWHM_TO_SIGMA) ** 2
        tau = np.sqrt(max(var - s2, (0.1 * np.sqrt(var)) ** 2))
        fwhm0 = fwhm
    return np.array([tau, tot * dx, mean - tau, fwhm0])


def fit_exp_gauss(t, y, detector_fwhm: float | None = None, sigma=None, p0=None,
                  strict=False, max_iter=200) -> FitResult:
    """Fit ``lifetime, amplitude, t0`` (and ``detector_fwhm`` when not given).

    With ``detector_fwhm=None`` the response width is a free parameter.
    """
    x, y, w = _prepare(t, y, sigma, 8)
    start = _emg_init(x, y, detector_fwhm) if p0 is None else np.asarray(p0, float)
    if np.ptp(x) < 3.0 * start[0]:
        raise FitError("histogram must cover at least three lifetimes")
    free = detector_fwhm is None
    names = ("lifetime", "amplitude", "t0", "detector_fwhm") if free else \
        ("lifetime", "amplitude", "t0")

    def full(p):
        return p if free else np.r_[p, detector_fwhm]

    ncol = 4 if free else 3
    resid = lambda p: w * (emg(x, *full(p)) - y)
    jac = lambda p: w[:, None] * emg_jacobian(x, *full(p))[:, :ncol]
    p, cost, J, it, ok = levenberg_marquardt(resid, jac, start[:ncol], max_iter)
    if np.ptp(x) < 3.0 * p[0]:
        raise FitError(f"histogram spans {np.ptp(x):.3g} ns, less than three fitted "
                       f"lifetimes ({p[0]:.3g} ns)")
    warn = []
    if free and p[3] > 5.0 * p[0]:
        warn.append("detector response much wider than the lifetime: "
                    "lifetime and response width are poorly identifiable")
    return _finish(names, p, cost, J, it, ok, len(x), sigma is not None, warn, strict)


def decay_histogram(times_ns, bin_width: float = 0.064, t_range=None):
    """Histogram detection times; returns (bin centres, counts)."""
    times_ns = np.asarray(times_ns, float)
    if t_range is None:
        t_range = (times_ns.min(), times_ns.max())
    n = max(1, int(np.ceil((t_range[1] - t_range[0]) / bin_width)))
    edges = t_range[0] + bin_width * np.arange(n + 1)
    counts, _ = np.histogram(times_ns, edges)
    return 0.5 * (edges[:-1] + edges[1:]), counts
