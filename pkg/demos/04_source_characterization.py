"""
Linewidths and lifetimes from synthetic characterization data
==============================================================

Lorentzian fits to noisy spectra and an exponential-with-jitter fit to a
simulated decay histogram.
"""
import numpy as np

from coalescence_lab import fitting, mc_engine as mc
from coalescence_lab.reproduce import synthetic_spectrum

for kind in ("qd", "pdc"):
    nu, y = synthetic_spectrum(kind, seed=5)
    r = fitting.fit_lorentzian(nu, y)
    print(f"{kind:3s} FWHM = {r['fwhm']:.3f} +- {r.errors['fwhm']:.3f} GHz "
          f"({r.iterations} iterations)")

params = mc.ExperimentParams(p_qd=0.05, p_qd2=0.0, n_trials=2_000_000, seed=6)
stream = mc.run_hbt_simulation(params)
t_det = stream.records["time_ps"][stream.source == mc.SOURCE_QD] / 1000.0
t, counts = fitting.decay_histogram(t_det, 0.064, (-4.0, 8.0))
sigma = np.sqrt(np.maximum(counts, 1))

known = fitting.fit_exp_gauss(t, counts, detector_fwhm=params.detector_fwhm, sigma=sigma)
print(f"T1 (known response) = {known['lifetime']:.3f} +- {known.errors['lifetime']:.3f} ns")
free = fitting.fit_exp_gauss(t, counts, sigma=sigma)
print(f"T1 (free response)  = {free['lifetime']:.3f} +- {free.errors['lifetime']:.3f} ns, "
      f"response FWHM {free['detector_fwhm']:.3f} ns")
