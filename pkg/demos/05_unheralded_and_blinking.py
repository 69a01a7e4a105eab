"""
Unheralded correlations and QD blinking
========================================

Without herald conditioning, every QD photon in an unheralded trial adds
accidental coincidences, so the coalescence estimate drops.  Blinking
(the dot going dark after an emission) depletes the side peaks next to
zero delay.
"""
from coalescence_lab import correlation as cr, mc_engine as mc
from coalescence_lab.reproduce import hom_params, paper_model

model = paper_model(detector_fwhm=mc.PAPER_DETECTOR_FWHM)
params = hom_params(n_trials=4_000_000, seed=7, qd_dark_prob=0.3, qd_dark_trials=3.0)
perp = mc.run_hom_simulation(params.replace(polarization="perpendicular"), model)
par = mc.run_hom_simulation(params.replace(polarization="parallel", seed=8), model)

_, _, her, _ = cr.heralded_analysis(perp, par, (0, 0))
hp, _, unh, _ = cr.unheralded_analysis(perp, par, (-10, 10))
print(f"heralded   P_c = {her.value:.3f} +- {her.sigma:.3f}")
print(f"unheralded P_c = {unh.value:.3f} +- {unh.sigma:.3f}")

far = cr.side_peak_mean(hp, [d for d in hp.dn_values if abs(d) >= 8])
for dn in range(1, 11):
    a = 0.5 * (cr.peak_area(hp, dn) + cr.peak_area(hp, -dn))
    print(f"|dn|={dn:2d}  side peak / far mean = {a / far:.3f}")
