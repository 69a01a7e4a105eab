"""
Calibrating the multi-photon probability from an HBT measurement
=================================================================

The probability of a second QD photon is chosen so the simulated
autocorrelation zero peak is 16.5 % of the adjacent peaks.
"""
from coalescence_lab import correlation as cr, mc_engine as mc

p_qd = 0.05
p_qd2 = mc.calibrate_p_qd2(0.165, p_qd)
print(f"p_qd = {p_qd}, calibrated p_qd2 = {p_qd2:.5f}")

params = mc.ExperimentParams(p_qd=p_qd, p_qd2=p_qd2, n_trials=5_000_000, seed=3)
stream = mc.run_hbt_simulation(params, threads=2)
hist = cr.autocorrelation(stream, dn_range=(-4, 4))
for dn in hist.dn_values:
    print(f"  dn={dn:+d}  {cr.peak_area(hist, dn)}")
r = cr.zero_peak_ratio(hist, dns=(-1, 1))
print(f"zero / adjacent = {r.value:.4f} +- {r.sigma:.4f}")

# dark counts raise the zero peak; recalibrate with them included
d = 1e-3
print(f"with dark rate {d}/trial: p_qd2 = {mc.calibrate_p_qd2(0.165, p_qd, d):.5f}")
