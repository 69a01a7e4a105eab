"""
Coalescence of a quantum-dot and a down-conversion photon
==========================================================

Analytic two-photon interference between a dephased quantum-dot photon
(T1 = 0.83 ns, T2 = 0.29 ns) and a filtered 0.9 GHz down-conversion photon.
"""
import numpy as np

from coalescence_lab import hom_model as hm
from coalescence_lab.photon_models import pdc_wavepacket, qd_wavepacket

qd = qd_wavepacket(0.83, 0.29)
pdc = pdc_wavepacket(0.9)
print(f"QD linewidth {qd.linewidth:.3f} GHz, PDC linewidth {pdc.linewidth:.3f} GHz")

# multi-photon background of 16.5 % of the perpendicular zero peak
model = hm.CoincidenceModel(qd, pdc, epsilon=0.165)
print(f"P_c          = {hm.coalescence_probability(model):.4f}")
print(f"P_c (eps=0)  = {hm.coalescence_probability(model.with_(epsilon=0)):.4f}")

# post-selected value at tau = 0 depends on timing jitter
for fw in (0.0, 0.3, 0.6, 1.0, 1.5):
    print(f"detector FWHM {fw:.1f} ns -> P_c(0) = "
          f"{hm.coalescence_zero(model.with_(detector_fwhm=fw)):.3f}")

fw = hm.calibrate_detector(model, 0.42)
print(f"FWHM giving P_c(0) = 0.42: {fw:.3f} ns")
flat = model.with_(background_shape="flat_within_peak")
print(f"  ... with a flat background: {hm.calibrate_detector(flat, 0.42):.3f} ns")

# gating the emission window trades events for visibility
print("window_ns  P_c,fraction  retention")
for w in (2.0, 1.0, 0.5, 0.29, 0.14, 0.05):
    f, r = hm.gated_coalescence(model, w)
    print(f"{w:9.2f}  {f:12.3f}  {r:9.3f}")

# zero-peak curves, ready for plotting
tau = np.linspace(-4, 4, 801)
hm.write_curves_csv("zero_peak_curves.csv", model.with_(detector_fwhm=fw), tau)
