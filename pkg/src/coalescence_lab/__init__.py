"""Two-photon interference between a quantum dot and a heralded down-conversion source.

Analytic coincidence model, Monte Carlo time-tag generator, correlation
analysis and line-shape fitting.  Times in ns (ps on disk), frequencies in GHz.
"""
from .photon_models import (FabryPerotSpec, WavepacketSpec, fp_transmission, intensity_fwhm,
                            pdc_wavepacket, qd_wavepacket, spectral_density)
from .hom_model import (CoincidenceModel, calibrate_detector, coalescence_metrics,
                        coalescence_probability, coalescence_zero, cross_correlation_density,
                        gated_coalescence, joint_density)
from .mc_engine import (ExperimentParams, accelerated_params, calibrate_p_qd2,
                        run_hbt_simulation, run_hom_simulation)
from .tagstream import TagStream, TagStreamHeader, load_stream, read_stream, save_stream
from .correlation import (CorrelationHistogram, build_cross_correlation, condition_on_herald,
                          estimate_coalescence, estimate_zero_coalescence, gated_estimate)
from .fitting import FitResult, fit_exp_gauss, fit_lorentzian

__version__ = "0.1.0"
