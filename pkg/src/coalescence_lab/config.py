"""JSON configuration documents: schema, defaults and resolution into model objects.

Every key is optional; unknown keys are rejected.  Defaults::

    sources:    T1=0.83 ns, T2=0.29 ns, pdc_filter_fwhm_ghz=0.9,
                g2_zero_ratio=0.165, epsilon=g2_zero_ratio, pdc_shape=one_sided
    experiment: preset="paper" (detected rates of 30,000 /s QD and 300 /s
                unheralded PDC at 76 MHz) or "accelerated" (p_qd=0.1,
                p_pdc_given_herald=0.2, p_herald=0.1); any ExperimentParams
                field overrides the preset.  p_qd2 defaults to the value
                reproducing g2_zero_ratio in HBT ("hbt_ratio") or epsilon in
                heralded HOM ("epsilon"), per multiphoton_calibration.
                detector_fwhm defaults to the model's.
    analysis:   bin_width_ps=64, dn_range=[-5, 5], gates_ns=[0.29, 0.14],
                center_bin_width_ps=64, gate_on="emission"
    model:      background_shape="qd_overlap", background_gating="relative",
                calibrate_target=0.42 unless detector_fwhm is given
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields

import jsonschema

from . import hom_model, mc_engine
from .hom_model import CoincidenceModel
from .mc_engine import ExperimentParams
from .photon_models import pdc_wavepacket, qd_wavepacket

SEED_ENV = "COALESCENCE_LAB_SEED"

_num = {"type": "number"}
_prob = {"type": "number", "minimum": 0, "maximum": 1}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "coalescence-lab configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "sources": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "T1": _pos,
                "T2": _pos,
                "pdc_filter_fwhm_ghz": _pos,
                "epsilon": _nonneg,
                "g2_zero_ratio": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5},
                "pdc_shape": {"enum": ["one_sided", "two_sided"]},
            },
        },
        "experiment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preset": {"enum": ["paper", "accelerated"]},
                "multiphoton_calibration": {"enum": ["hbt_ratio", "epsilon"]},
                "rep_rate": _pos,
                "n_trials": {"type": "integer", "minimum": 0},
                "p_herald": _prob,
                "p_pdc_given_herald": _prob,
                "p_qd": _prob,
                "p_qd2": _prob,
                "qd_pdc_ratio_check": _pos,
                "detector_fwhm": _nonneg,
                "dark_rate_per_trial": _nonneg,
                "dead_time": _nonneg,
                "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
                "polarization": {"enum": list(hom_model.POLARIZATIONS)},
                "qd_dark_prob": _prob,
                "qd_dark_trials": {"type": "number", "minimum": 1},
            },
        },
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "bin_width_ps": {"type": "integer", "minimum": 1},
                "dn_range": {"type": "array", "items": {"type": "integer"},
                             "minItems": 2, "maxItems": 2},
                "gates_ns": {"type": "array", "items": _pos},
                "center_bin_width_ps": {"type": "integer", "minimum": 1},
                "gate_on": {"enum": ["emission", "detection"]},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "background_shape": {"enum": list(hom_model.BACKGROUND_SHAPES)},
                "background_gating": {"enum": ["relative", "emission"]},
                "detector_fwhm": _nonneg,
                "calibrate_target": {"type": "number", "exclusiveMinimum": 0,
                                     "exclusiveMaximum": 1},
            },
        },
    },
}

ANALYSIS_DEFAULTS = {"bin_width_ps": 64, "dn_range": [-5, 5], "gates_ns": [0.29, 0.14],
                     "center_bin_width_ps": 64, "gate_on": "emission"}


class ConfigError(ValueError):
    """Schema or consistency violation; ``pointer`` is a JSON pointer into the document."""

    def __init__(self, message, pointer=""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


def _pointer(path) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in path)


def validate(doc: dict):
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(doc),
                    key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(e.message, _pointer(e.absolute_path))


@dataclass
class Config:
    doc: dict
    model: CoincidenceModel
    params: ExperimentParams
    analysis: dict
    background_gating: str


def _seed_override(seed):
    if seed is not None:
        return int(seed)
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
    return None


def resolve(doc: dict | None = None, seed: int | None = None) -> Config:
    doc = {} if doc is None else doc
    validate(doc)
    src = doc.get("sources", {})
    try:
        qd = qd_wavepacket(src.get("T1", 0.83), src.get("T2", 0.29))
    except ValueError as e:
        raise ConfigError(str(e), "/sources/T2") from None
    pdc = pdc_wavepacket(src.get("pdc_filter_fwhm_ghz", 0.9), src.get("pdc_shape", "one_sided"))
    g2 = src.get("g2_zero_ratio", mc_engine.PAPER_HBT_RATIO)
    eps = src.get("epsilon", g2)

    mdoc = doc.get("model", {})
    exp = dict(doc.get("experiment", {}))
    rep = exp.get("rep_rate", mc_engine.PAPER_REP_RATE)
    model = CoincidenceModel(qd, pdc, epsilon=eps,
                             background_shape=mdoc.get("background_shape", "qd_overlap"),
                             period=1000.0 / rep)
    if "detector_fwhm" in mdoc:
        model = model.with_(detector_fwhm=mdoc["detector_fwhm"])
    else:
        try:
            fw = hom_model.calibrate_detector(model, mdoc.get("calibrate_target", 0.42))
        except hom_model.CalibrationError as e:
            raise ConfigError(str(e), "/model/calibrate_target") from None
        model = model.with_(detector_fwhm=fw)

    preset = exp.pop("preset", "paper")
    calib = exp.pop("multiphoton_calibration", "hbt_ratio")
    base = {} if preset == "paper" else {"p_qd": 0.1, "p_pdc_given_herald": 0.2, "p_herald": 0.1}
    base.update(exp)
    base.setdefault("detector_fwhm", model.detector_fwhm)
    if "p_qd2" not in base:
        p_qd = base.get("p_qd", mc_engine.PAPER_P_QD)
        try:
            if calib == "hbt_ratio":
                base["p_qd2"] = mc_engine.calibrate_p_qd2(
                    g2, p_qd, base.get("dark_rate_per_trial", 0.0))
            else:
                base["p_qd2"] = mc_engine.p_qd2_for_epsilon(
                    eps, base.get("p_pdc_given_herald", mc_engine.PAPER_P_PDC_GIVEN_HERALD), p_qd)
        except mc_engine.ParameterError as e:
            raise ConfigError(str(e), "/experiment/multiphoton_calibration") from None
    s = _seed_override(seed)
    if s is not None:
        base["seed"] = s
    try:
        params = ExperimentParams(**base)
    except mc_engine.ParameterError as e:
        raise ConfigError(str(e), "/experiment") from None
    analysis = {**ANALYSIS_DEFAULTS, **doc.get("analysis", {})}
    if analysis["dn_range"][0] > analysis["dn_range"][1]:
        raise ConfigError("dn_range must be [lo, hi] with lo <= hi", "/analysis/dn_range")
    return Config(doc, model, params, analysis, mdoc.get("background_gating", "relative"))


def load(path=None, seed: int | None = None) -> Config:
    if path is None:
        return resolve({}, seed)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e}") from None
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return resolve(doc, seed)


def experiment_field_names() -> list[str]:
    return [f.name for f in fields(ExperimentParams)]
