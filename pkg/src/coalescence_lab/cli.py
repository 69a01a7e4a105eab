"""``coalescence-lab`` command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 reproduce-paper row failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import config, correlation, fitting, hom_model, mc_engine, reproduce, tagstream

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ACCEPTANCE = 0, 2, 3, 4


class DataError(Exception):
    pass


def _dump(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def cmd_simulate(args) -> int:
    cfg = config.load(args.config, args.seed)
    params = cfg.params
    if args.polarization:
        params = params.replace(polarization=args.polarization)
    if args.n_trials is not None:
        params = params.replace(n_trials=args.n_trials)
    if args.mode == "hbt":
        stream = mc_engine.run_hbt_simulation(params, cfg.model, args.threads)
    else:
        stream = mc_engine.run_hom_simulation(params, cfg.model, args.threads)
    tagstream.save_stream(args.out, stream)
    counts = stream.counts_per_channel()
    print(f"wrote {len(stream)} records ({params.n_trials} trials, herald/ch1/ch2 = "
          f"{counts[0]}/{counts[1]}/{counts[2]}) to {args.out}")
    return EXIT_OK


def _load(path):
    try:
        return tagstream.load_stream(path)
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from None


def cmd_analyze(args) -> int:
    cfg = config.load(args.config)
    a = cfg.analysis
    perp, par = _load(args.in_perp), _load(args.in_par)
    if perp.header.period_ps != par.header.period_ps:
        raise DataError("perpendicular and parallel streams have different repetition rates")
    run = correlation.heralded_analysis if args.mode == "heralded" else \
        correlation.unheralded_analysis
    hp, hq, pc, pc0 = run(perp, par, tuple(a["dn_range"]), a["bin_width_ps"],
                          a["center_bin_width_ps"])
    gates = a["gates_ns"] if args.gate_ns is None else args.gate_ns
    gated = []
    for w in gates:
        # files carry detection times only, so gating is on detection time
        est, ret = correlation.gated_estimate(perp, par, w, "detection",
                                              heralded=args.mode == "heralded",
                                              bin_width=a["bin_width_ps"])
        gated.append({"window_ns": w, "p_c": est, "retention": ret})
    report = {
        "mode": args.mode,
        "bin_width_ps": a["bin_width_ps"],
        "dn_range": list(a["dn_range"]),
        "heralded_trials": {"perpendicular": hp.total_heralded_trials,
                            "parallel": hq.total_heralded_trials},
        "zero_peak_area": {"perpendicular": correlation.peak_area(hp, 0),
                           "parallel": correlation.peak_area(hq, 0)},
        "p_c": pc,
        "p_c_zero": pc0,
        "gated": gated,
    }
    if args.hist_prefix:
        hp.to_csv(args.hist_prefix + "_perp.csv")
        hq.to_csv(args.hist_prefix + "_par.csv")
    if args.out:
        correlation.write_report(args.out, **report)
    print(f"P_c = {pc.value:.4f} +- {pc.sigma:.4f}, P_c(0) = {pc0.value:.4f} +- {pc0.sigma:.4f}")
    return EXIT_OK


def cmd_model(args) -> int:
    cfg = config.load(args.config)
    m = cfg.model
    half = m.period / 2 if args.tau_max is None else args.tau_max
    n = int(round(2 * half / args.tau_step))
    tau = np.linspace(-half, half, n + 1)
    hom_model.write_curves_csv(args.out, m, tau)
    metrics = hom_model.coalescence_metrics(m, cfg.analysis["gates_ns"], cfg.background_gating)
    _dump({
        "detector_fwhm": m.detector_fwhm,
        "epsilon": m.epsilon,
        "background_shape": m.background_shape,
        "p_c": metrics.p_c,
        "p_c_zero": metrics.p_c_zero,
        "gated": [{"window_ns": w, "p_c_fraction": f, "retention": r}
                  for w, f, r in metrics.gated],
    })
    return EXIT_OK


def read_xy(path):
    """(x, y) from a two-column CSV or the dn = 0 row of a histogram CSV (tau in ns)."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from None
    if not rows:
        raise DataError(f"{path} is empty")
    head = [c.strip() for c in rows[0]]
    try:
        if head == ["dn", "tau_ps", "count"]:
            data = np.array([[float(v) for v in r] for r in rows[1:]])
            data = data[data[:, 0] == 0]
            return data[:, 1] / 1000.0, data[:, 2]
        try:
            float(head[0])
            body = rows
        except ValueError:
            body = rows[1:]
        data = np.array([[float(r[0]), float(r[1])] for r in body])
    except (ValueError, IndexError) as e:
        raise DataError(f"{path}: malformed CSV ({e})") from None
    if len(data) == 0:
        raise DataError(f"{path} has no data rows")
    return data[:, 0], data[:, 1]


def cmd_fit(args) -> int:
    x, y = read_xy(args.inp)
    sigma = np.sqrt(np.maximum(y, 1.0)) if args.poisson else None
    if args.shape == "lorentzian":
        res = fitting.fit_lorentzian(x, y, sigma=sigma)
    else:
        fw = None if args.detector_fwhm in (None, "free") else float(args.detector_fwhm)
        res = fitting.fit_exp_gauss(x, y, detector_fwhm=fw, sigma=sigma)
    doc = res.to_dict()
    doc["shape"] = args.shape
    _dump(doc, args.out)
    return EXIT_OK


def cmd_reproduce(args) -> int:
    seed = config._seed_override(args.seed)
    seed = reproduce.DEFAULT_SEED if seed is None else seed
    rows = reproduce.run_all(seed, args.threads)
    ok = reproduce.write_outputs(args.out, rows, seed)
    sys.stdout.write(reproduce.format_table(rows))
    print(f"{sum(r.passed for r in rows)}/{len(rows)} rows pass")
    return EXIT_OK if ok else EXIT_ACCEPTANCE


def _detector_fwhm(s):
    if s == "free":
        return s
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError("expected a number (ns) or 'free'") from None
    if v < 0:
        raise argparse.ArgumentTypeError("detector FWHM must be >= 0")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coalescence-lab",
                                description="HOM interference between a quantum dot and a "
                                            "heralded down-conversion source.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="Monte Carlo time-tag stream")
    s.add_argument("--config")
    s.add_argument("--out", required=True, help=".tags (binary) or .csv")
    s.add_argument("--seed", type=int)
    s.add_argument("--polarization", choices=hom_model.POLARIZATIONS)
    s.add_argument("--mode", choices=("hom", "hbt"), default="hom")
    s.add_argument("--n-trials", type=int)
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="correlation histograms and coalescence estimates")
    a.add_argument("--in-perp", required=True)
    a.add_argument("--in-par", required=True)
    a.add_argument("--mode", choices=("heralded", "unheralded"), default="heralded")
    a.add_argument("--gate-ns", type=float, nargs="*")
    a.add_argument("--config")
    a.add_argument("--out", help="report.json")
    a.add_argument("--hist-prefix", help="write <prefix>_perp.csv and <prefix>_par.csv")
    a.set_defaults(func=cmd_analyze)

    m = sub.add_parser("model", help="analytic zero-peak curves")
    m.add_argument("--config")
    m.add_argument("--out", required=True, help="curves.csv")
    m.add_argument("--tau-max", type=float, help="half-range in ns (default: half a period)")
    m.add_argument("--tau-step", type=float, default=0.01)
    m.set_defaults(func=cmd_model)

    f = sub.add_parser("fit", help="Lorentzian or exponential-Gaussian fit")
    f.add_argument("--in", dest="inp", required=True)
    f.add_argument("--shape", choices=("lorentzian", "expgauss"), required=True)
    f.add_argument("--detector-fwhm", type=_detector_fwhm, default="free")
    f.add_argument("--poisson", action="store_true", help="weight by sqrt(counts)")
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("reproduce-paper", help="run every check and write the comparison table")
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--threads", type=int, default=1)
    r.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (config.ConfigError, mc_engine.ParameterError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, tagstream.TagStreamError, correlation.AnalysisError,
            fitting.FitError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
