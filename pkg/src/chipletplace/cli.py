"""Command-line pipeline.

Subcommands: gen, dataset, fit, place, pareto, tune, audit.  Exit codes:
0 success, 1 runtime failure, 2 usage/precondition error.  All randomness
flows from --seed; wall-clock measurements land in timings.json next to the
deterministic result files.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bench import synthesize_benchmark
from .fields import field_to_svg
from .model import load_design, load_placement, save_design, save_placement
from .pipeline import (RunConfig, SCHEMA_VERSION, audit_placement, fit_models,
                       generate_dataset, load_dataset, measure_speedup,
                       pareto_scatter_svg, pareto_sweep, place_flow, tune_random,
                       write_trajectory_csv, _write_json)
from .thermal import CompactThermalParams
from .warpage import CompactWarpageParams


class UsageError(ValueError):
    """Bad arguments or violated preconditions; maps to exit code 2."""


def _load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path) as fh:
        return RunConfig.from_dict(json.load(fh))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(args) -> int:
    if args.n < 2:
        raise UsageError("--n must be >= 2")
    if not (0.3 <= args.ws <= 0.7):
        raise UsageError("--ws must lie in [0.3, 0.7]")
    design = synthesize_benchmark(args.seed, args.n, args.iface, args.ws)
    save_design(design, args.out)
    ip = design.interposer
    print(f"case: iface={args.iface} dies={design.n_chiplets} nets={len(design.nets)} "
          f"interposer {ip.width:.1f} x {ip.height:.1f} mm whitespace "
          f"{100 * design.whitespace():.1f}%")
    print(f"wrote {args.out}")
    return 0


def cmd_dataset(args) -> int:
    if args.count < 2:
        raise UsageError("--count must be >= 2 (fitting needs at least 2 samples)")
    design = load_design(args.design)
    cfg = _load_config(args.config)
    out = _out_dir(args)
    generate_dataset(design, args.count, args.seed, cfg, out)
    print(f"wrote {args.count} samples to {out}")
    return 0


def cmd_fit(args) -> int:
    design = load_design(args.design)
    cfg = _load_config(args.config)
    cfg = replace(cfg, seed=args.seed)
    samples = load_dataset(design, Path(args.dataset))
    n_train = args.split if args.split is not None else max(2, len(samples) // 2)
    tparams, wparams, report, timings = fit_models(design, samples, n_train, cfg)
    out = _out_dir(args)
    tparams.save(out / "thermal_params.json")
    wparams.save(out / "warpage_params.json")
    _write_json(out / "fit_report.json", report)
    test = samples[n_train:] or samples[:n_train]
    speed = measure_speedup(design, test[0].placement, tparams, cfg)
    _write_json(out / "timings.json", {"schema_version": SCHEMA_VERSION, **timings, **speed})
    tp = report["thermal"]["test_pearson"]
    wp = report["warpage"]["test_pearson"]
    print(f"thermal: test pearson mean {np.mean(tp):.4f}  mae mean "
          f"{np.mean(report['thermal']['test_mae']):.3f} C")
    print(f"warpage: test pearson mean {np.mean(wp):.4f}  mae mean "
          f"{np.mean(report['warpage']['test_mae']):.3f} um")
    print(f"speedup: {speed['speedup']:.0f}x  (oracle {speed['oracle_solve_s']:.2f} s, "
          f"compact {1e3 * speed['compact_eval_s']:.2f} ms)")
    return 0


def _load_params(args):
    tparams = CompactThermalParams.load(args.tparams) if args.tparams else None
    wparams = CompactWarpageParams.load(args.wparams) if args.wparams else None
    return tparams, wparams


def cmd_place(args) -> int:
    design = load_design(args.design)
    cfg = _load_config(args.config)
    cfg = replace(cfg, mode=args.mode, seed=args.seed)   # post-init zeroes physics in wl mode
    tparams, wparams = _load_params(args)
    if cfg.mode == "tm" and (tparams is None or wparams is None):
        raise UsageError("tm mode requires --tparams and --wparams")
    outcome = place_flow(design, tparams, wparams, cfg)
    out = _out_dir(args)
    save_placement(outcome.placement, out / "placement.json")
    write_trajectory_csv(outcome.trajectory, out / "trajectory.csv")
    _write_json(out / "report.json", outcome.report)
    _write_json(out / "timings.json", {"schema_version": SCHEMA_VERSION, **outcome.timings})
    r = outcome.report
    line = (f"mode={r['mode']} twl={r['twl_mm']:.3f} mm legal={r['legal']}")
    if "peak_temperature_c" in r:
        line += f" Tmax={r['peak_temperature_c']:.1f} C warpage={r['warpage_um']:.2f} um"
    print(line)
    return 0


def cmd_pareto(args) -> int:
    design = load_design(args.design)
    cfg = _load_config(args.config)
    cfg = replace(cfg, mode="tm", seed=args.seed)
    tparams, wparams = _load_params(args)
    if tparams is None or wparams is None:
        raise UsageError("pareto requires --tparams and --wparams")
    lam_t = [float(v) for v in args.lambda_t.split(",")]
    lam_w = [float(v) for v in args.lambda_w.split(",")]
    rows, front = pareto_sweep(design, tparams, wparams, cfg, lam_t, lam_w,
                               threads=args.threads)
    out = _out_dir(args)
    cols = ["index", "lambda_t", "lambda_w", "twl_mm", "peak_temperature_c", "warpage_um"]
    with open(out / "sweep.csv", "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            if "error" in r:
                fh.write(f"{r['index']},{r['lambda_t']!r},{r['lambda_w']!r},error,error,error\n")
            else:
                fh.write(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c])
                                  for c in cols) + "\n")
    _write_json(out / "front.json", {"schema_version": SCHEMA_VERSION, "front": front})
    pareto_scatter_svg(rows, front, out / "pareto.svg")
    errors = [r for r in rows if "error" in r]
    print(f"swept {len(rows)} points ({len(errors)} failed); front size {len(front)}")
    for r in errors:
        print(f"  point {r['index']} failed: {r['error']}", file=sys.stderr)
    return 0


def cmd_tune(args) -> int:
    if args.budget < 1:
        raise UsageError("--budget must be >= 1")
    design = load_design(args.design)
    cfg = _load_config(args.config)
    cfg = replace(cfg, mode=args.mode, seed=args.seed)
    tparams, wparams = _load_params(args)
    if cfg.mode == "tm" and (tparams is None or wparams is None):
        raise UsageError("tm mode requires --tparams and --wparams")
    best, rows = tune_random(design, tparams, wparams, cfg, args.budget, args.seed)
    out = _out_dir(args)
    _write_json(out / "tune_report.json",
                {"schema_version": SCHEMA_VERSION, "best": best, "rows": rows})
    print(f"best score {best['score']:.3f} at index {best['index']}")
    return 0


def cmd_audit(args) -> int:
    design = load_design(args.design)
    placement = load_placement(args.placement)
    cfg = _load_config(args.config)
    report = audit_placement(design, placement, cfg, with_oracle=args.oracle)
    doc = {"schema_version": SCHEMA_VERSION, **report}
    if args.out:
        _write_json(args.out, doc)
    print(json.dumps(doc, indent=1))
    return 0 if report["legal"] else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chipletplace",
                                description="Analytical thermo-mechanical chiplet placement")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="synthesize a benchmark design")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, required=True, help="number of chiplets")
    g.add_argument("--iface", choices=["x16", "x32"], default="x32")
    g.add_argument("--ws", type=float, default=0.5, help="whitespace fraction target")
    g.add_argument("--out", required=True, help="output design JSON")
    g.set_defaults(func=cmd_gen)

    d = sub.add_parser("dataset", help="random legal placements solved by the oracles")
    d.add_argument("--design", required=True)
    d.add_argument("--count", type=int, default=20)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--config", default=None)
    d.add_argument("--out", required=True, help="output directory")
    d.set_defaults(func=cmd_dataset)

    f = sub.add_parser("fit", help="fit the compact thermal and warpage models")
    f.add_argument("--design", required=True)
    f.add_argument("--dataset", required=True, help="dataset directory")
    f.add_argument("--split", type=int, default=None, help="training sample count")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--config", default=None)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    pl = sub.add_parser("place", help="run the placement flow")
    pl.add_argument("--design", required=True)
    pl.add_argument("--mode", choices=["wl", "tm"], default="wl")
    pl.add_argument("--tparams", default=None)
    pl.add_argument("--wparams", default=None)
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--config", default=None)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_place)

    pa = sub.add_parser("pareto", help="sweep penalty weights and report the front")
    pa.add_argument("--design", required=True)
    pa.add_argument("--tparams", required=True)
    pa.add_argument("--wparams", required=True)
    pa.add_argument("--lambda-t", default="0,1e-4,1e-2", dest="lambda_t")
    pa.add_argument("--lambda-w", default="0,1e-2", dest="lambda_w")
    pa.add_argument("--threads", type=int, default=1)
    pa.add_argument("--seed", type=int, default=0)
    pa.add_argument("--config", default=None)
    pa.add_argument("--out", required=True)
    pa.set_defaults(func=cmd_pareto)

    t = sub.add_parser("tune", help="random-search hyperparameter tuning")
    t.add_argument("--design", required=True)
    t.add_argument("--mode", choices=["wl", "tm"], default="tm")
    t.add_argument("--tparams", default=None)
    t.add_argument("--wparams", default=None)
    t.add_argument("--budget", type=int, default=8)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--config", default=None)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_tune)

    a = sub.add_parser("audit", help="re-check a placement file")
    a.add_argument("--design", required=True)
    a.add_argument("--placement", required=True)
    a.add_argument("--oracle", action="store_true", help="include oracle physics metrics")
    a.add_argument("--config", default=None)
    a.add_argument("--out", default=None)
    a.set_defaults(func=cmd_audit)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:   # runtime failure
        print(f"failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
