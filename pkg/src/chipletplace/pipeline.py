"""End-to-end flows: dataset generation, model fitting, placement, sweeps.

Every flow is deterministic for a fixed seed: solver effort is bounded by
node budgets rather than wall-clock limits unless a time budget is configured
explicitly, randomness comes only from seeded generators, and wall-clock
measurements are segregated into their own output (timings.json) so result
files stay byte-reproducible.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .fields import FieldGrid, detrend_plane, field_from_csv, field_mae, field_pearson, field_to_csv, warpage_metric
from .fitting import FitConfig
from .model import (DesignInstance, PlacementState, check_legal, exact_wirelength,
                    load_placement, placement_to_list, rotated_dims, save_placement)
from .optimize import CgdConfig, PenaltyConfig, run_cgd, snap_orientations
from .oracle import PlateOracleConfig, ThermalOracleConfig, solve_thermal, solve_warpage
from .seedlegal import LegalizeResult, SeedResult, initialize, legalize
from .thermal import CompactThermalParams, eval_tc, fit_thermal
from .warpage import CompactWarpageParams, eval_w, fit_warpage

SCHEMA_VERSION = 1

LEGAL_ANGLE_CHOICES = (0.0, 90.0, 180.0, 270.0)


@dataclass
class RunConfig:
    mode: str = "wl"                   # "wl" (wirelength-driven) or "tm"
    seed: int = 0
    n_train: int = 10
    n_test: int = 10
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    cgd: CgdConfig = field(default_factory=CgdConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    init_eps: float = 0.1
    lam_w_legalize: float = 0.0
    init_node_limit: int = 6000
    legalize_node_limit: int = 40000
    init_time_budget: float | None = None       # wall clock; None keeps runs deterministic
    legalize_time_budget: float | None = None
    milp_max_chiplets: int = 6
    thermal: ThermalOracleConfig = field(default_factory=ThermalOracleConfig)
    plate: PlateOracleConfig = field(default_factory=PlateOracleConfig)

    def __post_init__(self):
        if self.mode not in ("wl", "tm"):
            raise ValueError("mode must be 'wl' or 'tm'")
        if self.mode == "wl":
            # wirelength-driven runs carry no physics penalties
            self.penalty = replace(self.penalty, lambda_t=0.0, lambda_w=0.0)
        elif self.penalty.lambda_t == 0.0 and self.penalty.lambda_w == 0.0:
            # tm mode with no weights configured gets mild defaults
            self.penalty = replace(self.penalty, lambda_t=1e-4, lambda_w=1e-2)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        kwargs = {}
        for key, sub in (("penalty", PenaltyConfig), ("cgd", CgdConfig), ("fit", FitConfig),
                         ("thermal", ThermalOracleConfig), ("plate", PlateOracleConfig)):
            if key in doc:
                kwargs[key] = sub(**doc.pop(key))
        kwargs.update(doc)
        return cls(**kwargs)


def _write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------

def random_legal_placement(design: DesignInstance, rng: np.random.Generator,
                           cfg: RunConfig) -> PlacementState:
    """Random positions/orientations repaired into legality."""
    ip = design.interposer
    theta = rng.choice(LEGAL_ANGLE_CHOICES, size=design.n_chiplets)
    xs = np.empty(design.n_chiplets)
    ys = np.empty(design.n_chiplets)
    for i, c in enumerate(design.chiplets):
        w, h = rotated_dims(c, theta[i])
        xs[i] = rng.uniform(w / 2, ip.width - w / 2)
        ys[i] = rng.uniform(h / 2, ip.height - h / 2)
    raw = PlacementState(xs, ys, theta)
    res = legalize(design, raw, lam_w=0.0,
                   time_budget=cfg.legalize_time_budget or math.inf,
                   node_limit=cfg.legalize_node_limit,
                   milp_max_chiplets=cfg.milp_max_chiplets)
    return res.placement


@dataclass
class DatasetSample:
    placement: PlacementState
    thermal: FieldGrid
    warpage: FieldGrid


def generate_dataset(design: DesignInstance, count: int, seed: int,
                     cfg: RunConfig | None = None,
                     out_dir: Path | None = None) -> list[DatasetSample]:
    """Random legal placements solved by both oracles; optionally persisted."""
    if count < 2:
        raise ValueError("dataset needs at least 2 samples (fitting requires >= 2)")
    cfg = cfg or RunConfig()
    samples = []
    manifest = {"schema_version": SCHEMA_VERSION, "seed": seed, "count": count, "samples": []}
    for k in range(count):
        rng = np.random.default_rng((seed, k))
        placement = random_legal_placement(design, rng, cfg)
        report = check_legal(design, placement)
        if not report.ok:
            raise RuntimeError(f"dataset sample {k}: repaired placement is illegal")
        thermal = solve_thermal(design, placement, cfg.thermal)
        warp = solve_warpage(thermal, cfg.plate)
        samples.append(DatasetSample(placement, thermal, warp))
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            pf = out_dir / f"placement_{k:03d}.json"
            tf = out_dir / f"thermal_{k:03d}.csv"
            wf = out_dir / f"warpage_{k:03d}.csv"
            save_placement(placement, pf)
            field_to_csv(thermal, tf)
            field_to_csv(warp, wf)
            manifest["samples"].append({"index": k, "placement": pf.name,
                                        "thermal": tf.name, "warpage": wf.name})
    if out_dir is not None:
        _write_json(Path(out_dir) / "manifest.json", manifest)
    return samples


def load_dataset(design: DesignInstance, dataset_dir: Path) -> list[DatasetSample]:
    dataset_dir = Path(dataset_dir)
    with open(dataset_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    ip = design.interposer
    samples = []
    for entry in manifest["samples"]:
        placement = load_placement(dataset_dir / entry["placement"])
        thermal = field_from_csv(dataset_dir / entry["thermal"])
        warp = field_from_csv(dataset_dir / entry["warpage"])
        for f in (thermal, warp):
            f.dx = ip.width / f.nx
            f.dy = ip.height / f.ny
        samples.append(DatasetSample(placement, thermal, warp))
    return samples


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

def fit_models(design: DesignInstance, samples: list[DatasetSample], n_train: int,
               cfg: RunConfig | None = None):
    """Fit thermal then warpage on the first n_train samples; test on the rest.

    Returns (thermal params, warpage params, metrics dict, timings dict).
    """
    cfg = cfg or RunConfig()
    if not (2 <= n_train <= len(samples)):
        raise ValueError("n_train must be in [2, len(samples)]")
    train = samples[:n_train]
    test = samples[n_train:]
    timings = {}
    t0 = time.monotonic()
    tparams, treport = fit_thermal(design, [(s.placement, s.thermal) for s in train],
                                   cfg.fit, seed=cfg.seed, t_ambient=cfg.thermal.t_ambient)
    timings["fit_thermal_s"] = time.monotonic() - t0
    t0 = time.monotonic()
    wparams, wreport = fit_warpage(design, [(s.placement, s.thermal, s.warpage) for s in train],
                                   tparams, cfg.fit, seed=cfg.seed)
    timings["fit_warpage_s"] = time.monotonic() - t0

    res = samples[0].thermal.nx

    def metrics(pred_fn, label_of):
        out = {"mae": [], "pearson": []}
        for s in test or train:
            pred = pred_fn(s)
            out["mae"].append(field_mae(pred, label_of(s)))
            out["pearson"].append(field_pearson(pred, label_of(s)))
        return out

    tm = metrics(lambda s: eval_tc(tparams, design, s.placement, res), lambda s: s.thermal)
    wm = metrics(lambda s: eval_w(wparams, tparams, design, s.placement, res), lambda s: s.warpage)
    report = {
        "schema_version": SCHEMA_VERSION,
        "n_train": n_train,
        "n_test": len(test),
        "thermal": {
            "train_mae": treport.sample_mae, "train_pearson": treport.sample_pearson,
            "test_mae": tm["mae"], "test_pearson": tm["pearson"],
            "final_loss": treport.final_loss, "iterations": treport.iterations,
            "converged": treport.converged,
        },
        "warpage": {
            "train_mae": wreport.sample_mae, "train_pearson": wreport.sample_pearson,
            "test_mae": wm["mae"], "test_pearson": wm["pearson"],
            "final_loss": wreport.final_loss, "iterations": wreport.iterations,
            "converged": wreport.converged,
        },
    }
    return tparams, wparams, report, timings


def measure_speedup(design: DesignInstance, placement: PlacementState,
                    tparams: CompactThermalParams, cfg: RunConfig | None = None,
                    reps: int = 100) -> dict:
    """Wall-clock ratio of one oracle solve to the mean full-grid compact eval."""
    cfg = cfg or RunConfig()
    eval_tc(tparams, design, placement)      # warm-up
    t0 = time.perf_counter()
    for _ in range(reps):
        eval_tc(tparams, design, placement)
    compact_s = (time.perf_counter() - t0) / reps
    t0 = time.perf_counter()
    solve_thermal(design, placement, cfg.thermal)
    oracle_s = time.perf_counter() - t0
    return {"compact_eval_s": compact_s, "oracle_solve_s": oracle_s,
            "speedup": oracle_s / compact_s, "reps": reps}


# ---------------------------------------------------------------------------
# placement flow
# ---------------------------------------------------------------------------

def audit_placement(design: DesignInstance, placement: PlacementState,
                    cfg: RunConfig | None = None, with_oracle: bool = True) -> dict:
    """Legality check and final metrics; physics always from the oracles."""
    cfg = cfg or RunConfig()
    report = check_legal(design, placement)
    out = {
        "legal": report.ok,
        "containment_ok": report.containment_ok,
        "min_pairwise_gap_mm": None if math.isinf(report.min_pairwise_gap)
        else report.min_pairwise_gap,
        "overlap_pairs": [list(p) for p in report.overlap_pairs],
        "twl_mm": exact_wirelength(design, placement),
    }
    if with_oracle:
        thermal = solve_thermal(design, placement, cfg.thermal)
        warp = solve_warpage(thermal, cfg.plate)
        out["peak_temperature_c"] = float(thermal.values.max())
        out["warpage_um"] = warpage_metric(detrend_plane(warp))
    return out


@dataclass
class PlacementOutcome:
    placement: PlacementState
    trajectory: list[dict]
    report: dict
    timings: dict


def place_flow(design: DesignInstance,
               tparams: CompactThermalParams | None,
               wparams: CompactWarpageParams | None,
               cfg: RunConfig, audit_oracle: bool = True) -> PlacementOutcome:
    """Init -> CGD -> snap -> legalize -> oracle audit."""
    if cfg.mode == "tm" and (tparams is None or wparams is None):
        raise ValueError("tm mode requires fitted compact model parameters")
    timings = {}
    t0 = time.monotonic()
    seed_res: SeedResult = initialize(
        design, eps=cfg.init_eps,
        time_budget=cfg.init_time_budget or math.inf,
        node_limit=cfg.init_node_limit,
        milp_max_chiplets=cfg.milp_max_chiplets)
    timings["init_s"] = time.monotonic() - t0

    t0 = time.monotonic()
    cgd_res = run_cgd(design, seed_res.placement, tparams, wparams,
                      cfg.penalty, cfg.cgd, seed=cfg.seed)
    timings["optimize_s"] = time.monotonic() - t0

    t0 = time.monotonic()
    snapped = snap_orientations(cgd_res.state, cfg.cgd.eta_end)
    legal_res: LegalizeResult = legalize(
        design, snapped, lam_w=cfg.lam_w_legalize,
        time_budget=cfg.legalize_time_budget or math.inf,
        node_limit=cfg.legalize_node_limit,
        milp_max_chiplets=cfg.milp_max_chiplets)
    timings["legalize_s"] = time.monotonic() - t0

    t0 = time.monotonic()
    audit = audit_placement(design, legal_res.placement, cfg, with_oracle=audit_oracle)
    timings["audit_s"] = time.monotonic() - t0
    if not audit["legal"]:
        raise RuntimeError("final placement failed the legality audit")

    report = {
        "schema_version": SCHEMA_VERSION,
        "mode": cfg.mode,
        "seed": cfg.seed,
        "n_chiplets": design.n_chiplets,
        "init_method": seed_res.method,
        "init_objective": seed_res.objective,
        "legalize_method": legal_res.method,
        "displacement_mm": legal_res.displacement,
        "iterations": len(cgd_res.trajectory),
        "noise_injections": cgd_res.noise_events,
        "lambda_dens_final": cgd_res.lambda_dens,
        **audit,
    }
    return PlacementOutcome(legal_res.placement, cgd_res.trajectory, report, timings)


def write_trajectory_csv(trajectory: list[dict], path) -> None:
    cols = ["iter", "J", "WL", "OVFL", "Tmax", "warpage", "lambda_dens", "noise_injected"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in trajectory:
            fh.write(",".join(repr(row[c]) if not isinstance(row[c], int) else str(row[c])
                              for c in cols) + "\n")


# ---------------------------------------------------------------------------
# pareto sweep
# ---------------------------------------------------------------------------

def _pareto_point(args):
    design_doc, tparams_doc, wparams_doc, cfg_doc, lam_t, lam_w, index = args
    from .model import design_from_dict
    design = design_from_dict(design_doc)
    tparams = CompactThermalParams.from_dict(tparams_doc)
    wparams = CompactWarpageParams.from_dict(wparams_doc)
    cfg = RunConfig.from_dict(cfg_doc)
    cfg = replace(cfg, mode="tm", seed=cfg.seed + index,
                  penalty=replace(cfg.penalty, lambda_t=lam_t, lambda_w=lam_w))
    outcome = place_flow(design, tparams, wparams, cfg)
    return {
        "index": index, "lambda_t": lam_t, "lambda_w": lam_w,
        "twl_mm": outcome.report["twl_mm"],
        "peak_temperature_c": outcome.report["peak_temperature_c"],
        "warpage_um": outcome.report["warpage_um"],
    }


def dominance_front(rows: list[dict], keys=("twl_mm", "peak_temperature_c", "warpage_um")) -> list[dict]:
    """Non-dominated subset under simultaneous minimization of the keys."""
    front = []
    for r in rows:
        dominated = False
        for s in rows:
            if s is r:
                continue
            if all(s[k] <= r[k] for k in keys) and any(s[k] < r[k] for k in keys):
                dominated = True
                break
        if not dominated:
            front.append(r)
    return front


def pareto_sweep(design: DesignInstance, tparams: CompactThermalParams,
                 wparams: CompactWarpageParams, cfg: RunConfig,
                 lam_t_values: list[float], lam_w_values: list[float],
                 threads: int = 1) -> tuple[list[dict], list[dict]]:
    """Independent seeded placements over the (lambda_T, lambda_W) grid.

    Failed runs are recorded with error strings and excluded from the front;
    row order is deterministic by grid index.
    """
    from .model import design_to_dict
    jobs = []
    idx = 0
    for lt in lam_t_values:
        for lw in lam_w_values:
            jobs.append((design_to_dict(design), tparams.to_dict(), wparams.to_dict(),
                         _runconfig_to_dict(cfg), lt, lw, idx))
            idx += 1
    rows = [None] * len(jobs)
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for res in pool.map(_pareto_point_safe, jobs):
                rows[res["index"]] = res
    else:
        for job in jobs:
            res = _pareto_point_safe(job)
            rows[res["index"]] = res
    ok_rows = [r for r in rows if "error" not in r]
    return rows, dominance_front(ok_rows)


def _pareto_point_safe(args):
    try:
        return _pareto_point(args)
    except Exception as exc:   # individual failures logged, sweep continues
        return {"index": args[-1], "lambda_t": args[-3], "lambda_w": args[-2],
                "error": f"{type(exc).__name__}: {exc}"}


def _runconfig_to_dict(cfg: RunConfig) -> dict:
    doc = asdict(cfg)
    return doc


def pareto_scatter_svg(rows: list[dict], front: list[dict], path) -> None:
    """Deterministic scatter of TWL vs peak temperature; front points marked."""
    ok = [r for r in rows if "error" not in r]
    wpx, hpx, margin = 480, 360, 48
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{wpx}" height="{hpx}" '
             f'viewBox="0 0 {wpx} {hpx}">']
    if ok:
        xs = [r["twl_mm"] for r in ok]
        ys = [r["peak_temperature_c"] for r in ok]
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(ys), max(ys)
        xspan = (x1 - x0) or 1.0
        yspan = (y1 - y0) or 1.0

        def toxy(r):
            px = margin + (r["twl_mm"] - x0) / xspan * (wpx - 2 * margin)
            py = hpx - margin - (r["peak_temperature_c"] - y0) / yspan * (hpx - 2 * margin)
            return px, py

        front_ids = {id(r) for r in front}
        front_keys = {(r["lambda_t"], r["lambda_w"]) for r in front}
        for r in ok:
            px, py = toxy(r)
            on_front = (r["lambda_t"], r["lambda_w"]) in front_keys
            color = "black" if on_front else "gray"
            parts.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="4" fill="{color}"/>')
        parts.append(f'<text x="{wpx // 2 - 30}" y="{hpx - 10}" font-size="11">TWL / mm</text>')
        parts.append(f'<text x="6" y="{margin - 10}" font-size="11">Tmax / C</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
        fh.write("\n")


# ---------------------------------------------------------------------------
# random-search tuning
# ---------------------------------------------------------------------------

TUNE_RANGES = {
    "eta_start": (0.2, 1.0, "lin"),
    "eta_end": (0.02, 0.2, "lin"),
    "step_xy_frac": (0.005, 0.05, "log"),
    "step_theta": (1.0, 15.0, "lin"),
    "rho": (0.2, 3.0, "log"),
    "noise_zeta": (0.1, 1.0, "lin"),
    "gamma": (1, 3, "int"),
}


def tune_random(design: DesignInstance, tparams, wparams, cfg: RunConfig,
                budget: int, seed: int) -> tuple[dict, list[dict]]:
    """Seeded random search over the documented hyperparameter ranges.

    The scalarized score is TWL inflated by relative threshold violations:
    score = TWL * (1 + relu(Tmax - T_th)/T_th + relu(Wpg - W_th)/W_th).
    Returns (best row, all rows).
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(budget):
        draw = {}
        for key, (lo, hi, kind) in TUNE_RANGES.items():
            if kind == "log":
                draw[key] = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
            elif kind == "int":
                draw[key] = int(rng.integers(lo, hi + 1))
            else:
                draw[key] = float(rng.uniform(lo, hi))
        cand = replace(cfg,
                       seed=cfg.seed,
                       cgd=replace(cfg.cgd,
                                   eta_start=draw["eta_start"], eta_end=draw["eta_end"],
                                   step_xy_frac=draw["step_xy_frac"],
                                   step_theta=draw["step_theta"],
                                   noise_zeta=draw["noise_zeta"]),
                       penalty=replace(cfg.penalty, rho=draw["rho"], gamma=draw["gamma"]))
        row = {"index": k, **draw}
        try:
            outcome = place_flow(design, tparams, wparams, cand)
            twl = outcome.report["twl_mm"]
            score = twl
            if cand.mode == "tm":
                tmax = outcome.report["peak_temperature_c"]
                wpg = outcome.report["warpage_um"]
                score = twl * (1.0 + max(0.0, tmax - cand.penalty.t_th) / cand.penalty.t_th
                               + max(0.0, wpg - cand.penalty.w_th) / cand.penalty.w_th)
                row.update(peak_temperature_c=tmax, warpage_um=wpg)
            row.update(twl_mm=twl, score=score)
        except Exception as exc:
            row.update(error=f"{type(exc).__name__}: {exc}", score=math.inf)
        rows.append(row)
    best = min(rows, key=lambda r: (r["score"], r["index"]))
    return best, rows
