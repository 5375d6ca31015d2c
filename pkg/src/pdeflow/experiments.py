"""Synthetic recovery and identifiability protocols at desk scale.

Every recipe is a pure function of its configuration dict (which carries
the seed), so writing that dict into the manifest is enough to regenerate
every output file bit for bit.
"""

from __future__ import annotations

import copy
import json
import logging
from pathlib import Path

import numpy as np

from . import dataio
from .errors import ValidationError
from .estimator import EstimatorConfig, FitResult, fit, predict_series
from .fields import diffusivity_iso, velocity_from_potentials
from .grid import DomainMask, Grid3, ScalarField, VectorField
from .metrics import mae_maxnorm
from .solver import BoundaryData, Mode, SolverConfig, integrate
from .synthetic import (
    blob,
    box_mask,
    ellipsoid_mask,
    ground_truth_diffusivity,
    ground_truth_potentials,
    initial_concentration,
    simulate,
)

__all__ = [
    "RECIPES",
    "NOISE_LEVELS",
    "default_config",
    "set_path",
    "run_experiment",
    "run_demo2d",
    "run_simulate",
    "write_manifest",
    "load_config",
]

log = logging.getLogger(__name__)

NOISE_LEVELS = [0.0, 0.02, 0.04, 0.06, 0.08, 0.10]

# recipe -> (simulated physics, fitted model, field whose recovery is scored)
RECIPES = {
    "adv-via-adv": ("advection", "advection", "v"),
    "diff-via-diff": ("diffusion", "diffusion", "d"),
    "adv-via-advdiff": ("advection", "advdiff", "v"),
    "diff-via-advdiff": ("diffusion", "advdiff", "d"),
    "noise-ladder": (None, None, None),
}

_BASE = {
    "grid": {"dims": [32, 32, 32], "spacing": [1.0, 1.0, 1.0], "mask": "box"},
    "truth": {"v_max": 1.0, "d_min": 0.02, "d_max": 0.15, "corr": 4.0,
              "c0_base": 10.0, "c0_amp": 10.0, "c0_corr": 2.0},
    "series": {"T": 12, "dt_frames": 1.0, "dt": 0.25, "integrator": "rk4"},
    "noise": {"levels": NOISE_LEVELS, "scale": "frame_max", "recipe": "adv-via-adv"},
    "char_len": 1.0,
    "estimator": {"dt": 0.25, "integrator": "rk4", "lr": 60.0, "max_iters": 1000},
}

# calibrated per recipe; the loss is a voxel mean, so lr scales with the voxel count
_RECIPE_OVERRIDES = {
    "adv-via-adv": {"estimator": {"mode": "advection"}},
    "diff-via-diff": {"series": {"dt": 0.125},
                      "estimator": {"mode": "diffusion", "dt": 0.125, "lr": 80.0, "init_scale_d": 0.1,
                                    "max_iters": 1200}},
    "adv-via-advdiff": {"series": {"dt": 0.125},
                        "estimator": {"mode": "advdiff", "dt": 0.125, "lr_d": 6.0}},
    "diff-via-advdiff": {"series": {"dt": 0.125},
                         "estimator": {"mode": "advdiff", "dt": 0.125, "lr": 80.0, "init_scale_d": 0.1,
                                       "max_iters": 1200}},
    "noise-ladder": {"grid": {"dims": [16, 16, 16]}, "series": {"dt": 0.125},
                     "estimator": {"mode": "advection", "dt": 0.125, "lr": 5.0, "lambda_v": 10.0,
                                   "max_iters": 1000}},
}

DEMO2D = {
    "recipe": "demo2d",
    "seed": 0,
    "grid": {"dims": [64, 64, 1], "spacing": [1.0, 1.0, 1.0], "mask": "box"},
    "truth": {"v": [0.5, 0.25, 0.0], "d": 0.05, "blob_radius": 16.0, "c0_base": 1.0, "c0_amp": 10.0},
    "series": {"T": 12, "dt_frames": 1.0, "dt": 0.25, "integrator": "rk4"},
    "char_len": 1.0,
    # a constant flow needs a linear stream function; strong smoothing carries it out of the blob
    "estimator": {"mode": "advdiff", "dt": 0.25, "integrator": "rk4", "lr": 100.0, "lr_d": 3.0,
                  "lambda_v": 10.0, "lambda_d": 1.0, "max_iters": 3000, "init_scale_d": 0.1},
}


SIMULATE = {
    "recipe": "simulate",
    "seed": 0,
    "mode": "advdiff",
    "grid": _BASE["grid"],
    "truth": _BASE["truth"],
    "series": {"T": 40, "dt_frames": 1.0, "dt": 0.125, "integrator": "rk45"},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def default_config(recipe: str, seed: int = 0) -> dict:
    if recipe == "demo2d":
        return _merge(DEMO2D, {"seed": seed})
    if recipe == "simulate":
        return _merge(SIMULATE, {"seed": seed})
    if recipe not in RECIPES:
        raise ValidationError(f"unknown recipe {recipe!r}; choose from {sorted(RECIPES)}")
    cfg = _merge(_BASE, _RECIPE_OVERRIDES[recipe])
    cfg["recipe"] = recipe
    cfg["seed"] = seed
    return cfg


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_path(cfg: dict, assignment: str) -> dict:
    """Apply ``a.b.c=value`` to a nested config; ``value`` is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ValidationError(f"--set expects key=value, got {assignment!r}")
    key, _, raw = assignment.partition("=")
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = _parse_value(raw.strip())
    return cfg


def load_config(path) -> dict:
    """Read a config file; a manifest is accepted and yields its config snapshot."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ValidationError(f"cannot read config {path}: {e}") from None
    if isinstance(data, dict) and "config" in data and isinstance(data["config"], dict):
        return data["config"]
    if not isinstance(data, dict):
        raise ValidationError("config must be a JSON object")
    return data


def write_manifest(path, manifest: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=dataio._json_default) + "\n")
    return path


def _grid(cfg: dict) -> Grid3:
    g = cfg["grid"]
    return Grid3(tuple(int(n) for n in g["dims"]), tuple(float(h) for h in g["spacing"]))


def _mask(grid: Grid3, kind: str) -> DomainMask:
    if kind == "box":
        return box_mask(grid)
    if kind == "ellipsoid":
        return ellipsoid_mask(grid)
    raise ValidationError(f"unknown mask kind {kind!r}")


def _estimator_config(cfg: dict, seed: int) -> EstimatorConfig:
    est = dict(cfg.get("estimator", {}))
    est.setdefault("rng_seed", seed)
    return EstimatorConfig.from_dict(est)


def _truth(cfg: dict, grid: Grid3, seed: int):
    t = cfg["truth"]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    pot = ground_truth_potentials(grid, rng, float(t["v_max"]), float(t["corr"]))
    dif = ground_truth_diffusivity(grid, rng, float(t["d_min"]), float(t["d_max"]), float(t["corr"]))
    c0 = initial_concentration(grid, rng, float(t["c0_corr"]), float(t["c0_base"]), float(t["c0_amp"]))
    return pot, dif, c0


def _simulate(cfg: dict, physics: str, pot, dif, c0, mask):
    s = cfg["series"]
    return simulate(c0, pot, dif, mask, physics, int(s["T"]), float(s["dt_frames"]), float(s["dt"]),
                    integrator=s.get("integrator", "rk4"))


def _scores(res: FitResult, v_true, d_true, region, char_len: float) -> dict:
    v_est = res.v.magnitude()
    d_est = res.d.values
    sel = region
    med_v = float(np.median(v_est[sel]))
    med_d = float(np.median(d_est[sel]))
    out = {
        "median_v_est": med_v,
        "median_d_est": med_d,
        "ratio_d_over_v": med_d / (char_len * med_v) if med_v > 0 else float("inf"),
        "ratio_v_over_d": char_len * med_v / med_d if med_d > 0 else float("inf"),
        "iterations": res.iterations,
        "converged": res.converged,
        "final_total_loss": res.loss_history[-1].total if res.loss_history else None,
    }
    # the normalized MAE is undefined for an all-zero truth
    if v_true is not None and np.max(v_true[sel]) > 0:
        out["mae_v"] = mae_maxnorm(v_est, v_true, sel)
        out["mae_v_zero_baseline"] = mae_maxnorm(np.zeros_like(v_true), v_true, sel)
    if d_true is not None and np.max(d_true[sel]) > 0:
        out["mae_d"] = mae_maxnorm(d_est, d_true, sel)
        out["mae_d_zero_baseline"] = mae_maxnorm(np.zeros_like(d_true), d_true, sel)
    return out


def _write_fit(out: Path, res: FitResult, grid: Grid3, prefix: str = "est") -> list[str]:
    files = []
    series = dataio.VolumeSeries(grid, 1.0, np.stack([res.v.values[0], res.v.values[1], res.v.values[2]]),
                                 {"content": "velocity components x, y, z (mm/s)", "signed": True})
    files.append(dataio.write_series(series, out / f"{prefix}_v.json").name)
    d = dataio.VolumeSeries(grid, 1.0, res.d.values[None], {"content": "diffusivity (mm^2/s)"})
    files.append(dataio.write_series(d, out / f"{prefix}_d.json").name)
    rows = [[i + 1, b.total, b.l_cc, b.l_as_v, b.l_as_d] for i, b in enumerate(res.loss_history)]
    dataio.export_csv(out / f"{prefix}_loss.csv", ["iteration", "total", "l_cc", "l_as_v", "l_as_d"], rows)
    files.append(f"{prefix}_loss.csv")
    return files


def _data_files(names: list[str]) -> list[str]:
    # each container header has a raw payload next to it
    out = []
    for n in names:
        out.append(n)
        if n.endswith(".json"):
            out.append(n[:-5] + ".raw")
    return out


def _run_single(cfg: dict, out: Path, recipe: str) -> dict:
    physics, model, scored = RECIPES[recipe]
    seed = int(cfg["seed"])
    grid = _grid(cfg)
    mask = _mask(grid, cfg["grid"].get("mask", "box"))
    pot, dif, c0 = _truth(cfg, grid, seed)
    measured = _simulate(cfg, physics, pot, dif, c0, mask)
    est_cfg = _estimator_config(cfg, seed)
    if est_cfg.mode is not Mode(model):
        raise ValidationError(f"recipe {recipe} fits the {model} model, config asks for {est_cfg.mode.value}")
    v_true = velocity_from_potentials(pot).magnitude() if physics == "advection" else None
    d_true = diffusivity_iso(dif).values if physics == "diffusion" else None

    files = [dataio.write_series(measured, out / "measured.json").name]
    res = fit(measured, mask, est_cfg)
    files += _write_fit(out, res, grid)
    summary = _scores(res, v_true, d_true, mask.active, float(cfg.get("char_len", 1.0)))
    summary["scored_field"] = scored
    rows = [[k, summary[k]] for k in sorted(summary) if isinstance(summary[k], (int, float)) and k != "converged"]
    dataio.export_csv(out / "summary.csv", ["quantity", "value"], rows)
    files.append("summary.csv")
    return {"summary": summary, "files": _data_files(files)}


def _run_noise_ladder(cfg: dict, out: Path) -> dict:
    base = cfg["noise"].get("recipe", "adv-via-adv")
    if base not in ("adv-via-adv", "diff-via-diff"):
        raise ValidationError("the noise ladder runs on adv-via-adv or diff-via-diff")
    physics, model, scored = RECIPES[base]
    seed = int(cfg["seed"])
    grid = _grid(cfg)
    mask = _mask(grid, cfg["grid"].get("mask", "box"))
    pot, dif, c0 = _truth(cfg, grid, seed)
    clean = _simulate(cfg, physics, pot, dif, c0, mask)
    est_cfg = _estimator_config(cfg, seed)
    truth = velocity_from_potentials(pot).magnitude() if scored == "v" else diffusivity_iso(dif).values
    levels = [float(x) for x in cfg["noise"]["levels"]]
    rows, table, files = [], [], [dataio.write_series(clean, out / "measured_clean.json").name]
    for i, level in enumerate(levels):
        noisy = dataio.add_rician_noise(clean, level, seed * 1000 + i + 1, cfg["noise"].get("scale", "frame_max"))
        res = fit(noisy, mask, est_cfg)
        est = res.v.magnitude() if scored == "v" else res.d.values
        mae = mae_maxnorm(est, truth, mask.active)
        table.append({"level": level, "mae": mae, "iterations": res.iterations, "converged": res.converged})
        rows.append([level, mae, res.iterations, int(res.converged)])
        tag = f"level{i}"
        files += _write_fit(out, res, grid, prefix=f"est_{tag}")
    dataio.export_csv(out / "noise_mae.csv", ["level", "mae", "iterations", "converged"], rows)
    files.append("noise_mae.csv")
    by_level = {t["level"]: t["mae"] for t in table}
    summary = {"base_recipe": base, "scored_field": scored, "table": table}
    if 0.0 in by_level and max(levels) > 0:
        summary["mae_ratio_max_over_clean"] = by_level[max(levels)] / by_level[0.0]
    return {"summary": summary, "files": _data_files(files)}


def run_experiment(cfg: dict, out_dir) -> dict:
    """Run ``cfg["recipe"]`` and write its outputs plus ``manifest.json`` into ``out_dir``."""
    recipe = cfg.get("recipe")
    if recipe == "demo2d":
        return run_demo2d(cfg, out_dir)
    if recipe not in RECIPES:
        raise ValidationError(f"unknown recipe {recipe!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if recipe == "noise-ladder":
        result = _run_noise_ladder(cfg, out)
    else:
        result = _run_single(cfg, out, recipe)
    manifest = {"experiment": recipe, "seed": int(cfg["seed"]), "config": cfg,
                "outputs": sorted(result["files"]), "summary": result["summary"]}
    write_manifest(out / "manifest.json", manifest)
    return manifest


def run_demo2d(cfg: dict, out_dir) -> dict:
    """Constant-coefficient 2D advection-diffusion of a blob, then a full fit."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = int(cfg["seed"])
    grid = _grid(cfg)
    mask = _mask(grid, cfg["grid"].get("mask", "box"))
    t = cfg["truth"]
    s = cfg["series"]
    v_true = np.broadcast_to(np.asarray(t["v"], dtype=np.float64)[:, None, None, None], (3,) + grid.dims).copy()
    d_true = np.full(grid.dims, float(t["d"]))
    center = [0.5 * (n - 1) * h for n, h in zip(grid.dims, grid.spacing)]
    c0 = ScalarField(grid, float(t["c0_base"]) + blob(grid, center, float(t["blob_radius"]), float(t["c0_amp"])).values)

    scfg = SolverConfig(dt=float(s["dt"]), mode="advdiff", integrator=s.get("integrator", "rk4"))
    bd = BoundaryData.constant(c0, mask)
    measured = integrate(c0, VectorField(grid, v_true), ScalarField(grid, d_true), mask, bd, scfg,
                         int(s["T"]) * float(s["dt_frames"]), float(s["dt_frames"]))
    est_cfg = _estimator_config(cfg, seed)
    res = fit(measured, mask, est_cfg)
    pred = predict_series(res, measured.frames[0], mask, bd, est_cfg, measured.T)

    files = [dataio.write_series(measured, out / "measured.json").name]
    files += _write_fit(out, res, grid)
    lo, hi = float(measured.frames.min()), float(measured.frames.max())
    for name, ser in (("measured", measured), ("predicted", pred)):
        for k in (0, measured.T // 2, measured.T):
            fname = f"{name}_t{k:02d}.pgm"
            dataio.export_slice_pgm(ScalarField(grid, ser.frames[k]), 2, 0, (lo, hi), out / fname)
            files.append(fname)
    v_mag_true = np.sqrt((v_true**2).sum(axis=0))
    summary = _scores(res, v_mag_true, d_true, mask.active, float(cfg.get("char_len", 1.0)))
    summary["prediction_rmse"] = float(np.sqrt(np.mean((pred.frames - measured.frames) ** 2)))
    # away from the blob the data carry no information about V; score the blob core separately
    x, y, z = grid.coords()
    core = ((x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2 <= float(t["blob_radius"]) ** 2)
    core &= mask.active
    if v_mag_true.max() > 0 and core.any():
        summary["mae_v_blob_core"] = mae_maxnorm(res.v.magnitude(), v_mag_true, core)
    rows = [[k, summary[k]] for k in sorted(summary) if isinstance(summary[k], (int, float)) and k != "converged"]
    dataio.export_csv(out / "summary.csv", ["quantity", "value"], rows)
    files.append("summary.csv")
    manifest = {"experiment": "demo2d", "seed": seed, "config": cfg, "outputs": sorted(_data_files(files)),
                "summary": summary}
    write_manifest(out / "manifest.json", manifest)
    return manifest


def run_simulate(cfg: dict, out_dir) -> dict:
    """Forward-only synthetic series plus its ground-truth fields and mask."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = int(cfg["seed"])
    mode = Mode(cfg.get("mode", "advdiff"))
    grid = _grid(cfg)
    mask = _mask(grid, cfg["grid"].get("mask", "box"))
    pot, dif, c0 = _truth(cfg, grid, seed)
    series = _simulate(cfg, mode.value, pot if mode.advects else None, dif if mode.diffuses else None, c0, mask)
    v = velocity_from_potentials(pot).values if mode.advects else np.zeros((3,) + grid.dims)
    d = diffusivity_iso(dif).values if mode.diffuses else np.zeros(grid.dims)
    files = [dataio.write_series(series, out / "series.json").name,
             dataio.write_series(dataio.VolumeSeries(grid, 1.0, v, {"content": "true velocity x, y, z", "signed": True}),
                                 out / "true_v.json").name,
             dataio.write_series(dataio.VolumeSeries(grid, 1.0, d[None], {"content": "true diffusivity"}),
                                 out / "true_d.json").name,
             dataio.write_mask(mask, out / "mask.json").name]
    summary = {"frames": series.T + 1, "max_speed": float(np.sqrt((v**2).sum(axis=0)).max()),
               "max_d": float(d.max())}
    manifest = {"experiment": "simulate", "seed": seed, "config": cfg, "outputs": sorted(_data_files(files)),
                "summary": summary}
    write_manifest(out / "manifest.json", manifest)
    return manifest
