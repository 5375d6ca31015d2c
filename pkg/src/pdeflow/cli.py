"""Command-line front end.

Every command resolves its settings into one JSON-able dict (defaults, then
``--config``, then ``--set key=value``, then explicit flags) and stores that
dict in ``manifest.json`` next to its outputs.  Passing the manifest back via
``--config`` reruns the command with identical settings.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataio, experiments
from .errors import NumericalError, UndefinedMetricError, ValidationError
from .estimator import EstimatorConfig, fit
from .fields import feature_maps
from .grid import DomainMask, ScalarField, VectorField
from .metrics import METRIC_HEADER, mirror_mask, region_metrics

log = logging.getLogger("pdeflow")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3

_DEFAULTS = {
    "noise": {"levels": [0.02, 0.04, 0.06, 0.08, 0.10], "scale": "frame_max", "seed": 0},
    "estimate": {"estimator": {}, "seed": 0},
    "metrics": {"midline_axis": "x", "midline_index": None, "welch": False, "frame": 0},
    "convert": {"baseline_frames": None, "kmr_over_te": 1.0},
    "featuremaps": {"char_len": 1.0, "slice_axis": 2, "slice_index": None, "pe_bins": 50,
                    "pe_log10_range": [-3.0, 3.0]},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, out_required=True):
    p.add_argument("--config", help="JSON settings file or a manifest from an earlier run")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a setting, dotted keys for nesting (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="pdeflow", description="Estimate velocity and diffusivity fields from concentration series.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("demo2d", help="2D constant-coefficient simulation followed by a fit")
    _common(p)

    p = sub.add_parser("simulate", help="forward-only synthetic series")
    _common(p)
    p.add_argument("--mode", choices=["advection", "diffusion", "advdiff"])
    p.add_argument("--frames", type=int, help="frame intervals T (T + 1 frames are written)")

    p = sub.add_parser("noise", help="Rician-corrupted copies of a series")
    _common(p)
    p.add_argument("--input", help="series header (.json)")
    p.add_argument("--levels", type=float, nargs="+", help="noise levels as fractions")

    p = sub.add_parser("estimate", help="fit velocity and diffusivity to a series")
    _common(p)
    p.add_argument("--input", help="series header (.json)")
    p.add_argument("--mask", help="mask header (.json); default is the whole grid")
    p.add_argument("--mode", choices=["advection", "diffusion", "advdiff"])

    p = sub.add_parser("metrics", help="lesion versus mirrored-region statistics")
    _common(p)
    p.add_argument("--map", action="append", default=[], metavar="NAME=PATH",
                   help="scalar map to evaluate (repeatable)")
    p.add_argument("--lesion", help="lesion mask header (.json)")
    p.add_argument("--domain", help="optional domain mask; mirrored voxels outside it are dropped")
    p.add_argument("--midline-axis", choices=["x", "y"])
    p.add_argument("--midline-index", type=int)
    p.add_argument("--welch", action="store_true", default=None, help="unequal-variance t statistic")

    p = sub.add_parser("convert", help="raw signal to concentration")
    _common(p)
    p.add_argument("--input", help="signal series header (.json)")
    p.add_argument("--baseline-frames", type=int)
    p.add_argument("--kmr-over-te", type=float)

    p = sub.add_parser("featuremaps", help="speed, orientation, diffusivity and Peclet maps")
    _common(p)
    p.add_argument("--velocity", help="velocity header (.json) with three component frames")
    p.add_argument("--diffusivity", help="diffusivity header (.json)")
    p.add_argument("--mask", help="optional mask restricting the Peclet histogram")
    p.add_argument("--char-len", type=float)

    p = sub.add_parser("experiment", help="synthetic recovery and identifiability recipes")
    _common(p)
    p.add_argument("recipe", nargs="?", choices=sorted(experiments.RECIPES))
    return ap


def _settings(args, defaults: dict) -> dict:
    cfg = experiments._merge(defaults, {})
    if args.config:
        cfg = experiments._merge(cfg, experiments.load_config(args.config))
    for a in args.set:
        experiments.set_path(cfg, a)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def _flag(cfg: dict, key: str, value):
    if value is not None:
        cfg[key] = value


def _require(cfg: dict, key: str):
    if cfg.get(key) is None:
        raise ValidationError(f"missing setting {key!r}")
    return cfg[key]


def _finish(out: Path, command: str, cfg: dict, files: list[str], summary: dict) -> dict:
    manifest = {"experiment": command, "seed": cfg.get("seed"), "config": cfg,
                "outputs": sorted(experiments._data_files(files)), "summary": summary}
    experiments.write_manifest(out / "manifest.json", manifest)
    return manifest


def cmd_demo2d(args) -> dict:
    cfg = _settings(args, experiments.default_config("demo2d"))
    return experiments.run_demo2d(cfg, args.out)


def cmd_simulate(args) -> dict:
    cfg = _settings(args, experiments.default_config("simulate"))
    _flag(cfg, "mode", args.mode)
    if args.frames is not None:
        cfg["series"]["T"] = args.frames
    return experiments.run_simulate(cfg, args.out)


def cmd_noise(args) -> dict:
    cfg = _settings(args, _DEFAULTS["noise"])
    _flag(cfg, "input", args.input)
    _flag(cfg, "levels", args.levels)
    series = dataio.read_series(_require(cfg, "input"))
    out = Path(args.out)
    files, table = [], []
    for i, level in enumerate(cfg["levels"]):
        noisy = dataio.add_rician_noise(series, float(level), int(cfg["seed"]) * 1000 + i + 1, cfg["scale"])
        name = f"noisy_level{i}.json"
        dataio.write_series(noisy, out / name)
        files.append(name)
        table.append({"level": float(level), "file": name})
    return _finish(out, "noise", cfg, files, {"table": table})


def cmd_estimate(args) -> dict:
    cfg = _settings(args, _DEFAULTS["estimate"])
    _flag(cfg, "input", args.input)
    _flag(cfg, "mask", args.mask)
    if args.mode is not None:
        cfg["estimator"]["mode"] = args.mode
    series = dataio.read_series(_require(cfg, "input"))
    mask = dataio.read_mask(cfg["mask"]) if cfg.get("mask") else DomainMask.from_inside(series.grid)
    est = dict(cfg["estimator"])
    est.setdefault("rng_seed", int(cfg["seed"]))
    est_cfg = EstimatorConfig.from_dict(est)
    res = fit(series, mask, est_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = experiments._write_fit(out, res, series.grid)
    summary = res.manifest(est_cfg)
    summary.pop("config")
    return _finish(out, "estimate", cfg, files, summary)


def _map_values(path: str, frame: int) -> np.ndarray:
    s = dataio.read_series(path)
    if not 0 <= frame <= s.T:
        raise ValidationError(f"{path}: frame {frame} out of range")
    return s.frames[frame]


def cmd_metrics(args) -> dict:
    cfg = _settings(args, _DEFAULTS["metrics"])
    if args.map:
        maps = {}
        for item in args.map:
            name, sep, path = item.partition("=")
            if not sep:
                raise ValidationError(f"--map expects NAME=PATH, got {item!r}")
            maps[name] = path
        cfg["maps"] = maps
    _flag(cfg, "lesion", args.lesion)
    _flag(cfg, "domain", args.domain)
    _flag(cfg, "midline_axis", args.midline_axis)
    _flag(cfg, "midline_index", args.midline_index)
    _flag(cfg, "welch", args.welch)
    maps = _require(cfg, "maps")
    lesion = dataio.read_mask(_require(cfg, "lesion"), dirichlet_slabs=False)
    domain = dataio.read_mask(cfg["domain"], dirichlet_slabs=False) if cfg.get("domain") else None
    pair = mirror_mask(lesion.inside, cfg["midline_axis"], int(_require(cfg, "midline_index")), domain)
    rows = []
    for name in sorted(maps):
        values = _map_values(maps[name], int(cfg["frame"]))
        if values.shape != pair.lesion.shape:
            raise ValidationError(f"map {name} and lesion mask differ in shape")
        rows.append(region_metrics(name, values, pair, bool(cfg["welch"])))
    out = Path(args.out)
    dataio.export_csv(out / "metrics.csv", METRIC_HEADER, rows)
    summary = {"rows": [dict(zip(METRIC_HEADER, r)) for r in rows], "dropped_mirror_voxels": pair.dropped}
    return _finish(out, "metrics", cfg, ["metrics.csv"], summary)


def cmd_convert(args) -> dict:
    cfg = _settings(args, _DEFAULTS["convert"])
    _flag(cfg, "input", args.input)
    _flag(cfg, "baseline_frames", args.baseline_frames)
    _flag(cfg, "kmr_over_te", args.kmr_over_te)
    raw = dataio.read_series(_require(cfg, "input"))
    sig = dataio.SignalSeries(raw.grid, raw.dt_frames, raw.frames, raw.meta)
    conc = dataio.signal_to_concentration(sig, cfg["baseline_frames"], float(cfg["kmr_over_te"]))
    out = Path(args.out)
    dataio.write_series(conc, out / "concentration.json")
    summary = {k: conc.meta[k] for k in ("baseline_frames", "invalid_signal", "clamped_negative")}
    return _finish(out, "convert", cfg, ["concentration.json"], summary)


def _finite_range(a: np.ndarray) -> tuple[float, float]:
    f = a[np.isfinite(a)]
    if f.size == 0:
        return 0.0, 1.0
    lo, hi = float(f.min()), float(f.max())
    return (lo, hi) if hi > lo else (lo, lo + 1.0)


def cmd_featuremaps(args) -> dict:
    cfg = _settings(args, _DEFAULTS["featuremaps"])
    _flag(cfg, "velocity", args.velocity)
    _flag(cfg, "diffusivity", args.diffusivity)
    _flag(cfg, "mask", args.mask)
    _flag(cfg, "char_len", args.char_len)
    vs = dataio.read_series(_require(cfg, "velocity"))
    ds = dataio.read_series(_require(cfg, "diffusivity"))
    if vs.T != 2:
        raise ValidationError("velocity file must hold three component frames")
    grid = vs.grid
    fm = feature_maps(VectorField(grid, vs.frames), ScalarField(grid, ds.frames[0]), float(cfg["char_len"]))
    out = Path(args.out)
    axis = int(cfg["slice_axis"])
    index = cfg["slice_index"] if cfg["slice_index"] is not None else grid.dims[axis] // 2
    maps = {"v_mag": fm.v_mag.values, "v_r": fm.v_rgb[0].values, "v_g": fm.v_rgb[1].values,
            "v_b": fm.v_rgb[2].values, "d": fm.d.values, "pe": fm.peclet.values, "inv_pe": fm.inv_peclet.values}
    files = []
    for name, a in maps.items():
        # the container stores finite values only
        stored = np.where(np.isfinite(a), a, 0.0)
        dataio.write_series(dataio.VolumeSeries(grid, 1.0, stored[None], {"map": name, "nonfinite_as": 0}),
                            out / f"{name}.json")
        dataio.export_slice_pgm(a, axis, int(index), _finite_range(a), out / f"{name}.pgm")
        files += [f"{name}.json", f"{name}.pgm"]

    sel = dataio.read_mask(cfg["mask"], dirichlet_slabs=False).inside if cfg.get("mask") else np.ones(grid.dims, bool)
    pe = fm.peclet.values[sel]
    pe = pe[np.isfinite(pe) & (pe > 0)]
    lo, hi = cfg["pe_log10_range"]
    counts, edges = np.histogram(np.log10(pe), bins=int(cfg["pe_bins"]), range=(float(lo), float(hi)))
    rows = [[edges[i], edges[i + 1], int(counts[i])] for i in range(len(counts))]
    dataio.export_csv(out / "pe_hist.csv", ["log10_pe_lo", "log10_pe_hi", "count"], rows)
    files.append("pe_hist.csv")
    summary = {"median_pe": float(np.median(pe)) if pe.size else None, "pe_voxels": int(pe.size),
               "slice_axis": axis, "slice_index": int(index)}
    return _finish(out, "featuremaps", cfg, files, summary)


def cmd_experiment(args) -> dict:
    if args.config:
        cfg = experiments.load_config(args.config)
        if args.recipe is not None and cfg.get("recipe") != args.recipe:
            raise ValidationError(f"config is for recipe {cfg.get('recipe')!r}, not {args.recipe!r}")
    elif args.recipe is not None:
        cfg = experiments.default_config(args.recipe)
    else:
        raise ValidationError("experiment needs a recipe or --config")
    for a in args.set:
        experiments.set_path(cfg, a)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return experiments.run_experiment(cfg, args.out)


COMMANDS = {
    "demo2d": cmd_demo2d,
    "simulate": cmd_simulate,
    "noise": cmd_noise,
    "estimate": cmd_estimate,
    "metrics": cmd_metrics,
    "convert": cmd_convert,
    "featuremaps": cmd_featuremaps,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        manifest = COMMANDS[args.command](args)
    except (ValidationError, UndefinedMetricError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"wrote {len(manifest['outputs'])} files and manifest.json to {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
