"""Command-line entry points.

Exit codes: 0 success, 1 internal error, 2 input validation failure.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import click
import yaml

from . import maps as maps_mod
from .metrics import Report, build_report, distance_bins, stratify as stratify_rows
from .perturb import PerturbSpec, apply
from .pipeline import (
    AXES, SWEEP_METRICS, SweepMapping, baseline_forecasts, evaluate_files, group_predictions, resolve_jobs, sweep,
)
from .report import (
    CSV_COLUMNS, inverse_distance_weights, report_rows, report_to_dict, weighted_aggregate, write_report_csv,
    write_report_json,
)
from .scene import (
    EvalConfig, PredictionRecord, ValidationError, dump_predictions, dump_scenes, load_forecasts, load_predictions,
    load_scenes,
)
from .synth import SynthSpec, generate, generate_scenes

log = logging.getLogger("forecast_gauntlet")

EXIT_INTERNAL = 1
EXIT_VALIDATION = 2


class ConfigError(ValidationError):
    pass


@dataclass
class RunConfig:
    scenes: Path | None = None
    preds: Path | None = None
    forecasts: Path | None = None
    maps: Path | None = None
    out: Path | None = None
    eval: EvalConfig = field(default_factory=EvalConfig)
    perturb: PerturbSpec = field(default_factory=PerturbSpec)
    synth: SynthSpec = field(default_factory=SynthSpec)
    sweep: dict[str, Any] = field(default_factory=dict)
    stratify: dict[str, Any] = field(default_factory=dict)
    jobs: int | None = None
    strict: bool = False
    seed: int | None = None

    @classmethod
    def load(cls, path: Path | None, **overrides) -> RunConfig:
        data: dict[str, Any] = {}
        if path is not None:
            try:
                data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: {exc}") from None
            if not isinstance(data, dict):
                raise ConfigError(f"{path}: top level must be a mapping")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            cfg = cls(
                scenes=_path(data.get("scenes")),
                preds=_path(data.get("preds")),
                forecasts=_path(data.get("forecasts")),
                maps=_path(data.get("maps")),
                out=_path(data.get("out")),
                eval=EvalConfig.from_dict(data.get("eval") or {}),
                perturb=PerturbSpec.from_dict(data.get("perturb") or {}),
                synth=SynthSpec.from_dict(data.get("synth") or {}),
                sweep=dict(data.get("sweep") or {}),
                stratify=dict(data.get("stratify") or {}),
                jobs=data.get("jobs"),
                strict=bool(data.get("strict", False)),
                seed=data.get("seed"),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ConfigError(f"invalid config: {exc}") from None
        for key, value in overrides.items():
            if value is not None and value is not False:
                setattr(cfg, key, Path(value) if key in ("scenes", "preds", "forecasts", "maps", "out") else value)
        return cfg

    def require(self, *names: str) -> None:
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise ConfigError(f"--{name} is required")
            if not Path(value).exists():
                raise ConfigError(f"--{name}: {value} does not exist")

    def out_dir(self) -> Path:
        if self.out is None:
            raise ConfigError("--out is required")
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out


def _path(v) -> Path | None:
    return None if v is None else Path(v)


def _guard(fn):
    """Map validation failures to exit code 2; anything else stays an internal error."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValidationError, maps_mod.RasterFormatError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)

    return wrapper


def common_options(fn):
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path),
                     help="YAML/JSON run configuration."),
        click.option("--out", type=click.Path(file_okay=False, path_type=Path), help="Output directory."),
        click.option("--jobs", type=int, default=None,
                     help="Worker processes (default: $FORECAST_GAUNTLET_JOBS or 1)."),
        click.option("--seed", type=int, default=None, help="Base random seed."),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


def _load_config(config_path, **overrides) -> RunConfig:
    if config_path is not None and not Path(config_path).exists():
        raise ConfigError(f"--config: {config_path} does not exist")
    return RunConfig.load(config_path, **overrides)


def _read_inputs(cfg: RunConfig):
    cfg.require("scenes", "preds")
    with open(cfg.scenes, "rb") as fp:
        scenes = load_scenes(fp)
    with open(cfg.preds, "rb") as fp:
        records = load_predictions(fp, scenes)
    preds, forecasts = group_predictions(records)
    if cfg.forecasts is not None:
        cfg.require("forecasts")
        with open(cfg.forecasts, "rb") as fp:
            for (sid, tid), fc in load_forecasts(fp).items():
                forecasts.setdefault(sid, {})[tid] = fc
    return scenes, preds, forecasts


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose: bool) -> None:
    """Score motion forecasts against ground truth under realistic perception inputs."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@cli.command()
@click.option("--scenes", type=click.Path(path_type=Path))
@click.option("--preds", type=click.Path(path_type=Path))
@click.option("--forecasts", type=click.Path(path_type=Path))
@click.option("--strict", is_flag=True, help="Fail on predicted tracks without a forecast.")
@common_options
@_guard
def evaluate(scenes, preds, forecasts, strict, config_path, out, jobs, seed):
    """Write report.json and report.csv for scenes + predictions."""
    cfg = _load_config(config_path, scenes=scenes, preds=preds, forecasts=forecasts, out=out, strict=strict)
    scene_list, pred_map, fc_map = _read_inputs(cfg)
    out_dir = cfg.out_dir()
    results = evaluate_files(scene_list, pred_map, fc_map, cfg.eval, strict=cfg.strict,
                             jobs=resolve_jobs(jobs if jobs is not None else cfg.jobs))
    report = build_report(results, cfg.eval)
    with open(out_dir / "report.json", "w", encoding="utf-8", newline="\n") as fp:
        write_report_json(report, fp)
    with open(out_dir / "report.csv", "w", encoding="utf-8", newline="\n") as fp:
        write_report_csv(report, fp)
    o = report.overall
    click.echo(f"scenes={len(scene_list)} eligible_gt={o.eligible_gt} matched={o.matched} "
               f"map_f={o.map_f} min_ade={o.min_ade} mota={o.mota}")


@cli.command()
@click.option("--scenes", type=click.Path(path_type=Path))
@click.option("--preds", type=click.Path(path_type=Path))
@click.option("--forecasts", type=click.Path(path_type=Path))
@click.option("--strict", is_flag=True)
@common_options
@_guard
def stratify(scenes, preds, forecasts, strict, config_path, out, jobs, seed):
    """Per distance-bin report rows plus a distance-weighted aggregate."""
    cfg = _load_config(config_path, scenes=scenes, preds=preds, forecasts=forecasts, out=out, strict=strict)
    eval_cfg = cfg.eval
    if "bins" in cfg.stratify:
        try:
            eval_cfg = EvalConfig.from_dict({**_eval_dict(eval_cfg), "distance_bins_m": cfg.stratify["bins"]})
        except ValueError as exc:
            raise ConfigError(f"stratify.bins: {exc}") from None
    scene_list, pred_map, fc_map = _read_inputs(cfg)
    out_dir = cfg.out_dir()
    results = evaluate_files(scene_list, pred_map, fc_map, eval_cfg, strict=cfg.strict,
                             jobs=resolve_jobs(jobs if jobs is not None else cfg.jobs))
    per_bin = stratify_rows(results, eval_cfg)
    if "weights" in cfg.stratify:
        bins = distance_bins(eval_cfg.distance_bins_m)
        w = list(cfg.stratify["weights"])
        if len(w) != len(bins):
            raise ConfigError(f"stratify.weights needs {len(bins)} entries (one per bin incl. overflow)")
        weights = dict(zip(bins, map(float, w)))
    else:
        weights = inverse_distance_weights(list(per_bin))
    aggregate = weighted_aggregate(per_bin, weights)
    report = Report(overall=build_report(results, eval_cfg).overall, per_class={}, per_distance_bin=per_bin)
    rows = [r for r in report_rows(report) if r["scope"] == "bin"]
    with open(out_dir / "stratify.csv", "w", encoding="utf-8", newline="\n") as fp:
        writer = csv.DictWriter(fp, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    doc = report_to_dict(report)
    _write_json(out_dir / "stratify.json", {
        "per_distance_bin": doc["per_distance_bin"],
        "weights": [{"bin_lo": _jsonable(lo), "bin_hi": _jsonable(hi), "weight": w}
                    for (lo, hi), w in weights.items()],
        "weighted": aggregate,
    })
    for r in rows:
        click.echo(f"[{r['bin_lo']}, {r['bin_hi']}) eligible={r['eligible_gt']} min_ade={r['min_ade']} "
                   f"motp={r['motp']} mota={r['mota']}")


def _jsonable(x: float):
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def _eval_dict(cfg: EvalConfig) -> dict:
    return {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}


def _sweep_scenes(cfg: RunConfig):
    if cfg.scenes is not None:
        cfg.require("scenes")
        with open(cfg.scenes, "rb") as fp:
            return load_scenes(fp)
    return generate_scenes(cfg.synth)


@cli.command("sweep")
@click.option("--scenes", type=click.Path(path_type=Path))
@click.option("--axis", type=click.Choice(AXES), default=None)
@click.option("--levels", type=str, default=None, help="Comma-separated noise levels, e.g. 0,0.25,0.5,1.")
@click.option("--seeds", type=int, default=None, help="Number of seeds per level.")
@common_options
@_guard
def sweep_cmd(scenes, axis, levels, seeds, config_path, out, jobs, seed):
    """Noise-level sweep along one error axis with the constant-velocity baseline."""
    cfg = _load_config(config_path, scenes=scenes, out=out)
    spec = dict(cfg.sweep)
    axis = axis or spec.get("axis")
    if axis not in AXES:
        raise ConfigError(f"sweep axis must be one of {AXES}, got {axis!r}")
    try:
        level_list = [float(x) for x in levels.split(",")] if levels else [float(x) for x in spec.get("levels", [0, 0.25, 0.5, 1.0])]
    except ValueError as exc:
        raise ConfigError(f"levels: {exc}") from None
    if any(l < 0 for l in level_list):
        raise ConfigError("levels must be >= 0")
    base_seed = seed if seed is not None else (cfg.seed if cfg.seed is not None else cfg.perturb.seed)
    seed_spec = seeds if seeds is not None else spec.get("seeds", 1)
    seed_list = [base_seed + i for i in range(int(seed_spec))] if isinstance(seed_spec, int) else [int(s) for s in seed_spec]
    try:
        mapping = SweepMapping(**spec.get("mapping", {}))
    except TypeError as exc:
        raise ConfigError(f"sweep.mapping: {exc}") from None
    scene_list = _sweep_scenes(cfg)
    out_dir = cfg.out_dir()
    rows = sweep(scene_list, axis, level_list, seed_list, cfg.eval, mapping=mapping, base=cfg.perturb,
                 jobs=resolve_jobs(jobs if jobs is not None else cfg.jobs))
    reports_dir = out_dir / "reports"
    reports_dir.mkdir(exist_ok=True)
    with open(out_dir / "sweep.csv", "w", encoding="utf-8", newline="\n") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["axis", "level", "seed", "metric", "value"])
        for level, s, report in rows:
            for metric in SWEEP_METRICS:
                v = getattr(report.overall, metric)
                writer.writerow([axis, repr(level), s, metric, "" if v is None else repr(v)])
            with open(reports_dir / f"{axis}_L{level!r}_s{s}.json", "w", encoding="utf-8", newline="\n") as rf:
                write_report_json(report, rf)
    click.echo(f"axis={axis} levels={level_list} seeds={seed_list} scenes={len(scene_list)}")


@cli.command("perturb")
@click.option("--scenes", type=click.Path(path_type=Path))
@common_options
@_guard
def perturb_cmd(scenes, config_path, out, jobs, seed):
    """Perturb GT into predictions (with baseline forecasts) and a provenance log."""
    cfg = _load_config(config_path, scenes=scenes, out=out)
    cfg.require("scenes")
    spec = cfg.perturb
    if seed is not None:
        spec = PerturbSpec.from_dict({**spec.to_dict(), "seed": seed})
    with open(cfg.scenes, "rb") as fp:
        scene_list = load_scenes(fp)
    out_dir = cfg.out_dir()
    records, entries = [], []
    for scene in scene_list:
        tracks, prov = apply(scene, spec, cfg.eval)
        fcs = baseline_forecasts(tracks, cfg.eval)
        records += [PredictionRecord(scene.scene_id, t, fcs[t.track_id]) for t in tracks]
        entries += prov
    with open(out_dir / "perturbed.preds.jsonl", "w", encoding="utf-8", newline="\n") as fp:
        dump_predictions(records, fp)
    with open(out_dir / "provenance.jsonl", "w", encoding="utf-8", newline="\n") as fp:
        for e in entries:
            fp.write(json.dumps(e, separators=(",", ":")) + "\n")
    click.echo(f"scenes={len(scene_list)} tracks={len(records)} injected={len(entries)}")


@cli.command("map-ablate")
@click.option("--maps", "maps_path", type=click.Path(path_type=Path))
@common_options
@_guard
def map_ablate(maps_path, config_path, out, jobs, seed):
    """One raster per channel ablation plus an empty map, and an IoU-vs-original table."""
    cfg = _load_config(config_path, maps=maps_path, out=out)
    cfg.require("maps")
    src = Path(cfg.maps)
    inputs = sorted(src.glob("*.fmap")) if src.is_dir() else [src]
    if not inputs:
        raise ConfigError(f"--maps: no .fmap files in {src}")
    out_dir = cfg.out_dir()
    table = []
    for path in inputs:
        try:
            original = maps_mod.from_bytes(path.read_bytes())
        except maps_mod.RasterFormatError as exc:
            raise maps_mod.RasterFormatError(f"{path}: {exc.message}", exc.offset) from None
        ablations = [(f"ablate_ch{c}", maps_mod.ablate_channel(original, c), {c}) for c in range(original.channels)]
        ablations.append(("empty", maps_mod.empty_map(original), set(range(original.channels))))
        for name, raster, removed in ablations:
            (out_dir / f"{path.stem}.{name}.fmap").write_bytes(maps_mod.to_bytes(raster))
            for c in range(original.channels):
                value = None if c in removed else maps_mod.iou(raster, original, c)
                table.append({"map": path.stem, "ablation": name, "channel": c,
                              "channel_name": maps_mod.CHANNEL_NAMES[c] if c < len(maps_mod.CHANNEL_NAMES) else "",
                              "iou": "" if value is None else repr(value)})
    with open(out_dir / "iou.csv", "w", encoding="utf-8", newline="\n") as fp:
        writer = csv.DictWriter(fp, fieldnames=["map", "ablation", "channel", "channel_name", "iou"],
                                lineterminator="\n")
        writer.writeheader()
        writer.writerows(table)
    click.echo(f"maps={len(inputs)} rasters_written={len(inputs) * (original.channels + 1)}")


@cli.command("synth")
@common_options
@_guard
def synth_cmd(config_path, out, jobs, seed):
    """Write synthetic scenes, clean predictions with baseline forecasts, and GT rasters."""
    cfg = _load_config(config_path, out=out)
    spec = cfg.synth
    if seed is not None:
        spec = SynthSpec.from_dict({**spec.to_dict(), "seed": seed})
    out_dir = cfg.out_dir()
    pairs = generate(spec)
    scene_list = [s for s, _ in pairs]
    scenes_path = out_dir / "synth.scenes.jsonl"
    preds_path = out_dir / "synth.preds.jsonl"
    with open(scenes_path, "w", encoding="utf-8", newline="\n") as fp:
        dump_scenes(scene_list, fp)
    records = []
    for scene in scene_list:
        tracks, _ = apply(scene, PerturbSpec(), cfg.eval)
        fcs = baseline_forecasts(tracks, cfg.eval)
        records += [PredictionRecord(scene.scene_id, t, fcs[t.track_id]) for t in tracks]
    with open(preds_path, "w", encoding="utf-8", newline="\n") as fp:
        dump_predictions(records, fp)
    maps_dir = out_dir / "maps"
    maps_dir.mkdir(exist_ok=True)
    written = [scenes_path, preds_path]
    for scene, raster in pairs:
        p = maps_dir / f"{scene.scene_id}.fmap"
        p.write_bytes(maps_mod.to_bytes(raster))
        written.append(p)
    digest = hashlib.sha256()
    for p in written:
        digest.update(p.relative_to(out_dir).as_posix().encode())
        digest.update(p.read_bytes())
    agents = sum(len(s.gt_tracks) for s in scene_list)
    click.echo(f"scenes={len(scene_list)} agents={agents} sha256={digest.hexdigest()}")


def main(argv=None) -> None:
    cli.main(args=argv, prog_name="forecast-gauntlet")


if __name__ == "__main__":
    main()
