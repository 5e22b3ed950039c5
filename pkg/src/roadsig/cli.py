"""Command-line entry point.

Every command reads one JSON run configuration (``--config``) and lets a few
flags override it. Outputs go to the run directory: ``--out`` wins over the
``ROADSIG_OUT`` environment variable, which wins over the config file.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import cnn, deadreck, features, forest, sim
from .core import ConfigError, Dataset, RoadsigError, build_route, read_drive_csv, read_route_csv
from .evaluate import write_metrics, write_sweep_csv
from .pipeline import SEGMENTOR_KINDS, evaluate, infer, prepare_all, run_sweep, train_segmentor
from .positioning import write_trajectory_csv
from .segmentors import load_segmentor

OUT_ENV = "ROADSIG_OUT"
DATASET_FORMAT = "roadsig-dataset"
PROFILES = {
    "default": sim.SimConfig,
    "separable": sim.separable_profile,
    "car": sim.car_profile,
    "scooter": sim.scooter_profile,
}


def derive_seed(root: int, component: str) -> int:
    """Independent 32-bit seed for a named component of the run."""
    digest = hashlib.sha256(f"{root}:{component}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "run"
    profile: str = "default"
    sim: dict = field(default_factory=dict)  # SimConfig overrides
    splits: tuple = (20, 5, 5)
    dataset: Optional[str] = None  # manifest path; default <out>/dataset/manifest.json
    segments: Optional[int] = None  # route segmentation N; default: the dataset's signature count
    segmentor: str = "forest"
    model: Optional[str] = None  # default <out>/model.npz
    forest: dict = field(default_factory=dict)  # ForestConfig overrides
    cnn: dict = field(default_factory=dict)  # TrainConfig overrides
    cnn_channels: tuple = (64, 128, 1024)
    cnn_kernels: tuple = (3, 5, 7)
    sweep_candidates: tuple = (5, 10, 20, 40, 80)
    eval_split: str = "test"
    n_jobs: int = 1

    def __post_init__(self):
        if self.segmentor not in SEGMENTOR_KINDS:
            raise ConfigError(f"segmentor must be one of {SEGMENTOR_KINDS}, got {self.segmentor!r}")
        if self.profile not in PROFILES:
            raise ConfigError(f"profile must be one of {sorted(PROFILES)}, got {self.profile!r}")
        if self.eval_split not in ("train", "val", "test"):
            raise ConfigError(f"unknown split {self.eval_split!r}")
        if len(self.splits) != 3 or min(self.splits) < 1:
            raise ConfigError("splits must be three positive drive counts")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def manifest(self) -> Path:
        return Path(self.dataset) if self.dataset else self.out_dir / "dataset" / "manifest.json"

    @property
    def model_path(self) -> Path:
        return Path(self.model) if self.model else self.out_dir / "model.npz"

    def sim_config(self) -> sim.SimConfig:
        try:
            return PROFILES[self.profile](**{**self.sim, "seed": derive_seed(self.seed, "sim")})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid simulation settings: {exc}") from exc

    def forest_config(self) -> forest.ForestConfig:
        opts = {"seed": derive_seed(self.seed, "forest"), "n_jobs": self.n_jobs, **self.forest}
        return forest.ForestConfig(**opts)

    def cnn_config(self) -> cnn.TrainConfig:
        return cnn.TrainConfig(**{"seed": derive_seed(self.seed, "cnn"), **self.cnn})


def load_config(args) -> RunConfig:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"{args.config}: cannot read configuration ({exc})") from exc
    if os.environ.get(OUT_ENV):
        data["out"] = os.environ[OUT_ENV]
    for key in ("seed", "segmentor", "out"):
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    return RunConfig.from_dict(data)


# --- dataset loading -------------------------------------------------------------

def load_dataset(manifest_path: Path, segments: Optional[int] = None) -> Dataset:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise ConfigError(f"{manifest_path}: dataset manifest not found (run `simulate` first)")
    meta = json.loads(manifest_path.read_text())
    if meta.get("format") != DATASET_FORMAT:
        raise ConfigError(f"{manifest_path}: not a dataset manifest")
    if meta.get("version", 0) > sim.SIM_MANIFEST_VERSION:
        raise ConfigError(f"{manifest_path}: dataset version {meta['version']} is newer than "
                          f"supported {sim.SIM_MANIFEST_VERSION}")
    root = manifest_path.parent
    route = build_route(read_route_csv(root / meta["route"]), segments or meta["signature_segments"])
    splits = {
        split: [read_drive_csv(root / e["imu"], root / e["ground_truth"], e["rate_hz"], e["name"])
                for e in meta["splits"][split]]
        for split in ("train", "val", "test")
    }
    return Dataset(route=route, **splits)


def _check_model_route(segmentor, path, route) -> None:
    n = segmentor.model.meta.get("route_segments", segmentor.n_classes)
    if n != route.num_segments or segmentor.n_classes != route.num_segments:
        raise ConfigError(f"{path}: model was trained for N={n} segments but the route has "
                          f"N={route.num_segments}")


def _load_model(cfg: RunConfig, route):
    if not cfg.model_path.exists():
        raise ConfigError(f"{cfg.model_path}: no trained model (run `train` first)")
    seg = load_segmentor(cfg.model_path)
    _check_model_route(seg, cfg.model_path, route)
    return seg


# --- commands --------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig) -> Path:
    scfg = cfg.sim_config()
    ds = sim.synth_dataset(scfg, *cfg.splits)
    return sim.write_dataset(ds, scfg, cfg.manifest.parent)


def cmd_train(cfg: RunConfig) -> Path:
    ds = load_dataset(cfg.manifest, cfg.segments)
    train = prepare_all(ds.train)
    val = prepare_all(ds.val) if cfg.segmentor == "cnn" else None
    seg = train_segmentor(cfg.segmentor, train, ds.route, cfg.forest_config(), cfg.cnn_config(), val,
                          {"channels": cfg.cnn_channels, "kernels": cfg.cnn_kernels})
    cfg.model_path.parent.mkdir(parents=True, exist_ok=True)
    seg.save(cfg.model_path)
    return cfg.model_path


def cmd_infer(cfg: RunConfig) -> Path:
    ds = load_dataset(cfg.manifest, cfg.segments)
    seg = _load_model(cfg, ds.route)
    out = cfg.out_dir / "trajectories"
    out.mkdir(parents=True, exist_ok=True)
    for p in prepare_all(ds.split(cfg.eval_split)):
        write_trajectory_csv(infer(seg, p, ds.route), out / f"{p.drive.name}.csv")
    return out


def cmd_evaluate(cfg: RunConfig) -> Path:
    ds = load_dataset(cfg.manifest, cfg.segments)
    seg = _load_model(cfg, ds.route)
    report, _ = evaluate(seg, prepare_all(ds.split(cfg.eval_split)), ds.route)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.out_dir / "metrics.json"
    write_metrics(report, path)
    return path


def cmd_sweep(cfg: RunConfig) -> Path:
    ds = load_dataset(cfg.manifest, cfg.segments)
    result = run_sweep(ds.route.polyline, prepare_all(ds.train), prepare_all(ds.val),
                       cfg.sweep_candidates, cfg.segmentor, cfg.forest_config(), cfg.cnn_config(),
                       {"channels": cfg.cnn_channels, "kernels": cfg.cnn_kernels})
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.out_dir / "sweep.csv"
    write_sweep_csv(result, path)
    for n, msg in result.errors.items():
        print(f"sweep: N={n} failed: {msg}", file=sys.stderr)
    print(f"chosen N = {result.chosen}")
    return path


def cmd_baseline_dr(cfg: RunConfig) -> Path:
    ds = load_dataset(cfg.manifest, cfg.segments)
    out = cfg.out_dir / "dead_reckoning"
    out.mkdir(parents=True, exist_ok=True)
    errors = {}
    for drive in ds.split(cfg.eval_split):
        res = deadreck.dead_reckon(drive, deadreck.initial_state(drive, ds.route))
        errors[drive.name] = deadreck.mean_error(res, drive)
        with open(out / f"{drive.name}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("t", "x", "y", "seg_raw", "seg_corrected", "flag"))
            for t, (x, y) in zip(res.t, res.xy):
                w.writerow((repr(float(t)), repr(float(x)), repr(float(y)), "", "", 0))
    summary = {"format": "roadsig-dr-metrics", "version": 1,
               "mean_error": {k: float(v) for k, v in errors.items()},
               "mean_error_all": float(np.mean(list(errors.values())))}
    path = cfg.out_dir / "dr_metrics.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return path


def cmd_export_features(cfg: RunConfig) -> Path:
    ds = load_dataset(cfg.manifest, cfg.segments)
    out = cfg.out_dir / "features"
    out.mkdir(parents=True, exist_ok=True)
    features.write_layout(out / "layout.csv")
    names = features.feature_names()
    for split in ("train", "val", "test"):
        with open(out / f"{split}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("drive", "t", "label", "flag", *names))
            for p in prepare_all(ds.split(split)):
                labels = p.labels(ds.route)
                for t, lab, flag, row in zip(p.starts, labels, p.flags, p.features):
                    w.writerow((p.drive.name, repr(float(t)), int(lab), int(flag), *map(repr, row.tolist())))
    return out


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "infer": cmd_infer,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "baseline-dr": cmd_baseline_dr,
    "export-features": cmd_export_features,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roadsig", description="Route positioning from IMU vibration.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="root seed")
        p.add_argument("--segmentor", choices=SEGMENTOR_KINDS)
        p.add_argument("--out", help=f"output directory (overrides ${OUT_ENV})")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        path = COMMANDS[args.command](cfg)
    except (RoadsigError, ValueError, OSError) as exc:
        print(f"roadsig {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
