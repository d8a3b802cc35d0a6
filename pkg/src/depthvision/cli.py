"""Command-line entry point.

Every subcommand resolves an effective config (defaults, then ``--config``
JSON, then flags), validates it, writes its artifact and a sibling run
manifest with the config hash, seed and library versions.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED, EXIT_ENDPOINT = 0, 2, 3, 4, 5
MODES = ("camera", "off", "full", "pixelwise")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class EndpointFailure(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    seed: int = 0
    dataset: str | None = None
    weights: str | None = None
    output: str | None = None
    # fusion
    mode: str = "full"
    l_low: float = 0.15
    l_high: float = 0.35
    daytime_bypass: bool = True
    # geometry / generator grid
    crop_size: int = 128
    gen_size: int = 64
    max_range: float = 100.0
    stride: int = 4
    # simulation
    scenes: int = 8
    night_fraction: float = 0.5
    night_ambient: float = 0.1
    noise_sigma: float = 0.01
    val_every: int = 4
    # training
    steps: int = 2000
    batch_size: int = 4
    lr: float = 2e-4
    lambda_l1: float = 100.0
    log_every: int = 100
    net: dict = field(default_factory=dict)
    # evaluation
    endpoint: str = "mock:oracle"
    model: str = "mock"
    split: str | None = None
    concurrency: int = 1
    attempts: int = 3
    backoff: float = 0.5

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        return hashlib.sha256(_canonical(self.to_dict())).hexdigest()

    def validate(self) -> "PipelineConfig":
        types = {f.name: f.type for f in fields(self)}
        for name, value in self.to_dict().items():
            t = types[name]
            if "int" in t and "float" not in t and value is not None and (
                    isinstance(value, bool) or not isinstance(value, int)):
                raise ConfigError(name, f"expected an integer, got {value!r}")
            if t == "float" and (isinstance(value, bool) or not isinstance(value, (int, float))):
                raise ConfigError(name, f"expected a number, got {value!r}")
            if t == "bool" and not isinstance(value, bool):
                raise ConfigError(name, f"expected true/false, got {value!r}")
        checks = [
            ("seed", self.seed >= 0, "must be nonnegative"),
            ("mode", self.mode in MODES, f"must be one of {', '.join(MODES)}"),
            ("l_low", 0.0 <= self.l_low <= 1.0, "must lie in [0, 1]"),
            ("l_high", 0.0 <= self.l_high <= 1.0, "must lie in [0, 1]"),
            ("l_high", self.l_high > self.l_low, "must exceed l_low"),
            ("crop_size", self.crop_size >= 1, "must be positive"),
            ("gen_size", self.gen_size >= 1, "must be positive"),
            ("max_range", self.max_range > 0, "must be positive"),
            ("stride", self.stride in (3, 4, 5), "must be 3, 4 or 5"),
            ("scenes", self.scenes >= 0, "must be nonnegative"),
            ("night_fraction", 0.0 <= self.night_fraction <= 1.0, "must lie in [0, 1]"),
            ("night_ambient", 0.0 <= self.night_ambient <= 1.0, "must lie in [0, 1]"),
            ("noise_sigma", self.noise_sigma >= 0, "must be nonnegative"),
            ("val_every", self.val_every >= 0, "must be nonnegative"),
            ("steps", self.steps >= 0, "must be nonnegative"),
            ("batch_size", self.batch_size >= 1, "must be positive"),
            ("lr", self.lr > 0, "must be positive"),
            ("lambda_l1", self.lambda_l1 >= 0, "must be nonnegative"),
            ("log_every", self.log_every >= 1, "must be positive"),
            ("concurrency", self.concurrency >= 1, "must be positive"),
            ("attempts", self.attempts >= 1, "must be positive"),
            ("backoff", self.backoff >= 0, "must be nonnegative"),
            ("split", self.split in (None, "train", "val"), "must be train, val or null"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise ConfigError(name, msg)
        if not isinstance(self.endpoint, str) or not self.endpoint.startswith(
                ("mock:", "replay:", "http://", "https://")):
            raise ConfigError("endpoint", "must be mock:<policy>, replay:<transcript> or an http(s) URL")
        if self.endpoint.startswith("mock:") and self.endpoint[5:] not in ("oracle", "luminance"):
            raise ConfigError("endpoint", "mock policy must be oracle or luminance")
        try:
            nc = self.net_config()
        except TypeError as e:
            raise ConfigError("net", str(e)) from None
        if nc.image_size % (2 ** nc.gen_depth):
            raise ConfigError("gen_size", f"must be divisible by 2**gen_depth = {2 ** nc.gen_depth}")
        if nc.dtype not in ("float32", "float64"):
            raise ConfigError("net", "dtype must be float32 or float64")
        return self

    def net_config(self):
        from .neural.nets import NetConfig

        return NetConfig(**{**self.net, "image_size": self.gen_size})

    def lama(self):
        from .lama import FusionMode, LamaConfig

        mode = FusionMode.OFF if self.mode in ("camera", "off") else FusionMode(self.mode)
        return LamaConfig(self.l_low, self.l_high, mode, self.daytime_bypass)

    def frame_settings(self):
        from .pipeline import FrameSettings

        return FrameSettings(self.crop_size, self.gen_size, float(self.max_range))


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _sha256(path: Path) -> str:
    if path.is_dir():
        h = hashlib.sha256()
        for p in sorted(path.rglob("*")):
            if p.is_file() and p.name != RUN_MANIFEST:
                h.update(str(p.relative_to(path)).encode() + b"\0" + p.read_bytes())
        return h.hexdigest()
    return hashlib.sha256(path.read_bytes()).hexdigest()


RUN_MANIFEST = "run_manifest.json"
PATH_FIELDS = ("dataset", "weights", "output")


def load_config(path: str | None, overrides: dict) -> PipelineConfig:
    data = {}
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as e:
            raise ConfigError("config", f"cannot read {path}: {e.strerror}") from None
        except json.JSONDecodeError as e:
            raise ConfigError("config", f"{path} is not valid JSON: {e.msg}") from None
        if not isinstance(data, dict):
            raise ConfigError("config", "top level must be an object")
    known = {f.name for f in fields(PipelineConfig)}
    for k in data:
        if k not in known:
            raise ConfigError(k, "unknown config field")
    data.update({k: v for k, v in overrides.items() if v is not None})
    if "net" in data and not isinstance(data["net"], dict):
        raise ConfigError("net", "must be an object")
    return PipelineConfig(**data).validate()


# --- logging -------------------------------------------------------------------


class RunLog:
    """Progress events: JSON lines on stderr with ``--json-logs``, plain text otherwise."""

    def __init__(self, json_lines: bool, stream=None):
        self.json_lines = json_lines
        self.stream = stream or sys.stderr

    def emit(self, event: str, **fields_):
        if self.json_lines:
            self.stream.write(json.dumps({"event": event, **fields_}, sort_keys=True) + "\n")
        else:
            detail = " ".join(f"{k}={v}" for k, v in fields_.items())
            self.stream.write(f"{event} {detail}".rstrip() + "\n")
        self.stream.flush()


# --- run manifests -------------------------------------------------------------


def _versions() -> dict:
    from .densify import ENCODING_VERSION
    from .neural.resize import RESIZE_VERSION
    from .neural.weights import FORMAT_VERSION

    return {
        "depthvision": __version__,
        "numpy": np.__version__,
        "depth_encoding": ENCODING_VERSION,
        "resize": RESIZE_VERSION,
        "weights_format": FORMAT_VERSION,
    }


def write_run_manifest(command: str, cfg: PipelineConfig, output: Path, inputs: dict, extra=None) -> Path:
    """Record what produced ``output``; paths are stored relative to the manifest."""
    target = output / RUN_MANIFEST if output.is_dir() else output.with_name(output.name + ".run.json")
    base = target.parent

    def rel(p):
        return os.path.relpath(Path(p).resolve(), base.resolve())

    # path fields are made relative so relocated runs produce identical manifests
    config = cfg.to_dict()
    for k in PATH_FIELDS:
        if config[k] is not None:
            config[k] = rel(config[k])
    doc = {
        "command": command,
        "config": config,
        "config_hash": hashlib.sha256(_canonical(config)).hexdigest(),
        "seed": cfg.seed,
        "versions": _versions(),
        "inputs": {k: {"path": rel(p), "sha256": _sha256(Path(p))} for k, p in sorted(inputs.items())},
        "output": {"path": rel(output), "sha256": _sha256(output)},
    }
    if extra:
        doc["results"] = extra
    target.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return target


# --- helpers ---------------------------------------------------------------------


def _require(value, name: str) -> str:
    if value is None:
        raise ConfigError(name, "is required")
    return value


def _load_nets(cfg: PipelineConfig):
    from .neural.weights import load_weights

    path = _require(cfg.weights, "weights")
    loaded = load_weights(path)
    if loaded.nets.cfg.image_size != cfg.gen_size:
        raise ConfigError("gen_size", f"weights were trained at {loaded.nets.cfg.image_size}, config says {cfg.gen_size}")
    if loaded.max_range != cfg.max_range:
        raise ConfigError("max_range", f"weights were trained with {loaded.max_range}, config says {cfg.max_range}")
    return loaded.nets


# --- subcommands -----------------------------------------------------------------


def cmd_simulate(cfg: PipelineConfig, args, log: RunLog):
    from .simgen import write_dataset

    out = Path(_require(cfg.output, "output"))
    manifest = write_dataset(out, cfg.scenes, cfg.seed, night_fraction=cfg.night_fraction,
                             night_ambient=cfg.night_ambient, noise_sigma=cfg.noise_sigma,
                             val_every=cfg.val_every)
    log.emit("simulate", scenes=len(manifest["scenes"]), out=str(out))
    write_run_manifest("simulate", cfg, out, {})


def cmd_project(cfg: PipelineConfig, args, log: RunLog):
    from .core import save_depth
    from .ingest import read_calibration, read_cloud_bin_counted
    from .pipeline import sparse_depth

    cloud, skipped = read_cloud_bin_counted(args.cloud, cfg.stride)
    ext, intr = read_calibration(args.calib)
    dm = sparse_depth(cloud, ext, intr, cfg.crop_size)
    out = Path(_require(cfg.output, "output"))
    save_depth(out, dm)
    log.emit("project", points=len(cloud), skipped=skipped, valid=int(dm.valid.sum()))
    write_run_manifest("project", cfg, out, {"cloud": args.cloud, "calib": args.calib})


def cmd_densify(cfg: PipelineConfig, args, log: RunLog):
    from .core import load_depth, save_depth
    from .densify import densify_nearest

    dense = densify_nearest(load_depth(args.depth))
    out = Path(_require(cfg.output, "output"))
    save_depth(out, dense)
    log.emit("densify", shape=list(dense.depth.shape))
    write_run_manifest("densify", cfg, out, {"depth": args.depth})


def _frames(cfg: PipelineConfig, split: str):
    from .pipeline import dataset_frames, training_pairs

    frames = [f[1:] for f in dataset_frames(_require(cfg.dataset, "dataset"), split=split, lighting="day")]
    if not frames:
        return None
    return training_pairs(frames, cfg.frame_settings())


def cmd_train(cfg: PipelineConfig, args, log: RunLog):
    from .neural.nets import Nets
    from .neural.train import GanTrainer, LossWeights, l1_error, mean_logits, train
    from .neural.weights import save_weights

    pairs = _frames(cfg, "train")
    if pairs is None:
        raise ConfigError("dataset", "no day scenes in the train split")
    held = _frames(cfg, "val")
    nets = Nets(cfg.net_config(), seed=cfg.seed)
    trainer = GanTrainer(nets, LossWeights(lambda_l1=cfg.lambda_l1), cfg.lr)
    results = {"train_scenes": int(pairs[0].shape[0])}
    if held is not None:
        results["heldout_l1_initial"] = l1_error(nets, *held)
        log.emit("heldout", step=0, l1=results["heldout_l1_initial"])

    def progress(rec):
        if (rec.step + 1) % cfg.log_every == 0 or rec.step + 1 == cfg.steps:
            log.emit("train_step", step=rec.step + 1, d_loss=rec.d_loss, g_adv=rec.g_adv, g_l1=rec.g_l1)

    train(nets, *pairs, steps=cfg.steps, batch_size=cfg.batch_size, seed=cfg.seed, trainer=trainer,
          callback=progress)
    if held is not None:
        results["heldout_l1_final"] = l1_error(nets, *held)
        results["heldout_l1_unrefined"] = l1_error(nets, *held, refine_iterations=0)
        results["mean_logit_real"], results["mean_logit_fake"] = mean_logits(nets, *held)
        log.emit("heldout", step=cfg.steps, l1=results["heldout_l1_final"])
    out = Path(_require(cfg.output, "output"))
    save_weights(out, nets, trainer.opt_g.state, trainer.opt_d.state, cfg.max_range,
                 extra={"steps": cfg.steps, "seed": cfg.seed})
    write_run_manifest("train", cfg, out, {"dataset": cfg.dataset}, results)


def cmd_synth(cfg: PipelineConfig, args, log: RunLog):
    from .core import save_image
    from .core import load_depth
    from .pipeline import dense_to_input, synthesize_rgb

    nets = _load_nets(cfg)
    dense = load_depth(args.depth)
    if not dense.valid.all():
        raise ConfigError("depth", "synth expects a dense depth map; run densify first")
    img = synthesize_rgb(nets, dense_to_input(dense, cfg.frame_settings()), cfg.frame_settings())
    out = Path(_require(cfg.output, "output"))
    save_image(out, img)
    log.emit("synth", shape=list(img.data.shape))
    write_run_manifest("synth", cfg, out, {"depth": args.depth, "weights": cfg.weights})


def _camera_image(args, cfg: PipelineConfig):
    from .core import load_image
    from .geometry import crop_center
    from .ingest import read_calibration

    rgb = load_image(args.rgb)
    if args.calib:
        _, intr = read_calibration(args.calib)
        rgb = crop_center(rgb, intr, cfg.crop_size)
    return rgb


def cmd_fuse(cfg: PipelineConfig, args, log: RunLog):
    from .core import save_image
    from .core import load_image
    from .lama import fuse, needs_synthesis

    lama = cfg.lama()
    cam = _camera_image(args, cfg)
    gan = load_image(args.gan) if args.gan else None
    if gan is None and needs_synthesis(cam, lama):
        raise ConfigError("gan", f"fusion mode {lama.mode.value} needs a synthesized image")
    res = fuse(cam, gan, lama)
    out = Path(_require(cfg.output, "output"))
    save_image(out, res.fused)
    log.emit("fuse", mode=res.mode, alpha_mean=res.alpha_mean, bypassed=res.bypassed)
    inputs = {"rgb": args.rgb, **({"gan": args.gan} if args.gan else {}),
              **({"calib": args.calib} if args.calib else {})}
    write_run_manifest("fuse", cfg, out, inputs, {"alpha_mean": res.alpha_mean})


def cmd_pipeline(cfg: PipelineConfig, args, log: RunLog):
    from .core import save_image
    from .core import load_image
    from .ingest import read_calibration, read_cloud_bin
    from .lama import needs_synthesis
    from .geometry import crop_center
    from .pipeline import process_frame

    rgb = load_image(args.rgb)
    ext, intr = read_calibration(args.calib)
    cloud = read_cloud_bin(args.cloud, cfg.stride)
    lama = cfg.lama()
    nets = _load_nets(cfg) if needs_synthesis(crop_center(rgb, intr, cfg.crop_size), lama) else None
    res, gan = process_frame(rgb, cloud, ext, intr, nets, lama, cfg.frame_settings())
    out = Path(_require(cfg.output, "output"))
    save_image(out, res.fused)
    if args.gan_out and gan is not None:
        save_image(Path(args.gan_out), gan)
    log.emit("pipeline", mode=res.mode, alpha_mean=res.alpha_mean, synthesized=gan is not None)
    inputs = {"rgb": args.rgb, "calib": args.calib, "cloud": args.cloud,
              **({"weights": cfg.weights} if nets is not None else {})}
    write_run_manifest("pipeline", cfg, out, inputs, {"alpha_mean": res.alpha_mean})


def cmd_evaluate(cfg: PipelineConfig, args, log: RunLog):
    from .vlmqa import EvalConfig, evaluate

    manifest = _require(cfg.dataset, "dataset")
    if not Path(manifest).exists():
        raise FileNotFoundError(f"manifest not found: {manifest}")
    mode = "camera" if cfg.mode in ("camera", "off") else cfg.mode
    nets = _load_nets(cfg) if mode != "camera" else None
    ecfg = EvalConfig(mode=mode, model=cfg.model, lama=cfg.lama(), daytime_bypass=cfg.daytime_bypass,
                      split=cfg.split, concurrency=cfg.concurrency, attempts=cfg.attempts,
                      backoff=cfg.backoff)
    out = Path(_require(cfg.output, "output"))
    transcript = Path(args.transcript) if args.transcript else out.with_name(out.name + ".transcript.jsonl")
    report = evaluate(manifest, cfg.endpoint, ecfg, nets, cfg.frame_settings(), transcript)
    out.write_text(report.to_json())
    sys.stdout.write(report.format_table() + "\n")
    log.emit("evaluate", mode=mode, acc_all=report.cells["acc"]["all"], samples=len(report.records),
             skipped=len(report.skipped_scenes))
    inputs = {"manifest": manifest, **({"weights": cfg.weights} if nets is not None else {})}
    write_run_manifest("evaluate", cfg, out, inputs, {"cells": report.cells})
    if report.records and all(r.raw is None for r in report.records):
        raise EndpointFailure(f"no response from endpoint {cfg.endpoint} for any of {len(report.records)} samples")


COMMANDS = {
    "simulate": cmd_simulate,
    "project": cmd_project,
    "densify": cmd_densify,
    "train": cmd_train,
    "synth": cmd_synth,
    "fuse": cmd_fuse,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
}


# --- argument parsing ------------------------------------------------------------


def _bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its fields")
    common.add_argument("--json-logs", action="store_true", help="line-delimited JSON progress on stderr")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", dest="output", help="output path")

    fusion = argparse.ArgumentParser(add_help=False)
    fusion.add_argument("--mode", "--fusion", dest="mode", choices=MODES)
    fusion.add_argument("--l-low", type=float)
    fusion.add_argument("--l-high", type=float)
    fusion.add_argument("--daytime-bypass", type=_bool, metavar="BOOL")

    geo = argparse.ArgumentParser(add_help=False)
    geo.add_argument("--crop-size", type=int)
    geo.add_argument("--gen-size", type=int)
    geo.add_argument("--max-range", type=float)

    p = argparse.ArgumentParser(prog="depthvision", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="write a procedural dataset")
    s.add_argument("--scenes", type=int)
    s.add_argument("--night-fraction", type=float)
    s.add_argument("--night-ambient", type=float)
    s.add_argument("--noise-sigma", type=float)
    s.add_argument("--val-every", type=int)

    s = sub.add_parser("project", parents=[common, geo], help="point cloud to cropped sparse depth (DVIM)")
    s.add_argument("--cloud", required=True)
    s.add_argument("--calib", required=True)
    s.add_argument("--stride", type=int)

    s = sub.add_parser("densify", parents=[common], help="nearest-neighbour fill of a sparse depth map")
    s.add_argument("--depth", required=True)

    s = sub.add_parser("train", parents=[common, geo], help="train generator, refiner and discriminator")
    s.add_argument("--dataset")
    s.add_argument("--steps", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--lambda-l1", type=float)
    s.add_argument("--log-every", type=int)

    s = sub.add_parser("synth", parents=[common, geo], help="dense depth to synthesized RGB")
    s.add_argument("--depth", required=True)
    s.add_argument("--weights")

    s = sub.add_parser("fuse", parents=[common, fusion, geo], help="luminance-aware fusion of two images")
    s.add_argument("--rgb", required=True)
    s.add_argument("--gan")
    s.add_argument("--calib", help="crop the camera image around the principal point first")

    s = sub.add_parser("pipeline", parents=[common, fusion, geo], help="all stages on one frame")
    s.add_argument("--rgb", required=True)
    s.add_argument("--cloud", required=True)
    s.add_argument("--calib", required=True)
    s.add_argument("--weights")
    s.add_argument("--stride", type=int)
    s.add_argument("--gan-out", help="also write the synthesized image")

    s = sub.add_parser("evaluate", parents=[common, fusion, geo], help="score VQA accuracy through a VLM endpoint")
    s.add_argument("--manifest", dest="dataset")
    s.add_argument("--endpoint")
    s.add_argument("--model")
    s.add_argument("--weights")
    s.add_argument("--split", choices=("train", "val"))
    s.add_argument("--concurrency", type=int)
    s.add_argument("--attempts", type=int)
    s.add_argument("--backoff", type=float)
    s.add_argument("--transcript", help="JSONL transcript path (default: <out>.transcript.jsonl)")
    return p


_NON_CONFIG = {"command", "config", "json_logs", "cloud", "calib", "depth", "rgb", "gan", "transcript", "gan_out"}


def _error(kind: str, code: int, message: str, field_name: str | None = None) -> int:
    doc = {"error": kind, "exit_code": code, "message": message}
    if field_name:
        doc["field"] = field_name
    sys.stderr.write(json.dumps(doc, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    from .core import ValidationError
    from .ingest import CloudFormatError
    from .neural.train import TrainingDiverged
    from .neural.weights import WeightFileError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    log = RunLog(args.json_logs)
    overrides = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
    try:
        cfg = load_config(args.config, overrides)
        COMMANDS[args.command](cfg, args, log)
    except ConfigError as e:
        return _error("config", EXIT_CONFIG, str(e), e.field)
    except TrainingDiverged as e:
        return _error("divergence", EXIT_DIVERGED, str(e))
    except EndpointFailure as e:
        return _error("endpoint", EXIT_ENDPOINT, str(e))
    except (OSError, CloudFormatError, WeightFileError, ValidationError, ValueError) as e:
        return _error("io", EXIT_IO, str(e).replace("\n", " "))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
