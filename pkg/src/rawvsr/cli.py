"""Command line entry point: ``rawvsr {synth,align,train,eval,infer,ablate}``.

Each subcommand reads an optional YAML config, applies flag overrides (flags
win), writes the resolved config into its output directory and then runs.
Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
import torch
import yaml

from . import rawcore, synthpipe
from .errors import DataError, EstimationError
from .model.checkpoint import CheckpointError

logger = logging.getLogger("rawvsr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
DATA_ROOT_ENV = "RAWVSR_DATA_ROOT"
RESOLVED_NAME = "resolved_config.yaml"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# --- config handling -------------------------------------------------------

def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file {p} not found")
    try:
        data = yaml.safe_load(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise UsageError(f"config file {p} does not parse: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise UsageError(f"config file {p} must hold a mapping")
    return data


def apply_sets(cfg: dict, assignments) -> dict:
    """Apply ``section.key=value`` overrides; values are parsed as YAML scalars."""
    for item in assignments or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise UsageError(f"--set {key}: {part} is not a section")
        node[parts[-1]] = yaml.safe_load(raw)
    return cfg


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name) or {}
    if not isinstance(sec, dict):
        raise UsageError(f"config section {name!r} must be a mapping")
    return sec


def _build(cls, values: dict, name: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise UsageError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid section {name!r}: {exc}") from exc


def _to_plain(obj):
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def echo_config(out_dir, command: str, resolved: dict) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / RESOLVED_NAME
    path.write_text(yaml.safe_dump(_to_plain({"command": command, **resolved}), sort_keys=True),
                    encoding="utf-8")
    return path


def _data_root(args) -> Path:
    root = args.data or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise UsageError(f"no dataset given; pass --data or set {DATA_ROOT_ENV}")
    return Path(root)


def _check_out(out: Path, force: bool):
    if out.exists() and any(out.iterdir()) and not force:
        raise DataError(f"output directory {out} is not empty (use --force)")


def _model_train_configs(cfg: dict, args):
    from .model import ModelConfig
    from .trainer import TrainConfig

    model_sec = dict(_section(cfg, "model"))
    train_sec = dict(_section(cfg, "train"))
    if args.scale is not None:
        model_sec["scale"] = args.scale
    if args.seed is not None:
        train_sec["seed"] = args.seed
    if args.deterministic:
        train_sec["deterministic"] = True
    model_cfg = _build(ModelConfig, model_sec, "model")
    train_cfg = _build(TrainConfig, train_sec, "train")
    try:
        train_cfg.check_model(model_cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return model_cfg, train_cfg


# --- subcommands -----------------------------------------------------------

def cmd_synth(args, cfg):
    dcfg_sec = dict(_section(cfg, "degradation"))
    source = dict(_section(cfg, "source"))
    scales = cfg.get("scales")
    if args.scale is not None:
        dcfg_sec["scale"] = args.scale
        scales = [args.scale]
    if args.seed is not None:
        dcfg_sec["seed"] = args.seed
        source["seed"] = args.seed
    dcfg = _build(synthpipe.DegradationConfig, dcfg_sec, "degradation")
    split = _section(cfg, "split") or {"test_fraction": 0.25}
    src = args.src or cfg.get("src")
    source_defaults = {"n_clips": 4, "n_frames": 7, "size": [128, 128], "seed": dcfg.seed, "max_speed": 2.0}
    unknown = set(source) - set(source_defaults)
    if unknown:
        raise UsageError(f"unknown keys in section 'source': {sorted(unknown)}")
    source = {**source_defaults, **source}
    out = Path(args.out)
    _check_out(out, args.force)
    resolved = {"degradation": asdict(dcfg), "scales": scales or [dcfg.scale], "split": split,
                "src": src, "source": None if src else source}
    clips = None
    if not src:
        clips = synthpipe.synthetic_source_clips(int(source["n_clips"]), int(source["n_frames"]),
                                                 tuple(source["size"]), int(source["seed"]),
                                                 float(source["max_speed"]))
    # the dataset writer wants an empty directory, so the echo goes in afterwards
    synthpipe.make_dataset(src, out, dcfg, split, scales, force=args.force, clips=clips)
    echo_config(out, "synth", resolved)
    print(f"wrote dataset to {out}")


def _read_sequence(folder: Path, raw: bool):
    files = sorted(folder.glob("*.png"))
    if not files:
        raise DataError(f"no PNG frames in {folder}")
    try:
        if raw:
            return [rawcore.load_raw_png(f) for f in files], files
        return [rawcore.load_srgb_png(f).data for f in files], files
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from exc


def cmd_align(args, cfg):
    from .alignkit import AlignConfig, align_pair

    acfg_sec = dict(_section(cfg, "align"))
    if args.seed is not None:
        acfg_sec["seed"] = args.seed
    acfg = _build(AlignConfig, acfg_sec, "align")
    scale = args.scale or int(cfg.get("scale", 2))
    src = Path(args.inp)
    clip_id = args.clip_id or src.name
    out = Path(args.out)
    _check_out(out, args.force)
    echo_config(out, "align", {"align": asdict(acfg), "scale": scale, "in": str(src), "clip_id": clip_id})

    lr_rgb, names = _read_sequence(src / "lr_rgb", raw=False)
    hr_rgb, _ = _read_sequence(src / "hr_rgb", raw=False)
    lr_raw = _read_sequence(src / "lr_raw", raw=True)[0] if (src / "lr_raw").is_dir() else [None] * len(lr_rgb)
    if not len(lr_rgb) == len(hr_rgb) == len(lr_raw):
        raise DataError("lr_rgb, hr_rgb and lr_raw sequences differ in length")
    results = [align_pair(lr, hr, raw, None, scale, acfg) for lr, hr, raw in zip(lr_rgb, hr_rgb, lr_raw)]
    h = min(r.lr_rgb.shape[1] for r in results)
    w = min(r.lr_rgb.shape[2] for r in results)
    base = out / f"{scale}x" / clip_id
    for sub in ("lr_rgb", "hr_rgb", "lr_raw"):
        (base / sub).mkdir(parents=True, exist_ok=True)
    for t, r in enumerate(results):
        rawcore.save_srgb_png(base / "lr_rgb" / f"{t:04d}.png", r.lr_rgb[:, :h, :w])
        rawcore.save_srgb_png(base / "hr_rgb" / f"{t:04d}.png", r.hr_rgb[:, :h * scale, :w * scale])
        if r.lr_raw is not None:
            rawcore.save_raw_png(base / "lr_raw" / f"{t:04d}.png", rawcore.crop_phase_safe(r.lr_raw, 0, 0, w, h))
    manifest = {"format": synthpipe.DATASET_FORMAT, "seed": acfg.seed, "scales": [scale],
                "clips": [{"id": clip_id, "scale": scale, "split": "train", "n_frames": len(results),
                           "lr_size": [h, w], "hr_size": [h * scale, w * scale]}]}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    report = {"clip": clip_id, "frames": [{"frame": f.name, **r.report} for f, r in zip(names, results)],
              "crop_lr_size": [h, w]}
    (out / "alignment_report.json").write_text(json.dumps(report, indent=2), encoding="utf-8")
    print(f"aligned {len(results)} frames; median residual "
          f"{np.median([r.residual_median_px for r in results]):.3f} px")


def cmd_train(args, cfg):
    from .trainer import load_dataset, train

    model_cfg, train_cfg = _model_train_configs(cfg, args)
    root = _data_root(args)
    out = Path(args.out)
    if not args.resume:
        _check_out(out, args.force)
    clips = load_dataset(root, model_cfg.scale, "train")
    echo_config(out, "train", {"data": str(root), "model": model_cfg.to_dict(), "train": train_cfg.to_dict(),
                               "resume": args.resume})
    result = train(model_cfg, train_cfg, clips, out, resume=args.resume)
    print(f"trained {result.final_step} steps; checkpoint {result.checkpoint}")


def _eval_correction(args, cfg):
    from .evalkit import get_variant

    if args.variant:
        try:
            return get_variant(args.variant).eval_correction
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    return _section(cfg, "eval").get("correction", "channel")


def cmd_eval(args, cfg):
    from .evalkit import BicubicBaseline, count_params_flops, evaluate
    from .model import model_from_checkpoint

    root = _data_root(args)
    split = args.split or _section(cfg, "eval").get("split", "test")
    correction = _eval_correction(args, cfg)
    out = Path(args.out)
    if args.bicubic:
        if args.scale is None:
            raise UsageError("--bicubic needs --scale")
        variant = args.variant or "bicubic"
        echo_config(out, "eval", {"data": str(root), "split": split, "correction": correction,
                                  "variant": variant, "predictor": "bicubic", "scale": args.scale})
        report = evaluate(BicubicBaseline(args.scale), root, variant, correction, split, args.scale,
                          out, seed=args.seed)
    else:
        if not args.ckpt:
            raise UsageError("eval needs --ckpt or --bicubic")
        model, payload = model_from_checkpoint(args.ckpt)
        if args.scale is not None and args.scale != model.cfg.scale:
            raise DataError(f"checkpoint scale {model.cfg.scale} does not match --scale {args.scale}")
        variant = args.variant or "full"
        seed = args.seed if args.seed is not None else payload.get("train_config", {}).get("seed")
        echo_config(out, "eval", {"data": str(root), "split": split, "correction": correction, "variant": variant,
                                  "ckpt": str(args.ckpt), "model": model.cfg.to_dict(), "seed": seed})
        clips = synthpipe.load_split(root, model.cfg.scale, split)
        params, flops = count_params_flops(model.cfg, input_size=tuple(clips[0].lr_raw.shape[-2:]))
        report = evaluate(model, clips, variant, correction, split, model.cfg.scale, out, seed=seed,
                          params=params, flops=flops)
    print(f"{report.variant}: PSNR {report.psnr_db:.3f} dB, SSIM {report.ssim:.4f} over {len(report.rows)} clips")


def cmd_infer(args, cfg):
    from .model import model_from_checkpoint

    if not args.ckpt:
        raise UsageError("infer needs --ckpt")
    src = Path(args.inp)
    folder = src / "lr_raw" if (src / "lr_raw").is_dir() else src
    frames, files = _read_sequence(folder, raw=True)
    model, _ = model_from_checkpoint(args.ckpt)
    model.eval()
    out = Path(args.out)
    echo_config(out, "infer", {"in": str(src), "ckpt": str(args.ckpt), "model": model.cfg.to_dict()})
    r = model.cfg.radius
    if len(frames) < 2 * r + 1:
        raise DataError(f"{folder} has {len(frames)} frames; the model needs {2 * r + 1}")
    norm = np.stack([rawcore.normalize_raw(f).data for f in frames]).astype(np.float32)
    phase = frames[0].phase
    with torch.no_grad():
        for c in range(r, len(frames) - r):
            x = torch.from_numpy(norm[c - r:c + r + 1])[None]
            sr = model(x, phase)[0].clamp(0, 1).numpy()
            rawcore.save_srgb_png(out / files[c].name, sr)
    print(f"wrote {len(frames) - 2 * r} frames to {out}")


def cmd_ablate(args, cfg):
    from .evalkit import VARIANTS, get_variant, run_ablation

    model_cfg, train_cfg = _model_train_configs(cfg, args)
    ids = args.variant_list or _section(cfg, "ablation").get("variants") or list(VARIANTS)
    try:
        variants = [get_variant(v) for v in ids]
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    root = _data_root(args)
    out = Path(args.out)
    _check_out(out, args.force)
    echo_config(out, "ablate", {"data": str(root), "variants": [v.id for v in variants],
                                "model": model_cfg.to_dict(), "train": train_cfg.to_dict()})
    table = run_ablation(variants, root, train_cfg, model_cfg, out)
    for row in table.rows:
        print(f"{row['variant']:>18s}  PSNR {row['psnr_db']:.3f} dB  params {row['params']}")


COMMANDS = {"synth": cmd_synth, "align": cmd_align, "train": cmd_train, "eval": cmd_eval,
            "infer": cmd_infer, "ablate": cmd_ablate}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rawvsr", description="Raw video super-resolution pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_required=True):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--deterministic", action="store_true")
        p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config value")
        p.add_argument("-v", "--verbose", action="count", default=0)
        return p

    p = common(sub.add_parser("synth", help="build a synthetic dataset"))
    p.add_argument("--src", help="directory of HR PNG sequences; synthetic clips when omitted")
    p.add_argument("--scale", type=int, choices=(2, 3, 4))

    p = common(sub.add_parser("align", help="align an LR/HR capture into the dataset layout"))
    p.add_argument("--in", dest="inp", required=True, help="folder with lr_rgb/, hr_rgb/ and lr_raw/")
    p.add_argument("--clip-id")
    p.add_argument("--scale", type=int, choices=(2, 3, 4))

    for name, helptext in (("train", "train a model"), ("ablate", "run the ablation table")):
        p = common(sub.add_parser(name, help=helptext))
        p.add_argument("--data", help=f"dataset root (default ${DATA_ROOT_ENV})")
        p.add_argument("--scale", type=int, choices=(2, 3, 4))
        if name == "train":
            p.add_argument("--resume", help="checkpoint to continue from")
        else:
            p.add_argument("--variant", dest="variant_list", action="append", help="variant id (repeatable)")

    p = common(sub.add_parser("eval", help="evaluate a checkpoint on a split"))
    p.add_argument("--data", help=f"dataset root (default ${DATA_ROOT_ENV})")
    p.add_argument("--ckpt")
    p.add_argument("--bicubic", action="store_true", help="score the bicubic baseline instead")
    p.add_argument("--split")
    p.add_argument("--scale", type=int, choices=(2, 3, 4))
    p.add_argument("--variant", help="variant id; selects the evaluation color correction")

    p = common(sub.add_parser("infer", help="super-resolve a raw clip directory"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="inp", required=True, help="folder of raw PNGs (or one holding lr_raw/)")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(asctime)s %(name)s %(levelname)s %(message)s")
        cfg = apply_sets(load_config(args.config), args.set)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"rawvsr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # --help and friends
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except (DataError, EstimationError, rawcore.RawFormatError, CheckpointError, FileNotFoundError) as exc:
        print(f"rawvsr: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        logger.debug("runtime failure", exc_info=True)
        print(f"rawvsr: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
