"""Command-line surface: phantom-gen, train, infer, eval, gradcheck,
augment-preview and inspect.

Exit codes: 0 success, 1 runtime or check failure, 2 usage or configuration
error.  Options may come from a flat key=value configuration file
(``--config``) plus repeatable ``--set key=value`` overrides; an explicit
flag beats both.  Unknown keys are rejected by name.  All randomness flows
from ``--seed``.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image

from . import checkpoint as ckpt
from . import checksuite
from .augment import AugmentConfig, augment_sample
from .data import (CLASS_NAMES, GROUPS, QUANTIFIED_CLASSES, DataError,
                   ManifestEntry, load_image, load_manifest_samples,
                   render_labels, save_sample, split_dataset, write_manifest)
from .metrics import evaluate_dataset
from .model import DilatedResidualUNet, ModelConfig, predict_classes
from .phantom import PhantomConfig, generate_phantom
from .train import TrainConfig, TrainingDiverged, train


class UsageError(Exception):
    """Bad arguments or configuration; maps to exit code 2."""


# every key a configuration file or --set may define
CONFIG_KEYS: dict[str, type] = {
    # trainer
    "lr0": float, "momentum": float, "plateau_patience": int,
    "lr_halving_factor": float, "epochs": int, "batch_size": int,
    "seed": int, "improvement_delta": float, "lr_floor": float,
    "single_thread": bool,
    # augmentation
    "rotation_max_deg": float, "hflip_prob": float, "noise_sigma": float,
    "speckle_sigma": float, "elastic_alpha": float, "elastic_sigma": float,
    "gamma_lo": float, "gamma_hi": float, "occlusion_count": int,
    "occlusion_width": int, "occlusion_height": int,
    "occlusion_factor_lo": float, "occlusion_factor_hi": float,
    "enable_hflip": bool, "enable_rotate": bool, "enable_elastic": bool,
    "enable_intensity": bool, "enable_noise": bool, "enable_occlude": bool,
    # phantoms
    "height": int, "width": int,
}

_AUGMENT_DIRECT = ("rotation_max_deg", "hflip_prob", "noise_sigma",
                   "speckle_sigma", "elastic_alpha", "elastic_sigma",
                   "occlusion_count", "enable_hflip", "enable_rotate",
                   "enable_elastic", "enable_intensity", "enable_noise",
                   "enable_occlude")
_TRAIN_DIRECT = ("lr0", "momentum", "plateau_patience", "lr_halving_factor",
                 "epochs", "batch_size", "seed", "improvement_delta",
                 "lr_floor", "single_thread")


def _coerce(key: str, raw: str):
    if key not in CONFIG_KEYS:
        raise UsageError(f"unknown configuration key {key!r}")
    typ = CONFIG_KEYS[key]
    raw = raw.strip()
    if typ is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"key {key!r} expects a boolean, got {raw!r}")
    try:
        return typ(raw)
    except ValueError as exc:
        raise UsageError(f"key {key!r} expects {typ.__name__}, got {raw!r}") \
            from exc


def load_key_values(config_path, overrides) -> dict:
    """Parse the config file, then apply --set overrides (later wins)."""
    values: dict = {}
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        for ln, line in enumerate(path.read_text().splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise UsageError(f"{path}:{ln}: expected key=value")
            key, raw = stripped.split("=", 1)
            values[key.strip()] = _coerce(key.strip(), raw)
    for item in overrides or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        values[key.strip()] = _coerce(key.strip(), raw)
    return values


def build_augment_config(kv: dict) -> AugmentConfig:
    kwargs = {k: kv[k] for k in _AUGMENT_DIRECT if k in kv}
    if "gamma_lo" in kv or "gamma_hi" in kv:
        kwargs["gamma_range"] = (kv.get("gamma_lo", 0.5),
                                 kv.get("gamma_hi", 2.0))
    if "occlusion_width" in kv or "occlusion_height" in kv:
        kwargs["occlusion_size"] = (kv.get("occlusion_width", 60),
                                    kv.get("occlusion_height", 20))
    if "occlusion_factor_lo" in kv or "occlusion_factor_hi" in kv:
        kwargs["occlusion_factor_range"] = (kv.get("occlusion_factor_lo", 0.2),
                                            kv.get("occlusion_factor_hi", 0.8))
    try:
        return AugmentConfig(**kwargs)
    except ValueError as exc:
        raise UsageError(f"bad augmentation config: {exc}") from exc


def build_train_config(kv: dict, **explicit) -> TrainConfig:
    kwargs = {k: kv[k] for k in _TRAIN_DIRECT if k in kv}
    kwargs["augment"] = build_augment_config(kv)
    for key, value in explicit.items():
        if value is not None:
            kwargs[key] = value
    try:
        return TrainConfig(**kwargs)
    except ValueError as exc:
        raise UsageError(f"bad training config: {exc}") from exc


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(p) for p in text.lower().split("x"))
    except ValueError as exc:
        raise UsageError(f"--size expects HxW, got {text!r}") from exc
    return h, w


def _parse_mix(text: str) -> tuple[int, int]:
    try:
        a, b = (int(p) for p in text.split(":"))
    except ValueError as exc:
        raise UsageError(f"--group-mix expects A:B, got {text!r}") from exc
    if a < 0 or b < 0 or a + b == 0:
        raise UsageError(f"--group-mix needs non-negative counts, got {text!r}")
    return a, b


def cmd_phantom_gen(args) -> int:
    if args.count <= 0:
        raise UsageError(f"--count must be positive, got {args.count}")
    kv = load_key_values(args.config, args.set)
    h, w = _parse_size(args.size)
    if "height" in kv or "width" in kv:
        h, w = kv.get("height", h), kv.get("width", w)
    try:
        config = PhantomConfig.for_size(h, w) if (h, w) != (248, 384) \
            else PhantomConfig()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    mix_h, mix_g = _parse_mix(args.group_mix)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(args.count):
        # interleave groups according to the requested mix
        in_healthy = (i % (mix_h + mix_g)) < mix_h
        group = GROUPS[0] if in_healthy else GROUPS[1]
        sample_seed = args.seed * 1_000_003 + i
        sample = generate_phantom(config, sample_seed, group)
        image_name = f"{sample.id}.png"
        label_name = f"{sample.id}_labels.png"
        save_sample(sample, out_dir / image_name, out_dir / label_name)
        entries.append(ManifestEntry(sample.id, group, image_name,
                                     label_name, sample_seed))
    write_manifest(out_dir / "manifest.txt", entries)
    print(f"wrote {len(entries)} phantoms and manifest.txt to {out_dir}")
    return 0


def _manifest_samples_or_usage(manifest_path):
    try:
        return load_manifest_samples(manifest_path)
    except DataError as exc:
        raise UsageError(str(exc)) from exc


def cmd_train(args) -> int:
    kv = load_key_values(args.config, args.set)
    config = build_train_config(
        kv, seed=args.seed, epochs=args.epochs, lr0=args.lr0,
        single_thread=True if args.single_thread else None,
        checkpoint_dir=args.out_dir)
    samples = _manifest_samples_or_usage(args.manifest)
    if args.train_count + args.val_count > len(samples):
        raise UsageError(
            f"manifest has {len(samples)} samples, need "
            f"{args.train_count + args.val_count}")
    try:
        train_set, val_set, _ = split_dataset(
            samples, args.train_count, args.val_count, 0, seed=config.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    model = DilatedResidualUNet(ModelConfig(), seed=config.seed)
    result = train(model, train_set, val_set, config)
    print(f"best val loss {result.best_val:.6f} at epoch {result.best_epoch}")
    print(f"checkpoint: {result.best_checkpoint}")
    print(f"history:    {result.history_path}")
    return 0


def cmd_infer(args) -> int:
    model = ckpt.load_checkpoint(args.checkpoint)
    try:
        image = load_image(args.image)
    except DataError as exc:
        raise UsageError(str(exc)) from exc
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    start = time.perf_counter()
    probs = model.forward(image[None, None], mode="infer")
    labels = predict_classes(probs)[0]
    elapsed_ms = (time.perf_counter() - start) * 1000.0

    stem = Path(args.image).stem
    label_path = out_dir / f"{stem}_labels.png"
    stain_path = out_dir / f"{stem}_stain.png"
    Image.fromarray(labels, mode="L").save(label_path)
    render_labels(labels).save(stain_path)
    print(f"inference_ms={elapsed_ms:.2f}")
    print(f"labels: {label_path}")
    print(f"stain:  {stain_path}")
    return 0


def cmd_eval(args) -> int:
    model = ckpt.load_checkpoint(args.checkpoint)
    samples = _manifest_samples_or_usage(args.manifest)
    report = evaluate_dataset(model, samples, QUANTIFIED_CLASSES, CLASS_NAMES)
    table = report.to_table()
    print(table)
    print("sclera and lamina cribrosa are assessed qualitatively only; "
          "noise and vitreous are exempt")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.txt").write_text(table + "\n")
    report.save_json(out_dir / "report.json")
    print(f"report: {out_dir / 'report.txt'} and report.json")
    return 0


def cmd_gradcheck(args) -> int:
    failures = []

    def progress(result):
        status = "ok" if result.passed else "FAIL"
        print(f"{result.name:<20} worst rel err {result.worst_rel_err:.3e} "
              f"[{status}]")
        if not result.passed:
            failures.append(result.name)

    checksuite.run_suite(seeds=args.seeds, h=args.h, tol=args.tol,
                         progress=progress)
    if failures:
        print(f"FAILED: {', '.join(failures)}", file=sys.stderr)
        return 1
    print("all gradient checks passed")
    return 0


def cmd_augment_preview(args) -> int:
    samples = _manifest_samples_or_usage(args.manifest)
    if not (0 <= args.index < len(samples)):
        raise UsageError(f"--index {args.index} outside 0..{len(samples) - 1}")
    kv = load_key_values(args.config, args.set)
    config = build_augment_config(kv)
    sample = samples[args.index]
    augmented = augment_sample(sample, config,
                               (args.seed, sample.id, args.epoch))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_sample(sample, out_dir / "before.png", out_dir / "before_labels.png")
    render_labels(sample.labels).save(out_dir / "before_stain.png")
    save_sample(augmented, out_dir / "after.png",
                out_dir / "after_labels.png")
    render_labels(augmented.labels).save(out_dir / "after_stain.png")
    print(f"wrote before/after previews for {sample.id} to {out_dir}")
    return 0


def cmd_inspect(args) -> int:
    if args.checkpoint:
        model = ckpt.load_checkpoint(args.checkpoint)
    else:
        model = DilatedResidualUNet(ModelConfig(), seed=args.seed)
    print(f"{'layer':<16}{'kind':<20}{'dilation':>9}{'params':>9}")
    for name, kind, dilation, count in model.layer_table():
        dil = str(dilation) if dilation else "-"
        print(f"{name:<16}{kind:<20}{dil:>9}{count:>9}")
    print(f"{'total trainable parameters':<45}{model.param_count():>9}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="octseg",
        description="Dilated-residual U-Net segmentation engine for "
                    "layered retinal scans")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0,
                       help="master seed; every random draw derives from it")
        p.add_argument("--config", help="flat key=value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one configuration key (repeatable)")

    p = sub.add_parser("phantom-gen", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--size", default="248x384", help="image size as HxW")
    p.add_argument("--group-mix", default="1:1",
                   help="healthy:glaucoma ratio, e.g. 1:1")
    p.set_defaults(func=cmd_phantom_gen)

    p = sub.add_parser("train", help="train on a phantom manifest")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--train-count", type=int, default=40)
    p.add_argument("--val-count", type=int, default=10)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr0", type=float, default=None)
    p.add_argument("--single-thread", action="store_true",
                   help="force single-threaded BLAS for bitwise determinism")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="segment one image with a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of every op")
    common(p)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--h", type=float, default=1e-6)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("augment-preview",
                       help="write before/after augmentation images")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--epoch", type=int, default=0)
    p.set_defaults(func=cmd_augment_preview)

    p = sub.add_parser("inspect",
                       help="print the layer table and parameter count")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ckpt.CheckpointError, TrainingDiverged,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
