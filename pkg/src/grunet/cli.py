"""Command-line entry point: ``grunet {train,eval,predict,ablate,heatmaps,gen-synthetic}``.

Exit codes: 0 success, 1 runtime failure, 2 configuration or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .backbone import VARIANTS, ConfigError, MissingTextError
from .checkpoint import CheckpointError, load_checkpoint
from .config import OUT_ENV, load_run_config
from .data import (DatasetError, has_predefined_split, load_dataset, load_image, load_predefined,
                   make_synthetic, split, write_dataset, write_split_manifest)
from .losses import reports_to_csv
from .text import TextConfigError, build_text
from .training import (PUBLISHED_ABLATION, ablate, evaluate, predict,
                       write_ablation_csv)
from .training import train as run_training

log = logging.getLogger("grunet")

USER_ERRORS = (ConfigError, DatasetError, TextConfigError, CheckpointError, MissingTextError)


def _out_dir(cfg, explicit=None) -> Path:
    out = Path(explicit or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_samples(cfg):
    if cfg.synthetic_n:
        return make_synthetic(cfg.synthetic_n, cfg.synthetic_size, cfg.synthetic_seed)
    return load_dataset(cfg.data_dir)


def _prepare(cfg, needs_text):
    """Load data, split it, and encode the labels when the variant needs text."""
    cfg.validate()
    spec = cfg.split_spec()
    if cfg.predefined_split:
        if not cfg.data_dir or not has_predefined_split(cfg.data_dir):
            raise ConfigError("predefined_split needs data_dir with train/ and test/ folders")
        parts = load_predefined(cfg.data_dir, seed=cfg.seed)
        protocol = "predefined train/test folders, validation carved from train"
    else:
        parts = split(_load_samples(cfg), spec)
        protocol = f"seeded split {cfg.train_frac}/{cfg.val_frac}/{cfg.test_frac}"
    text, encoder_id = None, None
    if needs_text:
        text, encoder_id = build_text(cfg.labels_path or None, cfg.embeddings_path or None, cfg.stub_dim)
    h, w = parts[0][0].image.shape[:2]
    mcfg = cfg.model_config(h, w, text.shape[1] if text is not None else 64)
    for s in parts[0] + parts[1] + parts[2]:
        if s.image.shape[:2] != (mcfg.input_height, mcfg.input_width):
            raise ConfigError(
                f"sample {s.id} is {s.image.shape[0]}x{s.image.shape[1]}, model expects "
                f"{mcfg.input_height}x{mcfg.input_width}"
            )
    return parts, protocol, text, encoder_id, mcfg


def cmd_train(args, cfg):
    (train_s, val_s, test_s), protocol, text, encoder_id, mcfg = _prepare(cfg, cfg.variant == "full")
    out = _out_dir(cfg)
    (out / "effective_config.toml").write_text(cfg.to_toml(), encoding="utf-8")
    write_split_manifest(out / "split.json", train_s, val_s, test_s, protocol,
                         None if cfg.predefined_split else cfg.split_spec())
    record = run_training(mcfg, cfg.train_config(str(out / "checkpoints")), train_s, val_s, text, encoder_id)
    (out / "record.jsonl").write_text(record.to_jsonl(), encoding="utf-8")
    reports = {}
    if val_s:
        reports["val"] = evaluate(record.model, val_s, text).mean
    if test_s:
        reports["test"] = evaluate(record.model, test_s, text).mean
    (out / "metrics.csv").write_text(reports_to_csv(reports), encoding="utf-8")
    print(f"trained {mcfg.variant} for {len(record.epochs)} epochs; outputs in {out}")
    return 0


def cmd_eval(args, cfg):
    model, text, manifest = load_checkpoint(args.checkpoint)
    samples = load_dataset(args.data_dir)
    if args.split:
        if not args.split_manifest:
            raise ConfigError("--split needs --split-manifest")
        ids = set(json.loads(Path(args.split_manifest).read_text())[args.split])
        samples = [s for s in samples if s.id in ids]
        if not samples:
            raise DatasetError(f"no samples of split {args.split!r} found in {args.data_dir}")
    ev = evaluate(model, samples, text)
    out = _out_dir(cfg, args.out)
    label = args.split or "all"
    doc = {"checkpoint": str(args.checkpoint), "split": label, "n_samples": len(samples),
           "protocol": "threshold 0.5; per_sample_mean is the headline, pooled sums confusion counts",
           **ev.to_dict()}
    (out / "eval.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "eval.csv").write_text(
        reports_to_csv({f"{label}/per_sample_mean": ev.mean, f"{label}/pooled": ev.pooled}), encoding="utf-8")
    print(json.dumps(ev.to_dict()["per_sample_mean"], sort_keys=True))
    return 0


def _load_input_image(path, model):
    image = load_image(path)
    cfg = model.cfg
    step = 2 ** cfg.depth
    h, w = image.shape[:2]
    if h % step or w % step:
        raise ConfigError(f"image {h}x{w} is not divisible by 2**depth = {step}")
    if (h, w) != (cfg.input_height, cfg.input_width):
        raise ConfigError(f"image {h}x{w} does not match the checkpoint input {cfg.input_height}x{cfg.input_width}")
    return image


def cmd_predict(args, cfg):
    if not Path(args.image).is_file():
        raise ConfigError(f"image not found: {args.image}")
    model, text, _ = load_checkpoint(args.checkpoint)
    image = _load_input_image(args.image, model)
    prob = predict(model, image.transpose(2, 0, 1)[None], text)[0, 0]
    out = _out_dir(cfg, args.out)
    stem = Path(args.image).stem
    Image.fromarray(np.round(prob * 65535).astype(np.uint16)).save(out / f"{stem}_prob.png")
    Image.fromarray(np.where(prob > 0.5, 255, 0).astype(np.uint8)).save(out / f"{stem}_mask.png")
    print(out / f"{stem}_mask.png")
    return 0


def cmd_heatmaps(args, cfg):
    from .plotting import save_heatmaps, stage_heatmaps

    if not Path(args.image).is_file():
        raise ConfigError(f"image not found: {args.image}")
    model, text, _ = load_checkpoint(args.checkpoint)
    image = _load_input_image(args.image, model)
    maps = stage_heatmaps(model, image.transpose(2, 0, 1), text)
    prob = predict(model, image.transpose(2, 0, 1)[None], text)[0, 0]
    save_heatmaps(maps, _out_dir(cfg, args.out), image, prob)
    if "gdam_attention" not in maps:
        print(f"GdAM panel skipped: checkpoint variant is {model.cfg.variant!r}, "
              "attention exists only in the 'full' variant", file=sys.stderr)
        return 2
    return 0


def cmd_ablate(args, cfg):
    from .plotting import plot_ablation

    (train_s, val_s, test_s), protocol, text, encoder_id, mcfg = _prepare(cfg, needs_text=True)
    eval_s = test_s or val_s
    out = _out_dir(cfg)
    (out / "effective_config.toml").write_text(cfg.to_toml(), encoding="utf-8")
    write_split_manifest(out / "split.json", train_s, val_s, test_s, protocol,
                         None if cfg.predefined_split else cfg.split_spec())
    rows = ablate(mcfg, cfg.train_config(), train_s, eval_s, cfg.ablation_seeds, text, encoder_id,
                  out_dir=out / "runs")
    write_ablation_csv(rows, out / "ablation.csv")
    plot_ablation(rows, out / "ablation.png", reference=PUBLISHED_ABLATION)
    print((out / "ablation.csv").read_text(), end="")
    return 0


def cmd_gen_synthetic(args, cfg):
    samples = make_synthetic(args.n, args.size, args.seed)
    write_dataset(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="grunet", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="TOML run config (flat key = value)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key; repeatable")
        sp.add_argument("--seed", type=int, help="override the seed key")
        return sp

    sp = with_config(sub.add_parser("train", help="train one variant; writes checkpoints, record.jsonl, split.json"))
    sp.set_defaults(func=cmd_train)

    sp = with_config(sub.add_parser("ablate", help=f"train all variants {VARIANTS} and write ablation.csv/png"))
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a dataset directory")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data-dir", required=True, help="directory with images/ and masks/")
    sp.add_argument("--split-manifest", help="split.json written by train")
    sp.add_argument("--split", choices=("train", "val", "test"), help="restrict to one split from the manifest")
    sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or runs/grunet)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("predict", help="write a 16-bit probability PNG and a binary mask PNG")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("heatmaps", help="export per-stage activation heatmaps (PNG + .npy)")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(func=cmd_heatmaps)

    sp = sub.add_parser("gen-synthetic", help="write a synthetic nuclei dataset in images/ + masks/ layout")
    sp.add_argument("--n", type=int, default=8)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_synthetic)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(getattr(args, "set", []) or [])
        if getattr(args, "seed", None) is not None and args.command in ("train", "ablate"):
            overrides.append(f"seed={args.seed}")
        cfg = load_run_config(getattr(args, "config", None), overrides, os.environ)
        return args.func(args, cfg)
    except USER_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - any other failure is a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"failed: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
