"""Seeded training loop, evaluation and the four-variant ablation driver."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .backbone import VARIANT_ROWS, VARIANTS, ConfigError, GRUNet, ModelConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .data import to_batch
from .losses import MetricsReport, confusion, hybrid_loss, mean_report, metrics

log = logging.getLogger(__name__)

THRESHOLD = 0.5

# published four-variant ablation scores on the MonuSeg nuclei set, percent
PUBLISHED_ABLATION = {
    "baseline": (77.74, 78.79, 76.97, 63.72),
    "cdrb_no_controller": (78.82, 85.60, 73.17, 65.10),
    "cdrb": (79.13, 82.18, 77.40, 66.02),
    "full": (80.35, 84.11, 77.03, 67.21),
}
ABLATION_COLUMNS = ("Dice", "Recall", "Precision", "IoU")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 2
    epochs: int = 100
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.optimizer != "adam":
            raise ConfigError(f"only the adam optimizer is supported, got {self.optimizer!r}")


@dataclass
class Evaluation:
    """Per-sample mean (headline) and pooled-confusion metrics over a set of samples."""

    mean: MetricsReport
    pooled: MetricsReport
    per_sample: list[MetricsReport] = field(repr=False)

    def to_dict(self):
        return {"per_sample_mean": self.mean.to_dict(), "pooled": self.pooled.to_dict()}


@dataclass
class TrainingRecord:
    epochs: list[dict]
    model: GRUNet = field(repr=False)
    best_epoch: int | None = None
    best_checkpoint: Path | None = None
    last_checkpoint: Path | None = None

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.epochs)


def _tensor(a, dtype):
    return torch.as_tensor(np.ascontiguousarray(a), dtype=dtype)


@torch.no_grad()
def predict(model: GRUNet, images: np.ndarray, text=None, batch_size=2) -> np.ndarray:
    """Eval-mode probabilities (B, 1, H, W) for channels-first images."""
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    out = []
    for i in range(0, len(images), batch_size):
        out.append(model(_tensor(images[i:i + batch_size], dtype), text=text).double().numpy())
    model.train(was_training)
    return np.concatenate(out)


def evaluate_probabilities(probs: np.ndarray, masks: np.ndarray) -> Evaluation:
    reports = [metrics(confusion(p > THRESHOLD, m.astype(bool))) for p, m in zip(probs, masks)]
    mean = mean_report(reports)
    return Evaluation(mean=mean, pooled=metrics(mean.counts), per_sample=reports)


def evaluate(model: GRUNet, samples, text=None, batch_size=2) -> Evaluation:
    if not samples:
        raise ValueError("no samples to evaluate")
    images, masks = to_batch(samples)
    return evaluate_probabilities(predict(model, images, text, batch_size), masks)


def evaluate_checkpoint(path, samples, batch_size=2) -> Evaluation:
    model, text, _ = load_checkpoint(path)
    return evaluate(model, samples, text, batch_size)


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, train_samples, val_samples=None,
          text=None, encoder_id=None) -> TrainingRecord:
    """Train with Adam on the hybrid loss.

    Batch order per epoch comes from a generator seeded with ``(seed, epoch)``
    and GdAM noise from one generator seeded with ``seed``, so the whole run
    is a function of the seeds, configs and data. With ``checkpoint_dir`` set,
    the best-validation-Dice and last-epoch weights are written there along
    with ``record.jsonl``.
    """
    if not train_samples:
        raise ValueError("no training samples")
    torch.manual_seed(train_cfg.seed)
    model = GRUNet(model_cfg)
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=train_cfg.lr,
                           betas=(train_cfg.beta1, train_cfg.beta2), eps=train_cfg.adam_eps)
    noise = torch.Generator().manual_seed(train_cfg.seed)
    images, masks = to_batch(train_samples)
    images, masks = _tensor(images, torch.float32), _tensor(masks, torch.float32)

    ckpt_dir = Path(train_cfg.checkpoint_dir) if train_cfg.checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    record = TrainingRecord(epochs=[], model=model)
    best_dice = -math.inf
    n = len(train_samples)

    for epoch in range(1, train_cfg.epochs + 1):
        order = np.random.default_rng([train_cfg.seed, epoch]).permutation(n)
        losses = []
        for step, start in enumerate(range(0, n, train_cfg.batch_size), start=1):
            idx = torch.from_numpy(order[start:start + train_cfg.batch_size])
            pred = model(images[idx], text=text, generator=noise)
            loss = hybrid_loss(pred, masks[idx])
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss.item()} at epoch {epoch}, step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())

        entry = {"epoch": epoch, "steps": len(losses), "train_loss": float(np.mean(losses))}
        score = -entry["train_loss"]
        if val_samples:
            ev = evaluate(model, val_samples, text, train_cfg.batch_size)
            entry["val"] = ev.to_dict()
            score = ev.mean.dice
        entry["best"] = score > best_dice
        if entry["best"]:
            best_dice = score
            record.best_epoch = epoch
            if ckpt_dir:
                record.best_checkpoint = ckpt_dir / "best.ckpt"
                save_checkpoint(record.best_checkpoint, model, text, encoder_id, {"epoch": epoch})
        record.epochs.append(entry)
        log.info("epoch %d loss %.5f%s", epoch, entry["train_loss"],
                 f" val dice {entry['val']['per_sample_mean']['dice']:.4f}" if val_samples else "")

    if ckpt_dir:
        record.last_checkpoint = ckpt_dir / "last.ckpt"
        save_checkpoint(record.last_checkpoint, model, text, encoder_id, {"epoch": train_cfg.epochs})
        (ckpt_dir / "record.jsonl").write_text(record.to_jsonl(), encoding="utf-8")
    model.eval()
    return record


@dataclass
class AblationRow:
    variant: str
    scores: dict[str, float]  # ablation columns, percent, averaged over seeds
    per_seed: list[dict] = field(default_factory=list)

    @property
    def label(self):
        return VARIANT_ROWS[self.variant]


def ablate(model_cfg: ModelConfig, train_cfg: TrainConfig, train_samples, eval_samples,
           seeds=(0,), text=None, encoder_id=None, out_dir=None) -> list[AblationRow]:
    """Train every variant under the same seeds and recipe, score on ``eval_samples``."""
    rows = []
    for variant in VARIANTS:
        per_seed = []
        for seed in seeds:
            mcfg = replace(model_cfg, variant=variant, seed=seed)
            ckpt_dir = str(Path(out_dir) / variant / f"seed_{seed}") if out_dir else None
            tcfg = replace(train_cfg, seed=seed, checkpoint_dir=ckpt_dir)
            record = train(mcfg, tcfg, train_samples, None, text if variant == "full" else None, encoder_id)
            ev = evaluate(record.model, eval_samples, text if variant == "full" else None, tcfg.batch_size)
            per_seed.append(ev.mean.to_dict())
        scores = {
            col: 100.0 * float(np.mean([r[col.lower()] for r in per_seed])) for col in ABLATION_COLUMNS
        }
        rows.append(AblationRow(variant, scores, per_seed))
    return rows


def write_ablation_csv(rows: list[AblationRow], path):
    """Ablation CSV: one row per variant, measured columns, then the published reference values."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Model", "variant", *ABLATION_COLUMNS, *(f"published_{c}" for c in ABLATION_COLUMNS)])
        for row in rows:
            w.writerow([row.label, row.variant, *(f"{row.scores[c]:.2f}" for c in ABLATION_COLUMNS),
                        *PUBLISHED_ABLATION[row.variant]])
