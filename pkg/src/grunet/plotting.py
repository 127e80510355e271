"""Figure output: per-stage activation heatmaps and the ablation bar chart."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402
import torch.nn.functional as F  # noqa: E402

# PNG metadata would otherwise embed the matplotlib version string
_PNG_META = {"Software": None}
CMAP = "jet"


def stage_order(names):
    enc = sorted((n for n in names if n.startswith("encoder_")), key=lambda n: int(n.split("_")[1]))
    dec = sorted((n for n in names if n.startswith("decoder_")), key=lambda n: -int(n.split("_")[1]))
    mid = [n for n in ("bottleneck", "gdam_attention") if n in names]
    return enc + mid + dec


@torch.no_grad()
def stage_heatmaps(model, image_chw: np.ndarray, text=None) -> dict[str, dict[str, np.ndarray]]:
    """Channel-mean activation of every stage for one image.

    Returns ``{stage: {"raw": native-resolution mean, "panel": upsampled and
    min-max normalised to [0, 1]}}``.
    """
    model.eval()
    dtype = next(model.parameters()).dtype
    x = torch.as_tensor(image_chw[None], dtype=dtype)
    _, feats = model(x, text=text, return_features=True)
    size = tuple(x.shape[2:])
    maps = {}
    for name in stage_order(feats):
        mean = feats[name].mean(dim=1, keepdim=True)
        up = F.interpolate(mean, size=size, mode="bilinear", align_corners=False)[0, 0].double().numpy()
        lo, hi = up.min(), up.max()
        panel = (up - lo) / (hi - lo) if hi > lo else np.zeros_like(up)
        maps[name] = {"raw": mean[0, 0].double().numpy(), "panel": panel}
    return maps


def save_heatmaps(maps, out_dir, image_hwc=None, prob=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, m in maps.items():
        png = out_dir / f"{name}.png"
        plt.imsave(png, m["panel"], cmap=CMAP, vmin=0.0, vmax=1.0, metadata=_PNG_META)
        np.save(out_dir / f"{name}.npy", m["raw"])
        written.append(png)

    panels = ([("input", image_hwc)] if image_hwc is not None else []) + \
             [(n, m["panel"]) for n, m in maps.items()] + \
             ([("prediction", prob)] if prob is not None else [])
    cols = min(4, len(panels))
    rows = -(-len(panels) // cols)
    fig, axes = plt.subplots(rows, cols, figsize=(3 * cols, 3 * rows), squeeze=False)
    for ax in axes.flat:
        ax.axis("off")
    for ax, (name, arr) in zip(axes.flat, panels):
        if arr.ndim == 3:
            ax.imshow(arr)
        else:
            ax.imshow(arr, cmap="gray" if name == "prediction" else CMAP, vmin=0, vmax=1)
        ax.set_title(name.replace("_", " "), fontsize=10)
    fig.tight_layout()
    fig.savefig(out_dir / "overview.png", dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return written


def plot_ablation(rows, path, columns=("Dice", "Recall", "Precision", "IoU"), reference=None):
    """Grouped bars per metric column; ``reference`` maps variant -> published values drawn as ticks."""
    x = np.arange(len(columns))
    width = 0.8 / len(rows)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for i, row in enumerate(rows):
        vals = [row.scores[c] for c in columns]
        pos = x - 0.4 + width * (i + 0.5)
        ax.bar(pos, vals, width, label=row.label)
        if reference is not None:
            ax.scatter(pos, reference[row.variant], marker="_", color="k", s=60, zorder=3)
    ax.set_xticks(x)
    ax.set_xticklabels(columns)
    ax.set_ylabel("%")
    ax.set_ylim(0, 100)
    ax.legend(ncol=len(rows), fontsize=8, loc="lower center")
    ax.set_title("ablation (bars: this run, ticks: published)" if reference else "ablation", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
