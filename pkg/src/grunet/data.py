"""Image/mask loading, seeded train/val/test splitting and a synthetic nuclei generator."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

IMAGE_SUFFIXES = (".png", ".tif", ".tiff")
MASK_THRESHOLD = 127


class DatasetError(ValueError):
    pass


@dataclass
class Sample:
    image: np.ndarray  # (H, W, 3) float in [0, 1]
    mask: np.ndarray  # (H, W) uint8 in {0, 1}
    id: str

    def __post_init__(self):
        if self.image.shape[:2] != self.mask.shape:
            raise DatasetError(
                f"{self.id}: image {self.image.shape[:2]} and mask {self.mask.shape} sizes differ"
            )


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.7
    val_frac: float = 0.2
    test_frac: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if min(fracs) < 0 or abs(sum(fracs) - 1.0) > 1e-9:
            raise DatasetError(f"split fractions must be >= 0 and sum to 1, got {fracs}")


def _index(folder: Path) -> dict[str, Path]:
    if not folder.is_dir():
        raise DatasetError(f"missing directory: {folder}")
    files = {}
    for p in sorted(folder.iterdir()):
        if p.suffix.lower() in IMAGE_SUFFIXES:
            if p.stem in files:
                raise DatasetError(f"two files share the id {p.stem!r} in {folder}")
            files[p.stem] = p
    return files


def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except OSError as e:
        raise DatasetError(f"cannot read image {path}: {e}") from e
    return arr / 255.0


def load_mask(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except OSError as e:
        raise DatasetError(f"cannot read mask {path}: {e}") from e
    return (arr > MASK_THRESHOLD).astype(np.uint8)


def load_dataset(root) -> list[Sample]:
    """Load ``root/images/*`` with masks from ``root/masks/*`` matched by basename."""
    root = Path(root)
    images = _index(root / "images")
    masks = _index(root / "masks")
    missing = sorted(set(images) - set(masks))
    if missing:
        raise DatasetError(f"no mask for image id {missing[0]!r}" + (f" (+{len(missing) - 1} more)" if len(missing) > 1 else ""))
    orphans = sorted(set(masks) - set(images))
    if orphans:
        raise DatasetError(f"no image for mask id {orphans[0]!r}")
    samples = []
    for sid in sorted(images):
        image = load_image(images[sid])
        mask = load_mask(masks[sid])
        if image.shape[:2] != mask.shape:
            raise DatasetError(f"{sid}: image {image.shape[:2]} and mask {mask.shape} dimensions differ")
        samples.append(Sample(image, mask, sid))
    return samples


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    n_train = min(n, _round_half_up(n * spec.train_frac))
    n_val = min(n - n_train, _round_half_up(n * spec.val_frac))
    return n_train, n_val, n - n_train - n_val


def split(samples, spec: SplitSpec = SplitSpec()):
    """Seeded shuffle, then contiguous train/val/test partition; test takes the remainder."""
    if len(samples) < 3:
        raise DatasetError(f"need at least 3 samples to split, got {len(samples)}")
    order = np.random.default_rng(spec.seed).permutation(len(samples))
    shuffled = [samples[i] for i in order]
    n_train, n_val, _ = split_sizes(len(samples), spec)
    return shuffled[:n_train], shuffled[n_train:n_train + n_val], shuffled[n_train + n_val:]


def load_predefined(root, val_frac=0.2 / 0.9, seed=0):
    """Use ``root/train`` and ``root/test`` as given; carve validation out of train."""
    root = Path(root)
    train_all = load_dataset(root / "train")
    test = load_dataset(root / "test")
    if len(train_all) < 2:
        raise DatasetError(f"predefined train folder needs at least 2 samples, got {len(train_all)}")
    order = np.random.default_rng(seed).permutation(len(train_all))
    shuffled = [train_all[i] for i in order]
    n_val = max(1, _round_half_up(len(train_all) * val_frac))
    return shuffled[n_val:], shuffled[:n_val], test


def has_predefined_split(root) -> bool:
    root = Path(root)
    return (root / "train" / "images").is_dir() and (root / "test" / "images").is_dir()


def write_split_manifest(path, train, val, test, protocol: str, spec: SplitSpec | None = None):
    doc = {
        "protocol": protocol,
        "train": [s.id for s in train],
        "val": [s.id for s in val],
        "test": [s.id for s in test],
    }
    if spec is not None:
        doc["fractions"] = [spec.train_frac, spec.val_frac, spec.test_frac]
        doc["seed"] = spec.seed
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


# stained-tissue palette: pinkish eosin background, purple hematoxylin nuclei
_BACKGROUND = np.array([0.93, 0.72, 0.82])
_NUCLEUS = np.array([0.35, 0.18, 0.52])


def make_synthetic(n: int, size: int, seed: int = 0) -> list[Sample]:
    """Blurred random ellipses ("nuclei") on a textured background; masks are the ellipse supports."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    samples = []
    for i in range(n):
        mask = np.zeros((size, size), dtype=bool)
        while not mask.any() or mask.all():
            mask[:] = False
            for _ in range(rng.integers(3, 9)):
                cy, cx = rng.uniform(0, size, 2)
                ry, rx = rng.uniform(size / 20, size / 7, 2)
                theta = rng.uniform(0, np.pi)
                dy, dx = yy - cy, xx - cx
                u = dx * np.cos(theta) + dy * np.sin(theta)
                v = -dx * np.sin(theta) + dy * np.cos(theta)
                mask |= (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
        texture = ndimage.gaussian_filter(rng.standard_normal((size, size)), 2.0)
        texture /= texture.std() + 1e-12
        m = mask.astype(np.float64)
        image = m[..., None] * _NUCLEUS + (1 - m[..., None]) * _BACKGROUND
        image = image + 0.05 * texture[..., None]
        image = ndimage.gaussian_filter(image, sigma=(0.8, 0.8, 0))
        image = image + 0.02 * rng.standard_normal(image.shape)
        samples.append(Sample(np.clip(image, 0.0, 1.0), mask.astype(np.uint8), f"synth_{i:04d}"))
    return samples


def write_dataset(samples, root):
    """Write samples in the ``images/`` + ``masks/`` PNG layout read by ``load_dataset``."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for s in samples:
        Image.fromarray(np.round(s.image * 255).astype(np.uint8)).save(root / "images" / f"{s.id}.png")
        Image.fromarray((s.mask * 255).astype(np.uint8)).save(root / "masks" / f"{s.id}.png")


def to_batch(samples):
    """Stack samples into channels-first float arrays ``(B, 3, H, W)`` and ``(B, 1, H, W)``."""
    images = np.stack([s.image.transpose(2, 0, 1) for s in samples])
    masks = np.stack([s.mask[None] for s in samples]).astype(np.float64)
    return images, masks
