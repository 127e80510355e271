import numpy as np
import torch
from PIL import Image

from grunet.backbone import GRUNet, ModelConfig
from grunet.plotting import plot_ablation, save_heatmaps, stage_heatmaps, stage_order
from grunet.training import PUBLISHED_ABLATION, AblationRow


def test_stage_order():
    names = ["decoder_1", "bottleneck", "encoder_2", "decoder_2", "gdam_attention", "encoder_1"]
    assert stage_order(names) == ["encoder_1", "encoder_2", "bottleneck", "gdam_attention", "decoder_2", "decoder_1"]


def heatmaps(variant):
    cfg = ModelConfig(input_height=32, input_width=32, depth=2, base_width=8, text_dim=4, variant=variant)
    text = torch.randn(16, 4, generator=torch.Generator().manual_seed(0)) if variant == "full" else None
    image = np.random.default_rng(0).random((3, 32, 32))
    return stage_heatmaps(GRUNet(cfg), image, text), image


def test_panels_aligned_and_normalised():
    maps, _ = heatmaps("full")
    assert "gdam_attention" in maps
    for m in maps.values():
        assert m["panel"].shape == (32, 32)
        assert m["panel"].min() >= 0 and m["panel"].max() <= 1
    assert maps["bottleneck"]["raw"].shape == (8, 8)
    assert maps["encoder_1"]["raw"].shape == (32, 32)


def test_baseline_has_no_attention():
    maps, _ = heatmaps("baseline")
    assert "gdam_attention" not in maps and "encoder_1" in maps


def test_save_is_byte_stable(tmp_path):
    maps, image = heatmaps("full")
    for run in ("a", "b"):
        save_heatmaps(maps, tmp_path / run, image.transpose(1, 2, 0), np.full((32, 32), 0.3))
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_ablation_chart(tmp_path):
    rows = [AblationRow(v, {"Dice": 50.0, "Recall": 60.0, "Precision": 40.0, "IoU": 33.3}) for v in PUBLISHED_ABLATION]
    plot_ablation(rows, tmp_path / "ablation.png", reference=PUBLISHED_ABLATION)
    w, h = Image.open(tmp_path / "ablation.png").size
    assert w > 100 and h > 100
