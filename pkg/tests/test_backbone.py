import pytest
import torch

from grunet.backbone import (VARIANTS, ConfigError, GRUNet, MissingTextError, ModelConfig, MultiResBlock,
                             branch_split, model_forward, mrb_forward)
from grunet.text import build_text


def small_cfg(**kw):
    base = dict(input_height=32, input_width=32, depth=2, base_width=8, text_dim=8)
    base.update(kw)
    return ModelConfig(**base)


def text_for(cfg):
    return torch.randn(16, cfg.text_dim, generator=torch.Generator().manual_seed(9))


def image(b, h, w, c=3, seed=0):
    return torch.rand(b, h, w, c, generator=torch.Generator().manual_seed(seed))


class TestMRB:
    def test_shape(self):
        out = mrb_forward(image(1, 64, 64), 32, split=(8, 16, 8))
        assert out.shape == (1, 64, 64, 32)

    def test_default_split_sums_to_width(self):
        for width in (3, 13, 26, 53, 106):
            assert sum(branch_split(width)) == width and min(branch_split(width)) >= 1

    def test_zero_propagation(self):
        block = MultiResBlock(3, 12)
        with torch.no_grad():
            for name, p in block.named_parameters():
                if not name.endswith("bn.weight"):
                    p.zero_()
        assert torch.all(block(torch.zeros(1, 3, 8, 8)) == 0)

    def test_deterministic(self):
        x = torch.randn(2, 32, 32, 16, generator=torch.Generator().manual_seed(1))
        assert torch.equal(mrb_forward(x, 24, seed=3), mrb_forward(x, 24, seed=3))

    def test_width_too_small(self):
        with pytest.raises(ConfigError):
            branch_split(2)

    def test_bad_split(self):
        with pytest.raises(ConfigError):
            MultiResBlock(3, 8, split=(4, 4, 0))


class TestModel:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_shape_and_range(self, variant):
        cfg = small_cfg(variant=variant)
        model = GRUNet(cfg).eval()
        text = text_for(cfg) if variant == "full" else None
        with torch.no_grad():
            out = model_forward(model, image(2, 32, 32), text)
        assert out.shape == (2, 32, 32, 1)
        assert torch.all((out > 0) & (out < 1))

    def test_64_full(self):
        cfg = ModelConfig(input_height=64, input_width=64, depth=3, base_width=8)
        # untrained running statistics make eval-mode logits arbitrary; batch statistics keep them sane
        with torch.no_grad():
            out = model_forward(GRUNet(cfg).train(), image(1, 64, 64), build_text()[0], torch.Generator())
        assert out.shape == (1, 64, 64, 1) and torch.all((out > 0) & (out < 1))

    def test_default_512(self):
        raw, _ = build_text()
        model = GRUNet(ModelConfig()).eval()
        with torch.no_grad():
            out = model_forward(model, image(2, 512, 512), raw)
        assert out.shape == (2, 512, 512, 1)

    def test_training_mode_seeded(self):
        cfg = small_cfg()
        model = GRUNet(cfg).train()
        x, t = image(2, 32, 32), text_for(cfg)
        a = model_forward(model, x, t, torch.Generator().manual_seed(5))
        b = model_forward(model, x, t, torch.Generator().manual_seed(5))
        assert torch.equal(a, b)

    def test_same_seed_same_weights(self):
        a, b = GRUNet(small_cfg(seed=4)), GRUNet(small_cfg(seed=4))
        for (na, pa), (nb, pb) in zip(a.state_dict().items(), b.state_dict().items()):
            assert na == nb and torch.equal(pa, pb)

    def test_baseline_differs_from_full(self):
        x = image(1, 32, 32, seed=2)
        base = GRUNet(small_cfg(variant="baseline")).eval()
        full = GRUNet(small_cfg(variant="full")).eval()
        with torch.no_grad():
            assert not torch.equal(model_forward(base, x), model_forward(full, x, text_for(full.cfg)))

    def test_missing_text(self):
        with pytest.raises(MissingTextError):
            model_forward(GRUNet(small_cfg()), image(1, 32, 32))

    def test_wrong_image_size(self):
        with pytest.raises(ConfigError, match="configured"):
            model_forward(GRUNet(small_cfg(variant="baseline")), image(1, 16, 16))

    def test_features(self):
        cfg = small_cfg()
        model = GRUNet(cfg).eval()
        with torch.no_grad():
            _, feats = model(image(1, 32, 32).permute(0, 3, 1, 2), text_for(cfg), return_features=True)
        assert set(feats) == {"encoder_1", "encoder_2", "bottleneck", "gdam_attention", "decoder_1", "decoder_2"}
        assert feats["bottleneck"].shape[-1] == 8
        assert torch.all((feats["gdam_attention"] > 0) & (feats["gdam_attention"] < 1))


class TestConfig:
    def test_indivisible(self):
        with pytest.raises(ConfigError, match="divisible"):
            ModelConfig(input_height=100, input_width=100)

    @pytest.mark.parametrize("kw", [dict(depth=0), dict(alpha=0), dict(variant="unet"), dict(text_dim=0),
                                    dict(res_blocks=[1]), dict(base_width=1, alpha=1.0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            small_cfg(**kw)

    def test_defaults(self):
        cfg = ModelConfig()
        assert (cfg.input_height, cfg.depth, cfg.base_width, cfg.alpha) == (512, 4, 32, 1.67)
        assert cfg.res_blocks == [4, 3, 2, 1]
        assert cfg.level_width(0) == int(1.67 * 32)

    def test_round_trip(self):
        cfg = small_cfg(variant="cdrb", gdam_broadcast=True)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown"):
            ModelConfig.from_dict({**small_cfg().to_dict(), "dropout": 0.1})
