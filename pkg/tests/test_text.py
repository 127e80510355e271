import numpy as np
import pytest
import torch

from grunet.layers import he_uniform_
from grunet.text import (FileEncoder, LabelSet, StubEncoder, TextConfigError, TextProjection, build_text,
                         encode_labels, load_labels, read_embeddings, write_embeddings)

PUBLISHED_LABELS = [
    "tumor epithelial tissue", "necrotic tissue", "lymphocytic tissue", "tumor-associated stromal tissue",
    "coagulative necrosis", "liquefactive necrosis", "desmoplasia", "granular and non-granular leukocytes",
    "perinuclear halo", "interstitial space", "neutrophils", "macrophages", "collagen", "fibronectin",
    "hyperplasia", "dysplasia",
]


def test_bundled_labels():
    labels = load_labels()
    assert len(labels) == 16
    assert labels.labels[0] == "tumor epithelial tissue"
    assert labels.labels[-1] == "dysplasia"
    assert list(labels) == PUBLISHED_LABELS


def test_wrong_count(tmp_path):
    p = tmp_path / "labels.txt"
    p.write_text("\n".join(PUBLISHED_LABELS[:15]) + "\n")
    with pytest.raises(TextConfigError, match="expected 16 labels, found 15"):
        load_labels(p)


def test_duplicate(tmp_path):
    p = tmp_path / "labels.txt"
    p.write_text("\n".join(PUBLISHED_LABELS[:15] + ["collagen"]))
    with pytest.raises(TextConfigError, match="duplicate label: 'collagen'"):
        load_labels(p)


def test_missing_file(tmp_path):
    with pytest.raises(TextConfigError, match="labels file not found"):
        load_labels(tmp_path / "nope.txt")


class TestStub:
    def test_deterministic(self):
        labels = load_labels()
        a = encode_labels(labels, StubEncoder(64))
        b = encode_labels(labels, StubEncoder(64))
        assert a.shape == (16, 64)
        assert np.array_equal(a, b)

    def test_distinct_rows(self):
        raw = encode_labels(load_labels(), StubEncoder(64))
        assert len({row.tobytes() for row in raw}) == 16


class TestInterchange:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        m = rng.normal(size=(16, 768))
        m[0, 0] = np.nextafter(1.0, 2.0)
        path = tmp_path / "emb.json"
        write_embeddings(path, m, "test-encoder", PUBLISHED_LABELS)
        back, header = read_embeddings(path)
        assert back.tobytes() == m.tobytes()
        assert header["encoder_id"] == "test-encoder"
        assert header["dim"] == 768

    def test_file_encoder(self, tmp_path):
        m = np.random.default_rng(1).normal(size=(16, 768))
        path = tmp_path / "emb.json"
        write_embeddings(path, m, "distilbert-cls")
        enc = FileEncoder(path)
        raw = encode_labels(load_labels(), enc)
        assert raw.shape == (16, 768)
        assert enc.encoder_id == "distilbert-cls"

    def test_missing_file_names_path(self, tmp_path):
        with pytest.raises(TextConfigError, match="emb.json"):
            FileEncoder(tmp_path / "emb.json")

    def test_label_mismatch(self, tmp_path):
        path = tmp_path / "emb.json"
        write_embeddings(path, np.zeros((16, 4)), "x", list(reversed(PUBLISHED_LABELS)))
        with pytest.raises(TextConfigError, match="do not match"):
            encode_labels(load_labels(), FileEncoder(path))


class TestProjection:
    @pytest.mark.parametrize("dim", [768, 64])
    def test_shape(self, dim):
        proj = TextProjection(dim).double()
        assert proj(torch.randn(16, dim, dtype=torch.float64)).shape == (32, 32)

    def test_zero_weights(self):
        proj = TextProjection(8)
        with torch.no_grad():
            for p in proj.parameters():
                p.zero_()
        t = proj(torch.randn(16, 8))
        assert torch.all(t == 0)
        assert t.mean().item() == 0 and t.std(unbiased=False).item() == 0

    def test_single_label_change_moves_projection(self):
        proj = he_uniform_(TextProjection(64).double(), torch.Generator().manual_seed(0))
        base = list(PUBLISHED_LABELS)
        t0 = proj(torch.from_numpy(encode_labels(LabelSet(tuple(base)), StubEncoder(64))))
        for i in (0, 7, 15):
            changed = base.copy()
            changed[i] = changed[i] + " (variant)"
            t1 = proj(torch.from_numpy(encode_labels(LabelSet(tuple(changed)), StubEncoder(64))))
            assert not torch.equal(t0, t1)


def test_build_text_default():
    raw, encoder_id = build_text(stub_dim=32)
    assert raw.shape == (16, 32) and raw.dtype == torch.float64
    assert encoder_id.startswith("stub")
