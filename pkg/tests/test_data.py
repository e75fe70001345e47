import struct

import numpy as np
import pytest

from fsglab.data import gen_synthetic, load_idx, write_idx
from fsglab.errors import ContractError, FormatError
from fsglab.model import Model
from fsglab.rng import Rng
from fsglab.trainer import SteTrainer, TrainConfig, OptimizerConfig, LrDecay


class TestSynthetic:
    def test_blobs_zero_noise_at_centers(self):
        data = gen_synthetic("blobs", 5, 0.0, Rng(1), classes=3)
        for c in range(3):
            pts = data.x[data.y == c]
            assert np.allclose(pts, pts[0])
            assert abs(np.linalg.norm(pts[0]) - 2.0) < 1e-12

    def test_seed_determinism(self):
        a = gen_synthetic("spirals", 20, 0.1, Rng(7))
        b = gen_synthetic("spirals", 20, 0.1, Rng(7))
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.y, b.y)

    def test_bad_kind(self):
        with pytest.raises(ContractError):
            gen_synthetic("rings", 5, 0.1, Rng(0))

    def test_bad_count(self):
        with pytest.raises(ContractError):
            gen_synthetic("blobs", 0, 0.1, Rng(0))

    def test_blobs_linear_model_reaches_99(self):
        data = gen_synthetic("blobs", 500, 0.1, Rng(3), classes=2)
        cfg = TrainConfig(base_optimizer=OptimizerConfig(kind="adam", lr=0.05),
                          epochs=40, batch_size=100,
                          lr_decay=LrDecay(every=0, factor=1.0), seed=0,
                          slow_kind="off", fast_kind="off")
        tr = SteTrainer(Model.build(["dense:2:2", "bias:2"], Rng(5)), cfg)
        for _ in range(40):
            rec = tr.train_epoch(data.x, data.y)
        assert rec.accuracy >= 0.99

    def test_spirals_shapes(self):
        data = gen_synthetic("spirals", 30, 0.15, Rng(4))
        assert data.x.shape == (60, 2)
        assert set(np.unique(data.y)) == {0, 1}


class TestIdx:
    def test_hand_built_fixture(self, tmp_path):
        img = tmp_path / "img.idx"
        lab = tmp_path / "lab.idx"
        pixels = np.array([[[0, 255], [128, 64]]], dtype=np.uint8)
        write_idx(img, lab, pixels, np.array([3], dtype=np.uint8))
        data = load_idx(img, lab)
        assert data.x.shape == (1, 1, 2, 2)
        assert np.allclose(data.x[0, 0],
                           [[0.0, 1.0], [128.0 / 255.0, 64.0 / 255.0]])
        assert data.y[0] == 3

    def test_label_magic_fed_to_image_loader(self, tmp_path):
        img = tmp_path / "img.idx"
        lab = tmp_path / "lab.idx"
        write_idx(img, lab, np.zeros((1, 2, 2), dtype=np.uint8),
                  np.zeros(1, dtype=np.uint8))
        with pytest.raises(FormatError, match="magic"):
            load_idx(lab, lab)

    def test_truncated_payload(self, tmp_path):
        img = tmp_path / "img.idx"
        lab = tmp_path / "lab.idx"
        write_idx(img, lab, np.zeros((2, 2, 2), dtype=np.uint8),
                  np.zeros(2, dtype=np.uint8))
        raw = img.read_bytes()
        img.write_bytes(raw[:-3])
        with pytest.raises(FormatError, match="payload"):
            load_idx(img, lab)

    def test_count_mismatch(self, tmp_path):
        img = tmp_path / "img.idx"
        lab = tmp_path / "lab.idx"
        lab2 = tmp_path / "lab2.idx"
        write_idx(img, lab, np.zeros((2, 2, 2), dtype=np.uint8),
                  np.zeros(2, dtype=np.uint8))
        with open(lab2, "wb") as fh:
            fh.write(struct.pack(">II", 0x00000801, 3))
            fh.write(bytes(3))
        with pytest.raises(FormatError, match="mismatch"):
            load_idx(img, lab2)

    def test_mutated_magic_rejected(self, tmp_path):
        img = tmp_path / "img.idx"
        lab = tmp_path / "lab.idx"
        write_idx(img, lab, np.zeros((1, 2, 2), dtype=np.uint8),
                  np.zeros(1, dtype=np.uint8))
        raw = bytearray(img.read_bytes())
        for flip in (0, 1, 2, 3):
            mutated = bytearray(raw)
            mutated[flip] ^= 0xFF
            img.write_bytes(bytes(mutated))
            with pytest.raises(FormatError):
                load_idx(img, lab)
