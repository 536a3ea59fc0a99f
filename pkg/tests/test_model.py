import math

import numpy as np
import pytest
import torch

from emopalette.colorlab import LchColor
from emopalette.errors import DataError, UsageError
from emopalette.model import (
    ModelConfig,
    PaletteGenerator,
    augment,
    build_model,
    load_checkpoint,
    positional_encoding,
    save_checkpoint,
)

SMALL = ModelConfig(d_model=32, encoder_layers=2, decoder_layers=2, heads=4, seed=7)


@pytest.fixture(scope="module")
def small_model():
    model = build_model(SMALL)
    model.eval()
    return model


def random_features(t, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(539, t)).astype(np.float32)


class TestPositionalEncoding:
    def test_position_zero(self):
        pe = positional_encoding(0, 16)
        assert np.all(pe[0::2] == 0.0)
        assert np.all(pe[1::2] == 1.0)

    def test_first_slot_is_sin_one(self):
        for d in (8, 64, 256):
            assert positional_encoding(1, d)[0] == pytest.approx(math.sin(1.0), abs=1e-12)

    def test_norm_is_half_dimension(self):
        for pos in (0, 1, 17, 999):
            pe = positional_encoding(pos, 64)
            assert np.dot(pe, pe) == pytest.approx(32.0, abs=1e-9)

    def test_odd_dimension_rejected(self):
        with pytest.raises(UsageError):
            positional_encoding(3, 15)


class TestConfig:
    def test_ff_dim_defaults_to_4x(self):
        assert ModelConfig(d_model=64, heads=8).ff_dim == 256

    def test_head_divisibility(self):
        with pytest.raises(UsageError):
            ModelConfig(d_model=30, heads=8)

    def test_max_colors_fixed(self):
        with pytest.raises(UsageError):
            ModelConfig(max_colors=4)


class TestEncoder:
    def test_patch_count(self, small_model):
        h, z = small_model.encode(random_features(16))
        assert h.shape == (4, SMALL.d_model)
        assert z.shape == (SMALL.d_model,)

    def test_partial_patch_padded(self, small_model):
        h, _ = small_model.encode(random_features(13))
        assert h.shape == (4, SMALL.d_model)

    def test_variable_length_without_reconfiguration(self, small_model):
        h40, _ = small_model.encode(random_features(40))
        h80, _ = small_model.encode(random_features(80))
        assert h40.shape[0] == 10
        assert h80.shape[0] == 20

    def test_deterministic_in_eval_mode(self, small_model):
        f = random_features(24, seed=3)
        _, z1 = small_model.encode(f)
        _, z2 = small_model.encode(f)
        assert torch.equal(z1, z2)

    def test_wrong_row_count_rejected(self, small_model):
        with pytest.raises(UsageError):
            small_model.encode(np.zeros((100, 16), dtype=np.float32))

    def test_empty_rejected(self, small_model):
        with pytest.raises(UsageError):
            small_model.encode(np.zeros((539, 0), dtype=np.float32))


class TestAugment:
    def test_sigma_zero_identity(self):
        z = torch.randn(32, dtype=torch.float64)
        assert torch.equal(augment(z, 0.0), z)

    def test_fixed_seed_reproducible(self):
        z = torch.randn(32)
        g1 = torch.Generator().manual_seed(5)
        g2 = torch.Generator().manual_seed(5)
        assert torch.equal(augment(z, 0.3, g1), augment(z, 0.3, g2))

    def test_noise_scale_statistics(self):
        z = torch.zeros(64, dtype=torch.float64)
        g = torch.Generator().manual_seed(11)
        draws = torch.stack([augment(z, 0.1, g) for _ in range(10_000)])
        stds = draws.std(dim=0)
        assert float(stds.min()) >= 0.097
        assert float(stds.max()) <= 0.103


class TestDecoder:
    def test_decode_step_empty_prefix(self, small_model):
        memory = small_model._memory(random_features(16), 0.0, None)
        step = small_model.decode_step([], memory)
        assert len(step.color_activation) == 3
        assert all(0.0 < v < 1.0 for v in step.color_activation)

    def test_decode_step_deterministic(self, small_model):
        memory = small_model._memory(random_features(16), 0.0, None)
        prefix = [LchColor(50, 60, 100), LchColor(20, 30, 200)]
        s1 = small_model.decode_step(prefix, memory)
        s2 = small_model.decode_step(prefix, memory)
        assert s1 == s2

    def test_full_prefix_rejected(self, small_model):
        memory = small_model._memory(random_features(16), 0.0, None)
        prefix = [LchColor(50, 60, 100)] * 5
        with pytest.raises(UsageError):
            small_model.decode_step(prefix, memory)

    def test_forward_train_shapes(self, small_model):
        target = [LchColor(20, 30, 40), LchColor(50, 60, 70), LchColor(80, 90, 100)]
        pred, stop_logits = small_model.forward_train(random_features(16), target, 0.0, None)
        assert pred.shape == (3, 3)
        assert stop_logits.shape == (4,)

    def test_forward_train_invalid_target_length(self, small_model):
        with pytest.raises(UsageError):
            small_model.forward_train(
                random_features(16), [LchColor(1, 2, 3)] * 2, 0.0, None
            )

    def test_forward_train_deterministic_eval(self, small_model):
        f = random_features(16, seed=9)
        target = [LchColor(20, 30, 40), LchColor(50, 60, 70), LchColor(80, 90, 100)]
        p1, s1 = small_model.forward_train(f, target, 0.0, None)
        p2, s2 = small_model.forward_train(f, target, 0.0, None)
        assert torch.equal(p1, p2)
        assert torch.equal(s1, s2)

    def test_causality(self, small_model):
        # Changing color j must not affect predictions at positions <= j.
        f = random_features(16, seed=13)
        base = [LchColor(20, 30, 40), LchColor(50, 60, 70), LchColor(80, 90, 100),
                LchColor(10, 10, 10)]
        changed = list(base)
        changed[2] = LchColor(90, 140, 350)
        p1, _ = small_model.forward_train(f, base, 0.0, None)
        p2, _ = small_model.forward_train(f, changed, 0.0, None)
        # Positions 0..2 are computed from tokens [start, c1, c2] only.
        assert torch.equal(p1[:3], p2[:3])
        assert not torch.equal(p1[3], p2[3])


class TestGenerate:
    def test_length_in_bounds(self, small_model):
        for seed in range(5):
            palette = small_model.generate(random_features(20, seed=seed))
            assert 3 <= len(palette) <= 5

    def test_sigma_zero_reproducible(self, small_model):
        f = random_features(24, seed=21)
        p1 = small_model.generate(f, 0.0)
        p2 = small_model.generate(f, 0.0)
        assert [c.as_tuple() for c in p1] == [c.as_tuple() for c in p2]

    def test_emitted_colors_satisfy_invariants(self, small_model):
        palette = small_model.generate(random_features(20, seed=4))
        for c in palette:
            assert 0 <= c.l <= 100
            assert 0 <= c.c <= 150
            assert 0 <= c.h < 360


class TestCheckpoint:
    def test_round_trip(self, small_model, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(small_model, path)
        loaded = load_checkpoint(path)
        loaded.eval()
        assert loaded.config == small_model.config
        f = random_features(16, seed=2)
        _, z1 = small_model.encode(f)
        _, z2 = loaded.encode(f)
        assert torch.allclose(z1, z2, atol=0, rtol=0)

    def test_version_field_present(self, small_model, tmp_path):
        import json as _json
        import struct as _struct

        path = tmp_path / "model.ckpt"
        save_checkpoint(small_model, path)
        raw = path.read_bytes()
        assert raw[:4] == b"EPCK"
        (hlen,) = _struct.unpack("<I", raw[4:8])
        manifest = _json.loads(raw[8 : 8 + hlen])
        assert manifest["version"] == 1
        assert all({"name", "shape", "offset", "numel"} <= set(t) for t in manifest["tensors"])

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(DataError):
            load_checkpoint(path)
