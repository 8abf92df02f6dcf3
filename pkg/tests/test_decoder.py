"""Decoder stages: seeded init, coarse offsets, folding, confidence heads."""

import numpy as np
import pytest

from scenecodec.autodiff import Tensor
from scenecodec.decoder import (
    DecoderConfig,
    PatchDecoder,
    decode_patch,
    decode_seed,
    folding_grid,
    sample_coarse_init,
)
from scenecodec.geometry import ObbAttributes, fit_obb

from conftest import make_rng

CFG = DecoderConfig(m=6, d_z=8, d_fc=16, coarse_hidden=32, offset_hidden=16, fold_hidden=16, mask_hidden=8)


def build_decoder(seed=2, cfg=CFG, dtype=np.float64):
    return PatchDecoder(cfg, make_rng(seed), dtype)


class TestSampleCoarseInit:
    def test_deterministic(self):
        a = sample_coarse_init(50, seed=9)
        b = sample_coarse_init(50, seed=9)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, sample_coarse_init(50, seed=10))

    def test_range(self):
        pts = sample_coarse_init(1000, seed=3)
        assert pts.shape == (1000, 3)
        assert np.abs(pts).max() <= 1.0

    def test_uniform_moments(self):
        pts = sample_coarse_init(100_000, seed=4)
        np.testing.assert_allclose(pts.mean(axis=0), 0.0, atol=0.02)
        np.testing.assert_allclose(pts.var(axis=0), 1.0 / 3.0, atol=0.02)

    def test_rejects_bad_m(self):
        with pytest.raises(ValueError):
            sample_coarse_init(0, seed=1)


class TestDecodeCoarse:
    def test_zero_offset_head_returns_init(self, rng):
        dec = build_decoder()
        dec.offset_head.fc2.w.data[:] = 0
        dec.offset_head.fc2.b.data[:] = 0
        z = Tensor(rng.normal(size=(2, CFG.d_z)))
        init = rng.uniform(-1, 1, size=(2, CFG.m, 3))
        coarse, _, _ = dec.decode_coarse(z, init)
        np.testing.assert_allclose(coarse.data, init, atol=1e-12)

    def test_confidence_strictly_inside_unit_interval(self, rng):
        dec = build_decoder()
        z = Tensor(rng.normal(size=(1, CFG.d_z)))
        _, _, mu_c = dec.decode_coarse(z, rng.uniform(-1, 1, size=(1, CFG.m, 3)))
        assert ((mu_c.data > 0) & (mu_c.data < 1)).all()

    def test_features_independent_of_init(self, rng):
        dec = build_decoder()
        z = Tensor(rng.normal(size=(1, CFG.d_z)))
        _, f1, m1 = dec.decode_coarse(z, rng.uniform(-1, 1, size=(1, CFG.m, 3)))
        _, f2, m2 = dec.decode_coarse(z, rng.uniform(-1, 1, size=(1, CFG.m, 3)))
        np.testing.assert_array_equal(f1.data, f2.data)
        np.testing.assert_array_equal(m1.data, m2.data)


class TestFoldUpsample:
    def test_grid_lattice(self):
        grid = folding_grid(2)
        np.testing.assert_allclose(
            grid, [[-0.25, -0.25], [-0.25, 0.25], [0.25, -0.25], [0.25, 0.25]]
        )

    def test_zero_fold_replicates_coarse(self, rng):
        dec = build_decoder()
        dec.fold_net.fc2.w.data[:] = 0
        dec.fold_net.fc2.b.data[:] = 0
        coarse = Tensor(rng.uniform(-1, 1, size=(1, CFG.m, 3)))
        feats = Tensor(rng.normal(size=(1, CFG.m, CFG.d_fc)))
        fine = dec.fold_upsample(coarse, feats).data
        for m in range(CFG.m):
            for n in range(4):
                np.testing.assert_array_equal(fine[0, m * 4 + n], coarse.data[0, m])

    def test_row_ordering_is_m_major(self, rng):
        dec = build_decoder()
        coarse = Tensor(rng.uniform(-1, 1, size=(1, CFG.m, 3)))
        feats = Tensor(rng.normal(size=(1, CFG.m, CFG.d_fc)))
        fine = dec.fold_upsample(coarse, feats).data
        grid = folding_grid(CFG.g)
        # recompute row (m, n) independently from the fold net weights
        for m, n in [(0, 0), (2, 3), (CFG.m - 1, 1)]:
            inp = np.concatenate([feats.data[0, m], grid[n]])
            hidden = np.maximum(inp @ dec.fold_net.fc1.w.data + dec.fold_net.fc1.b.data, 0)
            offset = 0.5 * np.tanh(hidden @ dec.fold_net.fc2.w.data + dec.fold_net.fc2.b.data)
            np.testing.assert_allclose(fine[0, m * 4 + n], coarse.data[0, m] + offset, atol=1e-12)

    def test_identical_coarse_rows_fold_identically(self, rng):
        dec = build_decoder()
        row_pos = rng.uniform(-1, 1, size=3)
        row_feat = rng.normal(size=CFG.d_fc)
        coarse = Tensor(np.tile(row_pos, (1, CFG.m, 1)))
        feats = Tensor(np.tile(row_feat, (1, CFG.m, 1)))
        fine = dec.fold_upsample(coarse, feats).data.reshape(CFG.m, 4, 3)
        for m in range(1, CFG.m):
            np.testing.assert_array_equal(fine[m], fine[0])


class TestFineMask:
    def test_all_zero_head_gives_half(self, rng):
        dec = build_decoder()
        dec.fine_mask_head.fc2.w.data[:] = 0
        dec.fine_mask_head.fc2.b.data[:] = 0
        mu = dec.predict_fine_mask(
            Tensor(rng.normal(size=(1, CFG.m, CFG.d_fc))),
            Tensor(rng.uniform(0, 1, size=(1, CFG.m))),
        )
        np.testing.assert_array_equal(mu.data, 0.5)

    def test_block_locality(self, rng):
        dec = build_decoder()
        feats = rng.normal(size=(1, CFG.m, CFG.d_fc))
        mu_c = rng.uniform(0, 1, size=(1, CFG.m))
        base = dec.predict_fine_mask(Tensor(feats), Tensor(mu_c)).data.reshape(CFG.m, 4)
        perm = np.roll(np.arange(CFG.m), 1)
        rolled = dec.predict_fine_mask(
            Tensor(feats[:, perm]), Tensor(mu_c[:, perm])
        ).data.reshape(CFG.m, 4)
        np.testing.assert_array_equal(rolled, base[perm])


class TestDecodePatch:
    def _obb(self, rng):
        return fit_obb(rng.normal(size=(40, 3)) * [2.0, 1.0, 0.4])

    def test_bit_identical_repeat(self, rng):
        dec = build_decoder()
        obb = self._obb(rng)
        z = rng.normal(size=CFG.d_z)
        a = decode_patch(dec, z, obb, node_id=3, cell_index=1)
        b = decode_patch(dec, z, obb, node_id=3, cell_index=1)
        assert a.points_world.tobytes() == b.points_world.tobytes()
        assert a.confidence.tobytes() == b.confidence.tobytes()

    def test_seed_depends_on_ids(self, rng):
        dec = build_decoder()
        obb = self._obb(rng)
        z = rng.normal(size=CFG.d_z)
        a = decode_patch(dec, z, obb, node_id=3, cell_index=1)
        b = decode_patch(dec, z, obb, node_id=4, cell_index=1)
        assert not np.array_equal(a.points_world, b.points_world)
        assert decode_seed(3, 1) != decode_seed(4, 1)

    def test_extent_scaling_with_zero_offsets(self, rng):
        dec = build_decoder()
        for head in (dec.offset_head, dec.fold_net):
            head.fc2.w.data[:] = 0
            head.fc2.b.data[:] = 0
        z = rng.normal(size=CFG.d_z)
        obb1 = ObbAttributes([0, 0, 0], [2, 2, 2], np.eye(3))
        obb2 = ObbAttributes([0, 0, 0], [4, 4, 4], np.eye(3))
        a = decode_patch(dec, z, obb1, 0, 0)
        b = decode_patch(dec, z, obb2, 0, 0)
        np.testing.assert_allclose(b.coarse_points_world, 2.0 * a.coarse_points_world, atol=1e-9)

    def test_zero_offsets_stay_inside_obb(self, rng):
        dec = build_decoder()
        for head in (dec.offset_head, dec.fold_net):
            head.fc2.w.data[:] = 0
            head.fc2.b.data[:] = 0
        obb = self._obb(rng)
        rec = decode_patch(dec, rng.normal(size=CFG.d_z), obb, 5, 0)
        assert obb.contains(rec.points_world, slack=1e-6).all()

    def test_pruned_count_matches_threshold(self):
        for trial in range(100):
            rng = make_rng(600 + trial)
            dec = build_decoder(seed=trial % 7)
            obb = self._obb(rng)
            rec = decode_patch(dec, rng.normal(size=CFG.d_z) * 2, obb, trial, 0)
            kept = rec.pruned_points(0.5)
            assert len(kept) == int((rec.confidence >= 0.5).sum())
            assert 0 <= len(kept) <= CFG.n_points

    def test_config_asserts_n_equals_m_times_g(self):
        cfg = DecoderConfig(m=5, d_z=8, g=2)
        assert cfg.n_points == 20 and cfg.grid_points == 4
        with pytest.raises(ValueError):
            DecoderConfig(m=0, d_z=8)
