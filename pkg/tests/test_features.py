"""Feature map, sampling, encoder, oracle, and FMAP format tests."""

import numpy as np
import pytest

from planealign.errors import BadMagic, DimOverflow, OutOfBounds, TruncatedFile
from planealign.features import (
    FeatureMap,
    ToyEncoder,
    encode,
    oracle_features,
    read_features,
    sample_feature,
    sample_features,
    write_features,
)
from planealign.geom import Sim2, make_rng


def random_fm(rng, hp=4, wp=5, c=8, patch=16):
    return FeatureMap(
        grid=rng.normal(size=(hp, wp, c)),
        patch=patch,
        source_size=(hp * patch, wp * patch),
    )


class TestSampleFeature:
    def test_patch_center_returns_normalized_patch_vector(self):
        rng = make_rng(1)
        fm = random_fm(rng)
        p = ((2 + 0.5) * 16, (1 + 0.5) * 16)  # center of cell (row 1, col 2)
        want = fm.grid[1, 2] / np.linalg.norm(fm.grid[1, 2])
        assert np.allclose(sample_feature(fm, p), want, atol=1e-12)

    def test_constant_map_same_unit_vector(self):
        fm = FeatureMap(grid=np.ones((3, 3, 4)) * 2.5, patch=16, source_size=(48, 48))
        rng = make_rng(2)
        ref = sample_feature(fm, (5.0, 5.0))
        for _ in range(10):
            p = rng.uniform(0, 48, 2)
            assert np.allclose(sample_feature(fm, p), ref, atol=1e-12)
        assert np.linalg.norm(ref) == pytest.approx(1.0, abs=1e-12)

    def test_matches_naive_four_tap_oracle(self):
        rng = make_rng(3)
        fm = random_fm(rng)
        for _ in range(100):
            p = rng.uniform(8.0, 56.0, 2)  # interior, away from clamped border
            u, v = p[0] / 16 - 0.5, p[1] / 16 - 0.5
            j0, i0 = int(np.floor(u)), int(np.floor(v))
            fu, fv = u - j0, v - i0
            mix = (
                (1 - fv) * (1 - fu) * fm.grid[i0, j0]
                + (1 - fv) * fu * fm.grid[i0, j0 + 1]
                + fv * (1 - fu) * fm.grid[i0 + 1, j0]
                + fv * fu * fm.grid[i0 + 1, j0 + 1]
            )
            assert np.allclose(sample_feature(fm, p), mix / np.linalg.norm(mix), atol=1e-12)

    def test_out_of_bounds_raises(self):
        fm = random_fm(make_rng(4))
        with pytest.raises(OutOfBounds):
            sample_feature(fm, (-0.1, 5.0))
        with pytest.raises(OutOfBounds):
            sample_feature(fm, (5.0, 64.1))

    def test_zero_region_returns_zero_vector(self):
        fm = FeatureMap(grid=np.zeros((2, 2, 4)), patch=16, source_size=(32, 32))
        out = sample_feature(fm, (16.0, 16.0))
        assert np.all(out == 0.0)

    def test_unit_norm_property(self):
        rng = make_rng(5)
        fm = random_fm(rng)
        pts = rng.uniform(0, 64, (200, 2))
        norms = np.linalg.norm(sample_features(fm, pts), axis=1)
        assert np.allclose(norms, 1.0, atol=1e-9)


class TestEncoder:
    def test_shape_law(self):
        enc = ToyEncoder.init(seed=0)
        fm = encode(enc, np.zeros((64, 64)))
        assert fm.grid.shape == (4, 4, enc.channels)
        fm = encode(enc, np.zeros((70, 50, 3)))
        assert fm.grid.shape == (5, 4, enc.channels)

    def test_deterministic(self):
        enc = ToyEncoder.init(seed=1)
        img = make_rng(6).random((48, 48))
        a = encode(enc, img)
        b = encode(enc, img)
        assert np.array_equal(a.grid, b.grid)

    def test_zero_image_zeroed_output_layer_gives_bias(self):
        enc = ToyEncoder.init(seed=2)
        enc.params["w4"][:] = 0.0
        enc.params["b4"][:] = 1.5
        fm = encode(enc, np.zeros((32, 32)))
        assert np.allclose(fm.grid, 1.5)

    def test_parameter_budget(self):
        assert ToyEncoder.init(seed=0).n_params() <= 100_000

    def test_interior_shift_equivariance(self):
        enc = ToyEncoder.init(seed=3)
        rng = make_rng(7)
        img = rng.random((128, 128))
        shifted = np.zeros_like(img)
        shifted[:, 16:] = img[:, :-16]  # shift right by one patch
        a = encode(enc, img).grid
        b = encode(enc, shifted).grid
        # interior cells (receptive field clear of the shifted-in border)
        # equal the unshifted grid moved one cell
        assert np.allclose(b[:, 3:6], a[:, 2:5], atol=1e-12)

    def test_save_load_round_trip(self, tmp_path):
        enc = ToyEncoder.init(seed=4)
        enc.save(tmp_path / "enc.npz")
        back = ToyEncoder.load(tmp_path / "enc.npz")
        img = make_rng(8).random((32, 32))
        assert np.array_equal(encode(enc, img).grid, encode(back, img).grid)

    def test_gray_equals_replicated_rgb(self):
        enc = ToyEncoder.init(seed=5)
        img = make_rng(9).random((32, 32))
        rgb = np.repeat(img[:, :, None], 3, axis=2)
        assert np.array_equal(encode(enc, img).grid, encode(enc, rgb).grid)


class TestOracleFeatures:
    def test_corresponding_pair_has_unit_similarity(self):
        m = Sim2(1.2, 0.4, (20.0, -10.0))
        fd, ff = oracle_features(m, (128, 128), (256, 256), seed=3)
        # density patch center -> its gt floorplan location
        from planealign.features import sample_features as sf
        from planealign.geom import sim2_apply

        q_d = np.array([[40.0, 40.0]])
        q_f = sim2_apply(m, q_d)
        a = sf(fd, q_d)[0]
        b = sf(ff, q_f)[0]
        assert a @ b > 1 - 1e-3  # bilinear interp leaves a tiny gap

    def test_exact_at_patch_centers(self):
        m = Sim2(1.0, 0.0, (0.0, 0.0))
        fd, ff = oracle_features(m, (64, 64), (64, 64), seed=4)
        a = fd.grid[1, 2] / np.linalg.norm(fd.grid[1, 2])
        b = ff.grid[1, 2] / np.linalg.norm(ff.grid[1, 2])
        assert a @ b == pytest.approx(1.0, abs=1e-6)

    def test_distant_locations_dissimilar(self):
        m = Sim2(1.0, 0.0, (0.0, 0.0))
        fd, ff = oracle_features(m, (256, 256), (256, 256), seed=5)
        flat_f = ff.flat() / np.linalg.norm(ff.flat(), axis=1, keepdims=True)
        flat_d = fd.flat() / np.linalg.norm(fd.flat(), axis=1, keepdims=True)
        cents = ff.centroids()
        sims = flat_d @ flat_f.T
        dists = np.linalg.norm(cents[:, None, :] - cents[None, :, :], axis=2)
        far = dists > 2 * 16
        # corresponding similarity (diag, == 1) beats any far pair
        assert sims[far].max() < 1.0 - 1e-6
        # antipodal corners are clearly dissimilar
        assert sims[0, -1] < 0.5


class TestFmapFormat:
    def test_round_trip_bitwise(self, tmp_path):
        rng = make_rng(10)
        fm = FeatureMap(
            grid=rng.normal(size=(3, 4, 5)).astype(np.float32).astype(float),
            patch=16,
            source_size=(48, 64),
        )
        path = tmp_path / "a.fmap"
        write_features(fm, path)
        back = read_features(path)
        assert np.array_equal(back.grid, fm.grid)
        assert back.patch == 16
        # file-level round trip
        path2 = tmp_path / "b.fmap"
        write_features(back, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_bridge_shape_fixture(self, tmp_path):
        # cross-component format: base-ViT-like dims (C=768, patch 16)
        rng = make_rng(11)
        fm = FeatureMap(
            grid=rng.normal(size=(4, 4, 768)).astype(np.float32).astype(float),
            patch=16,
            source_size=(64, 64),
        )
        path = tmp_path / "vit.fmap"
        write_features(fm, path)
        back = read_features(path)
        assert back.grid.shape == (4, 4, 768)
        assert np.allclose(
            np.linalg.norm(back.flat(), axis=1), np.linalg.norm(fm.flat(), axis=1), rtol=1e-6
        )

    def test_truncated_raises(self, tmp_path):
        rng = make_rng(12)
        fm = FeatureMap(grid=rng.normal(size=(2, 2, 4)), patch=16, source_size=(32, 32))
        path = tmp_path / "c.fmap"
        write_features(fm, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-7])
        with pytest.raises(TruncatedFile):
            read_features(path)
        path.write_bytes(blob + b"xx")
        with pytest.raises(TruncatedFile):
            read_features(path)

    def test_bad_magic_raises(self, tmp_path):
        path = tmp_path / "d.fmap"
        path.write_bytes(b"NOPE" + b"\0" * 32)
        with pytest.raises(BadMagic):
            read_features(path)

    def test_dim_overflow_raises(self, tmp_path):
        import struct

        path = tmp_path / "e.fmap"
        path.write_bytes(struct.pack("<4sHHIII", b"FMAP", 1, 16, 0, 4, 4))
        with pytest.raises(DimOverflow):
            read_features(path)
        path.write_bytes(struct.pack("<4sHHIII", b"FMAP", 1, 16, 2**16, 2**16, 64))
        with pytest.raises(DimOverflow):
            read_features(path)
