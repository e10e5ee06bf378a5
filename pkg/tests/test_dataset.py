import json
import math

import numpy as np
import pytest

from aesim.dataset import (
    GlobalImage,
    HysteresisLoop,
    extract_patches,
    generate_synthetic_dataset,
    load_dataset,
    make_bias_sweep,
    save_dataset,
    scalarize_loop,
    structure_functional,
)
from aesim.errors import ConfigurationError, DatasetIOError, DimensionError


def rectangle_loop():
    """4x2 rectangle: bias in [-2, 2], branches at response -1 (up) and +1 (down)."""
    bias = np.array([-2, -1, 0, 1, 2, 2, 1, 0, -1, -2, -2], dtype=float)
    resp = np.array([-1, -1, -1, -1, -1, 1, 1, 1, 1, 1, -1], dtype=float)
    return HysteresisLoop(bias, resp)


def tanh_loop(vc_up, vc_dn, sat=1.0, offset=0.0, n_half=65):
    bias = make_bias_sweep(v_max=4.0, n_half=n_half)
    split = int(np.argmax(bias))
    resp = np.empty_like(bias)
    resp[: split + 1] = sat * np.tanh((bias[: split + 1] - vc_up) / 0.5) + offset
    resp[split + 1 :] = sat * np.tanh((bias[split + 1 :] - vc_dn) / 0.5) + offset
    return HysteresisLoop(bias, resp)


class TestGenerate:
    def test_same_seed_bit_identical(self):
        a = generate_synthetic_dataset(16, 16, rng_seed=9)
        b = generate_synthetic_dataset(16, 16, rng_seed=9)
        assert np.array_equal(a.image.values, b.image.values)
        assert np.array_equal(a.loops, b.loops)

    def test_different_seeds_differ(self):
        a = generate_synthetic_dataset(16, 16, rng_seed=1)
        b = generate_synthetic_dataset(16, 16, rng_seed=2)
        assert not np.array_equal(a.image.values, b.image.values)

    def test_shapes_64(self):
        ds = generate_synthetic_dataset(64, 64, rng_seed=0)
        assert ds.image.values.shape == (64, 64)
        assert ds.loops.shape[0] == 4096

    def test_noiseless_area_correlates_with_structure(self):
        ds = generate_synthetic_dataset(32, 32, loop_noise=0.0, rng_seed=4)
        patches = extract_patches(ds.image, 8)
        area = ds.scalarizer_field(patches, "area")
        sf = structure_functional(ds.image)
        struct = np.array([sf[r, c] for r, c in patches.locations])
        corr = np.corrcoef(struct, area)[0, 1]
        assert abs(corr) >= 0.3

    def test_invalid_dimensions(self):
        with pytest.raises(ConfigurationError):
            generate_synthetic_dataset(8, 32)
        with pytest.raises(ConfigurationError):
            generate_synthetic_dataset(32, 32, domain_scale=0.0)


class TestExtractPatches:
    def test_counts(self):
        img = GlobalImage(np.arange(100, dtype=float).reshape(10, 10))
        assert len(extract_patches(img, 8)) == 9

    def test_constant_image_identical_patches(self):
        img = GlobalImage(np.full((12, 12), 3.5))
        ps = extract_patches(img, 4)
        assert np.all(ps.patches == ps.patches[0])

    def test_k1_patches_are_pixels(self):
        img = GlobalImage(np.arange(20 * 16, dtype=float).reshape(20, 16))
        ps = extract_patches(img, 1)
        assert len(ps) == 20 * 16
        assert np.array_equal(ps.patches.ravel(), img.values.ravel())

    def test_k_too_large(self):
        img = GlobalImage(np.zeros((10, 10)))
        with pytest.raises(DimensionError):
            extract_patches(img, 11)

    def test_windows_match_image(self, rng):
        img = GlobalImage(rng.standard_normal((15, 13)))
        k = 5
        ps = extract_patches(img, k)
        n_c = 13 - k + 1
        for _ in range(20):
            i = int(rng.integers(len(ps)))
            r0, c0 = divmod(i, n_c)
            assert np.array_equal(ps.patches[i], img.values[r0 : r0 + k, c0 : c0 + k].ravel())

    def test_even_center_convention(self):
        img = GlobalImage(np.zeros((10, 10)))
        ps = extract_patches(img, 8)
        assert tuple(ps.locations[0]) == (3, 3)  # offset k/2 - 1


class TestScalarize:
    def test_rectangle_area(self):
        assert scalarize_loop(rectangle_loop(), "area") == pytest.approx(8.0)

    def test_rectangle_height(self):
        assert scalarize_loop(rectangle_loop(), "height") == pytest.approx(2.0)

    def test_imprint_midpoint(self):
        loop = tanh_loop(vc_up=1.5, vc_dn=-0.5)
        assert scalarize_loop(loop, "imprint") == pytest.approx(0.5, abs=1e-3)

    def test_imprint_symmetric_loop_is_zero(self):
        loop = tanh_loop(vc_up=1.0, vc_dn=-1.0)
        assert scalarize_loop(loop, "imprint") == pytest.approx(0.0, abs=1e-6)

    def test_imprint_undefined_is_flagged(self):
        # up branch pinned above zero: no crossing
        loop = tanh_loop(vc_up=1.0, vc_dn=-1.0, offset=2.0)
        assert math.isnan(scalarize_loop(loop, "imprint"))

    def test_area_reversal_invariance(self):
        loop = rectangle_loop()
        rev = HysteresisLoop(loop.bias[::-1].copy(), loop.response[::-1].copy())
        assert scalarize_loop(loop, "area") == pytest.approx(scalarize_loop(rev, "area"))

    def test_coincident_branches_zero_area(self):
        bias = make_bias_sweep(v_max=2.0, n_half=17)
        resp = np.tanh(bias)  # same curve both ways
        assert scalarize_loop(HysteresisLoop(bias, resp), "area") == pytest.approx(0.0, abs=1e-12)

    def test_unknown_kind(self):
        with pytest.raises(ConfigurationError):
            scalarize_loop(rectangle_loop(), "width")


class TestLoopInvariants:
    def test_too_short(self):
        with pytest.raises(ConfigurationError):
            HysteresisLoop([0.0, 1.0, 0.0], [0.0, 1.0, 0.0])

    def test_open_sweep_rejected(self):
        with pytest.raises(ConfigurationError):
            HysteresisLoop([0.0, 1.0, 2.0, 1.0], [0.0, 1.0, 0.0, -1.0])


class TestContainerIO:
    def test_round_trip(self, tmp_path):
        ds = generate_synthetic_dataset(16, 16, rng_seed=3)
        save_dataset(ds, tmp_path / "ds")
        loaded = load_dataset(tmp_path / "ds")
        # container precision is float32: values survive exactly at that precision
        assert np.array_equal(loaded.image.values, ds.image.values.astype(np.float32))
        assert np.array_equal(loaded.loops, ds.loops.astype(np.float32))
        # a second round trip is exact
        save_dataset(loaded, tmp_path / "ds2")
        again = load_dataset(tmp_path / "ds2")
        assert np.array_equal(again.image.values, loaded.image.values)
        assert np.array_equal(again.loops, loaded.loops)
        assert np.array_equal(again.bias, loaded.bias)

    def test_loop_count_mismatch(self, tmp_path):
        ds = generate_synthetic_dataset(16, 16, rng_seed=3)
        save_dataset(ds, tmp_path / "ds")
        manifest = json.loads((tmp_path / "ds" / "manifest.json").read_text())
        manifest["arrays"]["loops"]["shape"][0] = 100
        (tmp_path / "ds" / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(DatasetIOError, match="loops"):
            load_dataset(tmp_path / "ds")

    def test_truncated_payload(self, tmp_path):
        ds = generate_synthetic_dataset(16, 16, rng_seed=3)
        save_dataset(ds, tmp_path / "ds")
        binfile = tmp_path / "ds" / "loops.bin"
        binfile.write_bytes(binfile.read_bytes()[:-8])
        with pytest.raises(DatasetIOError, match="loops"):
            load_dataset(tmp_path / "ds")

    def test_non_finite_rejected(self, tmp_path):
        ds = generate_synthetic_dataset(16, 16, rng_seed=3)
        save_dataset(ds, tmp_path / "ds")
        arr = np.fromfile(tmp_path / "ds" / "image.bin", dtype="<f4")
        arr[5] = np.nan
        arr.tofile(tmp_path / "ds" / "image.bin")
        with pytest.raises(DatasetIOError, match="image"):
            load_dataset(tmp_path / "ds")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DatasetIOError):
            load_dataset(tmp_path)

    def test_latent_round_trip(self, tmp_path):
        ds = generate_synthetic_dataset(16, 16, rng_seed=3)
        ds.latent = np.random.default_rng(0).standard_normal((9, 2)).astype(np.float32)
        save_dataset(ds, tmp_path / "ds")
        loaded = load_dataset(tmp_path / "ds")
        assert np.array_equal(loaded.latent, ds.latent)
