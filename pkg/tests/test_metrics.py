import json

import numpy as np
import pytest

from sparsesplat.errors import ValidationError
from sparsesplat.metrics import (build_report, psnr, register_perceptual,
                                 save_report_csv, save_report_json, ssim)


class TestPsnr:
    def test_identical_capped(self, rng):
        a = rng.uniform(0, 1, (16, 16, 3))
        assert psnr(a, a) == 99.0

    def test_constant_offset_formula(self, rng):
        a = rng.uniform(0, 0.9, (32, 32, 3))
        assert abs(psnr(a, a + 0.1) - 20.0) < 1e-9

    def test_matches_bruteforce(self, rng):
        a = rng.uniform(0, 1, (8, 8, 3))
        b = rng.uniform(0, 1, (8, 8, 3))
        mse = float(np.mean((a - b) ** 2))
        assert abs(psnr(a, b) - 10 * np.log10(1.0 / mse)) < 1e-9

    def test_symmetric(self, rng):
        a = rng.uniform(0, 1, (8, 8))
        b = rng.uniform(0, 1, (8, 8))
        assert psnr(a, b) == psnr(b, a)

    def test_permutation_invariance(self, rng):
        a = rng.uniform(0, 1, (8, 8))
        b = rng.uniform(0, 1, (8, 8))
        perm = rng.permutation(64)
        assert abs(psnr(a, b)
                   - psnr(a.ravel()[perm].reshape(8, 8),
                          b.ravel()[perm].reshape(8, 8))) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            psnr(np.zeros((4, 4)), np.zeros((5, 4)))


class TestSsim:
    def test_self_similarity_exact(self, rng):
        a = rng.uniform(0, 1, (24, 24, 3))
        assert ssim(a, a) == 1.0

    def test_inverted_checkerboard_negative(self):
        a = np.indices((16, 16)).sum(axis=0) % 2 * 1.0
        assert ssim(a, 1.0 - a) < 0.0

    def test_tiny_noise_near_one(self, rng):
        a = rng.uniform(0.2, 0.8, (24, 24))
        b = a + rng.normal(0, 1e-4, a.shape)
        assert ssim(a, b) > 0.999

    def test_window_larger_than_image(self):
        with pytest.raises(ValidationError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            ssim(np.zeros((16, 16)), np.zeros((16, 17)))

    def test_identical_spatial_transform_invariance(self, rng):
        a = rng.uniform(0, 1, (20, 20))
        b = rng.uniform(0, 1, (20, 20))
        assert abs(ssim(a, b) - ssim(a[::-1], b[::-1])) < 1e-12


class TestReports:
    def test_json_and_csv(self, tmp_path):
        report = build_report([3, 7], [20.0, 22.0], [0.8, 0.9])
        assert report["mean_psnr"] == 21.0
        save_report_json(tmp_path / "r.json", report)
        save_report_csv(tmp_path / "r.csv", report)
        loaded = json.loads((tmp_path / "r.json").read_text())
        assert loaded["frames"][1] == {"frame": 7, "psnr": 22.0, "ssim": 0.9}
        lines = (tmp_path / "r.csv").read_text().strip().splitlines()
        assert lines[0] == "frame,psnr,ssim"
        assert lines[-1].startswith("mean,")

    def test_perceptual_registry(self):
        register_perceptual("dummy", lambda a, b: 1.0)
        from sparsesplat.metrics import get_perceptual

        assert get_perceptual("dummy")(None, None) == 1.0
        with pytest.raises(ValidationError):
            get_perceptual("missing")
