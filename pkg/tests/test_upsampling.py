"""Upsampling paths against each other and against loop oracles."""

import numpy as np
import pytest

from camkit.engines import Engine, SaliencyGrid
from camkit.upsampling import (
    SaliencyMap,
    UpsamplerKind,
    bilinear_upsample,
    gaussian_upsample,
    gaussian_upsample_direct,
    upsample,
    zero_insertion_filter_reference,
)

from .helpers import bilinear_loops, gaussian_upsample_loops

SIGMA_X = 31.7797
SIGMA_Y = 33.3606

rng = np.random.default_rng(3)


def _grid(values):
    return SaliencyGrid(values, class_id=0, engine=Engine.EXTENDED_CAM)


class TestGaussianUpsample:
    def test_zero_grid(self):
        out = gaussian_upsample(_grid(np.zeros((3, 3))), 12, 12, 2.0, 2.0)
        assert np.all(out.values == 0.0)

    def test_huge_sigma_flattens(self):
        out = gaussian_upsample(_grid(np.ones((1, 1))), 4, 4, 1e9, 1e9)
        assert np.abs(out.values - 1.0).max() < 1e-6

    def test_single_cell_peak_location_and_value(self):
        vals = np.zeros((14, 14))
        vals[7, 7] = 0.625
        out = gaussian_upsample(_grid(vals), 224, 224, SIGMA_X, SIGMA_Y).values
        peak = np.unravel_index(np.argmax(out), out.shape)
        assert peak == (112, 112)
        assert out[112, 112] == 0.625
        assert (out == out[112, 112]).sum() == 1  # unique maximum

    def test_separable_equals_direct(self):
        vals = rng.normal(size=(14, 14))
        sep = gaussian_upsample(_grid(vals), 224, 224, SIGMA_X, SIGMA_Y).values
        direct = gaussian_upsample_direct(vals, 224, 224, SIGMA_X, SIGMA_Y)
        scale = np.abs(direct).max()
        assert np.abs(sep - direct).max() <= 1e-9 * scale

    def test_separable_equals_python_quadruple_loop(self):
        vals = rng.normal(size=(4, 4))
        sep = gaussian_upsample(_grid(vals), 12, 12, 2.5, 3.0).values
        loop = gaussian_upsample_loops(vals, 12, 12, 2.5, 3.0)
        assert np.abs(sep - loop).max() <= 1e-9 * np.abs(loop).max()

    def test_center_offset_shifts_anchor(self):
        vals = np.zeros((2, 2))
        vals[0, 0] = 1.0
        out = gaussian_upsample(_grid(vals), 8, 8, 1.0, 1.0, center_offset=0.5).values
        peak = np.unravel_index(np.argmax(out), out.shape)
        assert peak == (2, 2)  # (8/2)*(0+0.5)

    def test_errors(self):
        with pytest.raises(ValueError, match="positive"):
            gaussian_upsample(_grid(np.ones((2, 2))), 8, 8, 0.0, 1.0)
        with pytest.raises(ValueError, match="larger than target"):
            gaussian_upsample(_grid(np.ones((4, 4))), 2, 8, 1.0, 1.0)


class TestBilinearUpsample:
    def test_constant_grid(self):
        out = bilinear_upsample(_grid(np.full((3, 3), 2.5)), 9, 11)
        assert np.allclose(out.values, 2.5, atol=1e-15)

    def test_align_corners_1x2(self):
        out = bilinear_upsample(_grid(np.array([[0.0, 1.0]])), 1, 4)
        assert np.allclose(out.values, [[0.0, 1 / 3, 2 / 3, 1.0]], atol=1e-15)

    def test_corners_map_exactly(self):
        vals = rng.normal(size=(5, 7))
        out = bilinear_upsample(_grid(vals), 20, 21).values
        assert out[0, 0] == vals[0, 0]
        assert out[-1, -1] == vals[-1, -1]
        assert out[0, -1] == vals[0, -1]
        assert out[-1, 0] == vals[-1, 0]

    def test_matches_lerp_oracle(self):
        vals = rng.normal(size=(6, 5))
        out = bilinear_upsample(_grid(vals), 17, 13).values
        oracle = bilinear_loops(vals, 17, 13)
        assert np.abs(out - oracle).max() <= 1e-12

    def test_degenerate_grid(self):
        with pytest.raises(ValueError, match="nonempty"):
            bilinear_upsample(np.zeros((0, 3)), 4, 4)


class TestZeroInsertionReference:
    def test_equals_gaussian_upsample(self):
        for _ in range(3):
            vals = rng.normal(size=(7, 7))
            a = gaussian_upsample(_grid(vals), 28, 28, 3.0, 4.0).values
            b = zero_insertion_filter_reference(vals, 28, 28, 3.0, 4.0).values
            assert np.abs(a - b).max() <= 1e-9 * np.abs(a).max()

    def test_zero_grid(self):
        out = zero_insertion_filter_reference(np.zeros((2, 2)), 8, 8, 1.0, 1.0)
        assert np.all(out.values == 0.0)

    def test_impulse_at_origin_reproduces_kernel(self):
        vals = np.zeros((2, 2))
        vals[0, 0] = 1.0
        out = zero_insertion_filter_reference(vals, 8, 8, 1.5, 2.0).values
        xs, ys = np.meshgrid(np.arange(8.0), np.arange(8.0), indexing="ij")
        kernel = np.exp(-(xs**2 / (2 * 1.5**2) + ys**2 / (2 * 2.0**2)))
        assert np.allclose(out, kernel, atol=1e-15)

    def test_non_integral_factor_rejected(self):
        with pytest.raises(ValueError, match="non-integral"):
            zero_insertion_filter_reference(np.ones((3, 3)), 8, 8, 1.0, 1.0)


class TestProperties:
    def test_linearity(self):
        g1 = rng.normal(size=(5, 5))
        g2 = rng.normal(size=(5, 5))
        a, b = 2.0, -0.75
        for f in (
            lambda g: gaussian_upsample(_grid(g), 20, 20, 3.0, 3.0).values,
            lambda g: bilinear_upsample(_grid(g), 20, 20).values,
        ):
            left = f(a * g1 + b * g2)
            right = a * f(g1) + b * f(g2)
            assert np.allclose(left, right, rtol=1e-12, atol=1e-12)

    def test_nonlocality_witness(self):
        # a far corner cell influences the opposite corner pixel under the
        # Gaussian but not under bilinear interpolation
        base = np.zeros((14, 14))
        bumped = base.copy()
        bumped[0, 0] = 1.0

        g0 = gaussian_upsample(_grid(base), 224, 224, SIGMA_X, SIGMA_Y).values
        g1 = gaussian_upsample(_grid(bumped), 224, 224, SIGMA_X, SIGMA_Y).values
        assert g1[223, 223] != g0[223, 223]

        b0 = bilinear_upsample(_grid(base), 224, 224).values
        b1 = bilinear_upsample(_grid(bumped), 224, 224).values
        assert b1[223, 223] == b0[223, 223]

    def test_translation_equivariance_whole_cell_shift(self):
        # last row zero so a one-cell shift moves no mass off the grid
        vals = rng.normal(size=(6, 6))
        vals[-1, :] = 0.0
        shifted = np.zeros_like(vals)
        shifted[1:, :] = vals[:-1, :]
        w = h = 24
        f = w // 6
        a = gaussian_upsample(_grid(vals), w, h, 2.0, 2.0).values
        b = gaussian_upsample(_grid(shifted), w, h, 2.0, 2.0).values
        assert np.allclose(b[f:, :], a[:-f, :], rtol=1e-12, atol=1e-12)

    def test_monotone_scaling_and_argmax_invariance(self):
        vals = rng.normal(size=(5, 5))
        for f in (
            lambda g: gaussian_upsample(_grid(g), 15, 15, 2.0, 2.0).values,
            lambda g: bilinear_upsample(_grid(g), 15, 15).values,
        ):
            base = f(vals)
            scaled = f(3.5 * vals)
            assert np.allclose(scaled, 3.5 * base, rtol=1e-12, atol=1e-12)
            assert np.argmax(scaled) == np.argmax(base)


class TestDispatch:
    def test_metadata_carried(self):
        grid = _grid(rng.normal(size=(4, 4)))
        m = upsample(grid, "gaussian", 8, 8, sigma_x=2.0, sigma_y=3.0)
        assert isinstance(m, SaliencyMap)
        assert m.upsampler is UpsamplerKind.GAUSSIAN
        assert (m.sigma_x, m.sigma_y) == (2.0, 3.0)
        assert m.source_engine is Engine.EXTENDED_CAM
        b = upsample(grid, "bilinear", 8, 8)
        assert b.upsampler is UpsamplerKind.BILINEAR

    def test_gaussian_needs_sigma(self):
        with pytest.raises(ValueError, match="sigma"):
            upsample(_grid(np.ones((2, 2))), "gaussian", 8, 8)
