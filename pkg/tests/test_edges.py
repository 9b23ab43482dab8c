import numpy as np
import pytest
import torch
from scipy import ndimage

from conftest import random_blob
from epps.edges import EdgeKind, EdgeOperator, boundary_band, edge_map, extract_edge_gt, kernel_of
from epps.errors import ConfigError, ValidationError

ALL_KINDS = list(EdgeKind)


def brute_force_gradient_edges(mask, kx):
    """Explicit 3x3 correlation with replicate padding, one pixel at a time."""
    h, w = mask.shape
    ky = kx.T
    out = np.zeros_like(mask)
    for r in range(h):
        for c in range(w):
            gx = gy = 0
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    v = mask[min(max(r + dr, 0), h - 1), min(max(c + dc, 0), w - 1)]
                    gx += kx[dr + 1, dc + 1] * v
                    gy += ky[dr + 1, dc + 1] * v
            out[r, c] = int(gx != 0 or gy != 0)
    return out


class TestKernels:
    def test_sobel_pair(self):
        kx, ky = kernel_of("sobel")
        np.testing.assert_array_equal(kx, [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]])
        np.testing.assert_array_equal(ky, kx.T)

    def test_prewitt_scharr_laplacian(self):
        np.testing.assert_array_equal(kernel_of(EdgeKind.PREWITT)[0], [[-1, 0, 1]] * 3)
        np.testing.assert_array_equal(kernel_of(EdgeKind.SCHARR)[0], [[-3, 0, 3], [-10, 0, 10], [-3, 0, 3]])
        (lap,) = kernel_of(EdgeKind.LAPLACIAN)
        np.testing.assert_array_equal(lap, [[0, 1, 0], [1, -4, 1], [0, 1, 0]])

    def test_laplacian_constant_patch(self):
        (lap,) = kernel_of(EdgeKind.LAPLACIAN)
        assert (lap * 7).sum() == 0
        assert ndimage.correlate(np.full((5, 5), 3), lap, mode="nearest").max() == 0

    def test_scharr_step_response(self):
        # unit step between columns 3 and 4: the x-stencil picks up 3 + 10 + 3
        m = np.zeros((8, 8), dtype=np.int64)
        m[:, 4:] = 1
        kx, _ = kernel_of(EdgeKind.SCHARR)
        resp = ndimage.correlate(m, kx, mode="nearest")
        np.testing.assert_array_equal(resp[1:-1, 3], 16)
        np.testing.assert_array_equal(resp[1:-1, 4], 16)
        assert (resp[:, [0, 1, 2, 5, 6, 7]] == 0).all()


class TestExtract:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_all_zero(self, kind):
        assert edge_map(np.zeros((8, 8), dtype=np.uint8), EdgeOperator(kind)).sum() == 0

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_all_one(self, kind):
        assert edge_map(np.ones((8, 8), dtype=np.uint8), EdgeOperator(kind)).sum() == 0

    def test_square_matches_brute_force(self):
        m = np.zeros((8, 8), dtype=np.int64)
        m[2:6, 2:6] = 1
        for kind in (EdgeKind.SOBEL, EdgeKind.SCHARR, EdgeKind.PREWITT):
            expected = brute_force_gradient_edges(m, kernel_of(kind)[0])
            np.testing.assert_array_equal(edge_map(m, EdgeOperator(kind)), expected)
        sobel = edge_map(m, EdgeOperator(EdgeKind.SOBEL))
        # two-pixel band around the square boundary; frame and interior are empty
        assert sobel.sum() == 32
        assert sobel[3:5, 3:5].sum() == 0
        assert sobel[[0, 7], :].sum() == 0 and sobel[:, [0, 7]].sum() == 0
        np.testing.assert_array_equal(sobel.astype(bool), boundary_band(m))

    def test_canny_square_is_inner_ring(self):
        m = np.zeros((8, 8), dtype=np.uint8)
        m[2:6, 2:6] = 1
        ring = m.copy()
        ring[3:5, 3:5] = 0
        np.testing.assert_array_equal(edge_map(m, EdgeOperator(EdgeKind.CANNY)), ring)

    def test_non_binary_rejected(self):
        with pytest.raises(ValidationError):
            edge_map(np.full((4, 4), 2))
        with pytest.raises(ValidationError):
            extract_edge_gt(torch.full((1, 4, 4), 0.5))

    def test_tensor_roundtrip(self):
        m = torch.zeros(1, 16, 16)
        m[:, 4:12, 4:12] = 1
        e = extract_edge_gt(m, EdgeOperator("sobel"))
        assert e.shape == (1, 16, 16) and e.dtype == torch.float32
        assert set(e.unique().tolist()) <= {0.0, 1.0}

    def test_dilation_grows_edges(self):
        m = np.zeros((32, 32), dtype=np.uint8)
        m[8:24, 8:24] = 1
        thin = edge_map(m, EdgeOperator("canny"))
        thick = edge_map(m, EdgeOperator("canny", dilation_radius=2))
        assert thick.sum() > thin.sum()
        assert (thick >= thin).all()

    def test_operator_validation(self):
        with pytest.raises(ConfigError):
            EdgeOperator("canny", canny_low=200, canny_high=100)
        with pytest.raises(ConfigError):
            EdgeOperator("sobel", dilation_radius=-1)
        with pytest.raises(ValueError):
            EdgeOperator("roberts")
        assert EdgeOperator("Canny").kind is EdgeKind.CANNY


class TestProperties:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_boundary_locality_and_flips(self, kind, blob_rng):
        op = EdgeOperator(kind)
        for _ in range(20):
            m = random_blob(blob_rng)
            e = edge_map(m, op)
            assert set(np.unique(e)) <= {0, 1}
            assert not (e.astype(bool) & ~boundary_band(m)).any()
            for axis in (0, 1):
                np.testing.assert_array_equal(edge_map(np.flip(m, axis), op), np.flip(e, axis))
