import numpy as np
import pytest

from dauconv.gaussian import blur_channels, blur_derivative_channels, build_bank


def naive_correlate_same(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Double-loop zero-padded correlation; the reference all blurs are checked against."""
    r = kernel.shape[0] // 2
    h, w = plane.shape
    out = np.zeros_like(plane, dtype=np.float64)
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < h and 0 <= xx < w:
                        acc += kernel[dy + r, dx + r] * plane[yy, xx]
            out[y, x] = acc
    return out


class TestBuildBank:
    def test_rejects_bad_sigma(self):
        for bad in (0.0, -1.0, np.nan, np.inf):
            with pytest.raises(ValueError):
                build_bank(bad)

    def test_half_sigma_center_value(self):
        # independent oracle: normalize exp(-(u^2+v^2)/(2*0.25)) over the 5x5 grid
        u = np.arange(-2, 3, dtype=np.float64)
        uu, vv = np.meshgrid(u, u)
        raw = np.exp(-(uu**2 + vv**2) / 0.5)
        expected_center = 1.0 / raw.sum()
        bank = build_bank(0.5)
        assert bank.radius == 2
        assert bank.g.shape == (5, 5)
        assert abs(bank.g[2, 2] - expected_center) < 1e-12

    @pytest.mark.parametrize("sigma", [0.3, 0.4, 0.5, 0.7, 0.8, 1.0, 2.0])
    def test_unit_sum(self, sigma):
        bank = build_bank(sigma)
        assert abs(bank.g.sum() - 1.0) < 1e-6
        assert abs(bank.dgx.sum()) < 1e-6
        assert abs(bank.dgy.sum()) < 1e-6

    def test_symmetries(self):
        bank = build_bank(0.5)
        np.testing.assert_allclose(bank.g, bank.g[::-1, :], atol=1e-15)
        np.testing.assert_allclose(bank.g, bank.g[:, ::-1], atol=1e-15)
        r = bank.radius
        assert bank.dgx[r, r + 1] > 0
        assert abs(bank.dgx[r, r + 1] + bank.dgx[r, r - 1]) < 1e-15  # odd in x
        np.testing.assert_allclose(bank.dgx, bank.dgx[::-1, :], atol=1e-15)  # even in y
        np.testing.assert_allclose(bank.dgy, bank.dgx.T, atol=1e-15)

    def test_separable(self):
        bank = build_bank(0.7)
        gx = bank.g.sum(axis=0)
        gy = bank.g.sum(axis=1)
        np.testing.assert_allclose(bank.g, np.outer(gy, gx), atol=1e-6)

    @pytest.mark.parametrize("sigma,radius", [(0.3, 1), (0.5, 2), (0.7, 3), (1.0, 3), (1.1, 4)])
    def test_truncation_radius(self, sigma, radius):
        assert build_bank(sigma).radius == radius


class TestBlur:
    def test_impulse_response(self):
        bank = build_bank(0.5)
        x = np.zeros((1, 1, 9, 9), np.float64)
        x[0, 0, 4, 4] = 1.0
        y = blur_channels(x, bank)
        np.testing.assert_allclose(y[0, 0, 2:7, 2:7], bank.g, atol=1e-12)

    def test_constant_plane(self):
        bank = build_bank(0.5)
        y = blur_channels(np.ones((1, 1, 9, 9), np.float32), bank)
        np.testing.assert_allclose(y[0, 0, 2:7, 2:7], 1.0, atol=1e-6)
        assert y[0, 0, 0, 0] < 1.0  # zero padding loses mass at the border

    def test_matches_naive_correlation(self):
        bank = build_bank(0.5)
        rng = np.random.default_rng(3)
        x = rng.normal(size=(1, 1, 9, 9))
        y = blur_channels(x, bank)
        np.testing.assert_allclose(y[0, 0], naive_correlate_same(x[0, 0], bank.g), atol=1e-6)

    def test_channelwise_independent(self):
        bank = build_bank(0.4)
        rng = np.random.default_rng(4)
        x = rng.normal(size=(2, 3, 6, 7)).astype(np.float32)
        y = blur_channels(x, bank)
        for c in range(3):
            np.testing.assert_array_equal(y[:, c : c + 1], blur_channels(x[:, c : c + 1], bank))


class TestBlurDerivative:
    def test_constant_plane_zero(self):
        bank = build_bank(0.5)
        y = blur_derivative_channels(np.ones((1, 1, 9, 9), np.float64), bank, "x")
        r = bank.radius
        np.testing.assert_allclose(y[0, 0, r:-r, r:-r], 0.0, atol=1e-5)

    def test_linear_ramp_moment(self):
        bank = build_bank(0.5)
        h = 11
        ramp = np.broadcast_to(np.arange(h, dtype=np.float64), (h, h)).copy()
        y = blur_derivative_channels(ramp[None, None], bank, "x")
        u = np.arange(-bank.radius, bank.radius + 1, dtype=np.float64)
        moment = (u[None, :] * bank.dgx).sum()  # oracle: response of slope-1 ramp
        r = bank.radius
        np.testing.assert_allclose(y[0, 0, r:-r, r:-r], moment, atol=1e-9)

    def test_impulse_response_is_reflected_kernel(self):
        # correlation's impulse response is the point-reflected kernel;
        # for the odd derivative kernels that is the negated kernel
        bank = build_bank(0.5)
        x = np.zeros((1, 1, 9, 9), np.float64)
        x[0, 0, 4, 4] = 1.0
        for axis, kern in (("x", bank.dgx), ("y", bank.dgy)):
            y = blur_derivative_channels(x, bank, axis)
            np.testing.assert_allclose(y[0, 0, 2:7, 2:7], kern[::-1, ::-1], atol=1e-12)
            np.testing.assert_allclose(y[0, 0, 2:7, 2:7], -kern, atol=1e-12)

    def test_matches_finite_difference_of_shifted_blur(self):
        # band-limited image with an exact analytic sub-pixel shift
        bank = build_bank(1.0)
        h, w = 32, 32

        def image(shift_x: float) -> np.ndarray:
            yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
            return np.sin(2 * np.pi * (1.0 * (xx + shift_x) + 0.5 * yy) / w)[None, None]

        eps = 1e-4
        fd = (blur_channels(image(eps), bank) - blur_channels(image(-eps), bank)) / (2 * eps)
        an = blur_derivative_channels(image(0.0), bank, "x")
        r = bank.radius
        interior_fd = fd[0, 0, r:-r, r:-r]
        interior_an = an[0, 0, r:-r, r:-r]
        rel = np.abs(interior_an - interior_fd).max() / np.abs(interior_fd).max()
        assert rel <= 5e-2

    def test_rejects_unknown_axis(self):
        with pytest.raises(ValueError):
            blur_derivative_channels(np.ones((1, 1, 3, 3), np.float32), build_bank(0.5), "z")
