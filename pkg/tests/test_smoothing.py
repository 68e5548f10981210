import math

import numpy as np
import pytest
from loguru import logger

from fastmap.smoothing import (
    Grid,
    Volume,
    color,
    fit_fwhm_mle,
    gaussian_field,
    golden_section_max,
    kernel_spectrum,
    periodic_gaussian_kernel,
    profile_loglik,
    rho_of,
    robust_smooth,
    smooth,
    whiten,
)


def test_grid_defaults() -> None:
    grid = Grid((8, 6))
    assert grid.voxel_sizes == (1.0, 1.0)
    assert grid.n_sites == grid.size == 48
    assert grid.mask.all()


@pytest.mark.parametrize(
    ("dims", "match"),
    [((8,), "2 or 3 axes"), ((8, 8, 8, 8), "2 or 3 axes"), ((8, 3), ">= 4")],
)
def test_grid_rejects_dims(dims: tuple[int, ...], match: str) -> None:
    with pytest.raises(ValueError, match=match):
        Grid(dims)


def test_grid_rejects_masks() -> None:
    with pytest.raises(ValueError, match="selects no sites"):
        Grid((4, 4), mask=np.zeros((4, 4), dtype=bool))
    with pytest.raises(ValueError, match="does not match"):
        Grid((4, 4), mask=np.ones((4, 5), dtype=bool))
    with pytest.raises(ValueError, match="voxel sizes"):
        Grid((4, 4), voxel_sizes=(1.0,))


def test_volume_masks_outside_sites() -> None:
    mask = np.ones((4, 4), dtype=bool)
    mask[0, 0] = False
    vol = Volume.from_array(np.arange(16.0).reshape(4, 4), mask)
    assert math.isnan(vol.values[0, 0])
    assert vol.filled()[0, 0] == 0.0
    assert vol.in_mask().size == 15
    with pytest.raises(ValueError, match="finite"):
        Volume.from_array(np.full((4, 4), np.inf))


def test_kernel_is_normalized_and_symmetric() -> None:
    kernel = periodic_gaussian_kernel(Grid((16, 12)), 3.0)
    assert kernel.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(kernel[1:, 1:], kernel[:0:-1, :0:-1])
    with pytest.raises(ValueError, match="positive"):
        periodic_gaussian_kernel(Grid((16, 12)), 0.0)


def test_spectrum_has_unit_mean() -> None:
    spec = kernel_spectrum(Grid((32, 32)), 2.5)
    assert spec.lam.mean() == pytest.approx(1.0, rel=1e-9)
    assert spec.lambda0 > 1.0


def test_whiten_inverts_color() -> None:
    rng = np.random.default_rng(0)
    grid = Grid((32, 24))
    vol = Volume(grid, rng.standard_normal(grid.dims))
    spec = kernel_spectrum(grid, 2.0)
    np.testing.assert_allclose(whiten(color(vol, spec), spec).values, vol.values, atol=1e-8)


def test_spectrum_dims_must_match() -> None:
    vol = Volume(Grid((8, 8)), np.zeros((8, 8)))
    with pytest.raises(ValueError, match="do not match"):
        whiten(vol, kernel_spectrum(Grid((8, 10)), 2.0))


def test_smooth_keeps_white_noise_variance() -> None:
    rng = np.random.default_rng(1)
    grid = Grid((128, 128))
    smoothed = smooth(Volume(grid, rng.standard_normal(grid.dims)), 3.0)
    assert smoothed.values.var() == pytest.approx(1.0, abs=0.2)


def test_smooth_constant_scales_by_root_lambda0() -> None:
    grid = Grid((16, 16))
    spec = kernel_spectrum(grid, 3.0)
    smoothed = smooth(Volume(grid, np.ones(grid.dims)), 3.0)
    np.testing.assert_allclose(smoothed.values, math.sqrt(spec.lambda0))


def test_gaussian_field_respects_mask() -> None:
    mask = np.zeros((16, 16), dtype=bool)
    mask[4:12, 4:12] = True
    vol = gaussian_field(Grid((16, 16), mask=mask), 2.0, np.random.default_rng(2))
    assert np.isnan(vol.values[~mask]).all()
    assert np.isfinite(vol.values[mask]).all()


def test_golden_section_max() -> None:
    assert golden_section_max(lambda x: -((x - 2.0) ** 2), 0.0, 5.0) == pytest.approx(
        2.0, abs=1e-3
    )
    assert golden_section_max(lambda x: x, 3.0, 3.0) == 3.0


def test_profile_loglik_prefers_true_bandwidth() -> None:
    grid = Grid((64, 64))
    vol = gaussian_field(grid, 3.0, np.random.default_rng(3))
    assert profile_loglik(vol, 3.0) > profile_loglik(vol, 1.0)
    assert profile_loglik(vol, 3.0) > profile_loglik(vol, 8.0)


def test_fit_fwhm_mle_recovers_bandwidth() -> None:
    grid = Grid((64, 64))
    vol = gaussian_field(grid, 3.0, np.random.default_rng(4))
    assert fit_fwhm_mle(vol) == pytest.approx(3.0, abs=0.5)


def test_fit_fwhm_mle_white_noise_stays_small() -> None:
    rng = np.random.default_rng(5)
    grid = Grid((64, 64))
    h = fit_fwhm_mle(Volume(grid, rng.standard_normal(grid.dims)))
    assert 0.5 <= h < 1.2


def test_fit_fwhm_mle_rejects_bounds() -> None:
    vol = Volume(Grid((8, 8)), np.zeros((8, 8)))
    with pytest.raises(ValueError, match="h_min < h_max"):
        fit_fwhm_mle(vol, 5.0, 2.0)


def test_robust_smooth_constant_field() -> None:
    vol = Volume(Grid((8, 8)), np.full((8, 8), 2.0))
    result = robust_smooth(vol)
    assert result.volume is vol
    assert 0.5 <= result.fwhm <= 20.0


def test_robust_smooth_reduces_noise() -> None:
    rng = np.random.default_rng(6)
    rows, cols = np.indices((32, 32))
    truth = np.sin(rows / 6.0) + np.cos(cols / 8.0)
    vol = Volume(Grid((32, 32)), truth + 0.3 * rng.standard_normal((32, 32)))
    result = robust_smooth(vol, robust=False)
    error_before = np.abs(vol.values - truth).mean()
    error_after = np.abs(result.volume.values - truth).mean()
    assert error_after < 0.6 * error_before


def test_robust_smooth_resists_outlier() -> None:
    rng = np.random.default_rng(7)
    rows, cols = np.indices((32, 32))
    truth = rows / 31.0 + cols / 31.0
    values = truth + 0.05 * rng.standard_normal((32, 32))
    values[16, 16] = 50.0
    vol = Volume(Grid((32, 32)), values)
    plain = robust_smooth(vol, robust=False).volume.values
    robust = robust_smooth(vol, robust=True).volume.values
    assert abs(robust[16, 16] - truth[16, 16]) < abs(plain[16, 16] - truth[16, 16])
    assert abs(robust[16, 17] - truth[16, 17]) < 0.5


def test_robust_smooth_masked() -> None:
    rng = np.random.default_rng(8)
    mask = np.zeros((24, 24), dtype=bool)
    mask[3:21, 5:19] = True
    vol = Volume(Grid((24, 24), mask=mask), rng.standard_normal((24, 24)))
    result = robust_smooth(vol)
    assert np.isnan(result.volume.values[~mask]).all()
    assert np.isfinite(result.volume.values[mask]).all()


def _dense_correlation(grid: Grid, h: float) -> np.ndarray:
    kernel = periodic_gaussian_kernel(grid, h)
    acf = np.array(
        [
            [
                np.sum(kernel * np.roll(kernel, (-i, -j), axis=(0, 1)))
                for j in range(grid.dims[1])
            ]
            for i in range(grid.dims[0])
        ]
    ) / np.sum(kernel * kernel)
    rows, cols = np.indices(grid.dims).reshape(2, -1)
    return acf[
        (rows[None, :] - rows[:, None]) % grid.dims[0],
        (cols[None, :] - cols[:, None]) % grid.dims[1],
    ]


def test_spectral_operators_match_dense_matrices() -> None:
    grid = Grid((16, 16))
    h = 2.0
    spec = kernel_spectrum(grid, h)
    dense = _dense_correlation(grid, h)
    np.testing.assert_allclose(np.diag(dense), 1.0)

    w, v = np.linalg.eigh(dense)
    inv_half = (v / np.sqrt(w)) @ v.T
    assert rho_of(spec) == pytest.approx(inv_half[0].sum(), abs=1e-6)
    log_det = np.linalg.slogdet(dense)[1]
    assert float(np.sum(np.log(spec.lam))) == pytest.approx(log_det, abs=1e-6)

    x = np.random.default_rng(12).standard_normal(grid.dims)
    vol = Volume(grid, x)
    np.testing.assert_allclose(whiten(vol, spec).values.ravel(), inv_half @ x.ravel(), atol=1e-6)

    flat = x.ravel()
    expected = (
        -0.5 * flat.size * math.log(2.0 * math.pi)
        - 0.5 * np.linalg.slogdet(dense)[1]
        - 0.5 * flat @ np.linalg.solve(dense, flat)
    )
    assert profile_loglik(vol, h) == pytest.approx(expected, abs=1e-6)


@pytest.mark.slow
def test_fit_fwhm_mle_recovers_bandwidth_on_full_grid() -> None:
    grid = Grid((128, 128))
    rng = np.random.default_rng(13)
    estimates = [fit_fwhm_mle(gaussian_field(grid, 4.0, rng)) for _ in range(10)]
    assert sum(3.5 <= h <= 4.5 for h in estimates) >= 9


def test_robust_smooth_standardizes_by_noise_gain() -> None:
    rng = np.random.default_rng(14)
    rows, cols = np.indices((32, 32))
    truth = np.sin(rows / 6.0) + np.cos(cols / 8.0)
    vol = Volume(Grid((32, 32)), truth + 0.3 * rng.standard_normal((32, 32)))
    result = robust_smooth(vol, robust=False)
    assert 0.0 < result.gain < 1.0
    np.testing.assert_allclose(
        result.standardized.values, result.volume.values / result.gain, rtol=1e-12
    )


def test_robust_smooth_masked_converges() -> None:
    rng = np.random.default_rng(15)
    rows, cols = np.indices((48, 48))
    truth = np.sin(rows / 7.0) + np.cos(cols / 9.0)
    mask = np.zeros((48, 48), dtype=bool)
    mask[6:40, 10:42] = True
    vol = Volume(Grid((48, 48), mask=mask), truth + 0.3 * rng.standard_normal((48, 48)))

    warnings: list[str] = []
    handler = logger.add(warnings.append, level="WARNING", format="{message}")
    try:
        result = robust_smooth(vol)
    finally:
        logger.remove(handler)

    assert not warnings
    error_before = np.abs(vol.values - truth)[mask].mean()
    error_after = np.abs(result.volume.values - truth)[mask].mean()
    assert error_after < 0.6 * error_before
