"""Distance-field regression: fitting, closed-form inversion, gradients."""

from __future__ import annotations

import numpy as np
import pytest

from mcbfnav import gpdf
from mcbfnav.gpdf import GpdfFitError, KernelParams


def circle_points(n: int, radius: float = 1.0) -> np.ndarray:
    ang = 2.0 * np.pi * np.arange(n) / n
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def fd_gradient(model, p: np.ndarray, step: float = 1e-5) -> np.ndarray:
    offs = np.array([[step, 0.0], [-step, 0.0], [0.0, step], [0.0, -step]])
    d = gpdf.distance_many(model, p + offs)
    return np.array([d[0] - d[1], d[2] - d[3]]) / (2.0 * step)


# ----------------------------------------------------------------------- fit


def test_fit_single_point_unit_alpha():
    m = gpdf.fit(np.array([[0.3, -0.1]]), KernelParams())
    np.testing.assert_allclose(m.alpha, [1.0], atol=1e-14)


def test_fit_residual_small():
    m = gpdf.fit(circle_points(8), KernelParams())
    assert gpdf.fit_residual(m) <= 1e-8


def test_fit_duplicate_points_fails_without_jitter():
    pts = np.array([[0.4, -0.2], [0.4, -0.2]])
    with pytest.raises(GpdfFitError, match="jitter"):
        gpdf.fit(pts, KernelParams())
    m = gpdf.fit_with_jitter(pts, KernelParams())
    assert m.kernel.noise == pytest.approx(1e-6)


def test_kernel_params_validation():
    with pytest.raises(ValueError):
        KernelParams(sigma=0.0)
    with pytest.raises(ValueError):
        KernelParams(length_scale=-0.2)
    with pytest.raises(ValueError):
        KernelParams(noise=-1e-9)


# ------------------------------------------------------------------ distance


def test_single_point_distance_is_exact():
    m = gpdf.fit(np.array([[0.0, 0.0]]), KernelParams())
    assert gpdf.distance(m, np.array([0.3, 0.4])) == pytest.approx(0.5, abs=1e-12)
    assert gpdf.distance(m, np.array([0.0, 0.0])) == pytest.approx(0.0, abs=1e-9)


def test_two_point_distance_closed_form():
    """Two training points at (+-1, 0): the latent at the origin is the sum of
    both kernels scaled by the shared alpha, invertible by hand."""
    m = gpdf.fit(np.array([[1.0, 0.0], [-1.0, 0.0]]), KernelParams())
    got = gpdf.distance(m, np.array([0.0, 0.0]))
    want = 1.0 - 0.2 * np.log(2.0) + 0.2 * np.log(1.0 + np.exp(-10.0))
    assert got == pytest.approx(want, abs=1e-12)


def test_training_points_sit_near_zero():
    m = gpdf.fit(circle_points(8), KernelParams())
    d = gpdf.distance_many(m, m.points)
    assert np.abs(d).max() <= 1e-6


@pytest.mark.xfail(
    strict=True,
    reason="dense boundaries superpose their kernels, biasing deep-interior "
    "distances well below truth; tracked as a known model limitation",
)
def test_unit_circle_center_depth_reaches_truth():
    m = gpdf.fit(circle_points(200), KernelParams())
    assert gpdf.distance(m, np.zeros(2)) == pytest.approx(1.0, abs=0.05)


def test_unit_circle_center_depth_frozen():
    """Regression pin for the actual (biased) center depth of the dense model."""
    m = gpdf.fit(circle_points(200), KernelParams())
    assert gpdf.distance(m, np.zeros(2)) == pytest.approx(0.4518128, abs=1e-6)


def test_distance_continuity():
    m = gpdf.fit(circle_points(16), KernelParams())
    rng = np.random.default_rng(11)
    for _ in range(200):
        p = rng.uniform(-2.0, 2.0, 2)
        delta = rng.normal(size=2)
        delta *= 1e-4 / np.linalg.norm(delta)
        d0 = gpdf.distance(m, p)
        d1 = gpdf.distance(m, p + delta)
        bound = (np.linalg.norm(gpdf.gradient(m, p)) * 1.1 + 1e-9) * 1e-4
        assert abs(d1 - d0) <= bound


# ------------------------------------------------------------------ gradient


def test_single_point_gradient_radial():
    m = gpdf.fit(np.array([[0.0, 0.0]]), KernelParams())
    np.testing.assert_allclose(gpdf.gradient(m, np.array([2.0, 0.0])), [1.0, 0.0], atol=1e-6)


def test_bisector_gradient_has_no_axis_component():
    m = gpdf.fit(np.array([[1.0, 0.0], [-1.0, 0.0]]), KernelParams())
    g = gpdf.gradient(m, np.array([0.0, 0.7]))
    assert abs(g[0]) <= 1e-10
    assert g[1] > 0.0


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    m = gpdf.fit(rng.uniform(-1.0, 1.0, (10, 2)), KernelParams())
    for _ in range(100):
        p = rng.uniform(-2.0, 2.0, 2)
        if gpdf.is_saturated(m, p):
            continue
        np.testing.assert_allclose(gpdf.gradient(m, p), fd_gradient(m, p), atol=1e-4)


# ---------------------------------------------------------------- saturation


def test_far_field_saturates():
    m = gpdf.fit(np.array([[0.0, 0.0]]), KernelParams())
    far = np.array([10.0, 0.0])
    assert gpdf.is_saturated(m, far)
    assert gpdf.distance(m, far) == pytest.approx(m.max_distance)
    np.testing.assert_allclose(gpdf.gradient(m, far), [0.0, 0.0])


def test_distance_nondecreasing_along_ray():
    m = gpdf.fit(np.array([[0.0, 0.0]]), KernelParams())
    rs = np.linspace(0.0, 8.0, 200)
    d = gpdf.distance_many(m, np.stack([rs, np.zeros_like(rs)], axis=1))
    assert np.all(np.diff(d) >= -1e-12)


def test_float32_raster_path_consistent():
    m = gpdf.fit(circle_points(32), KernelParams())
    rng = np.random.default_rng(2)
    q = rng.uniform(-2.0, 2.0, (50, 2))
    d64 = gpdf.distance_many(m, q)
    d32 = gpdf.distance_many_f32(m, q).astype(np.float64)
    np.testing.assert_allclose(d32, d64, atol=1e-4)
