"""Motion prediction: velocity fits, reachable-set boundaries, map stacks."""

from __future__ import annotations

import numpy as np
import pytest

from mcbfnav.geometry import polygon_contains
from mcbfnav.prediction import (
    ObstacleTrack,
    ProbMapFormatError,
    ProbMapStack,
    cvm_efrs,
    cvm_velocity,
    load_probmap_stack,
    probmap_efrs,
    save_probmap_stack,
)


def line_track(v, n=8, dt=0.1, radius=0.3, p0=(0.0, 0.0)) -> ObstacleTrack:
    track = ObstacleTrack(obstacle_id="p", radius=radius)
    p0 = np.asarray(p0, dtype=float)
    v = np.asarray(v, dtype=float)
    for k in range(n):
        track.append(k * dt, p0 + v * (k * dt))
    return track


def blob_stack(centers, sigma=0.3, res=0.05, lo=-1.5, hi=1.5, steps=1) -> ProbMapStack:
    xs = np.arange(lo, hi + res / 2, res)
    gx, gy = np.meshgrid(xs, xs)
    m = np.zeros_like(gx)
    for c in centers:
        m = np.maximum(m, np.exp(-((gx - c[0]) ** 2 + (gy - c[1]) ** 2) / (2 * sigma**2)))
    maps = np.repeat(m[None] / steps, steps, axis=0)
    return ProbMapStack(steps, len(xs), len(xs), res, np.array([lo, lo]), 0.2, maps)


# ----------------------------------------------------------------- velocity


def test_single_sample_gives_zero_velocity():
    track = ObstacleTrack(obstacle_id="p", radius=0.3)
    track.append(0.0, np.array([1.0, 2.0]))
    np.testing.assert_allclose(cvm_velocity(track), [0.0, 0.0])


def test_velocity_exact_on_linear_motion():
    track = line_track([0.5, 0.0])
    np.testing.assert_allclose(cvm_velocity(track), [0.5, 0.0], atol=1e-9)


def test_velocity_robust_to_small_noise():
    rng = np.random.default_rng(4)
    track = ObstacleTrack(obstacle_id="p", radius=0.3)
    for k in range(8):
        t = k * 0.1
        track.append(t, np.array([0.5 * t, 0.0]) + rng.normal(0.0, 1e-3, 2))
    np.testing.assert_allclose(cvm_velocity(track), [0.5, 0.0], atol=1e-2)


def test_velocity_uses_trailing_window():
    """Early history pointing the other way must not pollute the fit."""
    track = ObstacleTrack(obstacle_id="p", radius=0.3)
    for k in range(5):
        track.append(k * 0.1, np.array([-k * 0.1, 3.0]))
    t0 = 0.5
    p0 = np.array([-0.4, 3.0])
    for k in range(8):
        track.append(t0 + k * 0.1, p0 + np.array([0.5, 0.0]) * (k * 0.1))
    np.testing.assert_allclose(cvm_velocity(track), [0.5, 0.0], atol=1e-9)


def test_track_validation():
    track = ObstacleTrack(obstacle_id="p", radius=0.3)
    track.append(0.0, np.zeros(2))
    with pytest.raises(ValueError):
        track.append(0.0, np.ones(2))  # non-increasing time
    with pytest.raises(ValueError):
        ObstacleTrack(obstacle_id="p", radius=0.0)


# ------------------------------------------------------------------- rhombus


def test_stationary_efrs_is_a_disc():
    track = ObstacleTrack(obstacle_id="p", radius=0.3)
    track.append(0.0, np.array([2.0, -1.0]))
    efrs = cvm_efrs(track, tau_max=4.0, margin=0.1)
    assert efrs.boundary.closed
    r = np.linalg.norm(efrs.boundary.points - [2.0, -1.0], axis=1)
    np.testing.assert_allclose(r, 0.4, atol=2e-3)
    assert polygon_contains(efrs.boundary, np.array([2.0, -1.0]))


def test_moving_efrs_extends_ahead_only():
    track = line_track([1.0, 0.0], p0=(0.5, 0.0))
    p0 = track.latest
    efrs = cvm_efrs(track, tau_max=4.0, margin=0.1)
    xs = efrs.boundary.points[:, 0]
    ys = efrs.boundary.points[:, 1]
    assert xs.max() >= p0[0] + 4.0
    assert xs.min() >= p0[0] - 0.4 - 1e-6  # no more than one footprint behind
    # widest at mid-horizon: half-width 0.4 + 0.25 * |v| * tau/2 = 0.9
    assert np.abs(ys).max() == pytest.approx(0.9, abs=5e-3)
    assert polygon_contains(efrs.boundary, p0)
    assert efrs.source == "cvm"
    assert efrs.boundary.n <= 200


def test_efrs_grows_with_horizon():
    """Vertices of the short-horizon region, shrunk slightly toward its
    centerline midpoint (the region is convex), land inside the longer one.
    The tail caps of both regions coincide, so raw vertices would sit exactly
    on the shared boundary."""
    track = line_track([0.8, 0.3])
    small = cvm_efrs(track, tau_max=1.0, margin=0.1)
    large = cvm_efrs(track, tau_max=2.5, margin=0.1)
    mid = track.latest + cvm_velocity(track) * 0.5
    for v in small.boundary.points[::5]:
        assert polygon_contains(large.boundary, mid + 0.999 * (v - mid))


def test_efrs_rotation_equivariance():
    ang = 0.7
    R = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
    track = line_track([1.0, 0.0], p0=(0.3, -0.2))
    rotated = ObstacleTrack(obstacle_id="p", radius=0.3)
    for t, p in zip(track.times, track.positions):
        rotated.append(t, R @ p)
    straight = cvm_efrs(track, tau_max=2.0, margin=0.1)
    turned = cvm_efrs(rotated, tau_max=2.0, margin=0.1)
    np.testing.assert_allclose(turned.boundary.points, straight.boundary.points @ R.T, atol=1e-6)


# ------------------------------------------------------------------ probmaps


def test_probmap_all_zero_yields_nothing():
    stack = blob_stack([])
    assert probmap_efrs(stack) == []


def test_probmap_blob_half_height_isoline():
    stack = blob_stack([(0.0, 0.0)], sigma=0.3)
    out = probmap_efrs(stack, delta_kappa=0.5)
    assert len(out) == 1
    assert out[0].obstacle_id == "probmap/0"
    assert out[0].source == "probmap"
    r_half = 0.3 * np.sqrt(2.0 * np.log(2.0))
    radii = np.linalg.norm(out[0].boundary.points, axis=1)
    assert np.abs(radii - r_half).max() <= stack.resolution


def test_probmap_two_blobs_two_regions():
    stack = blob_stack([(-0.8, 0.0), (0.8, 0.0)], sigma=0.2)
    out = probmap_efrs(stack, delta_kappa=0.5)
    assert len(out) == 2
    assert {e.obstacle_id for e in out} == {"probmap/0", "probmap/1"}


def test_probmap_thresholds_nest():
    stack = blob_stack([(0.0, 0.0)], sigma=0.35)
    loose = probmap_efrs(stack, delta_kappa=0.3)
    tight = probmap_efrs(stack, delta_kappa=0.7)
    assert len(loose) == 1 and len(tight) == 1
    for v in tight[0].boundary.points[::7]:
        assert polygon_contains(loose[0].boundary, v)


def test_probmap_stack_shape_validation():
    with pytest.raises(ValueError, match="shape"):
        ProbMapStack(3, 4, 4, 0.1, np.zeros(2), 0.2, np.zeros((2, 4, 4)))
    stack = blob_stack([], steps=5)
    assert stack.tau_max == pytest.approx(1.0)


# ---------------------------------------------------------------- stack files


def test_stack_file_roundtrip_binary_and_text(tmp_path):
    stack = blob_stack([(0.1, -0.2)], sigma=0.3, steps=3)
    for encoding, atol in (("float32", 1e-7), ("text", 0.0)):
        path = tmp_path / f"stack_{encoding}.pm"
        save_probmap_stack(stack, path, encoding=encoding)
        loaded = load_probmap_stack(path)
        assert loaded.steps == 3
        assert loaded.resolution == stack.resolution
        np.testing.assert_allclose(loaded.origin, stack.origin)
        np.testing.assert_allclose(loaded.maps, stack.maps, atol=atol)


def _write_stack_bytes(tmp_path, name: str, header: str, payload: bytes):
    path = tmp_path / name
    path.write_bytes(header.encode() + payload)
    return path


def test_stack_file_errors_name_the_field(tmp_path):
    ok_payload = np.zeros(2 * 2 * 2, dtype="<f4").tobytes()
    head = "probmap v1\nsteps 2\nwidth 2\nheight 2\nresolution 0.1\norigin_x 0\norigin_y 0\nstep_duration 0.2\ndata\n"

    bad_magic = _write_stack_bytes(tmp_path, "m.pm", head.replace("probmap v1", "probmap v9"), ok_payload)
    with pytest.raises(ProbMapFormatError, match="magic"):
        load_probmap_stack(bad_magic)

    missing = _write_stack_bytes(tmp_path, "f.pm", head.replace("resolution 0.1\n", ""), ok_payload)
    with pytest.raises(ProbMapFormatError, match="resolution"):
        load_probmap_stack(missing)

    short = _write_stack_bytes(tmp_path, "s.pm", head, ok_payload[:-8])
    with pytest.raises(ProbMapFormatError, match="expected"):
        load_probmap_stack(short)

    no_marker = tmp_path / "d.pm"
    no_marker.write_bytes(b"probmap v1\nsteps 2\n")
    with pytest.raises(ProbMapFormatError, match="data"):
        load_probmap_stack(no_marker)


def test_stack_file_range_check_reports_flat_index(tmp_path):
    values = np.zeros(2 * 2 * 2, dtype="<f4")
    values[5] = 1.5
    head = "probmap v1\nsteps 2\nwidth 2\nheight 2\nresolution 0.1\norigin_x 0\norigin_y 0\nstep_duration 0.2\ndata\n"
    path = _write_stack_bytes(tmp_path, "r.pm", head, values.tobytes())
    with pytest.raises(ProbMapFormatError, match="index 5"):
        load_probmap_stack(path)
