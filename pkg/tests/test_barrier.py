"""Barrier evaluation: per-obstacle queries, soft-min blending, active sets."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcbfnav import gpdf
from mcbfnav.barrier import (
    BarrierField,
    ObstacleBarrier,
    active_set,
    augmented_barrier,
    barrier_query,
    combine,
    combine_gradient,
    combine_many,
    combine_queries,
    combined_field,
    combined_query_at,
    softmin_weights,
)
from mcbfnav.gpdf import KernelParams


def point_barrier(x, y, margin=0.0, velocity=None, kernel=KernelParams()) -> ObstacleBarrier:
    model = gpdf.fit(np.array([[x, y]]), kernel)
    return ObstacleBarrier(f"pt:{x},{y}", model, margin, velocity_hint=velocity)


def circle_barrier(radius, n=64, center=(0.0, 0.0), margin=0.0) -> ObstacleBarrier:
    ang = 2.0 * np.pi * np.arange(n) / n
    pts = np.asarray(center) + radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return ObstacleBarrier(f"circle:{center[0]},{center[1]}", gpdf.fit(pts), margin)


values_lists = st.lists(
    st.floats(min_value=-5.0, max_value=50.0, allow_nan=False), min_size=1, max_size=8
)
rhos = st.floats(min_value=0.5, max_value=20.0, allow_nan=False)


# ------------------------------------------------------------- barrier_query


def test_static_barrier_has_no_drift():
    q = barrier_query(point_barrier(0.0, 0.0), np.array([1.0, 0.0]))
    assert q.dhdt_env == 0.0


def test_moving_point_barrier_closed_form():
    b = point_barrier(0.0, 0.0, velocity=np.array([1.0, 0.0]))
    q = barrier_query(b, np.array([2.0, 0.0]))
    assert q.value == pytest.approx(2.0, abs=1e-9)
    np.testing.assert_allclose(q.gradient, [1.0, 0.0], atol=1e-9)
    assert q.dhdt_env == pytest.approx(-1.0, abs=1e-9)


def test_margin_shifts_barrier_negative_on_boundary():
    b = circle_barrier(1.0, margin=0.3)
    q = barrier_query(b, b.model.points[0])
    assert q.value == pytest.approx(-0.3, abs=1e-6)


def test_negative_margin_rejected():
    with pytest.raises(ValueError):
        point_barrier(0.0, 0.0, margin=-0.1)


def test_saturated_far_field_zeroes_drift():
    b = point_barrier(0.0, 0.0, velocity=np.array([2.0, 0.0]))
    q = barrier_query(b, np.array([50.0, 0.0]))
    assert q.saturated
    assert q.dhdt_env == 0.0


def test_drift_matches_rigid_translation():
    """Refitting the same boundary translated by v*dt changes h by
    dhdt_env*dt to first order."""
    v = np.array([0.7, -0.4])
    dt = 1e-4
    ang = 2.0 * np.pi * np.arange(32) / 32
    pts = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    before = ObstacleBarrier("a", gpdf.fit(pts), 0.0, velocity_hint=v)
    after = ObstacleBarrier("b", gpdf.fit(pts + v * dt), 0.0)
    p = np.array([1.8, 0.6])
    q0 = barrier_query(before, p)
    q1 = barrier_query(after, p)
    assert (q1.value - q0.value) / dt == pytest.approx(q0.dhdt_env, abs=1e-3)


# --------------------------------------------------------- augmented barrier


def test_augmented_barrier_alignment_bonus():
    b = point_barrier(0.0, 0.0)
    away = augmented_barrier(b, np.array([2.0, 0.0, 0.0]), a=0.0, w=0.5)
    toward = augmented_barrier(b, np.array([2.0, 0.0, np.pi]), a=0.0, w=0.5)
    assert away.value == pytest.approx(2.5, abs=1e-9)
    assert toward.value == pytest.approx(1.5, abs=1e-9)


def test_augmented_theta_gradient_matches_fd():
    b = circle_barrier(0.5, center=(0.3, -0.1))
    pose = np.array([1.4, 0.8, 0.6])
    q = augmented_barrier(b, pose, a=0.0, w=0.5)
    eps = 1e-6
    hi = augmented_barrier(b, pose + [0, 0, eps], a=0.0, w=0.5)
    lo = augmented_barrier(b, pose - [0, 0, eps], a=0.0, w=0.5)
    assert q.gradient[2] == pytest.approx((hi.value - lo.value) / (2 * eps), abs=1e-6)


def test_augmented_positional_gradient_step_insensitive():
    b = circle_barrier(0.5)
    pose = np.array([1.2, 0.4, 1.1])
    g1 = augmented_barrier(b, pose, a=0.2, w=0.5, fd_step=1e-4).gradient
    g2 = augmented_barrier(b, pose, a=0.2, w=0.5, fd_step=2e-4).gradient
    np.testing.assert_allclose(g1[:2], g2[:2], atol=1e-5)


# ------------------------------------------------------------------- combine


@given(st.floats(min_value=-50.0, max_value=50.0, allow_nan=False), rhos)
def test_combine_single_value_identity(h, rho):
    assert combine(np.array([h]), rho) == pytest.approx(h, abs=1e-12)


@given(values_lists, rhos)
@settings(max_examples=300)
def test_combine_soft_min_bounds(values, rho):
    values = np.array(values)
    c = combine(values, rho)
    assert c <= values.min() + 1e-12
    assert values.min() - c <= np.log(len(values)) / rho + 1e-12


def test_combine_two_equal_values():
    assert combine(np.array([0.7, 0.7]), 5.0) == pytest.approx(0.7 - np.log(2.0) / 5.0, abs=1e-12)


def test_combine_dominated_by_small_value():
    assert combine(np.array([1.0, 100.0]), 10.0) == pytest.approx(1.0, abs=1e-6)


@given(values_lists, rhos)
def test_combine_permutation_invariant(values, rho):
    values = np.array(values)
    shuffled = values[np.argsort(np.sin(7.0 * np.arange(len(values))))]
    assert combine(shuffled, rho) == pytest.approx(combine(values, rho), abs=1e-12)


def test_combine_many_matches_scalar():
    rng = np.random.default_rng(8)
    batch = rng.uniform(-2.0, 5.0, (40, 3))
    out = combine_many(batch, 5.0)
    for row, c in zip(batch, out):
        assert c == pytest.approx(combine(row, 5.0), abs=1e-12)


@given(values_lists, rhos)
def test_softmin_weights_sum_to_one(values, rho):
    w = softmin_weights(np.array(values), rho)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(w >= 0.0)


# ---------------------------------------------------------- combined gradient


def test_single_obstacle_combined_gradient_is_its_own():
    b = point_barrier(0.0, 0.0)
    p = np.array([1.3, -0.4])
    q = combined_query_at([b], p, rho=5.0)
    np.testing.assert_allclose(q.gradient, barrier_query(b, p).gradient, atol=1e-12)


def test_combined_gradient_matches_finite_differences():
    bs = [point_barrier(0.0, 0.0), point_barrier(1.5, 0.5), circle_barrier(0.4, center=(-1.0, 1.0))]
    rng = np.random.default_rng(9)
    eps = 1e-5
    for _ in range(25):
        p = rng.uniform(-2.0, 2.0, 2)
        q = combined_query_at(bs, p, rho=5.0)
        fd = np.array(
            [
                combined_query_at(bs, p + [eps, 0.0], 5.0).value
                - combined_query_at(bs, p - [eps, 0.0], 5.0).value,
                combined_query_at(bs, p + [0.0, eps], 5.0).value
                - combined_query_at(bs, p - [0.0, eps], 5.0).value,
            ]
        ) / (2 * eps)
        np.testing.assert_allclose(q.gradient, fd, atol=1e-4)


def test_symmetric_pair_gradient_lies_on_bisector():
    bs = [point_barrier(1.0, 0.0), point_barrier(-1.0, 0.0)]
    q = combined_query_at(bs, np.array([0.0, 0.8]), rho=5.0)
    assert abs(q.gradient[0]) <= 1e-10
    assert q.gradient[1] > 0.0


def test_combined_drift_uses_softmin_weights():
    near = point_barrier(0.0, 0.0, velocity=np.array([1.0, 0.0]))
    far = point_barrier(30.0, 0.0, velocity=np.array([-1.0, 0.0]))
    q = combined_query_at([near, far], np.array([2.0, 0.0]), rho=5.0)
    assert q.dhdt_env == pytest.approx(-1.0, abs=1e-6)  # near one dominates


# ------------------------------------------------------------------ active set


def test_active_set_inclusive_threshold():
    values = np.array([3.0, 3.01, 0.2, -1.0])
    idx = active_set(values, b_range=3.0)
    assert idx.tolist() == [0, 2, 3]
    assert active_set(np.empty(0), 3.0).size == 0


# --------------------------------------------------------------- fast blends


def test_combined_field_fast_path_matches_general():
    bs = [circle_barrier(0.4, center=(-0.8, 0.0)), circle_barrier(0.3, center=(0.9, 0.4))]
    fast = combined_field(bs, rho=5.0)
    rng = np.random.default_rng(12)
    for _ in range(30):
        p = rng.uniform(-2.0, 2.0, 2)
        v, g = fast(p)
        q = combined_query_at(bs, p, rho=5.0)
        assert v == pytest.approx(q.value, abs=1e-9)
        np.testing.assert_allclose(g, q.gradient, atol=1e-9)


def test_combined_field_mixed_kernels_fall_back():
    bs = [
        circle_barrier(0.4, center=(-0.8, 0.0)),
        ObstacleBarrier(
            "other",
            gpdf.fit(np.array([[1.0, 0.0]]), KernelParams(length_scale=0.1)),
            0.0,
        ),
    ]
    fn = combined_field(bs, rho=5.0)
    p = np.array([0.2, 0.3])
    v, g = fn(p)
    q = combined_query_at(bs, p, rho=5.0)
    assert v == pytest.approx(q.value, abs=1e-12)
    np.testing.assert_allclose(g, q.gradient, atol=1e-12)


# --------------------------------------------------------------- BarrierField


def test_field_rejects_duplicate_ids():
    b = circle_barrier(0.4)
    with pytest.raises(ValueError, match="unique"):
        BarrierField([b, b])


def test_field_position_query_empty_cases():
    assert BarrierField([]).position_query(np.zeros(2)) is None
    far = BarrierField([circle_barrier(0.3, center=(40.0, 0.0))], b_range=3.0)
    assert far.position_query(np.zeros(2)) is None


def test_field_sbar_ignores_margins():
    field = BarrierField([circle_barrier(1.0, n=128, margin=0.5)])
    p = np.array([2.0, 0.0])
    raw = gpdf.distance(field.barriers[0].model, p)
    assert field.sbar(p) == pytest.approx(raw, abs=1e-12)


def test_field_raster_matches_pointwise_sbar():
    field = BarrierField(
        [circle_barrier(0.5, center=(0.0, 0.0)), circle_barrier(0.4, center=(1.2, 0.8))]
    )
    origin = np.array([-1.0, -1.0])
    grid = field.raster(origin, 0.25, (9, 10))
    for j in [0, 4, 8]:
        for i in [0, 5, 9]:
            p = origin + 0.25 * np.array([i, j])
            assert grid.values[j, i] == pytest.approx(field.sbar(p), abs=1e-4)


def test_state_queries_activity_from_plain_barrier():
    """Near-obstacle activity is decided at the point of interest, without
    the heading alignment bonus."""
    field = BarrierField([circle_barrier(0.5)], b_range=1.0)
    pose_near = np.array([1.2, 0.0, 0.0])
    ids, queries = field.state_queries(pose_near, a=0.2, w=0.5)
    assert ids == ["circle:0.0,0.0"]
    assert len(queries) == 1
    pose_far = np.array([3.0, 0.0, 0.0])
    ids_far, _ = field.state_queries(pose_far, a=0.2, w=0.5)
    assert ids_far == []
