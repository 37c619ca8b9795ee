"""Barrier functions over distance-field models and their soft-min combination.

Each obstacle contributes h_i(p) = d_i(p) - margin_i, where d_i is a learned
distance field. Multiple barriers are blended with a log-sum-exp soft minimum

    hbar = -(1/rho) * ln( sum_i exp(-rho * (h_i + 1)) ) - 1

which satisfies hbar <= min_i h_i with gap at most ln(n)/rho, and whose
gradient is the softmax-weighted sum of the member gradients.

For a pose-controlled robot the barrier is evaluated at the shifted point of
interest and augmented with a heading-alignment bonus; see augmented_barrier.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .geometry import ScalarGrid
from .gpdf import GpdfModel, distance_many_f32, query_many

FD_STEP = 1e-4


@dataclass
class ObstacleBarrier:
    """One obstacle's distance-field model plus its safety margin.

    velocity_hint is the rigid-translation estimate of the geometry; it feeds
    the environment-motion term of the barrier derivative. Deformation beyond
    rigid translation is absorbed by the periodic model refits.
    """

    obstacle_id: str
    model: GpdfModel
    margin: float
    velocity_hint: NDArray[np.float64] | None = None
    kind: str = "static"  # "static" or "efrs"
    last_refit_time: float = 0.0

    def __post_init__(self) -> None:
        if self.margin < 0.0:
            raise ValueError("margin must be non-negative")
        if self.velocity_hint is not None:
            self.velocity_hint = np.asarray(self.velocity_hint, dtype=np.float64).reshape(2)


@dataclass
class BarrierQuery:
    """One barrier evaluated at one robot position or state."""

    value: float
    gradient: NDArray[np.float64]  # 2-vector (position) or 3-vector (pose)
    dhdt_env: float  # barrier drift from obstacle motion, d h / d t at fixed state
    saturated: bool


@dataclass
class CombinedQuery:
    """Soft-min blend of several barrier queries."""

    value: float
    gradient: NDArray[np.float64]
    dhdt_env: float
    weights: NDArray[np.float64]


def barrier_query(barrier: ObstacleBarrier, p: NDArray) -> BarrierQuery:
    """h and its position gradient at a point.

    The saturated far field has a zeroed model gradient, so the motion term
    degrades to 0 there rather than injecting a bogus drift.
    """
    pt = np.asarray(p, dtype=np.float64).reshape(1, 2)
    d, grad, sat = query_many(barrier.model, pt)
    drift = 0.0
    if barrier.velocity_hint is not None:
        drift = float(-grad[0] @ barrier.velocity_hint)
    return BarrierQuery(
        value=float(d[0] - barrier.margin),
        gradient=grad[0],
        dhdt_env=drift,
        saturated=bool(sat[0]),
    )


def augmented_barrier(
    barrier: ObstacleBarrier,
    pose: NDArray,
    a: float,
    w: float,
    fd_step: float = FD_STEP,
) -> BarrierQuery:
    """Barrier in pose space at the shifted point of interest.

        h_aug(x, y, theta) = h(poi) + w * grad_h(poi) . [cos theta, sin theta]

    with poi = (x, y) + a * [cos theta, sin theta]. The alignment term rewards
    heading away from the obstacle, which keeps the heading actuated in the
    barrier constraint. The (x, y) gradient is central-difference (the exact
    one needs field curvature); the theta gradient uses the analytic form with
    the field gradient frozen, d h_aug / d theta = (a + w) * grad_h . n(theta),
    n = [-sin theta, cos theta].
    """
    x, y, theta = float(pose[0]), float(pose[1]), float(pose[2])
    u = np.array([np.cos(theta), np.sin(theta)])
    poi = np.array([x, y]) + a * u
    offsets = np.array(
        [[0.0, 0.0], [fd_step, 0.0], [-fd_step, 0.0], [0.0, fd_step], [0.0, -fd_step]]
    )
    d, grad, sat = query_many(barrier.model, poi + offsets)
    h_aug = (d - barrier.margin) + w * (grad @ u)
    g = np.array(
        [
            (h_aug[1] - h_aug[2]) / (2.0 * fd_step),
            (h_aug[3] - h_aug[4]) / (2.0 * fd_step),
            (a + w) * float(grad[0] @ np.array([-np.sin(theta), np.cos(theta)])),
        ]
    )
    drift = 0.0
    if barrier.velocity_hint is not None:
        drift = float(-grad[0] @ barrier.velocity_hint)
    return BarrierQuery(
        value=float(h_aug[0]), gradient=g, dhdt_env=drift, saturated=bool(sat.any())
    )


def combine(values: NDArray, rho: float) -> float:
    """Log-sum-exp soft minimum of barrier values (shift-invariant form)."""
    h = np.asarray(values, dtype=np.float64).reshape(-1)
    if h.shape[0] == 0:
        raise ValueError("cannot combine zero barrier values")
    s = -rho * (h + 1.0)
    m = s.max()
    return float(-(m + np.log(np.exp(s - m).sum())) / rho - 1.0)


def combine_many(values: NDArray, rho: float) -> NDArray[np.float64]:
    """Soft minimum along the last axis of a (..., n) value array."""
    h = np.asarray(values, dtype=np.float64)
    s = -rho * (h + 1.0)
    m = s.max(axis=-1, keepdims=True)
    return -(m[..., 0] + np.log(np.exp(s - m).sum(axis=-1))) / rho - 1.0


def softmin_weights(values: NDArray, rho: float) -> NDArray[np.float64]:
    """Softmax weights over -rho * h; they sum to one and favor the nearest barrier."""
    h = np.asarray(values, dtype=np.float64).reshape(-1)
    s = -rho * (h + 1.0)
    e = np.exp(s - s.max())
    return e / e.sum()


def combine_queries(queries: list[BarrierQuery], rho: float) -> CombinedQuery:
    """Blend per-barrier queries into one soft-min barrier with gradient and drift."""
    if not queries:
        raise ValueError("cannot combine zero barrier queries")
    values = np.array([q.value for q in queries])
    weights = softmin_weights(values, rho)
    grad = np.einsum("i,ij->j", weights, np.stack([q.gradient for q in queries]))
    drift = float(weights @ np.array([q.dhdt_env for q in queries]))
    return CombinedQuery(
        value=combine(values, rho), gradient=grad, dhdt_env=drift, weights=weights
    )


def combine_gradient(values: NDArray, gradients: NDArray, rho: float) -> NDArray[np.float64]:
    """Gradient of the soft minimum given member values and gradients."""
    weights = softmin_weights(values, rho)
    return np.einsum("i,ij->j", weights, np.asarray(gradients, dtype=np.float64))


def active_set(values: NDArray, b_range: float) -> NDArray[np.intp]:
    """Indices of barriers within influence range (h <= b_range, inclusive)."""
    h = np.asarray(values, dtype=np.float64).reshape(-1)
    return np.flatnonzero(h <= b_range)


def active_barriers(
    barriers: list[ObstacleBarrier], p: NDArray, b_range: float
) -> list[ObstacleBarrier]:
    """Subset of barriers whose h at p is within influence range."""
    values = np.array([barrier_query(b, p).value for b in barriers])
    return [barriers[i] for i in active_set(values, b_range)]


def combined_field(barriers: list[ObstacleBarrier], rho: float):
    """Point evaluator (value, gradient) of the soft-min barrier over positions.

    Functionally the same as combine_queries over barrier_query results, but
    all models are stacked into one kernel pass, which matters inside the
    isoline walks (hundreds of single-point evaluations per cycle). Falls
    back to the per-barrier path when kernels differ across models.
    """
    from .gpdf import LATENT_FLOOR

    if not barriers:
        raise ValueError("combined_field needs at least one barrier")
    kernel = barriers[0].model.kernel
    if any(b.model.kernel != kernel for b in barriers[1:]):

        def general(x: NDArray) -> tuple[float, NDArray[np.float64]]:
            q = combine_queries([barrier_query(b, x) for b in barriers], rho)
            return q.value, q.gradient

        return general

    points = np.vstack([b.model.points for b in barriers])
    slices: list[slice] = []
    start = 0
    for b in barriers:
        slices.append(slice(start, start + b.model.n))
        start += b.model.n
    alphas = [b.model.alpha for b in barriers]
    margins = np.array([b.margin for b in barriers])
    length, sig2 = kernel.length_scale, kernel.sigma**2

    def fast(x: NDArray) -> tuple[float, NDArray[np.float64]]:
        p = np.asarray(x, dtype=np.float64).reshape(-1)[:2]
        diff = p[None, :] - points
        r = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        kern = sig2 * np.exp(-r / length)
        wr = np.where(r < 1e-9, 0.0, kern / (np.maximum(r, 1e-9) * length))
        values = np.empty(len(barriers))
        grads = np.empty((len(barriers), 2))
        for i, (sl, alpha) in enumerate(zip(slices, alphas)):
            raw = float(kern[sl] @ alpha)
            om = min(max(raw, LATENT_FLOOR), sig2)
            values[i] = -length * np.log(om / sig2) - margins[i]
            if raw <= LATENT_FLOOR:
                grads[i] = 0.0
            else:
                grad_latent = -(wr[sl] * alpha) @ diff[sl]
                grads[i] = (-length / om) * grad_latent
        weights = softmin_weights(values, rho)
        return combine(values, rho), weights @ grads

    return fast


def combined_query_at(
    barriers: list[ObstacleBarrier], p: NDArray, rho: float
) -> CombinedQuery:
    """Soft-min barrier with gradient and drift over a barrier list at a point."""
    return combine_queries([barrier_query(b, p) for b in barriers], rho)


@dataclass
class BarrierField:
    """All obstacle barriers active in one control cycle."""

    barriers: list[ObstacleBarrier] = field(default_factory=list)
    rho: float = 5.0
    b_range: float = 3.0

    def __post_init__(self) -> None:
        if self.rho <= 0.0:
            raise ValueError("rho must be positive")
        ids = [b.obstacle_id for b in self.barriers]
        if len(set(ids)) != len(ids):
            raise ValueError("barrier ids must be unique")

    def position_queries(self, p: NDArray) -> list[BarrierQuery]:
        return [barrier_query(b, p) for b in self.barriers]

    def position_query(self, p: NDArray) -> CombinedQuery | None:
        """Soft-min barrier over the active set at a position; None if empty."""
        if not self.barriers:
            return None
        queries = self.position_queries(p)
        idx = active_set(np.array([q.value for q in queries]), self.b_range)
        if idx.size == 0:
            return None
        return combine_queries([queries[i] for i in idx], self.rho)

    def state_queries(
        self, pose: NDArray, a: float, w: float
    ) -> tuple[list[str], list[BarrierQuery]]:
        """Active-set augmented queries in pose space, with their barrier ids.

        Activity is decided on the plain positional barrier at the point of
        interest so the alignment bonus cannot pull a near obstacle out of
        the active set.
        """
        if not self.barriers:
            return [], []
        theta = float(pose[2])
        poi = np.asarray(pose[:2], dtype=np.float64) + a * np.array(
            [np.cos(theta), np.sin(theta)]
        )
        plain = self.position_queries(poi)
        idx = active_set(np.array([q.value for q in plain]), self.b_range)
        ids = [self.barriers[i].obstacle_id for i in idx]
        queries = [augmented_barrier(self.barriers[i], pose, a, w) for i in idx]
        return ids, queries

    def sbar(self, p: NDArray) -> float:
        """Soft-min of the raw learned distances (no margins) at one point."""
        return float(self.sbar_many(np.asarray(p, dtype=np.float64).reshape(1, 2))[0])

    def sbar_many(self, points: NDArray) -> NDArray[np.float64]:
        """Soft-min raw distance field at many points, shape (m,)."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        if not self.barriers:
            raise ValueError("sbar undefined with no barriers")
        d = np.stack([query_many(b.model, pts)[0] for b in self.barriers], axis=-1)
        return combine_many(d, self.rho)

    def raster(self, origin: NDArray, resolution: float, shape: tuple[int, int]) -> ScalarGrid:
        """Rasterize the soft-min raw distance field onto a grid.

        shape is (height, width); node (i, j) sits at origin + resolution * (i, j).
        Single precision per model keeps large rasters cheap; the combine runs
        in double.
        """
        if not self.barriers:
            raise ValueError("raster undefined with no barriers")
        h, w = shape
        xs = origin[0] + resolution * np.arange(w)
        ys = origin[1] + resolution * np.arange(h)
        gx, gy = np.meshgrid(xs, ys)
        pts = np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)
        d = np.stack(
            [distance_many_f32(b.model, pts).astype(np.float64) for b in self.barriers],
            axis=-1,
        )
        values = combine_many(d, self.rho).reshape(h, w)
        return ScalarGrid(np.asarray(origin, dtype=np.float64), resolution, values)
