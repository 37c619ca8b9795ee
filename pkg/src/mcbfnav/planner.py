"""Exit-direction planning on barrier isolines.

A trapped nominal controller is freed by steering tangentially along the
current isoline of the combined barrier. The machinery here scores candidate
tangent directions by walking a first-order approximation of the isoline and
integrating a goal/barrier reward, then picks the cheapest direction with
hysteresis against flip-flopping. The walk step size beta is chosen so that
beta * N roughly covers the geodesic from the robot to the target along the
isoline, measured on a rasterized field.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np
from numpy.typing import NDArray

from .barrier import BarrierField
from .geometry import Polyline, ScalarGrid, arc_distance, extract_level_contours, project_onto

GRAD_EPS = 1e-8
PROJECTION_EPS = 1e-6
MAX_SAMPLE_RETRIES = 4


class FieldEvaluator(Protocol):
    """Scalar field with gradient, evaluated one state at a time."""

    def __call__(self, x: NDArray[np.float64]) -> tuple[float, NDArray[np.float64]]: ...


RewardFn = Callable[[NDArray[np.float64], float], float]


@dataclass
class ModulationConfig:
    """Tuning for tangential modulation and the candidate walks."""

    m: int = 2
    N: int = 60
    beta: float = 0.02
    gamma: float = 0.05
    w_goal: float = 1.0
    w_barrier: float = 0.5
    eta: float = 0.05  # hysteresis margin, fraction of the incumbent potential
    beta_min: float = 0.005
    beta_max: float = 1.0
    beta_fallback: float = 0.02

    def __post_init__(self) -> None:
        if self.m < 2:
            raise ValueError("m must be at least 2")
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if self.beta <= 0.0 or self.gamma <= 0.0:
            raise ValueError("beta and gamma must be positive")
        if not 0.0 < self.beta_min <= self.beta_max:
            raise ValueError("need 0 < beta_min <= beta_max")


def tangent_hyperplane(grad: NDArray) -> NDArray[np.float64]:
    """Orthonormal basis H of the tangent space of a level set.

    Columns satisfy H^T H = I and H^T grad = 0. In 2D the single column is
    the CCW rotation of the gradient; in 3D two columns come from
    Gram-Schmidt against the gradient, seeded with the least-aligned axis.
    """
    g = np.asarray(grad, dtype=np.float64).reshape(-1)
    norm = float(np.linalg.norm(g))
    if norm <= GRAD_EPS:
        raise ValueError("gradient vanishes; tangent space undefined")
    n = g / norm
    if g.shape[0] == 2:
        return np.array([[-n[1]], [n[0]]])
    if g.shape[0] == 3:
        seed = np.zeros(3)
        seed[int(np.argmin(np.abs(n)))] = 1.0
        t1 = seed - (seed @ n) * n
        t1 /= np.linalg.norm(t1)
        t2 = np.cross(n, t1)
        return np.stack([t1, t2], axis=1)
    raise ValueError(f"unsupported state dimension {g.shape[0]}")


def _base_directions(dim: int, m: int, offset: float) -> NDArray[np.float64]:
    if dim == 2:
        ang = 2.0 * np.pi * np.arange(m) / m + offset
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    # Fibonacci sphere: near-uniform, deterministic, rotatable in azimuth.
    golden = np.pi * (3.0 - np.sqrt(5.0))
    k = np.arange(m)
    z = 1.0 - 2.0 * (k + 0.5) / m
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    az = golden * k + offset
    return np.stack([r * np.cos(az), r * np.sin(az), z], axis=1)


def sample_candidates(grad: NDArray, m: int) -> list[NDArray[np.float64]]:
    """Unit candidate directions e0 for the isoline walks.

    Directions are uniformly spaced (circle or Fibonacci sphere). Coordinates
    whose barrier partial vanishes are zeroed so the walk ignores inactive
    state dimensions, except when zeroing would destroy the candidate
    entirely; candidates with no tangential part are resampled at rotated
    offsets and dropped if still degenerate.
    """
    if m < 2:
        raise ValueError("m must be at least 2")
    g = np.asarray(grad, dtype=np.float64).reshape(-1)
    H = tangent_hyperplane(g)
    zero_coords = np.abs(g) < GRAD_EPS

    out: dict[int, NDArray[np.float64]] = {}
    for retry in range(MAX_SAMPLE_RETRIES + 1):
        if len(out) == m:
            break
        if g.shape[0] == 2:
            offset = retry * np.pi / (2.0 * m)
        else:
            offset = 0.7 * retry
        base = _base_directions(g.shape[0], m, offset)
        for k in range(m):
            if k in out:
                continue
            raw = base[k]
            zeroed = np.where(zero_coords, 0.0, raw)
            zn = float(np.linalg.norm(zeroed))
            # Prefer the zeroed candidate, but zeroing must not strand the
            # direction in the gradient's span (common on symmetry axes,
            # where one partial is exactly zero).
            for cand in ([zeroed / zn] if zn > GRAD_EPS else []) + [raw]:
                if float(np.linalg.norm(H @ (H.T @ cand))) > PROJECTION_EPS:
                    out[k] = cand
                    break
    if not out:
        raise ValueError("all candidate directions degenerate")
    return [out[k] for k in sorted(out)]


@dataclass
class GeodesicWalk:
    """One candidate's isoline walk and its accumulated potential."""

    path: list[NDArray[np.float64]]
    potential: float
    e0: NDArray[np.float64]
    phi0: NDArray[np.float64] | None
    terminated_early: bool


def geodesic_walk(
    field: FieldEvaluator,
    x0: NDArray,
    e0: NDArray,
    beta: float,
    n_steps: int,
    reward: RewardFn,
) -> GeodesicWalk:
    """First-order isoline walk: project the direction onto the tangent space,
    step beta along the projection (unnormalized), renormalize the direction.

    The potential accumulates beta * reward at every new point; if the
    gradient (or the tangential projection) vanishes mid-walk, the walk stops
    and the last reward is extrapolated over the remaining steps so
    candidates stay comparable.
    """
    x = np.asarray(x0, dtype=np.float64).reshape(-1).copy()
    e = np.asarray(e0, dtype=np.float64).reshape(-1)
    en = float(np.linalg.norm(e))
    if en <= GRAD_EPS:
        raise ValueError("e0 must be a nonzero direction")
    e = e / en

    _, grad = field(x)
    if float(np.linalg.norm(grad)) <= GRAD_EPS:
        raise ValueError("gradient vanishes at the walk start")

    path = [x.copy()]
    potential = 0.0
    phi0: NDArray[np.float64] | None = None
    last_reward: float | None = None
    early = False
    planar = x.shape[0] == 2
    for i in range(n_steps):
        if planar:
            # H @ H.T @ e without building H: project onto the CCW perp.
            gn = grad / np.linalg.norm(grad)
            tdir = np.array([-gn[1], gn[0]])
            t = tdir * (tdir @ e)
        else:
            H = tangent_hyperplane(grad)
            t = H @ (H.T @ e)
        tn = float(np.linalg.norm(t))
        if tn <= 1e-9:
            early = True
            if last_reward is not None:
                potential += beta * last_reward * (n_steps - i)
            break
        if phi0 is None:
            phi0 = t / tn
        x = x + beta * t
        e = t / tn
        path.append(x.copy())
        value, grad = field(x)
        r = reward(x, value)
        potential += beta * r
        last_reward = r
        if float(np.linalg.norm(grad)) <= GRAD_EPS and i < n_steps - 1:
            early = True
            potential += beta * r * (n_steps - 1 - i)
            break
    return GeodesicWalk(path, potential, np.asarray(e0, dtype=np.float64) / en, phi0, early)


@dataclass
class PhiSelection:
    """Winning exit direction for one control cycle."""

    phi: NDArray[np.float64]
    potential: float
    candidate_index: int
    switched: bool


def select_phi(
    field: FieldEvaluator,
    x: NDArray,
    config: ModulationConfig,
    xi_tar: NDArray,
    incumbent_phi: NDArray | None = None,
) -> PhiSelection:
    """Pick the candidate whose walk accumulates the least potential.

    Potentials integrate distance-to-target plus the barrier value, so the
    winner leads around the obstacle toward the target without hugging it.
    With an incumbent direction from the previous cycle, the winner must beat
    the incumbent's current potential by the hysteresis margin, otherwise the
    incumbent is kept (prevents direction chatter on near-symmetric scenes).
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    target = np.asarray(xi_tar, dtype=np.float64).reshape(-1)
    _, grad = field(x)
    candidates = sample_candidates(grad, config.m)

    def reward(state: NDArray[np.float64], value: float) -> float:
        return config.w_goal * float(np.linalg.norm(state[:2] - target)) + config.w_barrier * value

    walks = [
        geodesic_walk(field, x, e, config.beta, config.N, reward) for e in candidates
    ]
    usable = [i for i, wk in enumerate(walks) if wk.phi0 is not None]
    if not usable:
        raise ValueError("no candidate produced a usable walk")
    potentials = np.array([walks[i].potential for i in usable])
    best = usable[int(np.argmin(potentials))]

    chosen = best
    switched = True
    if incumbent_phi is not None:
        inc_dir = np.asarray(incumbent_phi, dtype=np.float64).reshape(-1)
        scores = [float(walks[i].phi0 @ inc_dir) for i in usable]
        inc = usable[int(np.argmax(scores))]
        p_inc = walks[inc].potential
        if not walks[best].potential < p_inc - config.eta * abs(p_inc):
            chosen = inc
            switched = False
        elif inc == best:
            switched = False
    return PhiSelection(walks[chosen].phi0, walks[chosen].potential, chosen, switched)


@dataclass(frozen=True)
class MapSpec:
    """Raster layout for the step-size selection field."""

    resolution: float = 0.05
    margin: float = 1.0
    snap: float = 0.25

    def __post_init__(self) -> None:
        if self.resolution <= 0.0 or self.margin < 0.0 or self.snap <= 0.0:
            raise ValueError("invalid map spec")


@dataclass
class AutoParamResult:
    """Outcome of the step-size selection."""

    beta: float
    d_geo: float
    fallback: bool
    level: float


def snapped_extent(
    points: NDArray, spec: MapSpec
) -> tuple[NDArray[np.float64], int, int]:
    """Grid origin and node counts covering the points plus margin.

    Corners snap outward to multiples of spec.snap so a slowly moving scene
    reuses the same raster instead of shifting it every cycle.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    lo = np.floor((pts.min(axis=0) - spec.margin) / spec.snap) * spec.snap
    hi = np.ceil((pts.max(axis=0) + spec.margin) / spec.snap) * spec.snap
    width = int(np.round((hi[0] - lo[0]) / spec.resolution)) + 1
    height = int(np.round((hi[1] - lo[1]) / spec.resolution)) + 1
    return lo, height, width


def raster_field(field: BarrierField, extra_points: NDArray, spec: MapSpec) -> ScalarGrid:
    """Rasterize the field's soft-min distance over its obstacles plus extras."""
    pts = [b.model.points for b in field.barriers]
    pts.append(np.asarray(extra_points, dtype=np.float64).reshape(-1, 2))
    origin, height, width = snapped_extent(np.vstack(pts), spec)
    return field.raster(origin, spec.resolution, (height, width))


def auto_param_select(
    grid: ScalarGrid,
    n_steps: int,
    xi_rob: NDArray,
    xi_tar: NDArray,
    beta_min: float = 0.005,
    beta_max: float = 1.0,
    beta_fallback: float = 0.02,
) -> AutoParamResult:
    """Walk step size from the isoline geodesic between robot and target.

    Contours of the rasterized field are extracted at the robot's own level;
    the contour nearest the robot carries the geodesic: both robot and target
    project onto it and beta = arc_distance / n_steps, clamped. If no contour
    exists at that level (degenerate or off-grid scene), a constant fallback
    step is returned and flagged.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    rob = np.asarray(xi_rob, dtype=np.float64).reshape(2)
    tar = np.asarray(xi_tar, dtype=np.float64).reshape(2)
    level = grid.value_at(rob)
    contours = extract_level_contours(grid, level)
    if not contours:
        return AutoParamResult(beta_fallback, float("nan"), True, level)
    projections = [project_onto(c, rob) for c in contours]
    nearest = int(np.argmin([pr.distance for pr in projections]))
    contour: Polyline = contours[nearest]
    pr_rob = projections[nearest]
    pr_tar = project_onto(contour, tar)
    d_geo = arc_distance(contour, pr_rob.arc, pr_tar.arc)
    beta = float(np.clip(d_geo / n_steps, beta_min, beta_max))
    return AutoParamResult(beta, d_geo, False, level)
