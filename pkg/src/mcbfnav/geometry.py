"""Planar geometry: polylines, scalar grids, level-set contours, arc queries.

Conventions used throughout the package:
  * points are float64 arrays of shape (2,), point sets are (n, 2)
  * a closed polyline implicitly owns the segment last->first
  * grid values[j, i] is the field sample at origin + resolution * (i, j)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return float(-((-theta + np.pi) % (2.0 * np.pi) - np.pi))


@dataclass
class Polyline:
    """Ordered vertex chain, optionally closed.

    Vertices are stored as an (n, 2) float64 array with n >= 2 and no two
    consecutive identical vertices.
    """

    points: NDArray[np.float64]
    closed: bool = False

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"polyline points must be (n, 2), got {pts.shape}")
        if pts.shape[0] < 2:
            raise ValueError("polyline needs at least 2 vertices")
        if not np.all(np.isfinite(pts)):
            raise ValueError("polyline vertices must be finite")
        seg = np.diff(pts, axis=0)
        if np.any(np.all(seg == 0.0, axis=1)):
            raise ValueError("polyline has consecutive identical vertices")
        self.points = pts

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def segments(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Segment start and end vertex arrays (includes the wrap segment if closed)."""
        a = self.points
        if self.closed:
            b = np.roll(a, -1, axis=0)
            return a, b
        return a[:-1], a[1:]

    def segment_lengths(self) -> NDArray[np.float64]:
        a, b = self.segments()
        return np.linalg.norm(b - a, axis=1)

    @property
    def length(self) -> float:
        return float(self.segment_lengths().sum())

    def cumulative(self) -> NDArray[np.float64]:
        """Arc length at each segment start: cumulative()[k] is the arc at vertex k."""
        lens = self.segment_lengths()
        out = np.zeros(lens.shape[0] + 1)
        np.cumsum(lens, out=out[1:])
        return out

    def point_at(self, s: float | NDArray) -> NDArray[np.float64]:
        """Point(s) at arc-length parameter s (wrapped modulo perimeter if closed)."""
        cum = self.cumulative()
        total = cum[-1]
        if total <= 0.0:
            raise ValueError("degenerate polyline with zero length")
        s = np.asarray(s, dtype=np.float64)
        if self.closed:
            s = np.mod(s, total)
        else:
            s = np.clip(s, 0.0, total)
        a, b = self.segments()
        idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, a.shape[0] - 1)
        seg_len = np.maximum(cum[idx + 1] - cum[idx], 1e-300)
        t = (s - cum[idx]) / seg_len
        if s.ndim:
            return a[idx] + (b[idx] - a[idx]) * t[..., None]
        return a[idx] + (b[idx] - a[idx]) * t

    def signed_area(self) -> float:
        """Shoelace signed area (closed polylines; positive means CCW)."""
        p = self.points
        q = np.roll(p, -1, axis=0)
        return float(0.5 * np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]))

    def reversed(self) -> "Polyline":
        return Polyline(self.points[::-1].copy(), closed=self.closed)


class Projection(NamedTuple):
    point: NDArray[np.float64]
    arc: float
    distance: float


@dataclass
class ScalarGrid:
    """Row-major scalar field samples on a regular grid.

    values[j, i] is the sample at world position origin + resolution * (i, j).
    """

    origin: NDArray[np.float64]
    resolution: float
    values: NDArray[np.float64]

    def __post_init__(self) -> None:
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(2)
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ValueError(f"grid values must be 2-d, got shape {self.values.shape}")
        if self.resolution <= 0.0:
            raise ValueError("grid resolution must be positive")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def node_position(self, i: int, j: int) -> NDArray[np.float64]:
        return self.origin + self.resolution * np.array([i, j], dtype=np.float64)

    def value_at(self, p: NDArray) -> float:
        """Bilinear interpolation of the field at a world point inside the grid."""
        g = (np.asarray(p, dtype=np.float64) - self.origin) / self.resolution
        i = int(np.clip(np.floor(g[0]), 0, self.width - 2))
        j = int(np.clip(np.floor(g[1]), 0, self.height - 2))
        fx = float(np.clip(g[0] - i, 0.0, 1.0))
        fy = float(np.clip(g[1] - j, 0.0, 1.0))
        v = self.values
        return float(
            v[j, i] * (1 - fx) * (1 - fy)
            + v[j, i + 1] * fx * (1 - fy)
            + v[j + 1, i] * (1 - fx) * fy
            + v[j + 1, i + 1] * fx * fy
        )


# marching-squares case table: corner bit set = corner below level.
# Corners of cell (j, i): a=(j,i) b=(j,i+1) c=(j+1,i+1) d=(j+1,i);
# edges: 0 = a-b (south H), 1 = b-c (east V), 2 = d-c (north H), 3 = a-d (west V).
_CASE_SEGMENTS: dict[int, tuple[tuple[int, int], ...]] = {
    1: ((0, 3),),
    2: ((0, 1),),
    3: ((1, 3),),
    4: ((1, 2),),
    6: ((0, 2),),
    7: ((2, 3),),
    8: ((2, 3),),
    9: ((0, 2),),
    11: ((1, 2),),
    12: ((1, 3),),
    13: ((0, 1),),
    14: ((0, 3),),
}


def _cell_edges(j: int, i: int) -> tuple[tuple[str, int, int], ...]:
    return (("H", j, i), ("V", j, i + 1), ("H", j + 1, i), ("V", j, i))


def extract_level_contours(grid: ScalarGrid, level: float) -> list[Polyline]:
    """All closed contours of {p : grid(p) = level} by marching squares.

    Linear interpolation along cell edges; saddle cells are resolved by the
    sign of the cell-center (corner mean) value. Contours that would leave the
    grid are closed along the border. Every returned polyline is closed and
    oriented counter-clockwise. Returns [] when no cell straddles the level.
    """
    vals = np.asarray(grid.values, dtype=np.float64)
    if vals.shape[0] < 2 or vals.shape[1] < 2:
        raise ValueError("contour extraction needs a grid of at least 2x2 samples")
    scale = max(1.0, float(np.max(np.abs(vals))), abs(level))
    s = vals - level
    # nudge exact-level samples to the positive side so topology is unambiguous
    s[s == 0.0] = 1e-12 * scale

    big = 1e9 * scale
    S = np.full((vals.shape[0] + 2, vals.shape[1] + 2), big)
    S[1:-1, 1:-1] = s
    below = S < 0.0
    if not below.any():
        return []

    res = grid.resolution
    ox = grid.origin[0] - res  # padded node (0, 0) sits one cell outside
    oy = grid.origin[1] - res

    def crossings(edges: list[tuple[str, int, int]]) -> NDArray[np.float64]:
        horiz = np.array([e[0] == "H" for e in edges])
        jj = np.array([e[1] for e in edges])
        ii = np.array([e[2] for e in edges])
        j2 = np.where(horiz, jj, jj + 1)
        i2 = np.where(horiz, ii + 1, ii)
        sa = S[jj, ii]
        t = sa / (sa - S[j2, i2])
        x = np.where(horiz, ox + (ii + t) * res, ox + ii * res)
        y = np.where(horiz, oy + jj * res, oy + (jj + t) * res)
        return np.stack([x, y], axis=1)

    h_pad, w_pad = S.shape
    a = below[:-1, :-1]
    b = below[:-1, 1:]
    c = below[1:, 1:]
    d = below[1:, :-1]
    case = a.astype(np.int8) + 2 * b + 4 * c + 8 * d
    cells = np.argwhere((case != 0) & (case != 15))

    # segment soup: per cell a list of (edge, edge) pairs, plus an index of
    # which segments touch each crossing edge (exactly two after padding)
    cell_segments: dict[tuple[int, int], tuple[tuple[int, int], ...]] = {}
    edge_uses: dict[tuple[str, int, int], list[tuple[tuple[int, int], int]]] = {}
    for j, i in cells.tolist():
        code = int(case[j, i])
        if code in (5, 10):
            center = S[j, i] + S[j, i + 1] + S[j + 1, i + 1] + S[j + 1, i]
            if code == 5:  # a, c below
                segs = ((0, 1), (2, 3)) if center < 0.0 else ((0, 3), (1, 2))
            else:  # b, d below
                segs = ((0, 3), (1, 2)) if center < 0.0 else ((0, 1), (2, 3))
        else:
            segs = _CASE_SEGMENTS[code]
        cell_segments[(j, i)] = segs
        edges = _cell_edges(j, i)
        for k, (e0, e1) in enumerate(segs):
            for e in (e0, e1):
                edge_uses.setdefault(edges[e], []).append(((j, i), k))

    def is_real_edge(key: tuple[str, int, int]) -> bool:
        kind, j, i = key
        if kind == "H":
            return 1 <= j <= h_pad - 2 and 1 <= i and i + 1 <= w_pad - 2
        return 1 <= i <= w_pad - 2 and 1 <= j and j + 1 <= h_pad - 2

    used: set[tuple[tuple[int, int], int]] = set()
    contours: list[Polyline] = []
    for j, i in cells.tolist():
        edges = _cell_edges(j, i)
        for k, seg in enumerate(cell_segments[(j, i)]):
            if ((j, i), k) in used:
                continue
            # walk the loop starting through this segment
            loop_edges = [edges[seg[0]]]
            cur_cell, cur_k = (j, i), k
            enter = edges[seg[0]]
            while True:
                used.add((cur_cell, cur_k))
                e0, e1 = cell_segments[cur_cell][cur_k]
                cell_edge_keys = _cell_edges(*cur_cell)
                exit_key = cell_edge_keys[e1] if cell_edge_keys[e0] == enter else cell_edge_keys[e0]
                loop_edges.append(exit_key)
                nxt = [u for u in edge_uses[exit_key] if u != (cur_cell, cur_k)]
                if not nxt:  # cannot happen on a padded grid; guard anyway
                    break
                cur_cell, cur_k = nxt[0]
                enter = exit_key
                if (cur_cell, cur_k) in used:
                    break
            if not any(is_real_edge(e) for e in loop_edges):
                continue  # pure border artifact (grid entirely below level)
            pts = crossings(loop_edges[:-1])
            gaps = np.linalg.norm(pts - np.roll(pts, 1, axis=0), axis=1)
            pts = pts[gaps >= 1e-9 * res]
            if pts.shape[0] < 3:
                continue
            poly = Polyline(pts, closed=True)
            if poly.signed_area() < 0.0:
                poly = Polyline(pts[::-1].copy(), closed=True)
            contours.append(poly)
    return contours


def project_onto(poly: Polyline, p: NDArray) -> Projection:
    """Closest point on the polyline; ties broken by smallest arc parameter."""
    p = np.asarray(p, dtype=np.float64).reshape(2)
    a, b = poly.segments()
    ab = b - a
    denom = np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-300)
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / denom, 0.0, 1.0)
    cand = a + ab * t[:, None]
    dist = np.linalg.norm(cand - p, axis=1)
    cum = poly.cumulative()
    lens = poly.segment_lengths()
    best = 0
    tol = 1e-12 * max(1.0, float(dist.min()))
    for k in range(1, dist.shape[0]):
        if dist[k] < dist[best] - tol:
            best = k
    arc = float(cum[best] + t[best] * lens[best])
    return Projection(cand[best], arc, float(dist[best]))


def arc_distance(poly: Polyline, s_a: float, s_b: float) -> float:
    """Geodesic separation of two arc parameters along a closed polyline."""
    if not poly.closed:
        raise ValueError("arc_distance is defined for closed polylines")
    total = poly.length
    delta = abs(float(s_a) - float(s_b)) % total
    return min(delta, total - delta)


def geodesic_along(poly: Polyline, a: NDArray, b: NDArray) -> float:
    """Shorter along-contour distance between two on-contour points.

    Raises ValueError if either point is farther than 1e-6 * perimeter from
    the contour.
    """
    if not poly.closed:
        raise ValueError("geodesic_along is defined for closed polylines")
    total = poly.length
    if total <= 0.0:
        raise ValueError("degenerate contour with zero perimeter")
    pa = project_onto(poly, a)
    pb = project_onto(poly, b)
    tol = 1e-6 * total
    if pa.distance > tol or pb.distance > tol:
        raise ValueError(
            f"point off contour: distances ({pa.distance:.3e}, {pb.distance:.3e}) "
            f"exceed 1e-6 * perimeter = {tol:.3e}"
        )
    return arc_distance(poly, pa.arc, pb.arc)


def resample_closed(poly: Polyline, max_points: int, spacing: float | None = None) -> Polyline:
    """Uniform arc-length resampling of a closed polyline.

    Returns exactly max_points vertices, or ceil(perimeter / spacing) capped
    at max_points when a target spacing is given. Sampling starts at vertex 0.
    """
    if max_points < 3:
        raise ValueError("max_points must be >= 3")
    total = poly.length
    if total <= 0.0:
        raise ValueError("cannot resample a zero-perimeter polyline")
    n = max_points
    if spacing is not None:
        if spacing <= 0.0:
            raise ValueError("spacing must be positive")
        n = min(max_points, max(3, int(np.ceil(total / spacing))))
    s = total * np.arange(n) / n
    pts = poly.point_at(s)
    return Polyline(pts, closed=True)


def polygon_contains(poly: Polyline, p: NDArray) -> bool:
    """Even-odd point-in-polygon test for a closed polyline."""
    p = np.asarray(p, dtype=np.float64).reshape(2)
    v = poly.points
    x, y = p
    inside = False
    n = v.shape[0]
    for k in range(n):
        x0, y0 = v[k]
        x1, y1 = v[(k + 1) % n]
        if (y0 > y) != (y1 > y):
            xs = x0 + (y - y0) / (y1 - y0) * (x1 - x0)
            if x < xs:
                inside = not inside
    return inside


def polyline_distance(poly: Polyline, p: NDArray) -> float:
    """Unsigned distance from a point to the polyline."""
    return project_onto(poly, p).distance
