"""Obstacle motion prediction: tracks, forward reachable sets, probability maps.

Two prediction routes produce the same artifact, a closed boundary polygon to
be fit by a distance-field model:

  * constant-velocity (CVM): least-squares velocity over the recent track,
    swept into a spindle (rhombus with rounded caps) over the horizon
  * probability-map stacks: per-step occupancy maps from an external
    predictor, summed and thresholded into contour polygons
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .geometry import Polyline, ScalarGrid, extract_level_contours, resample_closed

CVM_WINDOW = 8
KAPPA_SPREAD = 0.25
BOUNDARY_SPACING = 0.05
BOUNDARY_MAX_POINTS = 200


@dataclass
class ObstacleTrack:
    """Timestamped position history for one moving obstacle."""

    obstacle_id: str
    times: NDArray[np.float64] = field(default_factory=lambda: np.empty(0))
    positions: NDArray[np.float64] = field(default_factory=lambda: np.empty((0, 2)))
    radius: float = 0.3

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        if self.times.shape[0] != self.positions.shape[0]:
            raise ValueError("times and positions must have equal length")
        if self.times.shape[0] > 1 and not np.all(np.diff(self.times) > 0.0):
            raise ValueError("track timestamps must be strictly increasing")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("track positions must be finite")
        if self.radius <= 0.0:
            raise ValueError("track radius must be positive")

    def append(self, t: float, position: NDArray) -> None:
        if self.times.shape[0] and t <= self.times[-1]:
            raise ValueError(f"timestamp {t} not after {self.times[-1]}")
        self.times = np.append(self.times, float(t))
        self.positions = np.vstack([self.positions, np.asarray(position, dtype=np.float64).reshape(1, 2)])

    @property
    def latest(self) -> NDArray[np.float64]:
        if not self.times.shape[0]:
            raise ValueError("empty track")
        return self.positions[-1]


@dataclass
class Efrs:
    """Estimated forward reachable set: a closed boundary over a horizon."""

    obstacle_id: str
    boundary: Polyline
    tau_max: float
    source: str  # "cvm" or "probmap"
    velocity: NDArray[np.float64] | None = None  # rigid-translation hint

    def __post_init__(self) -> None:
        if not self.boundary.closed:
            raise ValueError("EFRS boundary must be closed")
        if self.source not in ("cvm", "probmap"):
            raise ValueError(f"unknown EFRS source {self.source!r}")


def cvm_velocity(track: ObstacleTrack, window: int = CVM_WINDOW) -> NDArray[np.float64]:
    """Least-squares velocity over the last `window` samples (zeros if < 2)."""
    k = track.times.shape[0]
    if k < 2:
        return np.zeros(2)
    n = min(k, window)
    t = track.times[-n:]
    p = track.positions[-n:]
    tc = t - t.mean()
    denom = float(tc @ tc)
    if denom <= 0.0:
        return np.zeros(2)
    return (tc @ (p - p.mean(axis=0))) / denom


def _spindle_boundary(
    p0: NDArray[np.float64],
    v: NDArray[np.float64],
    tau_max: float,
    half_width: float,
    kappa_spread: float,
    cap_samples: int = 33,
) -> Polyline:
    """Closed boundary of the swept region: straight flanks widening to the
    midpoint, semicircular caps of radius half_width at both ends."""
    speed = float(np.linalg.norm(v))
    length = speed * tau_max
    if length < 1e-9:
        ang = np.linspace(0.0, 2.0 * np.pi, 64, endpoint=False)
        pts = p0 + half_width * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        return Polyline(pts, closed=True)

    w0 = half_width
    wm = half_width + kappa_spread * length / 2.0
    local: list[NDArray[np.float64]] = [
        np.array([0.0, -w0]),
        np.array([length / 2.0, -wm]),
        np.array([length, -w0]),
    ]
    cap = np.linspace(-np.pi / 2.0, np.pi / 2.0, cap_samples)[1:-1]
    local.extend(np.array([length + w0 * np.cos(a), w0 * np.sin(a)]) for a in cap)
    local.extend(
        [
            np.array([length, w0]),
            np.array([length / 2.0, wm]),
            np.array([0.0, w0]),
        ]
    )
    cap = np.linspace(np.pi / 2.0, 3.0 * np.pi / 2.0, cap_samples)[1:-1]
    local.extend(np.array([w0 * np.cos(a), w0 * np.sin(a)]) for a in cap)

    d = v / speed
    rot = np.array([[d[0], -d[1]], [d[1], d[0]]])
    pts = np.asarray(local) @ rot.T + p0
    return Polyline(pts, closed=True)


def cvm_efrs(
    track: ObstacleTrack,
    tau_max: float,
    margin: float,
    kappa_spread: float = KAPPA_SPREAD,
    max_points: int = BOUNDARY_MAX_POINTS,
    spacing: float = BOUNDARY_SPACING,
) -> Efrs:
    """Constant-velocity reachable set swept from the latest track sample.

    The boundary is the centerline p0 -> p0 + v * tau_max inflated to
    (radius + margin) at the endpoints and linearly to
    (radius + margin) + kappa_spread * |v| * tau_max / 2 at the midpoint,
    with rounded caps; it always contains the current footprint.
    """
    if tau_max <= 0.0:
        raise ValueError("tau_max must be positive")
    v = cvm_velocity(track)
    half_width = track.radius + margin
    boundary = _spindle_boundary(track.latest, v, tau_max, half_width, kappa_spread)
    boundary = resample_closed(boundary, max_points, spacing=spacing)
    return Efrs(track.obstacle_id, boundary, tau_max, source="cvm", velocity=v)


@dataclass
class ProbMapStack:
    """Per-step occupancy probability maps on a shared grid.

    maps[k, j, i] is the probability for prediction step k at the grid node
    origin + resolution * (i, j).
    """

    steps: int
    width: int
    height: int
    resolution: float
    origin: NDArray[np.float64]
    step_duration: float
    maps: NDArray[np.float64]

    def __post_init__(self) -> None:
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(2)
        self.maps = np.asarray(self.maps, dtype=np.float64)
        if self.maps.shape != (self.steps, self.height, self.width):
            raise ValueError(
                f"maps shape {self.maps.shape} does not match "
                f"(steps, height, width) = {(self.steps, self.height, self.width)}"
            )

    @property
    def tau_max(self) -> float:
        return self.steps * self.step_duration


def probmap_efrs(
    stack: ProbMapStack,
    delta_kappa: float | None = None,
    obstacle_id: str = "probmap",
    max_points: int = BOUNDARY_MAX_POINTS,
    spacing: float = BOUNDARY_SPACING,
) -> list[Efrs]:
    """Reachable-set boundaries from a summed, thresholded probability stack.

    The per-step maps are summed cellwise into an occupancy mass m_occ;
    contours are extracted at delta_kappa (default 0.1 * max(m_occ)) and
    contours shorter than 4 grid resolutions are discarded as noise.
    """
    m_occ = stack.maps.sum(axis=0)
    peak = float(m_occ.max())
    if delta_kappa is None:
        delta_kappa = 0.1 * peak
    if peak <= 0.0 or delta_kappa <= 0.0:
        return []
    grid = ScalarGrid(stack.origin, stack.resolution, m_occ)
    out: list[Efrs] = []
    idx = 0
    for contour in extract_level_contours(grid, float(delta_kappa)):
        if contour.length < 4.0 * stack.resolution:
            continue
        boundary = resample_closed(contour, max_points, spacing=spacing)
        out.append(
            Efrs(f"{obstacle_id}/{idx}", boundary, stack.tau_max, source="probmap", velocity=None)
        )
        idx += 1
    return out


class ProbMapFormatError(ValueError):
    """Raised for malformed probability-map stack files; names the bad field."""


_HEADER_FIELDS = {
    "steps": int,
    "width": int,
    "height": int,
    "resolution": float,
    "origin_x": float,
    "origin_y": float,
    "step_duration": float,
}

_MAGIC = "probmap v1"


def load_probmap_stack(path: str | Path) -> ProbMapStack:
    """Read a probability-map stack file (format documented in the README).

    The file is a text header followed by steps*height*width scalars, either
    whitespace-separated text or little-endian float32 binary.
    """
    blob = Path(path).read_bytes()
    try:
        head_end = blob.index(b"data\n")
    except ValueError:
        raise ProbMapFormatError("missing 'data' marker line") from None
    header = blob[:head_end].decode("ascii", errors="replace")
    payload = blob[head_end + len(b"data\n"):]

    lines = [ln.strip() for ln in header.splitlines() if ln.strip()]
    if not lines or lines[0] != _MAGIC:
        raise ProbMapFormatError(f"bad magic line, expected {_MAGIC!r}")
    fields: dict[str, str] = {}
    for ln in lines[1:]:
        parts = ln.split(None, 1)
        if len(parts) != 2:
            raise ProbMapFormatError(f"malformed header line {ln!r}")
        fields[parts[0]] = parts[1]

    parsed: dict[str, float | int] = {}
    for name, conv in _HEADER_FIELDS.items():
        if name not in fields:
            raise ProbMapFormatError(f"missing header field '{name}'")
        try:
            parsed[name] = conv(fields[name])
        except ValueError:
            raise ProbMapFormatError(f"header field '{name}' is not a valid {conv.__name__}") from None
    encoding = fields.get("encoding", "float32")
    if encoding not in ("float32", "text"):
        raise ProbMapFormatError(f"header field 'encoding' must be float32 or text, got {encoding!r}")

    steps, width, height = int(parsed["steps"]), int(parsed["width"]), int(parsed["height"])
    if steps < 1:
        raise ProbMapFormatError("header field 'steps' must be >= 1")
    if width < 2 or height < 2:
        raise ProbMapFormatError("header fields 'width'/'height' must be >= 2")
    if parsed["resolution"] <= 0.0:
        raise ProbMapFormatError("header field 'resolution' must be positive")
    if parsed["step_duration"] <= 0.0:
        raise ProbMapFormatError("header field 'step_duration' must be positive")

    expected = steps * width * height
    if encoding == "float32":
        if len(payload) != 4 * expected:
            raise ProbMapFormatError(
                f"payload holds {len(payload) // 4} float32 values, expected "
                f"steps*height*width = {expected}"
            )
        flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    else:
        try:
            flat = np.loadtxt(io.BytesIO(payload), dtype=np.float64).reshape(-1)
        except ValueError:
            raise ProbMapFormatError("text payload contains non-numeric data") from None
        if flat.shape[0] != expected:
            raise ProbMapFormatError(
                f"payload holds {flat.shape[0]} values, expected steps*height*width = {expected}"
            )

    bad = np.flatnonzero((flat < 0.0) | (flat > 1.0) | ~np.isfinite(flat))
    if bad.size:
        k = int(bad[0])
        raise ProbMapFormatError(
            f"probability out of [0, 1] at flat index {k} (value {flat[k]!r})"
        )

    maps = flat.reshape(steps, height, width)
    return ProbMapStack(
        steps=steps,
        width=width,
        height=height,
        resolution=float(parsed["resolution"]),
        origin=np.array([parsed["origin_x"], parsed["origin_y"]]),
        step_duration=float(parsed["step_duration"]),
        maps=maps,
    )


def save_probmap_stack(stack: ProbMapStack, path: str | Path, encoding: str = "float32") -> None:
    """Write a stack in the file format load_probmap_stack reads."""
    if encoding not in ("float32", "text"):
        raise ValueError("encoding must be float32 or text")
    header = (
        f"{_MAGIC}\n"
        f"steps {stack.steps}\n"
        f"width {stack.width}\n"
        f"height {stack.height}\n"
        f"resolution {float(stack.resolution)!r}\n"
        f"origin_x {float(stack.origin[0])!r}\n"
        f"origin_y {float(stack.origin[1])!r}\n"
        f"step_duration {float(stack.step_duration)!r}\n"
        f"encoding {encoding}\n"
        f"data\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        flat = stack.maps.reshape(-1)
        if encoding == "float32":
            fh.write(np.ascontiguousarray(flat, dtype="<f4").tobytes())
        else:
            fh.write("\n".join(f"{float(x)!r}" for x in flat).encode("ascii"))
            fh.write(b"\n")
