"""Online Gaussian-process distance fields over obstacle boundary points.

A model is fit to boundary samples with an exponential (Matern nu=1/2)
kernel and unit regression targets; distance and its gradient are recovered
from the latent mean by the closed-form kernel inversion. Within roughly a
kernel length scale of the boundary the recovered distance tracks the true
one closely; far from the boundary the mixture interferes and the value is a
soft-min style underestimate, which is the conservative direction for safety
constraints. The latent floor caps the usable range at -L*ln(1e-12), about
27.6 length scales.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import cdist

LATENT_FLOOR = 1e-12


class GpdfFitError(RuntimeError):
    """Gram matrix was not numerically SPD; retry with a small noise jitter."""


@dataclass(frozen=True)
class KernelParams:
    sigma: float = 1.0
    length_scale: float = 0.2
    noise: float = 0.0

    def __post_init__(self) -> None:
        if self.sigma <= 0.0 or self.length_scale <= 0.0:
            raise ValueError("kernel sigma and length_scale must be positive")
        if self.noise < 0.0:
            raise ValueError("kernel noise must be non-negative")


@dataclass
class GpdfModel:
    points: NDArray[np.float64]
    kernel: KernelParams
    alpha: NDArray[np.float64]

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def max_distance(self) -> float:
        """Distance value at the latent floor (saturation cap)."""
        k = self.kernel
        return float(-k.length_scale * np.log(LATENT_FLOOR / k.sigma**2))


def fit(points: NDArray, kernel: KernelParams = KernelParams()) -> GpdfModel:
    """Fit latent weights alpha = (K + noise^2 I)^-1 1 on boundary points.

    Raises GpdfFitError when the Gram matrix is not SPD (duplicate points
    with zero noise, typically); callers should retry with noise ~ 1e-6.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
        raise ValueError(f"boundary points must be (n, 2) with n >= 1, got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("boundary points must be finite")
    k = kernel
    K = k.sigma**2 * np.exp(-cdist(pts, pts) / k.length_scale)
    K[np.diag_indices_from(K)] += k.noise**2
    try:
        factor = cho_factor(K, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise GpdfFitError(
            "Gram matrix is not SPD (coincident boundary points?); "
            "retry with a noise jitter of about 1e-6"
        ) from exc
    alpha = cho_solve(factor, np.ones(pts.shape[0]), check_finite=False)
    return GpdfModel(points=pts, kernel=k, alpha=alpha)


def fit_with_jitter(points: NDArray, kernel: KernelParams = KernelParams(), jitter: float = 1e-6) -> GpdfModel:
    """fit(), retrying once with a noise jitter if the Gram matrix is not SPD."""
    try:
        return fit(points, kernel)
    except GpdfFitError:
        bumped = KernelParams(kernel.sigma, kernel.length_scale, max(kernel.noise, jitter))
        return fit(points, bumped)


def fit_residual(model: GpdfModel) -> float:
    """Max-norm residual of (K + noise^2 I) alpha = 1 (re-checkable contract)."""
    k = model.kernel
    K = k.sigma**2 * np.exp(-cdist(model.points, model.points) / k.length_scale)
    K[np.diag_indices_from(K)] += k.noise**2
    return float(np.max(np.abs(K @ model.alpha - 1.0)))


def _latent(model: GpdfModel, queries: NDArray) -> NDArray[np.float64]:
    k = model.kernel
    return k.sigma**2 * np.exp(-cdist(queries, model.points) / k.length_scale) @ model.alpha


def query_many(
    model: GpdfModel, queries: NDArray
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.bool_]]:
    """Distances, gradients, and saturation flags for a batch of query points.

    Saturated queries (latent at or below the floor) report the capped
    distance and a zero gradient.
    """
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    k = model.kernel
    diff = q[:, None, :] - model.points[None, :, :]  # (m, n, 2)
    r = np.linalg.norm(diff, axis=2)
    kern = k.sigma**2 * np.exp(-r / k.length_scale)
    raw = kern @ model.alpha
    saturated = raw <= LATENT_FLOOR
    om = np.clip(raw, LATENT_FLOOR, k.sigma**2)
    d = -k.length_scale * np.log(om / k.sigma**2)

    # d(kernel)/dp = -(sigma^2/L) e^{-r/L} (p - p_i)/r ; term is zero at r -> 0
    safe_r = np.where(r < 1e-9, 1.0, r)
    w = np.where(r < 1e-9, 0.0, kern / (safe_r * k.length_scale))
    grad_latent = -np.einsum("mn,mnd,n->md", w, diff, model.alpha)
    grad = (-k.length_scale / om)[:, None] * grad_latent
    grad[saturated] = 0.0
    return d, grad, saturated


def distance(model: GpdfModel, p: NDArray) -> float:
    """Unsigned distance estimate at a single query point."""
    d, _, _ = query_many(model, np.asarray(p, dtype=np.float64).reshape(1, 2))
    return float(d[0])


def distance_many(model: GpdfModel, queries: NDArray) -> NDArray[np.float64]:
    """Distance estimates for an (m, 2) batch without gradient work."""
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    om = np.clip(_latent(model, q), LATENT_FLOOR, model.kernel.sigma**2)
    return -model.kernel.length_scale * np.log(om / model.kernel.sigma**2)


def gradient(model: GpdfModel, p: NDArray) -> NDArray[np.float64]:
    """Distance gradient at a single query point (zero where saturated)."""
    _, g, _ = query_many(model, np.asarray(p, dtype=np.float64).reshape(1, 2))
    return g[0]


def is_saturated(model: GpdfModel, p: NDArray) -> bool:
    _, _, s = query_many(model, np.asarray(p, dtype=np.float64).reshape(1, 2))
    return bool(s[0])


def distance_many_f32(model: GpdfModel, queries: NDArray) -> NDArray[np.float32]:
    """Single-precision batch distances for large rasters (error ~1e-6 m)."""
    q = np.ascontiguousarray(queries, dtype=np.float32)
    pts = model.points.astype(np.float32)
    k = model.kernel
    om = np.exp(-cdist(q, pts).astype(np.float32) / np.float32(k.length_scale))
    om = (k.sigma**2 * om) @ model.alpha.astype(np.float32)
    om = np.clip(om, np.float32(LATENT_FLOOR), np.float32(k.sigma**2))
    return -np.float32(k.length_scale) * np.log(om / np.float32(k.sigma**2))
