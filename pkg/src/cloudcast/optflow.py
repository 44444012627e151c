"""Pyramidal robust optical flow between two conditioned COD images.

Coarse-to-fine estimator: a Gaussian pyramid is built for both frames; at
each level the transport constraint is linearized about the current warp
(bicubic interpolation of the second frame and of its derivatives), the
increment minimizes a Charbonnier-penalized data term plus quadratic
smoothness via iteratively reweighted Jacobi sweeps, and the flow is
median filtered after every warp iteration before being upsampled to the
next level.

Flow convention: a feature at pixel (x, y) in `prev` sits at
(x + u, y + v) in `next`, i.e. next(x + u) == prev(x); u is the column
(eastward) and v the row (northward) displacement in pixels per frame.
Images are jointly normalized by their peak intensity before estimation,
so the smoothness weight alpha is intensity-scale-free.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .codio import FlowField, ScalarGrid, UNITS_PX
from .errors import NonConvergenceWarning, ShapeMismatch, TooSmall
from .geo import GeoFrame

_DERIV_KERNEL = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_SMOOTH_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
_AVG_KERNEL = np.array([[0.0, 0.25, 0.0], [0.25, 0.0, 0.25], [0.0, 0.25, 0.0]])


@dataclass
class FlowConfig:
    levels: int = 3
    alpha: float = 0.05
    charbonnier_eps: float = 1e-3
    warp_iters: int = 3
    solver_iters: int = 100
    solver_tol: float = 0.0
    median_radius: int = 2

    def __post_init__(self):
        if self.levels < 1 or self.warp_iters < 1 or self.solver_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.alpha <= 0 or self.charbonnier_eps <= 0:
            raise ValueError("alpha and charbonnier_eps must be positive")


def _decimated_frame(frame: GeoFrame, nx, ny) -> GeoFrame:
    return GeoFrame.from_origin(
        frame.r, frame.lon_min, frame.lat_min,
        frame.dlon * (frame.nx - 1) / max(nx - 1, 1),
        frame.dlat * (frame.ny - 1) / max(ny - 1, 1),
        nx, ny,
    )


def gaussian_pyramid(grid: ScalarGrid, levels: int) -> list[ScalarGrid]:
    """Level 0 is the input; each further level is smoothed and decimated by 2."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    out = [grid]
    values = grid.values
    for _ in range(levels - 1):
        smoothed = ndimage.correlate1d(values, _SMOOTH_KERNEL, axis=0, mode="nearest")
        smoothed = ndimage.correlate1d(smoothed, _SMOOTH_KERNEL, axis=1, mode="nearest")
        values = smoothed[::2, ::2]
        ny, nx = values.shape
        if nx < 8 or ny < 8:
            raise TooSmall(f"pyramid level would be {ny}x{nx}, need >= 8x8")
        out.append(
            ScalarGrid(
                values=values,
                timestamp=grid.timestamp,
                frame=_decimated_frame(grid.frame, nx, ny),
            )
        )
    return out


def _warp_array(values: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    ny, nx = values.shape
    cols, rows = np.meshgrid(np.arange(nx, dtype=float), np.arange(ny, dtype=float))
    return ndimage.map_coordinates(
        values, [rows + v, cols + u], order=3, mode="nearest"
    )


def warp_bicubic(grid: ScalarGrid, flow: FlowField) -> ScalarGrid:
    """Sample the grid at (x + u, y + v) with bicubic spline interpolation.

    Out-of-domain samples clamp to the nearest edge value.
    """
    if flow.u.shape != grid.values.shape:
        raise ShapeMismatch("flow and grid shapes differ")
    return grid.copy_with(values=_warp_array(grid.values, flow.u, flow.v))


def median_filter_flow(flow: FlowField, radius: int) -> FlowField:
    """Componentwise spatial median in a (2r+1)^2 window, edge-replicated."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    size = 2 * radius + 1
    return FlowField(
        u=ndimage.median_filter(flow.u, size=size, mode="nearest"),
        v=ndimage.median_filter(flow.v, size=size, mode="nearest"),
        units=flow.units, t_prev=flow.t_prev, t_cur=flow.t_cur, frame=flow.frame,
    )


def _median_arrays(u, v, radius):
    size = 2 * radius + 1
    return (
        ndimage.median_filter(u, size=size, mode="nearest"),
        ndimage.median_filter(v, size=size, mode="nearest"),
    )


def _derivs(values):
    gx = ndimage.correlate1d(values, _DERIV_KERNEL, axis=1, mode="nearest")
    gy = ndimage.correlate1d(values, _DERIV_KERNEL, axis=0, mode="nearest")
    return gx, gy


def _resize(a: np.ndarray, shape) -> np.ndarray:
    """Bilinear resize with pixel-area alignment and replicated edges."""
    ny, nx = a.shape
    ty, tx = shape
    rows = (np.arange(ty) + 0.5) * ny / ty - 0.5
    cols = (np.arange(tx) + 0.5) * nx / tx - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(a, [rr, cc], order=1, mode="nearest")


def _solve_increment(Ix, Iy, It, u0, v0, u, v, cfg: FlowConfig):
    """Reweighted Jacobi sweeps for the linearized robust flow objective.

    Solves for the updated total flow (u, v); the data residual is
    Ix (u - u0) + Iy (v - v0) + It about the warp base (u0, v0).
    """
    lam4 = 4.0 * cfg.alpha  # 4-neighbor Laplacian weight sum
    b = Ix * u0 + Iy * v0 - It
    eps2 = cfg.charbonnier_eps**2
    change = np.inf
    for _ in range(cfg.solver_iters):
        r = Ix * (u - u0) + Iy * (v - v0) + It
        w = 1.0 / np.sqrt(r * r + eps2)
        u_avg = ndimage.correlate(u, _AVG_KERNEL, mode="nearest")
        v_avg = ndimage.correlate(v, _AVG_KERNEL, mode="nearest")
        a11 = w * Ix * Ix + lam4
        a22 = w * Iy * Iy + lam4
        a12 = w * Ix * Iy
        rhs1 = lam4 * u_avg + w * Ix * b
        rhs2 = lam4 * v_avg + w * Iy * b
        det = a11 * a22 - a12 * a12
        u_new = (a22 * rhs1 - a12 * rhs2) / det
        v_new = (a11 * rhs2 - a12 * rhs1) / det
        change = max(np.abs(u_new - u).max(), np.abs(v_new - v).max())
        u, v = u_new, v_new
        if cfg.solver_tol > 0 and change < cfg.solver_tol:
            break
    if cfg.solver_tol > 0 and change >= cfg.solver_tol:
        warnings.warn(
            "flow solver budget exhausted before reaching tolerance",
            NonConvergenceWarning,
        )
    return u, v


def estimate_flow(prev: ScalarGrid, next_: ScalarGrid, cfg: FlowConfig | None = None) -> FlowField:
    """Coarse-to-fine robust flow from `prev` to `next_` in px/frame."""
    cfg = cfg or FlowConfig()
    if prev.values.shape != next_.values.shape:
        raise ShapeMismatch("frames must share shape")
    I0_full = np.nan_to_num(prev.values, nan=0.0)
    I1_full = np.nan_to_num(next_.values, nan=0.0)
    scale = max(np.abs(I0_full).max(), np.abs(I1_full).max(), 1e-12)
    p0 = gaussian_pyramid(prev.copy_with(values=I0_full / scale), cfg.levels)
    p1 = gaussian_pyramid(next_.copy_with(values=I1_full / scale), cfg.levels)

    u = np.zeros(p0[-1].values.shape)
    v = np.zeros_like(u)
    for level in range(cfg.levels - 1, -1, -1):
        I0 = p0[level].values
        I1 = p1[level].values
        if u.shape != I0.shape:
            factor = I0.shape[1] / u.shape[1]
            u = _resize(u, I0.shape) * factor
            v = _resize(v, I0.shape) * factor
        g1x, g1y = _derivs(I1)
        g0x, g0y = _derivs(I0)
        for _ in range(cfg.warp_iters):
            u0, v0 = u, v
            I1w = _warp_array(I1, u0, v0)
            Ix = 0.5 * (g0x + _warp_array(g1x, u0, v0))
            Iy = 0.5 * (g0y + _warp_array(g1y, u0, v0))
            It = I1w - I0
            u, v = _solve_increment(Ix, Iy, It, u0, v0, u, v, cfg)
            u, v = _median_arrays(u, v, cfg.median_radius)
    u = np.nan_to_num(u, nan=0.0, posinf=0.0, neginf=0.0)
    v = np.nan_to_num(v, nan=0.0, posinf=0.0, neginf=0.0)
    return FlowField(
        u=u, v=v, units=UNITS_PX,
        t_prev=prev.timestamp, t_cur=next_.timestamp, frame=prev.frame,
    )
