"""Nodal discontinuous-Galerkin solver for 2D linear transport.

The domain is tiled with Kx*Ky rectangular elements; on each element the
scalar is represented by its values at tensor-product Legendre-Gauss-
Lobatto (LGL) nodes of order N. Mass and stiffness operators use LGL
quadrature (diagonal mass), elements couple only through a local
Lax-Friedrichs flux on the four faces, and time stepping is SSP-RK3 with
a CFL-controlled step recomputed from the velocity sampler each step.

Flux variants: `jump` penalizes the state jump (C_i - C_e), the standard
form and the default; `paper` penalizes the normal-velocity jump
(n.u_i - n.u_e), which vanishes for continuous velocity fields.

Boundary wiring: `physical` imposes the Dirichlet value g on the inflow
part of the boundary (outward n.u < 0) and copies the interior state on
outflow; `periodic` wraps, which makes total mass conserve exactly
(face fluxes are single-valued, so they telescope).

Field layout: values[ky, kx, a, b] with a the y-node and b the x-node
index inside element (ky, kx).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre

from .errors import BlowUp, DomainMismatch, InvalidOrder

FLUX_JUMP = "jump"
FLUX_PAPER = "paper"

WIRE_PHYSICAL = "physical"
WIRE_PERIODIC = "periodic"


def lgl_nodes(N: int):
    """LGL points and quadrature weights on [-1, 1] for order N >= 1.

    Points are the roots of (1 - r^2) P_N'(r); weights are
    2 / (N (N+1) P_N(r)^2).
    """
    if N < 1:
        raise InvalidOrder("polynomial order must be >= 1")
    if N == 1:
        nodes = np.array([-1.0, 1.0])
    else:
        pn = np.zeros(N + 1)
        pn[N] = 1.0
        interior = legendre.legroots(legendre.legder(pn))
        nodes = np.concatenate([[-1.0], np.sort(interior), [1.0]])
    pn = np.zeros(N + 1)
    pn[N] = 1.0
    weights = 2.0 / (N * (N + 1) * legendre.legval(nodes, pn) ** 2)
    return nodes, weights


def lagrange_diff_matrix(nodes: np.ndarray):
    """D[i, j] = l_j'(r_i) via barycentric weights."""
    n = nodes.size
    bw = np.ones(n)
    for j in range(n):
        for k in range(n):
            if k != j:
                bw[j] /= nodes[j] - nodes[k]
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                D[i, j] = (bw[j] / bw[i]) / (nodes[i] - nodes[j])
        D[i, i] = -np.sum(D[i, :])
    return D


def lagrange_basis_at(nodes: np.ndarray, xi: np.ndarray):
    """Values of all Lagrange basis polynomials at points xi, shape (len(xi), N+1)."""
    n = nodes.size
    bw = np.ones(n)
    for j in range(n):
        for k in range(n):
            if k != j:
                bw[j] /= nodes[j] - nodes[k]
    xi = np.asarray(xi, dtype=float)
    diff = xi[:, None] - nodes[None, :]
    hit = np.isclose(diff, 0.0, atol=1e-14)
    safe = np.where(hit, 1.0, diff)
    terms = bw[None, :] / safe
    out = terms / terms.sum(axis=1, keepdims=True)
    rows_hit = hit.any(axis=1)
    out[rows_hit] = hit[rows_hit].astype(float)
    return out


@dataclass
class DGMesh:
    Kx: int
    Ky: int
    N: int
    x0: float
    y0: float
    hx: float
    hy: float
    nodes_1d: np.ndarray
    weights_1d: np.ndarray
    diff_1d: np.ndarray
    node_x: np.ndarray  # (Ky, Kx, N+1, N+1)
    node_y: np.ndarray

    @property
    def domain(self):
        return (self.x0, self.x0 + self.Kx * self.hx, self.y0, self.y0 + self.Ky * self.hy)

    @property
    def mass_2d(self):
        """Diagonal element mass matrix entries, shape (N+1, N+1)."""
        w = self.weights_1d
        return (self.hx * self.hy / 4.0) * np.outer(w, w)


@dataclass
class DGField:
    values: np.ndarray  # (Ky, Kx, N+1, N+1)
    time: float = 0.0

    def copy(self):
        return DGField(values=self.values.copy(), time=self.time)


def build_mesh(domain, Kx: int, Ky: int, N: int) -> DGMesh:
    """Tile the rectangle domain=(x0, x1, y0, y1) with Kx*Ky order-N elements."""
    x0, x1, y0, y1 = domain
    if Kx < 1 or Ky < 1:
        raise InvalidOrder("element counts must be >= 1")
    if x1 <= x0 or y1 <= y0:
        raise ValueError("domain must have positive extent")
    nodes, weights = lgl_nodes(N)
    D = lagrange_diff_matrix(nodes)
    hx = (x1 - x0) / Kx
    hy = (y1 - y0) / Ky
    ex = np.arange(Kx)
    ey = np.arange(Ky)
    loc = (nodes + 1.0) / 2.0
    xs = x0 + (ex[:, None] + loc[None, :]) * hx  # (Kx, N+1)
    ys = y0 + (ey[:, None] + loc[None, :]) * hy  # (Ky, N+1)
    node_x = np.broadcast_to(
        xs[None, :, None, :], (Ky, Kx, N + 1, N + 1)
    ).copy()
    node_y = np.broadcast_to(
        ys[:, None, :, None], (Ky, Kx, N + 1, N + 1)
    ).copy()
    return DGMesh(
        Kx=Kx, Ky=Ky, N=N, x0=x0, y0=y0, hx=hx, hy=hy,
        nodes_1d=nodes, weights_1d=weights, diff_1d=D,
        node_x=node_x, node_y=node_y,
    )


def lax_friedrichs_flux(C_i, C_e, u_i, u_e, n_hat, variant=FLUX_JUMP):
    """Normal numerical flux n.f* at one interface point.

    u_i, u_e are velocity 2-vectors, n_hat a unit axis normal. The signal
    speed is the larger |n.u| of the two sides.
    """
    un_i = n_hat[0] * u_i[0] + n_hat[1] * u_i[1]
    un_e = n_hat[0] * u_e[0] + n_hat[1] * u_e[1]
    return _normal_flux(C_i, C_e, un_i, un_e, variant)


def _normal_flux(C_i, C_e, un_i, un_e, variant):
    cs = np.maximum(np.abs(un_i), np.abs(un_e))
    central = 0.5 * (C_i * un_i + C_e * un_e)
    if variant == FLUX_JUMP:
        return central + 0.5 * cs * (C_i - C_e)
    if variant == FLUX_PAPER:
        return central + 0.5 * cs * (un_i - un_e)
    raise ValueError(f"unknown flux variant {variant!r}")


def rhs(
    field: DGField,
    sampler,
    mesh: DGMesh,
    t: float,
    g: float = 0.0,
    flux: str = FLUX_JUMP,
    wiring: str = WIRE_PHYSICAL,
    velocity=None,
) -> np.ndarray:
    """Semi-discrete dC/dt nodal values.

    `velocity` may carry presampled (u, v) node arrays to reuse across a
    stage; otherwise the sampler is evaluated at every node.
    """
    C = field.values
    if C.shape != mesh.node_x.shape:
        raise DomainMismatch("field and mesh shapes differ")
    if velocity is None:
        u, v = sampler(mesh.node_x.ravel(), mesh.node_y.ravel(), t)
        u = np.asarray(u).reshape(C.shape)
        v = np.asarray(v).reshape(C.shape)
    else:
        u, v = velocity
    w = mesh.weights_1d
    D = mesh.diff_1d
    hx, hy = mesh.hx, mesh.hy
    Kx, Ky, N = mesh.Kx, mesh.Ky, mesh.N

    Fx = u * C
    Fy = v * C
    vol = (hy / 2.0) * np.einsum("a,k,yxak,kb->yxab", w, w, Fx, D)
    vol += (hx / 2.0) * np.einsum("b,k,yxkb,ka->yxab", w, w, Fy, D)

    # Vertical faces (normal +x): face fx separates elements fx-1 | fx.
    CL = np.empty((Ky, Kx + 1, N + 1))
    CR = np.empty_like(CL)
    uL = np.empty_like(CL)
    uR = np.empty_like(CL)
    CL[:, 1:, :] = C[:, :, :, N]
    uL[:, 1:, :] = u[:, :, :, N]
    CR[:, :Kx, :] = C[:, :, :, 0]
    uR[:, :Kx, :] = u[:, :, :, 0]
    if wiring == WIRE_PERIODIC:
        CL[:, 0, :] = C[:, Kx - 1, :, N]
        uL[:, 0, :] = u[:, Kx - 1, :, N]
        CR[:, Kx, :] = C[:, 0, :, 0]
        uR[:, Kx, :] = u[:, 0, :, 0]
        phi_x = _normal_flux(CL, CR, uL, uR, flux)
        phi_x[:, Kx, :] = phi_x[:, 0, :]
    elif wiring == WIRE_PHYSICAL:
        # West boundary: element 0 is the interior, outward normal -x, so
        # inflow where u > 0; the ghost left state is g there.
        uL[:, 0, :] = uR[:, 0, :]
        CL[:, 0, :] = np.where(uR[:, 0, :] > 0.0, g, CR[:, 0, :])
        # East boundary: outward +x, inflow where u < 0.
        uR[:, Kx, :] = uL[:, Kx, :]
        CR[:, Kx, :] = np.where(uL[:, Kx, :] < 0.0, g, CL[:, Kx, :])
        phi_x = _normal_flux(CL, CR, uL, uR, flux)
    else:
        raise ValueError(f"unknown wiring {wiring!r}")

    # Horizontal faces (normal +y): face fy separates elements fy-1 | fy.
    CB = np.empty((Ky + 1, Kx, N + 1))
    CT = np.empty_like(CB)
    vB = np.empty_like(CB)
    vT = np.empty_like(CB)
    CB[1:, :, :] = C[:, :, N, :]
    vB[1:, :, :] = v[:, :, N, :]
    CT[:Ky, :, :] = C[:, :, 0, :]
    vT[:Ky, :, :] = v[:, :, 0, :]
    if wiring == WIRE_PERIODIC:
        CB[0, :, :] = C[Ky - 1, :, N, :]
        vB[0, :, :] = v[Ky - 1, :, N, :]
        CT[Ky, :, :] = C[0, :, 0, :]
        vT[Ky, :, :] = v[0, :, 0, :]
        phi_y = _normal_flux(CB, CT, vB, vT, flux)
        phi_y[Ky, :, :] = phi_y[0, :, :]
    else:
        vB[0, :, :] = vT[0, :, :]
        CB[0, :, :] = np.where(vT[0, :, :] > 0.0, g, CT[0, :, :])
        vT[Ky, :, :] = vB[Ky, :, :]
        CT[Ky, :, :] = np.where(vB[Ky, :, :] < 0.0, g, CB[Ky, :, :])
        phi_y = _normal_flux(CB, CT, vB, vT, flux)

    surf = np.zeros_like(C)
    we = (hy / 2.0) * w  # edge mass along a vertical face
    surf[:, :, :, N] += we[None, None, :] * phi_x[:, 1:, :]
    surf[:, :, :, 0] -= we[None, None, :] * phi_x[:, :Kx, :]
    we = (hx / 2.0) * w
    surf[:, :, N, :] += we[None, None, :] * phi_y[1:, :, :]
    surf[:, :, 0, :] -= we[None, None, :] * phi_y[:Ky, :, :]

    return (vol - surf) / mesh.mass_2d[None, None, :, :]


def total_mass(field: DGField, mesh: DGMesh) -> float:
    """Quadrature of the field over the domain."""
    return float(np.einsum("ab,yxab->", mesh.mass_2d, field.values))


def cfl_timestep(mesh: DGMesh, vmax: float, cfl: float) -> float:
    if vmax <= 0.0:
        return np.inf
    return cfl * min(mesh.hx, mesh.hy) / ((2 * mesh.N + 1) * vmax)


def advect(
    initial: DGField,
    sampler,
    mesh: DGMesh,
    t0: float,
    t1: float,
    cfl: float = 0.5,
    g: float = 0.0,
    flux: str = FLUX_JUMP,
    wiring: str = WIRE_PHYSICAL,
    on_step=None,
) -> DGField:
    """SSP-RK3 advection from t0 to t1 under the velocity sampler.

    The step is cfl*h_min/((2N+1)*max|u|), recomputed from the sampler
    each step; the final step is shortened to land exactly on t1.
    """
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    if not 0.0 < cfl <= 1.0:
        raise ValueError("cfl must lie in (0, 1]")
    C = initial.values.copy()
    guard = 1e6 * max(1e-12, float(np.abs(C).max()))
    t = t0
    x_flat = mesh.node_x.ravel()
    y_flat = mesh.node_y.ravel()

    def stage_velocity(ts):
        u, v = sampler(x_flat, y_flat, ts)
        return np.asarray(u).reshape(C.shape), np.asarray(v).reshape(C.shape)

    while t < t1 - 1e-13 * max(1.0, abs(t1)):
        u0, v0 = stage_velocity(t)
        vmax = max(np.abs(u0).max(), np.abs(v0).max())
        dt = min(cfl_timestep(mesh, vmax, cfl), t1 - t)
        if not np.isfinite(dt):
            dt = t1 - t
        f = DGField(values=C, time=t)
        k1 = rhs(f, sampler, mesh, t, g, flux, wiring, velocity=(u0, v0))
        c1 = C + dt * k1
        k2 = rhs(DGField(c1, t + dt), sampler, mesh, t + dt, g, flux, wiring)
        c2 = 0.75 * C + 0.25 * (c1 + dt * k2)
        k3 = rhs(DGField(c2, t + dt / 2), sampler, mesh, t + dt / 2, g, flux, wiring)
        C = C / 3.0 + (2.0 / 3.0) * (c2 + dt * k3)
        t += dt
        if np.abs(C).max() > guard:
            raise BlowUp(f"nodal values exceeded {guard:.3e} at t={t}")
        if on_step is not None:
            on_step(DGField(values=C, time=t))
    return DGField(values=C, time=t1)


# ------------------------------------------------------- raster transfers


def _pixel_coords_of_nodes(mesh: DGMesh, frame):
    """Fractional (row, col) pixel indices of every mesh node on a lon-lat raster."""
    from .geo import xy_to_lonlat

    lon, lat = xy_to_lonlat(frame, mesh.node_x.ravel(), mesh.node_y.ravel())
    col = (lon - frame.lon_min) / frame.dlon
    row = (lat - frame.lat_min) / frame.dlat
    return row, col


def grid_to_dg(grid, mesh: DGMesh) -> DGField:
    """Bilinear sampling of a ScalarGrid at all mesh nodes."""
    from scipy.ndimage import map_coordinates

    frame = grid.frame
    row, col = _pixel_coords_of_nodes(mesh, frame)
    if (
        row.min() < -1.0 or row.max() > frame.ny
        or col.min() < -1.0 or col.max() > frame.nx
    ):
        raise DomainMismatch("mesh extends beyond the raster by more than one pixel")
    vals = map_coordinates(
        grid.values, [row, col], order=1, mode="nearest"
    ).reshape(mesh.node_x.shape)
    return DGField(values=vals, time=float(grid.timestamp) / 60.0)


def dg_to_grid(field: DGField, mesh: DGMesh, like) -> "ScalarGrid":
    """Evaluate the nodal polynomials at the pixel centers of `like`'s frame."""
    from .codio import ScalarGrid
    from .geo import lonlat_to_xy

    frame = like.frame
    lon = frame.lons()
    lat = frame.lats()
    lon2, lat2 = np.meshgrid(lon, lat)
    x, y = lonlat_to_xy(frame, lon2.ravel(), lat2.ravel())
    x0, x1, y0, y1 = mesh.domain
    pad = 1e-9 * max(mesh.hx, mesh.hy)
    if x.min() < x0 - pad or x.max() > x1 + pad or y.min() < y0 - pad or y.max() > y1 + pad:
        raise DomainMismatch("raster extends beyond the mesh domain")

    fx = np.clip((x - x0) / mesh.hx, 0.0, mesh.Kx * (1 - 1e-15))
    fy = np.clip((y - y0) / mesh.hy, 0.0, mesh.Ky * (1 - 1e-15))
    ex = np.minimum(fx.astype(int), mesh.Kx - 1)
    ey = np.minimum(fy.astype(int), mesh.Ky - 1)
    xi = 2.0 * (fx - ex) - 1.0
    eta = 2.0 * (fy - ey) - 1.0
    Lx = lagrange_basis_at(mesh.nodes_1d, xi)
    Ly = lagrange_basis_at(mesh.nodes_1d, eta)
    vals = np.einsum("pa,pb,pab->p", Ly, Lx, field.values[ey, ex])
    values = vals.reshape(frame.ny, frame.nx)
    return ScalarGrid(
        values=np.maximum(values, 0.0),
        timestamp=int(round(field.time * 60.0)),
        frame=frame,
    )
