"""Fourier-Galerkin discretization of the 2D vorticity-streamfunction NSE.

The vorticity on the periodic box [0,Lx)x[0,Ly) is expanded in complex
exponentials phi_n(x)phi_m(y), phi_n(x) = exp(2*pi*i*n*x/Lx), over the
band |n| <= Nx/2, |m| <= Ny/2. With the inner product rescaled by
1/(Lx*Ly) this basis is orthonormal, so rescaled-L2 norms of band-limited
fields equal plain 2-norms of coefficient vectors.

Coefficients are stored as a complex (Ny+1, Nx+1) array indexed
[m + Ny/2, n + Nx/2]; flattening is row-major, and negating both mode
indices is exactly full array reversal. A real field has conjugate
symmetry coeffs[::-1, ::-1] == conj(coeffs), and vorticity additionally
has zero mean (center coefficient 0).

The semi-discrete model is

    d/dt w = -B(w) w - B(mean) w - nu*A w,

where A = diag(Laplacian eigenvalues) and B(a) is the convolution-type
advection matrix; one step of the unconditionally stable implicit
midpoint rule solves

    (I - dt/2 G) w' = (I + dt/2 G) w,   G = -B(w) - B(mean) - nu*A,

with G frozen at the left state, i.e. one linear solve per step. B(a) is
assembled as the explicit double sum (a gathered kernel product); this
dense form is the normative semantics, exact for the truncated band.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, SingularSystem

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class SpectralConfig:
    Nx: int
    Ny: int
    Lx: float
    Ly: float
    nu: float = 1.0
    dt: float = 0.05  # hours

    def __post_init__(self):
        if self.Nx % 2 or self.Ny % 2 or self.Nx < 2 or self.Ny < 2:
            raise ValueError("Nx, Ny must be even and >= 2")
        if self.Lx <= 0 or self.Ly <= 0:
            raise ValueError("Lx, Ly must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def shape(self):
        return (self.Ny + 1, self.Nx + 1)

    @property
    def size(self):
        return (self.Ny + 1) * (self.Nx + 1)


@dataclass
class SpectralState:
    """Vorticity coefficients (conjugate-symmetric, zero-mean) at one time."""

    coeffs: np.ndarray  # complex, (Ny+1, Nx+1)
    time: float = 0.0  # hours

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if self.coeffs.ndim != 2:
            raise ShapeMismatch("coeffs must be 2-D")

    def copy(self):
        return SpectralState(coeffs=self.coeffs.copy(), time=self.time)


@dataclass(frozen=True)
class MeanFlow:
    u_bar: float = 0.0
    v_bar: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.u_bar) and np.isfinite(self.v_bar)):
            raise ValueError("mean flow must be finite")


def symmetrize(coeffs: np.ndarray) -> np.ndarray:
    """Project onto the conjugate-symmetric zero-mean subspace."""
    out = 0.5 * (coeffs + np.conj(coeffs[::-1, ::-1]))
    out[out.shape[0] // 2, out.shape[1] // 2] = 0.0
    return out


def laplacian_eigenvalues(cfg: SpectralConfig) -> np.ndarray:
    """Eigenvalues lambda_nm = 4 pi^2 n^2/Lx^2 + 4 pi^2 m^2/Ly^2, (Ny+1, Nx+1)."""
    n = np.arange(-cfg.Nx // 2, cfg.Nx // 2 + 1)
    m = np.arange(-cfg.Ny // 2, cfg.Ny // 2 + 1)
    return (TWO_PI**2) * (
        (n[None, :] ** 2) / cfg.Lx**2 + (m[:, None] ** 2) / cfg.Ly**2
    )


class SpectralOperators:
    """Precomputed kernels and diagonals for one (Nx, Ny, Lx, Ly) geometry.

    Kernel/gather pairs let B(a) and the first-argument derivative
    Btilde_w be assembled per call as one fancy-index gather and an
    elementwise product over the dense (size x size) matrix.
    """

    def __init__(self, cfg: SpectralConfig):
        self.cfg = cfg
        ny1, nx1 = cfg.shape
        cx, cy = cfg.Nx // 2, cfg.Ny // 2
        n = np.arange(-cx, cx + 1)
        m = np.arange(-cy, cy + 1)
        self.n_flat = np.tile(n, ny1)  # x-mode of each flat index
        self.m_flat = np.repeat(m, nx1)  # y-mode of each flat index
        self.lam_flat = laplacian_eigenvalues(cfg).ravel()

        Lx, Ly = cfg.Lx, cfg.Ly
        c = self.n_flat[:, None]  # output x-mode
        d = self.m_flat[:, None]  # output y-mode

        # B(a): entry[out, in] = a_{c-n, d-m} (c*m_in - d*n_in) LxLy / ((c-n)^2 Ly^2 + (d-m)^2 Lx^2)
        n_in = self.n_flat[None, :]
        m_in = self.m_flat[None, :]
        p = c - n_in
        q = d - m_in
        valid = (np.abs(p) <= cx) & (np.abs(q) <= cy) & ((p != 0) | (q != 0))
        denom = (p**2) * Ly**2 + (q**2) * Lx**2
        denom[~valid] = 1
        self._kernel_b = np.where(valid, (c * m_in - d * n_in) * Lx * Ly / denom, 0.0)
        gather = (q + cy) * nx1 + (p + cx)
        gather[~valid] = 0
        self._gather_b = gather

        # Btilde_w: entry[out, in=(q,p)] = w_{c-p, d-q} (p*d - q*c) LxLy / (p^2 Ly^2 + q^2 Lx^2)
        p2 = n_in
        q2 = m_in
        valid2 = (np.abs(c - p2) <= cx) & (np.abs(d - q2) <= cy) & ((p2 != 0) | (q2 != 0))
        denom2 = (p2**2) * Ly**2 + (q2**2) * Lx**2 + (~valid2)
        self._kernel_bt = np.where(valid2, (p2 * d - q2 * c) * Lx * Ly / denom2, 0.0)
        gather2 = (d - q2 + cy) * nx1 + (c - p2 + cx)
        gather2[~valid2] = 0
        self._gather_bt = gather2

        lam_safe = np.where(self.lam_flat > 0, self.lam_flat, 1.0)
        # Streamfunction-derivative diagonals: psi_x = ax*w, psi_y = ay*w.
        self.ax = np.where(
            self.lam_flat > 0, TWO_PI * 1j * self.n_flat / (lam_safe * Lx), 0.0
        )
        self.ay = np.where(
            self.lam_flat > 0, TWO_PI * 1j * self.m_flat / (lam_safe * Ly), 0.0
        )
        # Plain derivative diagonals (d/dx, d/dy in coefficient space).
        self.dx = TWO_PI * 1j * self.n_flat / Lx
        self.dy = TWO_PI * 1j * self.m_flat / Ly

    def advection_matrix(self, a_coeffs: np.ndarray) -> np.ndarray:
        """Dense B(a) for a coefficient array a (the nonlinear advection term)."""
        return self._kernel_b * a_coeffs.ravel()[self._gather_b]

    def mean_diagonal(self, mean: MeanFlow) -> np.ndarray:
        """Diagonal of B(mean): transport by the constant velocity (u_bar, v_bar)."""
        return mean.u_bar * self.dx + mean.v_bar * self.dy

    def advection_derivative_matrix(self, w_flat: np.ndarray) -> np.ndarray:
        """Dense matrix of a -> B(a) w for fixed w (derivative in the first slot)."""
        return self._kernel_bt * w_flat[self._gather_bt]

    def generator(self, omega_flat: np.ndarray, mean: MeanFlow, nonlinear=True) -> np.ndarray:
        """Dense G = -B(w) - B(mean) - nu*A evaluated at omega.

        nonlinear=False drops the vortical self-advection B(w), leaving
        the linear mean-transport/diffusion generator.
        """
        if nonlinear:
            G = -self.advection_matrix(omega_flat.reshape(self.cfg.shape))
        else:
            G = np.zeros((self.cfg.size, self.cfg.size), dtype=np.complex128)
        diag = -(self.mean_diagonal(mean) + self.cfg.nu * self.lam_flat)
        G[np.diag_indices_from(G)] += diag
        return G

    def step(self, omega_flat: np.ndarray, mean: MeanFlow, nonlinear=True) -> np.ndarray:
        """One implicit-midpoint step of the vorticity ODE (one linear solve)."""
        G = self.generator(omega_flat, mean, nonlinear)
        half = 0.5 * self.cfg.dt
        eye = np.eye(self.cfg.size)
        rhs = omega_flat + half * (G @ omega_flat)
        try:
            out = np.linalg.solve(eye - half * G, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem("implicit midpoint system is singular") from exc
        return out


_OPERATOR_CACHE: dict[tuple, SpectralOperators] = {}


def operators(cfg: SpectralConfig) -> SpectralOperators:
    key = (cfg.Nx, cfg.Ny, cfg.Lx, cfg.Ly, cfg.nu, cfg.dt)
    ops = _OPERATOR_CACHE.get(key)
    if ops is None:
        ops = _OPERATOR_CACHE[key] = SpectralOperators(cfg)
    return ops


def advection_operator(state_or_mean, cfg: SpectralConfig) -> np.ndarray:
    """Dense matrix action of B(.) for a SpectralState or a MeanFlow."""
    ops = operators(cfg)
    if isinstance(state_or_mean, MeanFlow):
        return np.diag(ops.mean_diagonal(state_or_mean))
    return ops.advection_matrix(state_or_mean.coeffs)


def _band_bins(cfg: SpectralConfig, shape):
    ny, nx = shape
    if nx < cfg.Nx + 1 or ny < cfg.Ny + 1:
        raise ShapeMismatch(
            f"raster {shape} too coarse for modes ({cfg.Ny + 1}, {cfg.Nx + 1})"
        )
    idx_n = np.arange(-cfg.Nx // 2, cfg.Nx // 2 + 1) % nx
    idx_m = np.arange(-cfg.Ny // 2, cfg.Ny // 2 + 1) % ny
    return idx_m, idx_n


def band_project(field: np.ndarray, cfg: SpectralConfig) -> np.ndarray:
    """DFT coefficients of a raster restricted to the truncated band.

    The raster must sample [0,Lx)x[0,Ly) uniformly (periodic convention:
    point (j, i) at (i*Lx/nx, j*Ly/ny)).
    """
    field = np.asarray(field, dtype=np.float64)
    idx_m, idx_n = _band_bins(cfg, field.shape)
    spectrum = np.fft.fft2(field) / field.size
    return spectrum[np.ix_(idx_m, idx_n)]


def project_field(field: np.ndarray, cfg: SpectralConfig) -> SpectralState:
    """Project a raster onto the band and return a zero-mean vorticity state."""
    return SpectralState(coeffs=symmetrize(band_project(field, cfg)), time=0.0)


def evaluate_coeffs(coeffs: np.ndarray, cfg: SpectralConfig, shape) -> np.ndarray:
    """Evaluate band coefficients on a uniform raster of the given shape."""
    idx_m, idx_n = _band_bins(cfg, shape)
    spectrum = np.zeros(shape, dtype=np.complex128)
    spectrum[np.ix_(idx_m, idx_n)] = coeffs
    field = np.fft.ifft2(spectrum) * shape[0] * shape[1]
    return field


def evaluate_field(state: SpectralState, cfg: SpectralConfig, shape) -> np.ndarray:
    """Evaluate a symmetric state on a raster; the result is real."""
    field = evaluate_coeffs(state.coeffs, cfg, shape)
    scale = max(1.0, np.abs(field.real).max())
    if np.abs(field.imag).max() > 1e-10 * scale:
        raise ValueError("state is not conjugate-symmetric: imaginary residue")
    return field.real


def vorticity_to_velocity(state: SpectralState, cfg: SpectralConfig):
    """Velocity coefficients (u, v) from vorticity via the streamfunction.

    psi = omega / lambda (componentwise, center -> 0), u = psi_y,
    v = -psi_x; the spectral curl of (u, v) recovers omega exactly.
    """
    ops = operators(cfg)
    w = state.coeffs.ravel()
    u = (ops.ay * w).reshape(cfg.shape)
    v = (-ops.ax * w).reshape(cfg.shape)
    return u, v


def velocity_on_raster(state: SpectralState, mean: MeanFlow, cfg: SpectralConfig, shape):
    """Evaluate total velocity (mean + spectral part) on a uniform raster."""
    u_c, v_c = vorticity_to_velocity(state, cfg)
    u = evaluate_coeffs(u_c, cfg, shape).real + mean.u_bar
    v = evaluate_coeffs(v_c, cfg, shape).real + mean.v_bar
    return u, v


def spectral_curl(u_coeffs: np.ndarray, v_coeffs: np.ndarray, cfg: SpectralConfig):
    """curl(u, v) = v_x - u_y in coefficient space."""
    ops = operators(cfg)
    out = ops.dx * v_coeffs.ravel() - ops.dy * u_coeffs.ravel()
    return out.reshape(cfg.shape)


def step_implicit_midpoint(
    state: SpectralState, mean: MeanFlow, cfg: SpectralConfig
) -> SpectralState:
    """Advance one dt, enforcing conjugate symmetry and zero mean afterwards."""
    ops = operators(cfg)
    out = ops.step(state.coeffs.ravel(), mean)
    return SpectralState(
        coeffs=symmetrize(out.reshape(cfg.shape)), time=state.time + cfg.dt
    )


def _steps_between(t0: float, t1: float, dt: float) -> int:
    k = (t1 - t0) / dt
    k_round = round(k)
    if k_round < 0 or abs(k - k_round) > 1e-6:
        raise ValueError(f"dt={dt} does not divide the gap {t1 - t0}")
    return k_round


def solve_nse(
    q_hat: SpectralState, mean: MeanFlow, cfg: SpectralConfig, t_grid
) -> list[SpectralState]:
    """States at the requested times, by repeated implicit-midpoint stepping.

    t_grid must be increasing, start at the state's time, and have gaps
    divisible by cfg.dt.
    """
    t_grid = list(t_grid)
    if not t_grid:
        raise ValueError("t_grid is empty")
    if abs(t_grid[0] - q_hat.time) > 1e-9:
        raise ValueError("t_grid must start at the initial state's time")
    out = [q_hat.copy()]
    current = q_hat.copy()
    for t_prev, t_next in zip(t_grid[:-1], t_grid[1:]):
        if t_next <= t_prev:
            raise ValueError("t_grid must be strictly increasing")
        for _ in range(_steps_between(t_prev, t_next, cfg.dt)):
            current = step_implicit_midpoint(current, mean, cfg)
        out.append(current.copy())
    return out
