import math

import numpy as np
import pytest

from cloudcast import assimilate as asm
from cloudcast.assimilate import (
    FitOptions,
    FitParams,
    FitProblem,
    FlowObservations,
    cost_J,
    fit_lbfgs,
    initial_params,
    pack_cogradient,
    pack_params,
    step_linear_midpoint,
    unpack_coeffs,
    unpack_params,
)
from cloudcast.spectral import (
    MeanFlow,
    SpectralConfig,
    SpectralState,
    solve_nse,
    symmetrize,
    velocity_on_raster,
)

RASTER = (20, 24)


def _cfg(N=4, nu=0.4, dt=1e-2):
    return SpectralConfig(Nx=N, Ny=N, Lx=2 * np.pi, Ly=2 * np.pi, nu=nu, dt=dt)


def _random_params(cfg, rng, scale=0.5, mean=(0.3, -0.2)):
    c = scale * (rng.normal(size=cfg.shape) + 1j * rng.normal(size=cfg.shape))
    return FitParams(
        q_hat=SpectralState(coeffs=symmetrize(c), time=0.0),
        u_bar=mean[0],
        v_bar=mean[1],
    )


def _synth_obs_at(params, cfg, times):
    """Observations generated by the forward model itself (inverse crime)."""
    t_grid = sorted(set([0.0] + list(times)))
    states = solve_nse(params.q_hat, params.mean, cfg, t_grid)
    by_time = dict(zip(t_grid, states))
    u_fields, v_fields = [], []
    for t in times:
        u, v = velocity_on_raster(by_time[t], params.mean, cfg, RASTER)
        u_fields.append(u)
        v_fields.append(v)
    return FlowObservations(times=list(times), u_fields=u_fields, v_fields=v_fields)


# ------------------------------------------------------------------- cost


def test_cost_zero_residual_by_construction(rng):
    cfg = _cfg()
    params = _random_params(cfg, rng)
    obs = _synth_obs_at(params, cfg, [0.05, 0.1, 0.15])
    assert cost_J(params, obs, cfg) < 1e-18


def test_cost_constant_observations():
    cfg = _cfg()
    c1, c2 = 1.5, -0.5
    obs = FlowObservations(
        times=[0.05, 0.1, 0.2],
        u_fields=[np.full(RASTER, c1)] * 3,
        v_fields=[np.full(RASTER, c2)] * 3,
    )
    params = FitParams(
        q_hat=SpectralState(np.zeros(cfg.shape, complex)), u_bar=0.0, v_bar=0.0
    )
    J = cost_J(params, obs, cfg)
    assert J == pytest.approx(3 * (c1**2 + c2**2), rel=1e-12)


def test_cost_matches_raster_quadrature(rng):
    cfg = _cfg()
    params = _random_params(cfg, rng)
    times = [0.03, 0.09]
    obs = FlowObservations(
        times=times,
        u_fields=[rng.normal(size=RASTER) for _ in times],
        v_fields=[rng.normal(size=RASTER) for _ in times],
    )
    J = cost_J(params, obs, cfg)
    # Independent oracle: evaluate the model velocity rasters and sum the
    # squared residuals with the rescaled-L2 quadrature (the raster mean).
    states = solve_nse(params.q_hat, params.mean, cfg, [0.0] + times)
    J_oracle = 0.0
    for k, s in enumerate(states[1:]):
        u_m, v_m = velocity_on_raster(s, params.mean, cfg, RASTER)
        J_oracle += np.mean((obs.u_fields[k] - u_m) ** 2)
        J_oracle += np.mean((obs.v_fields[k] - v_m) ** 2)
    assert J == pytest.approx(J_oracle, rel=1e-12)


def test_cost_translation_invariance(rng):
    """Shift both flow components and the mean scalars by one constant.

    The residuals are exactly invariant. The full cost shares that
    invariance whenever the vorticity trajectory does not react to the
    mean flow (the mean transports vorticity, so a boosted run translates
    omega in space); q_hat = 0 isolates the residual structure.
    """
    cfg = _cfg()
    times = [0.05, 0.1]
    u0 = [rng.normal(size=RASTER) for _ in times]
    v0 = [rng.normal(size=RASTER) for _ in times]
    shift_u, shift_v = 2.5, -1.25
    zero = SpectralState(np.zeros(cfg.shape, complex))
    params = FitParams(q_hat=zero, u_bar=0.4, v_bar=-0.1)
    params2 = FitParams(q_hat=zero, u_bar=0.4 + shift_u, v_bar=-0.1 + shift_v)
    obs = FlowObservations(times, u0, v0)
    obs2 = FlowObservations(times, [u + shift_u for u in u0], [v + shift_v for v in v0])
    assert cost_J(params2, obs2, cfg) == pytest.approx(cost_J(params, obs, cfg), rel=1e-12)

    # Residual-level invariance at a fixed (nonzero) trajectory.
    rich = _random_params(cfg, rng)
    rich2 = FitParams(rich.q_hat, rich.u_bar + shift_u, rich.v_bar + shift_v)
    p1, p2 = FitProblem(obs, cfg), FitProblem(obs2, cfg)
    traj = p1.trajectory(rich)
    for k, idx in enumerate(p1.step_index):
        r1u, r1v = p1._residuals(rich, traj[idx], k)
        r2u, r2v = p2._residuals(rich2, traj[idx], k)
        assert np.abs(r1u - r2u).max() < 1e-12
        assert np.abs(r1v - r2v).max() < 1e-12


# --------------------------------------------------------------- gradient


def test_gradient_zero_at_exact_fit(rng):
    cfg = _cfg()
    params = _random_params(cfg, rng)
    obs = _synth_obs_at(params, cfg, [0.05, 0.1])
    gq, gu, gv = asm.gradient_J(params, obs, cfg)
    assert np.abs(gq).max() < 1e-12
    assert abs(gu) < 1e-12 and abs(gv) < 1e-12


def test_gradient_matches_central_differences(rng):
    """The finite-difference arbiter: exact discrete adjoint vs central FD."""
    cfg = _cfg(N=4, nu=0.4, dt=1e-2)
    params = _random_params(cfg, rng)
    times = [0.05, 0.1, 0.15]
    obs = FlowObservations(
        times=times,
        u_fields=[rng.normal(size=RASTER) for _ in times],
        v_fields=[rng.normal(size=RASTER) for _ in times],
    )
    problem = FitProblem(obs, cfg)
    x0 = pack_params(params)
    _, gq, gu, gv = problem.cost_and_gradient(params)
    grad = np.concatenate([gq, [gu, gv]])
    h = 1e-5
    for _ in range(10):
        d = rng.normal(size=x0.size)
        d /= np.linalg.norm(d)
        jp = problem.cost(unpack_params(x0 + h * d, cfg))
        jm = problem.cost(unpack_params(x0 - h * d, cfg))
        fd = (jp - jm) / (2 * h)
        an = grad @ d
        rel = abs(an - fd) / max(1.0, abs(an))
        assert rel < 1e-6, f"gradient test failed: analytic={an}, fd={fd}"


def test_gradient_lies_in_symmetric_subspace(rng):
    cfg = _cfg()
    params = _random_params(cfg, rng)
    times = [0.05, 0.1]
    obs = FlowObservations(
        times,
        [rng.normal(size=RASTER) for _ in times],
        [rng.normal(size=RASTER) for _ in times],
    )
    gq, _, _ = asm.gradient_J(params, obs, cfg)
    # Round trip through the packing must preserve the gradient exactly:
    # pack(unpack-adjoint) loses nothing when the cogradient is symmetric.
    coeffs = unpack_coeffs(gq, cfg)
    assert np.abs(pack_cogradient(coeffs.ravel()) - gq).max() < 1e-12


def test_gradient_mean_flow_closed_form(rng):
    # With q_hat = 0 the trajectory stays zero and J is a quadratic in
    # (u_bar, v_bar); its derivative is 2*sum(u_bar - mean(u_k)).
    cfg = _cfg()
    times = [0.05, 0.1, 0.15]
    u_fields = [rng.normal(size=RASTER) for _ in times]
    v_fields = [rng.normal(size=RASTER) for _ in times]
    obs = FlowObservations(times, u_fields, v_fields)
    params = FitParams(
        q_hat=SpectralState(np.zeros(cfg.shape, complex)), u_bar=0.7, v_bar=-0.3
    )
    _, gu, gv = asm.gradient_J(params, obs, cfg)
    gu_ref = sum(2 * (0.7 - u.mean()) for u in u_fields)
    gv_ref = sum(2 * (-0.3 - v.mean()) for v in v_fields)
    assert gu == pytest.approx(gu_ref, rel=1e-10)
    assert gv == pytest.approx(gv_ref, rel=1e-10)


# ------------------------------------------------------- linear integrator


def test_linear_midpoint_identity():
    x = np.array([1.0, -2.0, 3.0])
    out = step_linear_midpoint(lambda t: np.zeros((3, 3)), None, x, 0.0, 0.1)
    assert np.array_equal(out, x)


def test_linear_midpoint_scalar_amplification():
    q = -1.7
    out = step_linear_midpoint(lambda t: q, None, np.array([2.0]), 0.0, 0.2)
    assert out[0] == pytest.approx(2.0 * (1 + q * 0.1) / (1 - q * 0.1), rel=1e-14)


def test_linear_midpoint_time_varying_second_order():
    # dx/dt = t*x, x(0)=1 => x(1) = exp(1/2). Error must shrink ~ dt^2.
    def run(dt):
        x = np.array([1.0])
        t = 0.0
        while t < 1.0 - 1e-12:
            x = step_linear_midpoint(lambda s: s, None, x, t, dt)
            t += dt
        return x[0]

    exact = math.exp(0.5)
    e1 = abs(run(0.02) - exact)
    e2 = abs(run(0.01) - exact)
    assert e1 / e2 == pytest.approx(4.0, rel=0.15)


def test_linear_midpoint_forcing():
    # dx/dt = s (constant forcing): x' = x + dt*s.
    out = step_linear_midpoint(
        lambda t: np.zeros((2, 2)), lambda t: np.array([1.0, 2.0]),
        np.zeros(2), 0.0, 0.5,
    )
    assert np.allclose(out, [0.5, 1.0])


# ------------------------------------------------------------------ L-BFGS


def test_fit_recovers_synthetic_params(rng):
    cfg = _cfg(N=4, nu=0.3, dt=0.05)
    truth = _random_params(cfg, rng, scale=0.3, mean=(0.5, -0.4))
    obs = _synth_obs_at(truth, cfg, [0.25, 0.5, 0.75])
    x_true = pack_params(truth)
    x_init = x_true * (1.0 + 0.01 * rng.normal(size=x_true.size))
    init = unpack_params(x_init, cfg)
    J_init = cost_J(init, obs, cfg)
    report = fit_lbfgs(obs, cfg, init=init, opts=FitOptions(max_iter=300))
    assert report.J_history[-1] <= 1e-6 * J_init
    assert abs(report.params.u_bar - truth.u_bar) < 1e-4
    assert abs(report.params.v_bar - truth.v_bar) < 1e-4


def test_fit_already_optimal(rng):
    cfg = _cfg()
    truth = _random_params(cfg, rng, scale=0.2)
    obs = _synth_obs_at(truth, cfg, [0.05, 0.1])
    report = fit_lbfgs(obs, cfg, init=truth)
    assert report.converged
    assert report.iterations <= 1


def test_fit_quadratic_instance_iteration_bound(rng):
    # Advection frozen off: the cost is exactly quadratic and L-BFGS must
    # converge within 2*(Nx+1)*(Ny+1) iterations.
    cfg = _cfg(N=2, nu=0.5, dt=0.05)
    times = [0.05, 0.15]
    obs = FlowObservations(
        times,
        [rng.normal(size=RASTER) for _ in times],
        [rng.normal(size=RASTER) for _ in times],
    )
    problem = FitProblem(obs, cfg, nonlinear=False)

    def fg(x):
        params = unpack_params(x, cfg)
        J, gq, gu, gv = problem.cost_and_gradient(params)
        return J, np.concatenate([gq, [gu, gv]])

    x0 = pack_params(_random_params(cfg, rng, scale=0.5))
    _, J_hist, _, iters, converged, _ = asm.minimize_lbfgs(fg, x0, FitOptions())
    assert converged
    assert iters <= 2 * cfg.size
    assert all(b <= a + 1e-12 for a, b in zip(J_hist, J_hist[1:]))


def test_fit_report_monotone_and_log(rng):
    cfg = _cfg(N=2, nu=0.5, dt=0.05)
    truth = _random_params(cfg, rng, scale=0.3)
    obs = _synth_obs_at(truth, cfg, [0.05, 0.1])
    init = initial_params(obs, cfg)
    report = fit_lbfgs(obs, cfg, init=init, opts=FitOptions(max_iter=50))
    assert all(
        b <= a + 1e-12 for a, b in zip(report.J_history, report.J_history[1:])
    )
    text = report.to_log_text()
    assert text.splitlines()[0].startswith("#")
    assert len(text.splitlines()) == len(report.J_history) + 1
