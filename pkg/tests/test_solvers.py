import numpy as np
import pytest

from ocgrad import solvers
from ocgrad.diffkit import DiffScalarFn, DiffVectorFn
from ocgrad.ocp import ParamOCSystem, Trajectory, stationarity
from ocgrad.solvers import (
    Gains,
    LQRProblem,
    SolverError,
    SolverOpts,
    lqr_objective,
    solve_ilqr,
    solve_lqr,
)


def random_lqr(T=8, n=3, m=2, seed=0):
    rng = np.random.default_rng(seed)
    A = np.stack([np.eye(n) + 0.1 * rng.standard_normal((n, n)) for _ in range(T)])
    B = np.stack([rng.standard_normal((n, m)) for _ in range(T)])
    d = 0.1 * rng.standard_normal((T, n))
    Qs = []
    Rs = []
    for _ in range(T):
        q = rng.standard_normal((n, n))
        Qs.append(q @ q.T + 0.5 * np.eye(n))
        r = rng.standard_normal((m, m))
        Rs.append(r @ r.T + 0.5 * np.eye(m))
    S = 0.1 * rng.standard_normal((T, n, m))
    q_lin = 0.2 * rng.standard_normal((T, n))
    r_lin = 0.2 * rng.standard_normal((T, m))
    qt = rng.standard_normal((n, n))
    QT = qt @ qt.T + np.eye(n)
    qT = 0.3 * rng.standard_normal(n)
    x0 = rng.standard_normal(n)
    return LQRProblem(A, B, d, np.stack(Qs), np.stack(Rs), S, q_lin, r_lin, QT, qT, x0)


def test_lqr_solution_beats_perturbations():
    p = random_lqr(seed=1)
    traj, gains = solve_lqr(p)
    best = lqr_objective(p, traj)
    rng = np.random.default_rng(2)
    for _ in range(10):
        us = traj.controls + 1e-3 * rng.standard_normal(traj.controls.shape)
        xs = np.zeros_like(traj.states)
        xs[0] = p.x0
        for t in range(p.T):
            xs[t + 1] = p.A[t] @ xs[t] + p.B[t] @ us[t] + p.d[t]
        assert lqr_objective(p, Trajectory(xs, us)) >= best - 1e-12


def test_lqr_gradient_zero_at_solution():
    # gradient of J wrt each u_t via finite differences should vanish
    p = random_lqr(seed=3)
    traj, _ = solve_lqr(p)

    def cost_of(us_flat):
        us = us_flat.reshape(p.T, p.m)
        xs = np.zeros((p.T + 1, p.n))
        xs[0] = p.x0
        for t in range(p.T):
            xs[t + 1] = p.A[t] @ xs[t] + p.B[t] @ us[t] + p.d[t]
        return lqr_objective(p, Trajectory(xs, us))

    u0 = traj.controls.ravel()
    eps = 1e-6
    for i in range(u0.size):
        e = np.zeros_like(u0)
        e[i] = eps
        g = (cost_of(u0 + e) - cost_of(u0 - e)) / (2 * eps)
        assert abs(g) < 1e-6


def test_lqr_rejects_indefinite_control_cost():
    p = random_lqr(seed=4)
    R_bad = p.R.copy()
    R_bad[3] = -np.eye(p.m)
    bad = LQRProblem(p.A, 0.0 * p.B, p.d, p.Q, R_bad, p.S, p.q, p.r, p.QT, p.qT, p.x0)
    with pytest.raises(SolverError, match="t=3"):
        solve_lqr(bad)


def test_gains_shapes():
    p = random_lqr()
    traj, gains = solve_lqr(p)
    assert isinstance(gains, Gains)
    assert gains.K.shape == (p.T, p.m, p.n)
    assert gains.k.shape == (p.T, p.m)
    assert traj.states.shape == (p.T + 1, p.n)


def pendulum_system(T=20):
    from ocgrad.envs import make_env

    env = make_env("pendulum")
    sys, theta = env.system(T=T, tune="both")
    return sys, theta.values


def test_ilqr_pendulum_converges():
    sys, theta = pendulum_system(T=20)
    res = solve_ilqr(sys, theta, SolverOpts(max_iters=100, tol=1e-8))
    assert res.converged
    assert res.iterations < 100
    assert res.residual <= 1e-6
    _, residual = stationarity(sys, res.traj, theta)
    assert residual <= 1e-6


def test_ilqr_costs_monotone_nonincreasing():
    sys, theta = pendulum_system(T=20)
    res = solve_ilqr(sys, theta, SolverOpts(max_iters=100))
    diffs = np.diff(res.costs)
    assert np.all(diffs <= 1e-10)


def test_ilqr_converges_in_one_iteration_on_lq():
    n, m, r = 2, 1, 1

    def f(x, u, th):
        return np.array([x[0] + 0.1 * x[1], x[1] + th[0] * u[0]])

    def c(x, u, th):
        return x[0] ** 2 + x[1] ** 2 + u[0] ** 2

    def h(x, u, th):
        return 5.0 * (x[0] ** 2 + x[1] ** 2)

    sys = ParamOCSystem(
        DiffVectorFn(f, n, n, m, r),
        DiffScalarFn(c, n, m, r),
        DiffScalarFn(h, n, m, r),
        n,
        m,
        r,
        10,
        np.array([1.0, 0.0]),
    )
    res = solve_ilqr(sys, np.array([0.9]), SolverOpts(max_iters=10))
    assert res.converged
    assert res.iterations <= 1


def test_ilqr_warm_start_accepted():
    sys, theta = pendulum_system(T=20)
    res = solve_ilqr(sys, theta, SolverOpts(max_iters=100))
    warm = solve_ilqr(sys, theta, SolverOpts(max_iters=100), u_init=res.traj.controls)
    assert warm.converged
    assert warm.iterations == 0
    assert np.allclose(warm.traj.controls, res.traj.controls)


def test_solver_opts_validation():
    with pytest.raises(ValueError, match="shrink"):
        SolverOpts(shrink=1.5)
