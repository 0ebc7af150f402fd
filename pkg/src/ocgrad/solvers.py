"""Forward-pass optimal-control solvers.

``solve_lqr`` handles exact finite-horizon time-varying LQR with affine drift,
cross terms, and linear cost terms via the standard backward Riccati sweep.
``solve_ilqr`` handles smooth nonlinear systems by repeated linearization and
cost quadratization, with backtracking line search and Levenberg-style
regularization; convergence is declared on the PMP stationarity residual.
"""

from dataclasses import dataclass, field

import numpy as np

from . import ocp
from .ocp import ParamOCSystem, Trajectory


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class LQRProblem:
    """Quadratic problem data, all per-timestep arrays stacked along axis 0.

    Cost convention:
        J = sum_t [ 1/2 x'Q_t x + x'S_t u + 1/2 u'R_t u + q_t'x + r_t'u ]
            + 1/2 x_T'QT x_T + qT'x_T
    Dynamics: x_{t+1} = A_t x + B_t u + d_t.
    """

    A: np.ndarray  # (T, n, n)
    B: np.ndarray  # (T, n, m)
    d: np.ndarray  # (T, n)
    Q: np.ndarray  # (T, n, n)
    R: np.ndarray  # (T, m, m)
    S: np.ndarray  # (T, n, m)
    q: np.ndarray  # (T, n)
    r: np.ndarray  # (T, m)
    QT: np.ndarray  # (n, n)
    qT: np.ndarray  # (n,)
    x0: np.ndarray  # (n,)

    @property
    def T(self):
        return self.A.shape[0]

    @property
    def n(self):
        return self.A.shape[1]

    @property
    def m(self):
        return self.B.shape[2]


@dataclass(frozen=True)
class SolverOpts:
    max_iters: int = 100
    tol: float = 1e-8  # PMP stationarity residual
    shrink: float = 0.5  # line-search backtracking factor
    reg_floor: float = 1e-9

    def __post_init__(self):
        if not 0.0 < self.shrink < 1.0:
            raise ValueError(f"shrink must be in (0, 1), got {self.shrink}")


@dataclass(frozen=True)
class Gains:
    """Time-varying affine feedback u_t = K_t x_t + k_t."""

    K: np.ndarray  # (T, m, n)
    k: np.ndarray  # (T, m)


@dataclass
class IlqrResult:
    traj: Trajectory
    converged: bool
    iterations: int
    cost: float
    residual: float
    costs: list = field(default_factory=list)


def solve_lqr(p: LQRProblem):
    """Backward Riccati sweep plus forward rollout; returns (Trajectory, Gains)."""
    T, n, m = p.T, p.n, p.m
    P = 0.5 * (p.QT + p.QT.T)
    pv = p.qT.copy()
    K = np.zeros((T, m, n))
    kf = np.zeros((T, m))
    for t in range(T - 1, -1, -1):
        A, B, d = p.A[t], p.B[t], p.d[t]
        PB = P @ B
        Quu = p.R[t] + B.T @ PB
        try:
            cho = np.linalg.cholesky(0.5 * (Quu + Quu.T))
        except np.linalg.LinAlgError:
            raise SolverError(f"control-cost block not positive definite at t={t}")
        Qux = p.S[t].T + B.T @ P @ A
        qu = p.r[t] + B.T @ (P @ d + pv)
        qx = p.q[t] + A.T @ (P @ d + pv)
        sol = np.linalg.solve(cho.T, np.linalg.solve(cho, np.column_stack([Qux, qu])))
        K[t] = -sol[:, :n]
        kf[t] = -sol[:, n]
        Qxx = p.Q[t] + A.T @ P @ A
        P = Qxx + Qux.T @ K[t]
        P = 0.5 * (P + P.T)
        pv = qx + Qux.T @ kf[t] + K[t].T @ (Quu @ kf[t] + qu)
    xs = np.zeros((T + 1, n))
    us = np.zeros((T, m))
    xs[0] = p.x0
    for t in range(T):
        us[t] = K[t] @ xs[t] + kf[t]
        xs[t + 1] = p.A[t] @ xs[t] + p.B[t] @ us[t] + p.d[t]
    return Trajectory(xs, us), Gains(K, kf)


def lqr_objective(p: LQRProblem, traj: Trajectory):
    """Quadratic objective value of a trajectory under the LQR cost data."""
    total = 0.0
    for t in range(p.T):
        x, u = traj.states[t], traj.controls[t]
        total += (
            0.5 * x @ p.Q[t] @ x
            + x @ p.S[t] @ u
            + 0.5 * u @ p.R[t] @ u
            + p.q[t] @ x
            + p.r[t] @ u
        )
    xT = traj.states[p.T]
    return total + 0.5 * xT @ p.QT @ xT + p.qT @ xT


def _rollout_cost(sys: ParamOCSystem, theta, us):
    xs = np.zeros((sys.T + 1, sys.n))
    xs[0] = sys.x0
    cost = 0.0
    for t in range(sys.T):
        cost += sys.c.value(xs[t], us[t], theta)
        xs[t + 1] = sys.f.value(xs[t], us[t], theta)
        if not np.all(np.isfinite(xs[t + 1])):
            return xs, np.inf
    cost += sys.h.value(xs[sys.T], np.zeros(sys.m), theta)
    return xs, cost


def solve_ilqr(sys: ParamOCSystem, theta, opts: SolverOpts = SolverOpts(), u_init=None):
    """Iterative LQR on the parameterized system at fixed theta.

    Returns an IlqrResult whose ``converged`` flag reports whether the PMP
    stationarity residual dropped below ``opts.tol``.
    """
    theta = np.asarray(theta, dtype=float)
    T, n, m = sys.T, sys.n, sys.m
    us = np.zeros((T, m)) if u_init is None else np.array(u_init, dtype=float)
    xs, cost = _rollout_cost(sys, theta, us)
    if not np.isfinite(cost):
        raise SolverError("initial control guess produced non-finite cost")
    traj = Trajectory(xs, us)
    costs = [cost]
    mu = 0.0
    residual = np.inf
    for it in range(1, opts.max_iters + 1):
        # one derivative sweep serves both the stationarity check and the
        # local LQ approximation
        Fs = np.zeros((T, n, n))
        Gs = np.zeros((T, n, m))
        cgs = np.zeros((T, n + m))
        cHs = np.zeros((T, n + m, n + m))
        for t in range(T):
            x, u = traj.states[t], traj.controls[t]
            Fs[t], Gs[t], _ = sys.f.jacobians(x, u, theta)
            _, g, H = sys.c.full(x, u, theta)
            cgs[t] = g[: n + m]
            cHs[t] = H[: n + m, : n + m]
        _, hg, hH = sys.h.full(traj.states[T], np.zeros(m), theta)
        lam = hg[:n]
        residual = 0.0
        for t in range(T - 1, -1, -1):
            residual = max(residual, np.max(np.abs(cgs[t, n:] + Gs[t].T @ lam)))
            lam = cgs[t, :n] + Fs[t].T @ lam
        if residual <= opts.tol:
            return IlqrResult(traj, True, it - 1, cost, residual, costs)
        # backward pass on the local LQ approximation
        Ks = np.zeros((T, m, n))
        ks = np.zeros((T, m))
        Vxx = hH[:n, :n]
        vx = hg[:n]
        ok = True
        for t in range(T - 1, -1, -1):
            F, G = Fs[t], Gs[t]
            cfull = cHs[t]
            cx, cu = cgs[t, :n], cgs[t, n:]
            Qx = cx + F.T @ vx
            Qu = cu + G.T @ vx
            Qxx = cfull[:n, :n] + F.T @ Vxx @ F
            Quu = cfull[n : n + m, n : n + m] + G.T @ Vxx @ G
            Qux = cfull[n : n + m, :n] + G.T @ Vxx @ F
            Quu_reg = 0.5 * (Quu + Quu.T) + mu * np.eye(m)
            try:
                cho = np.linalg.cholesky(Quu_reg)
            except np.linalg.LinAlgError:
                ok = False
                break
            sol = np.linalg.solve(
                cho.T, np.linalg.solve(cho, np.column_stack([Qux, Qu]))
            )
            Ks[t] = -sol[:, :n]
            ks[t] = -sol[:, n]
            vx = Qx + Ks[t].T @ Quu_reg @ ks[t] + Ks[t].T @ Qu + Qux.T @ ks[t]
            Vxx = Qxx + Ks[t].T @ Quu_reg @ Ks[t] + Ks[t].T @ Qux + Qux.T @ Ks[t]
            Vxx = 0.5 * (Vxx + Vxx.T)
        if not ok:
            mu = max(10.0 * mu, opts.reg_floor)
            continue
        # forward pass with backtracking line search
        alpha = 1.0
        accepted = False
        for _ in range(30):
            new_us = np.zeros_like(us)
            new_xs = np.zeros((T + 1, n))
            new_xs[0] = sys.x0
            new_cost = 0.0
            finite = True
            for t in range(T):
                du = alpha * ks[t] + Ks[t] @ (new_xs[t] - traj.states[t])
                new_us[t] = traj.controls[t] + du
                new_cost += sys.c.value(new_xs[t], new_us[t], theta)
                new_xs[t + 1] = sys.f.value(new_xs[t], new_us[t], theta)
                if not np.all(np.isfinite(new_xs[t + 1])):
                    finite = False
                    break
            if finite:
                new_cost += sys.h.value(new_xs[T], np.zeros(m), theta)
            if finite and new_cost <= cost + 1e-14 * (1.0 + abs(cost)):
                traj = Trajectory(new_xs, new_us)
                us = new_us
                cost = new_cost
                costs.append(cost)
                accepted = True
                break
            alpha *= opts.shrink
        if accepted:
            mu = max(mu / 10.0, 0.0) if mu > opts.reg_floor else 0.0
        else:
            mu = max(10.0 * mu, opts.reg_floor)
            if mu > 1e10:
                break  # step rejected even under heavy regularization
    lam, residual = ocp.stationarity(sys, traj, theta)
    return IlqrResult(
        traj, residual <= opts.tol, opts.max_iters, cost, residual, costs
    )
