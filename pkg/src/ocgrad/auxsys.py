"""Trajectory sensitivities via an auxiliary LQR system.

Given a stationary trajectory of the parameterized system, the first-order
optimality conditions are differentiated with respect to the parameter vector.
The resulting linear-quadratic structure is solved with a backward Riccati-type
recursion in (P_t, W_t) followed by a forward sweep producing the sensitivity
matrices X_t = dx_t/dtheta and U_t = du_t/dtheta.  Simplified forward-only
recursions cover the system-identification and policy-rollout cases.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import diffkit
from .ocp import ParamOCSystem, Trajectory

COND_LIMIT = 1e12
STATIONARITY_WARN = 1e-4


class AuxSolverError(RuntimeError):
    pass


class NonStationaryWarning(UserWarning):
    """Input trajectory violates stationarity; the sensitivity is approximate."""


@dataclass(frozen=True)
class AuxCoefficients:
    """Per-timestep linearization and Hamiltonian curvature blocks."""

    F: np.ndarray  # (T, n, n)
    G: np.ndarray  # (T, n, m)
    E: np.ndarray  # (T, n, r)
    hxx: np.ndarray  # (T, n, n)
    hxu: np.ndarray  # (T, n, m)
    huu: np.ndarray  # (T, m, m)
    hxe: np.ndarray  # (T, n, r)
    hue: np.ndarray  # (T, m, r)
    hxx_T: np.ndarray  # (n, n)
    hxe_T: np.ndarray  # (n, r)

    @property
    def T(self):
        return self.F.shape[0]

    @property
    def dims(self):
        return self.F.shape[1], self.G.shape[2], self.E.shape[2]

    def hux(self, t):
        return self.hxu[t].T


@dataclass(frozen=True)
class Sensitivity:
    """X_t = dx_t/dtheta (n x r) and U_t = du_t/dtheta (m x r)."""

    X: np.ndarray  # (T+1, n, r)
    U: np.ndarray  # (T, m, r)


@dataclass(frozen=True)
class RiccatiState:
    """Backward-recursion products: Lambda_t = P_t X_t + W_t."""

    P: np.ndarray  # (T+1, n, n), P[T] = hxx_T
    W: np.ndarray  # (T+1, n, r), W[T] = hxe_T


@dataclass(frozen=True)
class PolicyJacobians:
    """Per-step policy derivatives: Ux = du/dx (m x n), Ue = du/dtheta (m x r)."""

    Ux: np.ndarray  # (T, m, n)
    Ue: np.ndarray  # (T, m, r)


def build_aux(sys: ParamOCSystem, traj: Trajectory, theta):
    """Coefficient matrices of the auxiliary system along a stationary trajectory.

    Warns (does not fail) if the trajectory's stationarity residual exceeds
    the validity threshold; the sensitivities are then approximate.
    """
    theta = np.asarray(theta, dtype=float)
    T, n, m, r = sys.T, sys.n, sys.m, sys.r
    k = n + m + r
    cg = np.zeros((T, k))
    cH = np.zeros((T, k, k))
    fjac = np.zeros((T, n, k))
    fhess = np.zeros((T, n, k, k))
    for t in range(T):
        x, u = traj.states[t], traj.controls[t]
        _, cg[t], cH[t] = sys.c.full(x, u, theta)
        _, fjac[t], fhess[t] = sys.f.full(x, u, theta)
    _, hg, hH = sys.h.full(traj.states[T], np.zeros(m), theta)
    F = np.ascontiguousarray(fjac[:, :, :n])
    G = np.ascontiguousarray(fjac[:, :, n : n + m])
    E = np.ascontiguousarray(fjac[:, :, n + m :])
    # costates by the backward recursion, then the stationarity residual
    lam = np.zeros((T, n))
    lam[T - 1] = hg[:n]
    for t in range(T - 1, 0, -1):
        lam[t - 1] = cg[t, :n] + F[t].T @ lam[t]
    residual = max(
        np.max(np.abs(cg[t, n : n + m] + G[t].T @ lam[t])) for t in range(T)
    )
    if residual > STATIONARITY_WARN:
        warnings.warn(
            f"stationarity residual {residual:.3e} exceeds {STATIONARITY_WARN:.0e}; "
            "sensitivity validity degraded",
            NonStationaryWarning,
        )
    hxx = np.zeros((T, n, n))
    hxu = np.zeros((T, n, m))
    huu = np.zeros((T, m, m))
    hxe = np.zeros((T, n, r))
    hue = np.zeros((T, m, r))
    for t in range(T):
        full = cH[t] + np.einsum("i,ijk->jk", lam[t], fhess[t])
        full = 0.5 * (full + full.T)
        hxx[t] = full[:n, :n]
        hxu[t] = full[:n, n : n + m]
        huu[t] = full[n : n + m, n : n + m]
        hxe[t] = full[:n, n + m :]
        hue[t] = full[n : n + m, n + m :]
    hfull = 0.5 * (hH + hH.T)
    hxx_T = hfull[:n, :n]
    hxe_T = hfull[:n, n + m :]
    return AuxCoefficients(F, G, E, hxx, hxu, huu, hxe, hue, hxx_T, hxe_T)


def _huu_inverse(aux: AuxCoefficients, t):
    huu = aux.huu[t]
    if not np.all(np.isfinite(huu)) or np.linalg.cond(huu) > COND_LIMIT:
        raise AuxSolverError(
            f"control curvature block is numerically singular at t={t}"
        )
    return np.linalg.inv(huu)


def riccati_pass(aux: AuxCoefficients):
    """Backward sweep producing P_t and W_t from the terminal blocks."""
    T = aux.T
    n, m, r = aux.dims
    P = np.zeros((T + 1, n, n))
    W = np.zeros((T + 1, n, r))
    P[T] = aux.hxx_T
    W[T] = aux.hxe_T
    eye = np.eye(n)
    for t in range(T - 1, -1, -1):
        hinv = _huu_inverse(aux, t)
        F, G, E = aux.F[t], aux.G[t], aux.E[t]
        Ghinv = G @ hinv
        A = F - Ghinv @ aux.hux(t)
        R = Ghinv @ G.T
        M = E - Ghinv @ aux.hue[t]
        Q = aux.hxx[t] - aux.hxu[t] @ hinv @ aux.hux(t)
        N = aux.hxe[t] - aux.hxu[t] @ hinv @ aux.hue[t]
        IPR = eye + P[t + 1] @ R
        try:
            rhs = np.linalg.solve(IPR, np.column_stack([P[t + 1] @ A, W[t + 1] + P[t + 1] @ M]))
        except np.linalg.LinAlgError:
            raise AuxSolverError(f"recursion ill-posed (singular I + P R) at t={t}")
        P[t] = Q + A.T @ rhs[:, :n]
        P[t] = 0.5 * (P[t] + P[t].T)
        W[t] = A.T @ rhs[:, n:] + N
    return RiccatiState(P, W)


def forward_pass(aux: AuxCoefficients, ric: RiccatiState):
    """Forward sweep from X_0 = 0 producing the sensitivity matrices."""
    T = aux.T
    n, m, r = aux.dims
    X = np.zeros((T + 1, n, r))
    U = np.zeros((T, m, r))
    eye = np.eye(n)
    for t in range(T):
        hinv = _huu_inverse(aux, t)
        F, G, E = aux.F[t], aux.G[t], aux.E[t]
        Ghinv = G @ hinv
        A = F - Ghinv @ aux.hux(t)
        R = Ghinv @ G.T
        M = E - Ghinv @ aux.hue[t]
        IPR = eye + ric.P[t + 1] @ R
        try:
            inner = np.linalg.solve(
                IPR, ric.P[t + 1] @ (A @ X[t] + M) + ric.W[t + 1]
            )
        except np.linalg.LinAlgError:
            raise AuxSolverError(f"recursion ill-posed (singular I + P R) at t={t}")
        U[t] = -hinv @ (aux.hux(t) @ X[t] + aux.hue[t] + G.T @ inner)
        X[t + 1] = F @ X[t] + G @ U[t] + E
    return Sensitivity(X, U)


def solve_aux(aux: AuxCoefficients):
    """Full backward/forward solve of the auxiliary system."""
    return forward_pass(aux, riccati_pass(aux))


def differential_pmp_residual(aux: AuxCoefficients, sens: Sensitivity, ric: RiccatiState):
    """Max-norm residual of the differentiated optimality conditions.

    The matrix costate is reconstructed as Lambda_t = P_t X_t + W_t and
    substituted into the differentiated dynamics, costate, input, and
    boundary equations.
    """
    T = aux.T
    lam = np.array([ric.P[t] @ sens.X[t] + ric.W[t] for t in range(T + 1)])
    worst = np.max(np.abs(lam[T] - (aux.hxx_T @ sens.X[T] + aux.hxe_T)))
    worst = max(worst, np.max(np.abs(sens.X[0])))
    for t in range(T):
        dyn = sens.X[t + 1] - (aux.F[t] @ sens.X[t] + aux.G[t] @ sens.U[t] + aux.E[t])
        costate = lam[t] - (
            aux.hxx[t] @ sens.X[t]
            + aux.hxu[t] @ sens.U[t]
            + aux.F[t].T @ lam[t + 1]
            + aux.hxe[t]
        )
        inp = (
            aux.hux(t) @ sens.X[t]
            + aux.huu[t] @ sens.U[t]
            + aux.G[t].T @ lam[t + 1]
            + aux.hue[t]
        )
        worst = max(
            worst, np.max(np.abs(dyn)), np.max(np.abs(costate)), np.max(np.abs(inp))
        )
    return worst


def trajectory_sensitivity(sys: ParamOCSystem, traj: Trajectory, theta):
    """build_aux + solve_aux in one call (the backward pass of the IOC loop)."""
    return solve_aux(build_aux(sys, traj, theta))


def sysid_sensitivity(f: diffkit.DiffVectorFn, traj: Trajectory, theta):
    """Sensitivity of a rollout under externally supplied controls: U = 0,
    X by forward recursion X_{t+1} = F_t X_t + E_t."""
    theta = np.asarray(theta, dtype=float)
    T = traj.T
    n, r = f.n, f.r
    X = np.zeros((T + 1, n, r))
    U = np.zeros((T, f.m, r))
    for t in range(T):
        F, _, E = f.jacobians(traj.states[t], traj.controls[t], theta)
        X[t + 1] = F @ X[t] + E
    return Sensitivity(X, U)


def policy_sensitivity(f: diffkit.DiffVectorFn, pol: PolicyJacobians, traj: Trajectory, theta):
    """Sensitivity of a closed-loop rollout: U_t = Ux_t X_t + Ue_t, then
    X_{t+1} = F_t X_t + G_t U_t (dynamics carries no direct parameter term)."""
    theta = np.asarray(theta, dtype=float)
    T = traj.T
    n = f.n
    m, r = pol.Ue.shape[1], pol.Ue.shape[2]
    X = np.zeros((T + 1, n, r))
    U = np.zeros((T, m, r))
    for t in range(T):
        F, G, _ = f.jacobians(traj.states[t], traj.controls[t], theta)
        U[t] = pol.Ux[t] @ X[t] + pol.Ue[t]
        X[t + 1] = F @ X[t] + G @ U[t]
    return Sensitivity(X, U)
