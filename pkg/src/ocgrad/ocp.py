"""Parameterized optimal-control systems, trajectories, and stationarity checks.

A system bundles parameterized dynamics ``x_{t+1} = f(x_t, u_t, theta)`` with a
stage cost, a terminal cost, and a horizon.  Costates are always recomputed
from the backward recursion given a trajectory; they are never taken from a
solver's internal multipliers.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .diffkit import DiffScalarFn, DiffVectorFn, DimensionError

FEASIBILITY_TOL = 1e-8


@dataclass(frozen=True)
class ParamOCSystem:
    """The tunable control system: dynamics f, stage cost c, terminal cost h."""

    f: DiffVectorFn
    c: DiffScalarFn
    h: DiffScalarFn
    n: int
    m: int
    r: int
    T: int
    x0: np.ndarray

    def __post_init__(self):
        for name, v in (("n", self.n), ("m", self.m), ("r", self.r), ("T", self.T)):
            if v < 1:
                raise ValueError(f"{name} must be >= 1, got {v}")
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        if self.x0.shape != (self.n,):
            raise DimensionError(
                f"axis 'x0' has shape {self.x0.shape}, expected ({self.n},)"
            )

    def with_horizon(self, T, x0=None):
        """Same system with a different horizon and, optionally, initial state."""
        return replace(self, T=T, x0=self.x0 if x0 is None else np.asarray(x0, float))


@dataclass(frozen=True)
class Trajectory:
    """States x_{0:T} and controls u_{0:T-1}."""

    states: np.ndarray  # (T+1, n)
    controls: np.ndarray  # (T, m)

    def __post_init__(self):
        object.__setattr__(self, "states", np.asarray(self.states, dtype=float))
        object.__setattr__(self, "controls", np.asarray(self.controls, dtype=float))
        if self.states.shape[0] != self.controls.shape[0] + 1:
            raise DimensionError(
                f"states/controls length mismatch: {self.states.shape[0]} vs "
                f"{self.controls.shape[0]} (expected T+1 vs T)"
            )

    @property
    def T(self):
        return self.controls.shape[0]

    def flat(self):
        """States then controls, time-major, as one vector."""
        return np.concatenate([self.states.ravel(), self.controls.ravel()])


@dataclass(frozen=True)
class CostateSeq:
    """Costates lam_{1:T}; entry [t] multiplies the dynamics at step t."""

    costates: np.ndarray  # (T, n)

    def __post_init__(self):
        object.__setattr__(self, "costates", np.asarray(self.costates, dtype=float))


@dataclass(frozen=True)
class ThetaVector:
    """Flat parameter vector with optional named segments (e.g. dyn/obj split)."""

    values: np.ndarray
    segments: dict = field(default_factory=dict)  # name -> (start, length)

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        total = sum(length for _, length in self.segments.values())
        if self.segments and total != self.values.shape[0]:
            raise ValueError(
                f"segment lengths sum to {total}, expected {self.values.shape[0]}"
            )

    def segment(self, name):
        start, length = self.segments[name]
        return self.values[start : start + length]


def _check_traj(sys: ParamOCSystem, traj: Trajectory):
    if traj.states.shape != (sys.T + 1, sys.n):
        raise DimensionError(
            f"axis 'states' has shape {traj.states.shape}, expected "
            f"({sys.T + 1}, {sys.n})"
        )
    if traj.controls.shape != (sys.T, sys.m):
        raise DimensionError(
            f"axis 'controls' has shape {traj.controls.shape}, expected "
            f"({sys.T}, {sys.m})"
        )


def dynamics_defect(sys: ParamOCSystem, traj: Trajectory, theta):
    """Max-norm violation of x_{t+1} = f(x_t, u_t, theta) over all steps."""
    _check_traj(sys, traj)
    worst = 0.0
    for t in range(sys.T):
        pred = sys.f.value(traj.states[t], traj.controls[t], theta)
        worst = max(worst, np.max(np.abs(traj.states[t + 1] - pred)))
    return worst


def is_feasible(sys, traj, theta, tol=FEASIBILITY_TOL):
    return dynamics_defect(sys, traj, theta) <= tol


def objective_value(sys: ParamOCSystem, traj: Trajectory, theta):
    """Total cost: sum of stage costs plus terminal cost."""
    _check_traj(sys, traj)
    total = 0.0
    for t in range(sys.T):
        total += sys.c.value(traj.states[t], traj.controls[t], theta)
    return total + sys.h.value(traj.states[sys.T], np.zeros(sys.m), theta)


def compute_costates(sys: ParamOCSystem, traj: Trajectory, theta, check_feasible=False):
    """Backward costate recursion from the terminal-cost gradient."""
    _check_traj(sys, traj)
    if check_feasible and not is_feasible(sys, traj, theta):
        raise ValueError("trajectory is not dynamically feasible for theta")
    T, n = sys.T, sys.n
    lam = np.zeros((T, n))
    hx, _, _ = sys.h.grads(traj.states[T], np.zeros(sys.m), theta)
    lam[T - 1] = hx
    for t in range(T - 1, 0, -1):
        cx, _, _ = sys.c.grads(traj.states[t], traj.controls[t], theta)
        F, _, _ = sys.f.jacobians(traj.states[t], traj.controls[t], theta)
        lam[t - 1] = cx + F.T @ lam[t]
    return CostateSeq(lam)


def pmp_residual(sys: ParamOCSystem, traj: Trajectory, lam: CostateSeq, theta):
    """Max-norm stationarity violation of the input equation dH/du = 0."""
    _check_traj(sys, traj)
    worst = 0.0
    for t in range(sys.T):
        _, cu, _ = sys.c.grads(traj.states[t], traj.controls[t], theta)
        _, G, _ = sys.f.jacobians(traj.states[t], traj.controls[t], theta)
        worst = max(worst, np.max(np.abs(cu + G.T @ lam.costates[t])))
    return worst


def stationarity(sys, traj, theta):
    """Convenience: costates plus their input-equation residual."""
    lam = compute_costates(sys, traj, theta)
    return lam, pmp_residual(sys, traj, lam, theta)
