"""The three learning loops: objective/dynamics recovery from demonstrations,
system identification from input-state data, and policy optimization.

All three share the same gradient assembly: a forward pass produces a
trajectory, a backward pass produces its parameter sensitivity, and the total
derivative is dL/dtheta = (dL/dxi) (dxi/dtheta) + direct term.  The flattened
trajectory order is fixed everywhere as states t=0..T then controls
t=0..T-1, time-major.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import auxsys, envs, solvers
from .auxsys import PolicyJacobians, Sensitivity
from .diffkit import DiffScalarFn, DiffVectorFn
from .ocp import ParamOCSystem, Trajectory

RESIDUAL_OK = 1e-6  # forward solve accepted when PMP residual is below this


@dataclass(frozen=True)
class DemoSet:
    """Demonstration trajectories; each carries its own x0 and horizon."""

    trajectories: tuple

    def __post_init__(self):
        if not self.trajectories:
            raise ValueError("demo set must contain at least one trajectory")
        object.__setattr__(self, "trajectories", tuple(self.trajectories))

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)


@dataclass
class RunRecord:
    """Per-iteration log of one gradient-descent run."""

    iters: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    wall_ms_forward: list = field(default_factory=list)
    wall_ms_backward: list = field(default_factory=list)
    converged: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    theta0: np.ndarray = None
    theta_final: np.ndarray = None
    failures: int = 0

    def append(self, k, loss, gnorm, wf, wb, ok):
        if self.iters and k <= self.iters[-1]:
            raise ValueError(f"iteration {k} not increasing past {self.iters[-1]}")
        self.iters.append(k)
        self.losses.append(float(loss))
        self.grad_norms.append(float(gnorm))
        self.wall_ms_forward.append(float(wf))
        self.wall_ms_backward.append(float(wb))
        self.converged.append(bool(ok))

    def rows(self):
        """(iter, loss, grad_inf_norm, wall_ms_forward, wall_ms_backward,
        converged) tuples in order."""
        return list(
            zip(
                self.iters,
                self.losses,
                self.grad_norms,
                self.wall_ms_forward,
                self.wall_ms_backward,
                self.converged,
            )
        )


def flat_sensitivity(sens: Sensitivity):
    """Stack X then U into a ((T+1)n + Tm, r) matrix, time-major."""
    Tp1, n, r = sens.X.shape
    T, m, _ = sens.U.shape
    return np.concatenate(
        [sens.X.reshape(Tp1 * n, r), sens.U.reshape(T * m, r)], axis=0
    )


def chain_gradient(dL_dxi, sens: Sensitivity, dL_dtheta_direct=None):
    """Total derivative dL/dtheta for a loss of the trajectory and theta."""
    dL_dxi = np.asarray(dL_dxi, dtype=float)
    J = flat_sensitivity(sens)
    if dL_dxi.shape != (J.shape[0],):
        raise ValueError(
            f"dL_dxi has length {dL_dxi.shape}, expected ({J.shape[0]},) to match "
            "the states-then-controls stacking"
        )
    total = dL_dxi @ J
    if dL_dtheta_direct is not None:
        direct = np.asarray(dL_dtheta_direct, dtype=float)
        if direct.shape != (J.shape[1],):
            raise ValueError(
                f"direct term has length {direct.shape}, expected ({J.shape[1]},)"
            )
        total = total + direct
    return total


class TrajectoryMatchLoss:
    """Squared distance to a reference trajectory, summed over all states and
    controls.  No direct parameter dependence."""

    def __init__(self, demo: Trajectory):
        self.demo = demo

    def value(self, traj: Trajectory):
        return float(
            np.sum((traj.states - self.demo.states) ** 2)
            + np.sum((traj.controls - self.demo.controls) ** 2)
        )

    def grad_xi(self, traj: Trajectory):
        return 2.0 * np.concatenate(
            [
                (traj.states - self.demo.states).ravel(),
                (traj.controls - self.demo.controls).ravel(),
            ]
        )


class StateMatchLoss(TrajectoryMatchLoss):
    """Squared distance over states only; used when controls are inputs, not
    decision variables."""

    def value(self, traj: Trajectory):
        return float(np.sum((traj.states - self.demo.states) ** 2))

    def grad_xi(self, traj: Trajectory):
        return np.concatenate(
            [
                2.0 * (traj.states - self.demo.states).ravel(),
                np.zeros(traj.controls.size),
            ]
        )


class ControlObjectiveLoss:
    """Accumulated stage plus terminal cost at fixed objective weights; the
    policy parameters enter only through the trajectory."""

    def __init__(self, stage: DiffScalarFn, terminal: DiffScalarFn, weights):
        self.stage = stage
        self.terminal = terminal
        self.weights = np.asarray(weights, dtype=float)

    def value(self, traj: Trajectory):
        total = 0.0
        for t in range(traj.T):
            total += self.stage.value(traj.states[t], traj.controls[t], self.weights)
        dummy_u = np.zeros(self.stage.m)
        return total + self.terminal.value(traj.states[traj.T], dummy_u, self.weights)

    def grad_xi(self, traj: Trajectory):
        T = traj.T
        gx = np.zeros_like(traj.states)
        gu = np.zeros_like(traj.controls)
        for t in range(T):
            cx, cu, _ = self.stage.grads(
                traj.states[t], traj.controls[t], self.weights
            )
            gx[t] = cx
            gu[t] = cu
        hx, _, _ = self.terminal.grads(
            traj.states[T], np.zeros(self.stage.m), self.weights
        )
        gx[T] = hx
        return np.concatenate([gx.ravel(), gu.ravel()])


@dataclass(frozen=True)
class GDOpts:
    """Plain gradient descent settings shared by the three loops."""

    eta: float = 1e-4
    iters: int = 100
    timing: bool = True
    stop_when_loss_below: float = None
    halve_on_increase: bool = False
    solver: solvers.SolverOpts = solvers.SolverOpts()

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError(f"eta must be nonnegative, got {self.eta}")
        if self.iters < 0:
            raise ValueError(f"iters must be nonnegative, got {self.iters}")


def _now():
    return time.perf_counter()


def _ms(t0, t1, timing):
    return (t1 - t0) * 1e3 if timing else 0.0


def run_ioc(sys: ParamOCSystem, demos: DemoSet, theta0, opts: GDOpts = GDOpts()):
    """Tune system parameters so the re-solved optimal trajectories match the
    demonstrations.  Forward: one trajectory optimization per demo (warm
    started from the previous iteration).  Backward: the auxiliary-system
    sensitivity.  Gradients are averaged over demos.

    A failed forward solve on any demo marks the iteration failed and leaves
    theta unchanged (skip-and-continue)."""
    theta = np.array(theta0, dtype=float)
    losses_fns = [TrajectoryMatchLoss(d) for d in demos]
    warm = [None] * len(demos)
    rec = RunRecord(theta0=theta.copy())
    for k in range(opts.iters + 1):
        t0 = _now()
        trajs = []
        ok = True
        for i, demo in enumerate(demos):
            sys_d = sys.with_horizon(demo.T, demo.states[0])
            try:
                res = solvers.solve_ilqr(sys_d, theta, opts.solver, u_init=warm[i])
            except solvers.SolverError:
                ok = False
                break
            if res.residual > RESIDUAL_OK:
                ok = False
                break
            warm[i] = res.traj.controls
            trajs.append((sys_d, res.traj))
        t1 = _now()
        if not ok:
            rec.failures += 1
            rec.append(k, math.nan, math.nan, _ms(t0, t1, opts.timing), 0.0, False)
            continue
        loss = float(np.mean([lf.value(tr) for lf, (_, tr) in zip(losses_fns, trajs)]))
        grad = np.zeros_like(theta)
        for lf, (sys_d, tr) in zip(losses_fns, trajs):
            sens = auxsys.trajectory_sensitivity(sys_d, tr, theta)
            grad += chain_gradient(lf.grad_xi(tr), sens)
        grad /= len(demos)
        t2 = _now()
        rec.append(
            k,
            loss,
            np.max(np.abs(grad)),
            _ms(t0, t1, opts.timing),
            _ms(t1, t2, opts.timing),
            True,
        )
        if opts.stop_when_loss_below is not None and loss < opts.stop_when_loss_below:
            break
        if k < opts.iters:
            theta = theta - opts.eta * grad
    rec.theta_final = theta
    return rec


def _descent_loop(rec, theta, opts, forward_backward):
    """Shared sysid/control iteration driver with geometric step backtracking.

    ``forward_backward(theta)`` returns (loss, grad) or raises DivergedError.
    A diverged step (or, with halve_on_increase, one that raised the loss) is
    retried at geometrically shrinking lengths; only a step unusable even at
    the smallest scale is logged as a failed iteration.
    """
    last_good = theta.copy()
    last_grad = None
    prev_loss = None
    scale = 1.0
    k = 0
    while k <= opts.iters:
        t0 = _now()
        bad = False
        try:
            loss, grad, wf, wb = forward_backward(theta)
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                raise envs.DivergedError("non-finite loss or gradient", k)
            if opts.halve_on_increase and prev_loss is not None and loss > prev_loss:
                bad = True
        except envs.DivergedError:
            bad = True
        if bad:
            rec.failures += 1
            if last_grad is not None and scale > 2.0**-30:
                scale *= 0.5
                theta = last_good - scale * opts.eta * last_grad
                continue
            rec.append(k, math.nan, math.nan, _ms(t0, _now(), opts.timing), 0.0, False)
            theta = last_good.copy()
            scale = 1.0
            k += 1
            continue
        rec.append(k, loss, np.max(np.abs(grad)), wf, wb, True)
        prev_loss = loss
        if opts.stop_when_loss_below is not None and loss < opts.stop_when_loss_below:
            break
        if k < opts.iters:
            last_good = theta.copy()
            last_grad = grad
            theta = theta - opts.eta * grad
            scale = 1.0
        k += 1
    rec.theta_final = theta
    return rec


def run_sysid(model: DiffVectorFn, data: DemoSet, theta0, opts: GDOpts = GDOpts()):
    """Fit dynamics parameters to input-state data.  Forward: rollout of each
    trajectory's recorded controls from its x0.  Backward: the forward-only
    sensitivity recursion (controls are inputs, not decisions)."""
    theta = np.array(theta0, dtype=float)
    losses_fns = [StateMatchLoss(d) for d in data]
    rec = RunRecord(theta0=theta.copy())

    def forward_backward(th):
        t0 = _now()
        trajs = []
        for demo in data:
            roll = envs.rollout(model, demo.states[0], demo.controls, th)
            trajs.append(roll)
        t1 = _now()
        loss = float(np.mean([lf.value(tr) for lf, tr in zip(losses_fns, trajs)]))
        grad = np.zeros_like(th)
        for lf, tr in zip(losses_fns, trajs):
            sens = auxsys.sysid_sensitivity(model, tr, th)
            grad += chain_gradient(lf.grad_xi(tr), sens)
        grad /= len(data)
        t2 = _now()
        return loss, grad, _ms(t0, t1, opts.timing), _ms(t1, t2, opts.timing)

    return _descent_loop(rec, theta, opts, forward_backward)


def run_control(
    model: DiffVectorFn,
    theta_dyn,
    policy,
    loss: ControlObjectiveLoss,
    theta0,
    x0,
    T,
    opts: GDOpts = GDOpts(),
):
    """Optimize policy parameters against a fixed control objective.
    Forward: closed-loop rollout of the policy.  Backward: the forward-only
    sensitivity recursion with the policy's state/parameter Jacobians."""
    theta_dyn = np.asarray(theta_dyn, dtype=float)
    theta = np.array(theta0, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    n = model.n_out
    rec = RunRecord(theta0=theta.copy())

    def forward_backward(th):
        t0 = _now()
        traj = envs.rollout_policy(
            model, x0, lambda t, x, tp: policy.controls(tp, t, x), theta_dyn, th, T
        )
        t1 = _now()
        Ux = np.zeros((T, policy.m, n))
        Ue = np.zeros((T, policy.m, th.shape[0]))
        for t in range(T):
            _, Ux[t], Ue[t] = policy.jacobians(th, t, traj.states[t], n_state=n)
        sens = auxsys.policy_sensitivity(
            model, PolicyJacobians(Ux, Ue), traj, theta_dyn
        )
        grad = chain_gradient(loss.grad_xi(traj), sens)
        t2 = _now()
        return loss.value(traj), grad, _ms(t0, t1, opts.timing), _ms(t1, t2, opts.timing)

    return _descent_loop(rec, theta, opts, forward_backward)
