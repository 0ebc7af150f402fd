"""Benchmark control environments with tunable physical parameters.

Five systems: damped pendulum, cart-pole, two-link planar arm, 6-DoF
quadrotor, and 6-DoF rocket powered landing.  Dynamics are written against
the forward-mode number system (:mod:`ocgrad.ad`), Euler-discretized, and
wrapped as :class:`ocgrad.diffkit.DiffVectorFn` so exact derivatives with
respect to state, control, and physical parameters are available everywhere.

Conventions:
  - quaternions are scalar-first and renormalized inside every discrete step
  - quadrotor world frame is z-up; rocket world frame is up-east-north, so
    gravity is (-g, 0, 0)
  - stage costs are per-coordinate weighted squared distances to a goal plus
    a unit-weight control term; terminal costs drop the control term
"""

from dataclasses import dataclass, replace

import numpy as np

from . import ad
from .diffkit import DiffScalarFn, DiffVectorFn
from .ocp import ParamOCSystem, ThetaVector, Trajectory

GRAVITY = 9.81

ENV_NAMES = ("pendulum", "cartpole", "robotarm2", "quadrotor", "rocket")


class DivergedError(RuntimeError):
    """Rollout produced a non-finite state."""

    def __init__(self, msg, last_index):
        super().__init__(msg)
        self.last_index = last_index


@dataclass(frozen=True)
class EnvSpec:
    """Static description of an environment instance."""

    name: str
    n: int
    m: int
    dyn_params: tuple  # names of theta_dyn entries
    obj_weights: tuple  # names of theta_obj entries
    x_goal: np.ndarray
    delta: float

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        object.__setattr__(self, "x_goal", np.asarray(self.x_goal, dtype=float))

    @property
    def r_dyn(self):
        return len(self.dyn_params)

    @property
    def r_obj(self):
        return len(self.obj_weights)


@dataclass(frozen=True)
class Env:
    """Wired environment: discrete dynamics plus stage/terminal costs.

    ``dynamics`` takes theta_dyn; ``stage``/``terminal`` take theta_obj.
    ``system`` assembles a ParamOCSystem over a combined parameter vector.
    """

    spec: EnvSpec
    dynamics: DiffVectorFn
    stage: DiffScalarFn
    terminal: DiffScalarFn
    theta_dyn: np.ndarray
    theta_obj: np.ndarray
    x0: np.ndarray

    def system(self, T, x0=None, tune="both", theta_dyn=None, theta_obj=None):
        """ParamOCSystem plus initial ThetaVector for the chosen tuning split.

        tune="both" exposes [theta_dyn, theta_obj]; "dyn" or "obj" freeze the
        other group at the supplied (or default) values.
        """
        x0 = self.x0 if x0 is None else np.asarray(x0, dtype=float)
        td = self.theta_dyn if theta_dyn is None else np.asarray(theta_dyn, float)
        to = self.theta_obj if theta_obj is None else np.asarray(theta_obj, float)
        rd, ro = self.spec.r_dyn, self.spec.r_obj
        n, m = self.spec.n, self.spec.m
        dyn_fn = self.dynamics._fn
        stage_fn = self.stage._fn
        term_fn = self.terminal._fn
        if tune == "both":
            f = DiffVectorFn(lambda x, u, th: dyn_fn(x, u, th[:rd]), n, n, m, rd + ro)
            c = DiffScalarFn(lambda x, u, th: stage_fn(x, u, th[rd:]), n, m, rd + ro)
            h = DiffScalarFn(lambda x, u, th: term_fn(x, u, th[rd:]), n, m, rd + ro)
            theta0 = ThetaVector(
                np.concatenate([td, to]), {"dyn": (0, rd), "obj": (rd, ro)}
            )
        elif tune == "dyn":
            to_fixed = to.copy()
            f = DiffVectorFn(dyn_fn, n, n, m, rd)
            c = DiffScalarFn(lambda x, u, th: stage_fn(x, u, to_fixed), n, m, rd)
            h = DiffScalarFn(lambda x, u, th: term_fn(x, u, to_fixed), n, m, rd)
            theta0 = ThetaVector(td, {"dyn": (0, rd)})
        elif tune == "obj":
            td_fixed = td.copy()
            f = DiffVectorFn(lambda x, u, th: dyn_fn(x, u, td_fixed), n, n, m, ro)
            c = DiffScalarFn(stage_fn, n, m, ro)
            h = DiffScalarFn(term_fn, n, m, ro)
            theta0 = ThetaVector(to, {"obj": (0, ro)})
        else:
            raise ValueError(f"tune must be 'both', 'dyn', or 'obj', got {tune!r}")
        sys = ParamOCSystem(f, c, h, n, m, theta0.values.shape[0], T, x0)
        return sys, theta0


# -- small algebra helpers usable on plain floats and forward-mode numbers --


def _cross(a, b):
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


def _quat_to_rot(q):
    """Rotation matrix of a scalar-first quaternion (assumed unit)."""
    w, x, y, z = q[0], q[1], q[2], q[3]
    return np.array(
        [
            [
                1 - 2 * (y * y + z * z),
                2 * (x * y - w * z),
                2 * (x * z + w * y),
            ],
            [
                2 * (x * y + w * z),
                1 - 2 * (x * x + z * z),
                2 * (y * z - w * x),
            ],
            [
                2 * (x * z - w * y),
                2 * (y * z + w * x),
                1 - 2 * (x * x + y * y),
            ],
        ]
    )


def _quat_deriv(q, omega):
    """d/dt of a unit quaternion under body angular velocity omega."""
    w, x, y, z = q[0], q[1], q[2], q[3]
    ox, oy, oz = omega[0], omega[1], omega[2]
    return 0.5 * np.array(
        [
            -x * ox - y * oy - z * oz,
            w * ox + y * oz - z * oy,
            w * oy - x * oz + z * ox,
            w * oz + x * oy - y * ox,
        ]
    )


def _normalize_quat(q):
    norm = ad.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    return q / norm


def _sym_inertia(j):
    """Symmetric 3x3 inertia from (Jxx, Jyy, Jzz, Jxy, Jxz, Jyz)."""
    jxx, jyy, jzz, jxy, jxz, jyz = j[0], j[1], j[2], j[3], j[4], j[5]
    return np.array([[jxx, jxy, jxz], [jxy, jyy, jyz], [jxz, jyz, jzz]])


def _solve_sym3(J, b):
    """Solve J y = b for symmetric 3x3 J via the adjugate (AD-compatible)."""
    a, bb, c = J[0, 0], J[0, 1], J[0, 2]
    d, e = J[1, 1], J[1, 2]
    f = J[2, 2]
    A = d * f - e * e
    B = c * e - bb * f
    C = bb * e - c * d
    det = a * A + bb * B + c * C
    inv = (
        np.array(
            [
                [A, B, C],
                [B, a * f - c * c, bb * c - a * e],
                [C, bb * c - a * e, a * d - bb * bb],
            ]
        )
        / det
    )
    return inv @ b


def attitude_error(q, q_g):
    """Half the trace defect between the two attitudes: 0 iff same rotation,
    2 for a 180-degree difference.  Rejects quaternions off the unit sphere
    by more than 1e-3."""
    for name, quat in (("q", q), ("q_g", q_g)):
        norm = np.sqrt(sum(ad.value(c) ** 2 for c in quat))
        if abs(norm - 1.0) > 1e-3:
            raise ValueError(f"{name} is not unit-norm (|q| = {norm:.6f})")
    Rg = _quat_to_rot(np.asarray(q_g, dtype=object))
    R = _quat_to_rot(np.asarray(q, dtype=object))
    M = Rg.T @ R
    return 0.5 * (3.0 - (M[0, 0] + M[1, 1] + M[2, 2]))


def table2_objective(x_g, n, m):
    """Stage and terminal cost callables with per-coordinate goal weights.

    stage(x, u, w) = sum_i w_i (x_i - x_g_i)^2 + |u|^2; the terminal variant
    drops the control term.  Negative weights are rejected.
    """
    x_g = np.asarray(x_g, dtype=float)
    if x_g.shape != (n,):
        raise ValueError(f"x_g has shape {x_g.shape}, expected ({n},)")

    def _check_w(w):
        if any(ad.value(wi) < 0 for wi in w):
            raise ValueError("objective weights must be nonnegative")

    def stage(x, u, w):
        _check_w(w)
        total = sum(u[i] * u[i] for i in range(m))
        for i in range(n):
            d = x[i] - x_g[i]
            total = total + w[i] * d * d
        return total

    def terminal(x, u, w):
        _check_w(w)
        total = 0.0
        for i in range(n):
            d = x[i] - x_g[i]
            total = total + w[i] * d * d
        return total

    return stage, terminal


def euler_step(xdot, delta, quat_slice=None):
    """Discrete step x + delta * xdot(x, u, th), renormalizing a quaternion
    block when one is present."""

    def step(x, u, th):
        nxt = x + delta * np.asarray(xdot(x, u, th))
        if quat_slice is not None:
            nxt = np.concatenate(
                [
                    nxt[: quat_slice.start],
                    _normalize_quat(nxt[quat_slice]),
                    nxt[quat_slice.stop :],
                ]
            )
        return nxt

    return step


def rollout(f: DiffVectorFn, x0, controls, theta):
    """Forward simulation under a control sequence or a callable policy.

    ``controls`` is either a (T, m) array or a callable ``(t, x) -> u`` used
    with an explicit horizon via functools.partial-free convention: callables
    must be passed together with an array of time indices, so pass a (T, m)
    array here or use :func:`rollout_policy`.
    """
    x0 = np.asarray(x0, dtype=float)
    us = np.asarray(controls, dtype=float)
    T = us.shape[0]
    xs = np.zeros((T + 1, f.n_out))
    xs[0] = x0
    for t in range(T):
        xs[t + 1] = f.value(xs[t], us[t], theta)
        if not np.all(np.isfinite(xs[t + 1])):
            raise DivergedError(
                f"state became non-finite at step {t + 1}; last finite index {t}",
                t,
            )
    return Trajectory(xs, us)


def rollout_policy(f: DiffVectorFn, x0, policy, theta_dyn, theta_pol, T):
    """Closed-loop forward simulation; ``policy(t, x, theta_pol) -> u``."""
    x0 = np.asarray(x0, dtype=float)
    xs = np.zeros((T + 1, f.n_out))
    us = np.zeros((T, f.m))
    xs[0] = x0
    for t in range(T):
        us[t] = np.asarray(policy(t, xs[t], theta_pol), dtype=float)
        xs[t + 1] = f.value(xs[t], us[t], theta_dyn)
        if not np.all(np.isfinite(xs[t + 1])):
            raise DivergedError(
                f"state became non-finite at step {t + 1}; last finite index {t}",
                t,
            )
    return Trajectory(xs, us)


# -- the five environments --------------------------------------------------


def _pendulum(delta):
    # rod pendulum, angle from the downward position, torque at the pivot
    def xdot(x, u, th):
        mass, length, damping = th[0], th[1], th[2]
        q, dq = x[0], x[1]
        inertia = mass * length * length / 3.0
        ddq = (
            u[0] - damping * dq - 0.5 * mass * GRAVITY * length * ad.sin(q)
        ) / inertia
        return np.array([dq, ddq])

    spec = EnvSpec(
        "pendulum",
        2,
        1,
        ("mass", "length", "damping"),
        ("w_q", "w_dq"),
        np.array([np.pi, 0.0]),
        delta,
    )
    return spec, xdot, np.array([1.0, 1.0, 0.1]), np.array([1.0, 0.1]), np.zeros(2)


def _cartpole(delta):
    # pole angle measured from upright so the origin is an equilibrium
    def xdot(x, u, th):
        mc, mp, half_l = th[0], th[1], th[2]
        dz, q, dq = x[1], x[2], x[3]
        s, c = ad.sin(q), ad.cos(q)
        total = mc + mp
        tmp = (u[0] + mp * half_l * dq * dq * s) / total
        ddq = (GRAVITY * s - c * tmp) / (half_l * (4.0 / 3.0 - mp * c * c / total))
        ddz = tmp - mp * half_l * ddq * c / total
        return np.array([dz, ddz, dq, ddq])

    spec = EnvSpec(
        "cartpole",
        4,
        1,
        ("cart_mass", "pole_mass", "pole_half_length"),
        ("w_z", "w_dz", "w_q", "w_dq"),
        np.zeros(4),
        delta,
    )
    return spec, xdot, np.array([1.0, 0.1, 0.5]), np.ones(4), np.zeros(4)


def _robotarm2(delta):
    # planar two-link arm, uniform rods, angles from the horizontal axis
    def xdot(x, u, th):
        m1, m2, l1, l2 = th[0], th[1], th[2], th[3]
        q2 = x[1]
        dq1, dq2 = x[2], x[3]
        lc1, lc2 = 0.5 * l1, 0.5 * l2
        i1 = m1 * l1 * l1 / 12.0
        i2 = m2 * l2 * l2 / 12.0
        a = i1 + i2 + m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2)
        b = m2 * l1 * lc2
        d = i2 + m2 * lc2 * lc2
        c2 = ad.cos(q2)
        s2 = ad.sin(q2)
        m11 = a + 2.0 * b * c2
        m12 = d + b * c2
        m22 = d
        # Coriolis/centrifugal terms from the standard Christoffel symbols
        hcor = -b * s2
        c1 = hcor * dq2 * dq1 + hcor * (dq1 + dq2) * dq2
        cc2 = -hcor * dq1 * dq1
        q1 = x[0]
        g1 = (m1 * lc1 + m2 * l1) * GRAVITY * ad.cos(q1) + m2 * lc2 * GRAVITY * ad.cos(
            q1 + q2
        )
        g2 = m2 * lc2 * GRAVITY * ad.cos(q1 + q2)
        r1 = u[0] - c1 - g1
        r2 = u[1] - cc2 - g2
        det = m11 * m22 - m12 * m12
        ddq1 = (m22 * r1 - m12 * r2) / det
        ddq2 = (m11 * r2 - m12 * r1) / det
        return np.array([dq1, dq2, ddq1, ddq2])

    spec = EnvSpec(
        "robotarm2",
        4,
        2,
        ("mass_1", "mass_2", "length_1", "length_2"),
        ("w_q1", "w_q2", "w_dq1", "w_dq2"),
        np.array([np.pi / 2.0, 0.0, 0.0, 0.0]),
        delta,
    )
    return spec, xdot, np.ones(4), np.ones(4), np.zeros(4)


def _quadrotor(delta, mixing_c):
    # state [p(3), v(3), quat(4), omega(3)], controls = four rotor thrusts
    def xdot(x, u, th):
        mass = th[0]
        J = _sym_inertia(th[1:7])
        lw = th[7]
        v = x[3:6]
        q = x[6:10]
        w = x[10:13]
        thrust = u[0] + u[1] + u[2] + u[3]
        R = _quat_to_rot(q)
        vdot = np.array([0.0, 0.0, -GRAVITY]) + R @ np.array(
            [0.0, 0.0, thrust]
        ) / mass
        torque = np.array(
            [
                0.5 * lw * (u[1] - u[3]),
                0.5 * lw * (u[2] - u[0]),
                mixing_c * (u[0] - u[1] + u[2] - u[3]),
            ]
        )
        wdot = _solve_sym3(J, torque - _cross(w, J @ w))
        qdot = _quat_deriv(q, w)
        return np.concatenate([v, vdot, qdot, wdot])

    x_goal = np.zeros(13)
    x_goal[6] = 1.0  # hover at the origin, upright
    spec = EnvSpec(
        "quadrotor",
        13,
        4,
        ("mass", "Jxx", "Jyy", "Jzz", "Jxy", "Jxz", "Jyz", "wing_length"),
        ("w_pos", "w_vel", "w_att", "w_omega"),
        x_goal,
        delta,
    )
    theta_dyn = np.array([1.0, 0.01, 0.01, 0.02, 0.0, 0.0, 0.0, 0.4])
    x0 = np.zeros(13)
    x0[6] = 1.0
    return spec, xdot, theta_dyn, np.ones(4), x0


def _quadrotor_costs(x_g):
    p_g, v_g = x_g[0:3], x_g[3:6]
    q_g, w_g = x_g[6:10], x_g[10:13]

    def features(x):
        dp = x[0:3] - p_g
        dv = x[3:6] - v_g
        dw = x[10:13] - w_g
        return (
            dp @ dp,
            dv @ dv,
            attitude_error(x[6:10], q_g),
            dw @ dw,
        )

    def stage(x, u, w):
        if any(ad.value(wi) < 0 for wi in w):
            raise ValueError("objective weights must be nonnegative")
        ep, ev, eq, ew = features(x)
        return (
            w[0] * ep + w[1] * ev + w[2] * eq + w[3] * ew + sum(ui * ui for ui in u)
        )

    def terminal(x, u, w):
        if any(ad.value(wi) < 0 for wi in w):
            raise ValueError("objective weights must be nonnegative")
        ep, ev, eq, ew = features(x)
        return w[0] * ep + w[1] * ev + w[2] * eq + w[3] * ew

    return stage, terminal


def _rocket(delta):
    # state [mass, r(3), v(3), quat(4), omega(3)] in an up-east-north frame;
    # controls are the body-frame thrust vector, applied at a gimbal point
    # half the vehicle length below the center of mass
    def xdot(x, u, th):
        m0 = th[0]
        J = _sym_inertia(th[1:7])
        length = th[7]
        v = x[4:7]
        q = x[7:11]
        w = x[11:14]
        R = _quat_to_rot(q)
        vdot = np.array([-GRAVITY, 0.0, 0.0]) + R @ u / m0
        arm = np.array([-0.5 * length, 0.0, 0.0])
        torque = _cross(arm, u)
        wdot = _solve_sym3(J, torque - _cross(w, J @ w))
        qdot = _quat_deriv(q, w)
        return np.concatenate([np.array([0.0 * x[0]]), v, vdot, qdot, wdot])

    x_goal = np.zeros(14)
    x_goal[0] = 10.0
    x_goal[7] = 1.0  # upright attitude at touchdown
    spec = EnvSpec(
        "rocket",
        14,
        3,
        ("mass_0", "Jxx", "Jyy", "Jzz", "Jxy", "Jxz", "Jyz", "length"),
        ("w_pos", "w_vel", "w_tilt", "w_side", "w_fuel"),
        x_goal,
        delta,
    )
    theta_dyn = np.array([10.0, 0.5, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0])
    x0 = np.zeros(14)
    x0[0] = 10.0
    x0[1] = 10.0  # start 10 m up
    x0[7] = 1.0
    return spec, xdot, theta_dyn, np.ones(5), x0


def _rocket_costs(x_g):
    r_g, v_g, q_g = x_g[1:4], x_g[4:7], x_g[7:11]

    def features(x):
        dr = x[1:4] - r_g
        dv = x[4:7] - v_g
        return dr @ dr, dv @ dv, attitude_error(x[7:11], q_g)

    def stage(x, u, w):
        if any(ad.value(wi) < 0 for wi in w):
            raise ValueError("objective weights must be nonnegative")
        er, ev, eq = features(x)
        side = u[1] * u[1] + u[2] * u[2]
        fuel = u[0] * u[0] + u[1] * u[1] + u[2] * u[2]
        return w[0] * er + w[1] * ev + w[2] * eq + w[3] * side + w[4] * fuel

    def terminal(x, u, w):
        if any(ad.value(wi) < 0 for wi in w):
            raise ValueError("objective weights must be nonnegative")
        er, ev, eq = features(x)
        return w[0] * er + w[1] * ev + w[2] * eq

    return stage, terminal


def make_env(name, overrides=None):
    """Build a fully wired environment.

    ``overrides`` may set: delta, x_goal, x0, theta_dyn, theta_obj, and for
    the quadrotor the torque mixing constant ``mixing_c``.
    """
    overrides = dict(overrides or {})
    delta = float(overrides.pop("delta", 0.1))
    if name == "pendulum":
        spec, xdot, td, to, x0 = _pendulum(delta)
        quat = None
    elif name == "cartpole":
        spec, xdot, td, to, x0 = _cartpole(delta)
        quat = None
    elif name == "robotarm2":
        spec, xdot, td, to, x0 = _robotarm2(delta)
        quat = None
    elif name == "quadrotor":
        mixing_c = float(overrides.pop("mixing_c", 0.01))
        spec, xdot, td, to, x0 = _quadrotor(delta, mixing_c)
        quat = slice(6, 10)
    elif name == "rocket":
        spec, xdot, td, to, x0 = _rocket(delta)
        quat = slice(7, 11)
    else:
        raise ValueError(
            f"unknown environment {name!r}; valid names: {', '.join(ENV_NAMES)}"
        )
    if "x_goal" in overrides:
        spec = replace(spec, x_goal=np.asarray(overrides.pop("x_goal"), float))
    td = np.asarray(overrides.pop("theta_dyn", td), dtype=float)
    to = np.asarray(overrides.pop("theta_obj", to), dtype=float)
    x0 = np.asarray(overrides.pop("x0", x0), dtype=float)
    if overrides:
        raise ValueError(f"unknown overrides: {sorted(overrides)}")
    if td.shape != (spec.r_dyn,):
        raise ValueError(
            f"theta_dyn has shape {td.shape}, expected ({spec.r_dyn},)"
        )
    if to.shape != (spec.r_obj,):
        raise ValueError(
            f"theta_obj has shape {to.shape}, expected ({spec.r_obj},)"
        )
    step = euler_step(xdot, spec.delta, quat)
    dynamics = DiffVectorFn(step, spec.n, spec.n, spec.m, spec.r_dyn)
    if name == "quadrotor":
        stage_fn, term_fn = _quadrotor_costs(spec.x_goal)
    elif name == "rocket":
        stage_fn, term_fn = _rocket_costs(spec.x_goal)
    else:
        stage_fn, term_fn = table2_objective(spec.x_goal, spec.n, spec.m)
    stage = DiffScalarFn(stage_fn, spec.n, spec.m, spec.r_obj)
    terminal = DiffScalarFn(term_fn, spec.n, spec.m, spec.r_obj)
    return Env(spec, dynamics, stage, terminal, td, to, x0)
