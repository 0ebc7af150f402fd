"""Exact trajectory gradients for parameterized optimal control.

Solve a tunable optimal-control problem forward, then differentiate the
optimal trajectory with respect to the problem's parameters by solving one
auxiliary linear-quadratic system — no unrolling, no graph taping.  Includes
learning loops for objective recovery from demonstrations, dynamics
identification, and direct policy optimization, plus benchmark environments.
"""

from .auxsys import (
    AuxCoefficients,
    PolicyJacobians,
    RiccatiState,
    Sensitivity,
    build_aux,
    policy_sensitivity,
    solve_aux,
    sysid_sensitivity,
    trajectory_sensitivity,
)
from .diffkit import DiffScalarFn, DiffVectorFn, FDConfig
from .envs import Env, EnvSpec, make_env, rollout, rollout_policy
from .modes import DemoSet, GDOpts, RunRecord, chain_gradient, run_control, run_ioc, run_sysid
from .ocp import ParamOCSystem, ThetaVector, Trajectory
from .solvers import LQRProblem, SolverOpts, solve_ilqr, solve_lqr

__version__ = "0.1.0"

__all__ = [
    "AuxCoefficients",
    "DemoSet",
    "DiffScalarFn",
    "DiffVectorFn",
    "Env",
    "EnvSpec",
    "FDConfig",
    "GDOpts",
    "LQRProblem",
    "ParamOCSystem",
    "PolicyJacobians",
    "RiccatiState",
    "RunRecord",
    "Sensitivity",
    "SolverOpts",
    "ThetaVector",
    "Trajectory",
    "build_aux",
    "chain_gradient",
    "make_env",
    "policy_sensitivity",
    "rollout",
    "rollout_policy",
    "run_control",
    "run_ioc",
    "run_sysid",
    "solve_aux",
    "solve_ilqr",
    "solve_lqr",
    "sysid_sensitivity",
    "trajectory_sensitivity",
]
