"""Command-line experiment runner.

Verbs:
  run <config.yaml>             execute a learning run, write artifacts
  gen-demos <config.yaml>       generate demonstration trajectories
  check-gradients <config.yaml> compare exact derivatives against finite
                                differences and print max relative errors

Config is YAML.  Artifacts per trial: a runrecord CSV with columns
(iter, loss, grad_inf_norm, wall_ms_forward, wall_ms_backward, converged),
a JSON metadata sidecar, and a trajectory CSV.  All floats are written with
17 significant digits so files round-trip exactly.  With ``timing: false``
the wall-clock columns are written as 0 and identical seed + config produce
byte-identical runrecords.
"""

import argparse
import concurrent.futures
import json
import os
import sys as _sys
from pathlib import Path

import numpy as np
import yaml

from . import diffkit, envs, modes, policies, solvers

OUT_ENV_VAR = "OCGRAD_OUT"

_FMT = "%.17g"


def _fmt(v):
    return _FMT % float(v)


class ConfigError(ValueError):
    pass


# per-env half-widths for sampling demo initial states around env.x0;
# quaternion components are never jittered so states stay on the unit sphere
_X0_JITTER = {
    "pendulum": np.array([0.5, 0.1]),
    "cartpole": np.array([0.3, 0.1, np.pi / 6.0, 0.1]),
    "robotarm2": np.array([0.3, 0.3, 0.1, 0.1]),
    "quadrotor": np.concatenate([0.5 * np.ones(3), 0.1 * np.ones(3), np.zeros(7)]),
    "rocket": np.concatenate([[0.0], 0.5 * np.ones(3), 0.1 * np.ones(3), np.zeros(7)]),
}


def load_config(path, args=None):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        cfg = yaml.safe_load(fh) or {}
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a mapping")
    if args is not None:
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.out is not None:
            cfg["out"] = args.out
        if args.trials is not None:
            cfg["trials"] = args.trials
        if getattr(args, "workers", None) is not None:
            cfg["workers"] = args.workers
    _validate(cfg)
    return cfg


def _validate(cfg):
    mode = cfg.get("mode")
    if mode is not None and mode not in ("ioc", "sysid", "control"):
        raise ConfigError(f"field 'mode': must be ioc, sysid, or control, got {mode!r}")
    env = cfg.get("env")
    if not isinstance(env, dict) or "name" not in env:
        raise ConfigError("field 'env': must be a mapping with a 'name' entry")
    if env["name"] not in envs.ENV_NAMES:
        raise ConfigError(
            f"field 'env.name': unknown environment {env['name']!r}; "
            f"valid names: {', '.join(envs.ENV_NAMES)}"
        )
    for key, lo in (("T", 1), ("iters", 0), ("trials", 1), ("workers", 1)):
        if key in cfg and (not isinstance(cfg[key], int) or cfg[key] < lo):
            raise ConfigError(f"field '{key}': must be an integer >= {lo}")
    if "eta" in cfg and float(cfg["eta"]) < 0:
        raise ConfigError("field 'eta': must be nonnegative")


def _out_dir(cfg):
    root = cfg.get("out") or os.environ.get(OUT_ENV_VAR, "runs")
    out = Path(root)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _make_env(cfg):
    return envs.make_env(cfg["env"]["name"], cfg["env"].get("overrides"))


# -- trajectory files -------------------------------------------------------


def write_trajectory(path, traj):
    n = traj.states.shape[1]
    m = traj.controls.shape[1]
    header = (
        ["t"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)]
    )
    lines = [",".join(header)]
    for t in range(traj.T + 1):
        cells = [str(t)] + [_fmt(v) for v in traj.states[t]]
        if t < traj.T:
            cells += [_fmt(v) for v in traj.controls[t]]
        else:
            cells += [""] * m
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory(path):
    lines = Path(path).read_text().strip().split("\n")
    header = lines[0].split(",")
    n = sum(1 for h in header if h.startswith("x"))
    m = sum(1 for h in header if h.startswith("u"))
    states = []
    controls = []
    for line in lines[1:]:
        cells = line.split(",")
        states.append([float(c) for c in cells[1 : 1 + n]])
        tail = cells[1 + n : 1 + n + m]
        if all(c != "" for c in tail):
            controls.append([float(c) for c in tail])
    from .ocp import Trajectory

    return Trajectory(np.array(states), np.array(controls))


def write_runrecord(path, rec):
    lines = ["iter,loss,grad_inf_norm,wall_ms_forward,wall_ms_backward,converged"]
    for it, loss, g, wf, wb, ok in rec.rows():
        lines.append(
            f"{it},{_fmt(loss)},{_fmt(g)},{_fmt(wf)},{_fmt(wb)},{int(ok)}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


# -- theta0 construction ----------------------------------------------------


def _theta0(cfg, truth, rng):
    spec = cfg.get("theta0") or {"kind": "explicit", "values": list(truth)}
    kind = spec.get("kind", "explicit")
    if kind == "explicit":
        vals = np.asarray(spec["values"], dtype=float)
        if vals.shape != truth.shape:
            raise ConfigError(
                f"field 'theta0.values': length {vals.shape[0]}, expected {truth.shape[0]}"
            )
        return vals
    if kind == "perturb":
        frac = float(spec.get("fraction", 0.2))
        return truth * (1.0 + rng.uniform(-frac, frac, truth.shape))
    if kind == "random":
        scale = float(spec.get("scale", 1.0))
        return scale * rng.standard_normal(truth.shape)
    raise ConfigError(f"field 'theta0.kind': unknown kind {kind!r}")


# -- demo generation --------------------------------------------------------


def _sample_x0(cfg, env, rng):
    x0_spec = (cfg.get("demos") or {}).get("x0")
    if x0_spec:
        low = np.asarray(x0_spec["low"], dtype=float)
        high = np.asarray(x0_spec["high"], dtype=float)
        return rng.uniform(low, high)
    jitter = _X0_JITTER[env.spec.name]
    return env.x0 + rng.uniform(-jitter, jitter)


def gen_demos(cfg):
    env = _make_env(cfg)
    dcfg = cfg.get("demos") or {}
    count = int(dcfg.get("count", 5))
    t_lo, t_hi = dcfg.get("T_range", [cfg.get("T", 20), cfg.get("T", 20)])
    kind = dcfg.get("kind", "optimal")
    seed = int(cfg.get("seed", 0))
    rng = np.random.default_rng(seed)
    out = _out_dir(cfg)
    files = []
    sys_base, theta = env.system(T=int(t_lo), tune="both")
    for i in range(count):
        T = int(rng.integers(t_lo, t_hi + 1))
        traj = None
        for attempt in range(10):
            x0 = _sample_x0(cfg, env, rng)
            if kind == "random":
                us = 0.5 * rng.standard_normal((T, env.spec.m))
                try:
                    traj = envs.rollout(env.dynamics, x0, us, env.theta_dyn)
                except envs.DivergedError:
                    traj = None
                    continue
                break
            sys_d = sys_base.with_horizon(T, x0)
            res = solvers.solve_ilqr(
                sys_d, theta.values, solvers.SolverOpts(max_iters=200, tol=1e-8)
            )
            if res.converged or res.residual <= 1e-6:
                traj = res.traj
                break
        if traj is None:
            raise RuntimeError(
                f"demo {i}: no convergent instance found in 10 attempts"
            )
        fname = out / f"demo_{i}.csv"
        write_trajectory(fname, traj)
        files.append(fname.name)
    manifest = {
        "env": cfg["env"],
        "kind": kind,
        "seed": seed,
        "theta_dyn": [float(v) for v in env.theta_dyn],
        "theta_obj": [float(v) for v in env.theta_obj],
        "files": files,
    }
    with open(out / "demos.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    print(f"wrote {count} demos to {out}")
    return 0


def load_demos(path):
    path = Path(path)
    with open(path / "demos.json") as fh:
        manifest = json.load(fh)
    trajs = [read_trajectory(path / f) for f in manifest["files"]]
    return modes.DemoSet(tuple(trajs)), manifest


# -- run --------------------------------------------------------------------


def _gd_opts(cfg):
    return modes.GDOpts(
        eta=float(cfg.get("eta", 1e-4)),
        iters=int(cfg.get("iters", 100)),
        timing=bool(cfg.get("timing", True)),
        stop_when_loss_below=cfg.get("stop_when_loss_below"),
        halve_on_increase=bool(cfg.get("halve_on_increase", False)),
    )


def _build_policy(cfg, env):
    pcfg = cfg.get("policy") or {"kind": "lagrange", "degree": 15}
    kind = pcfg.get("kind")
    T = int(cfg.get("T", 20))
    if kind == "lagrange":
        return policies.LagrangePolicy(int(pcfg.get("degree", 15)), env.spec.m, T)
    if kind == "mlp":
        widths = pcfg.get("widths") or [env.spec.n, env.spec.n, env.spec.m]
        return policies.MLPPolicy(policies.MLP(widths))
    raise ConfigError(f"field 'policy.kind': unknown kind {kind!r}")


def _run_trial(cfg, trial):
    env = _make_env(cfg)
    seed = int(cfg.get("seed", 0)) + trial
    rng = np.random.default_rng(seed)
    opts = _gd_opts(cfg)
    mode = cfg["mode"]
    out = _out_dir(cfg)
    if mode == "ioc":
        demos, manifest = load_demos(cfg["demos"]["path"])
        tune = cfg.get("tune", "both")
        sys_base, theta_star = env.system(T=int(cfg.get("T", 20)), tune=tune)
        theta0 = _theta0(cfg, theta_star.values, rng)
        rec = modes.run_ioc(sys_base, demos, theta0, opts)
        demo0 = demos.trajectories[0]
        sys_d = sys_base.with_horizon(demo0.T, demo0.states[0])
        final_traj = solvers.solve_ilqr(sys_d, rec.theta_final).traj
    elif mode == "sysid":
        demos, manifest = load_demos(cfg["demos"]["path"])
        theta0 = _theta0(cfg, env.theta_dyn, rng)
        rec = modes.run_sysid(env.dynamics, demos, theta0, opts)
        demo0 = demos.trajectories[0]
        final_traj = envs.rollout(
            env.dynamics, demo0.states[0], demo0.controls, rec.theta_final
        )
    elif mode == "control":
        T = int(cfg.get("T", 20))
        policy = _build_policy(cfg, env)
        loss = modes.ControlObjectiveLoss(env.stage, env.terminal, env.theta_obj)
        p0_spec = cfg.get("theta0") or {"kind": "zero"}
        if p0_spec.get("kind") == "explicit":
            theta0 = np.asarray(p0_spec["values"], dtype=float)
        elif p0_spec.get("kind") == "random":
            scale = float(p0_spec.get("scale", 0.1))
            theta0 = scale * rng.standard_normal(policy.n_params)
        else:
            theta0 = np.zeros(policy.n_params)
        rec = modes.run_control(
            env.dynamics, env.theta_dyn, policy, loss, theta0, env.x0, T, opts
        )
        final_traj = envs.rollout_policy(
            env.dynamics,
            env.x0,
            lambda t, x, tp: policy.controls(tp, t, x),
            env.theta_dyn,
            rec.theta_final,
            T,
        )
    else:
        raise ConfigError(f"field 'mode': required for run, got {mode!r}")
    write_runrecord(out / f"runrecord_{trial}.csv", rec)
    write_trajectory(out / f"trajectory_{trial}.csv", final_traj)
    meta = {
        "mode": mode,
        "env": cfg["env"],
        "seed": seed,
        "eta": opts.eta,
        "iters": opts.iters,
        "trial": trial,
        "failures": rec.failures,
        "theta0": [float(v) for v in rec.theta0],
        "theta_final": [float(v) for v in rec.theta_final],
    }
    with open(out / f"metadata_{trial}.json", "w") as fh:
        json.dump(meta, fh, indent=2)
    final_loss = rec.losses[-1] if rec.losses else float("nan")
    wall = sum(rec.wall_ms_forward) + sum(rec.wall_ms_backward)
    print(
        f"trial {trial}: final loss {final_loss:.6g} after "
        f"{rec.iters[-1] if rec.iters else 0} iterations, {wall:.1f} ms"
    )
    return 0


def run(cfg):
    trials = int(cfg.get("trials", 1))
    workers = int(cfg.get("workers", 1))
    if workers > 1 and trials > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(lambda i: _run_trial(cfg, i), range(trials)))
    else:
        for i in range(trials):
            _run_trial(cfg, i)
    return 0


# -- gradient checking ------------------------------------------------------


def check_gradients(cfg):
    env = _make_env(cfg)
    seed = int(cfg.get("seed", 0))
    trials = int(cfg.get("trials", 20))
    rng = np.random.default_rng(seed)
    spec = env.spec
    worst_first = 0.0
    worst_second = 0.0
    for _ in range(trials):
        x = env.x0 + 0.1 * rng.standard_normal(spec.n)
        if spec.name in ("quadrotor", "rocket"):
            qs = slice(6, 10) if spec.name == "quadrotor" else slice(7, 11)
            x[qs] = x[qs] / np.linalg.norm(x[qs])
        u = 0.5 * rng.standard_normal(spec.m)
        td = env.theta_dyn * (1.0 + 0.1 * rng.uniform(-1, 1, spec.r_dyn))
        to = env.theta_obj * (1.0 + 0.1 * rng.uniform(-1, 1, spec.r_obj))
        F, G, E = env.dynamics.jacobians(x, u, td)
        point = np.concatenate([x, u, td])
        n, m = spec.n, spec.m

        def fvec(p):
            return env.dynamics.value(p[:n], p[n : n + m], p[n + m :])

        fd = diffkit.fd_jacobian(fvec, point)
        err = diffkit.rel_err(np.concatenate([F, G, E], axis=1), fd)
        worst_first = max(worst_first, err)
        for fn in (env.stage, env.terminal):
            pt = np.concatenate([x, u, to])

            def fscal(p):
                return fn.value(p[:n], p[n : n + m], p[n + m :])

            gx, gu, gt = fn.grads(x, u, to)
            err = diffkit.rel_err(
                np.concatenate([gx, gu, gt]), diffkit.fd_gradient(fscal, pt)
            )
            worst_first = max(worst_first, err)
            err2 = diffkit.rel_err(fn.hessian(x, u, to), diffkit.fd_hessian(fscal, pt))
            worst_second = max(worst_second, err2)
    print(f"max first-order relative error:  {worst_first:.3e}")
    print(f"max second-order relative error: {worst_second:.3e}")
    ok = worst_first <= 1e-5 and worst_second <= 1e-4
    print("gradient check " + ("PASSED" if ok else "FAILED"))
    return 0 if ok else 1


def main(argv=None):
    parser = argparse.ArgumentParser(prog="ocgrad")
    parser.add_argument("verb", choices=["run", "gen-demos", "check-gradients"])
    parser.add_argument("config")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--trials", type=int, default=None)
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args)
        if args.verb == "run":
            return run(cfg)
        if args.verb == "gen-demos":
            return gen_demos(cfg)
        return check_gradients(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
