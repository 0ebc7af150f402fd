import json

import numpy as np
import pytest
import yaml

from ocgrad import cli, envs
from ocgrad.cli import ConfigError
from ocgrad.ocp import Trajectory, compute_costates, pmp_residual


def write_cfg(path, data):
    path.write_text(yaml.safe_dump(data))
    return str(path)


def base_cfg(out, **extra):
    cfg = {"env": {"name": "pendulum"}, "seed": 3, "out": str(out)}
    cfg.update(extra)
    return cfg


class TestConfig:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            cli.load_config(tmp_path / "nope.yaml")

    def test_bad_mode(self, tmp_path):
        p = write_cfg(tmp_path / "c.yaml", base_cfg(tmp_path, mode="train"))
        with pytest.raises(ConfigError, match="mode"):
            cli.load_config(p)

    def test_unknown_env(self, tmp_path):
        p = write_cfg(
            tmp_path / "c.yaml", {"env": {"name": "helicopter"}, "out": str(tmp_path)}
        )
        with pytest.raises(ConfigError, match="helicopter"):
            cli.load_config(p)

    def test_missing_env(self, tmp_path):
        p = write_cfg(tmp_path / "c.yaml", {"mode": "ioc"})
        with pytest.raises(ConfigError, match="env"):
            cli.load_config(p)

    def test_bad_int_field(self, tmp_path):
        p = write_cfg(tmp_path / "c.yaml", base_cfg(tmp_path, T=0))
        with pytest.raises(ConfigError, match="'T'"):
            cli.load_config(p)

    def test_negative_eta(self, tmp_path):
        p = write_cfg(tmp_path / "c.yaml", base_cfg(tmp_path, eta=-1.0))
        with pytest.raises(ConfigError, match="eta"):
            cli.load_config(p)

    def test_main_reports_config_error_as_exit_2(self, tmp_path):
        p = write_cfg(tmp_path / "c.yaml", base_cfg(tmp_path, mode="train"))
        assert cli.main(["run", p]) == 2

    def test_cli_flags_override_config(self, tmp_path):
        p = write_cfg(tmp_path / "c.yaml", base_cfg(tmp_path, trials=5))
        import argparse

        args = argparse.Namespace(seed=11, out=str(tmp_path / "o"), trials=1, workers=2)
        cfg = cli.load_config(p, args)
        assert cfg["seed"] == 11
        assert cfg["trials"] == 1
        assert cfg["workers"] == 2
        assert cfg["out"] == str(tmp_path / "o")


class TestTrajectoryFiles:
    def test_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        traj = Trajectory(rng.standard_normal((6, 3)), rng.standard_normal((5, 2)))
        f = tmp_path / "traj.csv"
        cli.write_trajectory(f, traj)
        back = cli.read_trajectory(f)
        assert np.array_equal(back.states, traj.states)
        assert np.array_equal(back.controls, traj.controls)

    def test_header_and_blank_final_control(self, tmp_path):
        traj = Trajectory(np.zeros((3, 2)), np.ones((2, 1)))
        f = tmp_path / "traj.csv"
        cli.write_trajectory(f, traj)
        lines = f.read_text().strip().split("\n")
        assert lines[0] == "t,x0,x1,u0"
        assert lines[-1].endswith(",")


class TestRunrecordFile:
    def test_column_header(self, tmp_path):
        from ocgrad.modes import RunRecord

        rec = RunRecord()
        rec.append(0, 1.25, 0.5, 0.0, 0.0, True)
        f = tmp_path / "r.csv"
        cli.write_runrecord(f, rec)
        lines = f.read_text().strip().split("\n")
        assert lines[0] == (
            "iter,loss,grad_inf_norm,wall_ms_forward,wall_ms_backward,converged"
        )
        assert lines[1] == "0,1.25,0.5,0,0,1"


class TestGenDemos:
    def test_optimal_demos_satisfy_stationarity(self, tmp_path):
        out = tmp_path / "demos"
        p = write_cfg(
            tmp_path / "c.yaml",
            base_cfg(out, demos={"count": 2, "T_range": [8, 12]}),
        )
        assert cli.main(["gen-demos", p]) == 0
        demos, manifest = cli.load_demos(out)
        assert len(demos) == 2
        env = envs.make_env("pendulum")
        for traj in demos:
            assert 8 <= traj.T <= 12
            sys_d, theta = env.system(T=traj.T, tune="both")
            sys_d = sys_d.with_horizon(traj.T, traj.states[0])
            lam = compute_costates(sys_d, traj, theta.values)
            assert pmp_residual(sys_d, traj, lam, theta.values) <= 1e-6
        assert manifest["theta_dyn"] == [1.0, 1.0, 0.1]

    def test_random_demos_replay_exactly(self, tmp_path):
        out = tmp_path / "demos"
        p = write_cfg(
            tmp_path / "c.yaml",
            base_cfg(out, env={"name": "cartpole"},
                     demos={"count": 2, "T_range": [10, 10], "kind": "random"}),
        )
        assert cli.main(["gen-demos", p]) == 0
        demos, _ = cli.load_demos(out)
        env = envs.make_env("cartpole")
        for traj in demos:
            roll = envs.rollout(
                env.dynamics, traj.states[0], traj.controls, env.theta_dyn
            )
            assert np.max(np.abs(roll.states - traj.states)) <= 1e-12


class TestRun:
    def sysid_cfg(self, tmp_path, out_name, seed=7):
        demo_dir = tmp_path / "data"
        gen = write_cfg(
            tmp_path / "gen.yaml",
            base_cfg(demo_dir, env={"name": "cartpole"}, seed=1,
                     demos={"count": 2, "T_range": [8, 8], "kind": "random"}),
        )
        assert cli.main(["gen-demos", gen]) == 0
        return write_cfg(
            tmp_path / f"{out_name}.yaml",
            base_cfg(
                tmp_path / out_name,
                env={"name": "cartpole"},
                mode="sysid",
                seed=seed,
                eta=1e-4,
                iters=5,
                timing=False,
                demos={"path": str(demo_dir)},
                theta0={"kind": "perturb", "fraction": 0.2},
            ),
        )

    def test_sysid_run_writes_artifacts(self, tmp_path):
        p = self.sysid_cfg(tmp_path, "runA")
        assert cli.main(["run", p]) == 0
        out = tmp_path / "runA"
        assert (out / "runrecord_0.csv").exists()
        assert (out / "trajectory_0.csv").exists()
        meta = json.loads((out / "metadata_0.json").read_text())
        assert meta["mode"] == "sysid"
        assert meta["seed"] == 7
        rows = (out / "runrecord_0.csv").read_text().strip().split("\n")
        assert len(rows) == 7  # header + iterations 0..5

    def test_identical_seed_gives_byte_identical_runrecords(self, tmp_path):
        pa = self.sysid_cfg(tmp_path, "runA")
        pb = self.sysid_cfg(tmp_path, "runB")
        assert cli.main(["run", pa]) == 0
        assert cli.main(["run", pb]) == 0
        a = (tmp_path / "runA" / "runrecord_0.csv").read_bytes()
        b = (tmp_path / "runB" / "runrecord_0.csv").read_bytes()
        assert a == b

    def test_zero_iters_single_row(self, tmp_path):
        p = self.sysid_cfg(tmp_path, "runZ")
        cfg = yaml.safe_load(open(p))
        cfg["iters"] = 0
        write_cfg(tmp_path / "runZ.yaml", cfg)
        assert cli.main(["run", str(tmp_path / "runZ.yaml")]) == 0
        rows = (tmp_path / "runZ" / "runrecord_0.csv").read_text().strip().split("\n")
        assert len(rows) == 2

    def test_control_run_descends(self, tmp_path):
        p = write_cfg(
            tmp_path / "c.yaml",
            base_cfg(
                tmp_path / "ctl",
                mode="control",
                T=10,
                eta=1e-3,
                iters=30,
                timing=False,
                policy={"kind": "lagrange", "degree": 5},
            ),
        )
        assert cli.main(["run", p]) == 0
        rows = (tmp_path / "ctl" / "runrecord_0.csv").read_text().strip().split("\n")
        first = float(rows[1].split(",")[1])
        last = float(rows[-1].split(",")[1])
        assert last < first

    def test_ioc_run_descends(self, tmp_path):
        demo_dir = tmp_path / "demos"
        gen = write_cfg(
            tmp_path / "gen.yaml",
            base_cfg(demo_dir, seed=2, demos={"count": 2, "T_range": [10, 10]}),
        )
        assert cli.main(["gen-demos", gen]) == 0
        p = write_cfg(
            tmp_path / "run.yaml",
            base_cfg(
                tmp_path / "ioc",
                mode="ioc",
                T=10,
                eta=1e-4,
                iters=20,
                timing=False,
                demos={"path": str(demo_dir)},
                theta0={"kind": "perturb", "fraction": 0.1},
            ),
        )
        assert cli.main(["run", p]) == 0
        rows = (tmp_path / "ioc" / "runrecord_0.csv").read_text().strip().split("\n")
        first = float(rows[1].split(",")[1])
        last = float(rows[-1].split(",")[1])
        assert last < first

    def test_out_env_var_used_when_unset(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUT_ENV_VAR, str(tmp_path / "envout"))
        cfg = {"env": {"name": "pendulum"}}
        assert cli._out_dir(cfg) == tmp_path / "envout"
        assert (tmp_path / "envout").is_dir()


class TestCheckGradients:
    def test_pendulum_passes(self, tmp_path, capsys):
        p = write_cfg(tmp_path / "c.yaml", base_cfg(tmp_path, trials=5))
        assert cli.main(["check-gradients", p]) == 0
        out = capsys.readouterr().out
        assert "PASSED" in out
