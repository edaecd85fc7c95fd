import json
import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from surrobench import io
from surrobench.basis import BasisSpec
from surrobench.cli import EXIT_ARGS, EXIT_FIT, EXIT_OK, EXIT_UNSTABLE, main
from surrobench.control import SDRELaw, ZeroLaw, integrate_closed_loop
from surrobench.kernels import KernelSpec, fit_interpolant
from surrobench.data import Dataset, FitStats
from surrobench.metrics import err2, err_cost
from surrobench.mlp import MLPConfig, init_params, MLPSurrogate
from surrobench.problems import AllenCahnModel
from surrobench.report import HEADER, ExperimentReport, dump_trajectory, read_report, write_report
from surrobench.tt import FunctionalTT, TensorTrain


class TestErr2:
    def test_examples(self):
        assert err2([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert err2([0.0, 0.0], [3.0, 4.0]) == 1.0
        assert err2([3.0, 5.0], [3.0, 4.0]) == pytest.approx(0.2)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2 ** 31), scale=st.floats(1e-6, 1e6))
    def test_scale_invariant(self, seed, scale):
        rng = np.random.default_rng(seed)
        y, s = rng.standard_normal((2, 20))
        assert err2(scale * s, scale * y) == pytest.approx(err2(s, y), rel=1e-10)

    @pytest.mark.parametrize("s,y", [([1.0], [1.0, 2.0]), ([], []), ([1.0], [0.0])])
    def test_invalid(self, s, y):
        with pytest.raises(ValueError):
            err2(s, y)


class TestErrCost:
    def test_same_law_has_zero_gap(self):
        m = AllenCahnModel(6)
        y0 = np.full(6, 0.3)
        assert err_cost(m, SDRELaw(m), y0, t_final=1.0, dt=0.05) == 0.0

    def test_positive_gap_for_worse_law(self):
        m = AllenCahnModel(6)
        y0 = np.full(6, 0.1)
        assert err_cost(m, ZeroLaw(m), y0, t_final=1.0, dt=0.05) > 0.0


def _report(rng, i):
    return ExperimentReport(
        method=["tt-cross", "bstt", "kernel", "nn"][i % 4], problem=f"p{i}", dim=int(rng.integers(1, 50)),
        err_train_2=float(rng.random()) if i % 5 else math.nan, err_test_2=float(rng.random() * 1e-9),
        dofs=int(rng.integers(0, 10 ** 6)), n_train=int(rng.integers(0, 10 ** 5)),
        cpu_train_s=float(rng.random() * 100), cpu_test_s=float(rng.random()),
        extra={"seed": i, "ranks": "1-2-3", "nested": {"a": [1, 2.5]}, "ok": bool(i % 2)})


class TestErrCostLQR:
    def test_exact_quadratic_surrogate(self):
        from surrobench.control import SemilinearModel, SurrogateLaw, solve_care
        A = np.array([[0.0, 1.0], [-1.0, 0.3]])
        B = np.array([[0.0], [1.0]])
        m = SemilinearModel(lambda y: A, lambda y: B, lambda y: np.eye(2), [[1.0]], d=2)
        P = solve_care(A, B, np.eye(2), [[1.0]]).P

        class V:
            domain = np.array([[-5.0, 5.0]] * 2)

            @staticmethod
            def grad(x):
                return 2 * P @ x

        law = SurrogateLaw(m, V())
        assert err_cost(m, law, np.array([0.5, 0.5]), t_final=10.0, dt=1e-2) <= 1e-6
        assert err_cost(m, law, np.zeros(2), t_final=1.0) == 0.0


class TestReport:
    def test_round_trip_many(self, rng, tmp_path):
        rows = [_report(rng, i) for i in range(100)]
        path = tmp_path / "r.csv"
        write_report(rows, path)
        back = read_report(path)
        assert len(back) == 100
        for a, b in zip(rows, back):
            for k in HEADER[:-1]:
                va, vb = getattr(a, k), getattr(b, k)
                if isinstance(va, float) and math.isnan(va):
                    assert math.isnan(vb)
                else:
                    assert va == vb
            assert a.extra == b.extra

    def test_header_only(self, tmp_path):
        path = tmp_path / "empty.csv"
        write_report([], path)
        assert path.read_text().strip() == ",".join(HEADER)
        assert read_report(path) == []

    def test_one_row(self, rng, tmp_path):
        path = tmp_path / "one.csv"
        write_report([_report(rng, 3)], path)
        import csv
        rows = list(csv.reader(path.open()))
        assert len(rows) == 2 and len(rows[1]) == len(HEADER)

    def test_append(self, rng, tmp_path):
        path = tmp_path / "a.csv"
        write_report([_report(rng, 0)], path)
        write_report([_report(rng, 1)], path, append=True)
        assert len(read_report(path)) == 2
        assert path.read_text().count("method,problem") == 1

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n")
        with pytest.raises(ValueError):
            read_report(path)

    def test_nan_written_as_na(self, tmp_path):
        path = tmp_path / "n.csv"
        write_report([ExperimentReport("nn", "x", 2)], path)
        assert ",n/a,n/a," in path.read_text()

    def test_status(self):
        assert ExperimentReport("nn", "x", 2).status == "ok"
        assert ExperimentReport("nn", "x", 2, extra={"status": "instability"}).status == "instability"

    def test_trajectory_dump(self, tmp_path):
        m = AllenCahnModel(4)
        traj = integrate_closed_loop(m, ZeroLaw(m), np.full(4, 0.5), 0.1, 0.05)
        path = tmp_path / "t.csv"
        dump_trajectory(traj, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,y_1,y_2,y_3,y_4,u_1,u_2,u_3,u_4,running_cost"
        assert len(lines) == 1 + len(traj.times)


class TestIO:
    @pytest.mark.parametrize("suffix", [".json", ".npz"])
    def test_ftt(self, rng, tmp_path, suffix):
        f = FunctionalTT(TensorTrain.random((3, 4, 2), (2, 3), rng),
                         (BasisSpec(3), BasisSpec(4, (0.0, 2.0)), BasisSpec(2)))
        io.save(f, tmp_path / f"f{suffix}")
        g = io.load(tmp_path / f"f{suffix}")
        x = np.column_stack([rng.uniform(-1, 1, 10), rng.uniform(0, 2, 10), rng.uniform(-1, 1, 10)])
        np.testing.assert_array_equal(f(x), g(x))

    @pytest.mark.parametrize("suffix", [".json", ".npz"])
    def test_kernel(self, rng, tmp_path, suffix):
        x = rng.uniform(-1, 1, (15, 2))
        s = fit_interpolant(Dataset(x, x[:, 0] ** 2), KernelSpec("matern2", 0.7), domain=[[-1, 1], [-1, 1]])
        io.save(s, tmp_path / f"k{suffix}")
        t = io.load(tmp_path / f"k{suffix}")
        np.testing.assert_array_equal(s(x), t(x))
        np.testing.assert_array_equal(t.domain, s.domain)

    @pytest.mark.parametrize("suffix", [".json", ".npz"])
    def test_mlp(self, rng, tmp_path, suffix):
        cfg = MLPConfig(3, (5, 5), "tanh", residual=True, seed=2)
        s = MLPSurrogate(init_params(cfg), cfg)
        io.save(s, tmp_path / f"m{suffix}")
        t = io.load(tmp_path / f"m{suffix}")
        x = rng.uniform(-1, 1, (7, 3))
        np.testing.assert_array_equal(s(x), t(x))
        assert t.config == cfg

    def test_unknown(self, tmp_path):
        with pytest.raises(TypeError):
            io.save(object(), tmp_path / "x.json")
        with pytest.raises(ValueError):
            io.from_record({"kind": "spline"})


class _ConstantSurrogate:
    def __call__(self, x):
        return np.ones(len(x))


class TestCLI:
    def test_tt_run_writes_report(self, tmp_path, capsys):
        out = tmp_path / "r.csv"
        code = main(["lowrank-a", "--method", "tt-cross", "--dim", "4", "--out", str(out)])
        assert code == EXIT_OK
        (row,) = read_report(out)
        assert row.method == "tt-cross" and row.dim == 4 and row.err_test_2 < 1e-10
        assert row.extra["status"] == "ok"
        assert "err_test_2" in capsys.readouterr().out

    def test_deterministic_reruns(self):
        from surrobench.experiments import run_experiment
        a = run_experiment("academic-3", "tt-cross", seed=2, test_count=500)
        b = run_experiment("academic-3", "tt-cross", seed=2, test_count=500)
        assert (a.err_train_2, a.err_test_2, a.dofs, a.n_train) == (b.err_train_2, b.err_test_2, b.dofs, b.n_train)

    def test_config_file_and_flag_precedence(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"method": "bstt", "dim": 3, "samples": 200, "degree": 2}))
        out = tmp_path / "r.csv"
        assert main(["regularity-1,0,0", "--config", str(cfg), "--dim", "4", "--out", str(out)]) == EXIT_OK
        (row,) = read_report(out)
        assert row.method == "bstt" and row.dim == 4 and row.n_train == 200

    @pytest.mark.parametrize("argv", [
        ["lowrank-a", "--method", "svm", "--out", "x.csv"],
        ["nosuch", "--method", "tt-cross", "--out", "x.csv"],
        ["lowrank-a", "--out", "x.csv"],
        ["lowrank-a", "--method", "tt-cross", "--dim", "two", "--out", "x.csv"],
    ])
    def test_bad_arguments(self, argv, tmp_path, monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        with pytest.raises(SystemExit) as info:
            sys.exit(main(argv))
        assert info.value.code == EXIT_ARGS

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"colour": "red"}))
        assert main(["lowrank-a", "--method", "tt-cross", "--config", str(cfg), "--out", "x.csv"]) == EXIT_ARGS

    def test_fit_failure_exit_code(self, tmp_path, monkeypatch):
        from surrobench import experiments
        from surrobench.errors import PivotError

        def broken(*args):
            raise PivotError("rank-deficient", mode=1)

        monkeypatch.setitem(experiments.FITTERS, "tt-cross", broken)
        out = tmp_path / "r.csv"
        assert main(["lowrank-a", "--method", "tt-cross", "--dim", "3", "--out", str(out)]) == EXIT_FIT
        (row,) = read_report(out)
        assert row.extra["status"] == "fit-failure" and math.isnan(row.err_test_2)

    def test_instability_exit_code(self, tmp_path, monkeypatch):
        from surrobench import experiments
        from surrobench.errors import InstabilityError

        def unstable(*args):
            raise InstabilityError("blow-up", time=1.0, law="surrogate")

        monkeypatch.setitem(experiments.FITTERS, "kernel", lambda problem, preset, s: (
            _ConstantSurrogate(), FitStats(err_train_2=0.5)))
        monkeypatch.setattr(experiments, "control_study", unstable)
        out = tmp_path / "r.csv"
        assert main(["allencahn", "--method", "kernel", "--out", str(out)]) == EXIT_UNSTABLE
        (row,) = read_report(out)
        assert row.extra["status"] == "instability"

    def test_console_script(self, tmp_path):
        out = tmp_path / "r.csv"
        res = subprocess.run([sys.executable, "-m", "surrobench.cli", "lowrank-a", "--method", "tt-cross",
                              "--dim", "3", "--out", str(out)], capture_output=True, text=True)
        assert res.returncode == 0, res.stderr
        assert out.exists()
