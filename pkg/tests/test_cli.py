"""CLI subcommand tests: outputs, exit codes, determinism."""

import json

import numpy as np
import pytest

from acp.cli import main
from acp.toynet import export_bundle, random_mlp, teacher_dataset


@pytest.fixture()
def toy_bundle(tmp_path):
    spec = random_mlp([6, 12, 12, 4], seed=30)
    ds = teacher_dataset(spec, 300, seed=31)
    bundle = tmp_path / "net.npz"
    manifest = tmp_path / "net.json"
    export_bundle(spec, ds, bundle, manifest)
    return bundle, manifest


def _run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestEstimate:
    def test_identical_x_and_z_scores_zero(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        x = rng.normal(size=500)
        np.save(tmp_path / "x.npy", x)
        np.save(tmp_path / "y.npy", rng.normal(size=500))
        code, out, _ = _run(capsys, "estimate",
                            "--x", str(tmp_path / "x.npy"),
                            "--y", str(tmp_path / "y.npy"),
                            "--z", str(tmp_path / "x.npy"),
                            "--seed", "1")
        assert code == 0
        assert json.loads(out)["value"] == 0.0

    def test_missing_file_exits_2(self, tmp_path, capsys):
        code, _, err = _run(capsys, "estimate",
                            "--x", str(tmp_path / "absent.npy"),
                            "--y", str(tmp_path / "absent.npy"))
        assert code == 2
        assert "absent.npy" in err

    def test_matches_oracle_on_discrete_fixture(self, tmp_path, capsys):
        rng = np.random.default_rng(2)
        n = 60_000
        x = rng.integers(0, 2, n).astype(np.float64)
        z = rng.integers(0, 2, n).astype(np.float64)
        np.save(tmp_path / "x.npy", x)
        np.save(tmp_path / "y.npy", x)
        np.save(tmp_path / "z.npy", z)
        pmf = np.zeros((2, 2, 2))
        for zz in range(2):
            pmf[0, 0, zz] = 0.25
            pmf[1, 1, zz] = 0.25
        np.save(tmp_path / "pmf.npy", pmf)

        code, out, _ = _run(capsys, "oracle", "--pmf", str(tmp_path / "pmf.npy"))
        assert code == 0
        oracle_value = json.loads(out)["value"]

        code, out, _ = _run(capsys, "estimate",
                            "--x", str(tmp_path / "x.npy"),
                            "--y", str(tmp_path / "y.npy"),
                            "--z", str(tmp_path / "z.npy"),
                            "--epsilon", "0.1", "--seed", "3")
        assert code == 0
        est_value = json.loads(out)["value"]
        assert abs(est_value - oracle_value) <= 0.02

    def test_validation_error_exits_3(self, tmp_path, capsys):
        arr = np.zeros(4)
        arr[1] = np.nan
        np.save(tmp_path / "bad.npy", arr)
        code, _, err = _run(capsys, "estimate",
                            "--x", str(tmp_path / "bad.npy"),
                            "--y", str(tmp_path / "bad.npy"))
        assert code == 3
        assert "non-finite" in err


class TestPrune:
    def test_tau_zero_compresses_nothing(self, toy_bundle, tmp_path, capsys):
        bundle, manifest = toy_bundle
        out_dir = tmp_path / "out"
        code, out, _ = _run(capsys, "prune", "--bundle", str(bundle),
                            "--manifest", str(manifest), "--tau", "0",
                            "--delta", "0.5", "--out", str(out_dir),
                            "--groups", "4", "--seed", "5")
        assert code == 0
        report = json.loads((out_dir / "report.json").read_text())
        assert report["totals"]["compression_percent"] == 0.0
        assert (out_dir / "masks.json").exists()
        assert (out_dir / "report.csv").exists()
        assert (out_dir / "plan.json").exists()

    def test_plan_file_respected(self, toy_bundle, tmp_path, capsys):
        bundle, manifest = toy_bundle
        plan_path = tmp_path / "plan.json"
        plan_path.write_text(json.dumps(
            {"tau": 0.5, "alpha_threshold": 0.0, "members_of_M": [],
             "gamma": {"1": 0.5}}))
        out_dir = tmp_path / "out"
        code, _, _ = _run(capsys, "prune", "--bundle", str(bundle),
                          "--manifest", str(manifest),
                          "--plan", str(plan_path),
                          "--delta", "1e9", "--phi", "constant_one",
                          "--groups", "4", "--out", str(out_dir), "--seed", "6")
        assert code == 0
        report = json.loads((out_dir / "report.json").read_text())
        fractions = {row["layer_pair"][1]: row["pruned_fraction"]
                     for row in report["layers"]}
        assert fractions[1] == 0.5
        assert fractions[2] == 0.0

    def test_rerun_byte_identical(self, toy_bundle, tmp_path, capsys):
        bundle, manifest = toy_bundle
        outs = []
        for name in ("a", "b"):
            out_dir = tmp_path / name
            code, _, _ = _run(capsys, "prune", "--bundle", str(bundle),
                              "--manifest", str(manifest), "--tau", "1.2",
                              "--delta", "1e9", "--groups", "4",
                              "--out", str(out_dir), "--seed", "7")
            assert code == 0
            outs.append(out_dir)
        for fname in ("masks.json", "report.json", "report.csv", "plan.json"):
            assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()

    def test_thread_count_invariance(self, toy_bundle, tmp_path, capsys):
        bundle, manifest = toy_bundle
        outs = []
        for name, threads in (("t1", "1"), ("t4", "4")):
            out_dir = tmp_path / name
            code, _, _ = _run(capsys, "prune", "--bundle", str(bundle),
                              "--manifest", str(manifest), "--tau", "1.2",
                              "--delta", "1e9", "--groups", "4",
                              "--threads", threads,
                              "--out", str(out_dir), "--seed", "8")
            assert code == 0
            outs.append(out_dir)
        for fname in ("masks.json", "report.json", "report.csv"):
            assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()

    def test_requires_plan_or_tau(self, toy_bundle, tmp_path, capsys):
        bundle, manifest = toy_bundle
        code, _, err = _run(capsys, "prune", "--bundle", str(bundle),
                            "--manifest", str(manifest),
                            "--out", str(tmp_path / "o"))
        assert code == 3
        assert "plan" in err

    def test_missing_bundle_exits_2(self, toy_bundle, tmp_path, capsys):
        _, manifest = toy_bundle
        code, _, _ = _run(capsys, "prune", "--bundle", str(tmp_path / "no.npz"),
                          "--manifest", str(manifest), "--tau", "0",
                          "--out", str(tmp_path / "o"))
        assert code == 2


class TestValidate:
    def test_mse_n_emits_seven_rows(self, tmp_path, capsys):
        out_dir = tmp_path / "val"
        code, _, _ = _run(capsys, "validate", "--experiment", "mse-n",
                          "--out", str(out_dir), "--trials", "2", "--seed", "9")
        assert code == 0
        lines = (out_dir / "mse_n.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 7
        assert (out_dir / "mse_n_sweep.csv").exists()

    def test_mse_d_emits_five_rows(self, tmp_path, capsys):
        out_dir = tmp_path / "val"
        code, _, _ = _run(capsys, "validate", "--experiment", "mse-d",
                          "--out", str(out_dir), "--trials", "1", "--seed", "10")
        assert code == 0
        lines = (out_dir / "mse_d.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 5

    def test_unknown_experiment_exits_1(self, tmp_path, capsys):
        code, _, err = _run(capsys, "validate", "--experiment", "nonsense",
                            "--out", str(tmp_path / "v"))
        assert code == 1
        assert "usage" in err

    def test_mse_n_deterministic(self, tmp_path, capsys):
        dirs = []
        for name in ("v1", "v2"):
            out_dir = tmp_path / name
            code, _, _ = _run(capsys, "validate", "--experiment", "mse-n",
                              "--out", str(out_dir), "--trials", "1",
                              "--seed", "11")
            assert code == 0
            dirs.append(out_dir)
        assert (dirs[0] / "mse_n.csv").read_bytes() == (dirs[1] / "mse_n.csv").read_bytes()


class TestUsage:
    def test_no_arguments_exits_1(self, capsys):
        assert main([]) == 1

    def test_unknown_command_exits_1(self, capsys):
        assert main(["frobnicate"]) == 1
