import json
import os

import numpy as np
import pytest

from rbmtomo import Rbm, load_dataset, save_checkpoint
from rbmtomo.cli import _required_measurements, main


def run(capsys, *args):
    rc = main([str(a) for a in args])
    captured = capsys.readouterr()
    return rc, captured.out, captured.err


class TestGenerate:
    def test_ghz_dataset_layout(self, tmp_path, capsys):
        rc, out, _ = run(capsys, "generate", "--state", "ghz", "--n", 10,
                         "--count", 10_000, "--seed", 1, "--out", tmp_path)
        assert rc == 0
        path = out.strip()
        assert path.endswith("ghz_n10_10000.txt")
        lines = [l for l in open(path) if not l.startswith("#")]
        assert len(lines) == 10_000
        assert set("".join(l.strip() for l in lines)) == {"0", "1"}
        assert {l.strip() for l in lines} == {"0" * 10, "1" * 10}

    def test_reruns_are_byte_identical(self, tmp_path, capsys):
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        run(capsys, "generate", "--state", "w", "--n", 5, "--count", 500,
            "--seed", 7, "--out", a_dir)
        run(capsys, "generate", "--state", "w", "--n", 5, "--count", 500,
            "--seed", 7, "--out", b_dir)
        a = (a_dir / "w_n5_500.txt").read_bytes()
        b = (b_dir / "w_n5_500.txt").read_bytes()
        assert a == b

    def test_count_zero_writes_header_only(self, tmp_path, capsys):
        rc, out, _ = run(capsys, "generate", "--state", "ghz", "--n", 3,
                         "--count", 0, "--seed", 1, "--out", tmp_path,
                         "--set", "filename=empty.txt")
        assert rc == 0
        data = load_dataset(tmp_path / "empty.txt")
        assert data.total_count == 0 and data.n_qubits == 3

    def test_depolarized_needs_p(self, tmp_path, capsys):
        rc, _, err = run(capsys, "generate", "--state", "depolarized_w",
                         "--n", 4, "--count", 10, "--seed", 1,
                         "--out", tmp_path)
        assert rc == 2 and "needs a noise level p" in err

    def test_missing_seed(self, tmp_path, capsys):
        rc, _, err = run(capsys, "generate", "--state", "ghz", "--n", 3,
                         "--count", 5, "--out", tmp_path)
        assert rc == 2 and "seed is required" in err

    def test_capacity_exit_code(self, tmp_path, capsys):
        rc, _, err = run(capsys, "generate", "--state", "toric", "--L", 4,
                         "--count", 5, "--seed", 1, "--out", tmp_path)
        assert rc == 3 and "capacity error" in err


class TestTrain:
    def test_state_spec_run_outputs(self, tmp_path, capsys):
        rc, out, _ = run(capsys, "train", "--state", "w", "--n", 3,
                         "--count", 300, "--seed", 5, "--out", tmp_path,
                         "--set", "train.n_max=300",
                         "--set", "train.eta0=0.2",
                         "--set", "train.eval_every=100")
        assert rc == 0
        assert "final fidelity" in out
        trace = (tmp_path / "trace.csv").read_text().splitlines()
        assert trace[0] == "iteration,nll,fidelity,kl,lr,mode_update"
        assert len(trace) == 4
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert 0.0 <= summary["final"]["fidelity"] <= 1.0
        assert summary["final"]["iterations"] == 300
        assert "wall_time_s" in summary
        assert (tmp_path / "checkpoint_final.json").exists()

    def test_dataset_run_has_no_fidelity(self, tmp_path, capsys):
        run(capsys, "generate", "--state", "w", "--n", 3, "--count", 200,
            "--seed", 2, "--out", tmp_path)
        rc, out, _ = run(capsys, "train", "--dataset",
                         tmp_path / "w_n3_200.txt", "--seed", 2,
                         "--out", tmp_path / "fit",
                         "--set", "train.n_max=100")
        assert rc == 0
        assert "final nll" in out and "fidelity" not in out
        summary = json.loads((tmp_path / "fit" / "summary.json").read_text())
        assert summary["final"]["fidelity"] is None
        assert np.isfinite(summary["final"]["nll"])

    def test_dataset_and_state_conflict(self, tmp_path, capsys):
        rc, _, err = run(capsys, "train", "--state", "w", "--n", 3,
                         "--dataset", "x.txt", "--count", 10, "--seed", 1,
                         "--out", tmp_path)
        assert rc == 2 and "not both" in err

    def test_unknown_config_key(self, tmp_path, capsys):
        rc, _, err = run(capsys, "train", "--state", "w", "--n", 3,
                         "--count", 10, "--seed", 1, "--out", tmp_path,
                         "--set", "bogus_key=1")
        assert rc == 2 and "unknown config key(s) for train: bogus_key" in err

    def test_unknown_train_key(self, tmp_path, capsys):
        rc, _, err = run(capsys, "train", "--state", "w", "--n", 3,
                         "--count", 10, "--seed", 1, "--out", tmp_path,
                         "--set", "train.learning_rate=0.1")
        assert rc == 2 and "unknown train key(s): learning_rate" in err

    def test_mode_schedule_via_dotted_set(self, tmp_path, capsys):
        rc, _, _ = run(capsys, "train", "--state", "w", "--n", 3,
                       "--count", 200, "--seed", 4, "--out", tmp_path,
                       "--set", "train.n_max=200",
                       "--set", "train.mode_schedule.p_max=1.0",
                       "--set", "train.mode_schedule.beta=0.0")
        assert rc == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["final"]["mode_updates"] > 50

    def test_config_file_with_flag_override(self, tmp_path, capsys):
        cfg = {"state": "ghz", "n": 3, "count": 50,
               "train": {"n_max": 50, "eval_every": 50}}
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        rc, _, _ = run(capsys, "train", "--config", cfg_path, "--seed", 9,
                       "--out", tmp_path / "run", "--count", 80)
        assert rc == 0
        data_rows = json.loads(
            (tmp_path / "run" / "summary.json").read_text())["config"]
        assert data_rows["count"] == 80  # the flag wins over the file

    def test_invalid_config_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        rc, _, err = run(capsys, "train", "--config", bad, "--seed", 1,
                         "--out", tmp_path)
        assert rc == 2 and "not valid JSON" in err

    def test_missing_config_file(self, tmp_path, capsys):
        rc, _, err = run(capsys, "train", "--config", tmp_path / "nope.json",
                         "--seed", 1, "--out", tmp_path)
        assert rc == 2 and "not found" in err

    def test_malformed_set_item(self, tmp_path, capsys):
        rc, _, err = run(capsys, "train", "--state", "w", "--n", 3,
                         "--count", 10, "--seed", 1, "--out", tmp_path,
                         "--set", "train.n_max")
        assert rc == 2 and "key=value" in err


class TestSweep:
    def test_single_cell_reduces_to_train(self, tmp_path, capsys):
        train_args = ["--set", "train.n_max=200", "--set", "train.eta0=0.2",
                      "--set", "train.eval_every=100"]
        rc, _, _ = run(capsys, "train", "--state", "w", "--n", 3,
                       "--count", 200, "--seed", 11,
                       "--out", tmp_path / "t", *train_args)
        assert rc == 0
        rc, _, _ = run(capsys, "sweep", "--state", "w", "--n", 3,
                       "--count", 200, "--seed", 11,
                       "--out", tmp_path / "s", *train_args)
        assert rc == 0
        t_sum = json.loads((tmp_path / "t" / "summary.json").read_text())
        sweep_rows = (tmp_path / "s" / "sweep.csv").read_text().splitlines()
        header = sweep_rows[0].split(",")
        cell = dict(zip(header, sweep_rows[1].split(",")))
        # cell values repeat the train run exactly, modulo the CSV's
        # 10-significant-digit formatting
        assert float(cell["fidelity_median"]) == pytest.approx(
            t_sum["final"]["fidelity"], rel=1e-9)
        assert float(cell["nll_median"]) == pytest.approx(
            t_sum["final"]["nll"], rel=1e-9)

    def test_grid_outputs_and_required_measurements(self, tmp_path, capsys):
        rc, _, _ = run(capsys, "sweep", "--state", "w", "--n", 3,
                       "--seed", 3, "--out", tmp_path,
                       "--set", "count_grid=[60,240]",
                       "--set", 'arm_grid=["cd","mode"]',
                       "--set", "reps=2",
                       "--set", "targets=[0.2]",
                       "--set", "train.n_max=150",
                       "--set", "train.eta0=0.2")
        assert rc == 0
        cells = sorted(os.listdir(tmp_path / "cells"))
        assert len(cells) == 8  # 2 counts x 2 arms x 2 reps
        rows = (tmp_path / "sweep.csv").read_text().splitlines()
        assert len(rows) == 5
        assert rows[0].startswith("state,n,count,arm,p,reps,")
        req = (tmp_path / "required_measurements.csv").read_text().splitlines()
        assert req[0] == "state,n,arm,target,required_measurements"
        assert len(req) == 3  # one row per arm

    def test_worker_count_does_not_change_results(self, tmp_path, capsys):
        common = ["sweep", "--state", "ghz", "--n", 3, "--seed", 6,
                  "--set", "count_grid=[50,100]", "--set", "reps=2",
                  "--set", "train.n_max=80"]
        rc, _, _ = run(capsys, *common, "--out", tmp_path / "w1",
                       "--workers", 1)
        assert rc == 0
        rc, _, _ = run(capsys, *common, "--out", tmp_path / "w2",
                       "--workers", 2)
        assert rc == 0
        a = (tmp_path / "w1" / "sweep.csv").read_text()
        b = (tmp_path / "w2" / "sweep.csv").read_text()
        assert a == b

    def test_bad_arm_rejected(self, tmp_path, capsys):
        rc, _, err = run(capsys, "sweep", "--state", "w", "--n", 3,
                         "--count", 50, "--seed", 1, "--out", tmp_path,
                         "--set", 'arm_grid=["sa"]')
        assert rc == 2 and "unknown arm" in err

    def test_needs_count(self, tmp_path, capsys):
        rc, _, err = run(capsys, "sweep", "--state", "w", "--n", 3,
                         "--seed", 1, "--out", tmp_path)
        assert rc == 2 and "count" in err


class TestRequiredMeasurements:
    def test_log_interpolation(self):
        counts = np.array([100.0, 1000.0])
        best = np.array([0.5, 0.99])
        need = _required_measurements(counts, best, 0.9)
        frac = (0.9 - 0.5) / (0.99 - 0.5)
        assert need == pytest.approx(float(np.exp(
            np.log(100) + frac * (np.log(1000) - np.log(100)))))

    def test_envelope_is_running_max(self):
        counts = np.array([10.0, 100.0, 1000.0])
        best = np.array([0.8, 0.6, 0.95])  # dip must not break the envelope
        need = _required_measurements(counts, best, 0.9)
        assert 100.0 < need < 1000.0

    def test_already_reached_and_unreachable(self):
        counts = np.array([10.0, 100.0])
        assert _required_measurements(counts, np.array([0.95, 0.99]),
                                      0.9) == 10.0
        assert _required_measurements(counts, np.array([0.5, 0.6]),
                                      0.9) is None


class TestDiagnose:
    def make_checkpoint(self, tmp_path, a=None, n=3):
        rbm = Rbm(np.full(n, 2.0) if a is None else a, np.zeros(2),
                  np.zeros((n, 2)))
        path = tmp_path / "model.json"
        save_checkpoint(rbm, path)
        return path

    def test_outputs(self, tmp_path, capsys):
        ckpt = self.make_checkpoint(tmp_path)
        rc, out, _ = run(capsys, "diagnose", "--checkpoint", ckpt,
                         "--seed", 3, "--out", tmp_path / "d",
                         "--set", "k_list=[1,2]",
                         "--set", "repetitions=200")
        assert rc == 0
        k1 = (tmp_path / "d" / "transition_k1.csv").read_text().splitlines()
        assert k1[0] == "4,2,1,other"  # one-hot starts on 3 qubits
        assert len(k1) == 4
        assert (tmp_path / "d" / "transition_k2.csv").exists()
        doc = json.loads((tmp_path / "d" / "state_graph.json").read_text())
        assert "vertices" in doc and "edges" in doc
        assert "digraph" in (tmp_path / "d" / "state_graph.dot").read_text()

    def test_explicit_states(self, tmp_path, capsys):
        ckpt = self.make_checkpoint(tmp_path)
        rc, _, _ = run(capsys, "diagnose", "--checkpoint", ckpt,
                       "--seed", 3, "--out", tmp_path / "d",
                       "--set", 'states=["101","010"]',
                       "--set", "k_list=[1]", "--set", "repetitions=50")
        assert rc == 0
        k1 = (tmp_path / "d" / "transition_k1.csv").read_text().splitlines()
        assert k1[0] == "5,2,other"

    def test_missing_checkpoint(self, tmp_path, capsys):
        rc, _, err = run(capsys, "diagnose", "--checkpoint",
                         tmp_path / "no.json", "--seed", 1,
                         "--out", tmp_path)
        assert rc == 2 and "not found" in err


class TestEval:
    def zero_checkpoint(self, tmp_path, n=3):
        path = tmp_path / "zero.json"
        save_checkpoint(Rbm(np.zeros(n), np.zeros(n), np.zeros((n, n))), path)
        return path

    def test_state_metrics_hand_values(self, tmp_path, capsys):
        ckpt = self.zero_checkpoint(tmp_path)
        rc, out, _ = run(capsys, "eval", "--checkpoint", ckpt, "--state",
                         "ghz", "--n", 3, "--seed", 1, "--out", tmp_path)
        assert rc == 0
        doc = json.loads(out)
        assert doc["fidelity"] == pytest.approx(0.25)
        assert doc["kl"] == pytest.approx(2 * np.log(2))
        disk = json.loads((tmp_path / "eval.json").read_text())
        assert disk["fidelity"] == doc["fidelity"]

    def test_dataset_nll(self, tmp_path, capsys):
        ckpt = self.zero_checkpoint(tmp_path)
        run(capsys, "generate", "--state", "ghz", "--n", 3, "--count", 40,
            "--seed", 2, "--out", tmp_path)
        rc, out, _ = run(capsys, "eval", "--checkpoint", ckpt, "--dataset",
                         tmp_path / "ghz_n3_40.txt", "--seed", 1,
                         "--out", tmp_path)
        assert rc == 0
        assert json.loads(out)["nll"] == pytest.approx(3 * np.log(2))

    def test_needs_state_or_dataset(self, tmp_path, capsys):
        ckpt = self.zero_checkpoint(tmp_path)
        rc, _, err = run(capsys, "eval", "--checkpoint", ckpt, "--seed", 1,
                         "--out", tmp_path)
        assert rc == 2 and "state spec or a dataset" in err

    def test_non_finite_checkpoint_exit_code(self, tmp_path, capsys):
        path = tmp_path / "inf.json"
        path.write_text('{"n": 2, "m": 2, "a": [Infinity, 0.0],'
                        ' "b": [0.0, 0.0],'
                        ' "W": [[0.0, 0.0], [0.0, 0.0]]}')
        rc, _, err = run(capsys, "eval", "--checkpoint", path, "--state",
                         "ghz", "--n", 2, "--seed", 1, "--out", tmp_path)
        assert rc == 4 and "numerical failure" in err

    def test_dimension_mismatch_is_config_error(self, tmp_path, capsys):
        ckpt = self.zero_checkpoint(tmp_path, n=3)
        rc, _, _ = run(capsys, "eval", "--checkpoint", ckpt, "--state",
                       "ghz", "--n", 4, "--seed", 1, "--out", tmp_path)
        assert rc == 2
