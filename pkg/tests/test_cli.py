import json
import subprocess
import sys

import pytest

from armor.cli import main


def run(tmp_path, *argv):
    code = main([*argv, "--out", str(tmp_path)])
    report = tmp_path / "report.json"
    return code, (json.loads(report.read_text()) if report.exists() else None)


def write(tmp_path, name, data):
    path = tmp_path / name
    path.write_text(json.dumps(data) if not isinstance(data, str) else data)
    return str(path)


class TestExitCodes:
    def test_usage_error(self):
        proc = subprocess.run([sys.executable, "-m", "armor", "no-such-command"],
                              capture_output=True, text=True)
        assert proc.returncode == 2

    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as info:
            main(["divergence", "--bogus"])
        assert info.value.code == 2

    def test_malformed_config(self, tmp_path):
        cfg = write(tmp_path, "bad.json", "{not json")
        assert main(["dro-solve", "--config", cfg, "--out", str(tmp_path)]) == 3

    def test_unknown_train_key(self, tmp_path):
        cfg = write(tmp_path, "t.json", {"data": {"kind": "moons", "n": 40}, "learning_rate": 1})
        assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == 3

    def test_missing_data_file(self, tmp_path):
        cfg = write(tmp_path, "t.json", {"data": {"kind": "csv", "train": str(tmp_path / "nope.csv"),
                                                  "test": str(tmp_path / "nope.csv")}})
        assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == 4

    def test_bad_checkpoint(self, tmp_path):
        model = tmp_path / "m.bin"
        model.write_bytes(b"garbage")
        cfg = write(tmp_path, "t.json", {"data": {"kind": "moons", "n": 40}})
        code = main(["attack-eval", "--model", str(model), "--config", cfg, "--out", str(tmp_path)])
        assert code == 4

    def test_negative_seed(self, tmp_path):
        assert main(["divergence", "--seed", "-1", "--out", str(tmp_path)]) == 2


class TestCommands:
    def test_dro_solve_certify_on_bundled_fixture(self, tmp_path, capsys):
        code, rep = run(tmp_path, "dro-solve", "--certify")
        assert code == 0
        res = rep["results"]
        assert res["dual"]["value"] == pytest.approx(0.1, abs=1e-6)
        assert res["certificate"]["gap"] <= 1e-3
        assert "0.1" in capsys.readouterr().out

    def test_divergence_equal_marginals(self, tmp_path):
        code, rep = run(tmp_path, "divergence")
        assert code == 0 and rep["results"]["value"] == pytest.approx(0.0, abs=1e-12)

    def test_divergence_from_config(self, tmp_path):
        cfg = write(tmp_path, "d.json", {"divergence": "KL", "cost": [[0, 1], [1, 0]],
                                         "P": [1, 0], "Q": [0.6, 0.4]})
        code, rep = run(tmp_path, "divergence", "--config", cfg)
        assert code == 0 and rep["results"]["value"] == pytest.approx(0.4, abs=1e-9)

    def test_verify_fixtures(self, tmp_path):
        code, rep = run(tmp_path, "verify", "--suite", "fixtures")
        assert code == 0 and rep["results"]["failed"] == []
        assert rep["seed"] == 0
        assert "wall_seconds" in json.loads((tmp_path / "timing.json").read_text())

    def test_scan_r_writes_sweep(self, tmp_path):
        code, _ = run(tmp_path, "scan-r")
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert code == 0 and lines[0].startswith("r,") and len(lines) == 6

    def test_train_then_attack(self, tmp_path):
        cfg = write(tmp_path, "t.json", {"data": {"kind": "moons", "n": 80, "n_train": 60},
                                         "epochs": 2, "hidden": [8], "M": 2, "epsilon": 0.1})
        code, rep = run(tmp_path, "train", "--config", cfg, "--seed", "1")
        assert code == 0
        assert (tmp_path / "model.bin").exists() and (tmp_path / "train_log.ndjson").exists()
        assert rep["config"]["epochs"] == 2 and rep["seed"] == 1
        out2 = tmp_path / "eval"
        code = main(["attack-eval", "--model", str(tmp_path / "model.bin"), "--config", cfg,
                     "--seed", "1", "--attack", "fgsm", "--out", str(out2)])
        assert code == 0
        assert (out2 / "metrics.csv").read_text().startswith("attack,accuracy")

    def test_threads_flag(self, tmp_path):
        code, _ = run(tmp_path, "divergence", "--threads", "1")
        assert code == 0

    def test_report_is_reproducible(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            assert main(["verify", "--suite", "fixtures", "--out", str(d)]) == 0
        assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
