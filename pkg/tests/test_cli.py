import json
import subprocess
import sys

import pytest

from cata.cli import run_cli


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run_cli(["gen-data", "--out", str(d / "data"), "--classes", "6", "--features", "5",
                    "--train-per-class", "40", "--test-per-class", "20", "--seed", "3"]) == 0
    assert run_cli(["train", "--data", str(d / "data" / "train.csv"), "--out", str(d / "m.txt"),
                    "--seed", "3"]) == 0
    return d


def unlearn_args(d, *extra):
    return ["unlearn", "--model", str(d / "m.txt"), "--data", str(d / "data" / "train.csv"),
            "--test", str(d / "data" / "test.csv"), "--aux", f"h1={d / 'data' / 'aux_1.csv'}",
            "--forget", "3,1,5", *extra]


class TestUsage:
    def test_no_arguments(self, capsys):
        assert run_cli([]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_subcommand(self, capsys):
        assert run_cli(["frobnicate"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_flag(self, workdir, capsys):
        assert run_cli(unlearn_args(workdir, "--bogus")) == 1

    def test_bad_method_names_valid_ones(self, capsys):
        assert run_cli(["unlearn", "--method", "bogus", "--model", "m", "--data", "d", "--forget", "1"]) == 1
        err = capsys.readouterr().err
        assert "cata, naive, ga, ft" in err

    def test_missing_required(self, capsys):
        assert run_cli(["unlearn", "--method", "cata"]) == 1

    def test_bad_schedule_is_usage(self, workdir, capsys):
        assert run_cli(["unlearn", "--model", str(workdir / "m.txt"), "--data",
                        str(workdir / "data" / "train.csv"), "--forget", "1,1"]) == 1

    @pytest.mark.parametrize("cmd", ["gen-data", "train", "unlearn", "regret", "report"])
    def test_help_lists_defaults(self, cmd, capsys):
        assert run_cli([cmd, "--help"]) == 0
        out = " ".join(capsys.readouterr().out.split())
        assert "--seed" in out and "--out" in out
        if cmd == "unlearn":
            assert "(default: 0.7)" in out and "(default: 0.3)" in out


class TestRuntimeErrors:
    def test_missing_model_file(self, workdir, tmp_path, capsys):
        args = unlearn_args(workdir, "--out", str(tmp_path / "r.json"))
        args[2] = str(tmp_path / "nope.txt")
        assert run_cli(args) == 2
        assert "not found" in capsys.readouterr().err
        assert not (tmp_path / "r.json").exists()

    def test_unknown_class(self, workdir, capsys):
        args = unlearn_args(workdir)
        args[args.index("3,1,5")] = "3,9"
        assert run_cli(args) == 2
        assert "unknown class 9" in capsys.readouterr().err

    def test_class_count_mismatch(self, workdir, tmp_path, capsys):
        bad = tmp_path / "big.csv"
        bad.write_text("f0,f1,f2,f3,f4,label\n0,0,0,0,0,8\n")
        args = unlearn_args(workdir)
        args[args.index("--test") + 1] = str(bad)
        assert run_cli(args) == 2

    def test_output_dir_missing(self, workdir, tmp_path):
        assert run_cli(unlearn_args(workdir, "--out", str(tmp_path / "no" / "r.json"))) == 2


class TestUnlearn:
    def test_writes_report(self, workdir, tmp_path):
        out = tmp_path / "r.json"
        assert run_cli(unlearn_args(workdir, "--method", "cata", "--out", str(out))) == 0
        doc = json.loads(out.read_text())
        assert doc["schema"] == "cata-report-v1" and len(doc["steps"]) == 4
        assert set(doc["steps"][0]["aux"]) == {"h1"}

    def test_byte_identical_reruns(self, workdir, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert run_cli(unlearn_args(workdir, "--out", str(a), "--seed", "9")) == 0
        assert run_cli(unlearn_args(workdir, "--out", str(b), "--seed", "9")) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_stdout_csv(self, workdir, capsysbinary):
        assert run_cli(unlearn_args(workdir, "--format", "csv", "--method", "ga")) == 0
        rows = capsysbinary.readouterr().out.decode().splitlines()
        assert rows[0] == "step,class_3,class_1,class_5,retain,all,aux_h1" and len(rows) == 5

    def test_resume(self, workdir, tmp_path):
        tv = tmp_path / "tv"
        full, res = tmp_path / "full.json", tmp_path / "res.json"
        assert run_cli(unlearn_args(workdir, "--out", str(full))) == 0
        assert run_cli(unlearn_args(workdir, "--taskvec-dir", str(tv), "--stop-after", "2",
                                    "--out", str(tmp_path / "part.json"))) == 0
        assert run_cli(unlearn_args(workdir, "--taskvec-dir", str(tv), "--out", str(res))) == 0
        assert full.read_bytes() == res.read_bytes()

    def test_config_file_and_override(self, workdir, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("# run settings\nlambda = 0.0\nmethod=naive\n")
        out = tmp_path / "r.json"
        assert run_cli(unlearn_args(workdir, "--config", str(cfg), "--out", str(out))) == 0
        doc = json.loads(out.read_text())
        assert doc["lambda"] == 0.0 and doc["method"] == "naive"
        assert run_cli(unlearn_args(workdir, "--config", str(cfg), "--lambda", "0.5", "--out", str(out))) == 0
        assert json.loads(out.read_text())["lambda"] == 0.5

    def test_config_unknown_key(self, workdir, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("colour=blue\n")
        assert run_cli(unlearn_args(workdir, "--config", str(cfg))) == 1


class TestOther:
    def test_report_to_csv(self, workdir, tmp_path, capsysbinary):
        out = tmp_path / "r.json"
        assert run_cli(unlearn_args(workdir, "--out", str(out))) == 0
        assert run_cli(["report", "--input", str(out), "--format", "csv"]) == 0
        assert capsysbinary.readouterr().out.decode().startswith("step,class_3")

    def test_report_round_trip_bytes(self, workdir, tmp_path):
        out, again = tmp_path / "r.json", tmp_path / "again.json"
        assert run_cli(unlearn_args(workdir, "--out", str(out))) == 0
        assert run_cli(["report", "--input", str(out), "--out", str(again)]) == 0
        assert out.read_bytes() == again.read_bytes()

    def test_regret_csv(self, tmp_path, capsys):
        out = tmp_path / "g.csv"
        assert run_cli(["regret", "--T", "32", "--family", "quadratic", "--mu", "0.2", "--delta", "0.1",
                        "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "t,loss,regret_cum,bound_cum,lemma1_lhs,lemma1_rhs" and len(lines) == 33
        assert "within" in capsys.readouterr().err

    def test_regret_invalid_is_usage(self):
        assert run_cli(["regret", "--T", "0"]) == 1

    def test_gen_data_needs_out(self):
        assert run_cli(["gen-data"]) == 1

    def test_console_entry_point(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "cata.cli", "regret", "--T", "4"],
                              capture_output=True, text=True)
        assert proc.returncode == 0 and proc.stdout.startswith("t,loss")
        proc = subprocess.run([sys.executable, "-m", "cata.cli"], capture_output=True, text=True)
        assert proc.returncode == 1 and proc.stdout == ""
