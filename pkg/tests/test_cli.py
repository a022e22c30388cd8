import json
import os

import numpy as np
import pytest

from popgcn.cli import dispatch, parse_config, ConfigValidationError
from popgcn.popgraph import load_graph


def run_cli(*argv):
    return dispatch(list(argv))


@pytest.fixture
def data_dir(tmp_path):
    out = tmp_path / "data"
    code = run_cli(
        "synth", "--out", str(out), "--seed", "3", "--subjects", "24",
        "--features", "6", "--scans-min", "1", "--scans-max", "2",
    )
    assert code == 0
    return out


def write_config(tmp_path, data_dir, extra=""):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(
        f"""
[experiment]
name = cli-test

[dataset]
features = {data_dir}/features.csv
phenotypes = {data_dir}/phenotypes.csv

[model]
kind = gcn
epochs = 8
hidden_width = 6
dropout = 0.0

[cv]
folds = 2
seeds = 0
{extra}
""",
        encoding="utf-8",
    )
    return cfg


class TestSynth:
    def test_byte_identical_outputs(self, tmp_path):
        for name in ("a", "b"):
            assert run_cli("synth", "--out", str(tmp_path / name), "--seed", "7",
                           "--subjects", "10", "--features", "4") == 0
        for fname in ("features.csv", "phenotypes.csv"):
            a = (tmp_path / "a" / fname).read_bytes()
            b = (tmp_path / "b" / fname).read_bytes()
            assert a == b

    def test_different_seed_differs(self, tmp_path):
        run_cli("synth", "--out", str(tmp_path / "a"), "--seed", "1", "--subjects", "10")
        run_cli("synth", "--out", str(tmp_path / "b"), "--seed", "2", "--subjects", "10")
        assert (tmp_path / "a" / "features.csv").read_bytes() != (
            tmp_path / "b" / "features.csv"
        ).read_bytes()


class TestGraphCommand:
    def test_writes_edge_list_with_provenance(self, tmp_path, data_dir):
        out = tmp_path / "graph.csv"
        code = run_cli(
            "graph", "--features", str(data_dir / "features.csv"),
            "--phenotypes", str(data_dir / "phenotypes.csv"),
            "--out", str(out), "--strategy", "phenotypic", "--measures", "SEX,SITE",
        )
        assert code == 0
        text = out.read_text().splitlines()
        assert text[0].startswith("# provenance:")
        g = load_graph(out)
        assert g.n_nodes > 0 and g.n_edges > 0

    def test_missing_input_file(self, tmp_path):
        code = run_cli(
            "graph", "--features", str(tmp_path / "nope.csv"),
            "--phenotypes", str(tmp_path / "nope2.csv"), "--out", str(tmp_path / "g.csv"),
        )
        assert code == 1


class TestRunCommand:
    def test_run_writes_all_outputs(self, tmp_path, data_dir, capsys):
        cfg = write_config(tmp_path, data_dir)
        out = tmp_path / "out"
        assert run_cli("run", "--config", str(cfg), "--out", str(out)) == 0
        for fname in ("report.json", "results.csv", "summary.txt", "config_echo.cfg", "records.jsonl"):
            assert (out / fname).exists(), fname
        assert "seed-averaged" in capsys.readouterr().out
        report = json.loads((out / "report.json").read_text())
        assert report["name"] == "cli-test"
        lines = (out / "records.jsonl").read_text().strip().splitlines()
        assert len(lines) == len(report["records"])

    def test_byte_identical_reruns(self, tmp_path, data_dir):
        cfg = write_config(tmp_path, data_dir)
        for name in ("o1", "o2"):
            assert run_cli("run", "--config", str(cfg), "--out", str(tmp_path / name)) == 0
        for fname in ("report.json", "results.csv", "summary.txt", "config_echo.cfg"):
            assert (tmp_path / "o1" / fname).read_bytes() == (
                tmp_path / "o2" / fname
            ).read_bytes(), fname

    def test_missing_features_file_exits_1_naming_path(self, tmp_path, capsys):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text(
            "[dataset]\nfeatures = /nonexistent/f.csv\nphenotypes = /nonexistent/p.csv\n",
            encoding="utf-8",
        )
        code = run_cli("run", "--config", str(cfg), "--out", str(tmp_path / "out"))
        assert code == 1
        assert "/nonexistent/f.csv" in capsys.readouterr().err

    def test_unknown_config_key_exits_1_with_field_path(self, tmp_path, data_dir, capsys):
        cfg = write_config(tmp_path, data_dir, extra="\n[selector]\nbogus_key = 3\n")
        code = run_cli("run", "--config", str(cfg), "--out", str(tmp_path / "out"))
        assert code == 1
        assert "selector.bogus_key" in capsys.readouterr().err

    def test_set_override_applies(self, tmp_path, data_dir):
        cfg = write_config(tmp_path, data_dir)
        out = tmp_path / "out"
        assert run_cli(
            "run", "--config", str(cfg), "--out", str(out), "--set", "model.epochs=3"
        ) == 0
        echo = (out / "config_echo.cfg").read_text()
        assert "epochs = 3" in echo

    def test_missing_config_file(self, tmp_path, capsys):
        code = run_cli("run", "--config", str(tmp_path / "none.cfg"), "--out", str(tmp_path / "o"))
        assert code == 1
        assert "none.cfg" in capsys.readouterr().err

    def test_synthetic_dataset_inline(self, tmp_path):
        cfg = tmp_path / "syn.cfg"
        cfg.write_text(
            """
[dataset]
synthetic = true
subjects = 20
n_features = 5
data_seed = 4

[model]
epochs = 5
dropout = 0.0

[cv]
folds = 2
seeds = 0
""",
            encoding="utf-8",
        )
        assert run_cli("run", "--config", str(cfg), "--out", str(tmp_path / "out")) == 0


class TestSweepCommand:
    def test_five_value_sweep_produces_five_report_rows(self, tmp_path, data_dir):
        cfg = write_config(tmp_path, data_dir)
        out = tmp_path / "sweep"
        code = run_cli(
            "sweep", "--config", str(cfg), "--out", str(out),
            "--param", "model.cheb_order", "--values", "1,2,3,4,5",
        )
        assert code == 0
        sub = sorted(p.name for p in out.iterdir() if p.is_dir())
        assert len(sub) == 5
        lines = (out / "results.csv").read_text().strip().splitlines()
        assert lines[0] == "experiment,fold,seed,accuracy,auc"
        # 5 sweep points x 2 folds x 1 seed.
        assert len(lines) == 1 + 5 * 2
        names = {line.split(",")[0] for line in lines[1:]}
        assert names == {f"cli-test[model.cheb_order={k}]" for k in range(1, 6)}

    def test_bad_param_format(self, tmp_path, data_dir, capsys):
        cfg = write_config(tmp_path, data_dir)
        code = run_cli("sweep", "--config", str(cfg), "--out", str(tmp_path / "s"),
                       "--param", "nodots", "--values", "1,2")
        assert code == 1


class TestReportCommand:
    def test_print_and_csv(self, tmp_path, data_dir, capsys):
        cfg = write_config(tmp_path, data_dir)
        out = tmp_path / "out"
        run_cli("run", "--config", str(cfg), "--out", str(out))
        capsys.readouterr()
        csv_out = tmp_path / "plot.csv"
        code = run_cli("report", "--report", str(out / "report.json"), "--csv", str(csv_out))
        assert code == 0
        assert "seed-averaged" in capsys.readouterr().out
        assert csv_out.read_text() == (out / "results.csv").read_text()


class TestUsageErrors:
    def test_unknown_subcommand_exits_2(self, capsys):
        assert run_cli("frobnicate") == 2
        capsys.readouterr()

    def test_unknown_flag_exits_2(self, capsys):
        assert run_cli("synth", "--bogus", "x") == 2
        capsys.readouterr()

    def test_no_arguments_exits_2(self, capsys):
        assert run_cli() == 2
        capsys.readouterr()


class TestParseConfig:
    def test_unknown_section_rejected(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("[mystery]\nx = 1\n", encoding="utf-8")
        with pytest.raises(ConfigValidationError, match="mystery"):
            parse_config(str(cfg))

    def test_type_error_names_field(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("[cv]\nfolds = soon\n", encoding="utf-8")
        with pytest.raises(ConfigValidationError, match="cv.folds"):
            parse_config(str(cfg))

    def test_override_parsing(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("[cv]\nfolds = 5\n", encoding="utf-8")
        config = parse_config(str(cfg), ["cv.folds=7", "model.epochs=3"])
        assert config["cv"]["folds"] == 7
        assert config["model"]["epochs"] == 3
