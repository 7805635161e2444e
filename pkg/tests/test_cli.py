from __future__ import annotations

import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import pytest

from decwatt.cli import main
from decwatt.dataset import load_dataset
from decwatt.features import read_feature_csv
from decwatt.models import TrainedModel
from decwatt.trace import generate_random_trace, serialize_trace


def _traces(directory: Path, n: int, corrupt: int | None = None) -> list:
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n):
        p = directory / f"clip{i}.trace"
        text = serialize_trace(generate_random_trace(i, 2))
        if i == corrupt:
            text += "CUI d=9\n"
        p.write_text(text, encoding="utf-8")
        paths.append(str(p))
    return paths


def _tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def sim_csv(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    out = d / "fs.csv"
    assert main(["simulate", "--model", "FS", "--seed", "3", "--rows", "120", "--out", str(out)]) == 0
    return out


def test_extract_minimal_trace(tmp_path):
    t = tmp_path / "min.trace"
    t.write_text("SB\n", encoding="utf-8")
    assert main(["extract", str(t), "--kind", "FS", "--out", str(tmp_path / "o")]) == 0
    text = (tmp_path / "o" / "min.csv").read_text(encoding="utf-8")
    assert "E_0,,1\n" in text


def test_extract_batch_and_corrupt_file(tmp_path, capsys):
    paths = _traces(tmp_path / "t", 4)
    assert main(["extract", *paths, "--out", str(tmp_path / "ok")]) == 0
    assert len(list((tmp_path / "ok").glob("*.csv"))) == 4
    paths = _traces(tmp_path / "bad", 4, corrupt=2)
    capsys.readouterr()
    assert main(["extract", *paths, "--out", str(tmp_path / "o2")]) == 2
    assert sorted(p.name for p in (tmp_path / "o2").glob("*.csv")) == ["clip0.csv", "clip1.csv", "clip3.csv"]
    err = capsys.readouterr().err
    assert "clip2.trace" in err and "line" in err


def test_simulate_row_count_and_truth(tmp_path):
    out = tmp_path / "d.csv"
    assert main(["simulate", "--model", "H2", "--seed", "1", "--rows", "25", "--out", str(out)]) == 0
    assert len(load_dataset(out)) == 25
    truth = TrainedModel.from_json((tmp_path / "d.truth.json").read_text(encoding="utf-8"))
    assert truth.model_id == "H2"


def test_fit_recovers_hidden_truth(sim_csv, tmp_path):
    out = tmp_path / "m.json"
    assert main(["fit", str(sim_csv), "--model", "FS", "--seed", "1", "--out", str(out)]) == 0
    doc = json.loads(out.read_text(encoding="utf-8"))
    truth = TrainedModel.from_json(sim_csv.with_suffix(".truth.json").read_text(encoding="utf-8"))
    fitted = TrainedModel.from_dict(doc)
    assert fitted.params == pytest.approx(truth.params, rel=1e-6)
    assert len(doc["provenance"]["dataset_digest"]) == 64
    assert doc["fit"]["rows"] == 120


def test_fit_time_model_without_time_column(sim_csv, tmp_path, capsys):
    rows = list(csv.DictReader(io.StringIO(sim_csv.read_text(encoding="utf-8"))))
    for r in rows:
        r["t_dec"] = ""
    stripped = tmp_path / "no_t.csv"
    with open(stripped, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    assert main(["fit", str(stripped), "--model", "T", "--out", str(tmp_path / "t.json")]) == 2
    assert "MissingVariables" in capsys.readouterr().err


def test_cv_single_cell_table(sim_csv, tmp_path, capsys):
    assert main(["cv", str(sim_csv), "--model", "FS", "--seed", "4", "--out", str(tmp_path / "cv")]) == 0
    out = capsys.readouterr().out
    assert "FS" in out and "%" in out
    rep = json.loads((tmp_path / "cv" / "cv_FS.json").read_text(encoding="utf-8"))
    assert rep["seed"] == 4 and rep["mean_abs_error"] < 1e-6


def test_cv_seeds_change_folds(sim_csv, tmp_path):
    for seed in ("1", "2"):
        main(["cv", str(sim_csv), "--model", "FS", "--seed", seed, "--out", str(tmp_path / seed)])
    a = json.loads((tmp_path / "1" / "cv_FS.json").read_text(encoding="utf-8"))["rows"]
    b = json.loads((tmp_path / "2" / "cv_FS.json").read_text(encoding="utf-8"))["rows"]
    assert [r["fold"] for r in a] != [r["fold"] for r in b]


def test_estimate_matches_library(sim_csv, tmp_path, capsys):
    model_path = tmp_path / "m.json"
    main(["fit", str(sim_csv), "--model", "FS", "--out", str(model_path)])
    paths = _traces(tmp_path / "t", 3)
    main(["extract", *paths, "--kind", "FS", "--out", str(tmp_path / "f")])
    csvs = sorted(str(p) for p in (tmp_path / "f").glob("*.csv"))
    capsys.readouterr()
    assert main(["estimate", str(model_path), *csvs]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3
    model = TrainedModel.from_json(model_path.read_text(encoding="utf-8"))
    for line, path in zip(lines, csvs):
        sid, mid, value = line.split("\t")
        with open(path, newline="", encoding="utf-8") as fh:
            expect = model.predict(None, read_feature_csv(fh))
        assert (sid, mid, value) == (Path(path).stem, "FS", f"{expect:.6g}")


def test_estimate_dataset_batch(sim_csv, tmp_path, capsys):
    model_path = tmp_path / "m.json"
    main(["fit", str(sim_csv), "--model", "H2", "--out", str(model_path)])
    capsys.readouterr()
    assert main(["estimate", str(model_path), "--dataset", str(sim_csv)]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 120


def test_estimate_kind_mismatch(tmp_path, capsys):
    fa_model = tmp_path / "fa.json"
    main(["simulate", "--model", "FA", "--seed", "2", "--rows", "5", "--out", str(tmp_path / "x.csv"),
          "--truth", str(fa_model)])
    paths = _traces(tmp_path / "t", 1)
    main(["extract", *paths, "--kind", "FS", "--out", str(tmp_path / "f")])
    assert main(["estimate", str(fa_model), str(tmp_path / "f" / "clip0.csv")]) == 2
    assert "DimensionMismatch" in capsys.readouterr().err


def test_report_command(sim_csv, tmp_path, capsys):
    main(["cv", str(sim_csv), "--model", "FS,H2", "--seed", "1", "--folds", "5", "--out", str(tmp_path / "cv")])
    capsys.readouterr()
    files = [str(tmp_path / "cv" / "cv_FS.json"), str(tmp_path / "cv" / "cv_H2.json")]
    assert main(["report", *files, "--system", "b", "--out", str(tmp_path / "r")]) == 0
    text = capsys.readouterr().out
    assert text.splitlines()[0].split() == ["system", "FS", "H2", "∅"]
    assert (tmp_path / "r" / "report.csv").read_text(encoding="utf-8").startswith("system,model,")


@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["simulate", "--out", "x.csv"],
    ["cv", "data.csv", "--model", "XX", "--seed", "1", "--out", "o"],
    ["fit", "data.csv", "--model", "FS"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == 1


def test_missing_input_is_data_error(tmp_path):
    assert main(["fit", str(tmp_path / "nope.csv"), "--model", "FS", "--out", str(tmp_path / "m.json")]) == 2


def test_config_supplies_defaults_but_flags_win(sim_csv, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# defaults\nseed = 5\nfolds = 4\nmodel = FS\n", encoding="utf-8")
    assert main(["--config", str(cfg), "cv", str(sim_csv), "--out", str(tmp_path / "a")]) == 0
    rep = json.loads((tmp_path / "a" / "cv_FS.json").read_text(encoding="utf-8"))
    assert rep["seed"] == 5 and rep["folds"] == 4
    assert main(["--config", str(cfg), "cv", str(sim_csv), "--seed", "9", "--out", str(tmp_path / "b")]) == 0
    rep = json.loads((tmp_path / "b" / "cv_FS.json").read_text(encoding="utf-8"))
    assert rep["seed"] == 9 and rep["folds"] == 4
    cfg.write_text("colour = blue\n", encoding="utf-8")
    assert main(["--config", str(cfg), "cv", str(sim_csv), "--out", str(tmp_path / "c")]) == 2


def _run_all(root: Path, traces: list) -> None:
    root.mkdir()
    assert main(["extract", *traces, "--kind", "FS", "--out", str(root / "feat")]) == 0
    assert main(["simulate", "--model", "FS", "--seed", "8", "--noise", "0.02", "--rows", "80",
                 "--out", str(root / "d.csv")]) == 0
    assert main(["fit", str(root / "d.csv"), "--model", "FS", "--seed", "8", "--out", str(root / "m.json")]) == 0
    assert main(["cv", str(root / "d.csv"), "--model", "FS,H3,PE", "--seed", "8", "--out", str(root / "cv")]) == 0
    assert main(["report", str(root / "cv" / "cv_FS.json"), "--out", str(root / "rep")]) == 0
    csvs = sorted(str(p) for p in (root / "feat").glob("*.csv"))
    assert main(["estimate", str(root / "m.json"), *csvs]) == 0


def test_every_subcommand_byte_identical(tmp_path, capsys):
    traces = _traces(tmp_path / "traces", 3)
    _run_all(tmp_path / "run1", traces)
    out1 = capsys.readouterr().out
    _run_all(tmp_path / "run2", traces)
    out2 = capsys.readouterr().out
    assert _tree(tmp_path / "run1") == _tree(tmp_path / "run2")
    assert out1 == out2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "decwatt", "simulate", "--seed", "1", "--rows", "3",
                           "--out", str(tmp_path / "d.csv")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "decwatt", "fit"], capture_output=True, text=True)
    assert proc.returncode == 1
