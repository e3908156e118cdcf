import csv

import pytest

from xdistill.cli import main
from xdistill.data import CONFIG_KEYS
from xdistill.models import load_model

TINY = ["--data.dataset", "synthetic", "--data.limit", "120", "--set", "train.epochs=1",
        "--set", "cae.epochs=1", "--set", "explain.limit=4", "--set", "explain.n_samples=60",
        "--set", "eval.samples=3", "--set", "occlusion.samples=2"]


def run(tmp_path, *argv):
    return main(list(argv) + ["--out", str(tmp_path)] + TINY)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run(out, "reproduce", "--table", "2") == 0
    return out


def test_help_documents_every_key(capsys):
    assert main(["--help"]) == 0
    text = capsys.readouterr().out
    for key in CONFIG_KEYS:
        assert key in text
    assert "default 0.9" in text


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main([]) == 2
    assert main(["fly"]) == 2
    assert main(["train-student", "--out", str(tmp_path)]) == 2
    assert main(["train-teacher", "--bogus.key", "1", "--out", str(tmp_path)]) == 2
    capsys.readouterr()


def test_xdistill_without_cae_fails_fast(tmp_path, capsys):
    assert run(tmp_path, "train-student", "--mode", "xdistill") == 2
    err = capsys.readouterr().err
    assert "CAE" in err and len(err.strip().splitlines()) == 1
    assert not (tmp_path / "student_xdistill.xmdl").exists()
    assert (tmp_path / "manifest.txt").exists()


def test_config_errors_exit_3(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("train.alpha = 0.9\nslic.k = 25\n")
    assert main(["train-teacher", "--config", str(cfg), "--out", str(tmp_path)]) == 3
    assert "slic.k" in capsys.readouterr().err
    assert main(["train-teacher", "--set", "train.tau=0", "--out", str(tmp_path)]) == 3


def test_runtime_errors_exit_1(tmp_path, capsys):
    assert main(["train-teacher", "--out", str(tmp_path), "--data.root", str(tmp_path / "none")]) == 1
    assert "not found" in capsys.readouterr().err


def test_reproduce_table_2_rows(pipeline):
    with open(pipeline / "report_accuracy.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["model"] for r in rows] == ["teacher", "baseline", "kd", "xdistill"]
    assert all(r["metric"] == "accuracy" for r in rows)
    assert load_model(pipeline / "cae.xmdl").frozen


def test_manifest_written_first_and_complete(pipeline):
    lines = (pipeline / "manifest.txt").read_text().splitlines()
    assert lines[0] == "verb = reproduce"
    keys = {line.split(" = ")[0] for line in lines}
    assert set(CONFIG_KEYS) <= keys
    assert "dataset.train.checksum" in keys and lines[-1] == "status = ok"
    assert any(line.startswith("artifact.teacher.xmdl") for line in lines)


def test_explain_is_byte_identical(pipeline, tmp_path):
    teacher = str(pipeline / "teacher.xmdl")
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(out, "explain", "--method", "shap", "--seed", "7", "--teacher", teacher) == 0
    assert (a / "explanations_shap.xdt").read_bytes() == (b / "explanations_shap.xdt").read_bytes()


@pytest.mark.parametrize("method", ["lime", "gradcam", "occlusion"])
def test_explain_other_methods(pipeline, tmp_path, method):
    assert run(tmp_path, "explain", "--method", method, "--teacher", str(pipeline / "teacher.xmdl")) == 0
    assert (tmp_path / f"explanations_{method}.xdt").exists()


def test_stagewise_commands(pipeline, tmp_path):
    teacher = str(pipeline / "teacher.xmdl")
    assert run(tmp_path, "build-repr", "--teacher", teacher) == 0
    assert run(tmp_path, "train-cae") == 0
    assert run(tmp_path, "train-student", "--mode", "xdistill", "--teacher", teacher,
               "--cae", str(tmp_path / "cae.xmdl")) == 0
    assert run(tmp_path, "evaluate", "--teacher", teacher, "--method", "gradcam") == 0
    for name in ("report_accuracy.csv", "report_mse.csv", "report_overlap.csv"):
        assert (tmp_path / name).exists()
    # the teacher as its own student guarantees both-correct images at this tiny scale
    assert run(tmp_path, "occlusion", "--teacher", teacher, "--student", teacher) == 0
    assert list((tmp_path / "heatmaps").glob("*.ppm"))
