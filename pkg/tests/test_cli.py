import json

import pytest

from splatctl.cli import EXIT_COLLAPSE, EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from splatctl.io import import_ply, load_dataset

TINY = ["--synth-k", "4", "--synth-views", "9", "--synth-resolution", "16"]


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    assert main(["synth", "--out", str(out)] + TINY) == EXIT_OK
    return out


def test_synth_writes_loadable_dataset(dataset_dir):
    ds = load_dataset(dataset_dir)
    assert len(ds) == 9
    assert len(import_ply(dataset_dir / "ground_truth.ply")) == 4


def test_train_and_eval(tmp_path, dataset_dir, capsys):
    run = tmp_path / "run"
    code = main(["train", "--dataset", str(dataset_dir), "--t-max", "20", "--out-dir", str(run)])
    assert code == EXIT_OK
    assert json.loads(capsys.readouterr().out)["final_count"] > 0
    assert main(["eval", "--dataset", str(dataset_dir), "--model", str(run / "final.ply")]) == EXIT_OK
    assert "psnr" in json.loads(capsys.readouterr().out)
    assert main(["diag", str(run), "--out", str(tmp_path / "diag")]) == EXIT_OK
    assert (tmp_path / "diag" / "size_evolution.csv").is_file()


def test_config_file_then_flags(tmp_path, dataset_dir, capsys):
    (tmp_path / "c.txt").write_text("t_max = 5\nlambda_alpha = 3e-5\n")
    code = main(["train", "--config", str(tmp_path / "c.txt"), "--dataset", str(dataset_dir), "--lambda-alpha", "4e-5"])
    assert code == EXIT_OK
    assert json.loads(capsys.readouterr().out)["lambda_alpha"] == 4e-5


def test_collapse_exit_code(dataset_dir):
    assert main(["train", "--dataset", str(dataset_dir), "--t-max", "300", "--lambda-alpha", "10"]) == EXIT_COLLAPSE


@pytest.mark.parametrize("argv", [
    ["train", "--lambda-w", "3"],
    ["train", "--seed", "x"],
    ["train", "--profile", "huge"],
    ["sweep", "--grid", "2e-5,1e-5", "--t-max", "1"],
])
def test_config_errors(argv):
    assert main(argv) == EXIT_CONFIG


def test_unknown_flag_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--no-such-key", "1"])
    assert exc.value.code == 2


@pytest.mark.parametrize("argv", [
    ["train", "--dataset", "/nonexistent/path"],
    ["eval", "--model", "/nonexistent.ply"] + TINY,
    ["diag", "/nonexistent"],
])
def test_data_errors(argv):
    assert main(argv) == EXIT_DATA


def test_export_ply(tmp_path, dataset_dir):
    assert main(["export-ply", "--out", str(tmp_path / "init.ply"), "--dataset", str(dataset_dir)]) == EXIT_OK
    assert len(import_ply(tmp_path / "init.ply")) == 4
    assert main(["export-ply", "--ground-truth", "--out", str(tmp_path / "gt.ply")] + TINY) == EXIT_OK
    assert len(import_ply(tmp_path / "gt.ply")) == 4


def test_sweep_command(tmp_path, dataset_dir, capsys):
    code = main(["sweep", "--grid", "1e-5,1e-4", "--dataset", str(dataset_dir), "--t-max", "10",
                 "--out-dir", str(tmp_path / "sw")])
    assert code == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "lambda_alpha,final_count,test_psnr,test_ssim,wall_s"
    assert len(out) == 4
