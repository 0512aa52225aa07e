import json
import pytest
from app.main import main
from app.services.dataset_service import read_dataset, read_ground_truth


@pytest.fixture
def dataset(tmp_path, config_file):
    out = tmp_path / "scene"
    assert main(["gen-scene", "--config", config_file, "--gaussians", "60", "--out", str(out)]) == 0
    return out


def test_unknown_flag_is_a_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        main(["gen-scene", "--bogus"])
    assert excinfo.value.code == 2


def test_gen_scene_writes_a_dataset(dataset):
    assert len(read_dataset(dataset)) == 16
    assert read_ground_truth(dataset).count == 60


def test_missing_output_fails_with_diagnostic(config_file, capsys):
    assert main(["gen-scene", "--config", config_file]) == 1
    assert capsys.readouterr().err.startswith("error:")


def test_missing_config_file_fails(tmp_path, capsys):
    assert main(["gen-scene", "--config", str(tmp_path / "absent.env"), "--out", str(tmp_path / "x")]) == 1
    assert "error:" in capsys.readouterr().err


def test_train_reconstruct_and_eval(tmp_path, config_file, dataset):
    run = tmp_path / "run"
    assert main(["train", "--config", config_file, "--phase", "1", "--steps", "1", "--scene", str(dataset), "--out", str(run)]) == 0
    checkpoint = run / "stage1.flxr"
    assert checkpoint.is_file() and (run / "metrics.log").is_file()

    novel = tmp_path / "novel"
    args = ["reconstruct", "--config", config_file, "--checkpoint", str(checkpoint), "--scene", str(dataset), "--views", "4", "--out", str(novel)]
    assert main(args) == 0
    assert (novel / "cloud.ply").is_file()
    assert len(list(novel.glob("novel_*.png"))) == 12

    report = tmp_path / "eval.json"
    assert main(["eval", "--config", config_file, "--checkpoint", str(checkpoint), "--scene", str(dataset), "--out", str(report)]) == 0
    rows = json.loads(report.read_text(encoding="utf-8"))
    assert [row["view_count"] for row in rows] == [1, 4, 8]


def test_finetune_needs_a_checkpoint(tmp_path, config_file, dataset, capsys):
    args = ["train", "--config", config_file, "--phase", "finetune", "--scene", str(dataset), "--out", str(tmp_path / "run")]
    assert main(args) == 1
    assert "error:" in capsys.readouterr().err


def test_simulate_writes_noise_catalog(tmp_path, config_file, dataset):
    out = tmp_path / "sim"
    assert main(["simulate", "--config", config_file, "--scene", str(dataset), "--out", str(out)]) == 0
    assert sorted(p.stem for p in out.glob("*.png")) == ["clean", "color", "opacity", "position", "scale"]


def test_stage1_refuses_a_later_phase_checkpoint(tmp_path, config_file, dataset, capsys):
    run = tmp_path / "run"
    base = ["--config", config_file, "--steps", "1", "--scene", str(dataset), "--out", str(run)]
    assert main(["train", "--phase", "2", "--init", "fresh", *base]) == 0
    checkpoint = run / "stage2.flxr"
    assert checkpoint.is_file()
    assert main(["train", "--phase", "1", "--checkpoint", str(checkpoint), *base]) == 1
    assert "stage-1 checkpoint" in capsys.readouterr().err
