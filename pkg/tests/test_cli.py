import json

import numpy as np
import pytest
from PIL import Image

from attncut import trainer
from attncut.cli import code_hash, main
from attncut.data_io import make_toy_images

TINY_FLAGS = [
    "--image-size", "32", "--k", "8",
    "--set", "base_channels=4", "--set", "n_residual_blocks=6",
    "--set", "disc_channels=4", "--set", "mlp_dim=16",
]


def write_pngs(folder, arrays):
    folder.mkdir(parents=True, exist_ok=True)
    for i, a in enumerate(arrays):
        Image.fromarray(a).save(folder / f"img_{i:02d}.png")
    return folder


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    run = tmp_path_factory.mktemp("run")
    code = main(["train", "--toy", "--toy-size", "4", "--run-dir", str(run), *TINY_FLAGS])
    assert code == 0
    return run


def test_train_writes_run_layout(tiny_run):
    assert (tiny_run / "losses.csv").is_file()
    assert sorted(p.name for p in (tiny_run / "checkpoints").iterdir()) == ["step_000000.pt", "step_000004.pt"]
    manifest = json.loads((tiny_run / "manifest.json").read_text())
    assert manifest["code_hash"] == code_hash()
    assert manifest["config"]["image_size"] == 32 and manifest["finished"]
    rows = trainer.read_loss_csv(tiny_run / "losses.csv")
    assert [r["step"] for r in rows] == [1, 2, 3, 4]
    metric_rows = (tiny_run / "metrics.csv").read_text().splitlines()
    assert metric_rows[0] == "step,fid,is_mean,is_std,swd"
    assert [r.split(",")[0] for r in metric_rows[1:]] == ["0", "4"]


def test_translate_folder(tiny_run, tmp_path, capsys):
    src = write_pngs(tmp_path / "in", make_toy_images(4, 32, 5, "x"))
    ckpt = tiny_run / "checkpoints" / "step_000004.pt"
    assert main(["translate", str(ckpt), str(src), str(tmp_path / "a")]) == 0
    assert main(["translate", str(ckpt), str(src), str(tmp_path / "b")]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == [f"img_{i:02d}.png" for i in range(4)]
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
        assert Image.open(tmp_path / "a" / n).size == (32, 32)


def test_translate_odd_size(tiny_run, tmp_path):
    src = write_pngs(tmp_path / "in", [np.random.default_rng(0).integers(0, 256, (63, 63, 3), dtype=np.uint8)])
    assert main(["translate", str(tiny_run / "checkpoints" / "step_000004.pt"), str(src), str(tmp_path / "o")]) == 0
    assert Image.open(tmp_path / "o" / "img_00.png").size == (63, 63)


def test_translate_bad_checkpoint(tmp_path, capsys):
    src = write_pngs(tmp_path / "in", make_toy_images(1, 32, 0, "x"))
    assert main(["translate", str(tmp_path / "nope.pt"), str(src), str(tmp_path / "o")]) == 1
    assert "nope.pt" in capsys.readouterr().err


def test_evaluate_identical_dirs(tmp_path, capsys):
    imgs = make_toy_images(6, 32, 1, "x")
    a, b = write_pngs(tmp_path / "a", imgs), write_pngs(tmp_path / "b", imgs)
    out = tmp_path / "report.json"
    assert main(["evaluate", str(a), str(b), "--output", str(out), "--csv", str(tmp_path / "m.csv")]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed == json.loads(out.read_text())
    assert set(printed) == {"fid", "is_mean", "is_std", "swd", "counts", "embedder", "seed"}
    assert printed["fid"] == pytest.approx(0.0, abs=1e-6) and printed["swd"] == 0.0
    first = out.read_text()
    assert main(["evaluate", str(a), str(b), "--output", str(out), "--csv", str(tmp_path / "m.csv")]) == 0
    assert out.read_text() == first
    assert len((tmp_path / "m.csv").read_text().splitlines()) == 3


def test_evaluate_needs_two_images(tmp_path, capsys):
    imgs = make_toy_images(2, 32, 1, "x")
    a, b = write_pngs(tmp_path / "a", imgs[:1]), write_pngs(tmp_path / "b", imgs)
    assert main(["evaluate", str(a), str(b), "--output", str(tmp_path / "r.json")]) == 1
    assert "at least 2" in capsys.readouterr().err


def test_plot(tiny_run, tmp_path):
    assert main(["plot", str(tiny_run)]) == 0
    plots = sorted(p.name for p in (tiny_run / "plots").iterdir())
    loss_plots = [p for p in plots if not p.startswith("metric_")]
    assert loss_plots == sorted(f"{c}.png" for c in trainer.CSV_COLUMNS[1:])
    assert {"metric_fid.png", "metric_swd.png"} <= set(plots)
    before = {p: (tiny_run / "plots" / p).stat().st_size for p in plots}
    assert main(["plot", str(tiny_run)]) == 0
    assert sorted(p.name for p in (tiny_run / "plots").iterdir()) == plots
    assert all((tiny_run / "plots" / p).stat().st_size == n for p, n in before.items())
    assert main(["plot", str(tmp_path / "missing")]) == 1


def test_missing_dataset_names_path(tmp_path, capsys):
    missing = tmp_path / "no_such_data"
    assert main(["train", "--data-root", str(missing), "--run-dir", str(tmp_path / "r")]) == 1
    assert str(missing) in capsys.readouterr().err


def test_invalid_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"learning_rate": 0.1}))
    assert main(["train", "--toy", "--config", str(cfg), "--run-dir", str(tmp_path / "r")]) == 1
    err = capsys.readouterr().err
    assert "learning_rate" in err and "lambda_x" in err
    assert main(["train", "--toy", "--set", "nonsense=1", "--run-dir", str(tmp_path / "r")]) == 1


def test_preset_lambda_10_0(tmp_path):
    run = tmp_path / "run"
    args = ["train", "--toy", "--toy-size", "2", "--preset", "lambda_10_0", "--no-eval", "--run-dir", str(run)]
    assert main(args + TINY_FLAGS) == 0
    rows = trainer.read_loss_csv(run / "losses.csv")
    assert all(r["nce_y"] == 0.0 for r in rows)
    assert all(trainer.check_recomposition(r, 10.0, 0.0) for r in rows)
    cfg = json.loads((run / "manifest.json").read_text())["config"]
    assert (cfg["lambda_x"], cfg["lambda_y"]) == (10.0, 0.0)


def test_flags_override_config_file(tmp_path):
    from attncut.cli import build_config, build_parser

    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"tau": 0.2, "k": 64, "lambda_x": 3.0}))
    args = build_parser().parse_args(["train", "--config", str(cfg), "--k", "32", "--preset", "lambda_1_1"])
    got = build_config(args)
    assert (got.tau, got.k, got.lambda_x, got.lambda_y) == (0.2, 32, 1.0, 1.0)
