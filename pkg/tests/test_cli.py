import csv
import json
from pathlib import Path

import numpy as np
import pytest

from polyprobe.cli import build_parser, main
from polyprobe.shapegen import image_name, load_dataset, write_png

SUBCOMMANDS = ("gen", "train-classifier", "train-gan", "eval-is", "sweep", "report")


@pytest.fixture(scope="module")
def clf_file(tmp_path_factory, small_classifier):
    path = tmp_path_factory.mktemp("cliclf") / "classifier.pprb"
    small_classifier.save(path)
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# -- usage --------------------------------------------------------------------------------


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_documents_every_flag(cmd, capsys):
    code, out, _ = run(capsys, cmd, "--help")
    assert code == 0
    sub = next(a for a in build_parser()._actions if a.dest == "command").choices[cmd]
    for action in sub._actions:
        for flag in action.option_strings:
            if flag.startswith("--"):
                assert flag in out, flag
        assert action.help, action.dest


def test_infeasible_gen_is_usage_error(tmp_path, capsys):
    code, _, err = run(capsys, "gen", "--vertices", 3, "--min-angle", 130, "--count", 5, "--out", tmp_path / "d")
    assert code == 1
    assert "--min-angle" in err and "390 > 360" in err
    assert not (tmp_path / "d").exists()


@pytest.mark.parametrize("argv, needle", [
    (["gen", "--vertices", "3"], "--min-angle"),
    (["gen", "--vertices", "3", "--min-angle", "20", "--out", "x", "--bogus", "1"], "--bogus"),
    (["gen", "--vertices", "3", "--min-angle", "20", "--out", "x", "--shift", "maybe"], "--shift"),
    (["train-gan", "--data", "/no/such/dir", "--out", "x"], "/no/such/dir"),
    (["train-gan", "--data", ".", "--out", "x", "--loss", "hinge"], "--loss"),
    (["eval-is", "--classifier", "/no/such.pprb", "--images", "."], "/no/such.pprb"),
    (["report", "--runs", "/no/such/runs", "--out", "x"], "/no/such/runs"),
    (["sweep", "--config", "/no/such.cfg"], "/no/such.cfg"),
    ([], ""),
])
def test_usage_errors_exit_one(argv, needle, capsys):
    code, out, err = run(capsys, *argv)
    assert code == 1
    assert needle in err + out


def test_bad_seed_env(monkeypatch, tmp_path, capsys):
    monkeypatch.setenv("POLYPROBE_SEED", "abc")
    code, _, err = run(capsys, "gen", "--vertices", 3, "--min-angle", 20, "--count", 2, "--out", tmp_path)
    assert code == 1 and "POLYPROBE_SEED" in err


def test_under_trained_classifier_is_runtime_error(tmp_path, capsys):
    dirs = []
    for v in (3, 4, 5):
        d = tmp_path / f"v{v}"
        assert run(capsys, "gen", "--vertices", v, "--min-angle", 20, "--count", 20, "--image-size", 16, "--out", d)[0] == 0
        dirs.append(d)
    code, _, err = run(capsys, "train-classifier", "--data", *dirs, "--out", tmp_path / "c.pprb",
                       "--epochs", 1, "--min-per-class", 20, "--min-accuracy", 1.01)
    assert code == 2 and "accuracy" in err


# -- gen / seeds / config ----------------------------------------------------------------------


def test_gen_is_byte_identical_and_env_seeded(tmp_path, capsys, monkeypatch):
    args = ["gen", "--vertices", 4, "--min-angle", 40, "--shift", "true", "--count", 12, "--image-size", 16]
    assert run(capsys, *args, "--seed", 5, "--out", tmp_path / "a")[0] == 0
    assert run(capsys, *args, "--seed", 5, "--out", tmp_path / "b")[0] == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    assert (tmp_path / "a" / "mean.f64").exists()

    monkeypatch.setenv("POLYPROBE_SEED", "5")
    assert run(capsys, *args, "--out", tmp_path / "env")[0] == 0
    assert tree_bytes(tmp_path / "env") == tree_bytes(tmp_path / "a")
    monkeypatch.setenv("POLYPROBE_SEED", "6")
    assert run(capsys, *args, "--out", tmp_path / "env6")[0] == 0
    assert tree_bytes(tmp_path / "env6") != tree_bytes(tmp_path / "a")


def test_config_file_defaults_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "gen.cfg"
    cfg.write_text("vertices = 5\nmin-angle = 30\ncount = 7\nimage_size = 16\nseed = 3\n")
    assert run(capsys, "gen", "--config", cfg, "--out", tmp_path / "a")[0] == 0
    ds = load_dataset(tmp_path / "a")
    assert len(ds) == 7 and ds.spec.n_vertices == 5 and ds.spec.min_segment_angle == 30

    assert run(capsys, "gen", "--config", cfg, "--count", 3, "--vertices", 4, "--out", tmp_path / "b")[0] == 0
    ds = load_dataset(tmp_path / "b")
    assert len(ds) == 3 and ds.spec.n_vertices == 4 and ds.spec.seed == 3

    cfg.write_text("vertices = 5\nwidth = 3\n")
    code, _, err = run(capsys, "gen", "--config", cfg, "--min-angle", 20, "--out", tmp_path / "c")
    assert code == 1 and "width" in err and str(cfg) in err


# -- eval-is ------------------------------------------------------------------------------------


def test_eval_is_identical_images(tmp_path, capsys, clf_file):
    rng = np.random.default_rng(0)
    img = (rng.uniform(size=(16, 16)) > 0.5).astype(float)
    for k in range(40):
        write_png(tmp_path / image_name(k), img)
    code, out, _ = run(capsys, "eval-is", "--classifier", clf_file, "--images", tmp_path, "--splits", 10)
    assert code == 0
    result = json.loads(out)
    assert result["is_std"] <= 1e-9 and abs(result["is_avg"] - 1) <= 1e-9
    assert run(capsys, "eval-is", "--classifier", clf_file, "--images", tmp_path, "--splits", 100)[0] == 1


def test_eval_is_on_dataset_dir(tmp_path, capsys, clf_file):
    run(capsys, "gen", "--vertices", 3, "--min-angle", 20, "--count", 30, "--image-size", 16, "--seed", 1, "--out", tmp_path / "d")
    code, out, _ = run(capsys, "eval-is", "--classifier", clf_file, "--images", tmp_path / "d", "--splits", 3)
    assert code == 0 and 1 <= json.loads(out)["is_avg"] <= 3


# -- train-gan ------------------------------------------------------------------------------------


def test_train_gan_outputs_and_determinism(tmp_path, capsys):
    run(capsys, "gen", "--vertices", 3, "--min-angle", 20, "--count", 16, "--image-size", 16, "--out", tmp_path / "d")
    args = ["train-gan", "--data", tmp_path / "d", "--loss", "wgan", "--steps", 2, "--batch-size", 4,
            "--latent-dim", 4, "--base-channels", 2, "--seed", 1, "--samples", 3]
    assert run(capsys, *args, "--out", tmp_path / "g1")[0] == 0
    assert run(capsys, *args, "--out", tmp_path / "g2")[0] == 0
    a, b = tree_bytes(tmp_path / "g1"), tree_bytes(tmp_path / "g2")
    assert a == b
    assert "losses.csv" in a and "checkpoints/final.pprb" in a and f"samples/{image_name(2)}" in a


# -- sweep + report -------------------------------------------------------------------------------


def test_sweep_then_report(tmp_path, capsys, clf_file):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(
        "# reduced grid\n"
        "vertex_counts = 3, 4, 5\nshift_options = true, false\nangle_options = 20, 40\n"
        "image_size = 16\ncount = 30\nsteps = 2\nbatch_size = 8\nlatent_dim = 8\nbase_channels = 4\n"
        f"samples_for_is = 20\nn_splits = 2\nclassifier_path = {clf_file}\n"
    )
    code, out, _ = run(capsys, "sweep", "--config", cfg, "--out", tmp_path / "s1", "--workers", 2)
    assert code == 0 and "14 cells" in out
    assert run(capsys, "sweep", "--config", cfg, "--out", tmp_path / "s2", "--no-resume")[0] == 0
    assert (tmp_path / "s1" / "report.csv").read_bytes() == (tmp_path / "s2" / "report.csv").read_bytes()

    code, out, _ = run(capsys, "report", "--runs", tmp_path / "s1", "--out", tmp_path / "r1")
    assert code == 0 and "quad_highest" in out
    with (tmp_path / "r1" / "table_synthetic.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 14 and rows[-1]["vertices"] == "combined"
    assert any(p.suffix == ".svg" for p in (tmp_path / "r1").iterdir())

    run(capsys, "report", "--runs", tmp_path / "s1", "--out", tmp_path / "r2")
    assert tree_bytes(tmp_path / "r1") == tree_bytes(tmp_path / "r2")


def test_sweep_seed_flag_beats_env(tmp_path, capsys, clf_file, monkeypatch):
    cfg = tmp_path / "one.cfg"
    cfg.write_text(
        "vertex_counts = 3\nshift_options = false\nangle_options = 20\ninclude_combined = false\n"
        f"image_size = 16\ncount = 20\nsteps = 1\nbatch_size = 4\nlatent_dim = 4\nbase_channels = 2\n"
        f"samples_for_is = 20\nn_splits = 2\nclassifier_path = {clf_file}\n"
    )
    monkeypatch.setenv("POLYPROBE_SEED", "11")
    run(capsys, "sweep", "--config", cfg, "--out", tmp_path / "env")
    run(capsys, "sweep", "--config", cfg, "--out", tmp_path / "flag", "--seed", 12)
    env = json.loads((tmp_path / "env" / "report.json").read_text())
    flag = json.loads((tmp_path / "flag" / "report.json").read_text())
    assert env["base_seed"] == 11 and flag["base_seed"] == 12
