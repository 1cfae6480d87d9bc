"""
    Tests for cli.py
"""

import filecmp
import os

import numpy as np
import pytest

from gprforge import cli, detect, nn, radargram
from gprforge.cli import RunConfig, build_parser, main
from gprforge.configuration import Configuration, load_config
from gprforge.models import GrayImage, Radargram

SMALL_SCENE = """\
#domain: 0.4 0.3
#cell: 0.02 0.02
#time_window: 3e-9
#material: halfspace 4.0 0.0
#cylinder: pec 0.2 0.15 0.04
#waveform: ricker 1.0 1e9
#source: 0.0
#rx_offset: 0.04
#scan: 0.1 0.3 2
"""


@pytest.fixture
def scene_file(tmp_path):
    path = tmp_path / "small.scene"
    path.write_text(SMALL_SCENE)
    return str(path)


@pytest.fixture
def model_file(tmp_path):
    model = detect.init_detector(nn.backbone_weights(nn.build_backbone(seed=0)), zero_heads=True)
    path = str(tmp_path / "zero.gpnw")
    detect.save_model(path, model)
    return path


def test_usage_errors(capsys):
    assert main([]) == 2
    assert main(["simulate", "--scene", "x.scene"]) == 2
    assert main(["render", "--in", "a", "--out", "b", "--mode", "sideways"]) == 2
    assert "usage" in capsys.readouterr().err


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == 0
    assert "simulate" in capsys.readouterr().out


def test_run_config_from_args():
    args = build_parser().parse_args(["--seed", "4", "--force", "eval", "--pred", "p", "--gt", "g"])
    run = RunConfig.from_args(args)

    assert (run.command, run.seed, run.force) == ("eval", 4, True)
    assert run.options["pred"] == "p"
    assert "handler" not in run.options
    assert run.seed_or(9) == 4


def test_simulate(tmp_path, scene_file, capsys):
    out = str(tmp_path / "out" / "small.gprb")

    assert main(["simulate", "--scene", scene_file, "--out", out, "--report"]) == 0
    r = radargram.read_gprb(out)
    assert r.n_traces == 2
    assert r.dx_m == pytest.approx(0.2)
    assert "trace 1: first break" in capsys.readouterr().out


def test_simulate_refuses_overwrite(tmp_path, scene_file, capsys):
    out = tmp_path / "small.gprb"
    out.write_bytes(b"keep")

    assert main(["simulate", "--scene", scene_file, "--out", str(out)]) == 1
    assert out.read_bytes() == b"keep"
    assert str(out) in capsys.readouterr().err

    assert main(["--force", "simulate", "--scene", scene_file, "--out", str(out)]) == 0
    assert out.read_bytes()[:4] == b"GPRB"


def test_simulate_bad_scene(tmp_path, scene_file, capsys):
    with open(scene_file, "a") as file:
        file.write("#antenna: bowtie\n")

    assert main(["simulate", "--scene", scene_file, "--out", str(tmp_path / "x.gprb")]) == 1
    assert "Line: 10" in capsys.readouterr().err
    assert not os.path.exists(tmp_path / "x.gprb")


def test_render_and_import(tmp_path):
    traces = np.random.default_rng(0).normal(size=(16, 64)).astype(np.float32)
    source = str(tmp_path / "in.gprb")
    radargram.write_gprb(Radargram(traces, 1e-10, 0.05), source)

    image_path = str(tmp_path / "in.pgm")
    assert main(["render", "--in", source, "--out", image_path, "--height", "32"]) == 0
    image = radargram.read_pgm(image_path)
    assert (image.width, image.height) == (16, 32)

    back = str(tmp_path / "back.gprb")
    assert main(["import", "--pgm", image_path, "--dt", "2e-10", "--dx", "0.05", "--out", back]) == 0
    r = radargram.read_gprb(back)
    assert (r.n_traces, r.n_samples, r.dt) == (16, 32, 2e-10)


def test_render_raw(tmp_path):
    traces = np.tile(np.linspace(-1.0, 1.0, 20, dtype=np.float32), (4, 1))
    source = str(tmp_path / "in.gprb")
    radargram.write_gprb(Radargram(traces, 1e-10, 0.05), source)
    out = str(tmp_path / "raw.pgm")

    assert main(["render", "--in", source, "--out", out, "--raw", "--mode", "global_minmax"]) == 0
    pixels = radargram.read_pgm(out).pixels
    assert pixels[0, 0] == 0 and pixels[-1, 0] == 255


def test_detect_blank_image(tmp_path, model_file):
    image = str(tmp_path / "blank.pgm")
    radargram.write_pgm(GrayImage.from_array(np.full((64, 96), 128)), image)
    out = str(tmp_path / "blank.txt")

    assert main(["detect", "--model", model_file, "--image", image, "--out", out]) == 0
    assert open(out).read() == ""


def test_detect_directory(tmp_path, model_file, labelled_dir):
    images = labelled_dir(count=3)
    out = str(tmp_path / "pred")

    assert main(["--threads", "2", "detect", "--model", model_file, "--images", images, "--out", out]) == 0
    assert sorted(os.listdir(out)) == ["0.txt", "1.txt", "2.txt"]
    assert main(["detect", "--model", model_file, "--images", images, "--out", out]) == 1


def test_eval(tmp_path, labelled_dir, capsys):
    directory = labelled_dir(count=2)
    csv = str(tmp_path / "pr.csv")

    assert main(["eval", "--pred", directory, "--gt", directory, "--csv", csv]) == 0
    assert "ap: 1.0" in capsys.readouterr().out
    assert open(csv).read().splitlines()[1] == "1.0,1.0,1.0"


def test_eval_missing_pair(tmp_path, labelled_dir, capsys):
    pred = tmp_path / "empty"
    pred.mkdir()

    assert main(["eval", "--pred", str(pred), "--gt", labelled_dir(count=1)]) == 1
    assert "(MissingPair)" in capsys.readouterr().err


def test_baseline_hough(tmp_path, labelled_dir):
    images = labelled_dir(count=2)
    out = str(tmp_path / "hough")

    assert main(["--seed", "1", "baseline", "--method", "hough", "--images", images, "--out", out]) == 0
    assert sorted(os.listdir(out)) == ["0.txt", "1.txt"]


def test_baseline_hog_needs_training_data(tmp_path, labelled_dir):
    assert main(["baseline", "--method", "hog", "--images", labelled_dir(count=1), "--out", str(tmp_path / "h")]) == 1


def test_debug_flag(labelled_dir):
    directory = labelled_dir(count=1)

    assert main(["--debug", "eval", "--pred", directory, "--gt", directory]) == 0
    assert Configuration().debug is True


TINY_GEN = """\
#preset: simulated
#count: 2
#domain: 1.0 0.6
#cell: 0.04 0.04
#time_window: 2e-8
#n_traces: 8
#image_height: 32
#objects: 1 1
#depth: 0.25 0.3
#radius: 0.05 0.08
#object_materials: pec
"""


@pytest.fixture
def quick_config(mocker):
    """Package defaults with pretraining and training cut to one short epoch."""
    config = load_config()
    config["pretrain"].update(epochs=1, patches=64, batch_size=16, lr_steps=[])
    config["train"]["epochs"] = 1
    mocker.patch("gprforge.cli.load_config", return_value=config)
    return config


@pytest.fixture
def backbone_file(tmp_path):
    path = str(tmp_path / "backbone.gpnw")
    nn.save_weights(path, nn.backbone_weights(nn.build_backbone(seed=0)))
    return path


def same_files(a, b, names):
    _, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    return mismatch == [] and errors == []


def test_package_namespace():
    import gprforge

    assert gprforge.radargram.__name__ == "gprforge.radargram"
    assert gprforge.scene.__name__ == "gprforge.scene"
    assert gprforge.Radargram is Radargram
    assert main(["--help"]) == 0


def test_unknown_flags(capsys):
    assert main(["--bogus", "eval", "--pred", "p", "--gt", "g"]) == 2
    assert main(["eval", "--pred", "p", "--gt", "g", "--nope"]) == 2
    assert "unrecognized arguments" in capsys.readouterr().err


def test_missing_scene_file(tmp_path, capsys):
    missing = str(tmp_path / "absent.scene")

    assert main(["simulate", "--scene", missing, "--out", str(tmp_path / "x.gprb")]) == 1
    err = capsys.readouterr().err
    assert "(FileAccessError)" in err
    assert missing in err


def test_missing_radargram(tmp_path, capsys):
    missing = str(tmp_path / "absent.gprb")

    assert main(["render", "--in", missing, "--out", str(tmp_path / "x.pgm")]) == 1
    assert "(FileAccessError)" in capsys.readouterr().err
    assert not os.path.exists(tmp_path / "x.pgm")


@pytest.mark.parametrize("sidecar", [".yaml", ".loss.csv"])
def test_train_refuses_existing_sidecar(tmp_path, labelled_dir, backbone_file, sidecar, capsys):
    out = str(tmp_path / "model.gpnw")
    with open(out + sidecar, "w") as file:
        file.write("keep")
    args = ["train", "--data", labelled_dir(count=1), "--backbone", backbone_file, "--epochs", "0", "--out", out]

    assert main(args) == 1
    assert out + sidecar in capsys.readouterr().err
    assert open(out + sidecar).read() == "keep"
    assert not os.path.exists(out)

    assert main(["--force"] + args) == 0
    assert open(out + ".loss.csv").read() == "epoch,loss\n"


def test_dataset_is_byte_deterministic(tmp_path):
    gen = tmp_path / "tiny.gen"
    gen.write_text(TINY_GEN)
    a, b = str(tmp_path / "a"), str(tmp_path / "b")

    assert main(["--seed", "5", "--threads", "1", "dataset", "--config", str(gen), "--out", a]) == 0
    assert main(["--seed", "5", "--threads", "2", "dataset", "--config", str(gen), "--out", b]) == 0
    names = sorted(os.listdir(a))
    assert "1.pgm" in names and "manifest.txt" in names
    assert same_files(a, b, names)


def test_pretrain_train_detect_are_byte_deterministic(tmp_path, labelled_dir, quick_config):
    data = labelled_dir(count=4)
    for run in ("a", "b"):
        out = tmp_path / run
        out.mkdir()
        assert main(["--seed", "3", "pretrain", "--patches", data, "--out", str(out / "bb.gpnw")]) == 0
        assert main(
            ["--seed", "3", "train", "--data", data, "--backbone", str(out / "bb.gpnw"), "--out", str(out / "m.gpnw")]
        ) == 0
        assert main(["detect", "--model", str(out / "m.gpnw"), "--images", data, "--out", str(out / "pred")]) == 0

    names = ["bb.gpnw", "m.gpnw", "m.gpnw.yaml", "m.gpnw.loss.csv"]
    assert same_files(str(tmp_path / "a"), str(tmp_path / "b"), names)
    assert same_files(str(tmp_path / "a" / "pred"), str(tmp_path / "b" / "pred"), ["0.txt", "1.txt", "2.txt", "3.txt"])


@pytest.mark.slow
def test_pretrain_on_patches_generalizes(labelled_dir):
    config = load_config()
    run = RunConfig("pretrain", 0, False, 1, False)
    _, accuracy = cli.pretrain_from_options(run, config, None, [labelled_dir(count=12)])

    assert accuracy >= 0.95


def scenario_aps(out):
    rows = [line.split() for line in open(os.path.join(out, "summary.txt")).read().splitlines()[1:]]
    return {row[0]: float(row[1]) for row in rows}


@pytest.mark.slow
def test_scenario_detector_beats_baselines(tmp_path):
    out = str(tmp_path / "s1")

    assert main(["--seed", "0", "scenario", "--id", "1", "--out", out]) == 0
    aps = scenario_aps(out)
    assert set(aps) == {"detector", "hog", "template"}
    assert aps["detector"] > aps["hog"]
    assert aps["detector"] > aps["template"]
    for name in ("backbone.gpnw", "detector.gpnw", "detector.gpnw.yaml", "detector.gpnw.loss.csv"):
        assert os.path.isfile(os.path.join(out, name))


@pytest.mark.slow
def test_scenario_mixed_training_helps(tmp_path):
    s2, s3 = str(tmp_path / "s2"), str(tmp_path / "s3")

    assert main(["--seed", "0", "scenario", "--id", "2", "--out", s2]) == 0
    assert main(["--seed", "0", "scenario", "--id", "3", "--out", s3]) == 0
    assert scenario_aps(s3)["detector"] >= scenario_aps(s2)["detector"]
