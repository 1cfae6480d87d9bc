"""
    Tests for annotate.py
"""

import dataclasses
import filecmp
import itertools
import math
import os

import numpy as np
import pytest

from gprforge import annotate, fdtd, radargram, scene
from gprforge.exceptions import (
    GenerationError,
    MalformedLabelLine,
    ObjectNotImageable,
    OutOfRangeValue,
    OutputExists,
    UnknownDirective,
)
from gprforge.models import BBox, Radargram

LINE_SCENE = """\
#domain: 2.0 1.0
#cell: 0.01 0.01
#time_window: 3e-8
#material: halfspace 4.0 0.0
#cylinder: pec 1.0 0.5 0.05
#waveform: ricker 1.0 3e8
#source: 0.0
#rx_offset: 0.0
#scan: 0.2 1.8 81
"""


def blank_radargram(n_traces=81, n_samples=300, dt=1e-10, dx_m=0.02):
    return Radargram(np.zeros((n_traces, n_samples)), dt, dx_m)


def test_wave_velocity():
    assert annotate.wave_velocity(1.0) == fdtd.C0
    assert annotate.wave_velocity(4.0) == fdtd.C0 / 2
    assert annotate.wave_velocity(9.0) == pytest.approx(9.9931e7, rel=1e-4)


def test_hyperbola_travel_time():
    assert annotate.hyperbola_travel_time(0.3, 0.3, 1.0, 1e8) == pytest.approx(20e-9)
    x = np.linspace(-1.0, 1.0, 41)
    t = annotate.hyperbola_travel_time(x, 0.0, 0.5, 1e8)

    assert np.allclose(t, t[::-1])
    assert np.argmin(t) == 20
    assert np.all(np.diff(t[20:]) > 0)
    assert annotate.hyperbola_travel_time(0.2, 0.0, 0.6, 1e8) > annotate.hyperbola_travel_time(0.2, 0.0, 0.5, 1e8)


def test_flank_reach():
    assert annotate.flank_reach(0.5, 0.5) == pytest.approx(0.5 * math.sqrt(3))
    assert annotate.flank_reach(0.5, 1.0) == 0.0
    with pytest.raises(OutOfRangeValue):
        annotate.flank_reach(0.5, 0.0)


def test_object_bbox_centered():
    s = scene.parse_scene(LINE_SCENE)
    r = blank_radargram()
    box = annotate.object_bbox(s.objects[0], s, r)

    # Apex trace 40, reach 0.45 * sqrt(3) m = 39 traces each side
    assert (box.xmin, box.xmax) == (1, 80)
    assert 40 - box.xmin == box.xmax - 1 - 40
    v = annotate.wave_velocity(4.0)
    apex = 2 * 0.45 / v + 1.5 / 3e8
    assert box.ymin == math.floor((apex - 0.5 / 3e8) / 1e-10)
    assert box.ymax > box.ymin
    assert box.ymax <= r.n_samples
    assert box.class_id == 0


def test_object_bbox_clipped_to_image():
    s = scene.parse_scene(LINE_SCENE.replace("1.0 0.5 0.05", "0.3 0.5 0.05"))
    box = annotate.object_bbox(s.objects[0], s, blank_radargram())

    assert box.xmin == 0
    assert box.xmax < 81


def test_object_bbox_not_imageable():
    s = scene.parse_scene(LINE_SCENE)

    with pytest.raises(ObjectNotImageable):
        annotate.object_bbox(s.objects[0], s, blank_radargram(n_samples=50))


def test_object_bbox_with_offset_and_tail_drop():
    s = scene.parse_scene(LINE_SCENE.replace("#rx_offset: 0.0", "#rx_offset: 0.1"))
    r = blank_radargram()
    wide = annotate.object_bbox(s.objects[0], s, r, tail_drop=0.6)
    narrow = annotate.object_bbox(s.objects[0], s, r, tail_drop=0.8)

    assert wide.width > narrow.width
    assert wide.height > narrow.height
    assert wide.xmin + wide.xmax == narrow.xmin + narrow.xmax
    assert abs((narrow.xmin + narrow.xmax - 1) / 2 - 37.5) <= 0.5


@pytest.mark.parametrize(
    "a, b, expected",
    [
        (BBox(0, 0, 2, 2), BBox(0, 0, 2, 2), 1.0),
        (BBox(0, 0, 2, 2), BBox(5, 5, 6, 6), 0.0),
        (BBox(0, 0, 2, 2), BBox(2, 0, 4, 2), 0.0),
        (BBox(0, 0, 2, 2), BBox(1, 1, 3, 3), 1 / 7),
    ],
)
def test_iou_examples(a, b, expected):
    assert annotate.iou(a, b) == pytest.approx(expected)


def test_iou_matches_pixel_counting():
    coords = [(x1, x2) for x1, x2 in itertools.combinations(range(0, 13, 3), 2)]
    for (ax1, ax2), (ay1, ay2), (bx1, bx2), (by1, by2) in itertools.product(coords, repeat=4):
        a, b = BBox(ax1, ay1, ax2, ay2), BBox(bx1, by1, bx2, by2)
        grid_a = np.zeros((12, 12), dtype=bool)
        grid_b = np.zeros((12, 12), dtype=bool)
        grid_a[ay1:ay2, ax1:ax2] = True
        grid_b[by1:by2, bx1:bx2] = True
        expected = (grid_a & grid_b).sum() / (grid_a | grid_b).sum()

        assert annotate.iou(a, b) == pytest.approx(expected)
        assert annotate.iou(a, b) == annotate.iou(b, a)


def test_labels_roundtrip(tmp_path):
    path = str(tmp_path / "0.txt")
    boxes = [BBox(1, 2, 30, 40), BBox(3.5, 4.25, 10, 12.75)]
    annotate.write_labels(path, boxes)

    assert open(path).read().splitlines()[0] == "0 1 2 30 40"
    assert annotate.read_labels(path) == boxes


def test_labels_with_scores(tmp_path):
    path = str(tmp_path / "0.txt")
    annotate.write_labels(path, [BBox(1, 2, 3, 4, score=0.875)], with_scores=True)

    assert open(path).read() == "0 1 2 3 4 0.875\n"
    assert annotate.read_labels(path)[0].score == 0.875


def test_empty_label_file(tmp_path):
    path = str(tmp_path / "0.txt")
    annotate.write_labels(path, [])

    assert annotate.read_labels(path) == []


@pytest.mark.parametrize("line", ["0 1 2 3", "zero 1 2 3 4", "0 1 2 nan 4", "0 1 2 3 4 5 6"])
def test_malformed_labels(tmp_path, line):
    path = tmp_path / "0.txt"
    path.write_text("0 1 2 3 4\n" + line + "\n")

    with pytest.raises(MalformedLabelLine) as e:
        annotate.read_labels(str(path))
    assert e.value.line == 2


def test_preset_config():
    cfg = annotate.preset_config("pseudo-real")

    assert cfg.clutter is True
    assert cfg.layers == (2, 4)
    assert cfg.material_props["void"] == (1.0, 0.0)
    with pytest.raises(OutOfRangeValue):
        annotate.preset_config("field")


def test_parse_gen_config():
    cfg = annotate.parse_gen_config(
        "#preset: simulated\n#count: 3\n#eps_r: 5 7\n#clutter: on\n#layers: 1 2\n"
        "#material: clay 12 0.05\n#object_materials: pec clay\n"
    )

    assert cfg.count == 3
    assert cfg.eps_r == (5.0, 7.0)
    assert cfg.clutter is True
    assert cfg.layers == (1, 2)
    assert cfg.material_props["clay"] == (12.0, 0.05)
    assert cfg.object_materials == ["pec", "clay"]
    assert cfg.domain == (3.2, 2.0)


def test_parse_gen_config_errors():
    with pytest.raises(OutOfRangeValue) as e:
        annotate.parse_gen_config("#count: 2\n#eps_r: 7 5\n")
    assert e.value.line == 2

    with pytest.raises(UnknownDirective):
        annotate.parse_gen_config("#antenna: 3\n")

    with pytest.raises(OutOfRangeValue):
        annotate.parse_gen_config("#object_materials: pec granite\n")


@pytest.mark.parametrize("preset", ["simulated", "pseudo-real"])
def test_draw_scene_validates(preset):
    cfg = annotate.preset_config(preset)
    for seed in range(20):
        s = annotate.draw_scene(cfg, np.random.default_rng([seed, 0]))

        assert scene.validate_scene(s) == []
        assert scene.parse_scene(scene.serialize_scene(s)) == s
        targets = [o for o in s.objects if o.is_cylinder]
        assert cfg.objects[0] <= len(targets) <= cfg.objects[1]


def test_draw_scene_is_seeded():
    cfg = annotate.preset_config("pseudo-real")

    a = annotate.draw_scene(cfg, np.random.default_rng([5, 1]))
    b = annotate.draw_scene(cfg, np.random.default_rng([5, 1]))
    assert a == b


def test_generate_dataset(tmp_path, tiny_gen_config):
    out = str(tmp_path / "ds")
    annotate.generate_dataset(tiny_gen_config, out, threads=2)

    names = sorted(os.listdir(out))
    assert names == [
        "0.gprb", "0.pgm", "0.scene", "0.txt",
        "1.gprb", "1.pgm", "1.scene", "1.txt",
        "manifest.txt",
    ]
    manifest = open(os.path.join(out, "manifest.txt")).read()
    assert "seed 7" in manifest
    assert "seed=7:1" in manifest

    for i, image, boxes in annotate.load_dataset(out):
        assert (image.width, image.height) == (8, 32)
        assert len(boxes) <= 1
        for b in boxes:
            assert 0 <= b.xmin < b.xmax <= image.width
            assert 0 <= b.ymin < b.ymax <= image.height
        s = scene.parse_scene(open(os.path.join(out, f"{i}.scene")).read())
        assert scene.validate_scene(s) == []
        assert radargram.read_gprb(os.path.join(out, f"{i}.gprb")).n_traces == 8


def test_generate_dataset_is_deterministic(tmp_path, tiny_gen_config):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    annotate.generate_dataset(tiny_gen_config, a, threads=1)
    annotate.generate_dataset(tiny_gen_config, b, threads=2)

    names = sorted(os.listdir(a))
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert mismatch == [] and errors == []


def test_generate_dataset_refuses_existing(tmp_path, tiny_gen_config):
    out = tmp_path / "ds"
    out.mkdir()
    (out / "keep.txt").write_text("x")

    with pytest.raises(OutputExists):
        annotate.generate_dataset(tiny_gen_config, str(out))


def test_generate_dataset_reports_index(tmp_path, tiny_gen_config, mocker):
    mocker.patch("gprforge.annotate.fdtd.run_bscan", side_effect=fdtd.NumericalBlowup(step=3, value=1e31))

    with pytest.raises(GenerationError) as e:
        annotate.generate_dataset(tiny_gen_config, str(tmp_path / "ds"), threads=1)
    assert e.value.index == 0


def test_generate_dataset_force_removes_earlier_run(tmp_path, tiny_gen_config):
    out = tmp_path / "ds"
    annotate.generate_dataset(dataclasses.replace(tiny_gen_config, count=3), str(out))
    (out / "notes.md").write_text("keep")

    annotate.generate_dataset(dataclasses.replace(tiny_gen_config, count=1), str(out), force=True)
    assert sorted(os.listdir(out)) == ["0.gprb", "0.pgm", "0.scene", "0.txt", "manifest.txt", "notes.md"]
    assert [i for i, _, _ in annotate.load_dataset(str(out))] == [0]


def test_gen_config_needs_whole_cells(tiny_gen_config):
    with pytest.raises(OutOfRangeValue) as e:
        annotate.validate_gen_config(dataclasses.replace(tiny_gen_config, domain=(1.01, 0.6)))
    assert e.value.subject == "cell"

    with pytest.raises(OutOfRangeValue) as e:
        annotate.parse_gen_config("#domain: 1.0 2.0\n#cell: 0.03 0.04\n")
    assert e.value.subject == "cell"


def test_generate_dataset_after_package_import(tmp_path, tiny_gen_config):
    import gprforge

    assert gprforge.radargram.__name__ == "gprforge.radargram"
    assert gprforge.scene.__name__ == "gprforge.scene"
    gprforge.annotate.generate_dataset(dataclasses.replace(tiny_gen_config, count=1), str(tmp_path / "ds"))
    assert os.path.isfile(tmp_path / "ds" / "0.gprb")


@pytest.mark.slow
def test_boxes_hold_apex_extremum(tmp_path):
    cfg = dataclasses.replace(annotate.preset_config("simulated"), count=20, seed=3, objects=(1, 1), n_traces=32)
    out = str(tmp_path / "ds")
    annotate.generate_dataset(cfg, out)

    held = 0
    for i, image, boxes in annotate.load_dataset(out):
        s = scene.parse_scene(open(os.path.join(out, f"{i}.scene")).read())
        (target,) = [o for o in s.objects if o.is_cylinder]
        midpoints = np.asarray(s.positions()) + s.rx_offset / 2.0
        column = int(np.argmin(np.abs(midpoints - target.geometry[0])))
        pixels = image.pixels[:, column].astype(np.float64)
        row = int(np.argmax(np.abs(pixels - np.median(pixels))))
        held += any(b.xmin <= column < b.xmax and b.ymin <= row < b.ymax for b in boxes)
    assert held >= 18
