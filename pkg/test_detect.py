"""
    Tests for detect.py
"""

import itertools

import numpy as np
import pytest

from gprforge import detect, nn
from gprforge.annotate import iou, load_dataset
from gprforge.exceptions import BadWeights, EmptyDataset
from gprforge.models import BBox, Detection, GrayImage

GT = np.array([[12.0, 10.0, 44.0, 38.0]])
PROPOSALS = np.array(
    [
        [12.0, 10.0, 44.0, 38.0],
        [13.0, 11.0, 45.0, 37.0],
        [0.0, 0.0, 20.0, 20.0],
        [40.0, 40.0, 64.0, 64.0],
    ]
)


@pytest.fixture
def pretrained():
    return nn.backbone_weights(nn.build_backbone(seed=0))


def noise_image(seed=0, width=64, height=64):
    return GrayImage.from_array(np.random.default_rng(seed).integers(0, 256, (height, width)))


def random_boxes(rng, n, limit=100.0):
    xy = rng.uniform(0, limit, (n, 2))
    wh = rng.uniform(2.0, 60.0, (n, 2))
    return np.concatenate([xy, xy + wh], axis=1)


def test_anchor_count():
    anchors = detect.gen_anchors(4, 4)

    assert len(anchors) == 96
    assert anchors.boxes.shape == (96, 4)


def test_anchor_centers():
    anchors = detect.gen_anchors(5, 3)
    # cell (i=1, j=2), first shape
    box = anchors.boxes[(1 * 5 + 2) * 6]

    assert ((box[0] + box[2]) / 2, (box[1] + box[3]) / 2) == (20.0, 12.0)


def test_anchor_wide_shape():
    box = detect.gen_anchors(1, 1).boxes[1 * 2 + 1]

    assert (box[2] - box[0], box[3] - box[1]) == (45.0, 23.0)


def test_anchors_cross_boundary():
    anchors = detect.gen_anchors(2, 2)
    flags = anchors.cross_boundary(16, 16)

    assert flags.any()
    # 16x16 anchors centred at (4, 4) stick out on the top-left
    assert flags[0]


def test_encode_box():
    assert detect.encode_box(BBox(0, 0, 10, 10), BBox(5, 0, 15, 10)) == (0.5, 0.0, 0.0, 0.0)
    assert detect.encode_box(BBox(3, 4, 9, 20), BBox(3, 4, 9, 20)) == (0.0, 0.0, 0.0, 0.0)


def test_encode_decode_inverse():
    rng = np.random.default_rng(0)
    anchors, gts = random_boxes(rng, 500), random_boxes(rng, 500)

    back = detect.decode_boxes(anchors, detect.encode_boxes(anchors, gts))
    assert np.max(np.abs(back - gts)) <= 1e-4

    deltas = rng.uniform(-1.0, 1.0, (500, 4))
    again = detect.encode_boxes(anchors, detect.decode_boxes(anchors, deltas))
    assert np.max(np.abs(again - deltas)) <= 1e-4


def test_decode_box():
    box = detect.decode_box(BBox(0, 0, 10, 10), (0.5, 0.0, 0.0, 0.0))
    assert box.as_tuple() == pytest.approx((5.0, 0.0, 15.0, 10.0))


def test_assign_no_gts():
    labels, assigned = detect.assign_anchors(detect.gen_anchors(3, 3), np.zeros((0, 4)))

    assert np.all(labels == 0)
    assert np.all(assigned == -1)


def test_assign_exact_and_argmax():
    anchors = np.array([[0.0, 0.0, 10.0, 10.0], [100.0, 100.0, 110.0, 110.0], [50.0, 50.0, 60.0, 60.0]])
    labels, _ = detect.assign_anchors(anchors, np.array([[50.0, 50.0, 60.0, 60.0]]))
    assert list(labels) == [0, 0, 1]

    # best IoU 0.5: positive only through the argmax rule
    labels, assigned = detect.assign_anchors(anchors, np.array([[0.0, 0.0, 10.0, 20.0]]))
    assert list(labels) == [1, 0, 0]
    assert assigned[0] == 0


def test_assign_ignore_band():
    anchors = np.array([[0.0, 0.0, 10.0, 10.0], [0.0, 0.0, 10.0, 20.0]])
    labels, _ = detect.assign_anchors(anchors, np.array([[0.0, 0.0, 10.0, 20.0]]))

    assert list(labels) == [-1, 1]


def test_assign_every_gt_has_a_positive():
    rng = np.random.default_rng(1)
    anchors = detect.gen_anchors(8, 6).boxes
    for _ in range(50):
        gts = random_boxes(rng, int(rng.integers(1, 5)), limit=50.0)
        labels, _ = detect.assign_anchors(anchors, gts)
        overlaps = detect.iou_matrix(anchors, gts)
        for g in range(len(gts)):
            best = overlaps[:, g] == overlaps[:, g].max()
            assert np.any(labels[best] == 1)


def test_nms_examples():
    a = Detection(BBox(0, 0, 10, 10, score=0.9), 0.9)
    b = Detection(BBox(0, 0, 10, 10, score=0.8), 0.8)
    c = Detection(BBox(50, 50, 60, 60, score=0.95), 0.95)

    assert detect.nms([a]) == [a]
    assert detect.nms([b, a]) == [a]
    assert detect.nms([a, c]) == [c, a]
    assert detect.nms([]) == []


def test_nms_ties_keep_lower_index():
    boxes = np.array([[0.0, 0.0, 10.0, 10.0], [1.0, 0.0, 11.0, 10.0]])
    assert detect.nms_indices(boxes, np.array([0.5, 0.5]), 0.3) == [0]


def test_nms_postcondition():
    rng = np.random.default_rng(2)
    for _ in range(300):
        n = int(rng.integers(1, 12))
        boxes = random_boxes(rng, n, limit=40.0)
        scores = rng.uniform(size=n)
        keep = detect.nms_indices(boxes, scores, 0.3)
        overlaps = detect.iou_matrix(boxes, boxes)

        for i, j in itertools.combinations(keep, 2):
            assert overlaps[i, j] <= 0.3
        for s in set(range(n)) - set(keep):
            assert any(overlaps[s, k] > 0.3 and scores[k] >= scores[s] for k in keep)


def test_roi_pool_constant():
    feat = np.full((64, 8, 8), 5.0)

    assert np.all(detect.roi_pool(feat, (0, 0, 64, 64)) == 5.0)
    assert detect.roi_pool(feat, BBox(0, 0, 4, 4)).shape == (64, 4, 4)
    assert detect.roi_pool(feat, (30, 10, 200, 31)).shape == (64, 4, 4)


def test_roi_pool_ramp():
    feat = np.arange(64.0).reshape(1, 8, 8)
    out, cache = detect.roi_pool_forward(feat, (0, 0, 64, 64))

    for by in range(4):
        for bx in range(4):
            assert out[0, by, bx] == feat[0, 2 * by + 1, 2 * bx + 1]

    dfeat = detect.roi_pool_backward(np.ones_like(out), cache)
    assert dfeat.sum() == 16
    assert dfeat[0, 7, 7] == 1 and dfeat[0, 0, 0] == 0


def test_roi_pool_outside_map_is_zero():
    out = detect.roi_pool(np.ones((2, 4, 4)), (100, 100, 132, 132))
    assert not out.any()


def test_init_detector(pretrained):
    model = detect.init_detector(pretrained, seed=1)

    assert list(model.backbone) == ["conv1.w", "conv1.b", "conv2.w", "conv2.b", "conv3.w", "conv3.b"]
    assert model.rpn["w"].shape == (36, 64, 1, 1)
    assert model.roi["fc_w"].shape == (64, 1024)
    assert np.array_equal(model.roi["fc_w"], pretrained["fc1.w"])
    assert model == detect.init_detector(pretrained, seed=1)


def test_detector_loss_gradients(pretrained):
    model = detect.cast_model(detect.init_detector(pretrained, seed=0), np.float64)
    image = noise_image(3)

    def loss_and_grads():
        return detect.detector_loss(model, image, GT, seed=0, proposals=PROPOSALS)

    loss, grads = loss_and_grads()
    assert np.isfinite(loss)
    assert list(grads) == list(model.parameters())
    assert nn.numeric_gradient_check(model.parameters(), loss_and_grads, n_checks=120) <= 1e-3


def test_detector_loss_without_gts(pretrained):
    model = detect.init_detector(pretrained)
    loss, grads = detect.detector_loss(model, noise_image(), np.zeros((0, 4)))

    assert np.isfinite(loss)
    assert not grads["roi.reg_w"].any()


def test_detect_zero_heads_finds_nothing(pretrained):
    model = detect.init_detector(pretrained, zero_heads=True)
    image = GrayImage.from_array(np.full((64, 96), 128))

    assert detect.detect(model, image) == []


def test_detect_contract(pretrained):
    model = detect.init_detector(pretrained, seed=2)
    image = noise_image(4, width=96)
    found = detect.detect(model, image, score_thresh=0.0)

    assert found == detect.detect(model, image, score_thresh=0.0)
    for d in found:
        assert d.score >= 0.0
        assert 0 <= d.box.xmin < d.box.xmax <= 96
        assert 0 <= d.box.ymin < d.box.ymax <= 64


def test_crop_for_training():
    rng = np.random.default_rng(0)
    image = noise_image(width=400, height=300)
    crop, boxes = detect.crop_for_training(image, np.array([[300.0, 200.0, 340.0, 240.0]]), rng, 256)

    assert (crop.width, crop.height) == (256, 256)
    assert len(boxes) == 1
    assert boxes[0, 2] - boxes[0, 0] == 40


def test_train_detector_zero_epochs(labelled_dir, pretrained):
    model, history = detect.train_detector([labelled_dir(count=2)], pretrained, seed=5, epochs=0)
    fresh = detect.init_detector(pretrained, 5)

    assert history == []
    for name, value in fresh.parameters().items():
        assert np.array_equal(model.parameters()[name], value)
    assert model.config["seed"] == 5


def test_train_detector_is_deterministic(labelled_dir, pretrained):
    directory = labelled_dir(count=2)
    a, _ = detect.train_detector([directory], pretrained, seed=1, epochs=1)
    b, _ = detect.train_detector([directory], pretrained, seed=1, epochs=1)

    assert a == b


def test_train_detector_empty(tmp_path, pretrained):
    with pytest.raises(EmptyDataset):
        detect.train_detector([str(tmp_path)], pretrained)


def test_model_roundtrip(tmp_path, pretrained):
    model = detect.init_detector(pretrained, seed=3, config={"seed": 3, "lr": 0.001})
    path = str(tmp_path / "model.gpnw")
    detect.save_model(path, model)

    assert detect.load_model(path) == model


def test_load_model_rejects_backbone_file(tmp_path, pretrained):
    path = str(tmp_path / "backbone.gpnw")
    nn.save_weights(path, pretrained)

    with pytest.raises(BadWeights):
        detect.load_model(path)


def test_load_model_rejects_wrong_shapes(tmp_path, pretrained):
    model = detect.init_detector(pretrained)
    model.rpn["w"] = model.rpn["w"][:12]
    path = str(tmp_path / "model.gpnw")
    detect.save_model(path, model)

    with pytest.raises(BadWeights):
        detect.load_model(path)


@pytest.mark.slow
def test_overfits_small_dataset(labelled_dir, pretrained):
    directory = labelled_dir(count=20, width=96, height=64)
    model, history = detect.train_detector([directory], pretrained, seed=0, epochs=50)

    assert history[-1]["loss"] < 0.25 * history[0]["loss"]
    hits = 0

    for _, image, boxes in load_dataset(directory):
        found = detect.detect(model, image)
        hits += any(iou(d.box, boxes[0]) >= 0.5 for d in found)
    assert hits >= 18
