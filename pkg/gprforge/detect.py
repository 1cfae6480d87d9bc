"""
    Two-stage hyperbola detector: a region proposal network and an ROI head
    sharing the pretrained convolutional backbone.
"""

import logging
import math
import os
from collections import OrderedDict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml
from tqdm import tqdm

from gprforge import nn
from gprforge.annotate import load_dataset
from gprforge.exceptions import BadWeights, DivergedTraining, EmptyDataset
from gprforge.models import AnchorSet, BBox, Detection, DetectorModel, GrayImage

log = logging.getLogger(__name__)

STRIDE = 8
ANCHOR_SCALES = (16, 32, 64)
ANCHOR_RATIOS = (1.0, 2.0)
N_ANCHORS = len(ANCHOR_SCALES) * len(ANCHOR_RATIOS)
ROI_SIZE = 4
FEATURES = nn.BACKBONE_BLOCKS[-1][0]
MAX_LOG_SCALE = math.log(1000.0 / 16.0)

DEFAULTS = {
    "pos_iou": 0.7,
    "neg_iou": 0.3,
    "rpn_batch": 128,
    "train_pre_nms": 300,
    "train_post_nms": 64,
    "train_nms": 0.7,
    "roi_pos_iou": 0.7,
    "roi_neg_iou": 0.3,
    "test_pre_nms": 300,
    "test_post_nms": 50,
    "score_thresh": 0.7,
    "nms_thresh": 0.3,
    "crop": 256,
}


# Box utilities on (N, 4) arrays of xmin, ymin, xmax, ymax


def gen_anchors(feat_w: int, feat_h: int, stride: int = STRIDE, scales=ANCHOR_SCALES, ratios=ANCHOR_RATIOS) -> AnchorSet:
    # Area-preserving ratios: w = round(s * sqrt(r)), h = round(s / sqrt(r))
    shapes = np.array(
        [(round(s * math.sqrt(r)), round(s / math.sqrt(r))) for s in scales for r in ratios],
        dtype=np.float64,
    )
    cy, cx = np.meshgrid((np.arange(feat_h) + 0.5) * stride, (np.arange(feat_w) + 0.5) * stride, indexing="ij")
    centers = np.stack([cx.ravel(), cy.ravel()], axis=1)[:, None, :]
    half = shapes[None, :, :] / 2.0
    boxes = np.concatenate([centers - half, centers + half], axis=2).reshape(-1, 4)

    return AnchorSet(boxes, feat_w, feat_h, stride)


def box_centers(boxes: np.ndarray):
    w = boxes[:, 2] - boxes[:, 0]
    h = boxes[:, 3] - boxes[:, 1]
    return boxes[:, 0] + 0.5 * w, boxes[:, 1] + 0.5 * h, w, h


def encode_boxes(anchors: np.ndarray, gts: np.ndarray) -> np.ndarray:
    ax, ay, aw, ah = box_centers(anchors)
    gx, gy, gw, gh = box_centers(gts)
    return np.stack([(gx - ax) / aw, (gy - ay) / ah, np.log(gw / aw), np.log(gh / ah)], axis=1)


def decode_boxes(anchors: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    ax, ay, aw, ah = box_centers(anchors)
    x = deltas[:, 0] * aw + ax
    y = deltas[:, 1] * ah + ay
    w = aw * np.exp(np.minimum(deltas[:, 2], MAX_LOG_SCALE))
    h = ah * np.exp(np.minimum(deltas[:, 3], MAX_LOG_SCALE))
    return np.stack([x - w / 2.0, y - h / 2.0, x + w / 2.0, y + h / 2.0], axis=1)


def encode_box(anchor: BBox, gt: BBox) -> Tuple[float, float, float, float]:
    t = encode_boxes(np.array([anchor.as_tuple()], dtype=np.float64), np.array([gt.as_tuple()], dtype=np.float64))
    return tuple(float(v) for v in t[0])


def decode_box(anchor: BBox, t: Sequence[float]) -> BBox:
    box = decode_boxes(np.array([anchor.as_tuple()], dtype=np.float64), np.array([t], dtype=np.float64))
    return BBox(*(float(v) for v in box[0]), class_id=anchor.class_id)


def clip_boxes(boxes: np.ndarray, width: int, height: int) -> np.ndarray:
    out = boxes.copy()
    out[:, [0, 2]] = np.clip(out[:, [0, 2]], 0, width)
    out[:, [1, 3]] = np.clip(out[:, [1, 3]], 0, height)
    return out


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def assign_anchors(anchors: np.ndarray, gts: np.ndarray, pos_iou: float = 0.7, neg_iou: float = 0.3):
    """Labels 1 (positive), 0 (negative), -1 (ignore) plus the matched gt
    index per anchor. Each gt's best anchors (ties included) are positive."""
    anchors = anchors.boxes if isinstance(anchors, AnchorSet) else anchors
    n = len(anchors)
    if len(gts) == 0:
        return np.zeros(n, dtype=np.int64), np.full(n, -1, dtype=np.int64)

    overlaps = iou_matrix(anchors, gts)
    assigned = overlaps.argmax(axis=1)
    best = overlaps.max(axis=1)
    labels = np.full(n, -1, dtype=np.int64)
    labels[best < neg_iou] = 0
    labels[best >= pos_iou] = 1

    gt_best = overlaps.max(axis=0)
    for g in range(len(gts)):
        if gt_best[g] > 0:
            winners = np.flatnonzero(overlaps[:, g] == gt_best[g])
        else:
            winners = np.array([int(np.argmax(overlaps[:, g]))])
        labels[winners] = 1
        assigned[winners] = g

    return labels, assigned


def nms_indices(boxes: np.ndarray, scores: np.ndarray, iou_thresh: float) -> List[int]:
    # Greedy; equal scores keep the lower index first
    order = np.argsort(-scores, kind="stable")
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    keep = []
    while order.size > 0:
        i = order[0]
        keep.append(int(i))
        rest = order[1:]
        iw = np.maximum(0.0, np.minimum(boxes[i, 2], boxes[rest, 2]) - np.maximum(boxes[i, 0], boxes[rest, 0]))
        ih = np.maximum(0.0, np.minimum(boxes[i, 3], boxes[rest, 3]) - np.maximum(boxes[i, 1], boxes[rest, 1]))
        inter = iw * ih
        union = areas[i] + areas[rest] - inter
        overlap = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
        order = rest[overlap <= iou_thresh]
    return keep


def nms(detections: Sequence[Detection], iou_thresh: float = 0.3) -> List[Detection]:
    if not detections:
        return []
    boxes = np.array([d.box.as_tuple() for d in detections], dtype=np.float64)
    scores = np.array([d.score for d in detections], dtype=np.float64)
    return [detections[i] for i in nms_indices(boxes, scores, iou_thresh)]


# ROI pooling


def roi_bins(start: float, end: float, size: int, limit: int) -> List[Tuple[int, int]]:
    # floor/ceil cell ranges per bin, at least one cell, clipped to the map
    edges = [start + (end - start) * k / size for k in range(size + 1)]
    bins = []
    for k in range(size):
        lo = math.floor(edges[k])
        hi = max(math.ceil(edges[k + 1]), lo + 1)
        bins.append((max(lo, 0), min(hi, limit)))
    return bins


def roi_pool_forward(feat: np.ndarray, box, output: int = ROI_SIZE, stride: int = STRIDE):
    """Max-pool a (C, H, W) feature map under an image-space box into
    (C, output, output). Empty bins give 0."""
    c, h, w = feat.shape
    xmin, ymin, xmax, ymax = (float(v) for v in (box.as_tuple() if isinstance(box, BBox) else box))
    xbins = roi_bins(xmin / stride, xmax / stride, output, w)
    ybins = roi_bins(ymin / stride, ymax / stride, output, h)
    out = np.zeros((c, output, output), dtype=feat.dtype)
    arg = np.full((c, output, output), -1, dtype=np.int64)
    flat = feat.reshape(c, -1)
    for by, (y0, y1) in enumerate(ybins):
        for bx, (x0, x1) in enumerate(xbins):
            if y1 <= y0 or x1 <= x0:
                continue
            cells = (np.arange(y0, y1)[:, None] * w + np.arange(x0, x1)[None, :]).ravel()
            region = flat[:, cells]
            best = region.argmax(axis=1)
            out[:, by, bx] = region[np.arange(c), best]
            arg[:, by, bx] = cells[best]
    return out, (feat.shape, arg)


def roi_pool_backward(dout: np.ndarray, cache) -> np.ndarray:
    shape, arg = cache
    c = shape[0]
    dfeat = np.zeros((c, shape[1] * shape[2]), dtype=dout.dtype)
    valid = arg >= 0
    channels = np.broadcast_to(np.arange(c)[:, None, None], arg.shape)
    np.add.at(dfeat, (channels[valid], arg[valid]), dout[valid])
    return dfeat.reshape(shape)


def roi_pool(feat: np.ndarray, box, output: int = ROI_SIZE, stride: int = STRIDE) -> np.ndarray:
    return roi_pool_forward(feat, box, output, stride)[0]


# Model


def init_detector(backbone: nn.Weights, seed: int = 0, zero_heads: bool = False, config: Optional[dict] = None) -> DetectorModel:
    """Pretrained convs, RPN 1x1 conv, ROI head seeded from the backbone's
    FC-64 when present."""
    rng = np.random.default_rng([seed, 7])
    net = nn.build_backbone(10, seed)
    net.load(backbone, strict=False)
    params = net.params()
    backbone_part = OrderedDict((k, v.copy()) for k, v in params.items() if k.startswith("conv"))

    def normal(shape, std):
        if zero_heads:
            return np.zeros(shape, dtype=np.float32)
        return (rng.standard_normal(shape) * std).astype(np.float32)

    rpn = OrderedDict(
        [
            ("w", normal((6 * N_ANCHORS, FEATURES, 1, 1), 0.01)),
            ("b", np.zeros(6 * N_ANCHORS, dtype=np.float32)),
        ]
    )
    roi = OrderedDict(
        [
            ("fc_w", params["fc1.w"].copy()),
            ("fc_b", params["fc1.b"].copy()),
            ("cls_w", normal((2, nn.HIDDEN), 0.01)),
            ("cls_b", np.zeros(2, dtype=np.float32)),
            ("reg_w", normal((4, nn.HIDDEN), 0.001)),
            ("reg_b", np.zeros(4, dtype=np.float32)),
        ]
    )
    return DetectorModel(backbone_part, rpn, roi, dict(config or {}))


def cast_model(model: DetectorModel, dtype) -> DetectorModel:
    def cast(section):
        return OrderedDict((k, v.astype(dtype)) for k, v in section.items())

    return DetectorModel(cast(model.backbone), cast(model.rpn), cast(model.roi), dict(model.config))


def backbone_forward(params: nn.Weights, x: np.ndarray):
    caches = []
    for k in range(1, len(nn.BACKBONE_BLOCKS) + 1):
        x, conv_cache = nn.conv2d_forward(x, params[f"conv{k}.w"], params[f"conv{k}.b"], nn.BACKBONE_PAD, 1)
        pre = x
        x = nn.relu(x)
        x, pool_cache = nn.maxpool2_forward(x)
        caches.append((conv_cache, pre, pool_cache))
    return x, caches


def backbone_backward(dout: np.ndarray, caches) -> nn.Weights:
    grads = OrderedDict()
    for k in range(len(caches), 0, -1):
        conv_cache, pre, pool_cache = caches[k - 1]
        dout = nn.maxpool2_backward(dout, pool_cache)
        dout = nn.relu_backward(dout, pre)
        dout, grads[f"conv{k}.w"], grads[f"conv{k}.b"] = nn.conv2d_backward(dout, conv_cache)
    return OrderedDict(sorted(grads.items()))


def rpn_outputs(rpn_map: np.ndarray):
    # (6A, H, W) -> objectness (H*W*A, 2) and deltas (H*W*A, 4)
    a = N_ANCHORS
    _, h, w = rpn_map.shape
    obj = rpn_map[: 2 * a].reshape(a, 2, h, w).transpose(2, 3, 0, 1).reshape(-1, 2)
    reg = rpn_map[2 * a:].reshape(a, 4, h, w).transpose(2, 3, 0, 1).reshape(-1, 4)
    return obj, reg


def rpn_map_grad(dobj: np.ndarray, dreg: np.ndarray, h: int, w: int) -> np.ndarray:
    a = N_ANCHORS
    gobj = dobj.reshape(h, w, a, 2).transpose(2, 3, 0, 1).reshape(2 * a, h, w)
    greg = dreg.reshape(h, w, a, 4).transpose(2, 3, 0, 1).reshape(4 * a, h, w)
    return np.concatenate([gobj, greg], axis=0)


def image_tensor(image, dtype=np.float32) -> np.ndarray:
    pixels = image.pixels if isinstance(image, GrayImage) else np.asarray(image)
    return (pixels.astype(np.float64) / 255.0).astype(dtype)[None, None]


def propose(anchors: AnchorSet, obj: np.ndarray, reg: np.ndarray, width: int, height: int, pre_nms: int, post_nms: int, nms_thresh: float):
    """Decoded, clipped, NMS-filtered proposals and their fg scores."""
    scores = nn.softmax(obj.astype(np.float64))[:, 1]
    boxes = clip_boxes(decode_boxes(anchors.boxes, reg.astype(np.float64)), width, height)
    ok = (boxes[:, 2] - boxes[:, 0] >= 1) & (boxes[:, 3] - boxes[:, 1] >= 1)
    idx = np.flatnonzero(ok)
    idx = idx[np.argsort(-scores[idx], kind="stable")][:pre_nms]
    keep = nms_indices(boxes[idx], scores[idx], nms_thresh)[:post_nms]
    return boxes[idx[keep]], scores[idx[keep]]


def roi_head_forward(roi: nn.Weights, feat: np.ndarray, rois: np.ndarray):
    pooled, caches = [], []
    for box in rois:
        out, cache = roi_pool_forward(feat, box)
        pooled.append(out.reshape(-1))
        caches.append(cache)
    flat = np.stack(pooled) if pooled else np.zeros((0, FEATURES * ROI_SIZE * ROI_SIZE), dtype=feat.dtype)
    pre = nn.fc(flat, roi["fc_w"], roi["fc_b"])
    hidden = nn.relu(pre)
    cls = nn.fc(hidden, roi["cls_w"], roi["cls_b"])
    reg = nn.fc(hidden, roi["reg_w"], roi["reg_b"])
    return cls, reg, (flat, pre, hidden, caches)


def roi_head_backward(roi: nn.Weights, dcls, dreg, cache, feat_shape):
    flat, pre, hidden, caches = cache
    grads = OrderedDict()
    dh_cls, grads["cls_w"], grads["cls_b"] = nn.fc_backward(dcls, hidden, roi["cls_w"])
    dh_reg, grads["reg_w"], grads["reg_b"] = nn.fc_backward(dreg, hidden, roi["reg_w"])
    dpre = nn.relu_backward(dh_cls + dh_reg, pre)
    dflat, grads["fc_w"], grads["fc_b"] = nn.fc_backward(dpre, flat, roi["fc_w"])
    dfeat = np.zeros(feat_shape, dtype=dflat.dtype)
    for k, c in enumerate(caches):
        dfeat += roi_pool_backward(dflat[k].reshape(FEATURES, ROI_SIZE, ROI_SIZE), c)
    ordered = OrderedDict((k, grads[k]) for k in roi)
    return ordered, dfeat


def sample_labels(labels: np.ndarray, rng: np.random.Generator, per_class: int) -> np.ndarray:
    pos = rng.permutation(np.flatnonzero(labels == 1))[:per_class]
    neg = rng.permutation(np.flatnonzero(labels == 0))[:per_class]
    return np.sort(np.concatenate([pos, neg]))


def detector_loss(
    model: DetectorModel,
    image,
    gts: np.ndarray,
    seed=0,
    proposals: Optional[np.ndarray] = None,
    config: Optional[dict] = None,
):
    """Joint RPN + ROI loss for one image and gradients keyed like
    model.parameters(). Proposals are treated as constants."""
    cfg = {**DEFAULTS, **(config or {})}
    rng = np.random.default_rng(seed)
    dtype = model.rpn["w"].dtype
    x = image_tensor(image, dtype)
    height, width = x.shape[2:]
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 4)

    feat, bb_caches = backbone_forward(model.backbone, x)
    _, _, fh, fw = feat.shape
    rpn_map, rpn_cache = nn.conv2d_forward(feat, model.rpn["w"], model.rpn["b"], 0, 1)
    obj, reg = rpn_outputs(rpn_map[0])

    # RPN: sampled objectness + regression on positives
    anchors = gen_anchors(fw, fh)
    labels, assigned = assign_anchors(anchors.boxes, gts, cfg["pos_iou"], cfg["neg_iou"])
    sampled = sample_labels(labels, rng, cfg["rpn_batch"])
    dobj = np.zeros_like(obj)
    dreg = np.zeros_like(reg)
    rpn_cls, g = nn.softmax_cross_entropy(obj[sampled], labels[sampled])
    dobj[sampled] = g
    pos = sampled[labels[sampled] == 1]
    rpn_reg = 0.0
    if len(pos):
        targets = encode_boxes(anchors.boxes[pos], gts[assigned[pos]]).astype(dtype)
        rpn_reg, g = nn.smooth_l1_loss(reg[pos], targets, normalizer=len(pos))
        dreg[pos] = g

    # ROI head on proposals plus the ground truth
    if proposals is None:
        proposals, _ = propose(anchors, obj, reg, width, height, cfg["train_pre_nms"], cfg["train_post_nms"], cfg["train_nms"])
        proposals = np.concatenate([proposals, gts], axis=0)
    rois = np.asarray(proposals, dtype=np.float64).reshape(-1, 4)
    roi_labels, roi_assigned = assign_roi_labels(rois, gts, cfg["roi_pos_iou"], cfg["roi_neg_iou"])
    keep = np.flatnonzero(roi_labels >= 0)
    rois, roi_labels, roi_assigned = rois[keep], roi_labels[keep], roi_assigned[keep]

    cls, rreg, head_cache = roi_head_forward(model.roi, feat[0], rois)
    roi_cls, dcls = nn.softmax_cross_entropy(cls, roi_labels)
    drreg = np.zeros_like(rreg)
    roi_reg = 0.0
    fg = np.flatnonzero(roi_labels == 1)
    if len(fg):
        targets = encode_boxes(rois[fg], gts[roi_assigned[fg]]).astype(dtype)
        roi_reg, g = nn.smooth_l1_loss(rreg[fg], targets, normalizer=len(fg))
        drreg[fg] = g

    roi_grads, dfeat_roi = roi_head_backward(model.roi, dcls.astype(dtype), drreg, head_cache, feat[0].shape)
    drpn_map = rpn_map_grad(dobj, dreg, fh, fw)[None]
    dfeat, rpn_w, rpn_b = nn.conv2d_backward(drpn_map.astype(dtype), rpn_cache)
    dfeat = dfeat + dfeat_roi[None]
    bb_grads = backbone_backward(dfeat, bb_caches)

    grads = OrderedDict()
    for k in model.backbone:
        grads[f"backbone.{k}"] = bb_grads[k]
    grads["rpn.w"], grads["rpn.b"] = rpn_w, rpn_b
    for k, v in roi_grads.items():
        grads[f"roi.{k}"] = v

    total = rpn_cls + rpn_reg + roi_cls + roi_reg
    return float(total), grads


def assign_roi_labels(rois: np.ndarray, gts: np.ndarray, pos_iou: float, neg_iou: float):
    # Same thresholds as the anchors, without the argmax rule
    if len(gts) == 0:
        return np.zeros(len(rois), dtype=np.int64), np.full(len(rois), -1, dtype=np.int64)
    overlaps = iou_matrix(rois, gts)
    best = overlaps.max(axis=1)
    labels = np.full(len(rois), -1, dtype=np.int64)
    labels[best < neg_iou] = 0
    labels[best >= pos_iou] = 1
    return labels, overlaps.argmax(axis=1)


def crop_for_training(image: GrayImage, boxes: np.ndarray, rng: np.random.Generator, size: int = 256):
    """Crop images larger than size x size to a window holding a gt."""
    h, w = image.height, image.width
    if h <= size and w <= size:
        return image, boxes
    cw, ch = min(size, w), min(size, h)
    if len(boxes):
        b = boxes[int(rng.integers(len(boxes)))]
        x_lo = int(max(0, min(b[2] - cw, w - cw)))
        x_hi = int(min(max(b[0], 0), w - cw))
        y_lo = int(max(0, min(b[3] - ch, h - ch)))
        y_hi = int(min(max(b[1], 0), h - ch))
        x0 = int(rng.integers(min(x_lo, x_hi), max(x_lo, x_hi) + 1))
        y0 = int(rng.integers(min(y_lo, y_hi), max(y_lo, y_hi) + 1))
    else:
        x0 = int(rng.integers(0, w - cw + 1))
        y0 = int(rng.integers(0, h - ch + 1))
    pixels = image.pixels[y0:y0 + ch, x0:x0 + cw]
    shifted = clip_boxes(np.asarray(boxes, dtype=np.float64).reshape(-1, 4) - [x0, y0, x0, y0], cw, ch)
    valid = (shifted[:, 2] - shifted[:, 0] >= 2) & (shifted[:, 3] - shifted[:, 1] >= 2)
    return GrayImage.from_array(pixels), shifted[valid]


def boxes_array(boxes: Sequence[BBox]) -> np.ndarray:
    return np.array([b.as_tuple() for b in boxes], dtype=np.float64).reshape(-1, 4)


def train_detector(
    data_dirs: Sequence[str],
    pretrained: nn.Weights,
    config: Optional[dict] = None,
    seed: int = 0,
    epochs: int = 50,
    lr: float = 0.001,
    momentum: float = 0.9,
    weight_decay: float = 5e-4,
) -> Tuple[DetectorModel, List[dict]]:
    """Joint training, one SGD step per image; returns the model and one
    {epoch, loss} record per epoch."""
    cfg = {**DEFAULTS, **(config or {})}
    items = [item for d in data_dirs for item in load_dataset(d)]
    if not items:
        raise EmptyDataset(subject=", ".join(data_dirs))

    snapshot = {
        "seed": int(seed),
        "epochs": int(epochs),
        "lr": float(lr),
        "momentum": float(momentum),
        "weight_decay": float(weight_decay),
        "data": [str(d) for d in data_dirs],
        "detector": {k: cfg[k] for k in DEFAULTS},
    }
    model = init_detector(pretrained, seed, config=snapshot)
    optimizer = nn.SGD(lr, momentum, weight_decay)
    rng = np.random.default_rng([seed, 3])
    history = []

    for epoch in tqdm(range(epochs), disable=None, desc="train"):
        total = 0.0
        for step, k in enumerate(rng.permutation(len(items))):
            index, image, boxes = items[k]
            image, gts = crop_for_training(image, boxes_array(boxes), rng, cfg["crop"])
            loss, grads = detector_loss(model, image, gts, seed=[seed, epoch, step], config=cfg)
            if not np.isfinite(loss):
                raise DivergedTraining(subject=f"epoch {epoch + 1}, image {index}")
            optimizer.step(model.parameters(), grads)
            total += loss
        history.append({"epoch": epoch + 1, "loss": total / len(items)})
        log.info(f"Epoch {epoch + 1}/{epochs}: mean loss {total / len(items):.4f}")

    return model, history


def detect(
    model: DetectorModel,
    image: GrayImage,
    score_thresh: float = 0.7,
    nms_thresh: float = 0.3,
    pre_nms: int = 300,
    post_nms: int = 50,
    proposal_nms: float = 0.7,
) -> List[Detection]:
    x = image_tensor(image, model.rpn["w"].dtype)
    feat, _ = backbone_forward(model.backbone, x)
    _, _, fh, fw = feat.shape
    rpn_map, _ = nn.conv2d_forward(feat, model.rpn["w"], model.rpn["b"], 0, 1)
    obj, reg = rpn_outputs(rpn_map[0])
    rois, _ = propose(gen_anchors(fw, fh), obj, reg, image.width, image.height, pre_nms, post_nms, proposal_nms)
    if len(rois) == 0:
        return []

    cls, rreg, _ = roi_head_forward(model.roi, feat[0], rois)
    scores = nn.softmax(cls.astype(np.float64))[:, 1]
    boxes = clip_boxes(decode_boxes(rois, rreg.astype(np.float64)), image.width, image.height)
    ok = (scores >= score_thresh) & (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
    found = [
        Detection(BBox(*(float(v) for v in boxes[k]), class_id=0, score=float(scores[k])), float(scores[k]))
        for k in np.flatnonzero(ok)
    ]
    return nms(found, nms_thresh)


def model_artifacts(path: str) -> List[str]:
    """Files written by save_model for `path`."""
    return [path, config_sidecar(path)]


def config_sidecar(path: str) -> str:
    return path + ".yaml"


def save_model(path: str, model: DetectorModel):
    # GPNW tensors with a `detector` header; training config in a YAML sidecar
    header = np.array([1.0, STRIDE, ROI_SIZE, N_ANCHORS], dtype=np.float32)
    weights = OrderedDict([("detector", header)])
    weights.update(model.parameters())
    nn.save_weights(path, weights)
    with open(config_sidecar(path), "w") as file:
        yaml.safe_dump(model.config, file, sort_keys=True)


def load_model(path: str) -> DetectorModel:
    weights = nn.load_weights(path)
    if "detector" not in weights:
        raise BadWeights(subject=f"{path} has no detector header")
    sections = {"backbone": OrderedDict(), "rpn": OrderedDict(), "roi": OrderedDict()}
    for name, value in weights.items():
        if name == "detector":
            continue
        section, _, key = name.partition(".")
        if section not in sections or not key:
            raise BadWeights(subject=f"unexpected tensor '{name}'")
        sections[section][key] = value
    config = {}
    if os.path.exists(config_sidecar(path)):
        with open(config_sidecar(path), "r") as file:
            config = yaml.load(file, Loader=yaml.FullLoader) or {}
    model = DetectorModel(sections["backbone"], sections["rpn"], sections["roi"], config)
    expected = init_detector({}, 0)
    for section in ("backbone", "rpn", "roi"):
        for key, value in getattr(expected, section).items():
            got = getattr(model, section).get(key)
            if got is None or got.shape != value.shape:
                raise BadWeights(subject=f"{section}.{key}")
    return model
