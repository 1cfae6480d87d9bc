"""
    Classical hyperbola detectors: randomized Hough transform, template
    dictionary matching and a HOG sliding-window classifier.
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage
from scipy.special import comb

from gprforge import fdtd, nn
from gprforge.annotate import flank_reach, hyperbola_bbox, preset_config, scan_geometry, wave_velocity
from gprforge.detect import nms
from gprforge.exceptions import DegenerateTriple, EmptyDataset, ObjectNotImageable
from gprforge.models import BBox, Detection, GenConfig, GrayImage, HyperbolaFit

log = logging.getLogger(__name__)

HOG_WINDOW = 32
HOG_CELL = 8
HOG_BINS = 9
HOG_EPS = 1e-6
HOG_DIMS = 3 * 3 * 4 * HOG_BINS


def pixel_spacing(cfg: Optional[GenConfig] = None) -> Tuple[float, float]:
    """(dt, dx) of one image row and column for a generator preset."""
    cfg = cfg or preset_config("simulated")
    scan = scan_geometry(cfg)
    return cfg.time_window / cfg.image_height, scan.spacing()


def image_array(image) -> np.ndarray:
    pixels = image.pixels if isinstance(image, GrayImage) else np.asarray(image)
    return pixels.astype(np.float64)


# Randomized Hough transform


def solve_triple(xs: Sequence[float], ts: Sequence[float]) -> Tuple[float, float, float]:
    """Exact (x0, t0, v) of t^2 = t0^2 + (4 / v^2)(x - x0)^2 through three
    points, fitted as u = t^2 = a x^2 + b x + c."""
    xs = np.asarray(xs, dtype=np.float64)
    u = np.asarray(ts, dtype=np.float64) ** 2
    A = np.column_stack([xs**2, xs, np.ones(3)])
    scale = max(float(np.abs(A).max()), 1.0) ** 3
    if abs(np.linalg.det(A)) < 1e-12 * scale:
        raise DegenerateTriple(subject="collinear in (x, t^2)")
    a, b, c = np.linalg.solve(A, u)
    if a <= 0:
        raise DegenerateTriple(subject=f"a={a:.3e}")
    x0 = -b / (2.0 * a)
    t0_sq = c - a * x0**2
    if t0_sq <= 0:
        raise DegenerateTriple(subject=f"t0^2={t0_sq:.3e}")
    return float(x0), float(math.sqrt(t0_sq)), float(2.0 / math.sqrt(a))


def edge_points(image, edge_percentile: float = 97.0) -> Tuple[np.ndarray, np.ndarray]:
    # Per-trace extrema of the background-centred amplitude above the
    # percentile; returns (columns, rows)
    x = image_array(image)
    centred = np.abs(x - np.median(x))
    if not centred.any():
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    level = np.percentile(centred, edge_percentile)
    padded = np.pad(centred, ((1, 1), (0, 0)))
    peak = (centred >= padded[:-2]) & (centred > padded[2:]) & (centred >= level) & (centred > 0)
    rows, cols = np.nonzero(peak)
    order = np.lexsort((rows, cols))
    return cols[order], rows[order]


def hough_detect(
    image,
    edge_percentile: float = 97.0,
    n_samples: int = 4000,
    bins: Sequence[int] = (32, 24, 16),
    min_votes: int = 40,
    seed: int = 0,
    dt: float = 1.0,
    dx: float = 1.0,
    v_range: Optional[Tuple[float, float]] = None,
    period: float = 4.0,
    tail_drop: float = 0.5,
    nms_thresh: float = 0.3,
) -> List[HyperbolaFit]:
    """Sample edge-point triples, vote (x0, t0, v) into a binned
    accumulator and return one fit per local peak with at least
    min_votes votes. `period` is the wavelet length in rows."""
    pixels = image_array(image)
    height, width = pixels.shape
    cols, rows = edge_points(pixels, edge_percentile)
    if len(cols) < 3:
        return []
    v_range = v_range or (0.25 * dx / dt, 8.0 * dx / dt)
    xs, ts = cols * dx, rows * dt

    rng = np.random.default_rng(seed)
    n_draws = min(int(n_samples), int(comb(len(cols), 3, exact=True)))
    params, skipped = [], 0
    for _ in range(n_draws):
        pick = rng.choice(len(cols), 3, replace=False)
        try:
            params.append(solve_triple(xs[pick], ts[pick]))
        except DegenerateTriple:
            skipped += 1
    if skipped > n_draws // 2:
        log.warning(f"Skipped {skipped}/{n_draws} degenerate triples")
    else:
        log.debug(f"Skipped {skipped}/{n_draws} degenerate triples")
    if not params:
        return []

    params = np.array(params)
    ranges = [(0.0, width * dx), (0.0, height * dt), tuple(v_range)]
    inside = np.all([(params[:, k] >= lo) & (params[:, k] < hi) for k, (lo, hi) in enumerate(ranges)], axis=0)
    params = params[inside]
    if len(params) == 0:
        return []
    acc, _ = np.histogramdd(params, bins=list(bins), range=ranges)

    cells = np.stack(
        [np.clip(((params[:, k] - lo) / (hi - lo) * n).astype(np.int64), 0, n - 1) for k, ((lo, hi), n) in enumerate(zip(ranges, bins))],
        axis=1,
    )
    peaks = np.argwhere((acc == ndimage.maximum_filter(acc, size=3, mode="constant")) & (acc >= min_votes))
    top = acc.max()
    fits = []
    for peak in peaks:
        votes = int(acc[tuple(peak)])
        x0, t0, v = params[np.all(cells == peak, axis=1)].mean(axis=0)
        try:
            box = fit_box(x0, t0, v, dt, dx, period, tail_drop, width, height)
        except ObjectNotImageable:
            continue
        box.score = votes / top
        fits.append(HyperbolaFit(float(x0), float(t0), float(v), votes, box))

    fits.sort(key=lambda f: -f.votes)
    kept = {id(d.box) for d in nms([Detection(f.box, f.box.score) for f in fits], nms_thresh)}
    return [f for f in fits if id(f.box) in kept]


def fit_box(x0, t0, v, dt, dx, period, tail_drop, width, height) -> BBox:
    # Same flank geometry as the dataset labels
    reach = flank_reach(v * t0 / 2.0, tail_drop)
    tail = math.sqrt(t0**2 + 4.0 * reach**2 / v**2)
    return hyperbola_bbox(int(round(x0 / dx)), int(round(reach / dx)), t0, tail, period * dt, dt, width, height)


def hough_detections(fits: Sequence[HyperbolaFit]) -> List[Detection]:
    return [Detection(f.box, f.box.score) for f in fits]


# Template matching


def hyperbola_template(
    depth: float,
    eps_r: float,
    size: Tuple[int, int] = (32, 64),
    dt: Optional[float] = None,
    dx: Optional[float] = None,
    center_freq: Optional[float] = None,
) -> np.ndarray:
    """Ricker band along the travel-time curve of a point scatterer at
    `depth`, apex at the top quarter of a (rows, cols) template."""
    if dt is None or dx is None:
        dt, dx = pixel_spacing()
    rows, cols = size
    fc = center_freq or 1.0 / (4.0 * dt)
    v = wave_velocity(eps_r)
    offsets = (np.arange(cols) - (cols - 1) / 2.0) * dx
    arrival = 2.0 * np.sqrt(depth**2 + offsets**2) / v - 2.0 * depth / v + (rows // 4) * dt
    t = np.arange(rows)[:, None] * dt

    return fdtd.ricker(t - arrival[None, :], fc, 0.0)


def template_dictionary(
    depths: Sequence[float] = (0.3, 0.6, 0.9),
    eps_r: float = 6.0,
    size: Tuple[int, int] = (32, 64),
    dt: Optional[float] = None,
    dx: Optional[float] = None,
) -> List[np.ndarray]:
    return [hyperbola_template(d, eps_r, size, dt, dx) for d in depths]


def ncc_map(image, template: np.ndarray) -> np.ndarray:
    """Normalized cross-correlation at every valid offset, (rows, cols) of
    the template's top-left corner. Zero-variance windows score 0."""
    x = image_array(image)
    tpl = np.asarray(template, dtype=np.float64)
    h, w = tpl.shape
    if x.shape[0] < h or x.shape[1] < w:
        return np.zeros((0, 0))
    tpl = tpl - tpl.mean()
    tnorm = math.sqrt(float((tpl**2).sum()))
    windows = sliding_window_view(x, (h, w))
    if tnorm == 0:
        return np.zeros(windows.shape[:2])

    n = h * w
    sums = windows.sum(axis=(2, 3))
    var_sum = (windows**2).sum(axis=(2, 3)) - sums**2 / n
    numerator = np.einsum("ijkl,kl->ij", windows, tpl)
    flat = var_sum <= 1e-12 * np.maximum(1.0, (windows**2).sum(axis=(2, 3)))
    denom = np.sqrt(np.where(flat, 1.0, var_sum)) * tnorm
    return np.where(flat, 0.0, np.clip(numerator / denom, -1.0, 1.0))


def template_match(
    image,
    templates,
    threshold: float = 0.7,
    nms_thresh: float = 0.3,
) -> List[Detection]:
    # Score (s + 1) / 2 at local maxima, merged over the dictionary
    if isinstance(templates, np.ndarray) and templates.ndim == 2:
        templates = [templates]
    found = []
    for tpl in templates:
        score = (ncc_map(image, tpl) + 1.0) / 2.0
        if score.size == 0:
            continue
        h, w = np.asarray(tpl).shape
        peaks = (score == ndimage.maximum_filter(score, size=3, mode="nearest")) & (score >= threshold)
        for y, x in zip(*np.nonzero(peaks)):
            s = float(score[y, x])
            found.append(Detection(BBox(float(x), float(y), float(x + w), float(y + h), score=s), s))
    found.sort(key=lambda d: -d.score)
    return nms(found, nms_thresh)


# HOG + logistic regression


def hog_features(window) -> np.ndarray:
    """324-dim descriptor: 9 unsigned bins on 8x8 cells, 2x2-cell blocks,
    L2 normalised."""
    x = image_array(window)
    if x.shape != (HOG_WINDOW, HOG_WINDOW):
        x = nn.resize_patch(x, (HOG_WINDOW, HOG_WINDOW))
    p = np.pad(x, 1, mode="edge")
    gx = p[1:-1, 2:] - p[1:-1, :-2]
    gy = p[2:, 1:-1] - p[:-2, 1:-1]
    magnitude = np.hypot(gx, gy)
    angle = np.mod(np.arctan2(gy, gx), np.pi)

    # Linear vote between the two nearest bin centres
    pos = angle / (np.pi / HOG_BINS) - 0.5
    lo = np.floor(pos)
    frac = pos - lo
    lo = lo.astype(np.int64) % HOG_BINS
    hi = (lo + 1) % HOG_BINS
    n_cells = HOG_WINDOW // HOG_CELL
    cy, cx = np.indices(x.shape) // HOG_CELL
    hist = np.zeros((n_cells, n_cells, HOG_BINS))
    np.add.at(hist, (cy, cx, lo), (1.0 - frac) * magnitude)
    np.add.at(hist, (cy, cx, hi), frac * magnitude)

    blocks = []
    for i in range(n_cells - 1):
        for j in range(n_cells - 1):
            v = hist[i:i + 2, j:j + 2].ravel()
            blocks.append(v / math.sqrt(float((v**2).sum()) + HOG_EPS**2))
    return np.concatenate(blocks)


def hog_matrix(patches: np.ndarray) -> np.ndarray:
    patches = np.asarray(patches)
    if patches.ndim == 4:
        patches = patches[:, 0]
    return np.stack([hog_features(p) for p in patches]) if len(patches) else np.zeros((0, HOG_DIMS))


def train_hog(
    patches: np.ndarray,
    labels: np.ndarray,
    epochs: int = 40,
    lr: float = 0.1,
    batch_size: int = 64,
    momentum: float = 0.9,
    weight_decay: float = 0.0,
    seed: int = 0,
) -> nn.Network:
    """Logistic regression on HOG descriptors."""
    if len(labels) == 0:
        raise EmptyDataset(subject="HOG training patches")
    features = hog_matrix(patches)
    targets = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    rng = np.random.default_rng(seed)
    model = nn.Network([("fc", nn.Dense(HOG_DIMS, 1, rng))]).astype(np.float64)
    model.layers["fc"].params["w"][:] = 0.0
    optimizer = nn.SGD(lr, momentum, weight_decay)

    for epoch in range(epochs):
        order = rng.permutation(len(targets))
        total = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            loss, dlogits = nn.sigmoid_bce(model.forward(features[idx]), targets[idx])
            model.backward(dlogits)
            optimizer.step(model.params(), model.grads())
            total += loss * len(idx)
        log.debug(f"HOG epoch {epoch + 1}/{epochs}: loss {total / len(order):.4f}")

    return model


def hog_scores(model: nn.Network, features: np.ndarray) -> np.ndarray:
    if len(features) == 0:
        return np.zeros(0)
    return nn.sigmoid(model.forward(features)[:, 0])


def hog_detect(
    model: nn.Network,
    image,
    stride: int = 8,
    scales: Sequence[int] = (32, 48, 64),
    threshold: float = 0.7,
    nms_thresh: float = 0.3,
) -> List[Detection]:
    pixels = image_array(image) / 255.0
    height, width = pixels.shape
    found = []
    for s in scales:
        if s > height or s > width:
            continue
        corners = [(x, y) for y in range(0, height - s + 1, stride) for x in range(0, width - s + 1, stride)]
        features = np.stack([hog_features(pixels[y:y + s, x:x + s]) for x, y in corners])
        for (x, y), score in zip(corners, hog_scores(model, features)):
            if score >= threshold:
                found.append(Detection(BBox(float(x), float(y), float(x + s), float(y + s), score=float(score)), float(score)))
    found.sort(key=lambda d: -d.score)
    return nms(found, nms_thresh)
