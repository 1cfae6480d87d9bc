"""
    Hyperbola geometry, ground-truth boxes and annotated dataset generation.
"""

import logging
import math
import os
from multiprocessing.pool import ThreadPool
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from gprforge import fdtd, radargram
from gprforge.configuration import Configuration, load_config
from gprforge.exceptions import (
    GenerationError,
    GprForgeException,
    MalformedLabelLine,
    ObjectNotImageable,
    OutOfRangeValue,
    OutputExists,
)
from gprforge.models import (
    BBox,
    GenConfig,
    GrayImage,
    Material,
    ObjectSpec,
    Radargram,
    ScanGeometry,
    Scene,
    Waveform,
)
from gprforge.scene import (
    group_directives,
    parse_number,
    serialize_scene,
    tokenize_directives,
    whole_cells,
)

log = logging.getLogger(__name__)

HYPERBOLA_CLASS = 0
MANIFEST = "manifest.txt"
NUMBERED_SUFFIXES = (".pgm", ".txt", ".gprb", ".scene")
SCAN_MARGIN = 0.2
LAYER_SEGMENTS = 16


def wave_velocity(eps_r: float) -> float:
    return fdtd.C0 / math.sqrt(eps_r)


def hyperbola_travel_time(x, x0, d, v):
    # Zero-offset two-way time to a point scatterer at (x0, d)
    return 2.0 * np.sqrt(d**2 + (np.asarray(x, dtype=np.float64) - x0) ** 2) / v


def flank_reach(d: float, tail_drop: float = 0.5) -> float:
    """Lateral distance where d / sqrt(d^2 + dx^2) falls to tail_drop."""
    if not 0 < tail_drop <= 1:
        raise OutOfRangeValue(subject="tail_drop", reason=f"tail_drop must lie in (0, 1], got {tail_drop}")
    return d * math.sqrt(1.0 / tail_drop**2 - 1.0)


def object_distance(obj: ObjectSpec, x: float, z: float) -> float:
    # Shortest distance from (x, z) to the object's surface
    if obj.is_cylinder:
        xc, zc, r = obj.geometry
        return max(math.hypot(x - xc, z - zc) - r, 0.0)
    x1, z1, x2, z2 = obj.geometry
    return math.hypot(max(x1 - x, 0.0, x - x2), max(z1 - z, 0.0, z - z2))


def reflection_time(obj: ObjectSpec, s: Scene, x_tx: float) -> float:
    """Two-way time tx -> object -> rx for an antenna pair at x_tx."""
    v = wave_velocity(s.halfspace.eps_r)
    z = max(s.source_depth, 0.0)
    air = 2.0 * max(-s.source_depth, 0.0) / fdtd.C0
    return (object_distance(obj, x_tx, z) + object_distance(obj, x_tx + s.rx_offset, z)) / v + air


def hyperbola_bbox(
    c0: int,
    half_cols: int,
    apex_time: float,
    tail_time: float,
    period: float,
    dt: float,
    width: int,
    height: int,
    time_zero: float = 0.0,
) -> BBox:
    # Columns symmetric around c0; rows from half a period above the apex
    # to one period below the tail
    ymin = math.floor((apex_time - period / 2.0 - time_zero) / dt)
    ymax = math.ceil((tail_time + period - time_zero) / dt)
    box = BBox(c0 - half_cols, ymin, c0 + half_cols + 1, ymax, HYPERBOLA_CLASS).clip(width, height)
    if not box.is_valid():
        raise ObjectNotImageable(subject=f"at column {c0}")
    return box


def object_bbox(obj: ObjectSpec, s: Scene, r: Radargram, tail_drop: float = 0.5) -> BBox:
    fc = s.waveform.center_freq
    delay = fdtd.source_delay(fc)
    x0, _ = obj.apex()

    # Apex column: trace whose tx/rx midpoint is nearest x0
    x_start = s.scan.x_start
    c0 = int(round((x0 - s.rx_offset / 2.0 - x_start) / r.dx_m))
    apex_time = reflection_time(obj, s, x0 - s.rx_offset / 2.0) + delay
    if apex_time > r.time_zero + r.n_samples * r.dt:
        raise ObjectNotImageable(subject=obj.to_dict())

    d = object_distance(obj, x0, max(s.source_depth, 0.0))
    reach = flank_reach(d, tail_drop)
    half_cols = int(round(reach / r.dx_m))
    tail_time = delay + max(
        reflection_time(obj, s, x0 - s.rx_offset / 2.0 - reach),
        reflection_time(obj, s, x0 - s.rx_offset / 2.0 + reach),
    )

    return hyperbola_bbox(
        c0, half_cols, apex_time, tail_time, 1.0 / fc, r.dt, r.n_traces, r.n_samples, r.time_zero
    )


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    ih = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


# Generator configuration

RANGE_KEYS = ("eps_r", "sigma", "depth", "radius", "noise", "layer_eps_r", "lateral_gain")
INT_RANGE_KEYS = ("objects", "layers")
PAIR_KEYS = ("domain", "cell")
FLOAT_KEYS = ("time_window", "center_freq", "source_depth", "rx_offset", "tail_drop")
INT_KEYS = ("count", "seed", "n_traces", "image_height")
GEN_DIRECTIVES = {
    **{k: (2, False) for k in RANGE_KEYS + INT_RANGE_KEYS + PAIR_KEYS},
    **{k: (1, False) for k in FLOAT_KEYS + INT_KEYS},
    "preset": (1, False),
    "clutter": (1, False),
    "object_materials": (None, False),
    "material": (3, True),
    "noise_profile": (3, False),
}
BOOLEANS = {"on": True, "true": True, "yes": True, "1": True, "off": False, "false": False, "no": False, "0": False}


def preset_config(name: str = "simulated", config: Optional[dict] = None) -> GenConfig:
    config = config or load_config()
    presets = config["presets"]
    if name not in presets:
        raise OutOfRangeValue(subject="preset", reason=f"unknown preset '{name}'")
    values = {k: tuple(v) if isinstance(v, list) and k != "object_materials" else v for k, v in presets[name].items()}
    props = {k: tuple(v) for k, v in config.get("materials", {}).items()}
    return GenConfig(preset=name, material_props=props, **values)


def validate_gen_config(cfg: GenConfig, lines: Optional[Dict[str, int]] = None):
    lines = lines or {}

    def fail(key, message):
        raise OutOfRangeValue(subject=key, reason=message, line=lines.get(key))

    for key in RANGE_KEYS + INT_RANGE_KEYS:
        lo, hi = getattr(cfg, key)
        if not lo <= hi:
            fail(key, f"range '{key}' is empty: {lo} > {hi}")
    if cfg.eps_r[0] < 1 or cfg.layer_eps_r[0] < 1:
        fail("eps_r", "eps_r ranges must be >= 1")
    if cfg.sigma[0] < 0 or cfg.noise[0] < 0:
        fail("sigma", "sigma and noise ranges must be >= 0")
    if cfg.objects[0] < 0 or cfg.layers[0] < 0:
        fail("objects", "object and layer counts must be >= 0")
    if cfg.radius[0] <= 0 or cfg.depth[0] - cfg.radius[1] <= 0:
        fail("depth", "objects must lie fully below the surface")
    if cfg.depth[1] + cfg.radius[1] >= cfg.domain[1]:
        fail("depth", "objects must fit above the domain bottom")
    if cfg.count < 1 or cfg.n_traces < 2 or cfg.image_height < 8:
        fail("count", "need count >= 1, n_traces >= 2, image_height >= 8")
    if min(cfg.domain) <= 0 or min(cfg.cell) <= 0 or cfg.time_window <= 0 or cfg.center_freq <= 0:
        fail("domain", "domain, cell, time window and frequency must be > 0")
    elif not (whole_cells(cfg.domain[0], cfg.cell[0]) and whole_cells(cfg.domain[1], cfg.cell[1])):
        fail("cell", "domain must be a whole number of cells")
    if cfg.lateral_gain[0] <= 0:
        fail("lateral_gain", "lateral gain must be > 0")
    for name in cfg.object_materials:
        if name != "pec" and name not in cfg.material_props:
            fail("object_materials", f"material '{name}' has no properties")
    scan_width = cfg.domain[0] - 2 * SCAN_MARGIN - cfg.rx_offset
    if scan_width <= 0:
        fail("domain", "domain too narrow for the scan")


def parse_gen_config(text: Union[str, bytes], preset: Optional[str] = None) -> GenConfig:
    """GenConfig file: scene-style `#key: value` lines over a preset."""
    grouped = group_directives(tokenize_directives(text), GEN_DIRECTIVES)
    if "preset" in grouped:
        preset = grouped["preset"][0][0][0]
    cfg = preset_config(preset or "simulated")
    lines = {}

    for key, occurrences in grouped.items():
        args, line = occurrences[-1]
        lines[key] = line
        if key in RANGE_KEYS or key in PAIR_KEYS:
            setattr(cfg, key, tuple(parse_number(a, line) for a in args))
        elif key in INT_RANGE_KEYS:
            setattr(cfg, key, tuple(int(parse_number(a, line)) for a in args))
        elif key in FLOAT_KEYS:
            setattr(cfg, key, parse_number(args[0], line))
        elif key in INT_KEYS:
            setattr(cfg, key, int(parse_number(args[0], line)))
        elif key == "clutter":
            if args[0].lower() not in BOOLEANS:
                raise OutOfRangeValue(subject="clutter", line=line)
            cfg.clutter = BOOLEANS[args[0].lower()]
        elif key == "object_materials":
            cfg.object_materials = list(args)
        elif key == "material":
            cfg.material_props = dict(cfg.material_props)
            for margs, mline in occurrences:
                cfg.material_props[margs[0]] = (parse_number(margs[1], mline), parse_number(margs[2], mline))
        elif key == "noise_profile":
            cfg.noise_profile = (args[0], int(parse_number(args[1], line)), int(parse_number(args[2], line)))
    cfg.preset = preset or cfg.preset

    validate_gen_config(cfg, lines)
    return cfg


# Scene drawing


def scan_geometry(cfg: GenConfig) -> ScanGeometry:
    return ScanGeometry(SCAN_MARGIN, cfg.domain[0] - SCAN_MARGIN - cfg.rx_offset, cfg.n_traces)


def draw_layers(cfg: GenConfig, rng: np.random.Generator) -> Tuple[List[Material], List[ObjectSpec]]:
    # Dipping interfaces as staircases of boxes reaching the domain bottom
    width, depth = cfg.domain
    dz = cfg.cell[1]
    materials, objects = [], []
    n_layers = int(rng.integers(cfg.layers[0], cfg.layers[1] + 1)) if cfg.clutter else 0
    edges = np.linspace(0.0, width, LAYER_SEGMENTS + 1)
    for k in range(n_layers):
        name = f"layer{k}"
        materials.append(Material(name, float(rng.uniform(*cfg.layer_eps_r)), float(rng.uniform(*cfg.sigma))))
        z0 = rng.uniform(0.15 * depth, 0.9 * depth)
        slope = rng.uniform(-0.2, 0.2)
        for x1, x2 in zip(edges[:-1], edges[1:]):
            z_top = float(np.clip(z0 + slope * ((x1 + x2) / 2.0 - width / 2.0), dz, depth - 2 * dz))
            objects.append(ObjectSpec("box", name, (float(x1), z_top, float(x2), depth)))
    return materials, objects


def draw_targets(cfg: GenConfig, rng: np.random.Generator, scan: ScanGeometry) -> List[ObjectSpec]:
    # Cylinders, rejection-sampled so they do not touch each other
    n_objects = int(rng.integers(cfg.objects[0], cfg.objects[1] + 1))
    lo = scan.x_start + cfg.rx_offset / 2.0
    hi = scan.x_end + cfg.rx_offset / 2.0
    targets = []
    for _ in range(n_objects):
        for _ in range(50):
            r = float(rng.uniform(*cfg.radius))
            xc = float(rng.uniform(lo, hi))
            zc = float(rng.uniform(*cfg.depth))
            material = str(rng.choice(cfg.object_materials))
            clear = all(
                math.hypot(xc - t.geometry[0], zc - t.geometry[1]) > r + t.geometry[2] + 0.3
                for t in targets
            )
            if clear:
                targets.append(ObjectSpec("cylinder", material, (xc, zc, r)))
                break
    return targets


def draw_scene(cfg: GenConfig, rng: np.random.Generator) -> Scene:
    scan = scan_geometry(cfg)
    materials = [Material("halfspace", float(rng.uniform(*cfg.eps_r)), float(rng.uniform(*cfg.sigma)))]
    layer_materials, layers = draw_layers(cfg, rng)
    targets = draw_targets(cfg, rng, scan)
    used = {t.material for t in targets if t.material != "pec"}
    materials += layer_materials
    materials += [Material(name, *cfg.material_props[name]) for name in sorted(used)]

    return Scene(
        domain=tuple(cfg.domain),
        cell=tuple(cfg.cell),
        time_window=cfg.time_window,
        materials=materials,
        objects=layers + targets,
        waveform=Waveform("ricker", 1.0, cfg.center_freq),
        source_depth=cfg.source_depth,
        rx_offset=cfg.rx_offset,
        scan=scan,
    )


# Labels


def format_label_number(value) -> str:
    value = float(value)
    return str(int(value)) if value.is_integer() else repr(value)


def write_labels(path: str, boxes: Sequence[BBox], with_scores: bool = False):
    """One `class_id xmin ymin xmax ymax [score]` line per box."""
    with open(path, "w") as file:
        for b in boxes:
            fields = [str(int(b.class_id))] + [format_label_number(v) for v in b.as_tuple()]
            if with_scores:
                fields.append(format_label_number(1.0 if b.score is None else b.score))
            file.write(" ".join(fields) + "\n")


def read_labels(path: str) -> List[BBox]:
    boxes = []
    with open(path, "r") as file:
        for line_no, line in enumerate(file, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) not in (5, 6):
                raise MalformedLabelLine(subject=f"{path}:{line_no}", line=line_no)
            try:
                class_id = int(fields[0])
                values = [float(v) for v in fields[1:]]
            except ValueError:
                raise MalformedLabelLine(subject=f"{path}:{line_no}", line=line_no)
            if not all(math.isfinite(v) for v in values):
                raise MalformedLabelLine(subject=f"{path}:{line_no}", line=line_no)
            score = values[4] if len(values) == 5 else None
            boxes.append(BBox(*values[:4], class_id=class_id, score=score))
    return boxes


def dataset_indices(directory: str, suffix: str = ".pgm") -> List[int]:
    indices = []
    for name in os.listdir(directory):
        stem, ext = os.path.splitext(name)
        if ext == suffix and stem.isdigit():
            indices.append(int(stem))
    return sorted(indices)


def load_dataset(directory: str) -> List[Tuple[int, GrayImage, List[BBox]]]:
    """(index, image, boxes) for every `{i}.pgm` with a `{i}.txt` label."""
    items = []
    for i in dataset_indices(directory):
        label_path = os.path.join(directory, f"{i}.txt")
        if not os.path.exists(label_path):
            log.warning(f"Skipping {directory}/{i}.pgm: no label file")
            continue
        items.append((i, radargram.read_pgm(os.path.join(directory, f"{i}.pgm")), read_labels(label_path)))
    return items


# Dataset generation


def noise_model_for(cfg: GenConfig, r: Radargram, rng: np.random.Generator):
    # Level relative to the clean peak; depth shape from a user radargram
    # when one is configured
    level = float(rng.uniform(*cfg.noise)) * float(np.max(np.abs(r.traces)) or 1.0)
    if cfg.noise_profile:
        path, first, last = cfg.noise_profile
        profile = radargram.estimate_noise(radargram.read_gprb(path), [(first, last)]).per_depth_std
        profile = np.interp(
            np.linspace(0, len(profile) - 1, r.n_samples), np.arange(len(profile)), profile
        )
        peak = profile.max()
        shape = profile / peak if peak > 0 else np.ones(r.n_samples)
        return radargram.NoiseModel(level * shape)
    return radargram.depth_noise_model(r.n_samples, 0.5 * level, 1.5 * level)


def generate_image(cfg: GenConfig, index: int, pipeline: dict, courant: float = fdtd.DEFAULT_COURANT):
    """Draw, simulate, condition and label one radargram. Returns
    (scene, radargram, image, boxes)."""
    rng = np.random.default_rng([cfg.seed, index])
    s = draw_scene(cfg, rng)
    r = fdtd.run_bscan(s, courant, threads=1)
    r = radargram.resample_time(r, cfg.image_height)

    boxes = []
    for obj in s.objects:
        if not obj.is_cylinder:
            continue
        try:
            boxes.append(object_bbox(obj, s, r, cfg.tail_drop))
        except ObjectNotImageable:
            log.warning(f"Image {index}: object at x={obj.geometry[0]:.2f} m is not imageable")

    r = radargram.preprocess(r, pipeline["dewow_window"], pipeline["gain_kind"], pipeline["gain_k"])
    if cfg.lateral_gain != (1.0, 1.0):
        r = radargram.apply_lateral_gain(r, rng.uniform(*cfg.lateral_gain), rng.uniform(*cfg.lateral_gain))
    r = radargram.add_noise(r, noise_model_for(cfg, r, rng), int(rng.integers(2**31)))
    image = radargram.to_image(r, pipeline["image_mode"], tuple(pipeline["percentile"]))

    return s, r, image, boxes


def prepare_output(out_dir: str, force: bool):
    """Create `out_dir`; a non-empty one needs `force`, which then removes
    the numbered files and manifest of an earlier run."""
    if os.path.isdir(out_dir) and os.listdir(out_dir):
        if not force:
            raise OutputExists(subject=out_dir)
        stale = [f"{i}{suffix}" for suffix in NUMBERED_SUFFIXES for i in dataset_indices(out_dir, suffix)]
        stale += [MANIFEST] if os.path.isfile(os.path.join(out_dir, MANIFEST)) else []
        for name in stale:
            os.remove(os.path.join(out_dir, name))
        if stale:
            log.info(f"Removed {len(stale)} files of an earlier run from {out_dir}")
    os.makedirs(out_dir, exist_ok=True)


def generate_dataset(
    cfg: GenConfig,
    out_dir: str,
    force: bool = False,
    pipeline: Optional[dict] = None,
    courant: float = fdtd.DEFAULT_COURANT,
    threads: Optional[int] = None,
) -> str:
    validate_gen_config(cfg)
    prepare_output(out_dir, force)
    pipeline = pipeline or load_config()["preprocess"]
    threads = threads or Configuration().threads

    def one_image(index):
        try:
            s, r, image, boxes = generate_image(cfg, index, pipeline, courant)
        except GprForgeException as e:
            raise GenerationError(index, e)
        base = os.path.join(out_dir, str(index))
        radargram.write_pgm(image, base + ".pgm")
        radargram.write_gprb(r, base + ".gprb")
        write_labels(base + ".txt", boxes)
        with open(base + ".scene", "w") as file:
            file.write(serialize_scene(s))
        return index, len(boxes)

    log.info(f"Generating {cfg.count} '{cfg.preset}' images into {out_dir}")
    with ThreadPool(processes=max(1, min(threads, cfg.count))) as pool:
        done = dict(
            tqdm(pool.imap_unordered(one_image, range(cfg.count)), total=cfg.count, disable=None)
        )

    write_manifest(out_dir, cfg, done)
    return out_dir


def write_manifest(out_dir: str, cfg: GenConfig, n_boxes: Dict[int, int]):
    with open(os.path.join(out_dir, MANIFEST), "w") as file:
        file.write(f"seed {cfg.seed}\npreset {cfg.preset}\ncount {cfg.count}\n")
        for i in sorted(n_boxes):
            file.write(
                f"{i} {i}.pgm {i}.gprb {i}.txt {i}.scene seed={cfg.seed}:{i} objects={n_boxes[i]}\n"
            )
