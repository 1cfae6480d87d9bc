"""
    B-scan conditioning, noise modelling, grayscale rendering and the
    GPRB / PGM / raw file formats.
"""

import logging
import struct
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import signal

from gprforge.exceptions import (
    BadGain,
    BadHeader,
    BadMagic,
    BadPayload,
    BadWindow,
    DegenerateRange,
    EmptySelection,
    LengthMismatch,
    TooFewTraces,
    TrailingData,
    TruncatedFile,
    UnsupportedVersion,
)
from gprforge.models import GrayImage, NoiseModel, Radargram

log = logging.getLogger(__name__)

GPRB_MAGIC = b"GPRB"
GPRB_VERSION = 1
GPRB_HEADER = struct.Struct("<4sHIIddd")
PGM_MAGIC = b"P5"
GAIN_KINDS = ("linear", "exponential")


def dewow(r: Radargram, window: int = 31) -> Radargram:
    # Subtract the centred running mean, window clipped at the trace ends
    if int(window) != window or window < 3 or window % 2 == 0:
        raise BadWindow(subject=window)
    half = int(window) // 2
    x = r.traces.astype(np.float64)
    n = x.shape[1]
    csum = np.concatenate([np.zeros((x.shape[0], 1)), np.cumsum(x, axis=1)], axis=1)
    t = np.arange(n)
    lo = np.maximum(t - half, 0)
    hi = np.minimum(t + half + 1, n)
    mean = (csum[:, hi] - csum[:, lo]) / (hi - lo)

    return r.replace(x - mean)


def remove_background(r: Radargram) -> Radargram:
    if r.n_traces < 2:
        raise TooFewTraces(subject=r.n_traces)
    x = r.traces.astype(np.float64)

    return r.replace(x - x.mean(axis=0, keepdims=True))


def gain_curve(n_samples: int, dt: float, kind: str, k: float) -> np.ndarray:
    if kind not in GAIN_KINDS:
        raise BadGain(subject=kind, reason=f"unknown gain kind '{kind}'")
    if not k >= 0:
        raise BadGain(subject=k)
    t = np.arange(n_samples) * dt
    return 1.0 + k * t if kind == "linear" else np.exp(k * t)


def apply_gain(r: Radargram, kind: str = "exponential", k: float = 0.0) -> Radargram:
    # Time-varying gain g(t), t in seconds from sample 0
    g = gain_curve(r.n_samples, r.dt, kind, k)

    return r.replace(r.traces.astype(np.float64) * g[None, :])


def apply_lateral_gain(r: Radargram, left: float, right: float) -> Radargram:
    """Linear trace-wise gain ramp from `left` (first trace) to `right`."""
    g = np.linspace(left, right, r.n_traces)

    return r.replace(r.traces.astype(np.float64) * g[:, None])


def resample_time(r: Radargram, n_samples: int) -> Radargram:
    # Fourier resampling along time; dt scales with the length ratio
    if n_samples == r.n_samples:
        return r.replace(r.traces.copy())
    traces = signal.resample(r.traces.astype(np.float64), n_samples, axis=1)

    return Radargram(traces, r.dt * r.n_samples / n_samples, r.dx_m, r.time_zero)


def preprocess(
    r: Radargram,
    dewow_window: int = 31,
    gain_kind: str = "exponential",
    gain_k: float = 0.0,
    background: bool = True,
) -> Radargram:
    # dewow -> background removal -> gain
    out = dewow(r, dewow_window)
    if background and out.n_traces >= 2:
        out = remove_background(out)

    return apply_gain(out, gain_kind, gain_k)


def selected_columns(n_traces: int, ranges: Iterable[Tuple[int, int]]) -> np.ndarray:
    ranges = list(ranges)
    if not ranges:
        raise EmptySelection(subject="no ranges")
    picked = set()
    for start, stop in ranges:
        if not (0 <= start < stop <= n_traces):
            raise EmptySelection(subject=(start, stop))
        picked.update(range(start, stop))
    if len(picked) < 2:
        raise EmptySelection(subject=ranges, reason="need at least 2 traces to estimate noise")
    return np.array(sorted(picked))


def estimate_noise(r: Radargram, object_free_columns: Sequence[Tuple[int, int]]) -> NoiseModel:
    """Per-depth sample standard deviation over half-open trace ranges."""
    cols = selected_columns(r.n_traces, object_free_columns)

    return NoiseModel(r.traces[cols].astype(np.float64).std(axis=0, ddof=1))


def depth_noise_model(n_samples: int, top: float, bottom: float) -> NoiseModel:
    return NoiseModel(np.linspace(top, bottom, n_samples))


def add_noise(r: Radargram, m: NoiseModel, seed: int) -> Radargram:
    # Independent stream per trace: default_rng([seed, trace index])
    std = m.per_depth_std
    if std.shape != (r.n_samples,):
        raise LengthMismatch(subject=f"noise model has {std.size} samples, radargram {r.n_samples}")
    if not np.any(std):
        return r.replace(r.traces.copy())
    out = r.traces.astype(np.float64)
    for i in range(r.n_traces):
        rng = np.random.default_rng([seed, i])
        out[i] += rng.standard_normal(r.n_samples) * std

    return r.replace(out)


def to_image(
    r: Radargram,
    mode: str = "percentile",
    p: Tuple[float, float] = (2.0, 98.0),
    strict: bool = False,
) -> GrayImage:
    # Affine map to 0..255; row = time sample, column = trace
    x = r.traces.astype(np.float64)
    if mode == "global_minmax":
        lo, hi = float(x.min()), float(x.max())
    elif mode == "percentile":
        lo, hi = (float(v) for v in np.percentile(x, p))
    else:
        raise ValueError(f"unknown image mode '{mode}'")

    if not hi > lo:
        if strict:
            raise DegenerateRange(subject=lo)
        log.warning(f"Degenerate amplitude range ({lo}); rendering uniform gray")
        return GrayImage.from_array(np.full((r.n_samples, r.n_traces), 128, dtype=np.uint8))

    scaled = np.floor(255.0 * (x - lo) / (hi - lo) + 0.5)
    return GrayImage.from_array(np.clip(scaled, 0, 255).astype(np.uint8).T)


def from_image(img: GrayImage, dt: float, dx_m: float) -> Radargram:
    """Inverse-ish of to_image: gray levels mapped to [-1, 1]."""
    traces = (img.pixels.T.astype(np.float64) - 127.5) / 127.5

    return Radargram(traces, dt, dx_m)


def encode_gprb(r: Radargram) -> bytes:
    header = GPRB_HEADER.pack(
        GPRB_MAGIC, GPRB_VERSION, r.n_traces, r.n_samples, r.dt, r.dx_m, r.time_zero
    )
    return header + np.ascontiguousarray(r.traces, dtype="<f4").tobytes()


def decode_gprb(data: bytes) -> Radargram:
    if len(data) < len(GPRB_MAGIC):
        raise TruncatedFile(subject=f"{len(data)} bytes")
    if data[:4] != GPRB_MAGIC:
        raise BadMagic(subject=bytes(data[:4]))
    if len(data) < GPRB_HEADER.size:
        raise TruncatedFile(subject=f"header needs {GPRB_HEADER.size} bytes, got {len(data)}")

    _, version, n_traces, n_samples, dt, dx_m, time_zero = GPRB_HEADER.unpack_from(data)
    if version != GPRB_VERSION:
        raise UnsupportedVersion(subject=version)
    if n_traces < 1 or n_samples < 1:
        raise BadHeader(subject=f"{n_traces} traces x {n_samples} samples")
    if not (np.isfinite(dt) and dt > 0 and np.isfinite(dx_m) and dx_m > 0):
        raise BadHeader(subject=f"dt={dt}, dx={dx_m}")
    if not np.isfinite(time_zero):
        raise BadHeader(subject=f"time_zero={time_zero}")

    expected = GPRB_HEADER.size + 4 * n_traces * n_samples
    if len(data) < expected:
        raise TruncatedFile(subject=f"expected {expected} bytes, got {len(data)}")
    if len(data) > expected:
        raise TrailingData(subject=len(data) - expected)

    traces = np.frombuffer(data, dtype="<f4", offset=GPRB_HEADER.size)
    traces = traces.reshape(n_traces, n_samples).astype(np.float32)
    if not np.all(np.isfinite(traces)):
        raise BadPayload(subject="non-finite samples")

    return Radargram(traces, dt, dx_m, time_zero)


def write_gprb(r: Radargram, path: str):
    with open(path, "wb") as file:
        file.write(encode_gprb(r))


def read_gprb(path: str) -> Radargram:
    with open(path, "rb") as file:
        return decode_gprb(file.read())


def encode_pgm(img: GrayImage) -> bytes:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(img.pixels, dtype=np.uint8).tobytes()


def pgm_header_fields(data: bytes) -> Tuple[List[int], int]:
    # Width, height and maxval with '#' comments; returns payload offset
    fields, pos = [], len(PGM_MAGIC)
    if len(data) <= pos:
        raise TruncatedFile(subject="PGM header")
    if not data[pos:pos + 1].isspace():
        raise BadHeader(subject="missing whitespace after magic")

    while len(fields) < 3:
        while pos < len(data) and (data[pos:pos + 1].isspace() or data[pos:pos + 1] == b"#"):
            if data[pos:pos + 1] == b"#":
                end = data.find(b"\n", pos)
                if end < 0:
                    raise TruncatedFile(subject="PGM header comment")
                pos = end
            pos += 1
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            if pos >= len(data):
                raise TruncatedFile(subject="PGM header")
            raise BadHeader(subject=repr(data[pos:pos + 8]))
        if pos - start > 9:
            raise BadHeader(subject="header value too large")
        fields.append(int(data[start:pos]))

    if pos >= len(data):
        raise TruncatedFile(subject="PGM header")
    if not data[pos:pos + 1].isspace():
        raise BadHeader(subject=repr(data[pos:pos + 8]))

    return fields, pos + 1


def decode_pgm(data: bytes) -> GrayImage:
    if data[:2] != PGM_MAGIC:
        raise BadMagic(subject=bytes(data[:2]))
    (width, height, maxval), offset = pgm_header_fields(data)
    if width < 1 or height < 1:
        raise BadHeader(subject=f"size {width}x{height}")
    if maxval != 255:
        raise BadHeader(subject=f"maxval {maxval}")

    expected = width * height
    payload = len(data) - offset
    if payload < expected:
        raise TruncatedFile(subject=f"expected {expected} pixels, got {payload}")
    if payload > expected:
        raise TrailingData(subject=payload - expected)

    pixels = np.frombuffer(data, dtype=np.uint8, offset=offset).reshape(height, width)
    return GrayImage.from_array(pixels.copy())


def write_pgm(img: GrayImage, path: str):
    with open(path, "wb") as file:
        file.write(encode_pgm(img))


def read_pgm(path: str) -> GrayImage:
    with open(path, "rb") as file:
        return decode_pgm(file.read())


def read_raw(
    path: str,
    n_samples: int,
    dt: float,
    dx_m: float,
    dtype: str = "<f4",
    time_zero: float = 0.0,
) -> Radargram:
    """Headerless trace-major binary of any numpy dtype."""
    data = np.fromfile(path, dtype=np.dtype(dtype))
    if n_samples < 1 or data.size == 0 or data.size % n_samples:
        raise LengthMismatch(subject=f"{data.size} values do not split into traces of {n_samples}")
    traces = data.reshape(-1, n_samples).astype(np.float64)
    if not np.all(np.isfinite(traces)):
        raise BadPayload(subject="non-finite samples")

    return Radargram(traces, dt, dx_m, time_zero)


def describe(r: Optional[Radargram]) -> str:
    if r is None:
        return "<none>"
    return f"{r.n_traces} traces x {r.n_samples} samples, dt={r.dt:.4e} s, dx={r.dx_m:.4f} m"
