"""Flow-field data model, Middlebury .flo I/O, color visualization and metrics.

All functions here are pure and operate on immutable inputs; they are safe to
call concurrently from multiple threads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

FLO_MAGIC = b"PIEH"

# Magnitude above which a flow value encodes "unknown" in .flo files.
UNKNOWN_FLOW_THRESH = 1e9
UNKNOWN_FLOW_SENTINEL = 1e10


class FloFormatError(ValueError):
    """Raised when a .flo stream is malformed (bad magic, truncation)."""


@dataclass(frozen=True)
class FlowField:
    """Dense 2-channel per-pixel displacement map with a validity mask.

    u is horizontal displacement (+x rightward), v is vertical (+y downward),
    both in pixels.  valid marks pixels where the ground truth is defined.
    """

    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float32)
        v = np.asarray(self.v, dtype=np.float32)
        if u.ndim != 2 or u.shape != v.shape:
            raise ValueError(f"u and v must be 2-d with equal shapes, got {u.shape} vs {v.shape}")
        valid = self.valid
        if valid is None:
            valid = np.ones(u.shape, dtype=bool)
        else:
            valid = np.asarray(valid, dtype=bool)
            if valid.shape != u.shape:
                raise ValueError(f"valid mask shape {valid.shape} != flow shape {u.shape}")
        if not np.all(np.isfinite(u[valid])) or not np.all(np.isfinite(v[valid])):
            raise ValueError("flow values must be finite where valid")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def magnitude(self) -> np.ndarray:
        return np.sqrt(self.u.astype(np.float64) ** 2 + self.v.astype(np.float64) ** 2)

    def allclose(self, other: "FlowField", atol: float = 0.0) -> bool:
        if self.u.shape != other.u.shape:
            return False
        m = self.valid & other.valid
        return (
            np.array_equal(self.valid, other.valid)
            and np.allclose(self.u[m], other.u[m], atol=atol, rtol=0)
            and np.allclose(self.v[m], other.v[m], atol=atol, rtol=0)
        )


@dataclass(frozen=True)
class MetricsReport:
    """Aggregate error measures of a predicted flow against ground truth."""

    epe: float
    aae: float
    epe_s40plus: Optional[float]
    n_evaluated: int


def read_flo(stream) -> FlowField:
    """Read a Middlebury .flo container from a binary stream or bytes.

    Pixels whose stored |u| or |v| exceeds 1e9 (the unknown-flow sentinel)
    are marked invalid.
    """
    if isinstance(stream, (bytes, bytearray)):
        data = bytes(stream)
    else:
        data = stream.read()
    if len(data) < 12:
        raise FloFormatError(f"stream too short for .flo header: {len(data)} bytes")
    if data[:4] != FLO_MAGIC:
        raise FloFormatError(f"bad .flo magic {data[:4]!r}, expected {FLO_MAGIC!r}")
    width, height = struct.unpack("<ii", data[4:12])
    if width <= 0 or height <= 0:
        raise FloFormatError(f"bad .flo dimensions {width}x{height}")
    expected = 12 + width * height * 8
    if len(data) < expected:
        raise FloFormatError(f"truncated .flo stream: {len(data)} bytes, expected {expected}")
    uv = np.frombuffer(data, dtype="<f4", count=width * height * 2, offset=12)
    uv = uv.reshape(height, width, 2)
    u = uv[:, :, 0]
    v = uv[:, :, 1]
    with np.errstate(invalid="ignore"):
        valid = (np.abs(u) <= UNKNOWN_FLOW_THRESH) & (np.abs(v) <= UNKNOWN_FLOW_THRESH)
        valid &= np.isfinite(u) & np.isfinite(v)
    u = np.where(valid, u, 0.0)
    v = np.where(valid, v, 0.0)
    return FlowField(u=u, v=v, valid=valid)


def write_flo(flow: FlowField) -> bytes:
    """Serialize a FlowField as a Middlebury .flo byte string.

    Invalid pixels are written with the 1e10 sentinel in both channels.
    """
    h, w = flow.u.shape
    u = np.where(flow.valid, flow.u, np.float32(UNKNOWN_FLOW_SENTINEL))
    v = np.where(flow.valid, flow.v, np.float32(UNKNOWN_FLOW_SENTINEL))
    uv = np.empty((h, w, 2), dtype="<f4")
    uv[:, :, 0] = u
    uv[:, :, 1] = v
    return FLO_MAGIC + struct.pack("<ii", w, h) + uv.tobytes()


def read_flo_file(path) -> FlowField:
    with open(path, "rb") as f:
        return read_flo(f)


def write_flo_file(path, flow: FlowField) -> None:
    with open(path, "wb") as f:
        f.write(write_flo(flow))


def compute_metrics(pred: FlowField, gt: FlowField) -> MetricsReport:
    """Endpoint error, angular error and large-displacement EPE.

    Averages are restricted to gt.valid pixels.  The angular error embeds
    flows as (u, v, 1) 3-vectors and measures the angle between them
    (Middlebury convention).  epe_s40plus averages over valid pixels whose
    ground-truth magnitude is at least 40 px, and is None if there are none.
    """
    if pred.u.shape != gt.u.shape:
        raise ValueError(f"dimension mismatch: pred {pred.u.shape} vs gt {gt.u.shape}")
    m = gt.valid
    n = int(np.count_nonzero(m))
    if n == 0:
        raise ValueError("no valid ground-truth pixels to evaluate")
    up = pred.u[m].astype(np.float64)
    vp = pred.v[m].astype(np.float64)
    ug = gt.u[m].astype(np.float64)
    vg = gt.v[m].astype(np.float64)

    err = np.sqrt((up - ug) ** 2 + (vp - vg) ** 2)
    epe = float(err.mean())

    dot = up * ug + vp * vg + 1.0
    norm = np.sqrt(up**2 + vp**2 + 1.0) * np.sqrt(ug**2 + vg**2 + 1.0)
    cosang = np.clip(dot / norm, -1.0, 1.0)
    aae = float(np.degrees(np.arccos(cosang)).mean())

    big = np.sqrt(ug**2 + vg**2) >= 40.0
    epe_s40plus = float(err[big].mean()) if np.any(big) else None

    return MetricsReport(epe=epe, aae=aae, epe_s40plus=epe_s40plus, n_evaluated=n)


def _make_color_wheel() -> np.ndarray:
    """The 55-entry Middlebury color wheel (RY/YG/GC/CB/BM/MR segments)."""
    RY, YG, GC, CB, BM, MR = 15, 6, 4, 11, 13, 6
    ncols = RY + YG + GC + CB + BM + MR
    wheel = np.zeros((ncols, 3))
    col = 0
    # RY
    wheel[col : col + RY, 0] = 255
    wheel[col : col + RY, 1] = np.floor(255 * np.arange(RY) / RY)
    col += RY
    # YG
    wheel[col : col + YG, 0] = 255 - np.floor(255 * np.arange(YG) / YG)
    wheel[col : col + YG, 1] = 255
    col += YG
    # GC
    wheel[col : col + GC, 1] = 255
    wheel[col : col + GC, 2] = np.floor(255 * np.arange(GC) / GC)
    col += GC
    # CB
    wheel[col : col + CB, 1] = 255 - np.floor(255 * np.arange(CB) / CB)
    wheel[col : col + CB, 2] = 255
    col += CB
    # BM
    wheel[col : col + BM, 2] = 255
    wheel[col : col + BM, 0] = np.floor(255 * np.arange(BM) / BM)
    col += BM
    # MR
    wheel[col : col + MR, 2] = 255 - np.floor(255 * np.arange(MR) / MR)
    wheel[col : col + MR, 0] = 255
    return wheel


_COLOR_WHEEL = _make_color_wheel()


def flow_to_color(flow: FlowField, max_magnitude: Optional[float] = None) -> np.ndarray:
    """Render a flow field as an RGB uint8 image.

    Direction maps to hue on the 55-entry color wheel, magnitude to
    saturation; zero flow is white.  Magnitudes are normalized by
    max_magnitude (default: the largest valid magnitude of this field)
    and clamped to 1.  Invalid pixels are black.
    """
    u = flow.u.astype(np.float64)
    v = flow.v.astype(np.float64)
    mag = np.sqrt(u**2 + v**2)
    if max_magnitude is None:
        valid_mags = mag[flow.valid]
        max_magnitude = float(valid_mags.max()) if valid_mags.size else 0.0
    if max_magnitude <= 0:
        max_magnitude = 1.0  # all-zero field: any positive normalizer gives white

    rad = np.minimum(mag / max_magnitude, 1.0)
    angle = np.arctan2(-v, -u) / np.pi  # in (-1, 1]

    ncols = _COLOR_WHEEL.shape[0]
    fk = (angle + 1.0) / 2.0 * (ncols - 1)
    k0 = np.floor(fk).astype(int) % ncols
    k1 = (k0 + 1) % ncols
    f = fk - np.floor(fk)

    img = np.zeros(u.shape + (3,), dtype=np.uint8)
    for c in range(3):
        col0 = _COLOR_WHEEL[k0, c] / 255.0
        col1 = _COLOR_WHEEL[k1, c] / 255.0
        col = (1 - f) * col0 + f * col1
        col = 1 - rad * (1 - col)  # shade towards white as magnitude -> 0
        img[:, :, c] = np.floor(255.0 * col)
    img[~flow.valid] = 0
    return img
