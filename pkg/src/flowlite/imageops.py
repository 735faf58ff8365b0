"""Shared raster utilities: bilinear sampling, homogeneous 2-d affine
matrices, and PNG I/O.  Images are float arrays in [0, 1], shape (h, w) or
(h, w, c); pixel centers sit at integer coordinates, x right, y down.
"""

from __future__ import annotations

import numpy as np
from PIL import Image


def bilinear_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray, oob: str = "clamp"):
    """Sample img at fractional coordinates (xs, ys).

    oob='clamp' repeats edge pixels outside the frame; oob='zero' returns 0
    there.  Returns (values, in_bounds_mask); values has the query shape
    plus any channel axis of img.
    """
    h, w = img.shape[:2]
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    inb = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)

    xc = np.clip(xs, 0.0, w - 1.0)
    yc = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xc).astype(int)
    y0 = np.floor(yc).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]

    v00 = img[y0, x0]
    v01 = img[y0, x1]
    v10 = img[y1, x0]
    v11 = img[y1, x1]
    out = (
        v00 * (1 - fx) * (1 - fy)
        + v01 * fx * (1 - fy)
        + v10 * (1 - fx) * fy
        + v11 * fx * fy
    )
    if oob == "zero":
        mask = inb if img.ndim == 2 else inb[..., None]
        out = np.where(mask, out, 0.0)
    elif oob != "clamp":
        raise ValueError(f"unknown oob mode {oob!r}")
    return out, inb


def pixel_grid(h: int, w: int):
    """Meshgrid of pixel-center coordinates: (xs, ys), each (h, w)."""
    ys, xs = np.mgrid[0:h, 0:w]
    return xs.astype(np.float64), ys.astype(np.float64)


# --- homogeneous 3x3 affine matrices ---------------------------------------


def affine_identity() -> np.ndarray:
    return np.eye(3)


def affine_compose(outer: np.ndarray, inner: np.ndarray) -> np.ndarray:
    """Matrix of outer applied after inner."""
    return outer @ inner


def affine_invert(m: np.ndarray) -> np.ndarray:
    return np.linalg.inv(m)


def affine_apply(m: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Apply a 3x3 affine to coordinate arrays; returns (xs', ys')."""
    nx = m[0, 0] * xs + m[0, 1] * ys + m[0, 2]
    ny = m[1, 0] * xs + m[1, 1] * ys + m[1, 2]
    return nx, ny


def zoom_rot_translate(zoom: float, rotation_deg: float, tx: float, ty: float,
                       cx: float, cy: float) -> np.ndarray:
    """T(x) = c + t + zoom * R(theta) (x - c), as a 3x3 matrix."""
    th = np.deg2rad(rotation_deg)
    a = zoom * np.cos(th)
    b = zoom * np.sin(th)
    lin = np.array([[a, -b], [b, a]])
    c = np.array([cx, cy])
    t = np.array([tx, ty])
    off = c + t - lin @ c
    m = np.eye(3)
    m[:2, :2] = lin
    m[:2, 2] = off
    return m


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize to an arbitrary size (edge-clamped)."""
    h, w = img.shape[:2]
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    gx, gy = np.meshgrid(xs, ys)
    vals, _ = bilinear_sample(img, gx, gy, oob="clamp")
    return vals


def to_gray(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return np.asarray(img, dtype=np.float64)
    return np.asarray(img, dtype=np.float64).mean(axis=2)


# --- PNG I/O ----------------------------------------------------------------


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def from_uint8(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float32) / 255.0


def save_png(path, img: np.ndarray) -> None:
    """Write a float [0,1] or uint8 image (grayscale or RGB) as PNG."""
    arr = img if img.dtype == np.uint8 else to_uint8(img)
    Image.fromarray(arr).save(path, format="PNG")


def load_png(path) -> np.ndarray:
    """Read a PNG as a float32 [0,1] array."""
    with Image.open(path) as im:
        return from_uint8(np.asarray(im))
