"""Online training-time augmentation.

One strong geometric transform is applied to both frames of a pair, plus a
smaller relative transform between them, with the flow field adapted
exactly:  with A1 acting on frame 1 and A2 = A1 o R on frame 2,

    flow'(y) = A2(x + flow(x)) - y,   x = A1^{-1}(y),

which is the unique adaptation preserving warp consistency.  Photometric
jitter (color multipliers, gamma, brightness, contrast, noise) never touches
the flow channels; chromatic changes are shared across the pair, noise is
drawn independently per frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from flowlite import imageops
from flowlite.flowcore import FlowField
from flowlite.scenegen import AffineTransform, Sample


@dataclass(frozen=True)
class AugmentRanges:
    """Sampling ranges.  Geometric ranges apply to the strong shared
    transform; the relative transform uses the same shapes scaled by
    relative_frac.  Translation is a fraction of image width."""

    translation_frac: float = 0.2
    rotation_deg: float = 17.0
    scale_min: float = 0.9
    scale_max: float = 2.0
    relative_frac: float = 0.25
    noise_sigma_min: float = 0.0
    noise_sigma_max: float = 0.04
    contrast_min: float = -0.8
    contrast_max: float = 0.4
    color_min: float = 0.5
    color_max: float = 2.0
    gamma_min: float = 0.7
    gamma_max: float = 1.5
    brightness_sigma: float = 0.2


@dataclass(frozen=True)
class AugmentSpec:
    """One concrete augmentation: strong transform A1, relative transform R
    (so A2 = A1 o R), and photometric parameters."""

    a1: AffineTransform
    rel: AffineTransform
    noise_sigma1: float
    noise_sigma2: float
    brightness: float
    contrast: float
    gamma: float
    color: tuple  # 3 per-channel multipliers

    def a2_matrix(self) -> np.ndarray:
        return self.a1.matrix() @ self.rel.matrix()


def identity_spec() -> AugmentSpec:
    return AugmentSpec(
        a1=AffineTransform(), rel=AffineTransform(),
        noise_sigma1=0.0, noise_sigma2=0.0,
        brightness=0.0, contrast=0.0, gamma=1.0, color=(1.0, 1.0, 1.0),
    )


def sample_augmentation(rng: np.random.Generator, ranges: AugmentRanges,
                        width: int, height: int) -> AugmentSpec:
    """Uniform draws within each range (Gaussian for brightness)."""
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    t = ranges.translation_frac * width
    a1 = AffineTransform(
        zoom=float(rng.uniform(ranges.scale_min, ranges.scale_max)),
        rotation=float(rng.uniform(-ranges.rotation_deg, ranges.rotation_deg)),
        tx=float(rng.uniform(-t, t)),
        ty=float(rng.uniform(-t, t)),
        cx=cx, cy=cy,
    )
    rf = ranges.relative_frac
    # relative zoom range shrinks linearly towards 1
    zmin = 1.0 + rf * (ranges.scale_min - 1.0)
    zmax = 1.0 + rf * (ranges.scale_max - 1.0)
    rel = AffineTransform(
        zoom=float(rng.uniform(zmin, zmax)),
        rotation=float(rng.uniform(-rf * ranges.rotation_deg, rf * ranges.rotation_deg)),
        tx=float(rng.uniform(-rf * t, rf * t)),
        ty=float(rng.uniform(-rf * t, rf * t)),
        cx=cx, cy=cy,
    )
    return AugmentSpec(
        a1=a1,
        rel=rel,
        noise_sigma1=float(rng.uniform(ranges.noise_sigma_min, ranges.noise_sigma_max)),
        noise_sigma2=float(rng.uniform(ranges.noise_sigma_min, ranges.noise_sigma_max)),
        brightness=float(rng.normal(0.0, ranges.brightness_sigma)),
        contrast=float(rng.uniform(ranges.contrast_min, ranges.contrast_max)),
        gamma=float(rng.uniform(ranges.gamma_min, ranges.gamma_max)),
        color=tuple(float(c) for c in rng.uniform(ranges.color_min, ranges.color_max, size=3)),
    )


def _photometric(img: np.ndarray, spec: AugmentSpec, noise_sigma: float,
                 rng: np.random.Generator | None) -> np.ndarray:
    """Order: color multipliers -> gamma -> brightness -> contrast -> noise."""
    out = img.astype(np.float64) * np.asarray(spec.color)[None, None, :]
    out = np.clip(out, 0.0, None) ** spec.gamma
    out = out + spec.brightness
    mean = out.mean()
    out = (out - mean) * (1.0 + spec.contrast) + mean
    if noise_sigma > 0 and rng is not None:
        out = out + rng.normal(0.0, noise_sigma, size=out.shape)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def apply_augmentation(sample: Sample, spec: AugmentSpec,
                       rng: np.random.Generator | None = None,
                       photometric: bool = True) -> Sample:
    """Warp the pair, adapt the flow exactly, then apply photometric jitter.

    Pixels whose geometric preimage leaves the source frame are marked
    invalid in the flow mask (never trained on fabricated content).  The
    occlusion map is carried along by nearest sampling from the frame-1
    side; it is not geometrically recomputed.
    """
    h, w = sample.occlusion.shape
    m1 = spec.a1.matrix()
    m2 = spec.a2_matrix()
    inv1 = imageops.affine_invert(m1)
    inv2 = imageops.affine_invert(m2)
    xs, ys = imageops.pixel_grid(h, w)

    # frame 1
    sx1, sy1 = imageops.affine_apply(inv1, xs, ys)
    img1, inb1 = imageops.bilinear_sample(sample.img1, sx1, sy1, oob="clamp")
    # frame 2
    sx2, sy2 = imageops.affine_apply(inv2, xs, ys)
    img2, _ = imageops.bilinear_sample(sample.img2, sx2, sy2, oob="clamp")

    # flow adaptation
    fu, _ = imageops.bilinear_sample(sample.flow.u.astype(np.float64), sx1, sy1, oob="clamp")
    fv, _ = imageops.bilinear_sample(sample.flow.v.astype(np.float64), sx1, sy1, oob="clamp")
    txp, typ = imageops.affine_apply(m2, sx1 + fu, sy1 + fv)
    new_u = txp - xs
    new_v = typ - ys

    # validity: preimage inside the source frame and source pixel valid
    src_valid, _ = imageops.bilinear_sample(sample.flow.valid.astype(np.float64), sx1, sy1,
                                            oob="zero")
    valid = inb1 & (src_valid > 0.999)

    occ, _ = imageops.bilinear_sample(sample.occlusion.astype(np.float64), sx1, sy1, oob="zero")
    occlusion = occ > 0.5

    if photometric:
        img1 = _photometric(img1, spec, spec.noise_sigma1, rng)
        img2 = _photometric(img2, spec, spec.noise_sigma2, rng)
    else:
        img1 = np.clip(img1, 0.0, 1.0).astype(np.float32)
        img2 = np.clip(img2, 0.0, 1.0).astype(np.float32)

    flow = FlowField(u=np.where(valid, new_u, 0.0).astype(np.float32),
                     v=np.where(valid, new_v, 0.0).astype(np.float32),
                     valid=valid)
    return Sample(img1=img1, img2=img2, flow=flow, occlusion=occlusion)
