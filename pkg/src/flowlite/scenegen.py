"""Procedural synthetic optical-flow dataset generation.

A scene is a textured background plus a stack of opaque polygonal sprites,
each moving under a random zoom/rotation/translation between the two frames.
Sprite motion composes a relative transform on top of the background motion.
Because every layer's motion is an exact affine map, the ground-truth flow
and occlusion can be computed analytically instead of estimated.

Default distribution parameters are the reference desk recipe (translation
ranges are stated at a 1024-px-wide reference frame and scaled by
width/1024; sprite sizes are sampled in reference pixels and scaled at
render time).
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, replace

import numpy as np

from flowlite import configio, imageops
from flowlite.flowcore import FlowField, write_flo_file

REFERENCE_WIDTH = 1024
FULL_SCALE_REFERENCE_COUNT = 22872  # sample count of the full-scale recipe


# ---------------------------------------------------------------------------
# parameter distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClampedPowerGaussian:
    """Mixture of a constant mu (prob 1-p) and a clamped signed power of a
    Gaussian (prob p): sign(g)*|g|^k with g ~ N(mu, sigma), clamped to [a, b].
    """

    k: float
    mu: float
    sigma: float
    a: float
    b: float
    p: float

    def __post_init__(self):
        if not (self.a <= self.mu <= self.b):
            raise ValueError(f"need a <= mu <= b, got {self}")
        if self.sigma < 0 or self.k < 1 or not (0 <= self.p <= 1):
            raise ValueError(f"invalid distribution parameters {self}")


def sample_param(dist: ClampedPowerGaussian, rng: np.random.Generator) -> float:
    """One draw from the mixture.  Both the Bernoulli and the Gaussian are
    always consumed so the rng stream position is draw-count deterministic."""
    beta = rng.random() < dist.p
    g = rng.normal(dist.mu, dist.sigma)
    val = np.sign(g) * np.abs(g) ** dist.k
    val = min(max(val, dist.a), dist.b)
    return float(val if beta else dist.mu)


# ---------------------------------------------------------------------------
# scene description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AffineTransform:
    """Zoom + rotation about a pivot, then translation:
    T(x) = center + translation + zoom * R(rotation) (x - center)."""

    zoom: float = 1.0
    rotation: float = 0.0  # degrees
    tx: float = 0.0
    ty: float = 0.0
    cx: float = 0.0
    cy: float = 0.0

    def __post_init__(self):
        if self.zoom <= 0:
            raise ValueError(f"zoom must be positive, got {self.zoom}")

    def matrix(self) -> np.ndarray:
        return imageops.zoom_rot_translate(self.zoom, self.rotation, self.tx, self.ty,
                                           self.cx, self.cy)


@dataclass(frozen=True)
class SpriteSpec:
    """One foreground sprite: procedural shape seed, reference-pixel size,
    and its center position in the frame.  List order is render order
    (later entries on top)."""

    shape_seed: int
    size_ref: float
    x: float
    y: float


@dataclass(frozen=True)
class SceneSpec:
    """Full parameterization of one synthetic sample."""

    seed: int
    width: int
    height: int
    bg_seed: int
    sprites: tuple
    bg_transform: AffineTransform
    sprite_rel_transforms: tuple

    def to_text(self) -> str:
        lines = [
            f"seed = {self.seed}",
            f"width = {self.width}",
            f"height = {self.height}",
            f"bg_seed = {self.bg_seed}",
            f"n_sprites = {len(self.sprites)}",
        ]
        for i, (sp, tr) in enumerate(zip(self.sprites, self.sprite_rel_transforms)):
            lines.append(
                f"sprite.{i} = {sp.shape_seed} {sp.size_ref!r} {sp.x!r} {sp.y!r}"
            )
            lines.append(
                f"sprite_rel.{i} = {tr.zoom!r} {tr.rotation!r} {tr.tx!r} {tr.ty!r} {tr.cx!r} {tr.cy!r}"
            )
        bt = self.bg_transform
        lines.append(f"bg_transform = {bt.zoom!r} {bt.rotation!r} {bt.tx!r} {bt.ty!r} {bt.cx!r} {bt.cy!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SceneSpec":
        kv = configio.parse_kv_text(text)
        n = int(kv["n_sprites"])
        sprites = []
        rels = []
        for i in range(n):
            s, size, x, y = kv[f"sprite.{i}"].split()
            sprites.append(SpriteSpec(int(s), float(size), float(x), float(y)))
            z, r, tx, ty, cx, cy = map(float, kv[f"sprite_rel.{i}"].split())
            rels.append(AffineTransform(z, r, tx, ty, cx, cy))
        z, r, tx, ty, cx, cy = map(float, kv["bg_transform"].split())
        return cls(
            seed=int(kv["seed"]),
            width=int(kv["width"]),
            height=int(kv["height"]),
            bg_seed=int(kv["bg_seed"]),
            sprites=tuple(sprites),
            bg_transform=AffineTransform(z, r, tx, ty, cx, cy),
            sprite_rel_transforms=tuple(rels),
        )


@dataclass
class Sample:
    """Rendered image pair with exact ground truth."""

    img1: np.ndarray  # (h, w, 3) float32 in [0, 1]
    img2: np.ndarray
    flow: FlowField
    occlusion: np.ndarray  # (h, w) bool, True = img1 pixel hidden in img2


# ---------------------------------------------------------------------------
# generator config
# ---------------------------------------------------------------------------


def _default(dist):
    return field(default_factory=lambda: dist)


@dataclass(frozen=True)
class GeneratorConfig:
    width: int = 512
    height: int = 384
    min_sprites: int = 16
    max_sprites: int = 24
    size_mu: float = 200.0
    size_sigma: float = 200.0
    size_min: float = 50.0
    size_max: float = 640.0
    trans_bg: ClampedPowerGaussian = _default(ClampedPowerGaussian(4, 0, 1.3, -40, 40, 1.0))
    rot_bg: ClampedPowerGaussian = _default(ClampedPowerGaussian(2, 0, 1.3, -10, 10, 0.3))
    zoom_bg: ClampedPowerGaussian = _default(ClampedPowerGaussian(2, 1, 0.1, 0.93, 1.07, 0.6))
    trans_ch: ClampedPowerGaussian = _default(ClampedPowerGaussian(3, 0, 2.3, -120, 120, 1.0))
    rot_ch: ClampedPowerGaussian = _default(ClampedPowerGaussian(2, 0, 2.3, -30, 30, 0.7))
    zoom_ch: ClampedPowerGaussian = _default(ClampedPowerGaussian(2, 1, 0.18, 0.8, 1.2, 0.7))
    sprite_canvas: int = 64
    noise_base_cells: int = 4
    noise_octaves: int = 4
    quarter: bool = False
    strict_quadrant_occlusion: bool = False
    asset_dir: str = ""  # optional directory of user-supplied sprite/background PNGs

    @property
    def translation_scale(self) -> float:
        return self.width / REFERENCE_WIDTH

    def hash(self) -> str:
        text = configio.format_kv(configio.to_flat(self))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# scene sampling
# ---------------------------------------------------------------------------


def sample_scene(config: GeneratorConfig, rng: np.random.Generator) -> SceneSpec:
    """Draw a fully determined SceneSpec; all randomness comes from rng."""
    if config.width <= 0 or config.height <= 0:
        raise ValueError("generator needs positive image dimensions")
    seed = int(rng.integers(0, 2**31 - 1))
    bg_seed = int(rng.integers(0, 2**31 - 1))
    n_sprites = int(rng.integers(config.min_sprites, config.max_sprites + 1))

    ts = config.translation_scale
    cx, cy = (config.width - 1) / 2.0, (config.height - 1) / 2.0
    bg = AffineTransform(
        zoom=sample_param(config.zoom_bg, rng),
        rotation=sample_param(config.rot_bg, rng),
        tx=sample_param(config.trans_bg, rng) * ts,
        ty=sample_param(config.trans_bg, rng) * ts,
        cx=cx,
        cy=cy,
    )
    sprites = []
    rels = []
    for _ in range(n_sprites):
        size = float(min(max(rng.normal(config.size_mu, config.size_sigma),
                             config.size_min), config.size_max))
        x = float(rng.uniform(0, config.width))
        y = float(rng.uniform(0, config.height))
        sprites.append(SpriteSpec(shape_seed=int(rng.integers(0, 2**31 - 1)),
                                  size_ref=size, x=x, y=y))
        rels.append(AffineTransform(
            zoom=sample_param(config.zoom_ch, rng),
            rotation=sample_param(config.rot_ch, rng),
            tx=sample_param(config.trans_ch, rng) * ts,
            ty=sample_param(config.trans_ch, rng) * ts,
            cx=x,
            cy=y,
        ))
    return SceneSpec(
        seed=seed,
        width=config.width,
        height=config.height,
        bg_seed=bg_seed,
        sprites=tuple(sprites),
        bg_transform=bg,
        sprite_rel_transforms=tuple(rels),
    )


# ---------------------------------------------------------------------------
# procedural assets
# ---------------------------------------------------------------------------


def value_noise(h: int, w: int, rng: np.random.Generator, base_cells: int = 4,
                octaves: int = 4) -> np.ndarray:
    """Multi-octave value noise in [0, 1], shape (h, w)."""
    out = np.zeros((h, w))
    amp_total = 0.0
    xs, ys = imageops.pixel_grid(h, w)
    for o in range(octaves):
        cells = base_cells * (2**o)
        amp = 0.5**o
        grid = rng.random((cells + 1, cells + 1))
        gx = xs / max(w - 1, 1) * cells
        gy = ys / max(h - 1, 1) * cells
        vals, _ = imageops.bilinear_sample(grid, gx, gy)
        out += amp * vals
        amp_total += amp
    return out / amp_total


def make_background(h: int, w: int, bg_seed: int, config: GeneratorConfig) -> np.ndarray:
    """Procedural RGB background texture, float32 (h, w, 3)."""
    rng = np.random.default_rng(bg_seed)
    base = value_noise(h, w, rng, config.noise_base_cells, config.noise_octaves)
    detail = value_noise(h, w, rng, config.noise_base_cells * 4, max(config.noise_octaves - 1, 1))
    tint = rng.uniform(0.3, 1.0, size=3)
    img = np.empty((h, w, 3), dtype=np.float32)
    for c in range(3):
        mix = rng.uniform(0.2, 0.8)
        img[:, :, c] = np.clip(tint[c] * ((1 - mix) * base + mix * detail), 0.0, 1.0)
    return img


def make_sprite_canvas(shape_seed: int, canvas: int = 64) -> np.ndarray:
    """Chair-like RGBA sprite on a square canvas: seat + back + legs as
    jittered rectangles with binary alpha, float32 (canvas, canvas, 4)."""
    rng = np.random.default_rng(shape_seed)
    n = canvas
    rgba = np.zeros((n, n, 4), dtype=np.float32)
    color = rng.uniform(0.15, 0.95, size=3)

    def rect(y0, y1, x0, x1, shade):
        y0, y1 = int(np.clip(y0, 0, n)), int(np.clip(y1, 0, n))
        x0, x1 = int(np.clip(x0, 0, n)), int(np.clip(x1, 0, n))
        if y1 > y0 and x1 > x0:
            rgba[y0:y1, x0:x1, :3] = np.clip(color * shade, 0, 1)
            rgba[y0:y1, x0:x1, 3] = 1.0

    u = rng.uniform
    seat_y = u(0.40, 0.55) * n
    seat_h = u(0.08, 0.16) * n
    seat_x0 = u(0.10, 0.25) * n
    seat_x1 = u(0.75, 0.90) * n
    # backrest
    rect(u(0.05, 0.15) * n, seat_y + seat_h, seat_x0, seat_x0 + u(0.10, 0.22) * n, u(0.8, 1.1))
    # seat
    rect(seat_y, seat_y + seat_h, seat_x0, seat_x1, 1.0)
    # legs
    for fx in (seat_x0, seat_x1 - u(0.06, 0.12) * n):
        rect(seat_y + seat_h, u(0.88, 0.98) * n, fx, fx + u(0.05, 0.10) * n, u(0.6, 0.9))
    return rgba


def load_asset_catalog(asset_dir: str):
    """Optional user-supplied sprite images (RGBA PNGs) for the original
    composite-real-images recipe; returns a list of float32 rasters."""
    paths = sorted(
        os.path.join(asset_dir, f) for f in os.listdir(asset_dir) if f.lower().endswith(".png")
    )
    if not paths:
        raise ValueError(f"no PNG assets found in {asset_dir}")
    out = []
    for p in paths:
        img = imageops.load_png(p)
        if img.ndim == 2:
            img = np.dstack([img, img, img])
        if img.shape[2] == 3:
            img = np.dstack([img, np.ones(img.shape[:2], dtype=np.float32)])
        out.append(img.astype(np.float32))
    return out


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _sprite_placement(sp: SpriteSpec, config: GeneratorConfig) -> np.ndarray:
    """Canvas -> frame affine for a sprite's first-frame pose."""
    size_px = sp.size_ref * config.translation_scale
    s = size_px / config.sprite_canvas
    m = np.eye(3)
    m[0, 0] = m[1, 1] = s
    c = (config.sprite_canvas - 1) / 2.0
    m[0, 2] = sp.x - s * c
    m[1, 2] = sp.y - s * c
    return m


def render_sample(spec: SceneSpec, config: GeneratorConfig, assets=None) -> Sample:
    """Render image pair, exact flow and occlusion from a SceneSpec.

    Layer motions: the background moves by its own transform; each sprite
    moves by rel o bg (background motion first, then the sprite's relative
    motion).  Frame 2 is rendered by inverse bilinear warping of each
    source raster, so frame-2 sprite pixels resample the same canvas as
    frame 1 and warp consistency holds up to interpolation error.
    """
    h, w = spec.height, spec.width
    if assets is None and config.asset_dir:
        assets = load_asset_catalog(config.asset_dir)

    bg_img = make_background(h, w, spec.bg_seed, config)
    m_bg = spec.bg_transform.matrix()

    # per-layer transforms (layer 0 = background)
    mats = [m_bg]
    canvases = []
    placements = []
    for sp, rel in zip(spec.sprites, spec.sprite_rel_transforms):
        if assets:
            canvas = assets[sp.shape_seed % len(assets)]
        else:
            canvas = make_sprite_canvas(sp.shape_seed, config.sprite_canvas)
        canvases.append(canvas)
        placements.append(_sprite_placement(sp, config))
        mats.append(rel.matrix() @ m_bg)

    xs, ys = imageops.pixel_grid(h, w)

    # frame-1 sprite layers: canvas sampled through the placement map
    alphas1 = [np.ones((h, w))]
    rgbs1 = [bg_img[:, :, :3].astype(np.float64)]
    for canvas, place in zip(canvases, placements):
        inv = imageops.affine_invert(place)
        cx, cy = imageops.affine_apply(inv, xs, ys)
        vals, _ = imageops.bilinear_sample(canvas, cx, cy, oob="zero")
        rgbs1.append(vals[:, :, :3])
        alphas1.append(vals[:, :, 3])

    # frame-2 layers: same canvases through motion-composed maps
    alphas2 = [np.ones((h, w))]
    rgbs2 = []
    inv_bg = imageops.affine_invert(m_bg)
    bx, by = imageops.affine_apply(inv_bg, xs, ys)
    bg2, _ = imageops.bilinear_sample(bg_img, bx, by, oob="clamp")
    rgbs2.append(bg2[:, :, :3])
    for canvas, place, m in zip(canvases, placements, mats[1:]):
        inv = imageops.affine_invert(m @ place)
        cx, cy = imageops.affine_apply(inv, xs, ys)
        vals, _ = imageops.bilinear_sample(canvas, cx, cy, oob="zero")
        rgbs2.append(vals[:, :, :3])
        alphas2.append(vals[:, :, 3])

    def composite(rgbs, alphas):
        out = rgbs[0].copy()
        for rgb, a in zip(rgbs[1:], alphas[1:]):
            out = a[:, :, None] * rgb + (1 - a[:, :, None]) * out
        return np.clip(out, 0.0, 1.0).astype(np.float32)

    img1 = composite(rgbs1, alphas1)
    img2 = composite(rgbs2, alphas2)

    # ownership in frame 1: topmost layer with alpha > 0.5
    owner = np.zeros((h, w), dtype=np.int32)
    for i, a in enumerate(alphas1[1:], start=1):
        owner[a > 0.5] = i

    lin = np.stack([m[:2, :2] for m in mats])  # (L,2,2)
    off = np.stack([m[:2, 2] for m in mats])  # (L,2)
    a_own = lin[owner]  # (h,w,2,2)
    b_own = off[owner]
    tx = a_own[:, :, 0, 0] * xs + a_own[:, :, 0, 1] * ys + b_own[:, :, 0]
    ty = a_own[:, :, 1, 0] * xs + a_own[:, :, 1, 1] * ys + b_own[:, :, 1]
    flow = FlowField(u=(tx - xs).astype(np.float32), v=(ty - ys).astype(np.float32))

    # occlusion: target outside the frame, or covered by a different layer
    inb = (tx >= 0) & (tx <= w - 1) & (ty >= 0) & (ty <= h - 1)
    owner2 = np.zeros((h, w), dtype=np.int32)
    for i, a2 in enumerate(alphas2[1:], start=1):
        a_at_target, _ = imageops.bilinear_sample(a2, tx, ty, oob="zero")
        owner2[a_at_target > 0.5] = i
    occlusion = (~inb) | (owner2 != owner)

    return Sample(img1=img1, img2=img2, flow=flow, occlusion=occlusion)


def flow_oracle_probe(spec: SceneSpec, config: GeneratorConfig, sample: Sample,
                      xs, ys):
    """Per-pixel affine oracle: explicitly applies the owning layer's 2x3
    matrix at the probe coordinates; returns (u, v) arrays."""
    # recompute ownership independently from the rendered alphas
    m_bg = spec.bg_transform.matrix()
    mats = [m_bg] + [rel.matrix() @ m_bg for rel in spec.sprite_rel_transforms]
    us, vs = [], []
    for x, y in zip(xs, ys):
        layer = 0
        for i, sp in enumerate(spec.sprites, start=1):
            canvas = make_sprite_canvas(sp.shape_seed, config.sprite_canvas)
            inv = imageops.affine_invert(_sprite_placement(sp, config))
            cx = inv[0, 0] * x + inv[0, 1] * y + inv[0, 2]
            cy = inv[1, 0] * x + inv[1, 1] * y + inv[1, 2]
            a, _ = imageops.bilinear_sample(canvas[:, :, 3], np.array([cx]), np.array([cy]),
                                            oob="zero")
            if a[0] > 0.5:
                layer = i
        m = mats[layer]
        us.append(m[0, 0] * x + m[0, 1] * y + m[0, 2] - x)
        vs.append(m[1, 0] * x + m[1, 1] * y + m[1, 2] - y)
    # flow fields are stored in single precision; quantize the double
    # precision oracle the same way so only geometric errors remain
    return np.array(us, dtype=np.float32), np.array(vs, dtype=np.float32)


# ---------------------------------------------------------------------------
# quartering, histogram, dataset persistence
# ---------------------------------------------------------------------------


def quarter(sample: Sample, strict_in_quadrant: bool = False) -> list[Sample]:
    """Split a sample into its four quadrants.

    Flow vectors are displacements and stay unchanged.  By default a flow
    target that leaves the quadrant but stays inside the full frame remains
    non-occluded (its ground truth is known); strict_in_quadrant instead
    marks such pixels occluded.
    """
    h, w = sample.occlusion.shape
    if h % 2 or w % 2:
        raise ValueError(f"quartering needs even dimensions, got {w}x{h}")
    hh, hw = h // 2, w // 2
    out = []
    for qy in (0, 1):
        for qx in (0, 1):
            sl = (slice(qy * hh, (qy + 1) * hh), slice(qx * hw, (qx + 1) * hw))
            u = sample.flow.u[sl].copy()
            v = sample.flow.v[sl].copy()
            valid = sample.flow.valid[sl].copy()
            occ = sample.occlusion[sl].copy()
            if strict_in_quadrant:
                xs, ys = imageops.pixel_grid(hh, hw)
                tx = xs + u
                ty = ys + v
                outside = (tx < 0) | (tx > hw - 1) | (ty < 0) | (ty > hh - 1)
                occ = occ | outside
            out.append(Sample(
                img1=sample.img1[sl].copy(),
                img2=sample.img2[sl].copy(),
                flow=FlowField(u=u, v=v, valid=valid),
                occlusion=occ,
            ))
    return out


def displacement_histogram(flows, bin_width: float, max_disp: float):
    """Normalized histogram of valid-pixel flow magnitudes.

    Returns (edges, probs); the last bin absorbs magnitudes >= max_disp.
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    flows = list(flows)
    if not flows:
        raise ValueError("no flow fields given")
    edges = np.arange(0.0, max_disp + bin_width, bin_width)
    counts = np.zeros(len(edges) - 1)
    total = 0
    for f in flows:
        mag = f.magnitude[f.valid]
        total += mag.size
        mag = np.minimum(mag, edges[-2] + bin_width / 2)  # fold tail into last bin
        c, _ = np.histogram(mag, bins=edges)
        counts += c
    if total == 0:
        raise ValueError("no valid pixels in input flows")
    return edges, counts / total


def warp_consistency_error(sample: Sample) -> float:
    """Mean |img1(x) - img2(x + flow(x))| over valid, non-occluded pixels."""
    h, w = sample.occlusion.shape
    xs, ys = imageops.pixel_grid(h, w)
    tx = xs + sample.flow.u
    ty = ys + sample.flow.v
    warped, _ = imageops.bilinear_sample(sample.img2, tx, ty, oob="clamp")
    mask = (~sample.occlusion) & sample.flow.valid
    if not mask.any():
        return 0.0
    return float(np.abs(warped - sample.img1)[mask].mean())


def generate_dataset(config: GeneratorConfig, seed: int, n: int, out_dir) -> str:
    """Persist n samples plus a manifest; deterministic in (config, seed, n).

    Layout per sample i: `iiiiiii-img1.png`, `-img2.png`, `-flow.flo`,
    `-occ.png`, `-spec.txt`.  With config.quarter each scene is rendered at
    double size and contributes four samples.
    """
    os.makedirs(out_dir, exist_ok=True)
    chash = config.hash()
    entries = []
    idx = 0
    scene = 0
    while idx < n:
        rng = np.random.default_rng([seed, scene])
        if config.quarter:
            big = replace(config, width=config.width * 2, height=config.height * 2)
            spec = sample_scene(big, rng)
            samples = quarter(render_sample(spec, big),
                              strict_in_quadrant=config.strict_quadrant_occlusion)
        else:
            spec = sample_scene(config, rng)
            samples = [render_sample(spec, config)]
        scene += 1
        for s in samples:
            if idx >= n:
                break
            stem = f"{idx:07d}"
            imageops.save_png(os.path.join(out_dir, f"{stem}-img1.png"), s.img1)
            imageops.save_png(os.path.join(out_dir, f"{stem}-img2.png"), s.img2)
            write_flo_file(os.path.join(out_dir, f"{stem}-flow.flo"), s.flow)
            imageops.save_png(os.path.join(out_dir, f"{stem}-occ.png"),
                              s.occlusion.astype(np.float32))
            with open(os.path.join(out_dir, f"{stem}-spec.txt"), "w") as f:
                f.write(spec.to_text())
            entries.append(stem)
            idx += 1
    manifest_path = os.path.join(out_dir, "manifest.txt")
    with open(manifest_path, "w") as f:
        f.write(f"seed = {seed}\n")
        f.write(f"config_hash = {chash}\n")
        f.write(f"count = {len(entries)}\n")
        f.write(f"reference_full_scale_count = {FULL_SCALE_REFERENCE_COUNT}\n")
        for stem in entries:
            f.write(f"{stem}\t{stem}-img1.png\t{stem}-img2.png\t{stem}-flow.flo\t"
                    f"{stem}-occ.png\t{stem}-spec.txt\n")
    return manifest_path
