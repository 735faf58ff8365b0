"""The two flow network variants and their shared refinement decoder.

Both networks contract through nine convolutions (six of them stride 2,
kernel sizes 7/5/5 then 3) down to a 1/64 bottleneck, then expand through
four resolution-doubling steps.  A 2-channel flow head sits at the
bottleneck and after each expansion step, giving five predictions from
1/64 to 1/4 of the input; the full-resolution flow is a bilinear x4
upsampling of the finest head.

"simple" stacks the image pair into a 6-channel input; "corr" runs two
shared-weight streams to 1/8 resolution, correlates them, and concatenates
a 1x1-conv "redirect" of the first stream's features with the cost volume.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from flowlite import configio, imageops, tensornet as tn
from flowlite.corrlayer import CorrParams, correlate
from flowlite.flowcore import FlowField

# Reference encoder widths; actual widths divide these by channel_scale.
ENCODER_WIDTHS = (64, 128, 256, 256, 512, 512, 512, 512, 1024)
DECODER_WIDTHS = (512, 256, 128, 64)
ENCODER_KERNELS = (7, 5, 5, 3, 3, 3, 3, 3, 3)
ENCODER_STRIDES = (2, 2, 2, 1, 2, 1, 2, 1, 2)

# Per-level loss weights, coarsest (1/64) to finest (1/4).
DEFAULT_LOSS_WEIGHTS = (0.32, 0.08, 0.02, 0.01, 0.005)


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "simple"  # "simple" or "corr"
    channel_scale: int = 1
    corr: CorrParams = field(default_factory=CorrParams)
    corr_normalize: bool = False
    refinement_levels: int = 4
    leaky_slope: float = 0.0
    redirect_base: int = 32  # width of the post-correlation redirect path at scale 1
    upconv_kernel: int = 4

    def __post_init__(self):
        if self.variant not in ("simple", "corr"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.channel_scale < 1:
            raise ValueError("channel_scale must be >= 1")

    def width(self, base: int) -> int:
        return max(base // self.channel_scale, 1)

    def hash(self) -> str:
        return tn.config_hash(configio.format_kv(configio.to_flat(self)))


class FlowNet:
    """A constructed model graph: parameter store plus define-by-run forward."""

    # Downsampling factor of each flow head, coarse to fine.
    LEVEL_FACTORS = (64, 32, 16, 8, 4)

    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.params: dict[str, tn.Tensor] = {}
        rng = rng or np.random.default_rng(0)
        self._build(rng)

    # -- construction -------------------------------------------------------

    def _add_conv(self, name: str, cin: int, cout: int, k: int, rng) -> None:
        self.params[name + ".w"] = tn.Tensor(
            tn.he_init(rng, (cout, cin, k, k), dtype=self.dtype), requires_grad=True)
        self.params[name + ".b"] = tn.Tensor(
            np.zeros(cout, dtype=self.dtype), requires_grad=True)

    def _add_upconv(self, name: str, cin: int, cout: int, k: int, rng) -> None:
        self.params[name + ".w"] = tn.Tensor(
            tn.he_init(rng, (cin, cout, k, k), fan_in=cin * k * k, dtype=self.dtype),
            requires_grad=True)
        self.params[name + ".b"] = tn.Tensor(
            np.zeros(cout, dtype=self.dtype), requires_grad=True)

    def _build(self, rng) -> None:
        cfg = self.config
        w = [cfg.width(b) for b in ENCODER_WIDTHS]
        d = [cfg.width(b) for b in DECODER_WIDTHS]
        if cfg.variant == "simple":
            cins = [6] + w[:-1]
            for i in range(9):
                self._add_conv(f"conv{i}", cins[i], w[i], ENCODER_KERNELS[i], rng)
        else:
            # shared stream: first three convs on each image separately
            cins = [3, w[0], w[1]]
            for i in range(3):
                self._add_conv(f"conv{i}", cins[i], w[i], ENCODER_KERNELS[i], rng)
            redirect = max(cfg.redirect_base // cfg.channel_scale, 1)
            self._add_conv("conv_redirect", w[2], redirect, 1, rng)
            merged = cfg.corr.n_channels + redirect
            cins = [merged, w[3], w[4], w[5], w[6], w[7]]
            for i, cin in zip(range(3, 9), cins):
                self._add_conv(f"conv{i}", cin, w[i], ENCODER_KERNELS[i], rng)

        # decoder: head at the bottleneck plus one per refinement step
        self._add_conv("pred0", w[8], 2, 3, rng)
        skips = [w[7], w[5], w[3], w[1]]  # features at 1/32, 1/16, 1/8, 1/4
        prev = w[8]
        for lvl in range(cfg.refinement_levels):
            self._add_upconv(f"deconv{lvl}", prev, d[lvl], cfg.upconv_kernel, rng)
            cat = d[lvl] + skips[lvl] + 2
            self._add_conv(f"pred{lvl + 1}", cat, 2, 3, rng)
            prev = cat

    # -- parameter access ---------------------------------------------------

    def parameter_names(self) -> list[str]:
        return sorted(self.params)

    def parameter_arrays(self) -> list[np.ndarray]:
        return [self.params[n].data for n in self.parameter_names()]

    def state_dict(self) -> dict:
        return {n: self.params[n].data.copy() for n in self.params}

    def load_state_dict(self, state: dict) -> None:
        for n, t in self.params.items():
            if n not in state:
                raise ValueError(f"checkpoint is missing parameter {n}")
            if tuple(state[n].shape) != tuple(t.data.shape):
                raise ValueError(
                    f"architecture mismatch for {n}: checkpoint {state[n].shape} "
                    f"vs model {t.data.shape}")
            t.data = state[n].astype(self.dtype).copy()

    def astype(self, dtype) -> "FlowNet":
        self.dtype = dtype
        for t in self.params.values():
            t.data = t.data.astype(dtype)
        return self

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    # -- forward ------------------------------------------------------------

    def _conv(self, name: str, x: tn.Tensor, stride: int = 1, act: bool = True) -> tn.Tensor:
        y = tn.conv2d(x, self.params[name + ".w"], self.params[name + ".b"], stride=stride)
        return tn.relu(y, self.config.leaky_slope) if act else y

    def _upconv(self, name: str, x: tn.Tensor) -> tn.Tensor:
        y = tn.upconv2d(x, self.params[name + ".w"], self.params[name + ".b"],
                        stride=2, pad=(self.config.upconv_kernel - 1) // 2)
        return tn.relu(y, self.config.leaky_slope)

    def forward(self, img1, img2) -> list[tn.Tensor]:
        """(n,3,h,w) image pair -> flow pyramid, coarsest (1/64) to finest (1/4).

        h and w must be divisible by 64 so the skip connections align.
        """
        x1 = img1 if isinstance(img1, tn.Tensor) else tn.Tensor(np.asarray(img1, dtype=self.dtype))
        x2 = img2 if isinstance(img2, tn.Tensor) else tn.Tensor(np.asarray(img2, dtype=self.dtype))
        h, w = x1.shape[2], x1.shape[3]
        if h % 64 or w % 64:
            raise ValueError(f"input resolution {w}x{h} must be divisible by 64")

        if self.config.variant == "simple":
            x = tn.concat_channels([x1, x2])
            x = self._conv("conv0", x, ENCODER_STRIDES[0])
            skip4 = self._conv("conv1", x, ENCODER_STRIDES[1])  # 1/4
            x = self._conv("conv2", skip4, ENCODER_STRIDES[2])  # 1/8
            merged = x
        else:
            s1 = self._conv("conv0", x1, 2)
            s2 = self._conv("conv0", x2, 2)
            s1b = self._conv("conv1", s1, 2)
            s2b = self._conv("conv1", s2, 2)
            f1 = self._conv("conv2", s1b, 2)
            f2 = self._conv("conv2", s2b, 2)
            cost = correlate(f1, f2, self.config.corr, self.config.corr_normalize)
            cost = tn.relu(cost, self.config.leaky_slope)
            redirect = self._conv("conv_redirect", f1, 1)
            merged = tn.concat_channels([cost, redirect])
            skip4 = s1b  # first-stream features at 1/4

        skip8 = self._conv("conv3", merged, ENCODER_STRIDES[3])  # conv3_1, 1/8
        x = self._conv("conv4", skip8, ENCODER_STRIDES[4])
        skip16 = self._conv("conv5", x, ENCODER_STRIDES[5])  # conv4_1, 1/16
        x = self._conv("conv6", skip16, ENCODER_STRIDES[6])
        skip32 = self._conv("conv7", x, ENCODER_STRIDES[7])  # conv5_1, 1/32
        bottleneck = self._conv("conv8", skip32, ENCODER_STRIDES[8])  # 1/64

        flows = [self._conv("pred0", bottleneck, act=False)]
        skips = [skip32, skip16, skip8, skip4]
        feat = bottleneck
        for lvl in range(self.config.refinement_levels):
            up = self._upconv(f"deconv{lvl}", feat)
            upflow = tn.bilinear_resize(flows[-1], 2)
            feat = tn.concat_channels([up, skips[lvl], upflow])
            flows.append(self._conv(f"pred{lvl + 1}", feat, act=False))
        return flows


def build_flownet_s(config: ModelConfig | None = None, rng=None, **kwargs) -> FlowNet:
    cfg = config or ModelConfig(variant="simple", **kwargs)
    if cfg.variant != "simple":
        raise ValueError("build_flownet_s needs a 'simple' config")
    return FlowNet(cfg, rng)


def build_flownet_c(config: ModelConfig | None = None, rng=None, **kwargs) -> FlowNet:
    cfg = config or ModelConfig(variant="corr", **kwargs)
    if cfg.variant != "corr":
        raise ValueError("build_flownet_c needs a 'corr' config")
    return FlowNet(cfg, rng)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def downsample_gt(gt: np.ndarray, factor: int) -> np.ndarray:
    """Average-downsample a (n,2,h,w) flow and convert vectors to the
    coarse level's pixel units (divide by the factor)."""
    n, c, h, w = gt.shape
    out = gt.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))
    return out / factor


def multiscale_epe_loss(pyramid, gt: np.ndarray, valid: np.ndarray | None = None,
                        weights=DEFAULT_LOSS_WEIGHTS) -> tn.Tensor:
    """Deeply supervised endpoint-error loss over the flow pyramid.

    gt is (n,2,h,w) at full input resolution; valid, if given, is (n,h,w)
    and weights the per-pixel means (downsampled by averaging).  weights is
    one coefficient per pyramid level, coarse to fine.
    """
    if len(weights) != len(pyramid):
        raise ValueError(f"{len(weights)} weights for {len(pyramid)} pyramid levels")
    n, _, h, w = gt.shape
    total = None
    for pred, wgt in zip(pyramid, weights):
        factor = h // pred.shape[2]
        gt_l = downsample_gt(gt.astype(np.float64), factor).astype(pred.dtype)
        if valid is not None:
            vmap = valid.astype(np.float64).reshape(n, h // factor, factor, w // factor, factor)
            vmap = vmap.mean(axis=(2, 4)).astype(pred.dtype)
        else:
            vmap = None
        term = tn.scale(tn.weighted_epe(pred, gt_l, vmap), wgt)
        total = term if total is None else tn.add(total, term)
    return total


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


def _pad_to_multiple(img: np.ndarray, mult: int):
    """Reflect-pad (h,w,...) to the next multiple; returns (padded, (h, w))."""
    h, w = img.shape[:2]
    ph = (-h) % mult
    pw = (-w) % mult
    if ph == 0 and pw == 0:
        return img, (h, w)
    pad = [(0, ph), (0, pw)] + [(0, 0)] * (img.ndim - 2)
    mode = "reflect" if (ph < h and pw < w) else "edge"
    return np.pad(img, pad, mode=mode), (h, w)


def default_test_scale(config: ModelConfig) -> float:
    return 1.25 if config.variant == "corr" else 1.0


def predict(model: FlowNet, img1: np.ndarray, img2: np.ndarray,
            test_scale: float | None = None) -> FlowField:
    """Full-resolution flow for one (h,w,3) image pair in [0,1].

    Inputs are bilinearly upscaled by test_scale, padded to a multiple of 64,
    run through the net; the finest pyramid level is bilinearly upsampled x4
    (with vectors x4, back to input-pixel units), cropped, resized to the
    original resolution and divided by test_scale.
    """
    if test_scale is None:
        test_scale = default_test_scale(model.config)
    h0, w0 = img1.shape[:2]
    if test_scale != 1.0:
        sh, sw = int(round(h0 * test_scale)), int(round(w0 * test_scale))
        img1 = imageops_resize(img1, sh, sw)
        img2 = imageops_resize(img2, sh, sw)
    else:
        sh, sw = h0, w0
    p1, _ = _pad_to_multiple(img1, 64)
    p2, _ = _pad_to_multiple(img2, 64)
    x1 = p1.transpose(2, 0, 1)[None].astype(model.dtype)
    x2 = p2.transpose(2, 0, 1)[None].astype(model.dtype)
    flows = model.forward(x1, x2)
    finest = flows[-1].data[0]  # (2, H/4, W/4), vectors in quarter-pixel units
    full = np.stack([
        np.asarray(tn.bilinear_resize(tn.Tensor(finest[None, c : c + 1]), 4).data[0, 0])
        for c in range(2)
    ]) * 4.0
    full = full[:, :sh, :sw]
    u = imageops_resize(full[0], h0, w0)
    v = imageops_resize(full[1], h0, w0)
    return FlowField(u=u / test_scale, v=v / test_scale)


def imageops_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    return imageops.resize_bilinear(img, out_h, out_w)
