"""Correlation (cost volume) layer: multiplicative patch comparison between
two feature maps over a limited, strided displacement neighborhood.

The forward pass computes, for every strided position x1 and every
displacement delta on the s2-strided grid with max-norm <= d,

    out[index(delta), x1] = sum over patch offsets o in [-k,k]^2 of
                            <f1(x1 + o), f2(x1 + delta + o)>

summing over channels; out-of-bounds reads contribute zero.  Displacement
channels are ordered row-major over (dy, dx) from (-d,-d) to (+d,+d).
The layer has no trainable weights; backward is the exact adjoint of this
bilinear map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from flowlite.tensornet import Tensor


@dataclass(frozen=True)
class CorrParams:
    """Patch half-width k, max displacement d, position stride s1,
    displacement stride s2."""

    k: int = 0
    d: int = 20
    s1: int = 1
    s2: int = 2

    def __post_init__(self):
        if self.k < 0 or self.d < 0 or self.s1 < 1 or self.s2 < 1:
            raise ValueError(f"invalid correlation parameters {self}")

    @property
    def displacements(self) -> list[tuple[int, int]]:
        """Strided displacement grid, row-major (dy outer, dx inner)."""
        steps = self.d // self.s2
        rng = [i * self.s2 for i in range(-steps, steps + 1)]
        return [(dy, dx) for dy in rng for dx in rng]

    @property
    def n_channels(self) -> int:
        return (2 * (self.d // self.s2) + 1) ** 2


def _shift2d(a: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """a sampled at (y+dy, x+dx) with zero fill; spatial axes are the last two."""
    h, w = a.shape[-2:]
    out = np.zeros_like(a)
    if abs(dy) >= h or abs(dx) >= w:
        return out
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    yd = slice(max(-dy, 0), h + min(-dy, 0))
    xd = slice(max(-dx, 0), w + min(-dx, 0))
    out[..., yd, xd] = a[..., ys, xs]
    return out


def _boxsum(a: np.ndarray, k: int) -> np.ndarray:
    """Sum over a (2k+1)^2 window centered at each pixel, zero padded.

    Symmetric window + zero padding makes this operator self-adjoint.
    """
    if k == 0:
        return a
    out = np.zeros_like(a)
    for oy in range(-k, k + 1):
        for ox in range(-k, k + 1):
            out += _shift2d(a, oy, ox)
    return out


def correlate_forward(f1: np.ndarray, f2: np.ndarray, params: CorrParams,
                      normalize: bool = False) -> np.ndarray:
    """(n,c,h,w) x (n,c,h,w) -> (n, D_s^2, h', w') cost volume."""
    if f1.shape != f2.shape:
        raise ValueError(f"feature map shape mismatch: {f1.shape} vs {f2.shape}")
    n, c, h, w = f1.shape
    disps = params.displacements
    out = np.empty((n, len(disps), len(range(0, h, params.s1)), len(range(0, w, params.s1))),
                   dtype=f1.dtype)
    for ch, (dy, dx) in enumerate(disps):
        prod = (f1 * _shift2d(f2, dy, dx)).sum(axis=1)  # (n,h,w)
        out[:, ch] = _boxsum(prod, params.k)[:, :: params.s1, :: params.s1]
    if normalize:
        out /= c * (2 * params.k + 1) ** 2
    return out


def correlate_backward(grad_out: np.ndarray, f1: np.ndarray, f2: np.ndarray,
                       params: CorrParams, normalize: bool = False):
    """Exact adjoint of correlate_forward: returns (grad_f1, grad_f2)."""
    n, c, h, w = f1.shape
    disps = params.displacements
    if grad_out.shape[1] != len(disps):
        raise ValueError(f"grad_out has {grad_out.shape[1]} channels, expected {len(disps)}")
    g = grad_out
    if normalize:
        g = g / (c * (2 * params.k + 1) ** 2)
    gf1 = np.zeros_like(f1)
    gf2 = np.zeros_like(f2)
    for ch, (dy, dx) in enumerate(disps):
        # Scatter the strided output positions back to the dense grid, then
        # apply the (self-adjoint) box sum.
        dense = np.zeros((n, h, w), dtype=f1.dtype)
        dense[:, :: params.s1, :: params.s1] = g[:, ch]
        q = _boxsum(dense, params.k)[:, None]  # (n,1,h,w)
        gf1 += q * _shift2d(f2, dy, dx)
        gf2 += _shift2d(q * f1, -dy, -dx)
    return gf1, gf2


def correlate(f1: Tensor, f2: Tensor, params: CorrParams, normalize: bool = False) -> Tensor:
    """Correlation as a tape op on the autodiff graph."""
    out = correlate_forward(f1.data, f2.data, params, normalize)

    def bwd(g):
        return correlate_backward(g, f1.data, f2.data, params, normalize)

    return Tensor(out, parents=(f1, f2), backward_fn=bwd, op="correlate")
