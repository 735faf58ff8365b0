"""Variational refinement of a coarse network flow prediction.

Starting from the 1/4-resolution prediction, a robust brightness + gradient
constancy energy with boundary-modulated smoothness is minimized coarse to
fine: 20 warp iterations split over the coarse levels (1/4 up to 1/2), then
5 more at full resolution.  The smoothness weight is modulated per pixel by
alpha(x) = alpha_base * exp(-lambda * b(x)^kappa), where b is a normalized
boundary strength map, so smoothing relaxes across image edges.

Each warp iteration linearizes the data term around the current flow and
solves the resulting system with lagged-nonlinearity red-black SOR sweeps.
A damped acceptance step guards every warp iteration: the increment is
halved until the discrete energy does not increase, so the per-level energy
sequence is non-increasing by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from flowlite import imageops
from flowlite.flowcore import FlowField


@dataclass(frozen=True)
class VarParams:
    coarse_iters: int = 20
    fullres_iters: int = 5
    alpha_base: float = 0.05
    lambda_: float = 5.0
    kappa: float = 0.5
    pyramid_factor: float = 2.0
    sor_iters: int = 30
    sor_omega: float = 1.9
    gamma: float = 0.5  # gradient constancy weight
    charbonnier_eps: float = 1e-3

    def __post_init__(self):
        if min(self.coarse_iters, self.fullres_iters, self.sor_iters) < 0:
            raise ValueError("iteration counts must be nonnegative")
        if self.alpha_base <= 0 or self.pyramid_factor <= 1:
            raise ValueError(f"invalid variational parameters {self}")


def detect_boundaries(image: np.ndarray) -> np.ndarray:
    """Boundary strength in [0, 1]: Gaussian presmoothing (sigma 1), Sobel
    gradient magnitude, normalized by its 99th percentile and clamped."""
    gray = imageops.to_gray(image)
    smooth = ndimage.gaussian_filter(gray, sigma=1.0)
    gx = ndimage.sobel(smooth, axis=1)
    gy = ndimage.sobel(smooth, axis=0)
    mag = np.sqrt(gx**2 + gy**2)
    norm = np.percentile(mag, 99.0)
    if norm <= 0:
        return np.zeros_like(mag)
    return np.clip(mag / norm, 0.0, 1.0)


def _dx(a):
    return np.gradient(a, axis=1)


def _dy(a):
    return np.gradient(a, axis=0)


def _warp(img: np.ndarray, u: np.ndarray, v: np.ndarray):
    h, w = img.shape
    xs, ys = imageops.pixel_grid(h, w)
    vals, inb = imageops.bilinear_sample(img, xs + u, ys + v, oob="clamp")
    return vals, inb


def _psi(s2: np.ndarray, eps: float) -> np.ndarray:
    return np.sqrt(s2 + eps * eps)


def _psi_deriv(s2: np.ndarray, eps: float) -> np.ndarray:
    return 0.5 / np.sqrt(s2 + eps * eps)


def energy(i1: np.ndarray, i2: np.ndarray, u: np.ndarray, v: np.ndarray,
           alpha: np.ndarray, params: VarParams) -> float:
    """Discrete robust energy of a flow candidate at one pyramid level."""
    eps = params.charbonnier_eps
    i2w, _ = _warp(i2, u, v)
    data = _psi((i2w - i1) ** 2, eps)
    gdata = _psi((_dx(i2w) - _dx(i1)) ** 2 + (_dy(i2w) - _dy(i1)) ** 2, eps)
    ux, uy = _dx(u), _dy(u)
    vx, vy = _dx(v), _dy(v)
    smooth = alpha * _psi(ux**2 + uy**2 + vx**2 + vy**2, eps)
    return float(data.sum() + params.gamma * gdata.sum() + smooth.sum())


def _solve_increment(i1, i2, u0, v0, alpha, params: VarParams):
    """One warp iteration: linearize around (u0, v0) and solve for the
    increment with lagged-nonlinearity red-black SOR."""
    eps = params.charbonnier_eps
    h, w = i1.shape
    i2w, inb = _warp(i2, u0, v0)

    ix1, iy1 = _dx(i1), _dy(i1)
    ix2, iy2 = _dx(i2w), _dy(i2w)
    ix = 0.5 * (ix1 + ix2)
    iy = 0.5 * (iy1 + iy2)
    iz = i2w - i1
    ixx, ixy = _dx(ix2), _dy(ix2)
    iyy = _dy(iy2)
    ixz = ix2 - ix1
    iyz = iy2 - iy1

    datamask = inb.astype(np.float64)

    du = np.zeros_like(u0)
    dv = np.zeros_like(v0)

    ys, xs = np.mgrid[0:h, 0:w]
    red = (xs + ys) % 2 == 0
    black = ~red

    def neighbor_sums(field, wgt_h, wgt_v):
        """Weighted neighbor sum with zero-flux (no wrap) boundaries."""
        out = np.zeros_like(field)
        out[:, 1:] += wgt_h[:, :-1] * field[:, :-1]
        out[:, :-1] += wgt_h[:, :-1] * field[:, 1:]
        out[1:, :] += wgt_v[:-1, :] * field[:-1, :]
        out[:-1, :] += wgt_v[:-1, :] * field[1:, :]
        return out

    def weight_sums(wgt_h, wgt_v):
        out = np.zeros_like(wgt_h)
        out[:, 1:] += wgt_h[:, :-1]
        out[:, :-1] += wgt_h[:, :-1]
        out[1:, :] += wgt_v[:-1, :]
        out[:-1, :] += wgt_v[:-1, :]
        return out

    omega = params.sor_omega
    relax_every = 5  # recompute lagged nonlinear weights every few sweeps
    psd = psg = None
    a11 = a12 = a22 = rhs_u = rhs_v = None
    wh = wv = wsum = None

    for sweep in range(params.sor_iters):
        if sweep % relax_every == 0:
            s2 = (iz + ix * du + iy * dv) ** 2
            psd = datamask * _psi_deriv(s2, eps)
            g2 = (ixz + ixx * du + ixy * dv) ** 2 + (iyz + ixy * du + iyy * dv) ** 2
            psg = params.gamma * datamask * _psi_deriv(g2, eps)
            u = u0 + du
            v = v0 + dv
            grad2 = _dx(u) ** 2 + _dy(u) ** 2 + _dx(v) ** 2 + _dy(v) ** 2
            pss = alpha * _psi_deriv(grad2, eps)
            wh = 0.5 * (pss[:, :-1] + pss[:, 1:])  # (h, w-1) horizontal edges
            wv = 0.5 * (pss[:-1, :] + pss[1:, :])  # (h-1, w) vertical edges
            # pad edge weights back to full maps for the helper functions
            wh_full = np.zeros_like(pss)
            wh_full[:, :-1] = wh
            wv_full = np.zeros_like(pss)
            wv_full[:-1, :] = wv
            wh, wv = wh_full, wv_full
            wsum = weight_sums(wh, wv)

            a11 = psd * ix * ix + psg * (ixx * ixx + ixy * ixy)
            a12 = psd * ix * iy + psg * (ixy * (ixx + iyy))
            a22 = psd * iy * iy + psg * (ixy * ixy + iyy * iyy)
            rhs_u = -(psd * ix * iz + psg * (ixx * ixz + ixy * iyz))
            rhs_v = -(psd * iy * iz + psg * (ixy * ixz + iyy * iyz))

        for mask in (red, black):
            nu = neighbor_sums(u0 + du, wh, wv) - wsum * u0
            nv = neighbor_sums(v0 + dv, wh, wv) - wsum * v0
            denom_u = a11 + wsum + 1e-12
            denom_v = a22 + wsum + 1e-12
            du_new = (rhs_u - a12 * dv + nu) / denom_u
            dv_new = (rhs_v - a12 * du + nv) / denom_v
            du[mask] += omega * (du_new[mask] - du[mask])
            dv[mask] += omega * (dv_new[mask] - dv[mask])

    return du, dv


def _refine_level(i1, i2, u, v, alpha, n_iters, params: VarParams, energies: list):
    e = energy(i1, i2, u, v, alpha, params)
    energies.append(e)
    for _ in range(n_iters):
        du, dv = _solve_increment(i1, i2, u, v, alpha, params)
        step = 1.0
        accepted = False
        for _ in range(12):
            e_new = energy(i1, i2, u + step * du, v + step * dv, alpha, params)
            if e_new <= e:
                u = u + step * du
                v = v + step * dv
                e = e_new
                accepted = True
                break
            step *= 0.5
        if not accepted:
            pass  # keep the previous flow; energy stays flat
        energies.append(e)
    return u, v


def refine(flow_init: FlowField, img1: np.ndarray, img2: np.ndarray,
           params: VarParams | None = None, return_history: bool = False):
    """Refine a 1/4-resolution flow to a smooth full-resolution field.

    img1/img2 are full-resolution images; flow_init must be exactly 1/4 of
    their size.  Returns a full-resolution, all-valid FlowField (and, with
    return_history, the per-level energy sequences).
    """
    params = params or VarParams()
    h, w = img1.shape[:2]
    if (flow_init.height, flow_init.width) != (h // 4, w // 4):
        raise ValueError(
            f"flow_init is {flow_init.width}x{flow_init.height}, expected "
            f"{w // 4}x{h // 4} for {w}x{h} images")

    g1 = imageops.to_gray(img1)
    g2 = imageops.to_gray(img2)
    b_full = detect_boundaries(img1)

    # coarse levels from 1/4 up to (but excluding) full resolution
    factors = []
    f = 4.0
    while f > 1.0 + 1e-9:
        factors.append(f)
        f /= params.pyramid_factor
    n_coarse = len(factors)
    iters = [params.coarse_iters // n_coarse] * n_coarse
    for i in range(params.coarse_iters - sum(iters)):
        iters[i] += 1

    u = flow_init.u.astype(np.float64).copy()
    v = flow_init.v.astype(np.float64).copy()
    prev_hw = (h // 4, w // 4)
    history = []

    for factor, n_it in zip(factors, iters):
        lh, lw = int(round(h / factor)), int(round(w / factor))
        if (lh, lw) != prev_hw:
            su = lw / prev_hw[1]
            sv = lh / prev_hw[0]
            u = imageops.resize_bilinear(u, lh, lw) * su
            v = imageops.resize_bilinear(v, lh, lw) * sv
            prev_hw = (lh, lw)
        i1 = imageops.resize_bilinear(g1, lh, lw)
        i2 = imageops.resize_bilinear(g2, lh, lw)
        b = imageops.resize_bilinear(b_full, lh, lw)
        alpha = params.alpha_base * np.exp(-params.lambda_ * np.clip(b, 0, 1) ** params.kappa)
        energies: list = []
        u, v = _refine_level(i1, i2, u, v, alpha, n_it, params, energies)
        history.append(energies)

    # full resolution
    u = imageops.resize_bilinear(u, h, w) * (w / prev_hw[1])
    v = imageops.resize_bilinear(v, h, w) * (h / prev_hw[0])
    b = b_full
    alpha = params.alpha_base * np.exp(-params.lambda_ * np.clip(b, 0, 1) ** params.kappa)
    energies = []
    u, v = _refine_level(g1, g2, u, v, alpha, params.fullres_iters, params, energies)
    history.append(energies)

    out = FlowField(u=u.astype(np.float32), v=v.astype(np.float32))
    if return_history:
        return out, history
    return out
