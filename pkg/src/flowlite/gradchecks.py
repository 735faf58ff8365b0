"""Central finite-difference gradient checks for every registered op.

Each op is probed on several random shapes in double precision; the loss is
a fixed random projection of the op output so every output element
influences the scalar.  Used by the test suite and the `gradcheck` CLI
subcommand.
"""

from __future__ import annotations

import numpy as np

from flowlite import tensornet as tn
from flowlite.corrlayer import CorrParams, correlate

EPS = 1e-5
RTOL = 1e-4


def _project(out: tn.Tensor, rng) -> tn.Tensor:
    r = rng.standard_normal(out.shape)
    return tn.weighted_sum(out, r)


def _check(build, arrays) -> float:
    return tn.gradcheck(build, arrays, eps=EPS, rtol=RTOL)


def check_conv2d(rng) -> float:
    worst = 0.0
    cases = [
        # (n, cin, h, w, cout, k, stride)
        (1, 2, 6, 6, 3, 3, 1),
        (2, 1, 5, 5, 2, 3, 2),
        (1, 3, 7, 6, 2, 5, 2),
        (1, 1, 4, 4, 1, 1, 1),
        (2, 2, 8, 8, 3, 7, 2),
    ]
    for n, cin, h, w, cout, k, s in cases:
        x = rng.standard_normal((n, cin, h, w))
        wt = rng.standard_normal((cout, cin, k, k))
        b = rng.standard_normal(cout)
        rproj = None

        def build(xt, wtt, bt, _s=s):
            nonlocal rproj
            out = tn.conv2d(xt, wtt, bt, stride=_s)
            if rproj is None:
                rproj = np.random.default_rng(0).standard_normal(out.shape)
            return tn.weighted_sum(out, rproj)

        worst = max(worst, _check(build, [x, wt, b]))
    return worst


def check_upconv2d(rng) -> float:
    worst = 0.0
    cases = [
        (1, 2, 3, 3, 2),
        (2, 1, 4, 4, 3),
        (1, 3, 2, 5, 1),
        (1, 1, 5, 2, 2),
        (2, 2, 3, 4, 2),
    ]
    for n, cin, h, w, cout in cases:
        x = rng.standard_normal((n, cin, h, w))
        wt = rng.standard_normal((cin, cout, 4, 4))
        b = rng.standard_normal(cout)
        rproj = None

        def build(xt, wtt, bt):
            nonlocal rproj
            out = tn.upconv2d(xt, wtt, bt, stride=2, pad=1)
            if rproj is None:
                rproj = np.random.default_rng(1).standard_normal(out.shape)
            return tn.weighted_sum(out, rproj)

        worst = max(worst, _check(build, [x, wt, b]))
    return worst


def _elementwise_cases(rng, n_cases=5):
    for _ in range(n_cases):
        n = int(rng.integers(1, 3))
        c = int(rng.integers(1, 4))
        h = int(rng.integers(2, 7))
        w = int(rng.integers(2, 7))
        yield rng.standard_normal((n, c, h, w))


def check_relu(rng) -> float:
    worst = 0.0
    for x in _elementwise_cases(rng):
        x += 0.05 * np.sign(x)  # keep probes away from the kink
        rproj = np.random.default_rng(2).standard_normal(x.shape)
        worst = max(worst, _check(lambda t: tn.weighted_sum(tn.relu(t), rproj), [x]))
        worst = max(worst, _check(lambda t: tn.weighted_sum(tn.relu(t, 0.1), rproj), [x]))
    return worst


def check_concat(rng) -> float:
    worst = 0.0
    for _ in range(5):
        n, h, w = 1, int(rng.integers(2, 5)), int(rng.integers(2, 5))
        a = rng.standard_normal((n, int(rng.integers(1, 4)), h, w))
        b = rng.standard_normal((n, int(rng.integers(1, 4)), h, w))
        rproj = np.random.default_rng(3).standard_normal(
            (n, a.shape[1] + b.shape[1], h, w))
        worst = max(worst, _check(
            lambda ta, tb: tn.weighted_sum(tn.concat_channels([ta, tb]), rproj), [a, b]))
    return worst


def check_resize(rng) -> float:
    worst = 0.0
    for factor in (2, 2, 3, 2, 4):
        x = rng.standard_normal((1, int(rng.integers(1, 3)),
                                 int(rng.integers(2, 5)), int(rng.integers(2, 5))))
        out_shape = (x.shape[0], x.shape[1], x.shape[2] * factor, x.shape[3] * factor)
        rproj = np.random.default_rng(4).standard_normal(out_shape)
        worst = max(worst, _check(
            lambda t, f=factor: tn.weighted_sum(tn.bilinear_resize(t, f), rproj), [x]))
    return worst


def check_avg_downsample(rng) -> float:
    worst = 0.0
    for factor in (2, 2, 3, 2, 4):
        h = factor * int(rng.integers(1, 4))
        w = factor * int(rng.integers(1, 4))
        x = rng.standard_normal((1, int(rng.integers(1, 3)), h, w))
        out_shape = (x.shape[0], x.shape[1], h // factor, w // factor)
        rproj = np.random.default_rng(5).standard_normal(out_shape)
        worst = max(worst, _check(
            lambda t, f=factor: tn.weighted_sum(tn.avg_downsample(t, f), rproj), [x]))
    return worst


def check_correlation(rng) -> float:
    worst = 0.0
    cases = [
        CorrParams(k=0, d=1, s1=1, s2=1),
        CorrParams(k=1, d=1, s1=1, s2=1),
        CorrParams(k=0, d=2, s1=2, s2=1),
        CorrParams(k=1, d=2, s1=1, s2=2),
        CorrParams(k=2, d=3, s1=2, s2=2),
    ]
    for params in cases:
        c = int(rng.integers(1, 3))
        h = int(rng.integers(4, 7))
        w = int(rng.integers(4, 7))
        f1 = rng.standard_normal((1, c, h, w))
        f2 = rng.standard_normal((1, c, h, w))
        rproj = None

        def build(t1, t2, _p=params):
            nonlocal rproj
            out = correlate(t1, t2, _p)
            if rproj is None:
                rproj = np.random.default_rng(6).standard_normal(out.shape)
            return tn.weighted_sum(out, rproj)

        worst = max(worst, _check(build, [f1, f2]))
    return worst


ALL_CHECKS = {
    "conv2d": check_conv2d,
    "upconv2d": check_upconv2d,
    "relu": check_relu,
    "concat": check_concat,
    "bilinear_resize": check_resize,
    "avg_downsample": check_avg_downsample,
    "correlation": check_correlation,
}


def run_all(seed: int = 0) -> dict:
    """Run every op check; returns {op: max relative error}."""
    results = {}
    for name, fn in ALL_CHECKS.items():
        results[name] = fn(np.random.default_rng(seed))
    return results
