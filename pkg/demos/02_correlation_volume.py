"""Peek inside the correlation layer's cost volume.

Build a feature map, shift it by a known displacement, and confirm the
correlation layer's strongest response sits at that displacement.
"""

import numpy as np

from flowlite.corrlayer import CorrParams, correlate
from flowlite.tensornet import Tensor

rng = np.random.default_rng(0)
h = w = 24
f1 = rng.standard_normal((1, 16, h, w)).astype(np.float64)

shift = (2, -1)  # (dy, dx): features move down 2, left 1 between frames
f2 = np.roll(f1, shift, axis=(2, 3))

params = CorrParams(k=1, d=3, s1=1, s2=1)
cost = correlate(Tensor(f1), Tensor(f2), params).data[0]  # (49, h, w)

# each channel is one displacement (dy, dx), row-major from (-3,-3) to (3,3)
side = 2 * params.d + 1
interior = cost[:, 8:-8, 8:-8]
winners = interior.argmax(axis=0)
dy = winners // side - params.d
dx = winners % side - params.d

print(f"true displacement (dy, dx) = {shift}")
print(f"argmax displacement, interior mode: "
      f"({np.bincount(dy.ravel() + 3).argmax() - 3}, "
      f"{np.bincount(dx.ravel() + 3).argmax() - 3})")
print(f"pixels voting for the true shift: "
      f"{100 * ((dy == shift[0]) & (dx == shift[1])).mean():.1f}%")
