"""Show what the training-time augmentation does to one sample.

Applies several random geometric + photometric augmentations to the same
image pair and saves the results side by side with the transformed flow.
"""

import pathlib

import numpy as np

from flowlite import augment, imageops, scenegen
from flowlite.flowcore import flow_to_color

out = pathlib.Path(__file__).parent / "out" / "augment"
out.mkdir(parents=True, exist_ok=True)

cfg = scenegen.GeneratorConfig(width=192, height=144)
sample = scenegen.render_sample(
    scenegen.sample_scene(cfg, np.random.default_rng([5, 0])), cfg)
imageops.save_png(out / "orig-img1.png", sample.img1)
imageops.save_png(out / "orig-flow.png", flow_to_color(sample.flow))

ranges = augment.AugmentRanges()
for i in range(4):
    rng = np.random.default_rng([6, i])
    spec = augment.sample_augmentation(rng, ranges, cfg.width, cfg.height)
    aug = augment.apply_augmentation(sample, spec, rng=rng)
    imageops.save_png(out / f"aug{i}-img1.png", aug.img1)
    imageops.save_png(out / f"aug{i}-img2.png", aug.img2)
    imageops.save_png(out / f"aug{i}-flow.png", flow_to_color(aug.flow))
    print(f"aug {i}: valid pixels {100 * aug.flow.valid.mean():5.1f}%, "
          f"mean |flow| {np.hypot(aug.flow.u, aug.flow.v)[aug.flow.valid].mean():5.2f} px")

print(f"\nwrote augmentation gallery to {out}")
