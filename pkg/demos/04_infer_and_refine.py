"""Run a trained network on a fresh scene, then refine the flow variationally.

Expects the checkpoint written by 03_train_small.py. The variational pass
polishes the network's 1/4-resolution estimate against the image pair and
usually shaves off some endpoint error on smooth regions.
"""

import pathlib

import numpy as np

from flowlite import imageops, scenegen, tensornet, varrefine
from flowlite.flowcore import FlowField, compute_metrics, flow_to_color
from flowlite.models import FlowNet, ModelConfig, predict

here = pathlib.Path(__file__).parent
ckpt = here / "out" / "train" / "ckpt_0000400.ckpt"
if not ckpt.exists():
    raise SystemExit("run 03_train_small.py first to produce a checkpoint")

out = here / "out" / "infer"
out.mkdir(parents=True, exist_ok=True)

model = FlowNet(ModelConfig(variant="simple", channel_scale=8))
state, _ = tensornet.load_checkpoint(ckpt)
model.load_state_dict(state)

cfg = scenegen.GeneratorConfig(width=64, height=48)
sample = scenegen.render_sample(
    scenegen.sample_scene(cfg, np.random.default_rng([999, 0])), cfg)

pred = predict(model, sample.img1, sample.img2)
net_epe = compute_metrics(pred, sample.flow).epe

# hand the network's coarse estimate to the variational stage
h, w = sample.img1.shape[:2]
init = FlowField(
    u=(imageops.resize_bilinear(pred.u.astype(np.float64), h // 4, w // 4) / 4).astype(np.float32),
    v=(imageops.resize_bilinear(pred.v.astype(np.float64), h // 4, w // 4) / 4).astype(np.float32))
refined = varrefine.refine(init, sample.img1, sample.img2)
ref_epe = compute_metrics(refined, sample.flow).epe

print(f"network EPE:            {net_epe:.3f}")
print(f"network + variational:  {ref_epe:.3f}")

imageops.save_png(out / "flow-gt.png", flow_to_color(sample.flow))
imageops.save_png(out / "flow-net.png", flow_to_color(pred))
imageops.save_png(out / "flow-refined.png", flow_to_color(refined))
print(f"wrote flow visualizations to {out}")
