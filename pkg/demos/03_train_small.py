"""Train a narrow two-frame flow network on a small synthetic set.

Uses a 1/8-width network on 200 low-resolution samples for a couple of
hundred iterations -- enough to watch the loss fall and the validation
endpoint error dip under the zero-flow baseline. Takes a few minutes on a
laptop CPU. The checkpoint is reused by 04_infer_and_refine.py.
"""

import pathlib

import numpy as np

from flowlite import scenegen, trainer
from flowlite.models import FlowNet, ModelConfig

out = pathlib.Path(__file__).parent / "out" / "train"
out.mkdir(parents=True, exist_ok=True)

cfg = scenegen.GeneratorConfig(width=64, height=48)
samples = [
    scenegen.render_sample(scenegen.sample_scene(cfg, np.random.default_rng([0, i])), cfg)
    for i in range(200)
]
dataset = trainer.InMemoryDataset(samples)
split = trainer.make_split(len(dataset), 20, seed=0)

baseline, _ = trainer.evaluate(None, dataset, indices=split.val_indices)
print(f"zero-flow baseline EPE: {baseline.epe:.3f}\n")

model = FlowNet(ModelConfig(variant="simple", channel_scale=8), np.random.default_rng(7))
config = trainer.TrainConfig(total_iters=400, batch_size=8, augment=False,
                             val_interval=100, ckpt_interval=400, seed=0)
result = trainer.train(model, dataset, config, split=split, out_dir=out)

for row in result.log:
    print(f"iter {row['iter']:4d}  lr {row['lr']:.1e}  "
          f"train loss {row['train_loss']:.4f}  val EPE {row['val_epe']:.3f}")
print(f"\ncheckpoints and metrics.log written to {out}")
