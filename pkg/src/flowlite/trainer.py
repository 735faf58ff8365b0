"""Training loop, learning-rate schedules, splits, fine-tuning, evaluation.

Everything is deterministic given (config, seed, dataset): batch sampling
and per-sample augmentation draw from counter-based substreams keyed by
(seed, iteration, slot), so results do not depend on execution schedule.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from flowlite import augment as aug
from flowlite import imageops, tensornet as tn
from flowlite.flowcore import FlowField, MetricsReport, compute_metrics, read_flo_file
from flowlite.models import FlowNet, multiscale_epe_loss, predict
from flowlite.scenegen import Sample
from flowlite import varrefine


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; carries the failing context."""

    def __init__(self, iteration: int, lr: float, batch_indices):
        self.iteration = iteration
        self.lr = lr
        self.batch_indices = list(batch_indices)
        super().__init__(
            f"non-finite loss at iteration {iteration} (lr={lr:g}, "
            f"batch indices {self.batch_indices})")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    base_lr: float = 1e-4
    step_start: int = 300_000
    step_every: int = 100_000
    step_factor: float = 0.5
    warmup_enabled: bool = False
    warmup_start_lr: float = 1e-6
    warmup_end_lr: float = 1e-4
    warmup_span: int = 10_000
    total_iters: int = 1000
    scale: int = 1  # global divisor applied to all iteration thresholds
    finetune_lr: float = 1e-6
    seed: int = 0
    val_interval: int = 500
    ckpt_interval: int = 2000
    augment: bool = True
    val_count: int = 0  # 0 = one tenth of the dataset

    def __post_init__(self):
        if self.batch_size < 1 or self.base_lr <= 0 or self.finetune_lr <= 0:
            raise ValueError("invalid training configuration")
        if self.scale < 1:
            raise ValueError("scale must be >= 1")


@dataclass(frozen=True)
class SplitSpec:
    train_indices: tuple
    val_indices: tuple
    seed: int

    def __post_init__(self):
        if set(self.train_indices) & set(self.val_indices):
            raise ValueError("train and validation indices overlap")


def make_split(n: int, val_count: int, seed: int) -> SplitSpec:
    order = np.random.default_rng([seed, 9999]).permutation(n)
    return SplitSpec(
        train_indices=tuple(int(i) for i in order[val_count:]),
        val_indices=tuple(int(i) for i in order[:val_count]),
        seed=seed,
    )


def lr_schedule(iteration: int, config: TrainConfig) -> float:
    """Warmup (linear), plateau, then halving steps; all thresholds divided
    by config.scale.  The first halving applies at exactly the step_start
    threshold."""
    span = config.warmup_span // config.scale
    start = config.step_start // config.scale
    every = max(config.step_every // config.scale, 1)
    if config.warmup_enabled and iteration < span:
        f = iteration / span
        return config.warmup_start_lr + f * (config.warmup_end_lr - config.warmup_start_lr)
    if iteration < start:
        return config.base_lr
    n_steps = (iteration - start) // every + 1
    return config.base_lr * config.step_factor**n_steps


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


class InMemoryDataset:
    def __init__(self, samples, fingerprint: str = ""):
        self.samples = list(samples)
        self.fingerprint = fingerprint

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i) -> Sample:
        return self.samples[i]


class DirectoryDataset:
    """Directory of NNNNNNN-{img1,img2}.png / -flow.flo samples with a
    manifest, as written by the generator."""

    def __init__(self, path):
        self.path = path
        manifest = os.path.join(path, "manifest.txt")
        self.stems = []
        self.fingerprint = ""
        with open(manifest) as f:
            for line in f:
                line = line.strip()
                if "\t" in line:
                    self.stems.append(line.split("\t")[0])
                elif line.startswith("config_hash"):
                    self.fingerprint = line.split("=", 1)[1].strip()

    def __len__(self):
        return len(self.stems)

    def __getitem__(self, i) -> Sample:
        stem = self.stems[i]
        p = lambda suffix: os.path.join(self.path, f"{stem}-{suffix}")
        img1 = imageops.load_png(p("img1.png"))
        img2 = imageops.load_png(p("img2.png"))
        flow = read_flo_file(p("flow.flo"))
        occ_path = p("occ.png")
        if os.path.exists(occ_path):
            occ = imageops.load_png(occ_path) > 0.5
        else:
            occ = np.zeros(flow.u.shape, dtype=bool)
        return Sample(img1=img1, img2=img2, flow=flow, occlusion=occ)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


def _pad_sample(sample: Sample, mult: int = 64):
    """Reflect-pad rasters to a multiple of mult; padded pixels invalid."""
    h, w = sample.occlusion.shape
    ph = (-h) % mult
    pw = (-w) % mult
    if ph == 0 and pw == 0:
        return sample
    mode = "reflect" if (ph < h and pw < w) else "edge"
    pad2 = ((0, ph), (0, pw))
    pad3 = pad2 + ((0, 0),)
    valid = np.pad(sample.flow.valid, pad2, mode="constant", constant_values=False)
    return Sample(
        img1=np.pad(sample.img1, pad3, mode=mode),
        img2=np.pad(sample.img2, pad3, mode=mode),
        flow=FlowField(
            u=np.pad(sample.flow.u, pad2, mode="edge"),
            v=np.pad(sample.flow.v, pad2, mode="edge"),
            valid=valid,
        ),
        occlusion=np.pad(sample.occlusion, pad2, mode="edge"),
    )


def _collate(samples):
    img1 = np.stack([s.img1.transpose(2, 0, 1) for s in samples]).astype(np.float32)
    img2 = np.stack([s.img2.transpose(2, 0, 1) for s in samples]).astype(np.float32)
    gt = np.stack([np.stack([s.flow.u, s.flow.v]) for s in samples]).astype(np.float32)
    valid = np.stack([s.flow.valid for s in samples])
    return img1, img2, gt, valid


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: FlowNet
    log: list  # rows: dict(iter, lr, train_loss, val_epe)
    split: SplitSpec
    checkpoints: list = field(default_factory=list)


def _val_epe(model: FlowNet, dataset, indices) -> float:
    epes = []
    for i in indices:
        s = dataset[i]
        pred = predict(model, s.img1, s.img2, test_scale=1.0)
        epes.append(compute_metrics(pred, s.flow).epe)
    return float(np.mean(epes)) if epes else float("nan")


def train(model: FlowNet, dataset, config: TrainConfig, out_dir=None,
          split: SplitSpec | None = None,
          augment_ranges: aug.AugmentRanges | None = None) -> TrainResult:
    """Optimize the model on the dataset's train split.

    Writes checkpoints and a tab-separated metrics log (iter, lr,
    train_loss, val_epe) when out_dir is given.  A non-finite loss aborts
    with TrainingDiverged rather than being skipped.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if split is None:
        val_count = config.val_count or max(len(dataset) // 10, 1)
        split = make_split(len(dataset), val_count, config.seed)
    ranges = augment_ranges or aug.AugmentRanges()

    names = model.parameter_names()
    params = [model.params[n].data for n in names]
    state = tn.AdamState.for_params(params)
    log: list = []
    checkpoints: list = []
    h0, w0 = dataset[0].occlusion.shape

    def save_ckpt(it):
        if out_dir is None:
            return
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, f"ckpt_{it:07d}.ckpt")
        tn.save_checkpoint(path, model.state_dict(), model.config.hash())
        checkpoints.append(path)

    save_ckpt(0)
    train_idx = np.asarray(split.train_indices)
    for it in range(config.total_iters):
        lr = lr_schedule(it, config)
        batch_rng = np.random.default_rng([config.seed, 7, it])
        idx = batch_rng.choice(train_idx, size=config.batch_size, replace=True)
        batch = []
        for slot, i in enumerate(idx):
            s = dataset[int(i)]
            if config.augment:
                srng = np.random.default_rng([config.seed, 11, it, slot])
                spec = aug.sample_augmentation(srng, ranges, w0, h0)
                s = aug.apply_augmentation(s, spec, rng=srng)
            batch.append(_pad_sample(s))
        img1, img2, gt, valid = _collate(batch)
        pyramid = model.forward(img1, img2)
        loss = multiscale_epe_loss(pyramid, gt, valid)
        loss_val = float(loss.data)
        if not np.isfinite(loss_val):
            raise TrainingDiverged(it, lr, idx)
        model.zero_grad()
        loss.backward()
        grads = [model.params[n].grad for n in names]
        if any(g is None or not np.all(np.isfinite(g)) for g in grads):
            raise TrainingDiverged(it, lr, idx)
        tn.adam_step(params, grads, state, lr)

        last = it == config.total_iters - 1
        if it % config.val_interval == 0 or last:
            val = _val_epe(model, dataset, split.val_indices)
            log.append({"iter": it, "lr": lr, "train_loss": loss_val, "val_epe": val})
        if (it + 1) % config.ckpt_interval == 0 or last:
            save_ckpt(it + 1)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "metrics.log"), "w") as f:
            for row in log:
                f.write(f"{row['iter']}\t{row['lr']:.8g}\t{row['train_loss']:.8g}\t"
                        f"{row['val_epe']:.8g}\n")
    return TrainResult(model=model, log=log, split=split, checkpoints=checkpoints)


def finetune(model: FlowNet, dataset, config: TrainConfig, out_dir=None) -> tuple[TrainResult, int]:
    """Two-phase fine-tuning at the low fine-tune learning rate.

    Phase 1 trains on the train split and records the validation-EPE argmin
    iteration; phase 2 restarts from the incoming parameters and trains on
    the full dataset for exactly that many iterations.  Returns the phase-2
    result (tagged "+ft") and the chosen iteration count.
    """
    base = {k: v.copy() for k, v in model.state_dict().items()}
    ft_cfg = replace(config, base_lr=config.finetune_lr, warmup_enabled=False,
                     step_start=config.total_iters + 1)
    phase1 = train(model, dataset, ft_cfg)
    if phase1.log:
        best = min(phase1.log, key=lambda r: (r["val_epe"], r["iter"]))
        best_iter = int(best["iter"])
    else:
        best_iter = 0
    model.load_state_dict(base)
    full_cfg = replace(ft_cfg, total_iters=best_iter, val_count=0)
    if best_iter == 0:
        return TrainResult(model=model, log=[], split=phase1.split), 0
    full_split = SplitSpec(train_indices=tuple(range(len(dataset))), val_indices=(),
                           seed=config.seed)
    result = train(model, dataset, full_cfg, out_dir=out_dir, split=full_split)
    return result, best_iter


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def evaluate(model: FlowNet | None, dataset, indices=None, test_scale: float | None = None,
             variational: bool = False, var_params: varrefine.VarParams | None = None):
    """Aggregate metrics over a dataset (macro-averaged per sample).

    model=None evaluates the constant zero-flow predictor.  With
    variational=True the prediction is refined before scoring.  Returns
    (MetricsReport, per-sample row list).
    """
    if indices is None:
        indices = range(len(dataset))
    rows = []
    for i in indices:
        s = dataset[i]
        if model is None:
            pred = FlowField(u=np.zeros_like(s.flow.u), v=np.zeros_like(s.flow.v))
        else:
            pred = predict(model, s.img1, s.img2, test_scale=test_scale)
        if variational:
            h, w = s.occlusion.shape
            coarse = FlowField(
                u=imageops.resize_bilinear(pred.u.astype(np.float64), h // 4, w // 4).astype(np.float32) / 4,
                v=imageops.resize_bilinear(pred.v.astype(np.float64), h // 4, w // 4).astype(np.float32) / 4,
            )
            pred = varrefine.refine(coarse, s.img1, s.img2, var_params)
        m = compute_metrics(pred, s.flow)
        rows.append({"index": int(i), "epe": m.epe, "aae": m.aae,
                     "epe_s40plus": m.epe_s40plus, "n": m.n_evaluated})
    epe = float(np.mean([r["epe"] for r in rows]))
    aae = float(np.mean([r["aae"] for r in rows]))
    s40 = [r["epe_s40plus"] for r in rows if r["epe_s40plus"] is not None]
    report = MetricsReport(
        epe=epe,
        aae=aae,
        epe_s40plus=float(np.mean(s40)) if s40 else None,
        n_evaluated=int(sum(r["n"] for r in rows)),
    )
    return report, rows


def format_report(rows: dict) -> str:
    """Text table with one row per (model, refinement) combination.

    rows maps a label like "simple", "simple+v", "corr+ft" to a
    MetricsReport.
    """
    lines = [f"{'method':<16} {'EPE':>8} {'AAE':>8} {'s40+':>8} {'pixels':>10}"]
    for label in rows:
        r = rows[label]
        s40 = f"{r.epe_s40plus:8.3f}" if r.epe_s40plus is not None else f"{'-':>8}"
        lines.append(f"{label:<16} {r.epe:8.3f} {r.aae:8.3f} {s40} {r.n_evaluated:>10}")
    return "\n".join(lines) + "\n"
