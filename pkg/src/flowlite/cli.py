"""Command line entry point tying the pipeline together.

Subcommands: generate, train, finetune, eval, infer, viz, gradcheck.
Configs are flat key=value files; --set key=value overrides individual
entries (unknown keys are rejected).  Every run writes a resolved-config
snapshot into its output directory for reproducibility.  Failures exit
nonzero with a single machine-parsable `error: ...` line on stderr.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from flowlite import configio, imageops, scenegen, tensornet as tn
from flowlite.augment import AugmentRanges
from flowlite.flowcore import flow_to_color, read_flo_file, write_flo_file
from flowlite.gradchecks import RTOL, run_all
from flowlite.models import FlowNet, ModelConfig, predict
from flowlite.scenegen import GeneratorConfig
from flowlite.trainer import (DirectoryDataset, TrainConfig, evaluate, finetune,
                              format_report, train)
from flowlite.varrefine import VarParams, refine


def _load_config(cls, path, overrides):
    flat = {}
    if path:
        with open(path) as f:
            flat = configio.parse_kv_text(f.read())
    for ov in overrides or []:
        if "=" not in ov:
            raise ValueError(f"override must be key=value, got {ov!r}")
        k, v = ov.split("=", 1)
        flat[k.strip()] = v.strip()
    return configio.from_flat(cls, flat)


def _snapshot(out_dir, name, obj):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, name), "w") as f:
        f.write(configio.format_kv(configio.to_flat(obj)))


def _load_model(model_cfg_path, overrides, checkpoint=None, seed=0) -> FlowNet:
    cfg = _load_config(ModelConfig, model_cfg_path, overrides)
    model = FlowNet(cfg, np.random.default_rng([seed, 13]))
    if checkpoint:
        state, _ = tn.load_checkpoint(checkpoint)
        model.load_state_dict(state)
    return model


def cmd_generate(args) -> int:
    cfg = _load_config(GeneratorConfig, args.config, args.set)
    if args.width:
        cfg = configio.from_flat(GeneratorConfig,
                                 {**configio.to_flat(cfg), "width": str(args.width),
                                  "height": str(args.height or cfg.height)})
    _snapshot(args.out, "resolved-generator.cfg", cfg)
    scenegen.generate_dataset(cfg, args.seed, args.count, args.out)
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(TrainConfig, args.config, args.set)
    if args.no_augment:
        flat = configio.to_flat(cfg)
        flat["augment"] = "false"
        cfg = configio.from_flat(TrainConfig, flat)
    model = _load_model(args.model, args.model_set, seed=cfg.seed)
    _snapshot(args.out, "resolved-train.cfg", cfg)
    _snapshot(args.out, "resolved-model.cfg", model.config)
    dataset = DirectoryDataset(args.data)
    result = train(model, dataset, cfg, out_dir=args.out)
    final_val = result.log[-1]["val_epe"] if result.log else float("nan")
    print(f"trained {cfg.total_iters} iterations; final val EPE {final_val:.4f}")
    return 0


def cmd_finetune(args) -> int:
    cfg = _load_config(TrainConfig, args.config, args.set)
    model = _load_model(args.model, args.model_set, checkpoint=args.checkpoint,
                        seed=cfg.seed)
    _snapshot(args.out, "resolved-train.cfg", cfg)
    _snapshot(args.out, "resolved-model.cfg", model.config)
    dataset = DirectoryDataset(args.data)
    result, best_iter = finetune(model, dataset, cfg, out_dir=args.out)
    path = os.path.join(args.out, "finetuned+ft.ckpt")
    tn.save_checkpoint(path, result.model.state_dict(), result.model.config.hash())
    print(f"fine-tuned for {best_iter} iterations; wrote {path}")
    return 0


def cmd_eval(args) -> int:
    model = _load_model(args.model, args.model_set, checkpoint=args.checkpoint)
    dataset = DirectoryDataset(args.data)
    rows = {}
    label = model.config.variant
    report, _ = evaluate(model, dataset, test_scale=args.test_scale)
    rows[label] = report
    if args.variational:
        report_v, _ = evaluate(model, dataset, test_scale=args.test_scale,
                               variational=True)
        rows[label + "+v"] = report_v
    text = format_report(rows)
    print(text, end="")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _snapshot(args.out, "resolved-model.cfg", model.config)
        with open(os.path.join(args.out, "report.txt"), "w") as f:
            f.write(text)
    return 0


def cmd_infer(args) -> int:
    model = _load_model(args.model, args.model_set, checkpoint=args.checkpoint)
    img1 = imageops.load_png(args.img1)
    img2 = imageops.load_png(args.img2)
    if img1.ndim == 2:
        img1 = np.dstack([img1] * 3)
        img2 = np.dstack([img2] * 3)
    flow = predict(model, img1, img2, test_scale=args.test_scale)
    if args.variational:
        h, w = img1.shape[:2]
        coarse_u = imageops.resize_bilinear(flow.u.astype(np.float64), h // 4, w // 4) / 4
        coarse_v = imageops.resize_bilinear(flow.v.astype(np.float64), h // 4, w // 4) / 4
        from flowlite.flowcore import FlowField
        flow = refine(FlowField(u=coarse_u.astype(np.float32),
                                v=coarse_v.astype(np.float32)), img1, img2)
    os.makedirs(args.out, exist_ok=True)
    _snapshot(args.out, "resolved-model.cfg", model.config)
    write_flo_file(os.path.join(args.out, "flow.flo"), flow)
    imageops.save_png(os.path.join(args.out, "flow.png"), flow_to_color(flow))
    print(f"wrote {args.out}/flow.flo and flow.png")
    return 0


def cmd_viz(args) -> int:
    flow = read_flo_file(args.flo)
    out = args.out or os.path.splitext(args.flo)[0] + ".png"
    imageops.save_png(out, flow_to_color(flow, args.max_magnitude))
    print(f"wrote {out}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_all(args.seed)
    ok = True
    print(f"{'op':<18} {'max rel err':>12}  status")
    for name, err in results.items():
        passed = err < RTOL
        ok = ok and passed
        print(f"{name:<18} {err:>12.3e}  {'pass' if passed else 'FAIL'}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowlite",
                                description="desk-scale optical flow pipeline")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("generate", help="synthesize a dataset")
    g.add_argument("--config", default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--width", type=int, default=None)
    g.add_argument("--height", type=int, default=None)
    g.add_argument("--set", action="append", metavar="KEY=VALUE")
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--model", default=None, help="model config file")
    t.add_argument("--model-set", action="append", metavar="KEY=VALUE")
    t.add_argument("--data", required=True)
    t.add_argument("--config", default=None, help="training config file")
    t.add_argument("--set", action="append", metavar="KEY=VALUE")
    t.add_argument("--out", required=True)
    t.add_argument("--no-augment", action="store_true")
    t.set_defaults(fn=cmd_train)

    ft = sub.add_parser("finetune", help="two-phase fine-tuning")
    ft.add_argument("--model", default=None)
    ft.add_argument("--model-set", action="append", metavar="KEY=VALUE")
    ft.add_argument("--checkpoint", required=True)
    ft.add_argument("--data", required=True)
    ft.add_argument("--config", default=None)
    ft.add_argument("--set", action="append", metavar="KEY=VALUE")
    ft.add_argument("--out", required=True)
    ft.set_defaults(fn=cmd_finetune)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--model", default=None)
    e.add_argument("--model-set", action="append", metavar="KEY=VALUE")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--variational", action="store_true")
    e.add_argument("--test-scale", type=float, default=None)
    e.add_argument("--out", default=None)
    e.set_defaults(fn=cmd_eval)

    i = sub.add_parser("infer", help="predict flow for one image pair")
    i.add_argument("--model", default=None)
    i.add_argument("--model-set", action="append", metavar="KEY=VALUE")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--img1", required=True)
    i.add_argument("--img2", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--variational", action="store_true")
    i.add_argument("--test-scale", type=float, default=None)
    i.set_defaults(fn=cmd_infer)

    v = sub.add_parser("viz", help="render a .flo file as PNG")
    v.add_argument("flo")
    v.add_argument("--out", default=None)
    v.add_argument("--max-magnitude", type=float, default=None)
    v.set_defaults(fn=cmd_viz)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every op")
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # single-line machine-parsable failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
