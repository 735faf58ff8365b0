"""Schedules, splits, the training loop, fine-tuning, and evaluation."""

import dataclasses

import numpy as np
import pytest

from flowlite import scenegen, trainer
from flowlite.flowcore import FlowField
from flowlite.models import FlowNet, ModelConfig
from flowlite.trainer import (DirectoryDataset, InMemoryDataset, SplitSpec,
                              TrainConfig, TrainingDiverged, evaluate, finetune,
                              format_report, lr_schedule, make_split, train)

TINY_MODEL = ModelConfig(variant="simple", channel_scale=16)


def tiny_dataset(n=12, seed=0, w=64, h=48):
    cfg = scenegen.GeneratorConfig(width=w, height=h)
    samples = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        samples.append(scenegen.render_sample(scenegen.sample_scene(cfg, rng), cfg))
    return InMemoryDataset(samples)


class TestSchedule:
    def test_plateau_then_halvings(self):
        cfg = TrainConfig(warmup_enabled=False)
        assert lr_schedule(0, cfg) == 1e-4
        assert lr_schedule(299_999, cfg) == 1e-4
        assert lr_schedule(300_000, cfg) == pytest.approx(5e-5)
        assert lr_schedule(399_999, cfg) == pytest.approx(5e-5)
        assert lr_schedule(400_000, cfg) == pytest.approx(2.5e-5)
        assert lr_schedule(500_000, cfg) == pytest.approx(1.25e-5)

    def test_warmup_endpoints(self):
        cfg = TrainConfig(warmup_enabled=True)
        assert lr_schedule(0, cfg) == 1e-6
        assert lr_schedule(5_000, cfg) == pytest.approx((1e-6 + 1e-4) / 2)
        assert lr_schedule(10_000, cfg) == 1e-4

    def test_scale_divides_thresholds(self):
        cfg = TrainConfig(warmup_enabled=False, scale=100)
        assert lr_schedule(2_999, cfg) == 1e-4
        assert lr_schedule(3_000, cfg) == pytest.approx(5e-5)
        assert lr_schedule(4_000, cfg) == pytest.approx(2.5e-5)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(scale=0)


class TestSplit:
    def test_disjoint_and_complete(self):
        s = make_split(100, 10, seed=0)
        assert len(s.val_indices) == 10
        assert len(s.train_indices) == 90
        assert not set(s.train_indices) & set(s.val_indices)
        assert set(s.train_indices) | set(s.val_indices) == set(range(100))

    def test_deterministic(self):
        assert make_split(50, 5, seed=3) == make_split(50, 5, seed=3)
        assert make_split(50, 5, seed=3) != make_split(50, 5, seed=4)

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            SplitSpec(train_indices=(0, 1), val_indices=(1, 2), seed=0)


class TestTrainLoop:
    def test_loss_decreases(self):
        ds = tiny_dataset()
        model = FlowNet(TINY_MODEL, np.random.default_rng(0))
        cfg = TrainConfig(total_iters=30, batch_size=2, augment=False,
                          val_interval=29, val_count=2)
        res = train(model, ds, cfg)
        assert res.log[0]["train_loss"] > res.log[-1]["train_loss"]

    def test_deterministic_training(self):
        ds = tiny_dataset()
        cfg = TrainConfig(total_iters=5, batch_size=2, augment=True, val_count=2)
        m1 = FlowNet(TINY_MODEL, np.random.default_rng(1))
        m2 = FlowNet(TINY_MODEL, np.random.default_rng(1))
        train(m1, ds, cfg)
        train(m2, ds, cfg)
        for n in m1.parameter_names():
            assert np.array_equal(m1.params[n].data, m2.params[n].data), n

    def test_artifacts_written(self, tmp_path):
        ds = tiny_dataset()
        model = FlowNet(TINY_MODEL, np.random.default_rng(2))
        cfg = TrainConfig(total_iters=4, batch_size=2, augment=False,
                          val_interval=2, ckpt_interval=2, val_count=2)
        res = train(model, ds, cfg, out_dir=tmp_path)
        assert (tmp_path / "metrics.log").exists()
        assert (tmp_path / "ckpt_0000000.ckpt").exists()
        assert (tmp_path / "ckpt_0000004.ckpt").exists()
        lines = (tmp_path / "metrics.log").read_text().strip().splitlines()
        assert all(len(l.split("\t")) == 4 for l in lines)
        assert len(res.checkpoints) >= 2

    def test_divergence_aborts(self):
        ds = tiny_dataset(4)
        model = FlowNet(TINY_MODEL, np.random.default_rng(3))
        # poison a parameter so the first forward goes non-finite
        model.params["conv0.w"].data[...] = np.nan
        with pytest.raises(TrainingDiverged) as exc:
            train(model, ds, TrainConfig(total_iters=2, batch_size=2, val_count=1))
        assert exc.value.iteration == 0
        assert len(exc.value.batch_indices) == 2

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            train(FlowNet(TINY_MODEL), InMemoryDataset([]), TrainConfig(total_iters=1))


class TestFinetune:
    def test_two_phase_protocol(self):
        ds = tiny_dataset(8)
        model = FlowNet(TINY_MODEL, np.random.default_rng(4))
        cfg = TrainConfig(total_iters=6, batch_size=2, augment=False,
                          val_interval=2, val_count=2, finetune_lr=1e-6)
        result, best_iter = finetune(model, ds, cfg)
        assert 0 <= best_iter < 6
        if best_iter:
            # phase 2 trains on the full dataset
            assert len(result.split.train_indices) == len(ds)


class TestEvaluate:
    def test_zero_predictor_baseline(self):
        ds = tiny_dataset(4)
        report, rows = evaluate(None, ds)
        assert len(rows) == 4
        mags = [np.hypot(s.flow.u, s.flow.v)[s.flow.valid].mean() for s in ds.samples]
        assert report.epe == pytest.approx(np.mean(mags), rel=1e-6)

    def test_model_evaluation_runs(self):
        ds = tiny_dataset(2)
        model = FlowNet(TINY_MODEL, np.random.default_rng(5))
        report, rows = evaluate(model, ds, test_scale=1.0)
        assert np.isfinite(report.epe) and np.isfinite(report.aae)
        assert report.n_evaluated == 2 * 64 * 48

    def test_variational_path(self):
        ds = tiny_dataset(1, w=64, h=48)
        from flowlite.varrefine import VarParams
        report, _ = evaluate(None, ds, variational=True,
                             var_params=VarParams(coarse_iters=2, fullres_iters=1))
        assert np.isfinite(report.epe)

    def test_format_report(self):
        from flowlite.flowcore import MetricsReport
        text = format_report({
            "simple": MetricsReport(epe=1.5, aae=10.0, epe_s40plus=None, n_evaluated=100),
            "simple+v": MetricsReport(epe=1.2, aae=8.0, epe_s40plus=2.0, n_evaluated=100),
        })
        assert "simple+v" in text and "EPE" in text
        assert len(text.strip().splitlines()) == 3


class TestPadding:
    def test_pad_sample_marks_invalid(self):
        ds = tiny_dataset(1)
        padded = trainer._pad_sample(ds[0])
        assert padded.img1.shape == (64, 64, 3)
        assert padded.flow.valid[:48].all()
        assert not padded.flow.valid[48:].any()

    def test_no_pad_needed_is_identity(self):
        ds = tiny_dataset(1, w=64, h=64)
        assert trainer._pad_sample(ds[0]) is ds[0]
