import math

import numpy as np
import pytest
import torch

from cdsr.trainer import (ABLATIONS, METRICS_HEADER, MetricsLog, Trainer, is_finite_metrics, lr_schedule,
                          moving_average, pretrain_encoder, read_metrics, run_ablation, train_step)


def test_lr_schedule():
    assert lr_schedule(0) == 1e-4
    assert lr_schedule(124) == 1e-4
    assert lr_schedule(125) == 5e-5
    assert lr_schedule(499) == 1e-4 / 8
    with pytest.raises(ValueError):
        lr_schedule(-1)


def test_ablation_table(tiny_cfg):
    assert run_ablation(1, tiny_cfg).use_CSC and run_ablation(1, tiny_cfg).use_DQA
    assert not run_ablation(2, tiny_cfg).use_CSC
    assert run_ablation(3, tiny_cfg).sr_fusion == "DynConv"
    assert not run_ablation(4, tiny_cfg).use_LPE_P and run_ablation(4, tiny_cfg).use_LPE_L
    assert not run_ablation(5, tiny_cfg).use_LPE_L and run_ablation(5, tiny_cfg).use_LPE_P
    assert set(ABLATIONS) == {1, 2, 3, 4, 5}
    for bad in (0, 6, "x"):
        with pytest.raises(ValueError):
            run_ablation(bad, tiny_cfg)


def test_warmup_then_contrastive_loss(tiny_cfg, tiny_pool):
    t = Trainer(tiny_cfg)
    m0 = t.train_step(t.batch_for_step(tiny_pool))
    assert m0["l_cl"] == 0.0 and t.queue.fill == 2
    m1 = t.train_step(t.batch_for_step(tiny_pool))
    assert m1["l_cl"] != 0.0 and is_finite_metrics(m1)
    assert m1["total"] == pytest.approx(m1["l_cl"] + m1["l_1"], rel=1e-6)


def test_key_encoder_not_in_optimizer(tiny_cfg):
    t = Trainer(tiny_cfg)
    opt_ids = {id(p) for g in t.optimizer.param_groups for p in g["params"]}
    assert not opt_ids & {id(p) for p in t.key_encoder.parameters()}
    assert {id(p) for p in t.model.parameters()} == opt_ids


def test_key_encoder_follows_by_momentum(tiny_cfg, tiny_pool):
    t = Trainer(tiny_cfg.replace(momentum=0.5))
    before = {n: p.clone() for n, p in t.key_encoder.named_parameters()}
    t.train_step(t.batch_for_step(tiny_pool))
    q = dict(t.model.encoder.named_parameters())
    for n, p in t.key_encoder.named_parameters():
        assert torch.allclose(p, 0.5 * before[n] + 0.5 * q[n], atol=1e-6)


def test_lr_follows_epochs(tiny_cfg, tiny_pool):
    t = Trainer(tiny_cfg.replace(iters_per_epoch=1, lr_halving_period=2, lr0=1e-3))
    lrs = [t.train_step(t.batch_for_step(tiny_pool))["lr"] for _ in range(5)]
    assert lrs == [1e-3, 1e-3, 5e-4, 5e-4, 2.5e-4]


def test_checkpoint_roundtrip_bit_for_bit(tmp_path, tiny_cfg, tiny_pool):
    a = Trainer(tiny_cfg)
    for _ in range(3):
        a.train_step(a.batch_for_step(tiny_pool))
    a.save(tmp_path / "ck.pt")
    expected = a.train_step(a.batch_for_step(tiny_pool))
    b = Trainer.load(tmp_path / "ck.pt")
    assert b.step == 3
    got = b.train_step(b.batch_for_step(tiny_pool))
    for k in ("l_cl", "l_1", "total"):
        assert got[k] == expected[k]


def test_bad_checkpoint_format(tmp_path, tiny_cfg):
    t = Trainer(tiny_cfg)
    state = t.state_dict()
    state["format"] = 99
    torch.save(state, tmp_path / "x.pt")
    with pytest.raises(ValueError):
        Trainer.load(tmp_path / "x.pt")


def test_fit_writes_metrics_and_checkpoint(tmp_path, tiny_cfg, tiny_pool):
    t = Trainer(tiny_cfg)
    t.fit(tiny_pool, steps=3, metrics_path=tmp_path / "m.csv", checkpoint_path=tmp_path / "c.pt",
          checkpoint_every=2)
    rows = read_metrics(tmp_path / "m.csv")
    assert [r["step"] for r in rows] == [0, 1, 2]
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == ",".join(METRICS_HEADER)
    assert Trainer.load(tmp_path / "c.pt").step == 3


def test_fit_workers_do_not_change_losses(tiny_cfg, tiny_pool):
    a, b = Trainer(tiny_cfg), Trainer(tiny_cfg)
    a.fit(tiny_pool, steps=3)
    b.fit(tiny_pool, steps=3, workers=2)
    assert [m["total"] for m in a.history] == [m["total"] for m in b.history]


def test_nonfinite_loss_raises(tiny_cfg, tiny_pool):
    t = Trainer(tiny_cfg)
    batch = t.batch_for_step(tiny_pool)
    batch[0].hr0[0, 0, 0] = np.nan
    with pytest.raises(FloatingPointError):
        t.train_step(batch)


def test_pretrain_encoder_only_touches_encoder(tiny_cfg, tiny_pool):
    t = Trainer(tiny_cfg)
    sr_before = {n: p.clone() for n, p in t.model.sr.named_parameters()}
    enc_before = {n: p.clone() for n, p in t.model.encoder.named_parameters()}
    losses = t.pretrain_encoder(tiny_pool, epochs=0, steps=4)
    assert len(losses) == 3 and all(math.isfinite(v) for v in losses)
    assert all(torch.equal(p, sr_before[n]) for n, p in t.model.sr.named_parameters())
    assert any(not torch.equal(p, enc_before[n]) for n, p in t.model.encoder.named_parameters())
    assert t.step == 0


def test_functional_wrappers(tiny_cfg, tiny_pool):
    t = Trainer(tiny_cfg)
    t2, m = train_step(t, t.batch_for_step(tiny_pool))
    assert t2 is t and m["step"] == 0
    assert pretrain_encoder(t, tiny_pool, 0) is t


def test_metrics_helpers(tmp_path):
    log = MetricsLog(tmp_path / "m.csv")
    log.append({"step": 0, "l_cl": 0.5, "l_1": 0.1, "total": 0.6, "lr": 1e-4})
    MetricsLog(tmp_path / "m.csv").append({"step": 1, "l_cl": 0.25, "l_1": 0.1, "total": 0.35, "lr": 1e-4})
    assert [r["l_cl"] for r in read_metrics(tmp_path / "m.csv")] == [0.5, 0.25]
    np.testing.assert_allclose(moving_average([1, 2, 3, 4], 2), [1.5, 2.5, 3.5])
    assert len(moving_average([1], 3)) == 1
    assert not is_finite_metrics({"l_cl": float("nan"), "l_1": 0, "total": 0})
