"""Acceptance checks 1-12, each at its stated tolerance.

Every check prints one ``[PASS]``/``[FAIL]`` line. Run directly
(``python tests/test_acceptance.py [numbers...]``) for the summary alone.
"""
from __future__ import annotations

import math
import sys
import time
from collections import deque
from pathlib import Path

import numpy as np
import pytest
import torch
import torch.nn as nn
import torch.nn.functional as F

sys.path.insert(0, str(Path(__file__).parent))

from cdsr.config import TrainConfig, desk_config  # noqa: E402
from cdsr.contrastive import NegativeQueue, info_nce  # noqa: E402
from cdsr.csc import CodebookCompression, compress  # noqa: E402
from cdsr.degradation import (DegradationSpec, blur_subsample, degrade, delta_kernel,  # noqa: E402
                              make_aniso_gaussian_kernel)
from cdsr.evaluation import (BenchmarkSpec, BicubicModel, accuracy_degradations, benchmark_pairs,  # noqa: E402
                             classification_accuracy, evaluate_pairs, psnr, rgb_to_y, ssim)
from cdsr.model import build_encoder, predict_tiled  # noqa: E402
from cdsr.sampler import build_batch, derive_seed  # noqa: E402
from cdsr.sr_network import (DomainQueryAttention, SRNet, SRNetConfig, apply_dynamic_filters,  # noqa: E402
                             channel_attention, sr_forward)
from cdsr.stats import REFERENCE_COMPLEXITY, model_stats, module_stats  # noqa: E402
from cdsr.trainer import Trainer, run_ablation  # noqa: E402
from fdcheck import max_relative_error, params_of  # noqa: E402
from toydata import heldout_images, train_pool  # noqa: E402

RESULTS: dict[int, tuple[bool, str]] = {}


def report(n, ok, detail):
    RESULTS[n] = (ok, detail)
    return ok, detail


# -- 1 -------------------------------------------------------------------------


def _brute_kernel(s1, s2, theta, size):
    r = size // 2
    out = np.empty((size, size))
    for row in range(size):
        for col in range(size):
            x, y = col - r, row - r
            u = math.cos(theta) * x + math.sin(theta) * y
            v = -math.sin(theta) * x + math.cos(theta) * y
            out[row, col] = math.exp(-0.5 * (u * u / (s1 * s1) + v * v / (s2 * s2)))
    return out / out.sum()


def criterion_1():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        s1, s2 = rng.uniform(0.2, 10.0, 2)
        th = rng.uniform(0, math.pi)
        k = make_aniso_gaussian_kernel(s1, s2, th, 21).values
        worst = max(worst, float(np.max(np.abs(k - _brute_kernel(s1, s2, th, 21)))))
    iso = 0.0
    for s in rng.uniform(0.2, 10.0, 5):
        ref = make_aniso_gaussian_kernel(s, s, 0.0).values
        for th in rng.uniform(0, math.pi, 4):
            iso = max(iso, float(np.max(np.abs(make_aniso_gaussian_kernel(s, s, th).values - ref))))
    dt = time.perf_counter() - t0
    ok = worst < 1e-9 and iso < 1e-6 and dt < 1.0
    return report(1, ok, f"kernel max-abs {worst:.2e} (<1e-9), isotropic theta spread {iso:.2e} (<1e-6), "
                         f"{dt:.2f}s (<1s)")


# -- 2 -------------------------------------------------------------------------


def _direct_sum(img, k, s):
    """sum_{a,b} k[a,b] * img[i+a-r, j+b-r] with mirror boundaries, then every s-th pixel."""
    r = k.shape[0] // 2
    h, w = img.shape
    padded = np.pad(img, r, mode="reflect")
    out = np.zeros((h, w))
    for a in range(k.shape[0]):
        for b in range(k.shape[1]):
            out += k[a, b] * padded[a:a + h, b:b + w]
    return out[::s, ::s]


def criterion_2():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(10):
        s = int(rng.choice([2, 4]))
        s1, s2 = rng.uniform(0.175 * s, 2.5 * s, 2)
        k = make_aniso_gaussian_kernel(s1, s2, rng.uniform(0, math.pi), 21)
        hr = rng.random((64, 64, 3))
        lr = degrade(hr, DegradationSpec(k, s))
        ref = np.stack([_direct_sum(hr[..., c], k.values, s) for c in range(3)], axis=-1)
        worst = max(worst, float(np.max(np.abs(lr - np.clip(ref, 0, 1)))))
    hr = rng.random((64, 64, 3))
    delta_ok = all(np.array_equal(degrade(hr, DegradationSpec(delta_kernel(21), s)), hr[::s, ::s]) for s in (2, 4))
    dt = time.perf_counter() - t0
    ok = worst < 1e-6 and delta_ok and dt < 10
    return report(2, ok, f"direct-sum max-abs {worst:.2e} (<1e-6), delta exact {delta_ok}, {dt:.2f}s (<10s)")


# -- 3 -------------------------------------------------------------------------


def _softmax(xs):
    m = max(xs)
    e = [math.exp(x - m) for x in xs]
    z = sum(e)
    return [v / z for v in e]


def criterion_3():
    g = np.random.default_rng(3)
    # codebook attention
    q, cb, keys = g.standard_normal((2, 3)), g.standard_normal((4, 3)), g.standard_normal((4, 3))
    e_a, _ = compress(torch.from_numpy(q), torch.from_numpy(cb), lambda _: torch.from_numpy(keys))
    err2 = 0.0
    for i in range(2):
        w = _softmax([sum(q[i, c] * keys[r, c] for c in range(3)) for r in range(4)])
        ref = [sum(w[r] * cb[r, c] for r in range(4)) for c in range(3)]
        err2 = max(err2, max(abs(a - b) for a, b in zip(e_a[i].tolist(), ref)))

    # domain query attention
    torch.manual_seed(3)
    dqa = DomainQueryAttention(5, 4, proj_dim=3).double()
    f = torch.randn(2, 5, 3, 3, dtype=torch.float64)
    e = torch.randn(2, 4, dtype=torch.float64)
    got = dqa.attend(f, e).detach()
    qv = dqa.to_q(f.mean(dim=(2, 3))).detach().tolist()
    kv, vv = dqa.to_k(e).detach().tolist(), dqa.to_v(e).detach().tolist()
    err3 = 0.0
    for i in range(2):
        for a in range(3):
            w = _softmax([qv[i][a] * kv[i][b] / math.sqrt(3) for b in range(3)])
            ref = sum(w[b] * vv[i][b] for b in range(3))
            err3 = max(err3, abs(got[i, a].item() - ref))

    # InfoNCE
    an = F.normalize(torch.from_numpy(g.standard_normal((3, 4))), dim=1)
    po = F.normalize(torch.from_numpy(g.standard_normal((3, 4))), dim=1)
    ne = F.normalize(torch.from_numpy(g.standard_normal((5, 4))), dim=1)
    tau = 0.07
    ref4 = 0.0
    for i in range(3):
        pos = float(an[i] @ po[i]) / tau
        den = sum(math.exp(float(an[i] @ ne[j]) / tau) for j in range(5))
        ref4 += -(pos - math.log(den))
    err4 = abs(info_nce(an, po, ne, tau).item() - ref4)

    # shift invariance of both softmaxes
    csc = CodebookCompression(6, 4, 5).double()
    feat = torch.randn(2, 6, dtype=torch.float64)
    with torch.no_grad():
        b_csc, b_dqa = csc(feat), dqa(f, e)
        csc.logit_shift = dqa.logit_shift = 41.0
        shift = max(float((csc(feat) - b_csc).abs().max()), float((dqa(f, e) - b_dqa).abs().max()))
    ok = max(err2, err3, err4) < 1e-9 and shift < 1e-7
    return report(3, ok, f"codebook {err2:.1e}, DQA {err3:.1e}, InfoNCE {err4:.1e} (<1e-9); "
                         f"softmax shift {shift:.1e} (<1e-7)")


# -- 4 -------------------------------------------------------------------------


def _leaves(*shapes, seed):
    g = torch.Generator().manual_seed(seed)
    return [torch.randn(*s, generator=g, dtype=torch.float64, requires_grad=True) for s in shapes]


def criterion_4():
    t0 = time.perf_counter()
    torch.manual_seed(4)
    out = {}

    csc = CodebookCompression(6, 5, 9).double()
    feat, = _leaves((3, 6), seed=0)
    w = torch.randn(3, 5, dtype=torch.float64)
    out["CSC"] = max_relative_error(lambda: (csc(feat) * w).sum(), [feat, *params_of(csc)], 60, seed=0,
                                   modules=[csc])

    dqa = DomainQueryAttention(6, 5, proj_dim=4).double()
    f, e = _leaves((2, 6, 3, 3), (2, 5), seed=1)
    w = torch.randn(2, 4, dtype=torch.float64)
    tensors = [f, e, *params_of(dqa.to_q), *params_of(dqa.to_k), *params_of(dqa.to_v)]
    out["DQA attention"] = max_relative_error(lambda: (dqa.attend(f, e) * w).sum(), tensors, 60, seed=1,
                                             modules=[dqa])

    x, kern, coeff = _leaves((2, 3, 5, 5), (2, 3, 3, 3), (2, 3), seed=2)
    w = torch.randn(2, 3, 5, 5, dtype=torch.float64)
    out["dynamic filter"] = max_relative_error(lambda: (apply_dynamic_filters(x, kern) * w).sum(), [x, kern], 60,
                                               seed=2)
    out["channel attention"] = max_relative_error(
        lambda: (channel_attention(x, torch.sigmoid(coeff)) * w).sum(), [x, coeff], 60, seed=3)

    a, p = _leaves((5, 6), (5, 6), seed=3)
    negs = F.normalize(torch.randn(16, 6, dtype=torch.float64), dim=1)
    out["InfoNCE"] = max_relative_error(
        lambda: info_nce(F.normalize(a, dim=1), F.normalize(p, dim=1), negs, 0.2), [a, p], 60, seed=4)

    net = SRNet(SRNetConfig(num_blocks=1, trunk_channels=4, growth_channels=2, embed_dim=3, scale=2)).double()
    lr, ea = _leaves((1, 3, 5, 5), (1, 3), seed=5)
    w = torch.randn(1, 3, 10, 10, dtype=torch.float64)
    out["toy SR network"] = max_relative_error(lambda: (net(lr, ea) * w).sum(), [lr, ea, *params_of(net)], 80,
                                               seed=5, modules=[net])
    dt = time.perf_counter() - t0
    worst = max(v[0] for v in out.values())
    ok = worst < 1e-3 and all(v[1] >= 50 for v in out.values()) and dt < 120
    parts = ", ".join(f"{k} {v[0]:.1e}/{v[1]}" for k, v in out.items())
    swapped = sum(v[2] for v in out.values())
    return report(4, ok, f"max rel err/coords: {parts} (<1e-3, >=50); {swapped} kink-straddling stencils "
                         f"resampled; {dt:.1f}s (<120s)")


# -- 5 -------------------------------------------------------------------------


def criterion_5():
    rng = np.random.default_rng(5)
    cap, d = 64, 4
    queue = NegativeQueue(cap, d, dtype=torch.float64)
    sim = deque()
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 3 * cap // 2))
        rows = F.normalize(torch.from_numpy(rng.standard_normal((n, d))), dim=1)
        queue.enqueue(rows)
        for r in rows.tolist():
            sim.append(r)
            if len(sim) > cap:
                sim.popleft()
        got = queue.contents().tolist()
        mismatches += got != list(sim)
    ok = mismatches == 0
    return report(5, ok, f"1000 random enqueue ops, {mismatches} mismatches against list FIFO")


# -- 6 -------------------------------------------------------------------------


def criterion_6():
    shapes = {}
    torch.manual_seed(6)
    base = TrainConfig()
    for s in (2, 3, 4):
        net = SRNet(SRNetConfig(num_blocks=base.num_blocks, trunk_channels=base.trunk_channels,
                                growth_channels=base.growth_channels, scale=s, embed_dim=base.embed_dim)).eval()
        with torch.no_grad():
            shapes[s] = tuple(sr_forward(torch.rand(1, 3, 48, 48), torch.randn(1, base.embed_dim), net).shape)
    shape_ok = all(shapes[s] == (1, 3, 48 * s, 48 * s) for s in shapes)

    pool = train_pool(8, 96, seed=6)
    finite = {}
    for mid in range(1, 6):
        t = Trainer(run_ablation(mid, desk_config(seed=6)))
        ms = [t.train_step(t.batch_for_step(pool)) for _ in range(2)]
        finite[mid] = all(math.isfinite(m[k]) for m in ms for k in ("l_cl", "l_1", "total"))
    ok = shape_ok and all(finite.values())
    return report(6, ok, f"shapes {shapes}; ablation models finite: {finite}")


# -- 7 -------------------------------------------------------------------------

TOY_STEPS = 3000


def toy_benchmark():
    return benchmark_pairs(heldout_images(6, 128, seed=1), BenchmarkSpec(2), seed=0)


def criterion_7(steps=TOY_STEPS):
    t0 = time.perf_counter()
    pairs = toy_benchmark()
    bicubic = evaluate_pairs(BicubicModel(2), pairs, 2).psnr
    trainer = Trainer(desk_config(scale=2, seed=0))
    trainer.fit(train_pool(100, 128, seed=0), steps=steps)

    def model(lr):
        x = torch.from_numpy(lr).permute(2, 0, 1)[None].float()
        return predict_tiled(trainer.model, x)[0].permute(1, 2, 0).double().numpy()

    trained = evaluate_pairs(model, pairs, 2).psnr
    dt = time.perf_counter() - t0
    ok = trained >= bicubic + 0.3
    return report(7, ok, f"{steps} steps: {trained:.3f} dB vs bicubic {bicubic:.3f} dB "
                         f"(gain {trained - bicubic:+.3f}, need >= +0.3); {dt / 60:.1f} min")


# -- 8 -------------------------------------------------------------------------

ENCODER_STEPS = 2000


def _encoder_fn(encoder):
    encoder.eval()

    @torch.no_grad()
    def fn(batch):
        x = torch.from_numpy(np.ascontiguousarray(batch)).permute(0, 3, 1, 2).float()
        return encoder.embed(x).double().numpy()
    return fn


def criterion_8(seeds=(0, 1, 2, 3, 4), steps=ENCODER_STEPS):
    pool = train_pool(100, 128, seed=8)
    degs = accuracy_degradations(4)
    calls = []

    def one_hot(batch):
        calls.append(len(batch))
        k = (sum(calls) - 1) // len(pool)
        return np.tile(np.eye(len(degs))[k], (len(batch), 1))

    acc_oracle = classification_accuracy(one_hot, pool, degs, rng_seed=0)
    acc_const = classification_accuracy(lambda b: np.ones((len(b), 8)), pool, degs, rng_seed=0)

    train_crops = train_pool(100, 128, seed=80)
    wins, rows = 0, []
    for seed in seeds:
        cfg = desk_config(scale=4, seed=seed, positive_strategy="CD")
        torch.manual_seed(seed)
        random_enc = build_encoder(cfg)
        trainer = Trainer(cfg)
        trainer.model.encoder.load_state_dict(random_enc.state_dict())
        trainer.key_encoder.load_state_dict(random_enc.state_dict())
        trainer.pretrain_encoder(train_crops, epochs=0, steps=steps)
        acc_rand = classification_accuracy(_encoder_fn(random_enc), pool, degs, rng_seed=seed)
        acc_trained = classification_accuracy(_encoder_fn(trainer.model.encoder), pool, degs, rng_seed=seed)
        wins += acc_trained > acc_rand
        rows.append(f"s{seed} {acc_trained:.3f}/{acc_rand:.3f}")
    ok = acc_oracle == 1.0 and acc_const == 0.10 and wins >= 4
    return report(8, ok, f"one-hot {acc_oracle}, constant {acc_const}; trained/random {', '.join(rows)}; "
                         f"wins {wins}/{len(seeds)} (need >= 4)")


# -- 9 -------------------------------------------------------------------------


def criterion_9():
    rng = np.random.default_rng(9)
    a = rng.random((32, 32))
    p = psnr(a, a + 16 / 255)
    s = ssim(a, a)
    y_black = rgb_to_y(np.zeros((1, 1, 3)))[0, 0]
    y_white = rgb_to_y(np.ones((1, 1, 3)))[0, 0]
    ok = abs(p - 24.03) <= 0.01 and s == 1.0 and y_black == 16 / 255 and y_white == 235 / 255
    return report(9, ok, f"PSNR(16/255 offset) {p:.4f} dB (target 24.03 +/- 0.01); SSIM(a,a) {s!r}; "
                         f"Y endpoints {y_black * 255:.6f}, {y_white * 255:.6f}")


# -- 10 ------------------------------------------------------------------------


def criterion_10():
    conv = nn.Conv2d(1, 1, 3, padding=1, bias=False)
    one = module_stats(conv, torch.rand(1, 1, 48, 48))
    hand_params, hand_flops = 3 * 3, 2 * 48 * 48 * 3 * 3
    exact = one.params == hand_params and one.flops == hand_flops
    full = model_stats(TrainConfig(), (48, 48))
    ref_p, ref_f = REFERENCE_COMPLEXITY["params_m"], REFERENCE_COMPLEXITY["gflops"]
    dp, df = full.mparams / ref_p - 1, full.gflops / ref_f - 1
    ok = exact and abs(dp) <= 0.25 and abs(df) <= 0.25
    return report(10, ok, f"one-conv params {one.params}/{hand_params}, flops {one.flops:.0f}/{hand_flops}; "
                          f"full config {full.mparams:.2f} M ({dp:+.1%} vs {ref_p} M), "
                          f"{full.gflops:.2f} GFLOPs ({df:+.1%} vs {ref_f} G), "
                          f"{full.macs / 1e9:.2f} G multiply-accumulates")


# -- 11 ------------------------------------------------------------------------


def _same(spec_a, spec_b):
    return np.array_equal(spec_a.kernel.values, spec_b.kernel.values) and spec_a.noise_level == spec_b.noise_level


def criterion_11(n_pairs=1000, batch_size=8):
    pool = train_pool(100, 128, seed=11)
    bad = {}
    for strategy in ("CD", "D", "C"):
        bad[strategy] = 0
        seen = 0
        i = 0
        while seen < n_pairs:
            batch = build_batch(pool, batch_size, 2, strategy, derive_seed(11, i), lr_size=48)
            i += 1
            ids = [p.degradation_id0 for p in batch]
            distinct = len(set(ids)) == len(ids)
            for p in batch[: n_pairs - seen]:
                same_img = p.image_id == p.image_id1
                same_deg = p.degradation_id0 == p.degradation_id1 and _same(p.spec0, p.spec1)
                want = {"CD": same_img and same_deg, "D": (not same_img) and same_deg,
                        "C": same_img and not same_deg and not _same(p.spec0, p.spec1)}[strategy]
                shapes = p.p0.shape == p.p1.shape == (48, 48, 3)
                bad[strategy] += not (want and shapes and distinct)
                seen += 1
    ok = all(v == 0 for v in bad.values())
    return report(11, ok, f"{n_pairs} pairs per strategy, violations {bad}")


# -- 12 ------------------------------------------------------------------------


def criterion_12(tmp_dir=None):
    import tempfile
    pool = train_pool(8, 96, seed=12)
    cfg = desk_config(seed=12, queue_size=16)
    a = Trainer(cfg)
    for _ in range(4):
        a.train_step(a.batch_for_step(pool))
    with tempfile.TemporaryDirectory(dir=tmp_dir) as d:
        path = Path(d) / "mid.pt"
        a.save(path)
        expected = a.train_step(a.batch_for_step(pool))
        b = Trainer.load(path)
        got = b.train_step(b.batch_for_step(pool))
    same = all(got[k] == expected[k] for k in ("l_cl", "l_1", "total"))
    ok = same and got["l_cl"] != 0.0
    return report(12, ok, f"next-step total {got['total']!r} vs {expected['total']!r}, bit-identical {same}")


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5, 6: criterion_6,
            7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10, 11: criterion_11, 12: criterion_12}


def _line(n, ok, detail):
    return f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {detail}"


@pytest.mark.parametrize("n", [pytest.param(n, marks=pytest.mark.slow) if n in (7, 8) else n for n in CRITERIA])
def test_criterion(n, capsys):
    ok, detail = CRITERIA[n]()
    with capsys.disabled():
        print("\n" + _line(n, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    torch.set_num_threads(1)
    wanted = [int(a) for a in sys.argv[1:]] or list(CRITERIA)
    for n in wanted:
        ok, detail = CRITERIA[n]()
        print(_line(n, ok, detail), flush=True)
    sys.exit(0 if all(RESULTS[n][0] for n in wanted) else 1)
