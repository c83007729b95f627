"""Command-line entry point: ``cdsr <command> [flags]``.

Exit status is 0 on success, 1 on a usage error and 2 when the command fails.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig, apply_overrides, desk_config, dump_config, field_types, load_config
from .degradation import DegradationSpec, degrade, make_aniso_gaussian_kernel, modcrop, read_png
from .estimator import CDSR
from .evaluation import (BenchmarkSpec, BicubicModel, accuracy_degradations, build_benchmark,
                         classification_accuracy, evaluate, export_embeddings, list_images, nine_kernel_set,
                         psnr_sweep)
from .sampler import load_pool, read_manifest
from .stats import REFERENCE_COMPLEXITY, model_stats
from .trainer import Trainer, run_ablation

PRESETS = {"desk": desk_config, "full": TrainConfig}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p):
    p.add_argument("--seed", type=int, default=None,
                   help="random seed (default: the config file's seed, else 0)")
    p.add_argument("--workers", type=int, default=1, help="worker threads (default 1)")


def _config_flags(p):
    p.add_argument("--config", help="key = value config file; flags below override it")
    p.add_argument("--preset", choices=sorted(PRESETS), default="full",
                   help="base values before the config file (default full)")
    g = p.add_argument_group("training configuration")
    for name, kind in field_types().items():
        if name == "seed":
            continue
        g.add_argument(f"--{name}", default=None, metavar=str(kind).upper(), help=f"{kind}")


def _resolve_config(args) -> TrainConfig:
    try:
        cfg = PRESETS[args.preset]()
        if args.config:
            cfg = load_config(args.config, cfg)
        overrides = {k: getattr(args, k) for k in field_types() if k != "seed" and getattr(args, k, None) is not None}
        cfg = apply_overrides(cfg, overrides)
        if args.seed is not None:
            cfg = cfg.replace(seed=args.seed)
        return cfg
    except ValueError as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def _hr_images(source):
    """A directory of images or a manifest file listing one path per line."""
    path = Path(source)
    if path.is_dir():
        return [read_png(p) for p in list_images(path)]
    return load_pool(read_manifest(path))


def _sr_model(args, scale):
    if args.checkpoint is None:
        return BicubicModel(scale)
    est = CDSR.from_trainer(Trainer.load(args.checkpoint))
    return lambda lr: est.predict([lr])[0]


def _encoder_fn(args, kind):
    if args.checkpoint is not None:
        est = CDSR.from_trainer(Trainer.load(args.checkpoint))
    else:
        # untrained network, useful as a chance-level reference
        est = CDSR.from_trainer(Trainer(_resolve_config(args)))
    fn = est.embed if kind == "contrastive" else est.transform
    return lambda batch: fn(list(batch))


def _parse_sigmas(text):
    if ":" in text:
        lo, hi, step = (float(v) for v in text.split(":"))
        return list(np.arange(lo, hi + step / 2, step))
    return [float(v) for v in text.split(",") if v.strip()]


# -- commands ---------------------------------------------------------------------

def cmd_degrade(args):
    scale = int(args.kernels[1:]) if args.kernels else args.scale
    spec = BenchmarkSpec(args.scale, nine_kernel_set(scale), args.noise, args.kernel_size)
    rows = build_benchmark(args.hr_dir, spec, args.out, seed=args.seed)
    print(f"wrote {len(rows)} LR images to {args.out}")


def _train(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    pool = _hr_images(args.data)
    ckpt = out / "checkpoint.pt"
    trainer = Trainer.load(ckpt) if args.resume and ckpt.exists() else Trainer(cfg)
    # on resume the schedule length comes from the current flags, the state from the checkpoint
    trainer.fit(pool, steps=max(0, cfg.total_steps - trainer.step), metrics_path=out / "metrics.csv",
                checkpoint_path=ckpt,
                checkpoint_every=args.checkpoint_every, log_every=args.log_every, workers=args.workers)
    last = trainer.history[-1] if trainer.history else {}
    print(json.dumps({"step": trainer.step, **{k: last.get(k) for k in ("l_cl", "l_1", "total")}}))


def cmd_train(args):
    _train(args, _resolve_config(args))


def cmd_ablate(args):
    _train(args, run_ablation(args.model, _resolve_config(args)))


def cmd_eval(args):
    meta = json.loads((Path(args.bench) / "benchmark.json").read_text())
    scale = int(meta["scale"])
    report = evaluate(_sr_model(args, scale), args.bench, scale)
    if args.out:
        report.write(args.out)
    print(json.dumps({"psnr": report.psnr, "ssim": report.ssim}))


def _lr_scale(args):
    # --scale doubles as the config key; classification defaults to x4
    return int(args.scale) if args.scale is not None else 4


def cmd_acc(args):
    scale = _lr_scale(args)
    pool = [modcrop(img, scale) for img in _hr_images(args.data)]
    degs = accuracy_degradations(scale, _parse_sigmas(args.sigmas))
    acc = classification_accuracy(_encoder_fn(args, args.embedding), pool, degs, rng_seed=args.seed or 0)
    result = {"accuracy": acc, "n_images": len(pool), "n_degradations": len(degs)}
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=2))
    print(json.dumps(result))


def cmd_sweep(args):
    model = _sr_model(args, args.scale)
    curve = psnr_sweep(model, _hr_images(args.data), _parse_sigmas(args.sigmas), args.scale, args.seed, args.out)
    for s, p in curve:
        print(f"{s:g},{p:.4f}")


def cmd_export_emb(args):
    encoder = _encoder_fn(args, args.embedding)
    scale = _lr_scale(args)
    hr = [modcrop(img, scale) for img in _hr_images(args.data)]
    images, labels = [], []
    for j, s in enumerate(_parse_sigmas(args.sigmas)):
        spec = DegradationSpec(make_aniso_gaussian_kernel(s, s, 0.0), scale, 0.0)
        for i, img in enumerate(hr):
            images.append(degrade(img, spec, (args.seed or 0) + 1000 * j + i))
            labels.append(f"sigma={s:g}")
    n = export_embeddings(encoder, images, labels, args.out)
    print(f"wrote {n} rows to {args.out}")


def cmd_stats(args):
    cfg = _resolve_config(args)
    st = model_stats(cfg, (args.input_size, args.input_size))
    result = {"params": st.params, "params_m": st.mparams, "macs": st.macs, "gflops": st.gflops,
              "reference": REFERENCE_COMPLEXITY}
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=2))
    print(json.dumps(result))


# -- parser -------------------------------------------------------------------------

def build_parser():
    parser = Parser(prog="cdsr", description="Blind super-resolution: data synthesis, training and evaluation.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=Parser)
    sub.required = True

    p = sub.add_parser("degrade", help="synthesise a 9-kernel LR benchmark from HR images")
    _common(p)
    p.add_argument("--hr-dir", required=True)
    p.add_argument("--scale", type=int, choices=(2, 3, 4), required=True)
    p.add_argument("--kernels", choices=("x2", "x3", "x4"), help="kernel set (default matches --scale)")
    p.add_argument("--noise", type=float, default=0.0, help="noise level, 8-bit scale")
    p.add_argument("--kernel-size", type=int, default=21)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_degrade)

    for name, func, text in (("train", cmd_train, "train a model"),
                             ("ablate", cmd_ablate, "train one of the ablation models 1-5")):
        p = sub.add_parser(name, help=text)
        _common(p)
        if name == "ablate":
            p.add_argument("--model", type=int, choices=range(1, 6), required=True)
        p.add_argument("--data", required=True, help="HR image directory or manifest file")
        p.add_argument("--out", required=True, help="output directory for checkpoint and metrics")
        p.add_argument("--resume", action="store_true", help="continue from OUT/checkpoint.pt if present")
        p.add_argument("--checkpoint-every", type=int, default=1000)
        p.add_argument("--log-every", type=int, default=0)
        _config_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="Y-channel PSNR/SSIM on a benchmark folder")
    _common(p)
    p.add_argument("--bench", required=True)
    p.add_argument("--checkpoint", help="trained checkpoint (default: bicubic baseline)")
    p.add_argument("--out", help="report path; .json and .csv are both written")
    p.set_defaults(func=cmd_eval)

    for name, func, text in (("acc", cmd_acc, "degradation classification accuracy"),
                             ("export-emb", cmd_export_emb, "export embeddings with degradation labels")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--data", required=True, help="HR image directory or manifest file")
        p.add_argument("--checkpoint", help="trained checkpoint (default: random init from the config)")
        p.add_argument("--sigmas", default="1:10:1", help="'lo:hi:step' or comma list")
        p.add_argument("--embedding", choices=("contrastive", "compressed"), default="contrastive")
        p.add_argument("--out", required=name == "export-emb")
        _config_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("sweep", help="PSNR as a function of isotropic blur width")
    _common(p)
    p.add_argument("--data", required=True, help="HR image directory or manifest file")
    p.add_argument("--checkpoint", help="trained checkpoint (default: bicubic baseline)")
    p.add_argument("--scale", type=int, choices=(2, 3, 4), default=4)
    p.add_argument("--sigmas", default="1:10:1")
    p.add_argument("--out", help="CSV of sigma,psnr")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("stats", help="parameter and flop count of a configuration")
    _common(p)
    p.add_argument("--input-size", type=int, default=48)
    p.add_argument("--out")
    _config_flags(p)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    if args.seed is None and not hasattr(args, "preset"):
        args.seed = 0
    if args.workers < 1:
        print("cdsr: error: --workers must be >= 1", file=sys.stderr)
        return 1
    torch.set_num_threads(args.workers)
    try:
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"cdsr {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
