"""Command line entry points: synth, train, eval, infer, serve."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch


def _cmd_synth(args) -> int:
    from .data import build_dataset

    ds = build_dataset(
        args.n,
        seed=args.seed,
        out_dir=args.out,
        augment=args.augment,
        occluded=not args.no_occlusion,
        mask_side=args.mask_side,
    )
    print(f"wrote {len(ds)} pairs to {ds.root}")
    return 0


def _cmd_train(args) -> int:
    from .trainer import TrainConfig, train

    config = TrainConfig.from_file(args.config)
    ckpt = train(config, resume=args.resume)
    print(f"final checkpoint: {ckpt}")
    return 0


def _cmd_eval(args) -> int:
    from .data import load_dataset
    from .evalkit import MASK_BINS, ablation_sweep
    from .generator import load_generator

    gen, _ = load_generator(args.ckpt)
    dataset = load_dataset(args.dataset)
    if args.sweep == "masks":
        variants = list(MASK_BINS)
    elif args.sweep == "priors":
        variants = ["p+gt", "baseline", "p-fp"]
    else:
        variants = ["baseline"]
    reports = ablation_sweep(gen, dataset, variants)
    payload = [r.to_dict() for r in reports]
    Path(args.out).write_text(json.dumps(payload, indent=2) + "\n")
    for r in reports:
        print(
            f"{r.variant}: n={r.n} psnr={r.psnr_mean:.3f} ssim={r.ssim_mean:.4f} "
            f"nrmse={r.nrmse_mean:.4f}"
        )
    return 0


def _cmd_infer(args) -> int:
    from PIL import Image as PILImage

    from .generator import load_generator

    gen, _ = load_generator(args.ckpt)
    arr = np.asarray(PILImage.open(args.input).convert("RGB")).transpose(2, 0, 1)
    lr = (arr.astype(np.float64) / 255.0).astype(np.float32)
    if lr.shape != (3, 16, 16):
        print(f"error: input must be 16x16 RGB, got {lr.shape[-2:]}", file=sys.stderr)
        return 2
    with torch.no_grad():
        out = gen(torch.from_numpy(lr).unsqueeze(0))
    hr = np.rint(out.final.squeeze(0).numpy() * 255.0).astype(np.uint8)
    PILImage.fromarray(hr.transpose(1, 2, 0), mode="RGB").save(args.output)
    print(f"wrote {args.output}")
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    serve(args.ckpt, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="faceup")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a toy dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--augment", action="store_true")
    p.add_argument("--no-occlusion", action="store_true")
    p.add_argument("--mask-side", type=int, default=None)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="run the three-phase training")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sweep", choices=["masks", "priors"], default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("infer", help="hallucinate one 16x16 PNG")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("serve", help="start the HTTP inference service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
