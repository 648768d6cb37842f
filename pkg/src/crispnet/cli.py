"""Command-line entry point: ``crispnet <subcommand> [flags]``.

Exit status: 0 success, 1 failed check, 2 usage or configuration error,
3 I/O error, 4 numerical abort. Failures print one line
``crispnet: error[<ErrorClass>]: <message>`` on stderr.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crispnet", description="Learned raw-to-sRGB ISP with white-balance and global conditioning.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("generate", help="write a synthetic raw/target corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--profile", required=True, choices=["monitor", "real", "noiseless"])
    g.add_argument("--count", type=int, default=None, help="images (default: the profile's 750 or 198)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--extents", default="192x256", help="Bayer height x width")

    overrides = dict(action="append", default=[], metavar="KEY=VALUE", help="override a config key")

    t = sub.add_parser("train", help="train a model from scratch")
    t.add_argument("--data", required=True)
    t.add_argument("--config", default=None, help="key=value training config file")
    t.add_argument("--out", required=True, help="best checkpoint path")
    t.add_argument("--log", default=None, help="loss/metric log (default: OUT.log)")
    t.add_argument("--set", **overrides)

    f = sub.add_parser("finetune", help="continue training a checkpoint at a reduced learning rate")
    f.add_argument("--ckpt", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--config", default=None)
    f.add_argument("--log", default=None)
    f.add_argument("--set", **overrides)

    e = sub.add_parser("eval", help="score full-frame predictions against targets")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--ckpt", help="run this checkpoint on every frame")
    src.add_argument("--pred", help="directory of <id>.ppm predictions to score instead")
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="val", choices=["train", "val", "test"])
    e.add_argument("--report", required=True)

    i = sub.add_parser("infer", help="render one raw frame")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--raw", required=True)
    i.add_argument("--meta", required=True)
    i.add_argument("--out", required=True)

    a = sub.add_parser("ablate", help="train each variant over several seeds and tabulate medians")
    a.add_argument("--variants", required=True, help="comma-separated variant names")
    a.add_argument("--seeds", type=int, default=3)
    a.add_argument("--data", required=True)
    a.add_argument("--report", required=True)
    a.add_argument("--config", default=None)
    a.add_argument("--work", default=None, help="directory for per-run checkpoints and logs")
    a.add_argument("--set", **overrides)

    c = sub.add_parser("gradcheck", help="finite-difference check of every primitive")
    c.add_argument("--op", default=None)
    c.add_argument("--seeds", type=int, default=20)
    return p


def _train_config(args, **fixed):
    from .model.config import parse_kv
    from .train import TrainConfig

    kv = {}
    if args.config:
        try:
            kv.update(parse_kv(Path(args.config).read_text(encoding="utf-8")))
        except OSError as exc:
            from .train import DatasetError

            raise DatasetError(f"cannot read config {args.config}: {exc}") from exc
    kv.update(parse_kv("\n".join(args.set)))
    kv.update({k: str(v) for k, v in fixed.items()})
    return TrainConfig.from_dict(kv)


def _resolved(command: str, text: str) -> None:
    print(f"resolved: command={command} {text}", flush=True)


def _cmd_generate(args) -> int:
    from .camera import PROFILES, generate_dataset

    try:
        h, w = (int(v) for v in args.extents.lower().split("x"))
    except ValueError:
        raise ValueError(f"--extents must look like HxW, got {args.extents!r}") from None
    _resolved("generate", f"out={args.out} profile={args.profile} count={args.count} seed={args.seed} extents={h}x{w}")
    recs = generate_dataset(args.out, PROFILES[args.profile], args.count, args.seed, extents=(h, w))
    print(f"wrote {len(recs)} images to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    from .train import train

    cfg = _train_config(args, data=args.data, checkpoint=args.out, log=args.log or args.out + ".log")
    _resolved("train", cfg.resolved())
    res = train(cfg)
    print(f"best epoch {res.best_epoch}: val delta_e {res.best_delta_e:.4f}")
    return EXIT_OK


def _cmd_finetune(args) -> int:
    from .train import finetune

    cfg = _train_config(args, data=args.data, checkpoint=args.out, log=args.log or args.out + ".log")
    _resolved("finetune", f"ckpt={args.ckpt} " + cfg.resolved())
    res = finetune(args.ckpt, cfg)
    print(f"best epoch {res.best_epoch}: val delta_e {res.best_delta_e:.4f}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .train import evaluate, evaluate_predictions

    source = f"ckpt={args.ckpt}" if args.ckpt else f"pred={args.pred}"
    _resolved("eval", f"{source} data={args.data} split={args.split} report={args.report}")
    rep = evaluate(args.ckpt, args.data, args.split) if args.ckpt else evaluate_predictions(args.pred, args.data, args.split)
    rep.write(args.report)
    print(f"mean psnr {rep.psnr:.4f} ssim {rep.ssim:.4f} delta_e {rep.delta_e:.4f} over {len(rep.rows)} images")
    return EXIT_OK


def _cmd_infer(args) -> int:
    from . import raw
    from .model import infer_full
    from .train import load_model

    _resolved("infer", f"ckpt={args.ckpt} raw={args.raw} meta={args.meta} out={args.out}")
    model = load_model(args.ckpt)
    frame = raw.read_craw(args.raw)
    meta = raw.read_meta(args.meta)
    img = infer_full(model, frame, meta)
    raw.write_ppm(args.out, img)
    print(f"wrote {img.shape[1]}x{img.shape[0]} image to {args.out}")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    from .train import run_ablation

    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    if not variants or args.seeds < 1:
        raise ValueError("need at least one variant and one seed")
    cfg = _train_config(args, data=args.data)
    seeds = list(range(cfg.seed, cfg.seed + args.seeds))
    _resolved("ablate", f"variants={','.join(variants)} seeds={','.join(map(str, seeds))} " + cfg.resolved())
    if args.work:
        Path(args.work).mkdir(parents=True, exist_ok=True)
    rep = run_ablation(variants, cfg, seeds, work_dir=args.work)
    rep.write(args.report)
    sys.stdout.write(rep.to_text())
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .autodiff import run_suite

    _resolved("gradcheck", f"op={args.op or 'all'} seeds=0..{args.seeds - 1} epsilon=0.001")
    worst = run_suite(range(args.seeds), only=args.op)
    for rep in worst.values():
        print(rep.line())
    failed = [r.op for r in worst.values() if not r.passed]
    print(f"{len(worst) - len(failed)}/{len(worst)} primitives passed")
    return EXIT_FAILED if failed else EXIT_OK


COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "finetune": _cmd_finetune,
    "eval": _cmd_eval,
    "infer": _cmd_infer,
    "ablate": _cmd_ablate,
    "gradcheck": _cmd_gradcheck,
}


def _exit_code(exc: BaseException) -> int:
    from .autodiff import NumericalInstabilityError
    from .autodiff.checkpoint import CheckpointError
    from .raw import RawFormatError

    if isinstance(exc, (NumericalInstabilityError, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(exc, (OSError, RawFormatError, CheckpointError)):
        return EXIT_IO
    if isinstance(exc, (ValueError, KeyError)):
        return EXIT_USAGE
    return EXIT_FAILED


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - every failure maps to an exit status
        msg = str(exc).splitlines()[0] if str(exc) else exc.__class__.__name__
        print(f"crispnet: error[{type(exc).__name__}]: {msg}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
