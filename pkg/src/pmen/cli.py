"""Command-line surface wiring the pipeline together.

Exit codes: 0 success, 1 usage error, 2 data/processing error.
"""

import argparse
import sys
from dataclasses import replace

import numpy as np

from . import fileio
from .codec import CodecConfig, encode_decode
from .errors import PmenError, UsageError
from .masks import boundary_mask, make_mask, mean_mask
from .metrics import Sequence, bd_rate, evaluate_model, psnr
from .model import ArchConfig, enhance_frame
from .training import TrainConfig, build_dataset, finetune, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _read_frame(args, what: str = "input") -> np.ndarray:
    path = getattr(args, what)
    if path.endswith(".pgm"):
        return fileio.read_pgm(path)
    if args.width is None or args.height is None:
        raise UsageError(f"--width/--height required for raw YUV input {path}")
    return fileio.read_yuv_frame(path, args.width, args.height, args.frame,
                                 min_cu=args.min_cu)


def _codec_config(args) -> CodecConfig:
    return CodecConfig(ctu_size=args.ctu, min_cu=args.min_cu, qp=args.qp,
                       lambda_scale=args.lambda_scale)


def _add_codec_flags(p, with_qp=True):
    p.add_argument("--ctu", type=int, default=64, help="coding tree unit size")
    p.add_argument("--min-cu", dest="min_cu", type=int, default=8, help="minimum CU size")
    p.add_argument("--lambda-scale", dest="lambda_scale", type=float, default=0.85)
    if with_qp:
        p.add_argument("--qp", type=int, required=True, help="quantization parameter [0,51]")


def _add_yuv_flags(p):
    p.add_argument("--width", type=int, help="frame width (raw YUV input)")
    p.add_argument("--height", type=int, help="frame height (raw YUV input)")
    p.add_argument("--frame", type=int, default=0, help="frame index in a YUV clip")


def _arch_from_args(args) -> ArchConfig:
    return ArchConfig(
        variant=args.arch,
        num_res_blocks=args.blocks,
        channels=args.channels,
        global_skip=not args.no_global_skip,
        mask_kind=args.mask_kind,
    )


def cmd_encode(args) -> int:
    frame = _read_frame(args)
    recon, pmap, rd = encode_decode(frame, _codec_config(args))
    if args.recon:
        fileio.write_pgm(args.recon, recon)
    if args.map:
        fileio.write_partition_map(args.map, pmap)
    if args.rd_csv:
        fileio.write_rd_csv(args.rd_csv, [(args.qp, rd)])
    print(f"qp={args.qp} rate_bits={rd.rate} psnr_db={rd.psnr:.4f} leaves={len(pmap.leaves)}")
    return 0


def cmd_mask(args) -> int:
    pmap = fileio.read_partition_map(args.map)
    if args.kind == "mean":
        if not args.recon:
            raise UsageError("mask --kind mean needs --recon (the decoded frame)")
        mask = mean_mask(fileio.read_pgm(args.recon), pmap)
    else:
        mask = boundary_mask(pmap)
    fileio.write_mask_pgm(args.output, mask.values)
    print(f"wrote {args.kind} mask {mask.width}x{mask.height} to {args.output}")
    return 0


def cmd_dataset(args) -> int:
    manifest = fileio.load_manifest(args.manifest)
    config = _codec_config(args)
    dataset = build_dataset(manifest, config, args.mask_kind,
                            frames_per_clip=args.frames_per_clip, seed=args.seed,
                            threads=args.threads)
    fileio.save_dataset(args.output, dataset)
    print(f"clips={len(dataset.clip_names)} patches={len(dataset)} qp={dataset.qp} "
          f"mask_kind={dataset.mask_kind or 'none'}")
    for failure in dataset.failures:
        print(f"failed: {failure}", file=sys.stderr)
    return 0


def _train_common(args, init: str | None) -> int:
    dataset = fileio.load_dataset(args.data)
    arch = _arch_from_args(args)
    config = TrainConfig(
        qp=dataset.qp,
        arch=arch,
        batch_size=args.batch,
        lr_initial=args.lr,
        lr_decay_epoch=args.decay_epoch if args.decay_epoch is not None else args.epochs,
        lr_decay_factor=args.decay_factor,
        epochs=args.epochs,
        seed=args.seed,
        init_checkpoint=init,
    )
    if init:
        model, log = finetune(init, config, dataset)
    else:
        model, log = train(config, dataset)
    fileio.save_checkpoint(args.output, model)
    if args.log:
        fileio.append_train_log(args.log, log)
    for row in log:
        print(f"epoch={row.epoch} loss={row.mean_loss:.8f} lr={row.lr:g}")
    print(f"saved {arch.variant} model ({model.parameter_count()} parameters) to {args.output}")
    return 0


def cmd_train(args) -> int:
    return _train_common(args, args.init)


def cmd_finetune(args) -> int:
    return _train_common(args, args.init)


def cmd_enhance(args) -> int:
    model = fileio.load_checkpoint(args.model)
    frame = _read_frame(args)
    mask = None
    if model.arch.needs_mask:
        if not args.partition:
            raise UsageError(f"variant '{model.arch.variant}' needs --partition")
        pmap = fileio.read_partition_map(args.partition)
        mask = make_mask(model.arch.mask_kind, frame, pmap)
    out = enhance_frame(model, frame, mask)
    fileio.write_pgm(args.output, out)
    print(f"enhanced {out.shape[1]}x{out.shape[0]} frame -> {args.output}")
    return 0


def cmd_eval_psnr(args) -> int:
    a = fileio.read_pgm(args.frame_a)
    b = fileio.read_pgm(args.frame_b)
    print(f"{psnr(a, b):.6f}")
    return 0


def cmd_eval_report(args) -> int:
    manifest = fileio.load_manifest(args.manifest)
    qps = [int(q) for q in args.qps.split(",")]
    models = {}
    for spec_str in args.model:
        try:
            qp_str, path = spec_str.split("=", 1)
            models[int(qp_str)] = fileio.load_checkpoint(path)
        except ValueError as exc:
            raise UsageError(f"--model expects QP=PATH, got {spec_str!r}: {exc}") from exc
    sequences = []
    for entry in manifest.entries:
        entry.check_size()
        count = entry.frame_count if args.max_frames == 0 else min(entry.frame_count,
                                                                   args.max_frames)
        frames = [
            fileio.read_yuv_frame(entry.path, entry.width, entry.height, i, min_cu=args.min_cu)
            for i in range(count)
        ]
        sequences.append(Sequence(name=entry.name, frames=frames, cls=entry.cls))
    base = CodecConfig(ctu_size=args.ctu, min_cu=args.min_cu, qp=qps[0],
                       lambda_scale=args.lambda_scale)
    report = evaluate_model(models, sequences, base, qps)
    fileio.write_report_csv(args.output, report)
    if args.bd_output:
        fileio.write_bd_csv(args.bd_output, report)
    for row in report.bd_rows:
        print(f"{row.sequence}: bd_rate={row.bd_rate_percent:.2f}%")
    print(f"Average: bd_rate={report.bd_average:.2f}%")
    return 0


def cmd_bdrate(args) -> int:
    anchor = fileio.read_rd_csv(args.anchor)
    test = fileio.read_rd_csv(args.test)
    print(f"{bd_rate(anchor, test):.2f}%")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="pmen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="encode one frame: recon + partition map + RD stats")
    p.add_argument("--input", required=True, help="input frame (.pgm or raw .yuv)")
    _add_yuv_flags(p)
    _add_codec_flags(p)
    p.add_argument("--recon", help="write reconstruction PGM here")
    p.add_argument("--map", help="write partition map here")
    p.add_argument("--rd-csv", dest="rd_csv", help="write a one-row RD CSV here")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("mask", help="derive a guidance mask from a partition map")
    p.add_argument("--kind", choices=["mean", "boundary"], required=True)
    p.add_argument("--map", required=True, help="partition map file")
    p.add_argument("--recon", help="decoded frame PGM (required for --kind mean)")
    p.add_argument("--output", required=True, help="mask PGM output path")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("dataset", help="build a training patch store from a manifest")
    p.add_argument("--manifest", required=True)
    _add_codec_flags(p)
    p.add_argument("--mask-kind", dest="mask_kind", choices=["mean", "boundary"],
                   default=None, help="omit for single-input training data")
    p.add_argument("--frames-per-clip", dest="frames_per_clip", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for per-frame encoding (1 = fully sequential)")
    p.add_argument("--output", required=True, help="output .npz patch store")
    p.set_defaults(func=cmd_dataset)

    for name, helptext in (("train", "train a model from scratch"),
                           ("finetune", "continue training from a checkpoint")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--data", required=True, help=".npz patch store")
        p.add_argument("--arch", choices=["single", "af", "cf", "ef"], default="single")
        p.add_argument("--mask-kind", dest="mask_kind", choices=["mean", "boundary"],
                       default="mean")
        p.add_argument("--channels", type=int, default=64)
        p.add_argument("--blocks", type=int, default=2)
        p.add_argument("--no-global-skip", dest="no_global_skip", action="store_true")
        p.add_argument("--epochs", type=int, default=40)
        p.add_argument("--batch", type=int, default=32)
        p.add_argument("--lr", type=float, default=1e-4)
        p.add_argument("--decay-epoch", dest="decay_epoch", type=int, default=None,
                       help="epoch after which lr decays (default: no decay within run)")
        p.add_argument("--decay-factor", dest="decay_factor", type=float, default=0.1)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--init", required=(name == "finetune"),
                       default=None, help="checkpoint to start from")
        p.add_argument("--output", required=True, help="output checkpoint path")
        p.add_argument("--log", help="append per-epoch CSV log here")
        p.set_defaults(func=cmd_train if name == "train" else cmd_finetune)

    p = sub.add_parser("enhance", help="run a trained model on one decoded frame")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--input", required=True, help="decoded frame (.pgm or raw .yuv)")
    _add_yuv_flags(p)
    p.add_argument("--min-cu", dest="min_cu", type=int, default=8)
    p.add_argument("--partition", help="partition map (needed by double-input variants)")
    p.add_argument("--output", required=True, help="enhanced frame PGM")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="quality metrics")
    esub = p.add_subparsers(dest="eval_command", required=True)
    pe = esub.add_parser("psnr", help="PSNR between two PGM frames")
    pe.add_argument("frame_a")
    pe.add_argument("frame_b")
    pe.set_defaults(func=cmd_eval_psnr)
    pr = esub.add_parser("report", help="per-sequence/per-QP enhancement report")
    pr.add_argument("--manifest", required=True)
    pr.add_argument("--model", action="append", required=True,
                    help="QP=CHECKPOINT, repeat per QP")
    pr.add_argument("--qps", default="22,27,32,37", help="comma-separated QP list")
    _add_codec_flags(pr, with_qp=False)
    pr.add_argument("--max-frames", dest="max_frames", type=int, default=0,
                    help="frames evaluated per clip (0 = all)")
    pr.add_argument("--output", required=True, help="report CSV path")
    pr.add_argument("--bd-output", dest="bd_output", help="BD-rate summary CSV path")
    pr.set_defaults(func=cmd_eval_report)

    p = sub.add_parser("bdrate", help="BD-rate between two RD CSV files (test vs anchor)")
    p.add_argument("anchor")
    p.add_argument("test")
    p.set_defaults(func=cmd_bdrate)

    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        print("run 'pmen --help' for usage", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except PmenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))
