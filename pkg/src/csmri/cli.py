"""Command-line interface: simulate -> mask -> sens -> undersample ->
train -> recon -> eval, all on CKS files.

Exit codes: 0 success, 1 runtime error (one-line diagnostic on stderr),
2 usage error.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io
from .cs import CsConfig, cs_reconstruct
from .estimators import _build_inputs
from .exceptions import CsmriError
from .imaging import estimate_sensitivities, normalize_kspace
from .metrics import report
from .phantom import PhantomSpec, simulate_phantom
from .sampling import MaskSpec, nominal_accel, poisson_disc_mask, retrospective_undersample
from .training import TrainConfig, train
from .unrolled import init_feature_extractor, init_unrolled, unrolled_forward


def _parse_pair(text: str, what: str) -> tuple[int, int]:
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise CsmriError(f"{what} must look like 64x64, got {text!r}") from None


def _cmd_simulate(args) -> int:
    h, w = _parse_pair(args.size, "--size")
    out = Path(args.out)
    for i in range(args.count):
        spec = PhantomSpec(h, w, args.coils, args.ellipses, args.noise, args.seed + i)
        truth, sens, full = simulate_phantom(spec)
        sid = f"subject_{i:03d}"
        io.save_subject(out / sid, truth, sens, full, sid)
    print(f"simulated {args.count} subject(s) of {h}x{w} x{args.coils} coils -> {out}")
    return 0


def _cmd_mask(args) -> int:
    h, w = _parse_pair(args.size, "--size")
    ch, cw = _parse_pair(args.calib, "--calib")
    spec = MaskSpec(h, w, args.accel, ch, cw, args.corner_cutting, args.seed, args.alpha)
    mask = poisson_disc_mask(spec)
    io.write_mask(args.out, mask)
    print(
        f"mask {h}x{w}: nominal R={nominal_accel(mask, args.corner_cutting):.2f} "
        f"effective R={mask.effective_accel:.2f} ({int(mask.mask.sum())} samples) "
        f"-> {args.out}"
    )
    return 0


def _cmd_sens(args) -> int:
    full, _ = io.read_cks(args.infile)
    sens = estimate_sensitivities(full, _parse_pair(args.calib, "--calib"), args.thresh)
    io.write_cks(args.out, sens.astype(np.complex128))
    print(f"estimated {sens.shape[0]} sensitivity maps -> {args.out}")
    return 0


def _cmd_undersample(args) -> int:
    full, meta = io.read_cks(args.infile)
    mask = io.read_mask(args.mask)
    y = retrospective_undersample(full.astype(np.complex128), mask)
    io.write_cks(args.out, y.data, meta.get("subject_id"), mask_attached=True)
    print(f"undersampled (effective R={mask.effective_accel:.2f}) -> {args.out}")
    return 0


def _load_recon_inputs(args):
    ydata, _ = io.read_cks(args.infile)
    sens, _ = io.read_cks(args.sens)
    mask = io.read_mask(args.mask) if args.mask else None
    return _build_inputs(ydata.astype(np.complex128), sens.astype(np.complex128), mask)


def _cmd_recon(args) -> int:
    ksp, model = _load_recon_inputs(args)
    if args.method == "zf":
        image = model.zero_filled(ksp)
    elif args.method == "cs":
        cfg = CsConfig(
            lam=getattr(args, "lambda"),
            step=args.step,
            max_iters=args.iters,
            tol=args.tol,
            wavelet_levels=args.levels,
            wavelet=args.wavelet,
            use_fista=args.fista,
        )
        normalized, scale = normalize_kspace(ksp)
        image, iters, _ = cs_reconstruct(model, normalized, cfg)
        image = image * scale
        print(f"cs converged in {iters} iterations")
    else:  # net
        if not args.weights:
            raise CsmriError("--weights is required for --method net")
        params = io.read_weights(args.weights)
        normalized, scale = normalize_kspace(ksp)
        image = unrolled_forward(params, model, normalized) * scale
    io.write_cks(args.out, image.astype(np.complex128))
    if args.pgm:
        io.write_pgm(args.pgm, image)
    print(f"reconstructed ({args.method}) -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    mask = io.read_mask(args.mask)
    sens_from = args.sens_source
    calib = _parse_pair(args.calib, "--calib") if sens_from == "estimate" else None
    examples = io.load_dataset(args.data, mask, sens_from, calib)
    if args.val_fraction > 0:
        examples, val = io.split_by_subject(examples, args.val_fraction, args.seed)
        print(f"training on {len(examples)} example(s), holding out {len(val)}")
    loss_kind = {"l1": "l1", "l2": "l2", "adv": "adversarial"}[args.loss]
    cfg = TrainConfig(
        loss_kind=loss_kind,
        steps=args.steps,
        batch_size=args.batch,
        learn_rate=args.lr,
        finetune_rate=args.finetune_lr,
        adv_lambda=args.adv_lambda,
        seed=args.seed,
        augment=args.augment,
        checkpoint_every=args.checkpoint_every,
        pretrain_steps=args.pretrain,
    )
    init = init_unrolled(
        args.iters_unroll, args.feat, args.resblocks, seed=args.seed
    )
    extractor = None
    if loss_kind == "adversarial":
        channels = tuple(int(c) for c in args.extractor_channels.split(","))
        strides = tuple(int(s) for s in args.extractor_strides.split(","))
        extractor = init_feature_extractor(channels, strides, seed=args.seed + 1)
    params, extractor, history = train(
        init, examples, cfg, extractor, checkpoint_dir=args.checkpoint_dir
    )
    io.write_weights(args.out, params)
    if extractor is not None:
        io.write_weights(Path(args.out).with_suffix(".extractor.ckw"), extractor)
    print(
        f"trained {args.steps} steps (loss {history[0]:.4e} -> {history[-1]:.4e}) "
        f"-> {args.out}"
    )
    return 0


def _cmd_eval(args) -> int:
    test_path, ref_path = Path(args.test), Path(args.ref)
    if test_path.is_dir() != ref_path.is_dir():
        raise CsmriError("--test and --ref must both be files or both directories")
    if test_path.is_dir():
        names = sorted(p.name for p in test_path.glob("*.cks"))
        if not names:
            raise CsmriError(f"no .cks files under {test_path}")
        pairs = [(test_path / n, ref_path / n) for n in names]
    else:
        pairs = [(test_path, ref_path)]
        names = [test_path.name]
    reports = []
    for tpath, rpath in pairs:
        test, _ = io.read_cks(tpath)
        ref, _ = io.read_cks(rpath)
        reports.append(report(test, ref))
    io.write_metric_report(args.out, reports, names)
    mean_psnr = float(np.mean([r.psnr for r in reports if np.isfinite(r.psnr)] or [np.inf]))
    print(f"evaluated {len(reports)} slice(s): mean PSNR {mean_psnr:.2f} dB -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="csmri",
        description="Compressed-sensing MRI reconstruction toolkit "
        "(synthetic pipeline: simulate/mask/sens/undersample/train/recon/eval)",
    )
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate synthetic phantom subjects")
    s.add_argument("--size", required=True, help="grid size HxW, e.g. 64x64")
    s.add_argument("--coils", type=int, default=4)
    s.add_argument("--noise", type=float, default=0.0, help="complex noise std")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, default=1, help="number of subjects")
    s.add_argument("--ellipses", type=int, default=8)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_simulate)

    s = sub.add_parser("mask", help="generate a Poisson-disc sampling mask")
    s.add_argument("--size", required=True)
    s.add_argument("--accel", type=float, required=True)
    s.add_argument("--calib", default="20x20")
    s.add_argument("--corner-cutting", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--alpha", type=float, default=2.0, help="density falloff")
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_mask)

    s = sub.add_parser("sens", help="estimate sensitivity maps from calibration data")
    s.add_argument("--in", dest="infile", required=True)
    s.add_argument("--calib", default="20x20")
    s.add_argument("--thresh", type=float, default=0.05)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_sens)

    s = sub.add_parser("undersample", help="retrospectively apply a sampling mask")
    s.add_argument("--in", dest="infile", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_undersample)

    s = sub.add_parser("recon", help="reconstruct an image from k-space")
    s.add_argument("--method", choices=("zf", "cs", "net"), required=True)
    s.add_argument("--in", dest="infile", required=True)
    s.add_argument("--sens", required=True)
    s.add_argument("--mask", default=None, help="mask file (default: infer from data)")
    s.add_argument("--lambda", type=float, default=0.01)
    s.add_argument("--iters", type=int, default=200)
    s.add_argument("--step", type=float, default=0.45)
    s.add_argument("--tol", type=float, default=1e-5)
    s.add_argument("--levels", type=int, default=3)
    s.add_argument("--wavelet", choices=("haar", "db4"), default="haar")
    s.add_argument("--fista", action="store_true")
    s.add_argument("--weights", default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--pgm", default=None, help="also export a magnitude PGM")
    s.set_defaults(func=_cmd_recon)

    s = sub.add_parser("train", help="train the unrolled reconstruction network")
    s.add_argument("--data", required=True, help="dataset root (subject dirs)")
    s.add_argument("--mask", required=True)
    s.add_argument("--loss", choices=("l1", "l2", "adv"), default="l2")
    s.add_argument("--iters-unroll", type=int, default=4)
    s.add_argument("--feat", type=int, default=64)
    s.add_argument("--resblocks", type=int, default=2)
    s.add_argument("--steps", type=int, default=500)
    s.add_argument("--batch", type=int, default=2)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--finetune-lr", type=float, default=1e-4)
    s.add_argument("--adv-lambda", type=float, default=1.0)
    s.add_argument("--pretrain", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--augment", action=argparse.BooleanOptionalAction, default=True)
    s.add_argument("--val-fraction", type=float, default=0.0)
    s.add_argument("--sens-source", choices=("file", "estimate"), default="file")
    s.add_argument("--calib", default="20x20")
    s.add_argument("--checkpoint-every", type=int, default=100)
    s.add_argument("--checkpoint-dir", default=None)
    s.add_argument("--extractor-channels", default="32,64,128")
    s.add_argument("--extractor-strides", default="1,2,2")
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_train)

    s = sub.add_parser("eval", help="compute image-quality metrics")
    s.add_argument("--test", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CsmriError, OSError) as exc:
        print(f"csmri {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
