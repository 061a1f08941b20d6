"""Command-line interface: every pipeline stage as a subcommand.

Stages communicate only through files (images, bank, manifests, weights), so
any stage can be rerun in isolation. Exit codes: 0 success, 1 usage error,
2 runtime error. All randomness flows from --seed (or [train] seed in a
config file, or PLR_SEED in the environment).
"""

import argparse
import glob
import json
import os
import sys

import numpy as np

from . import config as cfgmod
from .corrupt import CorruptionSpec, generate_dataset
from .errors import PlrError
from .image import load_image, save_image
from .manifest import read_manifest
from .metrics import compute_metrics
from .nn.gradcheck import GRADCHECK_OPS, grad_check
from .nn.net import UNetConfig
from .nn.weights import load_weights, save_weights
from .patches import build_bank, load_bank, save_bank
from .perlin import OctaveParams, render_noise_image
from .similarity import set_similarity
from .train import (
    evaluate_manifest,
    export_activations,
    finetune,
    finetune_config,
    pretrain,
    pretrain_config,
    repeat_finetune,
    sweep,
)

D = cfgmod.DEFAULTS


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exceptions, not SystemExit(2)."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _add_seed(p):
    p.add_argument("--seed", type=int, default=None,
                   help="global seed (default: config file, then PLR_SEED, then 0)")
    p.add_argument("--config", default=None, help="INI config file")


def _add_model_opts(p):
    m = D["model"]
    p.add_argument("--levels", type=int, default=None,
                   help=f"encoder/decoder levels (default {m['levels']})")
    p.add_argument("--base-channels", type=int, default=None,
                   help=f"channels at the first level (default {m['base_channels']})")
    p.add_argument("--fc-units", type=int, default=None,
                   help=f"hidden units of the classifier head (default {m['fc_units']})")


def _add_sched_opts(p):
    s = D["scheduler"]
    p.add_argument("--patience", type=int, default=None,
                   help=f"plateau patience in epochs (default {s['patience']})")
    p.add_argument("--factor", type=float, default=None,
                   help=f"lr reduction factor (default {s['factor']})")
    p.add_argument("--min-lr", type=float, default=None,
                   help=f"lr floor (default {s['min_lr']})")


def build_parser():
    parser = _Parser(prog="plr", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    nz = D["noise"]
    p = sub.add_parser("gen-noise", parents=[], help="render multi-octave noise images")
    p.add_argument("--count", type=int, default=1, help="number of images (default 1)")
    p.add_argument("--size", type=int, default=nz["size"],
                   help=f"image side in pixels (default {nz['size']})")
    p.add_argument("--octaves", type=int, default=None,
                   help=f"octave count (default {nz['octaves']})")
    p.add_argument("--base-freq", type=float, default=None,
                   help=f"base frequency in cycles/pixel (default {nz['base_frequency']:.6f})")
    p.add_argument("--persistence", type=float, default=None,
                   help=f"amplitude ratio between octaves (default {nz['persistence']})")
    p.add_argument("--lacunarity", type=float, default=None,
                   help=f"frequency ratio between octaves (default {nz['lacunarity']})")
    p.add_argument("--out", required=True, help="output directory")
    _add_seed(p)

    bk = D["bank"]
    p = sub.add_parser("build-bank", help="harvest bright patches into a bank file")
    p.add_argument("--noise-dir", required=True, help="directory of noise images")
    p.add_argument("--count", type=int, default=bk["count"],
                   help=f"patches to keep (default {bk['count']})")
    p.add_argument("--min-mean", type=float, default=bk["min_mean"],
                   help=f"mean-intensity threshold (default {bk['min_mean']})")
    p.add_argument("--size", default=f"{bk['size_min']}:{bk['size_max']}",
                   help=f"patch size range MIN:MAX (default {bk['size_min']}:{bk['size_max']})")
    p.add_argument("--out", required=True, help="output bank file (.plb)")
    _add_seed(p)

    co = D["corrupt"]
    p = sub.add_parser("corrupt", help="generate pseudo-diseased images + manifest")
    p.add_argument("--strategy", choices=["perlin", "gaussian", "shuffle"],
                   default=co["strategy"], help=f"corruption strategy (default {co['strategy']})")
    p.add_argument("--images", required=True, help="directory of normal images")
    p.add_argument("--masks", default="auto",
                   help="directory of mask files or 'auto' (default auto)")
    p.add_argument("--bank", default=None, help="patch bank file (perlin strategy)")
    p.add_argument("--per-image", type=int, default=co["patches_per_image"],
                   help=f"patches pasted per image (default {co['patches_per_image']})")
    p.add_argument("--kernel", type=int, default=co["kernel_size"],
                   help=f"Gaussian kernel size (default {co['kernel_size']})")
    p.add_argument("--sigma", default=co["sigma"],
                   help="Gaussian sigma or 'auto' (default auto)")
    p.add_argument("--grid", type=int, default=co["grid"],
                   help=f"shuffle blocks per side (default {co['grid']})")
    p.add_argument("--paste-mode", choices=["replace", "max"], default=co["paste_mode"],
                   help=f"how pasted pixels combine (default {co['paste_mode']})")
    p.add_argument("--mask-threshold", type=int, default=100,
                   help="intensity threshold for auto masks (default 100)")
    p.add_argument("--count", type=int, required=True, help="number of pseudo images M")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--manifest", required=True, help="manifest path (.jsonl)")
    _add_seed(p)

    pt = D["pretrain"]
    p = sub.add_parser("pretrain", help="train the restoration network")
    p.add_argument("--manifest", required=True, help="restoration manifest")
    p.add_argument("--val-manifest", default=None,
                   help="validation manifest (default: hold out every 10th pair)")
    p.add_argument("--out", required=True, help="output weights (.plrw)")
    p.add_argument("--log", default=None, help="per-epoch JSONL training log")
    p.add_argument("--epochs", type=int, default=None,
                   help=f"training epochs (default {pt['epochs']})")
    p.add_argument("--batch-size", type=int, default=None,
                   help=f"mini-batch size (default {pt['batch_size']})")
    p.add_argument("--lr", type=float, default=None,
                   help=f"initial learning rate (default {pt['initial_lr']})")
    p.add_argument("--optimizer", choices=["sgd", "adadelta"], default=None,
                   help=f"optimizer (default {pt['optimizer']})")
    p.add_argument("--input-size", type=int, default=None,
                   help=f"square input resize (default {pt['input_size']})")
    _add_model_opts(p)
    _add_sched_opts(p)
    _add_seed(p)

    ft = D["finetune"]
    p = sub.add_parser("finetune", help="fine-tune the encoder for classification")
    p.add_argument("--train-manifest", required=True, help="labeled training manifest")
    p.add_argument("--val-manifest", required=True, help="labeled validation manifest")
    p.add_argument("--encoder", default=None,
                   help="pretrained restoration weights to transplant (default: random init)")
    p.add_argument("--out", required=True, help="output classifier weights (.plrw)")
    p.add_argument("--log", default=None, help="per-epoch JSONL training log")
    p.add_argument("--label-fraction", type=float, default=None,
                   help=f"fraction of the training labels to use (default {ft['label_fraction']})")
    p.add_argument("--epochs", type=int, default=None,
                   help=f"training epochs (default {ft['epochs']})")
    p.add_argument("--batch-size", type=int, default=None,
                   help=f"mini-batch size (default {ft['batch_size']})")
    p.add_argument("--lr", type=float, default=None,
                   help=f"initial learning rate (default {ft['initial_lr']})")
    p.add_argument("--optimizer", choices=["sgd", "adadelta"], default=None,
                   help=f"optimizer (default {ft['optimizer']})")
    p.add_argument("--input-size", type=int, default=None,
                   help=f"square input resize (default {ft['input_size']})")
    p.add_argument("--augment", dest="augment", action="store_true", default=None,
                   help="enable zoom/shear augmentation (default on)")
    p.add_argument("--no-augment", dest="augment", action="store_false",
                   help="disable zoom/shear augmentation")
    p.add_argument("--repeats", type=int, default=1,
                   help="independent runs for highest/average reporting (default 1)")
    p.add_argument("--eval-manifest", default=None,
                   help="test manifest for the repeats report")
    p.add_argument("--report", default=None, help="JSON report path for repeats")
    _add_model_opts(p)
    _add_sched_opts(p)
    _add_seed(p)

    p = sub.add_parser("evaluate", help="score a labeled manifest with a classifier")
    p.add_argument("--weights", required=True, help="classifier weights (.plrw)")
    p.add_argument("--manifest", required=True, help="labeled manifest")
    p.add_argument("--out", required=True, help="metrics JSON path")
    p.add_argument("--threshold", type=float, default=0.5,
                   help="decision threshold (default 0.5)")
    p.add_argument("--input-size", type=int, default=None,
                   help=f"square input resize (default {ft['input_size']})")
    _add_seed(p)

    p = sub.add_parser("similarity", help="compare two patch directories")
    p.add_argument("--set-a", required=True, help="first patch directory")
    p.add_argument("--set-b", required=True, help="second patch directory")
    p.add_argument("--out", required=True, help="report JSON path")
    _add_seed(p)

    p = sub.add_parser("sweep", help="grid over patch count P and dataset size M")
    p.add_argument("--p-values", required=True, help="comma list, e.g. 15,30,60")
    p.add_argument("--m-values", required=True, help="comma list, e.g. 464,1856")
    p.add_argument("--images", required=True, help="directory of normal images")
    p.add_argument("--masks", default="auto", help="mask directory or 'auto'")
    p.add_argument("--bank", required=True, help="patch bank file")
    p.add_argument("--train-manifest", required=True, help="labeled training manifest")
    p.add_argument("--val-manifest", required=True, help="labeled validation manifest")
    p.add_argument("--workdir", required=True, help="scratch directory for datasets")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--epochs", type=int, default=None, help="epochs for both phases")
    p.add_argument("--input-size", type=int, default=None,
                   help=f"square input resize (default {pt['input_size']})")
    p.add_argument("--mask-threshold", type=int, default=100,
                   help="intensity threshold for auto masks (default 100)")
    _add_model_opts(p)
    _add_seed(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.add_argument("--trials", type=int, default=20,
                   help="random trials per op (default 20)")
    _add_seed(p)

    p = sub.add_parser("viz-activations", help="export a layer's channel maps")
    p.add_argument("--weights", required=True, help="weights file (.plrw)")
    p.add_argument("--image", required=True, help="input image")
    p.add_argument("--layer", required=True, help="layer name, e.g. conv_8")
    p.add_argument("--out", required=True, help="output grid image")
    p.add_argument("--size", type=int, default=None,
                   help="resize input to this side first (default: keep size)")
    _add_seed(p)

    return parser


def _file_cfg(args):
    return cfgmod.load_ini(args.config) if getattr(args, "config", None) else {}


def _list_images(directory):
    paths = sorted(p for p in glob.glob(os.path.join(directory, "*"))
                   if p.lower().endswith((".png", ".pgm", ".pnm")))
    if not paths:
        raise PlrError(f"no .png/.pgm images found in {directory}")
    return paths


def _model_config(args, fc):
    m = D["model"]
    return UNetConfig(
        levels=cfgmod.resolve(args.levels, fc, "model", "levels", m["levels"]),
        base_channels=cfgmod.resolve(args.base_channels, fc, "model",
                                     "base_channels", m["base_channels"]),
        fc_units=cfgmod.resolve(args.fc_units, fc, "model", "fc_units", m["fc_units"]))


def _train_config(args, fc, phase):
    d = D[phase]
    s = D["scheduler"]
    make = pretrain_config if phase == "pretrain" else finetune_config
    kwargs = dict(
        batch_size=cfgmod.resolve(args.batch_size, fc, "train", "batch_size", d["batch_size"]),
        initial_lr=cfgmod.resolve(args.lr, fc, "optimizer", "lr", d["initial_lr"]),
        optimizer=cfgmod.resolve(args.optimizer, fc, "optimizer", "kind", d["optimizer"]),
        epochs=cfgmod.resolve(args.epochs, fc, "train", "epochs", d["epochs"]),
        input_size=cfgmod.resolve(args.input_size, fc, "train", "input_size", d["input_size"]),
        patience=cfgmod.resolve(args.patience, fc, "scheduler", "patience", s["patience"]),
        factor=cfgmod.resolve(args.factor, fc, "scheduler", "factor", s["factor"]),
        min_lr=cfgmod.resolve(args.min_lr, fc, "scheduler", "min_lr", s["min_lr"]),
        seed=cfgmod.resolve_seed(args.seed, fc),
    )
    if phase == "finetune":
        kwargs["label_fraction"] = cfgmod.resolve(
            args.label_fraction, fc, "train", "label_fraction", d["label_fraction"])
        kwargs["augment"] = cfgmod.resolve(args.augment, fc, "train", "augment",
                                           d["augment"])
    return make(**kwargs)


def cmd_gen_noise(args):
    fc = _file_cfg(args)
    nz = D["noise"]
    params = OctaveParams(
        octaves=cfgmod.resolve(args.octaves, fc, "noise", "octaves", nz["octaves"]),
        base_frequency=cfgmod.resolve(args.base_freq, fc, "noise", "base_frequency",
                                      nz["base_frequency"]),
        persistence=cfgmod.resolve(args.persistence, fc, "noise", "persistence",
                                   nz["persistence"]),
        lacunarity=cfgmod.resolve(args.lacunarity, fc, "noise", "lacunarity",
                                  nz["lacunarity"]))
    seed = cfgmod.resolve_seed(args.seed, fc)
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.count):
        img = render_noise_image(seed + i, args.size, params)
        save_image(img, os.path.join(args.out, f"noise_{i:04d}.png"))
    print(f"wrote {args.count} noise image(s) to {args.out}")


def cmd_build_bank(args):
    fc = _file_cfg(args)
    seed = cfgmod.resolve_seed(args.seed, fc)
    try:
        lo, hi = (int(v) for v in args.size.split(":"))
    except ValueError as exc:
        raise UsageError(f"--size wants MIN:MAX, got {args.size!r}") from exc
    imgs = [load_image(p) for p in _list_images(args.noise_dir)]
    bank = build_bank(imgs, args.count, threshold=args.min_mean,
                      size_range=(lo, hi), seed=seed)
    save_bank(bank, args.out)
    print(f"bank of {bank.count} patches (mean > {args.min_mean}) -> {args.out}")


def cmd_corrupt(args):
    fc = _file_cfg(args)
    seed = cfgmod.resolve_seed(args.seed, fc)
    sigma = None if args.sigma in (None, "auto", "0") else float(args.sigma)
    spec = CorruptionSpec(strategy=args.strategy, patches_per_image=args.per_image,
                          kernel_size=args.kernel, sigma=sigma, grid=args.grid,
                          paste_mode=args.paste_mode, seed=seed)
    normals = _list_images(args.images)
    masks = "auto" if args.masks == "auto" else _list_images(args.masks)
    bank = load_bank(args.bank) if args.bank else None
    manifest = generate_dataset(normals, masks, spec, args.count, args.out,
                                args.manifest, bank=bank,
                                mask_threshold=args.mask_threshold)
    print(f"wrote {len(manifest)} pairs; manifest -> {args.manifest}")


def cmd_pretrain(args):
    fc = _file_cfg(args)
    config = _train_config(args, fc, "pretrain")
    model_config = _model_config(args, fc)
    manifest = read_manifest(args.manifest)
    val = read_manifest(args.val_manifest, split="val") if args.val_manifest else None
    result = pretrain(manifest, config, model_config, val_manifest=val,
                      log_path=args.log)
    save_weights(result.weights, args.out)
    print(f"best val MSE {result.best_metric:.6f} at epoch {result.best_epoch}; "
          f"weights -> {args.out}")


def cmd_finetune(args):
    fc = _file_cfg(args)
    config = _train_config(args, fc, "finetune")
    model_config = _model_config(args, fc)
    train_m = read_manifest(args.train_manifest)
    val_m = read_manifest(args.val_manifest, split="val")
    encoder = load_weights(args.encoder) if args.encoder else None
    if args.repeats > 1:
        if not args.eval_manifest:
            raise UsageError("--repeats needs --eval-manifest")
        eval_m = read_manifest(args.eval_manifest, split="test")
        report, weights = repeat_finetune(encoder, train_m, val_m, eval_m,
                                          config, model_config, repeats=args.repeats)
        save_weights(weights, args.out)
        if args.report:
            with open(args.report, "w", encoding="utf-8") as fh:
                json.dump(report, fh, indent=2, sort_keys=True)
        print(f"{args.repeats} runs; highest accuracy "
              f"{report['highest']['accuracy']:.4f}; weights -> {args.out}")
    else:
        result = finetune(encoder, train_m, val_m, config, model_config,
                          log_path=args.log)
        save_weights(result.weights, args.out)
        print(f"best val accuracy {result.best_metric:.4f} at epoch "
              f"{result.best_epoch}; weights -> {args.out}")


def cmd_evaluate(args):
    fc = _file_cfg(args)
    input_size = cfgmod.resolve(args.input_size, fc, "train", "input_size",
                                D["finetune"]["input_size"])
    weights = load_weights(args.weights)
    manifest = read_manifest(args.manifest, split="test")
    metrics, _, _ = evaluate_manifest(weights, manifest, input_size,
                                      threshold=args.threshold)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(metrics.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(metrics.to_dict(), indent=2, sort_keys=True))


def cmd_similarity(args):
    set_a = [load_image(p) for p in _list_images(args.set_a)]
    set_b = [load_image(p) for p in _list_images(args.set_b)]
    report = set_similarity(set_a, set_b)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))


def cmd_sweep(args):
    fc = _file_cfg(args)
    seed = cfgmod.resolve_seed(args.seed, fc)
    try:
        p_values = [int(v) for v in args.p_values.split(",") if v]
        m_values = [int(v) for v in args.m_values.split(",") if v]
    except ValueError as exc:
        raise UsageError("--p-values/--m-values want comma-separated integers") from exc
    model_config = _model_config(args, fc)
    epochs = args.epochs or 10
    size = args.input_size or D["pretrain"]["input_size"]
    pre_cfg = pretrain_config(epochs=epochs, input_size=size, seed=seed)
    ft_cfg = finetune_config(epochs=epochs, input_size=size, seed=seed)
    normals = _list_images(args.images)
    masks = "auto" if args.masks == "auto" else _list_images(args.masks)
    rows = sweep(p_values, m_values, normals, masks, load_bank(args.bank),
                 read_manifest(args.train_manifest),
                 read_manifest(args.val_manifest, split="val"),
                 pre_cfg, ft_cfg, model_config, args.workdir,
                 mask_threshold=args.mask_threshold)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{len(rows)} sweep cells -> {args.out}")


def cmd_gradcheck(args):
    fc = _file_cfg(args)
    seed = cfgmod.resolve_seed(args.seed, fc)
    failed = []
    for op, (_, tol) in GRADCHECK_OPS.items():
        err = grad_check(op, trials=args.trials, seed=seed)
        status = "ok" if err < tol else "FAIL"
        print(f"{op:20s} max rel err {err:.3e}  (tol {tol:.0e})  {status}")
        if err >= tol:
            failed.append(op)
    if failed:
        raise PlrError(f"gradient checks failed: {', '.join(failed)}")
    print("all gradient checks passed")


def cmd_viz_activations(args):
    weights = load_weights(args.weights)
    image = load_image(args.image)
    grid = export_activations(weights, image, args.layer, input_size=args.size)
    save_image(grid, args.out)
    print(f"activation grid for {args.layer} -> {args.out}")


_COMMANDS = {
    "gen-noise": cmd_gen_noise,
    "build-bank": cmd_build_bank,
    "corrupt": cmd_corrupt,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "similarity": cmd_similarity,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
    "viz-activations": cmd_viz_activations,
}


def run(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage())
        _COMMANDS[args.command](args)
        return 0
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:
        # argparse --help exits 0; map anything else to a usage error
        return 0 if exc.code in (0, None) else 1
    except (PlrError, OSError, ValueError, KeyError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
