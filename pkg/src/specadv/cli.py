"""Command-line front end: train, attack, transfer, ablate, saliency.

Perturbation magnitudes (--eps, --alpha, --sigma) are given on the
familiar 0-255 pixel scale and divided by 255 internally, so published
settings can be typed verbatim.  Every subcommand is deterministic given
its input files, flags, and --seed; report paths also render a PNG
figure next to the delimited output unless --no-fig is passed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import data, evaluate, figures, models, saliency
from .attacks import AttackConfig, Ensemble, craft_batch
from .spectral import FULL_IMAGE, SpectrumTransformParams

_TRAIN_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte")
_TEST_FILES = ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def _add_data_args(p: argparse.ArgumentParser, default_split: str) -> None:
    p.add_argument("--data", help="directory holding IDX files with standard names")
    p.add_argument("--images", help="explicit IDX image file (overrides --data)")
    p.add_argument("--labels", help="explicit IDX label file (overrides --data)")
    p.add_argument(
        "--split",
        choices=("train", "test"),
        default=default_split,
        help=f"which standard file pair to read from --data (default {default_split})",
    )
    p.add_argument("--limit", type=int, help="use only the first N images")


def _load_dataset(args) -> data.Dataset:
    if args.images and args.labels:
        ds = data.load_idx(args.images, args.labels, split=args.split)
    elif args.data:
        names = _TRAIN_FILES if args.split == "train" else _TEST_FILES
        root = Path(args.data)
        ds = data.load_idx(root / names[0], root / names[1], split=args.split)
    else:
        raise SystemExit("error: provide --data DIR or both --images and --labels")
    if args.limit is not None:
        ds = ds.subset(args.limit)
    return ds


def _add_attack_args(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--attack",
        choices=("ifgsm", "mi", "s2i"),
        default="ifgsm",
        help="base attack; compose more with --mi/--di/--ti/--si",
    )
    p.add_argument("--mi", action="store_true", help="add momentum accumulation")
    p.add_argument("--di", action="store_true", help="add random resize-and-pad input diversity")
    p.add_argument("--ti", action="store_true", help="add gradient smoothing by a pyramid kernel")
    p.add_argument("--si", action="store_true", help="add intensity-halving scale copies")
    p.add_argument("--eps", type=float, default=16.0, help="L-inf budget, 0-255 scale")
    p.add_argument("--iters", type=int, default=10, help="attack iterations")
    p.add_argument("--alpha", type=float, help="step size, 0-255 scale (default eps/iters)")
    p.add_argument("--mu", type=float, default=1.0, help="momentum decay factor")
    p.add_argument("--p", type=float, default=0.5, help="input-diversity probability")
    p.add_argument("--k", type=int, default=7, help="smoothing kernel length (odd)")
    p.add_argument("--m1", type=int, default=5, help="number of halved-intensity copies")
    p.add_argument("--n", type=int, default=20, help="spectrum transform draws per step")
    p.add_argument("--rho", type=float, default=0.5, help="uniform mask half-width")
    p.add_argument("--sigma", type=float, default=16.0, help="pixel noise std, 0-255 scale")
    p.add_argument("--block", default="full", help="DCT block size, or 'full'")
    p.add_argument(
        "--through-transform",
        action="store_true",
        help="push gradients back through the frozen spectrum transform",
    )


def _parse_block(token: str):
    return FULL_IMAGE if str(token).lower() in ("full", "none") else int(token)


def _attack_config(args) -> AttackConfig:
    augment = set()
    if args.attack == "mi":
        augment.add("mi")
    if args.attack == "s2i":
        augment.add("s2i")
    for name in ("mi", "di", "ti", "si"):
        if getattr(args, name):
            augment.add(name)
    spectrum = None
    if "s2i" in augment:
        spectrum = SpectrumTransformParams(
            sigma=args.sigma / 255.0,
            rho=args.rho,
            n_transforms=args.n,
            block_size=_parse_block(args.block),
        )
    return AttackConfig(
        epsilon=args.eps / 255.0,
        iterations=args.iters,
        alpha=None if args.alpha is None else args.alpha / 255.0,
        momentum=args.mu,
        di_probability=args.p,
        ti_kernel_length=args.k,
        si_copies=args.m1,
        spectrum=spectrum,
        augmentations=frozenset(augment),
        grad_through_transform=args.through_transform,
    )


def _load_substitute(token: str):
    """A weight file path, or a comma list for an equal-weight ensemble."""
    paths = [t for t in token.split(",") if t]
    loaded = [models.load_weights(p) for p in paths]
    if len(loaded) == 1:
        return Path(paths[0]).stem, loaded[0]
    ensemble = Ensemble(loaded, np.full(len(loaded), 1.0 / len(loaded)))
    return "+".join(Path(p).stem for p in paths), ensemble


def _fig_path(out: str) -> Path:
    return Path(out).with_suffix(".png")


# ---- subcommands ------------------------------------------------------------


def _cmd_train(args) -> int:
    ds = _load_dataset(args)
    h, w, c = ds.images.shape[1:]
    n_classes = int(ds.labels.max()) + 1
    model = models.build(args.arch, (h, w, c), n_classes, seed=args.seed)
    config = models.TrainConfig(
        learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs, seed=args.seed
    )
    _, log = models.train(model, ds, config)
    for entry in log:
        print(
            f"epoch {entry['epoch']}: loss {entry['loss']:.4f} "
            f"accuracy {entry['accuracy']:.4f}"
        )
    models.save_weights(model, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_attack(args) -> int:
    sub_id, substitute = _load_substitute(args.sub)
    ds = _load_dataset(args)
    config = _attack_config(args)
    results = craft_batch(substitute, ds.images, ds.labels, config, args.seed)
    x_adv = np.stack([r.x_adv for r in results])
    if isinstance(substitute, Ensemble):
        clean = substitute.predict(ds.images).argmax(axis=1)
        adv = substitute.predict(x_adv).argmax(axis=1)
    else:
        clean = models.predict(substitute, ds.images).argmax(axis=1)
        adv = models.predict(substitute, x_adv).argmax(axis=1)
    csv = evaluate.attack_csv(range(len(ds)), ds.labels, clean, adv, results)
    evaluate.write_text(args.out, csv)
    print(f"wrote {args.out}")
    if not args.no_fig:
        traces = np.stack([r.loss_trace for r in results])
        figures.loss_trace_figure(traces, _fig_path(args.out))
        print(f"wrote {_fig_path(args.out)}")
    rate = np.mean([r.success for r in results])
    print(f"substitute {sub_id}: success rate {rate:.4f} over {len(ds)} images")
    return 0


def _load_victims(token: str) -> list[tuple[str, models.Model]]:
    return [(Path(p).stem, models.load_weights(p)) for p in token.split(",") if p]


def _cmd_transfer(args) -> int:
    sub_id, substitute = _load_substitute(args.sub)
    victims = _load_victims(args.victims)
    ds = _load_dataset(args)
    config = _attack_config(args)
    report = evaluate.evaluate_transfer(sub_id, substitute, victims, ds, config, args.seed)
    evaluate.write_text(args.out, evaluate.transfer_csv(report))
    print(f"wrote {args.out}")
    if not args.no_fig:
        figures.transfer_figure(report, _fig_path(args.out))
        print(f"wrote {_fig_path(args.out)}")
    for r in report.results:
        star = "*" if r.white_box else ""
        print(f"{r.victim_id}{star}: {r.success_rate:.4f} ({r.n_success}/{r.n_evaluated})")
    return 0


def _parse_grid(param: str, tokens: list[str]):
    if param == "sigma":
        return [float(t) / 255.0 for t in tokens]
    if param == "rho":
        return [float(t) for t in tokens]
    if param == "n_transforms":
        return [int(t) for t in tokens]
    return [_parse_block(t) for t in tokens]


def _cmd_ablate(args) -> int:
    sub_id, substitute = _load_substitute(args.sub)
    victims = _load_victims(args.victims)
    ds = _load_dataset(args)
    config = _attack_config(args)
    tokens = [t for t in args.grid.split(",") if t]
    grid = _parse_grid(args.param, tokens)
    points = evaluate.ablate(
        args.param, grid, sub_id, substitute, victims, ds, config, args.seed, labels=tokens
    )
    evaluate.write_text(args.out, evaluate.sweep_csv(points))
    print(f"wrote {args.out}")
    if not args.no_fig:
        figures.sweep_figure(points, _fig_path(args.out))
        print(f"wrote {_fig_path(args.out)}")
    for pt in points:
        print(f"{args.param}={pt.label}: mean rate {pt.report.mean_rate:.4f}")
    return 0


def _cmd_saliency(args) -> int:
    model = models.load_weights(args.model)
    ds = _load_dataset(args)
    params = None
    if args.n > 1 or args.sigma > 0 or args.rho > 0:
        params = SpectrumTransformParams(
            sigma=args.sigma / 255.0,
            rho=args.rho,
            n_transforms=max(args.n, 1),
            block_size=_parse_block(args.block),
        )
    if args.domain == "spatial":
        total = np.zeros(ds.images.shape[1:])
        for i in range(len(ds)):
            total += np.abs(
                saliency.spatial_saliency(model, ds.images[i], int(ds.labels[i])).values
            )
        avg = saliency.SaliencyMap(total / len(ds), model.arch_id, "averaged")
    else:
        avg = saliency.average_saliency(
            model, ds.images, ds.labels, params, n_draws=args.n, seed=args.seed
        )
    saliency.export_pgm(avg, args.out)
    print(f"wrote {args.out}")
    if not args.no_fig:
        tag = f"{model.arch_id} ({args.domain})"
        figures.saliency_figure({tag: avg.values}, _fig_path(args.out))
        print(f"wrote {_fig_path(args.out)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specadv",
        description="Craft and evaluate transferable adversarial examples "
        "with frequency-domain model augmentation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and save its weights")
    p.add_argument("--arch", choices=models.ARCHITECTURES, required=True)
    _add_data_args(p, default_split="train")
    p.add_argument("--out", required=True, help="weight file to write")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch", type=int, default=64)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("attack", help="craft adversarial examples on one model")
    p.add_argument("--sub", required=True, help="substitute weight file(s), comma list = ensemble")
    _add_data_args(p, default_split="test")
    _add_attack_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="per-image CSV to write")
    p.add_argument("--no-fig", action="store_true")
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("transfer", help="craft on a substitute, score victims")
    p.add_argument("--sub", required=True, help="substitute weight file(s), comma list = ensemble")
    p.add_argument("--victims", required=True, help="comma list of victim weight files")
    _add_data_args(p, default_split="test")
    _add_attack_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="transfer CSV to write")
    p.add_argument("--no-fig", action="store_true")
    p.set_defaults(func=_cmd_transfer)

    p = sub.add_parser("ablate", help="sweep one spectrum parameter")
    p.add_argument("--param", choices=evaluate.SWEEP_PARAMS, required=True)
    p.add_argument("--grid", required=True, help="comma list of parameter values")
    p.add_argument("--sub", required=True)
    p.add_argument("--victims", required=True)
    _add_data_args(p, default_split="test")
    _add_attack_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="sweep CSV to write")
    p.add_argument("--no-fig", action="store_true")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("saliency", help="export an averaged saliency map")
    p.add_argument("--model", required=True, help="weight file to inspect")
    _add_data_args(p, default_split="test")
    p.add_argument("--domain", choices=("spectrum", "spatial"), default="spectrum")
    p.add_argument("--n", type=int, default=1, help="transform draws per image")
    p.add_argument("--sigma", type=float, default=0.0, help="pixel noise std, 0-255 scale")
    p.add_argument("--rho", type=float, default=0.0, help="uniform mask half-width")
    p.add_argument("--block", default="full", help="DCT block size, or 'full'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="PGM file to write")
    p.add_argument("--no-fig", action="store_true")
    p.set_defaults(func=_cmd_saliency)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        ValueError,
        KeyError,
        OSError,
        models.WeightFormatError,
        data.IdxError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
