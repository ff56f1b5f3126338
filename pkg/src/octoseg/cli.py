"""Command-line entry point orchestrating the full pipeline.

Exit codes: 0 success, 1 usage error, 2 runtime error. Every subcommand
writes its outputs atomically and drops a `<command>-run.json`
reproducibility log (config snapshot, arguments, seeds, output hashes)
next to its primary output.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config, parse_value
from .data import (
    DatasetManifest,
    LabelMask,
    ManifestEntry,
    atomic_write_text,
    load_entry,
    load_image,
    load_manifest,
    load_mask,
    save_image,
    save_manifest,
    save_mask,
)
from .errors import OctosegError
from .metrics import cohen_kappa, confusion, iou
from .patching import PatchGeometry, PatchSet, extract_patches, filter_background
from .phantom import PhantomSpec, generate_healing_series, generate_phantom
from .preprocess import despeckle, normalize
from .quantify import healing_curve, wound_extent

_USAGE_EXIT = 1
_RUNTIME_EXIT = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits with code 2 on usage errors; the contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(_USAGE_EXIT)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _jsonable(value):
    if value is None or isinstance(value, (str, int, float, bool)):
        return value
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    return str(value)


def _write_run_log(where: Path, command: str, cfg: RunConfig, args: dict,
                   outputs: list) -> None:
    where.mkdir(parents=True, exist_ok=True)
    log = {
        "tool": f"octoseg {__version__}",
        "command": command,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "arguments": {k: _jsonable(v) for k, v in args.items()
                      if not callable(v)},
        "config": cfg.snapshot(),
        "outputs": {
            str(p): _sha256(Path(p)) for p in outputs if Path(p).is_file()
        },
    }
    atomic_write_text(where / f"{command}-run.json", json.dumps(log, indent=2) + "\n")


def _kv_pair(text: str) -> str:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return text


def _config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for item in getattr(args, "set", None) or []:
        key, _, value = item.partition("=")
        overrides[key.strip()] = parse_value(key.strip(), value)
    return cfg.updated(**overrides)


def _spacing_sidecar(path: Path, cfg: RunConfig) -> None:
    atomic_write_text(
        Path(str(path) + ".meta"),
        f"axial_um_per_px = {cfg.axial_um_per_px}\n"
        f"lateral_um_per_px = {cfg.lateral_um_per_px}\n",
    )


def _phantom_spec(cfg: RunConfig, seed: int, halfwidth: float | None = None) -> PhantomSpec:
    return PhantomSpec(
        height_px=cfg.height_px,
        width_px=cfg.width_px,
        layer_mean_thickness_px=cfg.layer_mean_thickness_px,
        boundary_wobble_px=cfg.boundary_wobble_px,
        layer_mean_intensity=cfg.layer_mean_intensity,
        speckle_shape=cfg.speckle_shape,
        wound_center_frac=cfg.wound_center_frac,
        wound_halfwidth_frac=cfg.wound_halfwidth_frac if halfwidth is None else halfwidth,
        seed=seed,
        top_margin_px=cfg.top_margin_px,
    )


def _cmd_phantom(args) -> int:
    cfg = _config_from_args(args)
    out = Path(args.out_dir)
    img_dir = out / "images"
    mask_dir = out / "masks"
    img_dir.mkdir(parents=True, exist_ok=True)
    mask_dir.mkdir(parents=True, exist_ok=True)
    halfwidths = [float(h) for h in args.halfwidths.split(",")] if args.halfwidths else None
    entries = []
    outputs = []

    def emit(img, mask, subject, day):
        stem = f"{subject}_d{day:02d}"
        img_path = img_dir / f"{stem}.png"
        mask_path = mask_dir / f"{stem}.png"
        save_image(img, img_path)
        _spacing_sidecar(img_path, cfg)
        save_mask(mask, mask_path)
        entries.append(ManifestEntry(img_path, mask_path, subject, day))
        outputs.extend([img_path, mask_path])

    if halfwidths:
        for s in range(args.count):
            base_seed = cfg.seed + s * len(halfwidths)
            base = _phantom_spec(cfg, base_seed)
            subject = f"subj{s:03d}"
            for img, mask, day in generate_healing_series(base, halfwidths):
                emit(img, mask, subject, day)
    else:
        for s in range(args.count):
            spec = _phantom_spec(cfg, cfg.seed + s)
            img, mask = generate_phantom(spec)
            emit(img, mask, f"subj{s:03d}", 0)
    manifest_path = out / "manifest.tsv"
    save_manifest(DatasetManifest(entries), manifest_path)
    outputs.append(manifest_path)
    _write_run_log(out, "phantom", cfg, vars(args) | {"halfwidths": halfwidths}, outputs)
    print(f"wrote {len(entries)} phantom pairs under {out}")
    return 0


def _cmd_preprocess(args) -> int:
    cfg = _config_from_args(args)
    cfg = cfg.updated(kernel_px=args.kernel, passes=args.passes)
    img = load_image(args.image)
    result = normalize(despeckle(img, kernel_px=cfg.kernel_px, passes=cfg.passes))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_image(result, out)
    atomic_write_text(
        Path(str(out) + ".meta"),
        f"axial_um_per_px = {img.axial_um_per_px}\n"
        f"lateral_um_per_px = {img.lateral_um_per_px}\n",
    )
    _write_run_log(out.parent, "preprocess", cfg, vars(args), [out])
    print(f"wrote {out}")
    return 0


def _cmd_patchify(args) -> int:
    cfg = _config_from_args(args)
    manifest = load_manifest(args.manifest)
    out = Path(args.out_dir)
    img_dir = out / "patches"
    mask_dir = out / "patch_masks"
    img_dir.mkdir(parents=True, exist_ok=True)
    mask_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    index_lines = []
    n_raw = 0
    for entry in manifest:
        img, mask = load_entry(entry)
        # mirror inference-time preprocessing so patches match what
        # predict feeds the network (set passes=0 for already-clean scans)
        img = normalize(despeckle(img, cfg.kernel_px, cfg.passes))
        ps = extract_patches(img, mask, cfg.patch_px, cfg.stride_px)
        n_raw += len(ps)
        kept = filter_background(ps, cfg.min_unique)
        src = entry.image_path.stem
        for tile, mtile, geom in kept:
            stem = f"{src}_r{geom.row0:04d}_c{geom.col0:04d}"
            ipath = img_dir / f"{stem}.png"
            mpath = mask_dir / f"{stem}.png"
            save_image(img.with_pixels(tile), ipath)
            save_mask(LabelMask(mtile), mpath)
            entries.append(ManifestEntry(ipath, mpath, entry.subject_id, entry.day))
            index_lines.append(f"{src}\t{geom.row0}\t{geom.col0}\t{geom.patch_px}")
    manifest_path = out / "manifest.tsv"
    save_manifest(DatasetManifest(entries), manifest_path)
    atomic_write_text(out / "index.tsv", "\n".join(index_lines) + "\n")
    _write_run_log(out, "patchify", cfg, vars(args),
                   [manifest_path, out / "index.tsv"])
    print(f"kept {len(entries)} of {n_raw} patches -> {out}")
    return 0


def _load_patchset(manifest_path: Path, cfg: RunConfig) -> PatchSet:
    """Rebuild a PatchSet from a patchify output directory, or patchify
    full frames on the fly when the manifest points at whole scans."""
    manifest = load_manifest(manifest_path)
    index = Path(manifest_path).parent / "index.tsv"
    if index.is_file():
        geoms = []
        for line in index.read_text().splitlines():
            if not line.strip():
                continue
            src, r0, c0, ppx = line.split("\t")
            geoms.append(PatchGeometry(src, int(r0), int(c0), int(ppx)))
        if len(geoms) != len(manifest):
            raise OctosegError(
                f"index.tsv lists {len(geoms)} patches but the manifest has "
                f"{len(manifest)} entries")
        patches = []
        for entry, geom in zip(manifest, geoms):
            img, mask = load_entry(entry)
            patches.append((img.pixels, mask.labels, geom))
        return PatchSet(patches, geoms[0].patch_px if geoms else cfg.patch_px,
                        cfg.stride_px)
    patches = []
    for entry in manifest:
        img, mask = load_entry(entry)
        prepped = normalize(despeckle(img, cfg.kernel_px, cfg.passes))
        ps = extract_patches(prepped, mask, cfg.patch_px, cfg.stride_px)
        patches.extend(ps.patches)
    return PatchSet(patches, cfg.patch_px, cfg.stride_px)


def _cmd_train(args) -> int:
    import torch

    from .segnet import ModelSpec, build_model, checkpoint_name, save_checkpoint
    from .training import Hyperparams, train

    cfg = _config_from_args(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.set_num_threads(args.threads)
    torch.manual_seed(cfg.split_seed)
    data = filter_background(_load_patchset(Path(args.manifest), cfg), cfg.min_unique)
    hp = Hyperparams(
        learning_rate=cfg.learning_rate,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        optimizer=cfg.optimizer,
        loss=cfg.loss,
        val_fraction=cfg.val_fraction,
        split_seed=cfg.split_seed,
    )
    spec = ModelSpec(args.arch, encoder_pretrained=args.pretrained)
    model = build_model(spec)
    model, history = train(model, data, hp, split_by_image=args.split_by_image)
    ckpt = out / checkpoint_name(args.arch)
    save_checkpoint(model, spec, ckpt)
    hist_path = out / "history.csv"
    history.to_csv(hist_path)
    _write_run_log(out, "train", cfg, vars(args), [ckpt, hist_path])
    best = history.val_mean_iou[history.best_epoch] if history.epochs_run() else float("nan")
    print(f"trained {args.arch}: best val mIoU {best:.4f} "
          f"(epoch {history.best_epoch}) -> {ckpt}")
    return 0


def _cmd_predict(args) -> int:
    from .segnet import argmax_mask, load_checkpoint, predict_probs

    cfg = _config_from_args(args)
    model, spec = load_checkpoint(args.model)
    img = load_image(args.image)
    pm = predict_probs(model, img, cfg.patch_px, cfg.stride_px,
                       kernel_px=cfg.kernel_px, passes=cfg.passes)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_mask(argmax_mask(pm), out)
    outputs = [out]
    if args.probs:
        probs_path = Path(args.probs)
        tmp = probs_path.with_name(probs_path.name + ".tmp.npz")
        np.savez_compressed(tmp, probs=pm.probs)
        tmp.replace(probs_path)
        outputs.append(probs_path)
    _write_run_log(out.parent, "predict", cfg,
                   vars(args) | {"arch": spec.arch, "model_sha256": _sha256(Path(args.model))},
                   outputs)
    print(f"wrote {out}")
    return 0


def _cmd_ensemble(args) -> int:
    from .ensembles import EnsembleModel, EnsembleWeights, ensemble_predict, optimize_weights
    from .segnet import argmax_mask, load_checkpoint

    cfg = _config_from_args(args)
    loaded = [load_checkpoint(p) for p in args.models]
    members = [m for m, _ in loaded]
    if args.optimize:
        if not args.val:
            raise OctosegError("--optimize requires --val <manifest>")
        val = load_manifest(args.val)
        weights = optimize_weights(members, val, step=args.step,
                                   patch_px=cfg.patch_px, stride_px=cfg.stride_px,
                                   kernel_px=cfg.kernel_px, passes=cfg.passes)
    elif args.weights:
        weights = EnsembleWeights(tuple(float(w) for w in args.weights.split(",")))
    else:
        weights = EnsembleWeights.uniform(len(members))
    print("weights: " + ", ".join(f"{w:.3f}" for w in weights.weights))
    outputs = []
    out_dir = Path(".")
    if args.out_weights:
        wpath = Path(args.out_weights)
        wpath.parent.mkdir(parents=True, exist_ok=True)
        atomic_write_text(wpath, ",".join(repr(w) for w in weights.weights) + "\n")
        outputs.append(wpath)
        out_dir = wpath.parent
    if args.image:
        if not args.out:
            raise OctosegError("--image requires --out for the predicted mask")
        em = EnsembleModel(members, weights)
        pm = ensemble_predict(em, load_image(args.image), cfg.patch_px, cfg.stride_px,
                              kernel_px=cfg.kernel_px, passes=cfg.passes)
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        save_mask(argmax_mask(pm), out)
        outputs.append(out)
        out_dir = out.parent
    hashes = {m: _sha256(Path(m)) for m in args.models}
    _write_run_log(out_dir, "ensemble", cfg,
                   vars(args) | {"resolved_weights": list(weights.weights),
                                 "model_sha256": hashes}, outputs)
    return 0


def _cmd_eval(args) -> int:
    pred_dir = Path(args.pred_dir)
    gt_dir = Path(args.gt_dir)
    names = sorted(p.name for p in pred_dir.glob("*.png"))
    pairs = [(pred_dir / n, gt_dir / n) for n in names if (gt_dir / n).is_file()]
    if not pairs:
        raise OctosegError(f"no matching mask pairs between {pred_dir} and {gt_dir}")
    rows = []
    total_cm = None
    per_image_means = []
    for pred_path, gt_path in pairs:
        pred = load_mask(pred_path)
        gt = load_mask(gt_path)
        cm = confusion(pred, gt)
        rep = iou(cm)
        kappa = cohen_kappa(pred, gt)
        rows.append([pred_path.name, *(f"{v:.6f}" for v in rep.per_class),
                     f"{rep.mean_iou:.6f}", f"{kappa:.6f}"])
        per_image_means.append(rep.mean_iou)
        total_cm = cm if total_cm is None else total_cm + cm
    if args.per_image_mean:
        agg_miou = float(np.mean(per_image_means))
    else:
        agg_miou = iou(total_cm).mean_iou
    agg = iou(total_cm)
    rows.append(["aggregate", *(f"{v:.6f}" for v in agg.per_class),
                 f"{agg_miou:.6f}", ""])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    header = ["image", "iou_background", "iou_epidermis", "iou_dermis",
              "iou_subcutaneous", "mean_iou", "kappa"]
    _write_csv(out, header, rows)
    _write_run_log(out.parent, "eval", RunConfig(), vars(args), [out])
    print(f"evaluated {len(pairs)} pairs; aggregate mean IoU {agg_miou:.4f}")
    return 0


def _cmd_quantify(args) -> int:
    masks = [Path(p) for p in args.masks.split(",")]
    days = [int(d) for d in args.days.split(",")]
    if len(masks) != len(days):
        raise OctosegError(f"{len(masks)} masks but {len(days)} days")
    axial, lateral = (float(v) for v in args.spacing.split(","))
    series = []
    for day, path in zip(days, masks):
        extent = wound_extent(load_mask(path), (axial, lateral), args.min_gap)
        series.append((day, extent))
    curve = healing_curve(series)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = [[str(d), f"{area:.2f}", f"{closure:.6f}"] for d, area, closure in curve.points]
    _write_csv(out, ["day", "area_um2", "closure_frac"], rows)
    _write_run_log(out.parent, "quantify", RunConfig(),
                   vars(args) | {"axial": axial, "lateral": lateral}, [out])
    print(f"wrote {out}")
    return 0


def _write_csv(path: Path, header, rows) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    tmp.replace(path)


def _save_figure(fig, out: Path) -> None:
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(out.name + ".tmp.png")
    fig.savefig(tmp, dpi=120, bbox_inches="tight")
    tmp.replace(out)


def _cmd_plot_progression(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with open(args.csv, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        points = [(int(r["day"]), float(r["closure_frac"])) for r in reader]
    if not points:
        raise OctosegError(f"{args.csv} holds no data rows")
    days = [d for d, _ in points]
    closure = [100.0 * c for _, c in points]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(days, closure, marker="o", color="tab:red")
    ax.set_xlabel("day")
    ax.set_ylabel("wound closure (%)")
    ax.set_ylim(-2, 102)
    ax.grid(alpha=0.3)
    ax.set_title("Healing progression")
    _save_figure(fig, Path(args.out))
    plt.close(fig)
    print(f"wrote {args.out}")
    return 0


def _cmd_plot_loss(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with open(args.csv, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = [(int(r["epoch"]), float(r["train_loss"]), float(r["val_loss"]),
                 float(r["val_mean_iou"])) for r in reader]
    if not rows:
        raise OctosegError(f"{args.csv} holds no data rows")
    epochs = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(epochs, [r[1] for r in rows], label="train loss")
    ax.plot(epochs, [r[2] for r in rows], label="val loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy")
    ax2 = ax.twinx()
    ax2.plot(epochs, [r[3] for r in rows], color="tab:green", linestyle="--",
             label="val mean IoU")
    ax2.set_ylabel("mean IoU")
    ax.grid(alpha=0.3)
    ax.legend(loc="upper right")
    _save_figure(fig, Path(args.out))
    plt.close(fig)
    print(f"wrote {args.out}")
    return 0


def _add_config_args(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", type=_kv_pair,
                   help="override one config key (repeatable)")


def build_parser() -> _Parser:
    parser = _Parser(prog="octoseg",
                     description="Skin-layer OCT segmentation pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("phantom", help="generate synthetic B-scan/mask pairs")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, default=1,
                   help="number of phantoms (or series, with --halfwidths)")
    p.add_argument("--halfwidths",
                   help="comma list of wound halfwidth fractions; one healing "
                        "series per subject instead of single frames")
    _add_config_args(p)
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("preprocess", help="despeckle and normalize one scan")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--passes", type=int, default=1)
    _add_config_args(p)
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("patchify", help="cut manifest scans into patches")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    _add_config_args(p)
    p.set_defaults(func=_cmd_patchify)

    p = sub.add_parser("train", help="train one architecture on patches")
    p.add_argument("--manifest", required=True,
                   help="patch manifest from `patchify`, or a manifest of "
                        "full scans to patchify on the fly")
    p.add_argument("--arch", default="base_unet")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--pretrained", action="store_true",
                   help="initialize the encoder from natural-image weights "
                        "when available")
    p.add_argument("--split-by-image", action="store_true")
    p.add_argument("--threads", type=int, default=1)
    _add_config_args(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="segment one scan with a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--probs", help="also write the probability map (.npz)")
    _add_config_args(p)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("ensemble", help="combine checkpoints, optionally "
                                        "optimizing weights on a validation manifest")
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--weights", help="comma list, e.g. 0.3,0.2,0.5")
    p.add_argument("--optimize", action="store_true")
    p.add_argument("--val", help="validation manifest for --optimize")
    p.add_argument("--step", type=float, default=0.1)
    p.add_argument("--image", help="scan to segment with the ensemble")
    p.add_argument("--out", help="mask output for --image")
    p.add_argument("--out-weights", help="write resolved weights to this file")
    _add_config_args(p)
    p.set_defaults(func=_cmd_ensemble)

    p = sub.add_parser("eval", help="score predicted masks against ground truth")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--per-image-mean", action="store_true",
                   help="aggregate as the mean of per-image mean IoUs instead "
                        "of global confusion counts")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("quantify", help="wound area and closure across days")
    p.add_argument("--masks", required=True, help="comma list of mask files")
    p.add_argument("--days", required=True, help="comma list of day numbers")
    p.add_argument("--spacing", default="10,25", help="axial,lateral um per px")
    p.add_argument("--min-gap", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_quantify)

    p = sub.add_parser("plot-progression", help="render a healing curve PNG")
    p.add_argument("csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plot_progression)

    p = sub.add_parser("plot-loss", help="render training curves PNG")
    p.add_argument("csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plot_loss)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "command", None):
        parser.print_help()
        return _USAGE_EXIT
    try:
        return args.func(args)
    except OctosegError as exc:
        print(f"octoseg {args.command}: {exc}", file=sys.stderr)
        return _RUNTIME_EXIT
    except (OSError, ValueError, KeyError) as exc:
        print(f"octoseg {args.command}: {exc}", file=sys.stderr)
        return _RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
