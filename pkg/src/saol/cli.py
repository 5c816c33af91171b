"""Command line entry points: train, eval, wsol, and visualize.

Configuration comes from a flat ``key = value`` file (``#`` comments and
blank lines allowed); every key has a default, so a missing or partial file
is fine. Unknown keys are rejected. Exit codes: 0 success, 2 configuration
or usage problem, 3 missing or malformed data, 4 unreadable checkpoint.

Keys:
  data.source        synthetic | cifar10
  data.dir           cifar10 batch directory
  data.num_classes   synthetic class count (2..5)
  data.image_size    synthetic image side
  data.train_size    synthetic training-sample count
  data.val_size      synthetic held-out-sample count
  data.seed          synthetic generation seed
  data.augment       pad-crop-flip on training batches (default: on for
                     cifar10, off for synthetic)
  model.channels     backbone stage widths, e.g. 16,32,64
  model.strides      per-stage strides, e.g. 1,2,2
  model.layers_per_block
  model.width        global width multiplier
  model.fused_blocks "all" or 0-based stage list, e.g. 1,2
  model.out_hw       output grid, e.g. 8,8 (default: last stage's)
  model.proj_channels / model.attn_channels
  model.with_mask / model.with_gapfc
  train.epochs train.batch_size train.lr train.momentum train.weight_decay
  train.cutmix train.cutmix_alpha train.ss1 train.ss2 train.sd train.beta
  train.w_sl train.w_ss1 train.w_ss2 train.w_sd   loss-part weights
  train.stop_after   pause the run at this epoch boundary
  train.seed
  wsol.threshold     score-map binarization level
  wsol.upsample      resize maps to image resolution before boxing
  wsol.samples       per-sample files exported by wsol/visualize
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .autodiff import no_grad
from .backbone import BackboneConfig
from .checkpoint import CheckpointError, load_state
from .data import DataError, load_cifar10, make_shapes
from .figures import heatmap_panel, training_curves
from .head import HeadConfig, SaolClassifier
from .train import TrainConfig, evaluate, train
from .wsol import (
    class_score_map,
    extract_box,
    iou,
    loc_accuracy,
    min_max_normalize,
    write_map_csv,
    write_pgm,
)


class ConfigError(Exception):
    """Bad configuration file or unusable option combination."""


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(part.strip()) for part in text.split(","))


def _pair(text: str) -> tuple[int, int]:
    parts = _ints(text)
    if len(parts) != 2:
        raise ValueError(f"expected two integers, got {text!r}")
    return parts


def _fused(text: str):
    return None if text.lower() == "all" else _ints(text)


def _source(text: str) -> str:
    if text not in ("synthetic", "cifar10"):
        raise ValueError(f"unknown data source {text!r}")
    return text


_SCHEMA = {
    "data.source": (_source, "synthetic"),
    "data.dir": (str, os.path.join("data", "cifar-10-batches-bin")),
    "data.num_classes": (int, 3),
    "data.image_size": (int, 32),
    "data.train_size": (int, 2000),
    "data.val_size": (int, 500),
    "data.seed": (int, 0),
    "data.augment": (_bool, None),
    "model.channels": (_ints, (16, 32, 64)),
    "model.strides": (_ints, (1, 2, 2)),
    "model.layers_per_block": (int, 2),
    "model.width": (int, 1),
    "model.fused_blocks": (_fused, None),
    "model.out_hw": (_pair, None),
    "model.proj_channels": (int, None),
    "model.attn_channels": (int, None),
    "model.with_mask": (_bool, True),
    "model.with_gapfc": (_bool, True),
    "train.epochs": (int, 30),
    "train.batch_size": (int, 64),
    "train.lr": (float, 0.1),
    "train.momentum": (float, 0.9),
    "train.weight_decay": (float, 5e-4),
    "train.cutmix": (_bool, True),
    "train.cutmix_alpha": (float, 1.0),
    "train.ss1": (_bool, True),
    "train.ss2": (_bool, True),
    "train.sd": (_bool, True),
    "train.beta": (float, 0.5),
    "train.w_sl": (float, 1.0),
    "train.w_ss1": (float, 1.0),
    "train.w_ss2": (float, 1.0),
    "train.w_sd": (float, 1.0),
    "train.stop_after": (int, None),
    "train.seed": (int, 0),
    "wsol.threshold": (float, 0.2),
    "wsol.upsample": (_bool, False),
    "wsol.samples": (int, 12),
}


def parse_config(path: str | None) -> dict:
    """Defaults overlaid with the flat ``key = value`` file at ``path``."""
    cfg = {key: default for key, (_, default) in _SCHEMA.items()}
    if path is None:
        return cfg
    if not os.path.exists(path):
        raise ConfigError(f"no such config file: {path}")
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in _SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            parse = _SCHEMA[key][0]
            try:
                cfg[key] = parse(value)
            except ValueError as e:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {e}") from e
    return cfg


def _load_split(cfg: dict, *, train_split: bool):
    """(images, labels, boxes or None, num_classes) for one split."""
    if cfg["data.source"] == "synthetic":
        total = cfg["data.train_size"] + cfg["data.val_size"]
        try:
            ds = make_shapes(
                total,
                num_classes=cfg["data.num_classes"],
                image_size=cfg["data.image_size"],
                seed=cfg["data.seed"],
            )
        except ValueError as e:
            raise ConfigError(str(e)) from e
        cut = cfg["data.train_size"]
        sl = slice(0, cut) if train_split else slice(cut, total)
        return ds.images[sl], ds.labels[sl], ds.boxes[sl], cfg["data.num_classes"]
    images, labels = load_cifar10(cfg["data.dir"], train=train_split)
    return images, labels, None, 10


def _build_model(cfg: dict, num_classes: int, seed: int) -> SaolClassifier:
    try:
        backbone = BackboneConfig(
            channels=cfg["model.channels"],
            strides=cfg["model.strides"],
            layers_per_block=cfg["model.layers_per_block"],
            width=cfg["model.width"],
        )
        head = HeadConfig(
            num_classes=num_classes,
            fused_blocks=cfg["model.fused_blocks"],
            out_hw=cfg["model.out_hw"],
            proj_channels=cfg["model.proj_channels"],
            attn_channels=cfg["model.attn_channels"],
            with_mask=cfg["model.with_mask"],
            with_gapfc=cfg["model.with_gapfc"],
        )
        return SaolClassifier(backbone, head, seed=seed, dtype=np.float32)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(
            epochs=cfg["train.epochs"],
            batch_size=cfg["train.batch_size"],
            lr=cfg["train.lr"],
            momentum=cfg["train.momentum"],
            weight_decay=cfg["train.weight_decay"],
            cutmix=cfg["train.cutmix"],
            cutmix_alpha=cfg["train.cutmix_alpha"],
            use_ss1=cfg["train.ss1"],
            use_ss2=cfg["train.ss2"],
            use_sd=cfg["train.sd"],
            beta=cfg["train.beta"],
            w_sl=cfg["train.w_sl"],
            w_ss1=cfg["train.w_ss1"],
            w_ss2=cfg["train.w_ss2"],
            w_sd=cfg["train.w_sd"],
            augment=(
                cfg["data.augment"]
                if cfg["data.augment"] is not None
                else cfg["data.source"] == "cifar10"
            ),
            seed=cfg["train.seed"],
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _print_rows(rows: list[tuple[str, object]], out_path: str | None = None) -> None:
    lines = ["metric,value"] + [f"{k},{v}" for k, v in rows]
    print("\n".join(lines))
    if out_path:
        with open(out_path, "w") as f:
            f.write("\n".join(lines) + "\n")


def cmd_train(args) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg["train.seed"] = args.seed
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    images, labels, _, num_classes = _load_split(cfg, train_split=True)
    val_images, val_labels, _, _ = _load_split(cfg, train_split=False)
    config = _train_config(cfg)

    start_epoch, rng, velocity = 0, None, None
    if args.checkpoint:
        model, velocity, start_epoch, rng = load_state(args.checkpoint)
        if model.head_config.num_classes != num_classes:
            raise ConfigError(
                f"checkpoint has {model.head_config.num_classes} classes, data has {num_classes}"
            )
    else:
        model = _build_model(cfg, num_classes, seed=cfg["train.seed"])

    metrics_path = os.path.join(out_dir, "metrics.csv")
    scores = train(
        model,
        images,
        labels,
        config,
        val_images=val_images,
        val_labels=val_labels,
        metrics_path=metrics_path,
        checkpoint_path=os.path.join(out_dir, "model.ckpt"),
        start_epoch=start_epoch,
        rng=rng,
        velocity=velocity,
        stop_after=cfg["train.stop_after"],
        log=lambda msg: print(msg, file=sys.stderr),
    )
    training_curves(metrics_path, os.path.join(out_dir, "curves.png"))
    _print_rows(sorted(scores.items()))
    return 0


def cmd_eval(args) -> int:
    cfg = parse_config(args.config)
    model, _, _, _ = load_state(args.checkpoint)
    images, labels, _, _ = _load_split(cfg, train_split=False)
    scores = evaluate(model, images, labels, batch_size=cfg["train.batch_size"])
    if args.head == "gapfc" and "acc_gapfc" not in scores:
        raise ConfigError("this model has no pooled classifier head")
    rows = sorted(scores.items())
    if args.head:
        rows = [(k, v) for k, v in rows if k == f"acc_{args.head}"]
    out_path = os.path.join(args.out, "eval.csv") if args.out else None
    if args.out:
        os.makedirs(args.out, exist_ok=True)
    _print_rows(rows, out_path)
    return 0


def _score_maps(model, images, labels, *, head, batch_size=64):
    """Per-sample class score maps plus attention grids and predictions.

    With ``labels=None`` each sample's map follows its predicted class."""
    if head == "gapfc" and model.gapfc is None:
        raise ConfigError("this model has no pooled classifier head")
    maps, atts, preds = [], [], []
    weight = model.gapfc.weight.data if model.gapfc is not None else None
    for start in range(0, len(images), batch_size):
        xb = images[start : start + batch_size].astype(model.dtype, copy=False)
        with no_grad():
            out = model(xb)
        probs = out.gapfc_probs if head == "gapfc" else out.probs
        pred_b = probs.data.argmax(axis=1)
        yb = labels[start : start + batch_size] if labels is not None else pred_b
        maps.append(class_score_map(out, yb, head=head, gapfc_weight=weight))
        atts.append(out.attention.data[:, 0])
        preds.append(pred_b)
    return np.concatenate(maps), np.concatenate(atts), np.concatenate(preds)


def _export_samples(out_dir, count, images, atts, maps, pred_boxes, gt_boxes, titles):
    maps_dir = os.path.join(out_dir, "maps")
    panels_dir = os.path.join(out_dir, "panels")
    os.makedirs(maps_dir, exist_ok=True)
    os.makedirs(panels_dir, exist_ok=True)
    for i in range(min(count, len(images))):
        write_pgm(os.path.join(maps_dir, f"{i:03d}.pgm"), maps[i])
        write_map_csv(os.path.join(maps_dir, f"{i:03d}.csv"), maps[i])
        heatmap_panel(
            images[i],
            atts[i],
            maps[i],
            os.path.join(panels_dir, f"{i:03d}.png"),
            pred_box=pred_boxes[i],
            gt_box=None if gt_boxes is None else gt_boxes[i],
            title=titles[i],
        )


def cmd_wsol(args) -> int:
    cfg = parse_config(args.config)
    model, _, _, _ = load_state(args.checkpoint)
    images, labels, boxes, _ = _load_split(cfg, train_split=False)
    if boxes is None:
        raise ConfigError("localization scoring needs box annotations; use the synthetic source")
    maps, atts, preds = _score_maps(model, images, labels, head=args.head or "saol")
    norm = min_max_normalize(maps)
    image_hw = images.shape[2:]
    pred_boxes = np.array(
        [
            extract_box(m, image_hw, threshold=cfg["wsol.threshold"], upsample=cfg["wsol.upsample"])
            for m in norm
        ]
    )
    scores = loc_accuracy(pred_boxes, boxes, preds, labels)
    out_path = None
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        out_path = os.path.join(args.out, "wsol.csv")
        with open(os.path.join(args.out, "boxes.csv"), "w") as f:
            f.write("index,label,pred,r0,c0,r1,c1,iou\n")
            for i, (pb, gb) in enumerate(zip(pred_boxes, boxes)):
                cells = [i, labels[i], preds[i], *pb, round(iou(pb, gb), 6)]
                f.write(",".join(str(c) for c in cells) + "\n")
        titles = [f"sample {i} (class {labels[i]})" for i in range(len(labels))]
        _export_samples(
            args.out, cfg["wsol.samples"], images, atts, norm, pred_boxes, boxes, titles
        )
    _print_rows(sorted(scores.items()), out_path)
    return 0


def cmd_visualize(args) -> int:
    cfg = parse_config(args.config)
    model, _, _, _ = load_state(args.checkpoint)
    if not args.out:
        raise ConfigError("visualize needs --out for its image files")
    images, labels, boxes, _ = _load_split(cfg, train_split=False)
    count = min(cfg["wsol.samples"], len(labels))
    images, labels = images[:count], labels[:count]
    boxes = None if boxes is None else boxes[:count]
    maps, atts, preds = _score_maps(model, images, None, head=args.head or "saol")
    norm = min_max_normalize(maps)
    image_hw = images.shape[2:]
    pred_boxes = [
        extract_box(m, image_hw, threshold=cfg["wsol.threshold"], upsample=cfg["wsol.upsample"])
        for m in norm
    ]
    os.makedirs(args.out, exist_ok=True)
    titles = [
        f"sample {i}: predicted {p}, true {t}"
        for i, (p, t) in enumerate(zip(preds, labels))
    ]
    _export_samples(args.out, count, images, atts, norm, pred_boxes, boxes, titles)
    _print_rows([("samples_written", count)])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="saol",
        description="Train and inspect a spatially attentive classification head.",
    )
    sub = parser.add_subparsers(dest="command")

    def add(name, func, help_text, *, needs_checkpoint):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--out", help="output directory for reports and figures")
        p.add_argument("--seed", type=int, help="override the training seed")
        p.add_argument(
            "--head",
            choices=("saol", "gapfc"),
            help="which classifier head to score with",
        )
        p.add_argument(
            "--checkpoint",
            required=needs_checkpoint,
            help="checkpoint to evaluate or resume from",
        )
        p.set_defaults(func=func)
        return p

    add("train", cmd_train, "fit a model and write metrics, curves, and a checkpoint",
        needs_checkpoint=False)
    add("eval", cmd_eval, "top-1 accuracy of a trained model", needs_checkpoint=True)
    add("wsol", cmd_wsol, "localization accuracy from score-map boxes", needs_checkpoint=True)
    add("visualize", cmd_visualize, "attention and score-map panels", needs_checkpoint=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "func", None) is None:
        parser.print_help(sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
