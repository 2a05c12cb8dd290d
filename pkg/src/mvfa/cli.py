"""Command-line entry points.

Commands: ``train``, ``eval``, ``heatmap``, ``topk-regions``, ``verify``,
``sweep-k``, ``gen-data``.  Configs are JSON with unknown keys rejected;
tabular outputs are CSV; image outputs are binary P5/P6.  Exit codes:
0 success, 1 verification failure, 2 usage/config error, 3 runtime fault.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import verify as verify_mod
from .adacam import CamHead, cam_reference
from .backbone import BackboneConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .data import (SyntheticSpec, generate_synthetic, load_dataset, read_pnm,
                   write_pgm)
from .errors import ConfigError, DataError, MvfaError
from .model import Model
from .trainer import evaluate, metrics_to_csv, train


class RunConfig:
    """Top-level JSON config: train + backbone + data + output location."""

    KEYS = {"train", "backbone", "data", "out_dir", "num_classes"}
    BACKBONE_KEYS = {"stages", "input_side"}
    DATA_KEYS = {"root", "synthetic"}

    def __init__(self, train: TrainConfig, backbone: BackboneConfig,
                 data: dict, out_dir: str, num_classes: int | None = None):
        self.train = train
        self.backbone = backbone
        self.data = data
        self.out_dir = out_dir
        self.num_classes = num_classes

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("run config must be a JSON object")
        unknown = set(raw) - cls.KEYS
        if unknown:
            raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
        train = TrainConfig.from_dict(raw.get("train", {}))
        braw = raw.get("backbone", {})
        unknown = set(braw) - cls.BACKBONE_KEYS
        if unknown:
            raise ConfigError(f"unknown backbone keys: {sorted(unknown)}")
        backbone = BackboneConfig(
            stages=tuple(tuple(s) for s in braw.get("stages",
                                                    ((8, 3, 2), (16, 3, 2)))),
            input_side=braw.get("input_side", 64))
        data = raw.get("data", {})
        unknown = set(data) - cls.DATA_KEYS
        if unknown:
            raise ConfigError(f"unknown data keys: {sorted(unknown)}")
        if ("root" in data) == ("synthetic" in data):
            raise ConfigError("data must have exactly one of 'root' or 'synthetic'")
        if "synthetic" in data:
            data = {"synthetic": SyntheticSpec.from_dict(data["synthetic"])}
        if "out_dir" not in raw:
            raise ConfigError("run config needs an 'out_dir'")
        return cls(train, backbone, data, raw["out_dir"],
                   raw.get("num_classes"))

    def to_dict(self) -> dict:
        data = dict(self.data)
        if "synthetic" in data:
            spec = data["synthetic"]
            data["synthetic"] = {f: (list(v) if isinstance(
                (v := getattr(spec, f)), tuple) else v)
                for f in spec.__dataclass_fields__}
        out = {
            "train": self.train.to_dict(),
            "backbone": {"stages": [list(s) for s in self.backbone.stages],
                         "input_side": self.backbone.input_side},
            "data": data,
            "out_dir": str(self.out_dir),
        }
        if self.num_classes is not None:
            out["num_classes"] = self.num_classes
        return out


def load_run_config(path, overrides: dict | None = None) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}")
    config = RunConfig.from_dict(raw)
    if overrides:
        config.train = replace(config.train, **overrides)
    return config


def resolve_dataset(config: RunConfig):
    """Materialize/load the dataset; synthetic data lands under out_dir."""
    if "synthetic" in config.data:
        root = Path(config.out_dir) / "dataset"
        generate_synthetic(config.data["synthetic"], root)
    else:
        root = Path(config.data["root"])
    return load_dataset(root)


def build_model(config: RunConfig, num_classes: int) -> Model:
    return Model(config.train, config.backbone, num_classes,
                 np.random.default_rng(0))


def load_model(config: RunConfig, checkpoint_path) -> Model:
    if config.num_classes is None:
        raise ConfigError(
            "config does not record num_classes; use the config echo "
            "written next to the checkpoint")
    model = build_model(config, config.num_classes)
    model.load_state(load_checkpoint(checkpoint_path))
    return model


def _load_image(path, side: int) -> np.ndarray:
    arr = read_pnm(path)
    if arr.ndim != 3:
        raise DataError(f"{path}: expected a color (P6) image")
    if arr.shape[:2] != (side, side):
        raise DataError(f"{path}: size {arr.shape[:2]} does not match the "
                        f"configured input side {side}")
    return arr.astype(np.float64) / 255.0


def _normalize_to_bytes(arr: np.ndarray) -> np.ndarray:
    """Per-map min-max to 0..255; a constant map exports as all zeros."""
    lo, hi = float(arr.min()), float(arr.max())
    if hi <= lo:
        return np.zeros(arr.shape, dtype=np.uint8)
    return np.clip((arr - lo) / (hi - lo) * 255.0, 0, 255).round().astype(np.uint8)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    try:
        raw = json.loads(Path(args.spec).read_text())
    except FileNotFoundError:
        raise ConfigError(f"spec file not found: {args.spec}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.spec}: invalid JSON: {exc}")
    spec = SyntheticSpec.from_dict(raw)
    manifest = generate_synthetic(spec, args.out)
    for split, rows in manifest.splits.items():
        print(f"{split}: {len(rows)} images")
    return 0


def _train_overrides(args) -> dict:
    overrides = {}
    if args.mode is not None:
        overrides["mode"] = args.mode
    if args.head is not None:
        overrides["head"] = args.head
    if args.iters is not None:
        overrides["iterations"] = args.iters
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.k is not None:
        overrides["k"] = args.k
    return overrides


def cmd_train(args) -> int:
    config = load_run_config(args.config, _train_overrides(args))
    if args.out_dir is not None:
        config.out_dir = args.out_dir
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    splits = resolve_dataset(config)
    model, metrics = train(config.train, config.backbone,
                           splits["train"], splits["val"])
    config.num_classes = model.num_classes
    (out_dir / "metrics.csv").write_text(metrics_to_csv(metrics))
    save_checkpoint(out_dir / "model.ckpt", model.params)
    (out_dir / "config.json").write_text(
        json.dumps(config.to_dict(), indent=2) + "\n")
    print(f"final val acc {metrics[-1].val_acc:.9g} "
          f"({len(metrics)} metric rows) -> {out_dir}")
    return 0


def cmd_eval(args) -> int:
    config = load_run_config(args.config)
    splits = resolve_dataset(config)
    if config.num_classes is None:
        config.num_classes = int(splits["train"].labels.max()) + 1
    model = load_model(config, args.checkpoint)
    if args.split not in splits:
        raise ConfigError(f"dataset has no split {args.split!r}")
    acc = evaluate(model, splits[args.split])
    print(f"{args.split} accuracy: {acc:.9g}")
    return 0


def cmd_heatmap(args) -> int:
    config = load_run_config(args.config)
    model = load_model(config, args.checkpoint)
    image = _load_image(args.image, config.backbone.input_side)
    attention = model.attention(image[None])[0]
    write_pgm(args.out, _normalize_to_bytes(attention))
    if args.cam_out is not None:
        if args.label is None:
            raise ConfigError("--cam-out requires --label (CAM is "
                              "conditioned on the class)")
        feats = model.features(image[None]).data[0]
        cam = cam_reference(feats, CamHead(model.params["aux.w"].data),
                            args.label)
        write_pgm(args.cam_out, _normalize_to_bytes(cam))
    print(f"wrote {args.out}")
    return 0


def cmd_topk_regions(args) -> int:
    config = load_run_config(args.config)
    model = load_model(config, args.checkpoint)
    image = _load_image(args.image, config.backbone.input_side)
    boxes, probs, label = model.view_report(image)
    if not 1 <= args.k <= boxes.shape[0]:
        raise ConfigError(f"k={args.k} out of range [1, {boxes.shape[0]}]")
    confidence = probs[:, label]
    order = np.argsort(-confidence, kind="stable")[:args.k]
    stride = config.backbone.input_side // model.backbone_config.feature_side
    lines = ["image_id,rank,confidence,"
             "f_x_tl,f_y_tl,f_x_br,f_y_br,px_x_tl,px_y_tl,px_x_br,px_y_br"]
    image_id = Path(args.image).stem
    for rank, view in enumerate(order, start=1):
        y_tl, x_tl, y_br, x_br = boxes[view]
        lines.append(
            f"{image_id},{rank},{confidence[view]:.9g},"
            f"{x_tl},{y_tl},{x_br},{y_br},"
            f"{x_tl * stride},{y_tl * stride},"
            f"{(x_br + 1) * stride - 1},{(y_br + 1) * stride - 1}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote {args.out} (predicted class {label})")
    return 0


def cmd_verify(args) -> int:
    results = verify_mod.run_all(inject_aux_bias=args.inject_aux_bias)
    for result in results:
        print(result.line())
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed: "
              + ", ".join(r.name for r in failed))
        return 1
    print(f"all {len(results)} checks passed")
    return 0


def cmd_sweep_k(args) -> int:
    config = load_run_config(args.config)
    try:
        k_values = [int(v) for v in args.k_list.split(",") if v]
    except ValueError:
        raise ConfigError(f"bad --k-list {args.k_list!r}")
    if not k_values:
        raise ConfigError("--k-list is empty")
    if args.seeds < 1:
        raise ConfigError(f"--seeds must be >= 1, got {args.seeds}")
    splits = resolve_dataset(config)
    lines = ["k,seed,val_acc"]
    for k in k_values:
        for seed in range(args.seeds):
            cfg = replace(config.train, k=k, seed=seed)
            _, metrics = train(cfg, config.backbone,
                               splits["train"], splits["val"])
            acc = metrics[-1].val_acc
            lines.append(f"{k},{seed},{acc:.9g}")
            print(f"k={k} seed={seed} val_acc={acc:.9g}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvfa",
        description="Attention-guided multi-view feature augmentation classifier")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=("GAP", "MFA", "WO_FEAAUG", "WO_ADACAM"))
    p.add_argument("--head")
    p.add_argument("--iters", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="val")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("heatmap", help="export the attention map of an image")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cam-out", help="also export the classic per-class map")
    p.add_argument("--label", type=int, help="class index for --cam-out")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("topk-regions",
                       help="export the most confident sampled regions")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_topk_regions)

    p = sub.add_parser("verify", help="run the built-in correctness oracles")
    p.add_argument("--inject-aux-bias", action="store_true",
                   help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep-k", help="train across a list of anchor counts")
    p.add_argument("--config", required=True)
    p.add_argument("--k-list", required=True)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_k)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MvfaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
