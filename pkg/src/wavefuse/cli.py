"""Command-line interface: train, eval, predict, heatmap, synth-data.

Every command resolves its settings from an optional JSON config file
with command-line flags winning over file values, echoes the resolved
config into its output directory, and is fully reproducible from that
file plus the seed. Exit codes are stable for scripting: 0 success,
1 usage or config error, 2 data error, 3 numeric failure.

The environment variable WAVEFUSE_FLOAT64 (any value but "" or "0")
switches the whole pipeline to 64-bit verification mode;
WAVEFUSE_CHECKED enables extra finiteness and range checks.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .data import (HAM10000_CLASSES, load_dataset, nn_resize, read_ppm,
                   read_wten, split_dataset, augment, write_ppm, write_pgm)
from .errors import ConfigError, DataError, NumericError, ShapeError
from .metrics import confusion_to_csv, metrics_to_dict
from .model import GATE_TARGETS, Model, ModelConfig, load_checkpoint
from .synth import SynthSpec, default_spec, generate_synthetic
from .tape import Tape
from .train import TrainSettings, evaluate, predict_probabilities, train_model

__all__ = ["RunConfig", "main"]

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


@dataclass
class RunConfig:
    """Everything a run needs, serializable to one JSON file."""

    input_size: int = 64
    backbone: tuple[int, ...] = (16, 32, 64)
    num_classes: int = 7
    soft_attention: bool = True
    safa: bool = True
    fusion: bool = True
    gate_target: str = "fuse"
    fusion_decay: float = 0.9
    epochs: int = 25
    batch_size: int = 32
    learning_rate: float = 0.01
    seed: int = 0
    train_fraction: float = 0.7
    augment_factor: int = 1
    image_dir: str | None = None
    labels_csv: str | None = None
    synth: dict | str | None = None
    output_dir: str = "runs/wavefuse"

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_sources(cls, config_path=None, overrides: dict | None = None) -> "RunConfig":
        """Defaults, then config-file values, then flag overrides."""
        merged = cls().to_dict()
        if config_path is not None:
            try:
                with open(config_path, encoding="utf-8") as fh:
                    file_values = json.load(fh)
            except OSError as exc:
                raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"invalid config JSON {config_path}: {exc}") from exc
            unknown = set(file_values) - set(merged)
            if unknown:
                raise ConfigError(
                    f"unknown config keys in {config_path}: {sorted(unknown)}")
            merged.update(file_values)
        for key, value in (overrides or {}).items():
            if value is not None:
                merged[key] = value
        merged["backbone"] = tuple(int(v) for v in merged["backbone"])
        return cls(**merged)

    def model_config(self) -> ModelConfig:
        side = int(self.input_size)
        return ModelConfig(
            input_size=(side, side, 3),
            backbone=self.backbone,
            feature_channels=self.backbone[-1],
            num_classes=self.num_classes,
            soft_attention_enabled=self.soft_attention,
            safa_enabled=self.safa,
            fusion_enabled=self.fusion,
            gate_target=self.gate_target,
            fusion_decay=self.fusion_decay,
            seed=self.seed,
        )

    def resolve_synth_spec(self) -> SynthSpec | None:
        if self.synth is None:
            return None
        if self.synth == "default":
            return default_spec(seed=self.seed)
        if isinstance(self.synth, dict):
            return SynthSpec.from_dict(self.synth)
        raise ConfigError(f"synth must be a spec object or \"default\", got {self.synth!r}")


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as ConfigError (exit code 1)."""

    def error(self, message):
        raise ConfigError(message)


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _write_json(path, obj) -> None:
    Path(path).write_text(_canonical(obj) + "\n", encoding="utf-8")


def _load_image(path, target_size) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"image file not found: {path}")
    if path.suffix == ".wten":
        img = read_wten(path)
        if img.ndim != 3 or img.shape[2] != 3:
            raise DataError(f"{path}: expected [H, W, 3], got {img.shape}")
    else:
        img = read_ppm(path)
    return nn_resize(img, target_size)


def _resolve_dataset(cfg: RunConfig, target_size):
    """Build the dataset named by the config: image dir or synthetic."""
    if cfg.image_dir or cfg.labels_csv:
        if not (cfg.image_dir and cfg.labels_csv):
            raise ConfigError("image_dir and labels_csv must be given together")
        ds = load_dataset(cfg.image_dir, cfg.labels_csv, target_size=target_size)
        if ds.num_classes != cfg.num_classes:
            raise DataError(
                f"dataset has {ds.num_classes} classes, config says {cfg.num_classes}")
        return ds
    spec = cfg.resolve_synth_spec()
    if spec is None:
        raise ConfigError(
            "no dataset source: set image_dir+labels_csv or a synth spec")
    if spec.image_size != target_size[0]:
        raise ConfigError(
            f"synth image_size {spec.image_size} does not match "
            f"model input {target_size[0]}")
    ds = generate_synthetic(spec)
    if ds.num_classes != cfg.num_classes:
        raise ConfigError(
            f"synth spec has {ds.num_classes} classes, config says {cfg.num_classes}")
    return ds


# ---------------------------------------------------------------------------
# subcommands

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--input-size", dest="input_size", type=int)
    p.add_argument("--backbone", type=lambda s: tuple(int(v) for v in s.split(",")),
                   help="comma-separated stage channels, e.g. 16,32,64")
    p.add_argument("--num-classes", dest="num_classes", type=int)
    p.add_argument("--soft-attention", dest="soft_attention",
                   action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--safa", dest="safa",
                   action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--fusion", dest="fusion",
                   action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--gate-target", dest="gate_target", choices=GATE_TARGETS)
    p.add_argument("--fusion-decay", dest="fusion_decay", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--augment-factor", dest="augment_factor", type=int)
    p.add_argument("--image-dir", dest="image_dir")
    p.add_argument("--labels-csv", dest="labels_csv")
    p.add_argument("--synth-spec", dest="synth_spec",
                   help="JSON file with a synthetic-data spec")
    p.add_argument("--synth-default", action="store_true",
                   help="use the built-in synthetic profiles")


def _config_from_args(args) -> RunConfig:
    overrides = {}
    for f in fields(RunConfig):
        if hasattr(args, f.name):
            overrides[f.name] = getattr(args, f.name)
    if getattr(args, "synth_spec", None):
        try:
            text = Path(args.synth_spec).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read synth spec {args.synth_spec}: {exc}") from exc
        overrides["synth"] = SynthSpec.from_json(text).to_dict()
    elif getattr(args, "synth_default", False):
        overrides["synth"] = "default"
    return RunConfig.from_sources(getattr(args, "config", None), overrides)


def _persist_config(cfg: RunConfig, out_dir: Path) -> None:
    resolved = cfg.to_dict()
    spec = cfg.resolve_synth_spec()
    if spec is not None:
        resolved["synth"] = spec.to_dict()
    _write_json(out_dir / "config.json", resolved)


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    model_config = cfg.model_config()
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _persist_config(cfg, out_dir)

    target = model_config.input_size[:2]
    ds = _resolve_dataset(cfg, target)
    if cfg.augment_factor > 1:
        ds = augment(ds, cfg.augment_factor, seed=cfg.seed)
    train_ds, val_ds = split_dataset(ds, cfg.train_fraction, seed=cfg.seed)

    model = Model.create(model_config)
    settings = TrainSettings(epochs=cfg.epochs, batch_size=cfg.batch_size,
                             learning_rate=cfg.learning_rate, seed=cfg.seed)
    checkpoint = out_dir / "model.wagf"
    history = train_model(model, train_ds, val_ds, settings,
                          log_path=out_dir / "train_log.jsonl",
                          checkpoint_path=checkpoint, progress=print)
    best = max(h["val"]["macro_f1"] for h in history)
    print(f"best val macro F1 {best:.4f}; checkpoint {checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    cfg = _config_from_args(args)
    if model.config.num_classes != cfg.num_classes:
        cfg.num_classes = model.config.num_classes
    target = model.config.input_size[:2]
    ds = _resolve_dataset(cfg, target)
    if ds.num_classes != model.config.num_classes:
        raise DataError(
            f"dataset has {ds.num_classes} classes but the checkpoint "
            f"expects {model.config.num_classes}")
    report, probs = evaluate(model, ds, cfg.batch_size)
    payload = metrics_to_dict(report)
    print(_canonical(payload))
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = cfg.to_dict()
    spec = cfg.resolve_synth_spec()
    if spec is not None:
        resolved["synth"] = spec.to_dict()
    resolved["checkpoint"] = str(args.checkpoint)
    _write_json(out_dir / "eval_config.json", resolved)
    _write_json(out_dir / "metrics.json", payload)
    (out_dir / "confusion.csv").write_text(
        confusion_to_csv(report, ds.class_names), encoding="utf-8")
    lines = ["image_id,true,predicted," +
             ",".join(f"p_{n}" for n in ds.class_names)]
    preds = probs.argmax(axis=1)
    for i in range(len(ds)):
        row = ",".join(f"{p:.6f}" for p in probs[i])
        lines.append(f"{ds.provenance[i]},{ds.class_names[ds.labels[i]]},"
                     f"{ds.class_names[int(preds[i])]},{row}")
    (out_dir / "predictions.csv").write_text("\n".join(lines) + "\n",
                                             encoding="utf-8")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_checkpoint(args.checkpoint)
    img = _load_image(args.image, model.config.input_size[:2])
    probs = predict_probabilities(model, img[None])[0]
    k = model.config.num_classes
    names = list(HAM10000_CLASSES) if k == len(HAM10000_CLASSES) \
        else [f"class_{i}" for i in range(k)]
    predicted = int(probs.argmax())
    payload = {
        "image": str(args.image),
        "predicted": names[predicted],
        "predicted_index": predicted,
        "probabilities": {names[i]: float(probs[i]) for i in range(k)},
    }
    print(_canonical(payload))
    return EXIT_OK


def _to_pgm_bytes(grid: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Min-max scale a 2-D map to u8; constant maps render mid-gray."""
    lo = float(grid.min())
    hi = float(grid.max())
    if hi > lo:
        scaled = np.rint((grid - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        scaled = np.full(grid.shape, 128, dtype=np.uint8)
    return scaled, lo, hi


def cmd_heatmap(args) -> int:
    model = load_checkpoint(args.checkpoint)
    if not model.config.safa_enabled:
        raise ConfigError("checkpoint was trained without the symmetry "
                          "attention branch; no maps to render")
    side = model.config.input_size[0]
    img = _load_image(args.image, (side, side))
    trace = model.forward(Tape(), img)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sidecar = {}
    maps = {"attn": trace.f_attn, "symmetry": trace.f_symmetry,
            "lstm": trace.f_lstm}
    for name, value in maps.items():
        grid = np.asarray(value.data)[..., 0]
        scaled, lo, hi = _to_pgm_bytes(grid)
        upsampled = nn_resize(scaled[..., None], (side, side))[..., 0]
        filename = f"{name}.pgm"
        write_pgm(out_dir / filename, upsampled)
        sidecar[name] = {"file": filename, "min": lo, "max": hi}
    _write_json(out_dir / "scaling.json", sidecar)
    print(f"wrote {len(maps)} heatmaps to {out_dir}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.spec:
        try:
            text = Path(args.spec).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read spec {args.spec}: {exc}") from exc
        spec = SynthSpec.from_json(text)
        if args.seed is not None:
            spec = SynthSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    else:
        spec = default_spec(seed=args.seed if args.seed is not None else 0,
                            count_per_class=args.count_per_class,
                            image_size=args.image_size)
    ds = generate_synthetic(spec)
    out_dir = Path(args.out)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for img, label, prov in zip(ds.images, ds.labels, ds.provenance):
        write_ppm(images_dir / f"{prov}.ppm", img)
        rows.append((prov, ds.class_names[label]))
    rows.sort()
    csv_lines = ["image_id,label"] + [f"{i},{l}" for i, l in rows]
    (out_dir / "labels.csv").write_text("\n".join(csv_lines) + "\n",
                                        encoding="utf-8")
    _write_json(out_dir / "spec.json", spec.to_dict())
    print(f"wrote {len(ds)} images to {images_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> _Parser:
    parser = _Parser(prog="wavefuse",
                     description="Skin-lesion classifier with wavelet "
                                 "boundary features, soft attention, and "
                                 "symmetry-aware gradient-weighted fusion")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p_train = sub.add_parser("train", help="train a model")
    _add_config_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p_eval.add_argument("--checkpoint", required=True)
    _add_config_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_pred = sub.add_parser("predict", help="classify one image")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--image", required=True)
    p_pred.set_defaults(func=cmd_predict)

    p_heat = sub.add_parser("heatmap",
                            help="render attention maps of one image as PGM")
    p_heat.add_argument("--checkpoint", required=True)
    p_heat.add_argument("--image", required=True)
    p_heat.add_argument("--output-dir", required=True)
    p_heat.set_defaults(func=cmd_heatmap)

    p_synth = sub.add_parser("synth-data",
                             help="generate a synthetic dataset on disk")
    p_synth.add_argument("--spec", help="synth spec JSON file")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.add_argument("--count-per-class", type=int, default=20)
    p_synth.add_argument("--image-size", type=int, default=64)
    p_synth.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_help()
            return EXIT_CONFIG
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ShapeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
