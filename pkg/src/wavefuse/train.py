"""Training loop, evaluation, and prediction helpers.

One training step is: seeded shuffle batch -> forward -> cross-entropy ->
backward -> fold the captured branch gradients into the fusion state ->
Adam update. Per-epoch records (train loss, train metrics from the
training-pass predictions, validation metrics) are appended to a
JSON-lines log, and the checkpoint with the best validation macro F1 is
retained. Everything is a pure function of (model seed, data, settings
seed); logs and checkpoints contain no timestamps, so reruns are
byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import ops
from .data import LabeledDataset
from .errors import ConfigError, NumericError
from .fusion import update_fusion_state
from .metrics import MetricsReport, compute_metrics, metrics_to_dict
from .model import Model, save_checkpoint
from .params import Adam
from .tape import Tape

__all__ = ["TrainSettings", "train_model", "evaluate", "predict_probabilities"]


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 25
    batch_size: int = 32
    learning_rate: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def predict_probabilities(model: Model, images: np.ndarray,
                          batch_size: int = 32) -> np.ndarray:
    """Class probabilities for an [N, H, W, 3] image stack."""
    images = np.asarray(images)
    out = []
    for start in range(0, images.shape[0], batch_size):
        batch = images[start:start + batch_size]
        trace = model.forward(Tape(), batch)
        out.append(_softmax_rows(np.asarray(trace.logits.data, dtype=np.float64)))
    return np.concatenate(out, axis=0)


def evaluate(model: Model, ds: LabeledDataset,
             batch_size: int = 32) -> tuple[MetricsReport, np.ndarray]:
    """Metrics and per-sample probabilities on a dataset, no state updates."""
    images, labels = ds.stacked()
    probs = predict_probabilities(model, images, batch_size)
    preds = probs.argmax(axis=1)
    return compute_metrics(labels, preds, ds.num_classes), probs


def train_model(model: Model, train_ds: LabeledDataset,
                val_ds: LabeledDataset, settings: TrainSettings,
                log_path=None, checkpoint_path=None,
                progress=None) -> list[dict]:
    """Run the epoch loop; returns the per-epoch history.

    Train metrics come from the predictions made during the training pass
    itself (the model moves between batches, which keeps the bookkeeping
    free). When checkpoint_path is given, the best-validation-macro-F1
    model is saved there together with the history up to that epoch.
    """
    if train_ds.num_classes != model.config.num_classes:
        raise ConfigError(
            f"dataset has {train_ds.num_classes} classes but the model "
            f"expects {model.config.num_classes}")
    adam = Adam(model.parameters(), learning_rate=settings.learning_rate)
    x_all, y_all = train_ds.stacked()
    n = x_all.shape[0]
    fusion = model.config.fusion_enabled
    history: list[dict] = []
    best_f1 = -1.0
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, settings.epochs + 1):
            rng = np.random.default_rng(
                np.random.SeedSequence(settings.seed, spawn_key=(epoch,)))
            order = rng.permutation(n)
            loss_sum = 0.0
            seen_labels: list[np.ndarray] = []
            seen_preds: list[np.ndarray] = []
            for start in range(0, n, settings.batch_size):
                idx = order[start:start + settings.batch_size]
                xb, yb = x_all[idx], y_all[idx]
                adam.zero_grad()
                tape = Tape()
                trace = model.forward(tape, xb)
                loss = ops.cross_entropy_loss(trace.logits, yb)
                loss_value = float(loss.data)
                if not np.isfinite(loss_value):
                    raise NumericError(
                        f"non-finite loss {loss_value} at epoch {epoch}, "
                        f"sample offset {start}")
                grads = tape.backward(loss)
                if fusion:
                    update_fusion_state(model.fusion_state,
                                        grads.of(trace.f_wav),
                                        grads.of(trace.f_sa))
                adam.step()
                loss_sum += loss_value * idx.size
                seen_labels.append(yb)
                seen_preds.append(np.asarray(trace.logits.data).argmax(axis=1))

            train_metrics = compute_metrics(np.concatenate(seen_labels),
                                            np.concatenate(seen_preds),
                                            train_ds.num_classes)
            val_metrics, _ = evaluate(model, val_ds, settings.batch_size)
            record = {
                "epoch": epoch,
                "train_loss": loss_sum / n,
                "train": metrics_to_dict(train_metrics),
                "val": metrics_to_dict(val_metrics),
            }
            history.append(record)
            if log_fh:
                log_fh.write(json.dumps(record, sort_keys=True,
                                        separators=(",", ":")) + "\n")
                log_fh.flush()
            if progress:
                progress(f"epoch {epoch}/{settings.epochs} "
                         f"loss {record['train_loss']:.4f} "
                         f"val_acc {val_metrics.accuracy:.4f} "
                         f"val_macro_f1 {val_metrics.macro_f1:.4f}")
            if checkpoint_path and val_metrics.macro_f1 > best_f1:
                best_f1 = val_metrics.macro_f1
                save_checkpoint(model, model.fusion_state, checkpoint_path,
                                meta={"epoch": epoch,
                                      "best_val_macro_f1": best_f1,
                                      "history": history})
    finally:
        if log_fh:
            log_fh.close()
    return history
