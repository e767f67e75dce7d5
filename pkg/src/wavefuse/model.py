"""Model assembly and checkpoint serialization.

The pipeline is: stride-2 conv backbone -> F_enc, then three parallel
branches over F_enc (soft attention -> F_sa, boundary features -> F_wav,
symmetry-aware attention -> F_attn), gradient-weighted fusion of F_sa and
F_wav -> F_fuse, multiplicative gating by F_attn, global average pooling,
and a dense head. Ablation flags bypass branches: disabled soft attention
passes F_enc through as F_sa, disabled fusion skips the wavelet branch
(F_fuse = F_sa), disabled symmetry attention drops the gate entirely.

Each branch draws its initial weights from its own spawned seed stream, so
toggling one branch never shifts another branch's initialization and a
reduced configuration reproduces the reduced graph bit-exactly.

Checkpoints are a little-endian binary format: magic "WAGF", a u32
version, a canonical-JSON config blob, a canonical-JSON metadata blob,
then a name table of raw float32 tensor records. Fusion averages are
stored beside the parameters under the names fusion/g_w_ema and
fusion/g_sa_ema.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

from . import ops
from .attention import (ForwardTrace, SaFAParams, SoftAttentionParams,
                        safa_attention, soft_attention)
from .config import active_dtype, checked_enabled
from .errors import CheckpointError, ConfigError, NumericError, ShapeError
from .fusion import FusionState, fuse
from .params import Parameter, he_normal, glorot_uniform, mirror_spatial
from .tape import Tape, Value
from .wavelet import boundary_features

__all__ = [
    "ModelConfig", "Model", "GATE_TARGETS",
    "backbone_forward", "model_forward",
    "save_checkpoint", "load_checkpoint",
    "CHECKPOINT_MAGIC", "CHECKPOINT_VERSION",
]

GATE_TARGETS = ("fuse", "enc")

CHECKPOINT_MAGIC = b"WAGF"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and ablation switches.

    input_size: (height, width, 3); spatial dims must be square and
        divisible by 2**(stages+1) so the encoded map is even-sided (a
        wavelet precondition) and square (a symmetry precondition).
    backbone: output channels of each stride-2 conv stage.
    feature_channels: channels of the encoded map; must equal the last
        backbone entry (kept explicit so configs are self-describing).
    gate_target: where the sigmoid symmetry gate multiplies in, "fuse"
        (gate the fused features, the default) or "enc" (gate the encoder
        output before the branches).
    """

    input_size: tuple[int, int, int] = (64, 64, 3)
    backbone: tuple[int, ...] = (16, 32, 64)
    feature_channels: int = 64
    num_classes: int = 7
    soft_attention_enabled: bool = True
    safa_enabled: bool = True
    fusion_enabled: bool = True
    gate_target: str = "fuse"
    fusion_decay: float = 0.9
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        object.__setattr__(self, "backbone", tuple(int(v) for v in self.backbone))
        if len(self.input_size) != 3 or self.input_size[2] != 3:
            raise ConfigError(f"input_size must be (H, W, 3), got {self.input_size}")
        h, w, _ = self.input_size
        if h != w:
            raise ConfigError(f"input must be square, got {h}x{w}")
        if not self.backbone:
            raise ConfigError("backbone needs at least one stage")
        div = 2 ** (len(self.backbone) + 1)
        if h % div:
            raise ConfigError(
                f"input size {h} not divisible by {div} "
                f"(needed for an even, square feature map)")
        if self.feature_channels != self.backbone[-1]:
            raise ConfigError(
                f"feature_channels {self.feature_channels} must equal the "
                f"last backbone stage {self.backbone[-1]}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.gate_target not in GATE_TARGETS:
            raise ConfigError(
                f"gate_target must be one of {GATE_TARGETS}, got {self.gate_target!r}")
        if not 0.0 <= self.fusion_decay < 1.0:
            raise ConfigError(f"fusion_decay must lie in [0, 1), got {self.fusion_decay}")

    def feature_shape(self) -> tuple[int, int, int]:
        """Spatial shape of F_enc: input halved once per stage."""
        side = self.input_size[0] // (2 ** len(self.backbone))
        return (side, side, self.feature_channels)

    def to_dict(self) -> dict:
        return {
            "input_size": list(self.input_size),
            "backbone": list(self.backbone),
            "feature_channels": self.feature_channels,
            "num_classes": self.num_classes,
            "soft_attention_enabled": self.soft_attention_enabled,
            "safa_enabled": self.safa_enabled,
            "fusion_enabled": self.fusion_enabled,
            "gate_target": self.gate_target,
            "fusion_decay": self.fusion_decay,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls().to_dict())
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        merged = {**cls().to_dict(), **d}
        merged["input_size"] = tuple(merged["input_size"])
        merged["backbone"] = tuple(merged["backbone"])
        return cls(**merged)


@dataclass
class ConvStage:
    """One backbone stage: 3x3 conv, stride 2, ReLU."""

    w: Parameter
    b: Parameter

    @classmethod
    def create(cls, rng: np.random.Generator, cin: int, cout: int,
               prefix: str) -> "ConvStage":
        k = 3
        # spatially symmetric start so a transposed image yields transposed
        # features; the symmetry branch reads that covariance from step one
        w0 = mirror_spatial(he_normal(rng, (k, k, cin, cout), fan_in=k * k * cin))
        return cls(
            w=Parameter(w0, name=f"{prefix}_w"),
            b=Parameter(np.zeros(cout, dtype=active_dtype()), name=f"{prefix}_b"),
        )

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]


class Model:
    """Parameter container plus the forward wiring for one configuration."""

    def __init__(self, config: ModelConfig, stages: list[ConvStage],
                 soft_attn: SoftAttentionParams | None,
                 safa: SaFAParams | None,
                 head_w: Parameter, head_b: Parameter,
                 fusion_state: FusionState | None,
                 meta: dict | None = None):
        self.config = config
        self.stages = stages
        self.soft_attn = soft_attn
        self.safa = safa
        self.head_w = head_w
        self.head_b = head_b
        self.fusion_state = fusion_state
        self.meta = dict(meta or {})

    @classmethod
    def create(cls, config: ModelConfig) -> "Model":
        """Seeded initialization; each branch owns one spawned seed stream."""
        streams = np.random.SeedSequence(config.seed).spawn(4)
        rng_backbone, rng_sa, rng_safa, rng_head = \
            (np.random.default_rng(s) for s in streams)

        stages = []
        cin = config.input_size[2]
        for i, cout in enumerate(config.backbone):
            stages.append(ConvStage.create(rng_backbone, cin, cout,
                                           f"backbone/stage{i}"))
            cin = cout

        fh, fw, fc = config.feature_shape()
        soft_attn = (SoftAttentionParams.create(rng_sa, fc)
                     if config.soft_attention_enabled else None)
        safa = (SaFAParams.create(rng_safa, fc, fh, fw)
                if config.safa_enabled else None)

        k = config.num_classes
        head_w = Parameter(glorot_uniform(rng_head, (fc, k), fan_in=fc, fan_out=k),
                           name="head/w")
        head_b = Parameter(np.zeros(k, dtype=active_dtype()), name="head/b")

        fusion_state = (FusionState((fh, fw, fc), decay=config.fusion_decay)
                        if config.fusion_enabled else None)
        return cls(config, stages, soft_attn, safa, head_w, head_b, fusion_state)

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for stage in self.stages:
            out.extend(stage.parameters())
        if self.soft_attn is not None:
            out.extend(self.soft_attn.parameters())
        if self.safa is not None:
            out.extend(self.safa.parameters())
        out.extend([self.head_w, self.head_b])
        return out

    # -- forward ------------------------------------------------------------

    def _check_input(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=active_dtype())
        expect = self.config.input_size
        if images.shape != expect and images.shape[1:] != expect:
            raise ShapeError(
                f"input shape {images.shape} does not match configured "
                f"input size {expect}")
        if checked_enabled() and images.size:
            lo, hi = images.min(), images.max()
            if lo < 0.0 or hi > 1.0:
                raise NumericError(
                    f"pixel values must lie in [0, 1], got [{lo}, {hi}]")
        return images

    def backbone_forward(self, tape: Tape, images) -> Value:
        """Encode pixels to F_enc with stride-2 conv + ReLU stages.

        Pixels are centered to [-0.5, 0.5] before the first convolution;
        an all-positive input couples every filter's baseline to the sum
        of its weights, which destabilizes ReLUs under large step sizes.
        """
        images = self._check_input(images)
        x = tape.constant(images - np.asarray(0.5, dtype=images.dtype))
        for stage in self.stages:
            x = ops.conv2d(x, tape.leaf(stage.w), tape.leaf(stage.b), stride=2)
            x = ops.relu(x)
        return x

    def forward(self, tape: Tape, images,
                fusion_state: FusionState | None = None) -> ForwardTrace:
        """Run the full pipeline; returns the trace with every intermediate.

        When fusion is enabled, the wavelet and attention branch outputs
        are watched on the tape so backward() retains their gradients for
        the fusion-state update.
        """
        cfg = self.config
        state = fusion_state if fusion_state is not None else self.fusion_state
        trace = ForwardTrace()
        f_enc = self.backbone_forward(tape, images)
        trace.f_enc = f_enc

        f_attn = None
        if cfg.safa_enabled:
            f_attn = safa_attention(f_enc, self.safa, trace)

        base = f_enc
        if f_attn is not None and cfg.gate_target == "enc":
            base = ops.broadcast_mul(f_attn, f_enc)

        if cfg.soft_attention_enabled:
            f_sa = soft_attention(base, self.soft_attn)
        else:
            f_sa = base
        trace.f_sa = f_sa

        if cfg.fusion_enabled:
            if state is None:
                raise ConfigError("fusion is enabled but no fusion state was given")
            f_wav = boundary_features(base)
            trace.f_wav = f_wav
            tape.watch(f_wav)
            tape.watch(f_sa)
            f_fuse = fuse(f_wav, f_sa, state.g_w_ema, state.g_sa_ema)
            trace.f_fuse = f_fuse
        else:
            f_fuse = f_sa

        if f_attn is not None and cfg.gate_target == "fuse":
            f_final = ops.broadcast_mul(f_attn, f_fuse)
        else:
            f_final = f_fuse
        trace.f_final = f_final

        pooled = ops.global_average_pool(f_final)
        logits = ops.affine(pooled, tape.leaf(self.head_w), tape.leaf(self.head_b))
        trace.pooled = pooled
        trace.logits = logits
        return trace


def backbone_forward(model: Model, image, tape: Tape | None = None) -> Value:
    """Encode an image (or batch) to F_enc on a fresh tape by default."""
    return model.backbone_forward(tape if tape is not None else Tape(), image)


def model_forward(model: Model, image,
                  fusion_state: FusionState | None = None,
                  tape: Tape | None = None) -> tuple[Value, ForwardTrace]:
    """Full forward pass returning (logits, trace).

    Logits are raw scores; softmax is applied by the loss during training
    or explicitly at prediction time.
    """
    trace = model.forward(tape if tape is not None else Tape(), image,
                          fusion_state)
    return trace.logits, trace


# ---------------------------------------------------------------------------
# checkpoint IO

def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _write_block(fh: BinaryIO, payload: bytes) -> None:
    fh.write(struct.pack("<I", len(payload)))
    fh.write(payload)


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def _read_block(fh: BinaryIO, what: str) -> bytes:
    (n,) = struct.unpack("<I", _read_exact(fh, 4, f"{what} length"))
    return _read_exact(fh, n, what)


def _checkpoint_tensors(model: Model,
                        fusion_state: FusionState | None) -> list[tuple[str, np.ndarray]]:
    tensors = [(p.name, p.value) for p in model.parameters()]
    if fusion_state is not None:
        tensors.append(("fusion/g_w_ema", fusion_state.g_w_ema))
        tensors.append(("fusion/g_sa_ema", fusion_state.g_sa_ema))
    return tensors


def save_checkpoint(model: Model, fusion_state: FusionState | None,
                    path, meta: dict | None = None) -> None:
    """Serialize config, metadata, parameters, and fusion averages.

    Tensor payloads are little-endian float32 regardless of host byte
    order or the active compute precision.
    """
    state = fusion_state if fusion_state is not None else model.fusion_state
    meta_out = dict(model.meta)
    if meta:
        meta_out.update(meta)
    if state is not None:
        meta_out["fusion"] = {"decay": state.decay, "updates": state.updates}
    tensors = _checkpoint_tensors(model, state)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        _write_block(fh, _canonical_json(model.config.to_dict()))
        _write_block(fh, _canonical_json(meta_out))
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> Model:
    """Rebuild a model from a checkpoint; forward passes match bit-exactly.

    Raises CheckpointError on a bad magic, unsupported version, truncation,
    or any tensor whose name or shape disagrees with the stored config.
    """
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(
                f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint version {version}, "
                f"expected {CHECKPOINT_VERSION}")
        try:
            config = ModelConfig.from_dict(json.loads(_read_block(fh, "config")))
        except (json.JSONDecodeError, ConfigError) as exc:
            raise CheckpointError(f"invalid stored config: {exc}") from exc
        meta = json.loads(_read_block(fh, "metadata"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        loaded: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4, "tensor rank"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "tensor shape"))
            n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            raw = _read_exact(fh, 4 * n, f"tensor {name}")
            loaded[name] = np.frombuffer(raw, dtype="<f4").reshape(shape)
        if fh.read(1):
            raise CheckpointError("trailing bytes after last tensor")

    model = Model.create(config)
    fusion_meta = meta.pop("fusion", None)
    if config.fusion_enabled:
        decay = fusion_meta["decay"] if fusion_meta else config.fusion_decay
        state = FusionState(config.feature_shape(), decay=decay)
        for attr, key in (("g_w_ema", "fusion/g_w_ema"),
                          ("g_sa_ema", "fusion/g_sa_ema")):
            if key not in loaded:
                raise CheckpointError(f"missing fusion tensor {key}")
            arr = loaded.pop(key)
            if arr.shape != getattr(state, attr).shape:
                raise CheckpointError(
                    f"fusion tensor {key} has shape {arr.shape}, "
                    f"expected {getattr(state, attr).shape}")
            setattr(state, attr, arr.astype(active_dtype()))
        if fusion_meta:
            state.updates = int(fusion_meta.get("updates", 0))
        model.fusion_state = state

    for param in model.parameters():
        if param.name not in loaded:
            raise CheckpointError(f"missing tensor {param.name}")
        arr = loaded.pop(param.name)
        if arr.shape != param.value.shape:
            raise CheckpointError(
                f"tensor {param.name} has shape {arr.shape}, "
                f"expected {param.value.shape}")
        param.value = arr.astype(active_dtype())
    if loaded:
        raise CheckpointError(f"unexpected tensors: {sorted(loaded)}")
    model.meta = meta
    return model
