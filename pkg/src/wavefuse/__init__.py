"""Skin-lesion classification with wavelet boundary features, soft
attention, symmetry-aware attention, and gradient-weighted fusion, built
on a small reverse-mode autodiff core."""

from .attention import (FDAB_FILTERS, ForwardTrace, LSTMParams, SaFAParams,
                        SepConvParams, SoftAttentionParams, fdab, sab,
                        safa_attention, safa_map, soft_attention,
                        spatial_attention_map)
from .config import (active_dtype, checked_enabled, checked_mode,
                     float64_enabled, float64_mode, set_checked, set_float64)
from .data import (HAM10000_CLASSES, LabeledDataset, augment,
                   dihedral_transform, load_dataset, nn_resize, read_pgm,
                   read_ppm, read_wten, split_dataset, write_pgm, write_ppm,
                   write_wten)
from .errors import (CheckpointError, ConfigError, DataError, NumericError,
                     ShapeError, WavefuseError)
from .fusion import FusionState, fuse, normalize_gradients, update_fusion_state
from .metrics import (MetricsReport, compute_metrics, confusion_to_csv,
                      metrics_to_dict)
from .model import (CHECKPOINT_MAGIC, CHECKPOINT_VERSION, GATE_TARGETS, Model,
                    ModelConfig, backbone_forward, load_checkpoint,
                    model_forward, save_checkpoint)
from .params import (Adam, AdamState, Parameter, adam_step, glorot_uniform,
                     he_normal, lstm_uniform)
from .synth import ClassProfile, SynthSpec, default_spec, generate_synthetic
from .tape import Gradients, Tape, Value
from .train import TrainSettings, evaluate, predict_probabilities, train_model
from .wavelet import HaarSubbands, boundary_features, haar_dwt2, haar_idwt2

__version__ = "0.1.0"
