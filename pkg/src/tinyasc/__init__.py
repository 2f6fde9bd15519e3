"""Low-complexity acoustic scene classification engine.

Log-Mel frontend, two compact CNN architectures (conv + separable-conv
modules vs mixer modules), a from-scratch training loop, post-training
INT8 quantization, and a parameter/MAC auditor enforcing the 128K / 30M
deployment budgets.
"""

from .audit import (
    Convention,
    audit_model,
    brute_force_count,
    check_budget,
    count_macs,
    count_params,
    reconcile,
    reconcile_all,
)
from .data import SCENE_LABELS, parse_manifest, read_wav, synth_dataset, synth_examples, write_wav
from .errors import TinyAscError
from .frontend import FrontendConfig, Spectrogram, Waveform, log_mel
from .metrics import accuracy, evaluate, log_loss
from .quantize import quantize_model, quantized_forward, quantize_tensor
from .trainer import TrainingConfig, TrainRun, train
from .zoo import (
    ModelGraph,
    Prediction,
    build_conv_mixer,
    build_conv_sep,
    forward,
    init_weights,
    load_model,
    save_model,
)

__version__ = "0.1.0"

__all__ = [
    "Convention",
    "FrontendConfig",
    "ModelGraph",
    "Prediction",
    "SCENE_LABELS",
    "Spectrogram",
    "TinyAscError",
    "TrainRun",
    "TrainingConfig",
    "Waveform",
    "accuracy",
    "audit_model",
    "brute_force_count",
    "build_conv_mixer",
    "build_conv_sep",
    "check_budget",
    "count_macs",
    "count_params",
    "evaluate",
    "forward",
    "init_weights",
    "load_model",
    "log_loss",
    "log_mel",
    "parse_manifest",
    "quantize_model",
    "quantize_tensor",
    "quantized_forward",
    "read_wav",
    "reconcile",
    "reconcile_all",
    "save_model",
    "synth_dataset",
    "synth_examples",
    "train",
    "write_wav",
]
