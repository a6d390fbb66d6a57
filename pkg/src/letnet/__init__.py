"""LETNet: a lightweight CNN-Transformer segmentation network on a NumPy autograd core."""

from .accounting import AccountingReport, count_macs, count_params, enumerate_params, traced_macs
from .blocks import (
    EMHA, LDB, EfficientTransformer, EMHAConfig, FEConfig, FeatureEnhancement, LDBConfig, PAConfig, PixelAttention,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, dump_config, load_config, parse_config
from .data import LabelMap, Palette, SyntheticSpec, colorize, load_camvid_dir, read_image, read_labels, synth_dataset
from .errors import CheckpointError, CheckpointMismatch, ConfigError, DataError, LETNetError, NumericError, UsageError
from .evaluation import ConfusionMatrix, IoUReport, iou
from .model import LETNet, ModelConfig, ablation_config, build, forward, tiny_config
from .tensor import Tensor, no_grad
from .training import TrainConfig, TrainState, cross_entropy, poly_lr, train

__version__ = "0.1.0"
