"""Affinity-guided human part parsing at desk scale."""

from .acet import read_acet, write_acet
from .attention import (
    ChannelAffinity,
    SpatialAffinity,
    gem_affinity,
    gem_apply,
    lcm_affinity,
    lcm_apply,
)
from .config import NetworkConfig, TrainConfig, load_network_config, load_train_config
from .data import DataConfig, Joint, Sample, boundary_from_labels, generate_sample, joints_to_heatmaps
from .errors import (
    AffparseError,
    ConfigurationError,
    ContractError,
    DataError,
    DimensionError,
    IntegrityError,
)
from .losses import LabelMap, LossWeights, TrainTargets, boundary_ce, cross_entropy, \
    ohem_cross_entropy, skeleton_mse, total_loss
from .metrics import ConfusionMatrix, MetricsResult, segmentation_metrics
from .model import ParsingNetwork, build_network
from .tensor import GradTape, Tensor, backward, grad_check
from .train import evaluate, inspect_affinity, lr_at, run_ablation, train

__version__ = "0.1.0"
