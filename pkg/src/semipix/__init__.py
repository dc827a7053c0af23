"""Semi-supervised dense labeling on synthetic data.

Teacher predictions are split by entropy into reliable pixels, which become
pseudo-labels, and unreliable pixels, which are mined as class-wise negative
examples for a contrastive loss backed by FIFO memory banks.
"""

from .config import ConfigError, RunConfig, load_config, parse_config
from .losses import LossOutput, LossWeights, contrastive_bce, cross_entropy, info_nce, total_loss
from .memorybank import MemoryBank
from .partition import (
    assign_pseudo_labels,
    entropy_threshold,
    prediction_entropy,
    scheduled_unreliable_fraction,
    unsupervised_loss_weight,
)
from .sampling import SamplingConfig, collect_negatives, positive_center, probability_ranks
from .synth import SyntheticDataset, generate_synthetic
from .tensors import (
    IGNORE,
    FormatError,
    LabelMap,
    ProbBatch,
    ReprBatch,
    ValidationError,
    tensor_read,
    tensor_write,
    validate_prob_batch,
)
from .trainer import (
    NonFiniteLossError,
    evaluate_miou,
    reliability_ablation,
    run_supervised_baseline,
    run_training,
)

__version__ = "0.1.0"
