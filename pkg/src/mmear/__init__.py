"""Two-stream temporal-MLP egocentric action recognition at desk scale.

Submodules:
  nn        float64 layers, loss, Adam, checkpoints
  handpose  bilateral 21-keypoint hands and canonical normalization
  sampling  multi-rate window sampling
  dataset   takes, labels, windowing, augmentation, synthetic generator
  models    extractors, temporal-MLP blocks, fusion models, training
  bench     macro F1, single-thread CPU measurement, sweeps, Pareto export
  cli       command-line entry points
"""

__version__ = "0.1.0"

from .sampling import MultiRateWindow, RateConfig, build_window, sample_indices  # noqa: F401
from .handpose import (  # noqa: F401
    HandFrame,
    NormalizedHandFrame,
    SkeletonTopology,
    normalize_hand_frame,
)
from .dataset import ActionSegment, DatasetMeta, SynthSpec, Take, synth_generate  # noqa: F401
from .models import (  # noqa: F401
    FusionNet,
    HpMlp,
    MmTmlp,
    ModelConfig,
    TemporalMlpConfig,
    TrainConfig,
    build_model,
    train_model,
)
from .bench import CpuStats, SweepRow, macro_f1, measure_cpu, pareto_front, run_sweep  # noqa: F401
