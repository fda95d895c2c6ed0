"""Adaptive frequency-injection backdoor attacks on image restoration models."""

from .baselines import fiba_inject, wanet_inject
from .config import ExperimentConfig
from .defenses import StripConfig, fine_prune, saliency_map, strip_entropy
from .errors import (
    CheckpointError,
    DependencyError,
    DivergenceError,
    NumericError,
    ParameterError,
)
from .evaluation import (
    ClassificationRefs,
    MetricsReport,
    attack_success_rate,
    benign_accuracy,
    classify_restoration,
    frequency_report,
    stealth_report,
)
from .imaging import (
    DegradationConfig,
    FrequencyAnalysisConfig,
    FrequencySpectrum,
    degradation_target,
    degrade,
    dft2,
    frequency_distance,
    idft2,
    psnr,
    split_frequency,
    ssim,
)
from .perceptual import perceptual_distance
from .sfinet import (
    InjectorTrainConfig,
    TriggerInjector,
    inject,
    recover_trigger,
    train_injector,
)
from .triggers import TriggerSet, make_trigger_set
from .victim import (
    BackdoorTrainConfig,
    RestorerNet,
    TrainingSample,
    backdoor_loss,
    make_pseudo_poison,
    make_restorer,
    restore,
    train_victim,
    two_term_loss,
)

__version__ = "0.1.0"
