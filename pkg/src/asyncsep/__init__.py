"""asyncsep: source separation for mutually asynchronous microphone arrays.

Devices with internally synchronous microphone arrays but independent
sample clocks are processed jointly: all devices contribute to a shared
per-tile source-activity classification, and each device then applies its
own time-varying multichannel Wiener filter.  No cross-device resampling
or clock-offset estimation is required.
"""

from .dsp import (
    SampledSignal,
    SpectrogramTensor,
    WindowSpec,
    fractional_delay,
    istft,
    lagrange_resample,
    long_term_average_spectrum,
    stft,
)
from .errors import ConfigError, NumericalError
from .metrics import sdr
from .scene import SceneSpec, apply_sro, load_scene, mix_images, synthesize_scene
from .model import (
    SpatialModel,
    StateSpectrumModel,
    build_state_model,
    estimate_spatial_covariance,
    regularized_sum,
    train_models,
)
from .classifier import (
    PosteriorMap,
    PowerEstimate,
    classify,
    posteriors,
    source_power_estimates,
    state_log_likelihood,
)
from .separator import MODES, SeparationResult, mwf_apply, separate
from .experiment import ExperimentReport, format_report, run_experiment

__version__ = "0.1.0"

__all__ = [
    "SampledSignal",
    "SpectrogramTensor",
    "WindowSpec",
    "stft",
    "istft",
    "lagrange_resample",
    "fractional_delay",
    "long_term_average_spectrum",
    "SceneSpec",
    "synthesize_scene",
    "apply_sro",
    "mix_images",
    "load_scene",
    "SpatialModel",
    "StateSpectrumModel",
    "estimate_spatial_covariance",
    "build_state_model",
    "train_models",
    "regularized_sum",
    "PosteriorMap",
    "PowerEstimate",
    "classify",
    "posteriors",
    "source_power_estimates",
    "state_log_likelihood",
    "MODES",
    "SeparationResult",
    "mwf_apply",
    "separate",
    "sdr",
    "ExperimentReport",
    "run_experiment",
    "format_report",
    "ConfigError",
    "NumericalError",
    "__version__",
]
