"""Closed-loop deep brain stimulation on a basal-ganglia-thalamic network.

A conductance-based 40-neuron network with a subthalamic stimulation site,
in-vivo-measurable biomarker extraction, and a twin-critic deterministic
policy-gradient agent that modulates stimulation frequency and amplitude.
"""

from .biomarkers import (
    FEATURE_NAMES,
    FeatureVector,
    NormalizationSpec,
    banded_psd,
    calibrate_normalization,
    extract_features,
    hjorth,
    normalize,
    sample_entropy,
)
from .env import DBSEnv, EnvConfig, StepResult, compute_reward
from .harness import (
    Calibration,
    RunReport,
    calibrate,
    evaluate,
    run_baseline,
    train,
    train_multi_seed,
)
from .network import (
    NetworkState,
    NeuronState,
    TraceWindow,
    detect_spikes,
    init_network,
    step_network,
)
from .params import ModelParams, default_params, load_params
from .stim import (
    StimulusCommand,
    Waveform,
    analytic_rms,
    denormalize,
    normalize_command,
    pulse_current,
    rms_power,
    synthesize,
)
from .td3 import AgentParams, ReplayBuffer, TD3Agent, Transition

__version__ = "0.1.0"
