"""Regime-conditioned car-following modeling and simulation.

The package covers the full pipeline: trajectory ingestion and pairing,
unsupervised driving-regime labeling (bottom-up segmentation, dynamic time
warping, percentile CF/FF split, slope classification), physics baselines
(Newell, IDM with genetic-algorithm calibration), a hybrid recurrent
predictor trained by a three-stage curriculum, and closed-loop single-pair
and platoon simulation with per-MoP mean-squared-error evaluation.
"""

__version__ = "0.1.0"

from . import nn
from .alignment import (
    NewellParams,
    WarpPath,
    dtw_align,
    extract_newell_params,
    split_cf_ff,
)
from .errors import (
    ConfigError,
    DataError,
    InternalError,
    NumericError,
    ParseError,
    RegimeCFError,
    SchemaError,
)
from .physics import (
    GaSettings,
    IdmParams,
    NewellConfig,
    calibrate_idm,
    idm_accel,
    idm_simulate,
    newell_simulate,
)
from .pipeline import (
    LabeledPair,
    PairFrames,
    label_dataset,
    label_dataset_known_sections,
    pair_frames,
)
from .regimes import (
    ClassifyConfig,
    DrivingRegime,
    SectionLabel,
    classify_segment,
    label_regimes,
)
from .segmentation import (
    SegConfig,
    Segment,
    merge_cost,
    refine_segments,
    segment_and_refine,
    segment_profile,
)
from .simulate import (
    ModelHandle,
    SimResult,
    aggregate_mse,
    closed_loop_simulate,
    evaluate_mse,
    export_phase_data,
    export_trajectories,
    platoon_simulate,
    simulate_pairs,
    wave_arrival_times,
)
from .synthetic import ScenarioConfig, generate_synthetic, stop_and_go_config
from .train import CurriculumConfig, CurriculumTrainer, training_rollout
from .trajectory import (
    DT,
    DatasetSplit,
    LeaderFollowerPair,
    Trajectory,
    TrajectorySet,
    extract_pairs,
    load_trajectories,
    save_trajectories,
    split_pairs,
)
