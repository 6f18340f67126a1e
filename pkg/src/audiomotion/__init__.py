"""Audio-conditioned diffusion over disentangled facial motion parameters.

Train a windowed transformer denoiser on paired (audio, motion) sequences,
then generate arbitrarily long motion from audio in a sliding-window fashion
and render it as keypoint image sequences.
"""

from .audio import (
    AudioFeatureSequence,
    MelConfig,
    align,
    extract_logmel,
    load_features,
    load_wav,
    save_features,
    save_wav,
)
from .binio import FormatError
from .denoiser import (
    NULL_CONDITION,
    DenoiserConfig,
    DenoiserModel,
    init_model,
    load_model,
    parameter_count,
    save_model,
)
from .diffusion import (
    NoiseSchedule,
    WindowBatch,
    guided_x0,
    make_schedule,
    posterior_step,
    q_sample,
    sample_window,
)
from .inference import GenerateConfig, StitchReport, generate, stitch_report
from .metrics import audio_motion_corr, motion_frechet, pearson, smoothness
from .motion import (
    CanonicalKeypoints,
    MotionFrame,
    MotionSequence,
    MotionStats,
    canonical_layout,
    compute_stats,
    destandardize,
    flatten,
    load_keypoints,
    load_sequence,
    motion_dim,
    rotation_matrix,
    save_keypoints,
    save_sequence,
    standardize,
    transform_keypoints,
    unflatten,
)
from .render import render_sequence
from .synthetic import SyntheticSpec, envelope_of, make_corpus, write_corpus
from .training import (
    TrainConfig,
    TrainState,
    loss_expression,
    loss_simple,
    loss_smooth,
    loss_total,
    loss_velocity,
    make_batch,
    train,
)

__version__ = "0.1.0"
