"""osdkit: overlapped speech detection as frame-level three-class labeling.

The pipeline: 16 kHz audio is cut into 4 s segments, turned into 64-band
log-mel features at a 10 ms hop, labeled per frame as silence / one speaker /
overlap from RTTM annotations, fed through one of four encoder families, and
scored with overlap-class frame F1.
"""

__version__ = "0.1.0"

from .annotations import (
    OVERLAP,
    SILENCE,
    SINGLE,
    DatasetStats,
    FrameLabels,
    ManifestRecord,
    SpeakerTurn,
    collapse_to_binary,
    dataset_stats,
    parse_rttm,
    rasterize_labels,
    read_manifest,
    write_manifest,
    write_rttm,
)
from .augment import AugmentPolicy, Augmenter, add_noise, apply_rir, augment_batch
from .data import SegmentDataset
from .errors import (
    AudioFormatError,
    ConfigError,
    DataError,
    OsdkitError,
    RttmParseError,
    TrainingDivergedError,
)
from .features import (
    AudioClip,
    FeatureConfig,
    FeatureMatrix,
    SegmentSpan,
    fbank,
    load_audio,
    segment,
)
from .fixtures import FixtureSpec, make_fixtures
from .metrics import ConfusionCounts, EvalReport, evaluate, frame_f1
from .models import (
    EmbeddingMatrix,
    ModelConfig,
    PredictionMatrix,
    build_model,
    default_config,
    forward,
    load_checkpoint,
    param_count,
    save_checkpoint,
)
from .training import (
    ClassWeights,
    TrainConfig,
    TrainState,
    derive_weights,
    frame_accuracy,
    train,
    weighted_ce,
)
