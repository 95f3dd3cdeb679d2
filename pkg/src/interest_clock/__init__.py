"""Time-of-day aware user interest features ("interest clocks") for streaming recommendation."""

from .clock import STRATEGIES, ClockStrategy, aggregate, circular_distance, gaussian_weight, hour_weights
from .config import ConfigError, ExperimentConfig, load_config
from .core import (
    BehaviorLabels,
    CorruptSnapshot,
    DegenerateInput,
    DimensionMismatch,
    DomainError,
    EmptyInput,
    EventLogError,
    Facet,
    InteractionEvent,
    InterestClockError,
    MissingEmbedding,
    NonFiniteGradient,
    OutOfOrderEvent,
    SimTime,
    Tag,
    Tier,
    Vocabulary,
    hour_bucket,
    read_event_log,
    write_event_log,
)
from .estimator import InterestClockClassifier
from .feature_store import HourlyTagStore, InterestClockFeatures, ScoreWeights, score_feature
from .metrics import MetricsReport, auc, forgetting_probe, hour_distribution, metrics_report, uauc
from .model import EmbeddingTables, StreamingMLP, loss
from .stream import GeneratorConfig, Population, evaluate_frozen, generate, run_stream

__version__ = "0.1.0"
