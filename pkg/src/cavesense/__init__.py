"""Sensor-field crossing analysis toolkit.

Forward simulation of object crossings over a 2D sensor field, moving
Z-score event detection, inverse motion/category estimation, and
time-invariant matching of observed events against a library of simulated
hypotheses.
"""

from .detection import (
    ActivationFrame,
    DetectorConfig,
    Event,
    ZScoreDetector,
    detect_events,
    fuse_events,
    segment_events,
)
from .errors import (
    CavesenseError,
    EmptySimulationError,
    TaxonomyMismatchError,
    ValidationError,
)
from .evaluation import (
    EvalReport,
    GroupRanking,
    classification_metrics,
    group_ranks,
    true_class_rank,
)
from .inverse import (
    ClusterParams,
    InverseResult,
    SpanBinClassifier,
    build_h_real,
    classify,
    cluster_activations,
    estimate_motion,
    fuse_clusters,
    infer,
)
from .matching import (
    BinaryActivationMatrix,
    DistanceMatrix,
    MatchResult,
    MatchScore,
    binarize,
    hamming_rows,
    match,
    pdist,
    sdist,
)
from .model import (
    DIRECTIONS,
    LEFT_TO_RIGHT,
    RIGHT_TO_LEFT,
    Hypothesis,
    HypothesisSet,
    LineDef,
    MatchTolerances,
    MotionVector,
    ObjectLabel,
    Provenance,
    Reading,
    SensorDef,
    SensorField,
    Taxonomy,
    hypothesis_matches,
    intersect_hypotheses,
)
from .simulate import (
    ObjectGeometry,
    SimulationConfig,
    SimulationGrid,
    SimulationLibrary,
    SimulationRecord,
    SourceDef,
    generate_library,
    simulate,
)

__version__ = "0.1.0"
