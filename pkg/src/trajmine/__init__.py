"""Co-movement mining over game telemetry.

Pipeline: simulate (or ingest) minute logs -> tokenize zones/cells ->
triplet corpus -> transformer representation learning -> quantile-radius
density clustering -> overlap/access metrics -> heatmap evidence, wrapped
by a CLI, an on-disk run store, and an HTTP review API.
"""

from .clustering import (
    ClusterAssignment,
    NOISE,
    QuantileDBSCAN,
    cluster_at_quantile,
    cluster_representations,
    dbscan_labels,
    knn_distances,
    select_epsilon,
)
from .dataset import (
    DownstreamTrajectory,
    TripletSample,
    build_corpus,
    build_downstream,
    chunk32,
    dedup_filter,
    make_triplets,
)
from .extract import EmptyTrajectoryError, RepresentationSet, extract, extract_all
from .heatmap import color_of, render_assignment, render_cluster
from .metrics import (
    PairSet,
    access_homogeneity,
    contextual_similarity,
    metrics_report,
    select_pairs,
    time_jaccard,
)
from .model import (
    ModelConfig,
    NonFiniteActivationError,
    TrajectoryEncoder,
    build_model,
    load_checkpoint,
    save_checkpoint,
    timestamp_encoding,
)
from .simulate import (
    AccessInfoGraph,
    DayLog,
    PlayerProfile,
    ScenarioConfig,
    SimulationResult,
    default_world,
    export_logs,
    import_logs,
    simulate,
)
from .store import RunRoot, RunStore, pca_2d
from .training import (
    RepresentationLearner,
    TrainConfig,
    TrainReport,
    TrainingDiverged,
    mcp_loss,
    sample_timestamps,
    train,
    triplet_loss,
)
from .vocab import GridTokenizer, Vocabulary, build_vocabulary
from .world import (
    CellId,
    Continent,
    GridLocation,
    OFFLINE,
    WorldConfig,
    ZoneId,
    bin_cell,
    bin_zone,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
