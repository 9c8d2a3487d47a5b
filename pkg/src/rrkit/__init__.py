"""rrkit: re-ranking toolkit for writer retrieval over labeled embeddings.

Baselines (cosine, exemplar-SVM features), k-reciprocal-neighbor Jaccard
re-ranking, SVM-based query expansion, retrieval metrics, and (k, lambda)
hyper-parameter sweeps.
"""

__version__ = "0.1.0"

from .corpus import (
    CorpusFormatError,
    EmbeddingSet,
    GallerySizeProfile,
    Sample,
    WhiteningModel,
    ensure_writer_disjoint,
    generate_synthetic,
    l2_normalize,
    load_embeddings,
    pca_whiten,
    power_normalize,
    save_embeddings,
)
from .evaluation import (
    DEFAULT_K_GRID,
    DEFAULT_LAMBDA_GRID,
    EvalReport,
    QueryRelevance,
    SweepGrid,
    aggregate_reports,
    average_precision,
    evaluate_ranking,
    format_report_table,
    hard_k,
    mean_average_precision,
    relevance_from_labels,
    soft_k,
    sweep,
    top1,
)
from .jaccard import (
    RerankConfig,
    SetVector,
    build_set_vectors,
    final_distance,
    jaccard_distance,
    jaccard_rerank,
)
from .linear_svm import (
    PositiveSet,
    SvmConfig,
    SvmModel,
    esvm_feature_transform,
    model_dump,
    to_feature,
    train,
)
from .query_expansion import FriendSet, QeMode, aqe_query, qe_rerank, select_friends
from .ranking import (
    DistanceMatrix,
    Ranking,
    ReciprocalSet,
    cosine_distances,
    k_reciprocal_sets,
    rank,
    reciprocal_mask,
)
