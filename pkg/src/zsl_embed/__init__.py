"""Zero-shot classification over precomputed features.

A semantic embedding branch fuses per-class vectors from several
modalities into the visual feature space; unseen-class samples are
classified by nearest embedded prototype under a configurable distance
metric. Includes a synthetic multi-modal dataset generator and an
ablation harness.
"""

from zsl_embed.data import (
    Dataset,
    FeatureMatrix,
    SemanticTable,
    class_prototypes,
    l2_normalize_rows,
    load_dataset,
    load_feature_matrix,
    load_semantic_table,
    load_split,
    make_dataset,
    save_dataset,
    save_feature_matrix,
    save_semantic_table,
    save_split,
)
from zsl_embed.evaluation import (
    AblationCell,
    EvalResult,
    ablate,
    embed_class_prototypes,
    emit_report,
    evaluate,
    hubness_skewness,
    read_report_csv,
)
from zsl_embed.metric import (
    MetricKind,
    cosine_sim,
    ec_distance,
    metric_distance,
    pairwise_distances,
    rank_classes,
)
from zsl_embed.network import (
    EmbeddingModel,
    FusionNet,
    NetConfig,
    VisualMapNet,
    gradient_check,
    init_model,
)
from zsl_embed.synthetic import ModalitySpec, SynthConfig, generate
from zsl_embed.training import (
    Adam,
    SgdMomentum,
    TrainConfig,
    TrainHistory,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AblationCell",
    "Adam",
    "Dataset",
    "EmbeddingModel",
    "EvalResult",
    "FeatureMatrix",
    "FusionNet",
    "MetricKind",
    "ModalitySpec",
    "NetConfig",
    "SemanticTable",
    "SgdMomentum",
    "SynthConfig",
    "TrainConfig",
    "TrainHistory",
    "VisualMapNet",
    "ablate",
    "class_prototypes",
    "cosine_sim",
    "ec_distance",
    "embed_class_prototypes",
    "emit_report",
    "evaluate",
    "generate",
    "gradient_check",
    "hubness_skewness",
    "init_model",
    "l2_normalize_rows",
    "load_checkpoint",
    "load_dataset",
    "load_feature_matrix",
    "load_semantic_table",
    "load_split",
    "make_dataset",
    "metric_distance",
    "pairwise_distances",
    "rank_classes",
    "read_report_csv",
    "save_checkpoint",
    "save_dataset",
    "save_feature_matrix",
    "save_semantic_table",
    "save_split",
    "train",
]
