"""relrank: visual relationship ranking with semantic count-model priors.

Trains latent-variable models (DistMult, ComplEx, multiway NN, RESCAL) on
triple counts under a Poisson likelihood, fuses them with per-image
detection scores into a joint log score, and evaluates ranked triple
predictions under recall-at-K in four detection settings.
"""

__version__ = "0.1.0"

from relrank.boxes import Box, iou, union_box
from relrank.detection import (
    DetectionSet,
    PairScores,
    Region,
    load_detections,
    save_detections,
    synthesize_detections,
)
from relrank.errors import (
    FusionError,
    InputValidationError,
    RelrankError,
    ScoreOverflowError,
    TrainingDivergedError,
)
from relrank.evaluation import (
    EvalReport,
    EvalSetting,
    evaluate,
    matches,
    recall_at_k,
)
from relrank.kg import (
    GroundTruthTuple,
    SplitSpec,
    TripleCountTable,
    Vocabulary,
    aggregate_counts,
    make_split,
    zero_shot_filter,
)
from relrank.models import (
    ModelKind,
    SemanticModel,
    init_model,
    load_checkpoint,
    save_checkpoint,
    score,
    score_all_triples,
    score_gradients,
)
from relrank.ranking import (
    RankedPrediction,
    SemanticPrior,
    log_joint_score,
    rank_image,
    visual_only_score,
)
from relrank.training import (
    TrainConfig,
    TrainReport,
    poisson_cost,
    poisson_cost_grad,
    select_rank,
    train,
)

__all__ = [
    "Box",
    "DetectionSet",
    "EvalReport",
    "EvalSetting",
    "FusionError",
    "GroundTruthTuple",
    "InputValidationError",
    "ModelKind",
    "PairScores",
    "RankedPrediction",
    "Region",
    "RelrankError",
    "ScoreOverflowError",
    "SemanticModel",
    "SemanticPrior",
    "SplitSpec",
    "TrainConfig",
    "TrainReport",
    "TrainingDivergedError",
    "TripleCountTable",
    "Vocabulary",
    "aggregate_counts",
    "evaluate",
    "init_model",
    "iou",
    "load_checkpoint",
    "load_detections",
    "log_joint_score",
    "make_split",
    "matches",
    "poisson_cost",
    "poisson_cost_grad",
    "rank_image",
    "recall_at_k",
    "save_checkpoint",
    "save_detections",
    "score",
    "score_all_triples",
    "score_gradients",
    "select_rank",
    "synthesize_detections",
    "train",
    "union_box",
    "visual_only_score",
    "zero_shot_filter",
]
