"""Zero-shot whole-slide classification over precomputed patch embeddings.

Pipeline: representative-patch selection, local window attention with
relative positional bias, gated multi-head fusion, temperature-scaled cosine
classification against textual class prototypes, and coordinate-aware
slide-level aggregation. Training is plain numpy with hand-derived gradients
checked against a finite-difference oracle.
"""

from .aggregation import (
    AggregationParams,
    SlidePrediction,
    aggregate_slide,
    patch_weights,
    positional_embedding,
    slide_loss,
)
from .attention import (
    AttentionHeadParams,
    LwaParams,
    WindowPartition,
    attend_window,
    attention_weights,
    lwa_forward,
    partition_windows,
)
from .classifier import (
    PatchPrediction,
    TemperatureParam,
    patch_loss,
    patch_probs,
    patch_scores,
)
from .data import (
    ClassPrototype,
    PatchEmbedding,
    PrototypeSet,
    SlideRecord,
    SyntheticConfig,
    coarse_prototypes,
    gen_synthetic,
    load_prototypes,
    load_slide,
    save_prototypes,
    save_slide,
)
from .fusion import FusionParams, GateParams, fuse_heads, gate_head
from .metrics import (
    EvalRecord,
    auroc_ovr,
    balanced_accuracy,
    binary_auroc,
    confusion_matrix,
    f1_scores,
)
from .params import (
    GradientBundle,
    ModelParams,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .prototypes import (
    DescriptionTriple,
    interclass_distance,
    mean_description_embedding,
    normalize_prototypes,
    render_description,
    render_prompt,
)
from .selection import SelectionStrategy, select_patches
from .training import (
    TrainConfig,
    adamw_step,
    desk_profile,
    finite_diff_check,
    forward_slide,
    grad_total_loss,
    paper_profile,
    random_instance,
    total_loss,
    train,
)

__version__ = "0.1.0"
