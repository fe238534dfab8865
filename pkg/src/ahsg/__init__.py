"""Graph adversarial-attack laboratory.

Evasion attacks on two-layer GCNs via semantic-preserving latent
perturbation (class-restricted combination of hidden representations) mapped
back to edge flips with projected gradient descent, plus baseline attacks,
preprocessing defenses, and a CSBM/Bayes audit of how much task-relevant
structure an attack preserves.
"""

from .graphs import (
    UNKNOWN,
    AttackBudget,
    Graph,
    GraphFormatError,
    apply_perturbation,
    budget_from_ratio,
    complement_delta,
    flip_count,
    load_graph,
    normalized_adjacency,
    pack_pair,
    pair_count,
    save_attacked_graph,
    save_graph,
    unpack_pair,
)
from .gcn import (
    GcnParams,
    TrainConfig,
    TrainingDiverged,
    accuracy,
    forward,
    forward_from_latent,
    load_checkpoint,
    predict,
    save_checkpoint,
    train_surrogate,
)
from .kernels import finite_difference_check, masked_cross_entropy
from .semantic import (
    PerturbConfig,
    clip_combination_weights,
    combine_representations,
    latent_attack_loss,
    optimize_combination,
    similarity,
)
from .mapping import (
    MapConfig,
    ahsg_attack,
    bisect_budget_shift,
    clip_box,
    pgd_map,
    project_budget,
    sample_binary,
    structure_match_loss,
)

__version__ = "0.1.0"
