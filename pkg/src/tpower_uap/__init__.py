"""Sparse universal adversarial perturbations from truncated (p, q)-singular vectors."""

from .attack import (
    AttackConfig,
    Perturbation,
    cardinality_schedule,
    random_perturbation,
    sgd_layer_max_attack,
    sv_attack,
    top_k_for_damage,
    tpower_attack,
    tpower_iterate,
)
from .estimators import MedianFilter, NetworkClassifier, SGDLayerMaxAttack, SVAttack, TPowerAttack
from .evaluation import (
    EvalReport,
    adapt_perturbation,
    apply_perturbation,
    attack_success_rate,
    damaged_pixel_fraction,
    evaluate,
    fooling_rate,
    grid_search,
    median_filter,
    transfer_matrix,
)
from .numerics import INFINITY, SparsityPattern

__version__ = "0.1.0"
