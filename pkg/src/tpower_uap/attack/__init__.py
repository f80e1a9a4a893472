"""Sparse universal perturbations via truncated power iteration, plus baselines."""

from .baselines import project_lp_ball, random_perturbation, sgd_layer_max_attack
from .config import AttackConfig, Perturbation, pattern_for_shape, top_k_for_damage
from .core import (
    IterationResult,
    cardinality_schedule,
    initial_cardinality,
    sv_attack,
    tpower_attack,
    tpower_iterate,
)

__all__ = [
    "AttackConfig", "Perturbation", "IterationResult", "pattern_for_shape", "top_k_for_damage",
    "cardinality_schedule", "initial_cardinality", "tpower_iterate", "tpower_attack", "sv_attack",
    "sgd_layer_max_attack", "project_lp_ball", "random_perturbation",
]
