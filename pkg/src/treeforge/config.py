"""Evolutionary hyperparameters."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

MUTATION_KINDS = (
    "operator_swap",
    "subtree_replace",
    "constant_jitter",
    "variable_swap",
    "node_insert",
    "node_delete",
)


def default_mutation_weights() -> dict[str, float]:
    return {k: 1.0 for k in MUTATION_KINDS}


@dataclass(frozen=True)
class GpConfig:
    """All knobs of the evolutionary loop.

    ``crossover_prob + mutation_prob`` may be below 1; the remainder is
    reproduction by copy. The constant-optimization budget per generation is
    co_candidates * co_steps_per_candidate (times co_ga_pop for the GA
    method).
    """

    generations: int = 100
    population_size: int = 1000
    elite_fraction: float = 0.1
    tournament_size: int = 5
    crossover_prob: float = 0.7
    mutation_prob: float = 0.25
    max_init_depth: int = 4
    max_depth: int = 10
    row_capacity: int = 32
    const_init_range: tuple[float, float] = (-5.0, 5.0)
    mutation_weights: dict[str, float] = field(default_factory=default_mutation_weights)
    co_candidates: int = 50
    co_steps_per_candidate: int = 25
    co_ga_pop: int = 20
    trees_per_individual: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.elite_fraction < 1.0:
            raise ValueError("elite_fraction must lie strictly between 0 and 1")
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if not 1 <= self.tournament_size <= self.population_size:
            raise ValueError("tournament_size must be in [1, population_size]")
        if self.crossover_prob < 0 or self.mutation_prob < 0:
            raise ValueError("reproduction probabilities must be non-negative")
        if self.crossover_prob + self.mutation_prob > 1.0 + 1e-12:
            raise ValueError("crossover_prob + mutation_prob must not exceed 1")
        if self.max_init_depth < 2:
            raise ValueError("max_init_depth must be >= 2")
        if 2 ** self.max_init_depth - 1 > self.row_capacity:
            raise ValueError(
                f"full trees of depth {self.max_init_depth} need "
                f"{2 ** self.max_init_depth - 1} rows but row_capacity is {self.row_capacity}"
            )
        if self.max_depth < self.max_init_depth:
            raise ValueError("max_depth must be >= max_init_depth")
        lo, hi = self.const_init_range
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ValueError("const_init_range must be a finite (low, high) pair")
        if self.trees_per_individual < 1:
            raise ValueError("trees_per_individual must be >= 1")
        unknown = set(self.mutation_weights) - set(MUTATION_KINDS)
        if unknown:
            raise ValueError(f"unknown mutation kinds: {sorted(unknown)}")
        if any(w < 0 for w in self.mutation_weights.values()):
            raise ValueError("mutation weights must be non-negative")

    @property
    def elite_count(self) -> int:
        return math.ceil(self.elite_fraction * self.population_size)

    def with_overrides(self, **kwargs) -> "GpConfig":
        return replace(self, **kwargs)
