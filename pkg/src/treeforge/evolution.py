"""The evolutionary loop: initialization, selection, elitism, generations.

Lower fitness is better everywhere; +inf marks unevaluated or invalid
individuals. The loop is deterministic for a fixed (seed, config, fitness):
every stochastic decision draws from a stream split by (generation, slot),
so results do not depend on evaluation order or worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .config import GpConfig
from .const_opt import apply_constant_optimization
from .eval_engine import batch_evaluate
from .expr import NodeMatrix, OperatorSet, complexity
from .rng import RngStream
from .variation import crossover, mutate, random_matrix

Population = list["Individual"]


@dataclass
class Individual:
    """One candidate: a tuple of trees plus bookkeeping."""

    trees: tuple[NodeMatrix, ...]
    fitness: float = math.inf
    complexity: int = field(init=False)

    def __post_init__(self):
        self.trees = tuple(self.trees)
        self.complexity = sum(complexity(t) for t in self.trees)

    def copy_with_fitness(self, fitness: float) -> "Individual":
        return Individual(self.trees, fitness=fitness)


def _rank_key(ind: Individual):
    return (ind.fitness, ind.complexity)


class ParetoFront:
    """Best fitness seen at every complexity level, strictly decreasing.

    An entry exists at complexity c only if its fitness strictly beats every
    entry at lower complexity; dominated higher-complexity entries are
    pruned on insert.
    """

    def __init__(self):
        self._entries: dict[int, tuple[float, Individual]] = {}

    def update(self, ind: Individual) -> bool:
        c, f = ind.complexity, ind.fitness
        for oc, (of, _) in self._entries.items():
            if oc <= c and of <= f:
                return False
        self._entries = {
            oc: entry for oc, entry in self._entries.items()
            if not (oc > c and entry[0] >= f)
        }
        self._entries[c] = (f, ind)
        return True

    def entries(self) -> list[tuple[int, float, Individual]]:
        """(complexity, fitness, individual) sorted by complexity."""
        return [(c, f, ind) for c, (f, ind) in sorted(self._entries.items())]

    def best(self) -> Individual | None:
        rows = self.entries()
        return rows[-1][2] if rows else None

    def __len__(self):
        return len(self._entries)


def pareto_update(front: ParetoFront, ind: Individual) -> ParetoFront:
    front.update(ind)
    return front


@dataclass(frozen=True)
class GenStats:
    generation: int
    best_fitness: float
    mean_fitness: float
    best_complexity: int


def initialize_population(cfg: GpConfig, ops: OperatorSet, rng: RngStream) -> Population:
    """Ramped half-and-half: depths cycle over [2, max_init_depth] while the
    grow/full method alternates per slot."""
    depths = list(range(2, cfg.max_init_depth + 1))
    pop: Population = []
    for i in range(cfg.population_size):
        method = "grow" if i % 2 == 0 else "full"
        depth = depths[(i // 2) % len(depths)]
        slot_rng = rng.split(i)
        trees = tuple(
            random_matrix(ops, depth, method, slot_rng.split(t), cfg)
            for t in range(cfg.trees_per_individual)
        )
        pop.append(Individual(trees))
    return pop


def tournament_select(pop: Population, k: int, rng: RngStream) -> Individual:
    """Best of k uniform draws with replacement; ties broken by lower
    complexity, then lower population index."""
    idxs = rng.gen.integers(0, len(pop), size=k)
    best = None
    best_key = None
    for i in idxs:
        ind = pop[int(i)]
        key = (ind.fitness, ind.complexity, int(i))
        if best_key is None or key < best_key:
            best, best_key = ind, key
    return best


def evolve_generation(
    pop: Population, cfg: GpConfig, ops: OperatorSet, rng: RngStream
) -> Population:
    """One reproduction round: elites carried unchanged, the rest sampled
    from crossover / mutation / copy by the configured probabilities."""
    order = sorted(range(len(pop)), key=lambda i: (pop[i].fitness, pop[i].complexity, i))
    offspring: Population = [pop[i] for i in order[:cfg.elite_count]]
    slot = 0
    while len(offspring) < cfg.population_size:
        srng = rng.split(slot)
        slot += 1
        r = srng.random()
        if r < cfg.crossover_prob:
            p1 = tournament_select(pop, cfg.tournament_size, srng)
            p2 = tournament_select(pop, cfg.tournament_size, srng)
            kids_a, kids_b = [], []
            for t in range(cfg.trees_per_individual):
                ca, cb = crossover(
                    p1.trees[t], p2.trees[t], srng,
                    row_capacity=cfg.row_capacity, max_depth=cfg.max_depth,
                )
                kids_a.append(ca)
                kids_b.append(cb)
            offspring.append(Individual(tuple(kids_a)))
            if len(offspring) < cfg.population_size:
                offspring.append(Individual(tuple(kids_b)))
        elif r < cfg.crossover_prob + cfg.mutation_prob:
            p = tournament_select(pop, cfg.tournament_size, srng)
            t = srng.integers(0, cfg.trees_per_individual)
            trees = list(p.trees)
            trees[t] = mutate(trees[t], ops, cfg, srng)
            offspring.append(Individual(tuple(trees)))
        else:
            p = tournament_select(pop, cfg.tournament_size, srng)
            offspring.append(p.copy_with_fitness(p.fitness))
    return offspring


def _population_stats(pop: Population, generation: int) -> GenStats:
    best = min(pop, key=_rank_key)
    finite = [ind.fitness for ind in pop if math.isfinite(ind.fitness)]
    mean = sum(finite) / len(finite) if finite else math.inf
    return GenStats(generation, best.fitness, mean, best.complexity)


def run(
    cfg: GpConfig,
    ops: OperatorSet,
    fitness,
    co_method: str = "none",
    workers: int = 1,
) -> tuple[ParetoFront, Individual, list[GenStats]]:
    """Full GP run: generation 0 is the evaluated initial population, then
    cfg.generations rounds of reproduction. Returns the Pareto front, the
    fittest individual of the final population and per-generation stats."""
    if co_method not in ("none", "ga", "gradient"):
        raise ValueError(f"unknown constant-optimization method {co_method!r}")
    rng = RngStream(cfg.seed)
    pop = initialize_population(cfg, ops, rng.split("init"))
    front = ParetoFront()
    history: list[GenStats] = []
    for g in range(cfg.generations + 1):
        if g > 0:
            pop = evolve_generation(pop, cfg, ops, rng.split("gen", g))
        pop = batch_evaluate(pop, fitness, workers=workers)
        if co_method != "none" and cfg.co_candidates > 0:
            pop = apply_constant_optimization(
                pop, cfg, fitness, method=co_method, rng=rng.split("co", g),
            )
        for ind in pop:
            front.update(ind)
        history.append(_population_stats(pop, g))
    best = min(pop, key=_rank_key)
    return front, best, history
