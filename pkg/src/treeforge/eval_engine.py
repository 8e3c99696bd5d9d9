"""Population fitness evaluation.

A fitness function maps an Individual to a float where lower is better. It
must be pure, safe to call concurrently, and should return +inf (never NaN)
for invalid candidates; the engine coerces NaN and exceptions to +inf as a
backstop. ``batch_evaluate`` is the concurrency boundary of the engine:
results are collected in population order, so the fitness vector is
identical whatever the worker count.

A fitness object may optionally provide ``evaluate_population(individuals)``
returning a score array; when present it is used as a vectorized fast path
(it must produce exactly the per-individual scores).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .expr import NodeMatrix, OperatorSet, evaluate_batch


def coerce_fitness(x) -> float:
    f = float(x)
    return math.inf if math.isnan(f) else f


def _safe_call(fitness, ind) -> float:
    try:
        return coerce_fitness(fitness(ind))
    except Exception:
        return math.inf


def batch_evaluate(pop, fitness, workers: int = 1):
    """Assign a fitness to every individual that does not have one yet.

    Individuals carrying a finite fitness (elites, plain copies) are left
    untouched: fitness functions are pure, so re-evaluation cannot change
    the value. Failures are isolated per individual as +inf.
    """
    pending = [i for i, ind in enumerate(pop) if not math.isfinite(ind.fitness)]
    if not pending:
        return pop
    if hasattr(fitness, "evaluate_population"):
        scores = fitness.evaluate_population([pop[i] for i in pending])
        for i, s in zip(pending, scores):
            pop[i].fitness = coerce_fitness(s)
        return pop
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            scores = list(ex.map(lambda i: _safe_call(fitness, pop[i]), pending))
    else:
        scores = [_safe_call(fitness, pop[i]) for i in pending]
    for i, s in zip(pending, scores):
        pop[i].fitness = s
    return pop


def evaluate_on_dataset(m: NodeMatrix, ops: OperatorSet, X, Y) -> float:
    """Mean absolute error of the tree's predictions against Y; any
    non-finite prediction makes the candidate invalid (+inf)."""
    Y = np.asarray(Y, dtype=np.float64)
    pred = evaluate_batch(m, ops, X)
    if not np.all(np.isfinite(pred)):
        return math.inf
    return float(np.mean(np.abs(pred - Y)))
