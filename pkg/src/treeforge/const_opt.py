"""Optimization of the numeric constants inside candidate trees.

Two methods: numeric-gradient descent with Adam (central finite differences
through the opaque fitness callable) and a small annealed genetic algorithm.
Both touch only the value slots of constant rows; tree structure is
bit-identical before and after, and an individual's fitness never worsens.

A fitness object may provide ``const_variant_scores(ind, values)`` scoring a
whole (V, n_const) block of constant assignments at once; the GA uses it as
a vectorized fast path when present.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import GpConfig
from .expr import CONST_IDX, NodeMatrix
from .rng import RngStream


@dataclass
class ConstVector:
    """The constants of an individual, flattened in (tree, row) order."""

    values: np.ndarray
    locations: tuple[tuple[int, int], ...]

    def __len__(self):
        return self.values.shape[0]


def extract_constants(ind) -> ConstVector:
    values = []
    locations = []
    for t, m in enumerate(ind.trees):
        for r in np.flatnonzero(m.func == CONST_IDX):
            values.append(float(m.value[r]))
            locations.append((t, int(r)))
    return ConstVector(np.array(values, dtype=np.float64), tuple(locations))


def inject_constants(ind, cv: ConstVector, values=None):
    """New individual with the given constant values; structure is shared."""
    from .evolution import Individual  # local import to avoid a cycle

    values = cv.values if values is None else np.asarray(values, dtype=np.float64)
    if values.shape[0] != len(cv.locations):
        raise ValueError("constant vector length mismatch")
    new_vals = [m.value.copy() for m in ind.trees]
    for (t, r), v in zip(cv.locations, values):
        new_vals[t][r] = v
    trees = tuple(
        NodeMatrix(m.func, m.child1, m.child2, new_vals[t])
        for t, m in enumerate(ind.trees)
    )
    return Individual(trees)


@dataclass
class AdamState:
    """Standard Adam with bias correction."""

    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0

    def step(self, grad: np.ndarray) -> np.ndarray:
        """Consume one gradient, return the update to subtract."""
        grad = np.asarray(grad, dtype=np.float64)
        if self.m is None:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _fitness_at(ind, cv: ConstVector, fitness, values) -> float:
    try:
        f = float(fitness(inject_constants(ind, cv, values)))
    except Exception:
        return math.inf
    return math.inf if math.isnan(f) else f


def numeric_gradient(ind, cv: ConstVector, fitness, h=None) -> np.ndarray:
    """Central-difference gradient of the fitness in constant space.

    Component i is (F(c + h_i e_i) - F(c - h_i e_i)) / (2 h_i); components
    where either probe is non-finite are zeroed. The default step is
    1e-4 * max(1, |c_i|) per component.
    """
    base = cv.values
    n = base.shape[0]
    if h is None:
        steps = 1e-4 * np.maximum(1.0, np.abs(base))
    else:
        steps = np.full(n, float(h))
    grad = np.zeros(n)
    for i in range(n):
        up = base.copy()
        dn = base.copy()
        up[i] += steps[i]
        dn[i] -= steps[i]
        f_up = _fitness_at(ind, cv, fitness, up)
        f_dn = _fitness_at(ind, cv, fitness, dn)
        if math.isfinite(f_up) and math.isfinite(f_dn):
            grad[i] = (f_up - f_dn) / (2 * steps[i])
    return grad


def optimize_constants_gradient(ind, fitness, epochs: int, adam: AdamState | None = None):
    """Run ``epochs`` Adam steps on the constants; returns whichever of
    (original, final) scores better, so it never worsens an individual."""
    cv = extract_constants(ind)
    if len(cv) == 0 or epochs <= 0:
        return ind
    if not math.isfinite(ind.fitness):
        return ind
    adam = adam if adam is not None else AdamState()
    values = cv.values.copy()
    for _ in range(epochs):
        here = ConstVector(values, cv.locations)
        grad = numeric_gradient(ind, here, fitness, h=None)
        values = values - adam.step(grad)
    final_f = _fitness_at(ind, cv, fitness, values)
    if final_f < ind.fitness:
        out = inject_constants(ind, cv, values)
        out.fitness = final_f
        return out
    return ind


def _score_variants(ind, cv: ConstVector, fitness, block: np.ndarray) -> np.ndarray:
    if hasattr(fitness, "const_variant_scores"):
        scores = np.asarray(fitness.const_variant_scores(ind, block), dtype=np.float64)
        return np.where(np.isnan(scores), math.inf, scores)
    return np.array([_fitness_at(ind, cv, fitness, row) for row in block])


def optimize_constants_ga(
    ind,
    fitness,
    iterations: int,
    ga_pop: int,
    rng: RngStream,
    sigma_start: float = 1.0,
    sigma_end: float = 0.1,
):
    """Small genetic algorithm over constant vectors.

    Keeps ga_pop Gaussian-jittered variants, retains the best half each
    iteration and refills by jittering survivors; the jitter scale anneals
    linearly from sigma_start to sigma_end. Never worse than the input.
    """
    cv = extract_constants(ind)
    if len(cv) == 0 or iterations <= 0 or ga_pop < 2:
        return ind
    n = len(cv)
    base = cv.values
    block = np.empty((ga_pop, n))
    block[0] = base
    block[1:] = base + rng.gen.normal(0.0, sigma_start, size=(ga_pop - 1, n))
    best_vals = base.copy()
    best_f = math.inf
    n_survivors = max(1, ga_pop // 2)
    for it in range(iterations):
        frac = it / (iterations - 1) if iterations > 1 else 0.0
        sigma = sigma_start + (sigma_end - sigma_start) * frac
        scores = _score_variants(ind, cv, fitness, block)
        order = np.argsort(scores, kind="stable")
        if scores[order[0]] < best_f:
            best_f = float(scores[order[0]])
            best_vals = block[order[0]].copy()
        survivors = block[order[:n_survivors]]
        nxt = np.empty_like(block)
        nxt[:n_survivors] = survivors
        refill = ga_pop - n_survivors
        jitter = rng.gen.normal(0.0, sigma, size=(refill, n))
        for j in range(refill):
            nxt[n_survivors + j] = survivors[j % n_survivors] + jitter[j]
        block = nxt
    final_f = _fitness_at(ind, cv, fitness, best_vals)
    if final_f < ind.fitness:
        out = inject_constants(ind, cv, best_vals)
        out.fitness = final_f
        return out
    return ind


def apply_constant_optimization(pop, cfg: GpConfig, fitness, method: str, rng: RngStream):
    """Optimize the constants of the cfg.co_candidates best individuals;
    everything else is untouched."""
    if cfg.co_candidates <= 0 or method == "none":
        return pop
    order = sorted(range(len(pop)), key=lambda i: (pop[i].fitness, pop[i].complexity, i))
    out = list(pop)
    for rank, idx in enumerate(order[:cfg.co_candidates]):
        ind = pop[idx]
        if method == "ga":
            out[idx] = optimize_constants_ga(
                ind, fitness, cfg.co_steps_per_candidate, cfg.co_ga_pop, rng.split(rank),
            )
        elif method == "gradient":
            out[idx] = optimize_constants_gradient(ind, fitness, cfg.co_steps_per_candidate)
        else:
            raise ValueError(f"unknown constant-optimization method {method!r}")
    return out
