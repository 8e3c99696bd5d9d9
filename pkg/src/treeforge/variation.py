"""Tree generation and the matrix-space reproduction operators.

Crossover and mutation edit node matrices directly. Because every matrix in
the engine keeps post-order layout, the subtree under row r occupies the
contiguous block [r - size(r) + 1, r], so subtree surgery is a row splice
plus an index shift for everything behind the splice point.
"""

from __future__ import annotations

import numpy as np

from .config import GpConfig, MUTATION_KINDS
from .expr import (
    CONST_IDX,
    FIRST_VAR_IDX,
    NodeMatrix,
    OperatorSet,
    RecursiveTree,
    encode,
    matrix_depth,
    node_depths,
    subtree_sizes,
)
from .rng import RngStream


# --------------------------------------------------------------------------
# random trees
# --------------------------------------------------------------------------

def random_leaf(ops: OperatorSet, rng: RngStream, const_range) -> RecursiveTree:
    # Variable vs constant chosen uniformly; then uniform within the pool.
    if rng.random() < 0.5:
        return RecursiveTree.var_node(rng.integers(0, ops.num_variables))
    lo, hi = const_range
    return RecursiveTree.const(rng.uniform(lo, hi))


def random_tree(
    ops: OperatorSet,
    depth: int,
    method: str,
    rng: RngStream,
    const_range=(-5.0, 5.0),
    max_nodes: int | None = None,
) -> RecursiveTree:
    """Grow/full tree of at most ``depth`` levels (and ``max_nodes`` nodes).

    'full' places operators on every level above the last; 'grow' flips a
    fair coin between operator and leaf at each interior level.
    """
    if method not in ("grow", "full"):
        raise ValueError(f"unknown init method {method!r}")
    operators = ops.operator_indices

    def build(levels_left: int, budget: int) -> RecursiveTree:
        # A binary operator needs room for itself plus two leaves.
        can_op = bool(operators) and levels_left > 1 and budget >= 3
        if not can_op:
            return random_leaf(ops, rng, const_range)
        if method == "grow" and rng.random() < 0.5:
            return random_leaf(ops, rng, const_range)
        idx = operators[rng.integers(0, len(operators))]
        if ops.arity_of(idx) == 1:
            child = build(levels_left - 1, budget - 1)
            return RecursiveTree(kind="op", op=ops.entries[idx].name, children=(child,))
        left = build(levels_left - 1, (budget - 1) // 2)
        right = build(levels_left - 1, budget - 1 - left.size())
        return RecursiveTree(kind="op", op=ops.entries[idx].name, children=(left, right))

    budget = max_nodes if max_nodes is not None else 2 ** depth - 1
    return build(depth, budget)


def random_matrix(
    ops: OperatorSet,
    depth: int,
    method: str,
    rng: RngStream,
    cfg: GpConfig,
) -> NodeMatrix:
    tree = random_tree(ops, depth, method, rng, cfg.const_init_range)
    return encode(tree, ops, cfg.row_capacity)


# --------------------------------------------------------------------------
# splice machinery
# --------------------------------------------------------------------------

Block = tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]


def extract_block(m: NodeMatrix, row: int) -> Block:
    """Copy the subtree rooted at ``row`` with child indices rebased to 0."""
    size = int(subtree_sizes(m)[row])
    lo = row - size + 1
    func = m.func[lo:row + 1].copy()
    c1 = m.child1[lo:row + 1].copy()
    c2 = m.child2[lo:row + 1].copy()
    val = m.value[lo:row + 1].copy()
    c1 = np.where(c1 >= 0, c1 - lo, c1)
    c2 = np.where(c2 >= 0, c2 - lo, c2)
    return func, c1, c2, val


def tree_block(tree: RecursiveTree, ops: OperatorSet) -> Block:
    m = encode(tree, ops, row_capacity=tree.size())
    return m.func.copy(), m.child1.copy(), m.child2.copy(), m.value.copy()


def splice(
    m: NodeMatrix,
    row: int,
    block: Block,
    row_capacity: int,
    max_depth: int,
) -> NodeMatrix | None:
    """Replace the subtree at ``row`` by ``block``; None if the result would
    exceed the row capacity or depth limit."""
    n = m.n_active
    size_old = int(subtree_sizes(m)[row])
    lo = row - size_old + 1
    bf, bc1, bc2, bv = block
    size_new = bf.shape[0]
    n_new = n - size_old + size_new
    if n_new > row_capacity:
        return None
    delta = size_new - size_old

    func = np.zeros(row_capacity, dtype=np.int32)
    c1 = np.zeros(row_capacity, dtype=np.int32)
    c2 = np.zeros(row_capacity, dtype=np.int32)
    val = np.zeros(row_capacity, dtype=np.float64)

    func[:lo] = m.func[:lo]
    c1[:lo] = m.child1[:lo]
    c2[:lo] = m.child2[:lo]
    val[:lo] = m.value[:lo]

    func[lo:lo + size_new] = bf
    c1[lo:lo + size_new] = np.where(bc1 >= 0, bc1 + lo, bc1)
    c2[lo:lo + size_new] = np.where(bc2 >= 0, bc2 + lo, bc2)
    val[lo:lo + size_new] = bv

    tail = slice(row + 1, n)
    func[lo + size_new:n_new] = m.func[tail]
    tc1 = m.child1[tail]
    tc2 = m.child2[tail]
    # Any reference at or past the splice point shifts with the new size;
    # the old subtree root reference lands exactly on the new root.
    c1[lo + size_new:n_new] = np.where(tc1 >= lo, tc1 + delta, tc1)
    c2[lo + size_new:n_new] = np.where(tc2 >= lo, tc2 + delta, tc2)
    val[lo + size_new:n_new] = m.value[tail]

    out = NodeMatrix(func, c1, c2, val)
    if matrix_depth(out) > max_depth:
        return None
    return out


# --------------------------------------------------------------------------
# crossover
# --------------------------------------------------------------------------

def crossover_at(
    a: NodeMatrix,
    b: NodeMatrix,
    node_a: int,
    node_b: int,
    row_capacity: int,
    max_depth: int,
) -> tuple[NodeMatrix, NodeMatrix]:
    """Swap the subtrees rooted at the given rows; oversized children are
    replaced by a copy of their receiving parent (rejected swap)."""
    block_a = extract_block(a, node_a)
    block_b = extract_block(b, node_b)
    child1 = splice(a, node_a, block_b, row_capacity, max_depth)
    child2 = splice(b, node_b, block_a, row_capacity, max_depth)
    return (child1 if child1 is not None else a,
            child2 if child2 is not None else b)


def crossover(
    a: NodeMatrix,
    b: NodeMatrix,
    rng: RngStream,
    row_capacity: int | None = None,
    max_depth: int = 10,
) -> tuple[NodeMatrix, NodeMatrix]:
    """Uniform random node in each parent, subtrees swapped."""
    if row_capacity is None:
        row_capacity = max(a.capacity, b.capacity)
    node_a = rng.integers(0, a.n_active)
    node_b = rng.integers(0, b.n_active)
    return crossover_at(a, b, node_a, node_b, row_capacity, max_depth)


# --------------------------------------------------------------------------
# mutation
# --------------------------------------------------------------------------

def _replace_row_func(m: NodeMatrix, row: int, new_func: int) -> NodeMatrix:
    func = m.func.copy()
    func[row] = new_func
    return NodeMatrix(func, m.child1.copy(), m.child2.copy(), m.value.copy())


def _replace_row_value(m: NodeMatrix, row: int, new_value: float) -> NodeMatrix:
    val = m.value.copy()
    val[row] = new_value
    return NodeMatrix(m.func.copy(), m.child1.copy(), m.child2.copy(), val)


def _swappable_operator_rows(m: NodeMatrix, ops: OperatorSet) -> list[int]:
    rows = []
    for r in range(m.n_active):
        f = int(m.func[r])
        if f in ops.operator_indices and len(ops.operators_with_arity(ops.arity_of(f))) >= 2:
            rows.append(r)
    return rows


def _insertable_rows(m: NodeMatrix, ops: OperatorSet, cfg: GpConfig) -> list[int]:
    """Rows whose subtree can be wrapped in a new operator within limits."""
    if not ops.operator_indices:
        return []
    n = m.n_active
    need = 2 if any(ops.arity_of(i) == 2 for i in ops.operator_indices) else 1
    if n + need > cfg.row_capacity:
        return []
    depths = node_depths(m)
    # depth above row r = longest chain from root down to r
    above = np.zeros(n, dtype=np.int64)
    for r in range(n - 1, -1, -1):
        for k in (int(m.child1[r]), int(m.child2[r])):
            if k != -1:
                above[k] = above[r] + 1
    return [r for r in range(n) if above[r] + 1 + depths[r] <= cfg.max_depth]


def _applicable_kinds(m: NodeMatrix, ops: OperatorSet, cfg: GpConfig) -> dict[str, object]:
    const_rows = [r for r in range(m.n_active) if m.func[r] == CONST_IDX]
    var_rows = [
        r for r in range(m.n_active)
        if FIRST_VAR_IDX <= m.func[r] < FIRST_VAR_IDX + ops.num_variables
    ]
    op_rows = [r for r in range(m.n_active) if int(m.func[r]) in ops.operator_indices]
    table: dict[str, object] = {"subtree_replace": list(range(m.n_active))}
    swap_rows = _swappable_operator_rows(m, ops)
    if swap_rows:
        table["operator_swap"] = swap_rows
    if const_rows:
        table["constant_jitter"] = const_rows
    if var_rows and ops.num_variables >= 2:
        table["variable_swap"] = var_rows
    insert_rows = _insertable_rows(m, ops, cfg)
    if insert_rows:
        table["node_insert"] = insert_rows
    if op_rows:
        table["node_delete"] = op_rows
    return table


def mutate(m: NodeMatrix, ops: OperatorSet, cfg: GpConfig, rng: RngStream) -> NodeMatrix:
    """Apply one mutation, sampled by cfg.mutation_weights among the kinds
    applicable to this tree. The output respects row capacity and max depth."""
    table = _applicable_kinds(m, ops, cfg)
    kinds = [k for k in MUTATION_KINDS if k in table and cfg.mutation_weights.get(k, 0.0) > 0]
    if not kinds:
        kinds = ["subtree_replace"]
    weights = np.array([cfg.mutation_weights.get(k, 1.0) for k in kinds], dtype=np.float64)
    cum = np.cumsum(weights / weights.sum())
    kind = kinds[int(np.searchsorted(cum, rng.random(), side="right").clip(0, len(kinds) - 1))]
    rows = table.get(kind, list(range(m.n_active)))
    row = rows[rng.integers(0, len(rows))]

    if kind == "operator_swap":
        f = int(m.func[row])
        options = [i for i in ops.operators_with_arity(ops.arity_of(f)) if i != f]
        return _replace_row_func(m, row, options[rng.integers(0, len(options))])

    if kind == "constant_jitter":
        factor = float(np.exp(rng.normal(0.0, 0.5)))
        return _replace_row_value(m, row, float(m.value[row]) * factor)

    if kind == "variable_swap":
        current = int(m.func[row])
        options = [
            FIRST_VAR_IDX + v for v in range(ops.num_variables)
            if FIRST_VAR_IDX + v != current
        ]
        return _replace_row_func(m, row, options[rng.integers(0, len(options))])

    if kind == "node_delete":
        kids = [k for k in (int(m.child1[row]), int(m.child2[row])) if k != -1]
        child = kids[rng.integers(0, len(kids))]
        out = splice(m, row, extract_block(m, child), cfg.row_capacity, cfg.max_depth)
        return out if out is not None else m

    if kind == "node_insert":
        idx = ops.operator_indices[rng.integers(0, len(ops.operator_indices))]
        bf, bc1, bc2, bv = extract_block(m, row)
        size = bf.shape[0]
        if ops.arity_of(idx) == 1:
            func = np.append(bf, np.int32(idx))
            c1 = np.append(bc1, np.int32(size - 1))
            c2 = np.append(bc2, np.int32(-1))
            val = np.append(bv, 0.0)
        else:
            lf, lc1, lc2, lv = tree_block(random_leaf(ops, rng, cfg.const_init_range), ops)
            if rng.random() < 0.5:  # existing subtree on the left, new leaf on the right
                func = np.concatenate([bf, lf, [idx]]).astype(np.int32)
                c1 = np.concatenate([bc1, lc1, [size - 1]]).astype(np.int32)
                c2 = np.concatenate([bc2, lc2, [size]]).astype(np.int32)
                val = np.concatenate([bv, lv, [0.0]])
            else:
                func = np.concatenate([lf, bf, [idx]]).astype(np.int32)
                c1 = np.concatenate([lc1, np.where(bc1 >= 0, bc1 + 1, bc1), [0]]).astype(np.int32)
                c2 = np.concatenate([lc2, np.where(bc2 >= 0, bc2 + 1, bc2), [size]]).astype(np.int32)
                val = np.concatenate([lv, bv, [0.0]])
        out = splice(m, row, (func, c1, c2, val), cfg.row_capacity, cfg.max_depth)
        return out if out is not None else m

    # subtree_replace: a fresh random subtree of depth <= 3 that fits.
    size_here = int(subtree_sizes(m)[row])
    budget = cfg.row_capacity - m.n_active + size_here
    replacement = random_tree(
        ops, depth=3, method="grow", rng=rng,
        const_range=cfg.const_init_range, max_nodes=budget,
    )
    out = splice(m, row, tree_block(replacement, ops), cfg.row_capacity, cfg.max_depth)
    if out is None:
        leaf = random_leaf(ops, rng, cfg.const_init_range)
        out = splice(m, row, tree_block(leaf, ops), cfg.row_capacity, cfg.max_depth)
    return out if out is not None else m
