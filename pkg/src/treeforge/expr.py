"""Flat matrix encoding of expression trees and their interpreters.

A tree lives in an R x 4 table: one row per node holding the node's function
index (column 0), the row indices of its two children (columns 1-2, sentinel
-1 when absent) and a value slot (column 3). The value slot stores the
constant for constant nodes and receives the node's computed value during
execution. Active rows form a post-order prefix: leaves come first, children
always sit at strictly lower row indices than their parent, and the root
occupies the last active row. All remaining rows are zero.

Function indices: 0 is the empty marker, 1 the constant marker, indices
2 .. 2+k-1 the k input variables, and the operators follow.

Operators are unprotected: division by zero, log of a non-positive number
and friends produce IEEE infinities/NaNs which propagate to the caller.
``pow`` is made real-valued for negative bases via sign(a) * |a|**b when the
exponent is not an integer; integer exponents use the exact power.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

DEFAULT_ROWS = 32

EMPTY_IDX = 0
CONST_IDX = 1
FIRST_VAR_IDX = 2

KIND_EMPTY = "empty"
KIND_CONST = "constant"
KIND_VAR = "variable"
KIND_UNARY = "unary-op"
KIND_BINARY = "binary-op"


class CapacityError(ValueError):
    """Tree does not fit the requested row capacity."""

    def __init__(self, required: int, capacity: int):
        super().__init__(f"tree needs {required} rows but capacity is {capacity}")
        self.required = required
        self.capacity = capacity


class InvalidMatrixError(ValueError):
    """A node matrix violates a structural invariant."""


# --------------------------------------------------------------------------
# operator catalog
# --------------------------------------------------------------------------

def _pow_impl(a, b):
    # Real-valued power: exact for integer exponents, sign-safe otherwise.
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    integer_exp = np.isfinite(b) & (b == np.floor(b))
    plain = np.power(a, b)
    signed = np.sign(a) * np.power(np.abs(a), b)
    return np.where(integer_exp, plain, signed)


_CATALOG: dict[str, tuple[int, object]] = {
    "+": (2, np.add),
    "-": (2, np.subtract),
    "*": (2, np.multiply),
    "/": (2, np.divide),
    "pow": (2, _pow_impl),
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "log": (1, np.log),
    "exp": (1, np.exp),
    "sqrt": (1, np.sqrt),
    "tanh": (1, np.tanh),
}

_ALIASES = {"−": "-", "×": "*", "÷": "/", "power": "pow", "^": "pow", "**": "pow"}

_INFIX_SYMBOL = {"+": "+", "-": "-", "*": "*", "/": "/", "pow": "**"}


def canonical_operator_name(name: str) -> str:
    name = _ALIASES.get(name, name)
    if name not in _CATALOG:
        known = ", ".join(sorted(_CATALOG))
        raise ValueError(f"unknown operator {name!r}; supported: {known}")
    return name


def operator_arity(name: str) -> int:
    return _CATALOG[canonical_operator_name(name)][0]


# --------------------------------------------------------------------------
# operator set
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class OpEntry:
    name: str
    kind: str
    arity: int


@dataclass(frozen=True)
class OperatorSet:
    """Immutable mapping of empty/constant/variable/operator symbols to indices."""

    entries: tuple[OpEntry, ...]
    num_variables: int

    @cached_property
    def index_of(self) -> dict[str, int]:
        return {e.name: i for i, e in enumerate(self.entries)}

    @cached_property
    def arities(self) -> np.ndarray:
        return np.array([e.arity for e in self.entries], dtype=np.int32)

    @cached_property
    def operator_indices(self) -> tuple[int, ...]:
        return tuple(
            i for i, e in enumerate(self.entries) if e.kind in (KIND_UNARY, KIND_BINARY)
        )

    @cached_property
    def variable_names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.entries[FIRST_VAR_IDX:FIRST_VAR_IDX + self.num_variables])

    def kind_of(self, index: int) -> str:
        return self.entries[index].kind

    def arity_of(self, index: int) -> int:
        return self.entries[index].arity

    def impl_of(self, index: int):
        return _CATALOG[self.entries[index].name][1]

    def var_number(self, index: int) -> int:
        """Entry index of a variable row -> 0-based input column."""
        return index - FIRST_VAR_IDX

    def operators_with_arity(self, arity: int) -> tuple[int, ...]:
        return tuple(i for i in self.operator_indices if self.entries[i].arity == arity)

    @property
    def size(self) -> int:
        return len(self.entries)


def build_operator_set(
    operators,
    num_variables: int,
    variable_names=None,
) -> OperatorSet:
    """Lay out the index space: [empty, constant, variables..., operators...].

    Operator names come from the supported catalog (+, -, *, /, pow, sin,
    cos, log, exp, sqrt, tanh; unicode and "power" spellings accepted).
    """
    if num_variables < 1:
        raise ValueError("num_variables must be >= 1")
    if variable_names is None:
        variable_names = tuple(f"y{i + 1}" for i in range(num_variables))
    else:
        variable_names = tuple(variable_names)
        if len(variable_names) != num_variables:
            raise ValueError("variable_names length must equal num_variables")

    entries = [OpEntry("", KIND_EMPTY, 0), OpEntry("c", KIND_CONST, 0)]
    entries += [OpEntry(n, KIND_VAR, 0) for n in variable_names]
    seen = set()
    for raw in operators:
        name = canonical_operator_name(raw)
        if name in seen:
            raise ValueError(f"duplicate operator {raw!r}")
        seen.add(name)
        arity = _CATALOG[name][0]
        entries.append(OpEntry(name, KIND_BINARY if arity == 2 else KIND_UNARY, arity))
    names = [e.name for e in entries]
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise ValueError(f"symbol names collide: {dup}")
    return OperatorSet(entries=tuple(entries), num_variables=num_variables)


# --------------------------------------------------------------------------
# recursive reference representation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RecursiveTree:
    """Plain recursive tree, used as the correctness oracle and for display."""

    kind: str  # "const" | "var" | "op"
    op: str = ""
    value: float = 0.0
    var: int = 0
    children: tuple["RecursiveTree", ...] = ()

    @staticmethod
    def const(value: float) -> "RecursiveTree":
        return RecursiveTree(kind="const", value=float(value))

    @staticmethod
    def var_node(index: int) -> "RecursiveTree":
        return RecursiveTree(kind="var", var=int(index))

    @staticmethod
    def node(op: str, *children: "RecursiveTree") -> "RecursiveTree":
        name = canonical_operator_name(op)
        arity = _CATALOG[name][0]
        if len(children) != arity:
            raise ValueError(f"{name} takes {arity} children, got {len(children)}")
        return RecursiveTree(kind="op", op=name, children=tuple(children))

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)

    def depth(self) -> int:
        if not self.children:
            return 1
        return 1 + max(c.depth() for c in self.children)


def evaluate_oracle(tree: RecursiveTree, inputs) -> float:
    """Reference recursive interpreter; same non-finite semantics as evaluate."""
    with np.errstate(all="ignore"):
        return float(_oracle_rec(tree, np.asarray(inputs, dtype=np.float64)))


def _oracle_rec(t: RecursiveTree, inputs: np.ndarray):
    if t.kind == "const":
        return np.float64(t.value)
    if t.kind == "var":
        return inputs[t.var]
    impl = _CATALOG[t.op][1]
    args = [_oracle_rec(c, inputs) for c in t.children]
    return impl(*args)


# --------------------------------------------------------------------------
# node matrix
# --------------------------------------------------------------------------

class NodeMatrix:
    """One tree as an R x 4 table (func, child1, child2, value); immutable."""

    __slots__ = ("func", "child1", "child2", "value")

    def __init__(self, func, child1, child2, value):
        self.func = np.ascontiguousarray(func, dtype=np.int32)
        self.child1 = np.ascontiguousarray(child1, dtype=np.int32)
        self.child2 = np.ascontiguousarray(child2, dtype=np.int32)
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        for arr in (self.func, self.child1, self.child2, self.value):
            arr.setflags(write=False)

    @property
    def capacity(self) -> int:
        return self.func.shape[0]

    @property
    def n_active(self) -> int:
        return int(np.count_nonzero(self.func))

    def table(self) -> np.ndarray:
        """The logical R x 4 float table (for display and debugging)."""
        return np.column_stack(
            [self.func.astype(np.float64), self.child1.astype(np.float64),
             self.child2.astype(np.float64), self.value]
        )

    def tobytes(self) -> bytes:
        return b"".join(a.tobytes() for a in (self.func, self.child1, self.child2, self.value))

    def __eq__(self, other):
        if not isinstance(other, NodeMatrix):
            return NotImplemented
        return (
            np.array_equal(self.func, other.func)
            and np.array_equal(self.child1, other.child1)
            and np.array_equal(self.child2, other.child2)
            and np.array_equal(self.value, other.value)
        )

    __hash__ = None

    def __repr__(self):
        return f"NodeMatrix(n_active={self.n_active}, capacity={self.capacity})"


def encode(tree: RecursiveTree, ops: OperatorSet, row_capacity: int = DEFAULT_ROWS) -> NodeMatrix:
    """Place a tree into a matrix post-order: leaves first, root last."""
    n = tree.size()
    if n > row_capacity:
        raise CapacityError(required=n, capacity=row_capacity)
    func = np.zeros(row_capacity, dtype=np.int32)
    child1 = np.zeros(row_capacity, dtype=np.int32)
    child2 = np.zeros(row_capacity, dtype=np.int32)
    value = np.zeros(row_capacity, dtype=np.float64)
    cursor = 0

    def place(t: RecursiveTree) -> int:
        nonlocal cursor
        kids = [place(c) for c in t.children]
        r = cursor
        cursor += 1
        if t.kind == "const":
            func[r] = CONST_IDX
            value[r] = t.value
        elif t.kind == "var":
            if t.var >= ops.num_variables:
                raise ValueError(f"variable index {t.var} out of range")
            func[r] = FIRST_VAR_IDX + t.var
        else:
            func[r] = ops.index_of[t.op]
        child1[r] = kids[0] if len(kids) >= 1 else -1
        child2[r] = kids[1] if len(kids) >= 2 else -1
        return r

    place(tree)
    return NodeMatrix(func, child1, child2, value)


def validate(m: NodeMatrix, ops: OperatorSet) -> str | None:
    """Check every structural invariant; return None or the first violation."""
    func, c1, c2 = m.func, m.child1, m.child2
    capacity = m.capacity
    active = func != EMPTY_IDX
    n = int(active.sum())
    if n == 0:
        return "no active root: matrix is all empty"
    if not np.all(active[:n]):
        first = int(np.argmin(active))
        return f"row {first}: active rows are not a contiguous prefix"
    for r in range(n, capacity):
        if func[r] or c1[r] or c2[r] or m.value[r]:
            return f"row {r}: inactive row is not all zero"
    refs = np.zeros(n, dtype=np.int64)
    for r in range(n):
        f = int(func[r])
        if f < 0 or f >= ops.size:
            return f"row {r}: function index {f} out of range"
        arity = ops.arity_of(f)
        kids = [int(c1[r]), int(c2[r])]
        present = [k for k in kids if k != -1]
        if len(present) != arity:
            return f"row {r}: arity mismatch ({len(present)} children, arity {arity})"
        if arity == 1 and kids[1] != -1:
            return f"row {r}: unary node with second child"
        if arity >= 1 and kids[0] == -1:
            return f"row {r}: missing first child"
        for k in present:
            if k >= r:
                return f"row {r}: forward child reference to row {k}"
            if k < 0:
                return f"row {r}: negative child reference {k}"
            refs[k] += 1
        if f == CONST_IDX and not np.isfinite(m.value[r]):
            return f"row {r}: non-finite constant"
    for r in range(n - 1):
        if refs[r] != 1:
            return f"row {r}: referenced by {int(refs[r])} parents (expected 1)"
    if refs[n - 1] != 0:
        return f"row {n - 1}: root is referenced by a parent"
    return None


def decode(m: NodeMatrix, ops: OperatorSet) -> RecursiveTree:
    """Rebuild the recursive tree; raises InvalidMatrixError on malformed input."""
    violation = validate(m, ops)
    if violation is not None:
        raise InvalidMatrixError(violation)

    def build(r: int) -> RecursiveTree:
        f = int(m.func[r])
        kind = ops.kind_of(f)
        if kind == KIND_CONST:
            return RecursiveTree.const(m.value[r])
        if kind == KIND_VAR:
            return RecursiveTree.var_node(ops.var_number(f))
        kids = [build(int(m.child1[r]))]
        if ops.arity_of(f) == 2:
            kids.append(build(int(m.child2[r])))
        return RecursiveTree(kind="op", op=ops.entries[f].name, children=tuple(kids))

    return build(m.n_active - 1)


def complexity(m: NodeMatrix) -> int:
    """Number of active (non-empty) rows."""
    return m.n_active


def subtree_sizes(m: NodeMatrix) -> np.ndarray:
    """Per active row, the node count of the subtree rooted there."""
    n = m.n_active
    sizes = np.ones(n, dtype=np.int64)
    for r in range(n):
        for k in (int(m.child1[r]), int(m.child2[r])):
            if k != -1:
                sizes[r] += sizes[k]
    return sizes


def node_depths(m: NodeMatrix) -> np.ndarray:
    """Per active row, the depth of the subtree rooted there (leaf = 1)."""
    n = m.n_active
    depths = np.ones(n, dtype=np.int64)
    for r in range(n):
        for k in (int(m.child1[r]), int(m.child2[r])):
            if k != -1:
                depths[r] = max(depths[r], 1 + depths[k])
    return depths


def matrix_depth(m: NodeMatrix) -> int:
    return int(node_depths(m)[m.n_active - 1])


# --------------------------------------------------------------------------
# interpreters
# --------------------------------------------------------------------------

def evaluate_batch(m: NodeMatrix, ops: OperatorSet, X, row_visits=None) -> np.ndarray:
    """Solve the matrix bottom-to-top over a batch of input rows.

    X has shape (n, num_variables); returns the root row's value slot for
    each of the n samples. Non-finite intermediates propagate unmasked.
    The stored matrix is never written to: values land in a scratch copy.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != ops.num_variables:
        raise ValueError(f"inputs must have shape (n, {ops.num_variables})")
    n_active = m.n_active
    n_samples = X.shape[0]
    scratch = np.zeros((n_active, n_samples), dtype=np.float64)
    func, c1, c2, val = m.func, m.child1, m.child2, m.value
    with np.errstate(all="ignore"):
        for r in range(n_active):
            f = int(func[r])
            if row_visits is not None:
                row_visits[r] += 1
            if f == CONST_IDX:
                scratch[r] = val[r]
            elif ops.kind_of(f) == KIND_VAR:
                scratch[r] = X[:, f - FIRST_VAR_IDX]
            else:
                impl = ops.impl_of(f)
                if ops.arity_of(f) == 1:
                    scratch[r] = impl(scratch[c1[r]])
                else:
                    scratch[r] = impl(scratch[c1[r]], scratch[c2[r]])
    return scratch[n_active - 1]


def evaluate(m: NodeMatrix, ops: OperatorSet, inputs) -> float:
    """Evaluate on a single input vector (length num_variables)."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 1 or inputs.shape[0] != ops.num_variables:
        raise ValueError(f"expected {ops.num_variables} input values")
    return float(evaluate_batch(m, ops, inputs[None, :])[0])


def constant_rows(m: NodeMatrix) -> np.ndarray:
    """Row indices of constant nodes, in row order."""
    return np.flatnonzero(m.func == CONST_IDX)


def evaluate_const_variants(m: NodeMatrix, ops: OperatorSet, X, const_values) -> np.ndarray:
    """Evaluate one structure under many constant assignments at once.

    const_values has shape (V, n_const) aligned with ``constant_rows(m)``;
    the result has shape (V, n_samples). Applying the same ufuncs
    elementwise keeps every entry bit-identical to a plain evaluate_batch
    call with those constants injected.
    """
    X = np.asarray(X, dtype=np.float64)
    const_values = np.asarray(const_values, dtype=np.float64)
    rows = constant_rows(m)
    if const_values.ndim != 2 or const_values.shape[1] != rows.shape[0]:
        raise ValueError(f"const_values must have shape (V, {rows.shape[0]})")
    n_active = m.n_active
    variants, n_samples = const_values.shape[0], X.shape[0]
    col_of = {int(r): j for j, r in enumerate(rows)}
    scratch = np.zeros((n_active, variants, n_samples), dtype=np.float64)
    func, c1, c2, val = m.func, m.child1, m.child2, m.value
    with np.errstate(all="ignore"):
        for r in range(n_active):
            f = int(func[r])
            if f == CONST_IDX:
                scratch[r] = const_values[:, col_of[r]][:, None]
            elif ops.kind_of(f) == KIND_VAR:
                scratch[r] = X[:, f - FIRST_VAR_IDX][None, :]
            else:
                impl = ops.impl_of(f)
                if ops.arity_of(f) == 1:
                    scratch[r] = impl(scratch[c1[r]])
                else:
                    scratch[r] = impl(scratch[c1[r]], scratch[c2[r]])
    return scratch[n_active - 1]


class MatrixStack:
    """Column-stacked population of matrices for lockstep evaluation."""

    __slots__ = ("func", "child1", "child2", "value", "root_row", "max_active")

    def __init__(self, matrices):
        self.func = np.stack([m.func for m in matrices])
        self.child1 = np.stack([m.child1 for m in matrices])
        self.child2 = np.stack([m.child2 for m in matrices])
        self.value = np.stack([m.value for m in matrices])
        n_active = np.count_nonzero(self.func, axis=1)
        self.root_row = (n_active - 1).astype(np.int64)
        self.max_active = int(n_active.max())

    def repeat(self, k: int) -> "MatrixStack":
        """Each matrix repeated k times consecutively (for multi-rollout eval)."""
        out = MatrixStack.__new__(MatrixStack)
        out.func = np.repeat(self.func, k, axis=0)
        out.child1 = np.repeat(self.child1, k, axis=0)
        out.child2 = np.repeat(self.child2, k, axis=0)
        out.value = np.repeat(self.value, k, axis=0)
        out.root_row = np.repeat(self.root_row, k)
        out.max_active = self.max_active
        return out

    def __len__(self):
        return self.func.shape[0]


def evaluate_stacked(stack: MatrixStack, ops: OperatorSet, X) -> np.ndarray:
    """Evaluate every stacked matrix on its own input row, in row lockstep.

    This is the select-from-all-ops strategy: per row, every operator in
    the set is applied and the relevant value is picked by function index.
    X has shape (P, num_variables); returns shape (P,).
    """
    X = np.asarray(X, dtype=np.float64)
    P = len(stack)
    units = np.arange(P)
    op_table = [(i, ops.impl_of(i), ops.arity_of(i)) for i in ops.operator_indices]
    scratch = np.zeros((stack.max_active, P), dtype=np.float64)
    with np.errstate(all="ignore"):
        for r in range(stack.max_active):
            f = stack.func[:, r]
            a = scratch[np.maximum(stack.child1[:, r], 0), units]
            b = scratch[np.maximum(stack.child2[:, r], 0), units]
            var_col = np.clip(f - FIRST_VAR_IDX, 0, ops.num_variables - 1)
            out = np.where(f == CONST_IDX, stack.value[:, r], 0.0)
            is_var = (f >= FIRST_VAR_IDX) & (f < FIRST_VAR_IDX + ops.num_variables)
            out = np.where(is_var, X[units, var_col], out)
            for idx, impl, arity in op_table:
                res = impl(a) if arity == 1 else impl(a, b)
                out = np.where(f == idx, res, out)
            scratch[r] = out
    return scratch[stack.root_row, units]


# --------------------------------------------------------------------------
# display
# --------------------------------------------------------------------------

def format_constant(v: float, const_precision: int = 6) -> str:
    if not np.isfinite(v):
        return repr(float(v))
    return repr(float(f"%.{const_precision}g" % v))


def to_infix(m: NodeMatrix, ops: OperatorSet, const_precision: int = 6) -> str:
    """Fully parenthesized infix rendering; no algebraic simplification."""

    def render(r: int) -> str:
        f = int(m.func[r])
        kind = ops.kind_of(f)
        if kind == KIND_CONST:
            return format_constant(m.value[r], const_precision)
        if kind == KIND_VAR:
            return ops.entries[f].name
        name = ops.entries[f].name
        if ops.arity_of(f) == 1:
            return f"{name}({render(int(m.child1[r]))})"
        left = render(int(m.child1[r]))
        right = render(int(m.child2[r]))
        return f"({left} {_INFIX_SYMBOL[name]} {right})"

    return render(m.n_active - 1)


def tree_to_infix(tree: RecursiveTree, ops: OperatorSet, const_precision: int = 6) -> str:
    return to_infix(encode(tree, ops, row_capacity=tree.size()), ops, const_precision)
