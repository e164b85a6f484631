"""Affine matrix expressions and block-diagonal LMI problems."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from numbers import Real
from typing import Optional

import numpy as np

SYMMETRY_RTOL = 1e-12


class Sign(str, Enum):
    """Sign constraint on a scalar decision variable."""

    FREE = "free"
    NONNEG = "nonnegative"
    POSITIVE = "positive"  # realised as x >= strict_floor


class AffineExpr:
    """Matrix-valued affine function ``const + sum_i x_i * terms[i]``.

    Only the operations needed to assemble LMIs are supported: addition,
    scaling, multiplication by constant matrices, transposition, Kronecker
    products with constants and block concatenation (:func:`bmat`).
    """

    __array_priority__ = 1000

    def __init__(self, const, terms=None):
        self.const = np.atleast_2d(np.asarray(const, dtype=float))
        self.terms = {} if terms is None else dict(terms)

    @classmethod
    def zeros(cls, rows, cols):
        return cls(np.zeros((rows, cols)))

    @property
    def shape(self):
        return self.const.shape

    @property
    def T(self):
        return AffineExpr(self.const.T, {i: c.T for i, c in self.terms.items()})

    def _combine(self, other, sign):
        other = as_expr(other)
        if other.shape != self.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        terms = dict(self.terms)
        for i, c in other.terms.items():
            terms[i] = terms[i] + sign * c if i in terms else sign * c
        return AffineExpr(self.const + sign * other.const, terms)

    def __add__(self, other):
        return self._combine(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __rsub__(self, other):
        return as_expr(other)._combine(self, -1.0)

    def __neg__(self):
        return self * -1.0

    def __mul__(self, scalar):
        if not isinstance(scalar, Real):
            return NotImplemented
        s = float(scalar)
        return AffineExpr(s * self.const, {i: s * c for i, c in self.terms.items()})

    __rmul__ = __mul__

    def __matmul__(self, mat):
        mat = np.atleast_2d(np.asarray(mat, dtype=float))
        return AffineExpr(self.const @ mat, {i: c @ mat for i, c in self.terms.items()})

    def __rmatmul__(self, mat):
        mat = np.atleast_2d(np.asarray(mat, dtype=float))
        return AffineExpr(mat @ self.const, {i: mat @ c for i, c in self.terms.items()})

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        out = self.const.copy()
        for i, c in self.terms.items():
            out += x[i] * c
        return out

    def to_block(self, label="", strict=False) -> "LmiBlock":
        """Freeze a symmetric expression into an :class:`LmiBlock`."""
        rows, cols = self.shape
        if rows != cols:
            raise ValueError(f"block {label!r} is not square: {self.shape}")
        live = sorted(i for i, c in self.terms.items() if np.any(c))
        index = np.array(live, dtype=np.int64)
        coefs = np.array([self.terms[i] for i in live]).reshape(len(live), rows, rows)
        return LmiBlock(self.const, index, coefs, label=label, strict=strict)


def as_expr(value) -> AffineExpr:
    if isinstance(value, AffineExpr):
        return value
    return AffineExpr(value)


def kron(const, expr) -> AffineExpr:
    """Kronecker product ``const ⊗ expr`` with a constant left factor."""
    const = np.atleast_2d(np.asarray(const, dtype=float))
    expr = as_expr(expr)
    return AffineExpr(np.kron(const, expr.const),
                      {i: np.kron(const, c) for i, c in expr.terms.items()})


def trace(expr) -> AffineExpr:
    expr = as_expr(expr)
    return AffineExpr([[np.trace(expr.const)]],
                      {i: np.array([[np.trace(c)]]) for i, c in expr.terms.items()})


def bmat(rows) -> AffineExpr:
    """Block concatenation; ``None`` cells are zero blocks of inferred size."""
    nr, nc = len(rows), len(rows[0])
    heights = [None] * nr
    widths = [None] * nc
    for r, row in enumerate(rows):
        if len(row) != nc:
            raise ValueError("ragged block rows")
        for c, cell in enumerate(row):
            if cell is None:
                continue
            h, w = as_expr(cell).shape
            if heights[r] not in (None, h) or widths[c] not in (None, w):
                raise ValueError(f"inconsistent block size at ({r}, {c})")
            heights[r], widths[c] = h, w
    if None in heights or None in widths:
        raise ValueError("every block row and column needs one sized cell")
    r_off = np.concatenate([[0], np.cumsum(heights)])
    c_off = np.concatenate([[0], np.cumsum(widths)])
    const = np.zeros((r_off[-1], c_off[-1]))
    terms = {}
    for r, row in enumerate(rows):
        for c, cell in enumerate(row):
            if cell is None:
                continue
            e = as_expr(cell)
            rs = slice(r_off[r], r_off[r + 1])
            cs = slice(c_off[c], c_off[c + 1])
            const[rs, cs] = e.const
            for i, coef in e.terms.items():
                if i not in terms:
                    terms[i] = np.zeros_like(const)
                terms[i][rs, cs] = coef
    return AffineExpr(const, terms)


def _symmetrize(mat, what):
    scale = max(1.0, float(np.max(np.abs(mat)))) if mat.size else 1.0
    if np.max(np.abs(mat - mat.T), initial=0.0) > SYMMETRY_RTOL * scale:
        raise ValueError(f"{what} is not symmetric")
    return 0.5 * (mat + mat.T)


@dataclass(frozen=True, eq=False)
class LmiBlock:
    """Constraint ``const + sum_k x[index[k]] * coefs[k]`` ⪰ 0.

    ``strict`` blocks are shifted by the solver's strict floor.
    """

    const: np.ndarray
    index: np.ndarray
    coefs: np.ndarray
    label: str = ""
    strict: bool = False

    def __post_init__(self):
        const = np.atleast_2d(np.asarray(self.const, dtype=float))
        d = const.shape[0]
        if const.shape != (d, d):
            raise ValueError(f"block {self.label!r}: constant must be square")
        index = np.asarray(self.index, dtype=np.int64).reshape(-1)
        coefs = np.asarray(self.coefs, dtype=float).reshape(len(index), d, d)
        if len(np.unique(index)) != len(index):
            raise ValueError(f"block {self.label!r}: duplicate variable index")
        order = np.argsort(index)
        object.__setattr__(self, "const", _symmetrize(const, f"block {self.label!r}"))
        object.__setattr__(self, "index", index[order])
        object.__setattr__(self, "coefs", np.array(
            [_symmetrize(c, f"block {self.label!r} coefficient") for c in coefs[order]]
        ).reshape(len(index), d, d))

    @property
    def dim(self):
        return self.const.shape[0]

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        out = self.const + np.tensordot(x[self.index], self.coefs, axes=1)
        return 0.5 * (out + out.T)


@dataclass(frozen=True)
class VariableInfo:
    """Named matrix variable: ``kind`` is 'scalar', 'matrix' or 'symmetric'."""

    kind: str
    shape: tuple
    expr: AffineExpr = field(repr=False)

    def value(self, x):
        return self.expr.evaluate(x)


@dataclass(eq=False)
class SdpProblem:
    """Minimise ``objective @ x`` subject to every block ⪰ 0 and sign rules.

    ``objective=None`` marks a feasibility problem.
    """

    num_scalars: int
    blocks: list
    scalar_signs: list
    objective: Optional[np.ndarray] = None
    scalar_labels: list = field(default_factory=list)
    variables: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.scalar_signs) != self.num_scalars:
            raise ValueError("one sign per scalar variable required")
        self.scalar_signs = [Sign(s) for s in self.scalar_signs]
        if not self.scalar_labels:
            self.scalar_labels = [f"x{i}" for i in range(self.num_scalars)]
        if len(self.scalar_labels) != self.num_scalars:
            raise ValueError("one label per scalar variable required")
        for blk in self.blocks:
            if len(blk.index) and (blk.index[0] < 0 or blk.index[-1] >= self.num_scalars):
                raise ValueError(f"block {blk.label!r} references unknown variable")
        if self.objective is not None:
            self.objective = np.asarray(self.objective, dtype=float).reshape(-1)
            if self.objective.shape != (self.num_scalars,):
                raise ValueError("objective length must equal num_scalars")

    @property
    def is_feasibility(self):
        return self.objective is None

    @property
    def block_labels(self):
        return [b.label for b in self.blocks]

    def block_sizes(self):
        return [b.dim for b in self.blocks]


class ProblemBuilder:
    """Incrementally declare variables and LMI blocks, then :meth:`build`."""

    def __init__(self):
        self._signs = []
        self._labels = []
        self._variables = {}
        self._blocks = []
        self._objective = None

    def _new(self, label, sign=Sign.FREE):
        self._signs.append(Sign(sign))
        self._labels.append(label)
        return len(self._signs) - 1

    def _register(self, name, kind, shape, expr):
        if name in self._variables:
            raise ValueError(f"variable {name!r} declared twice")
        self._variables[name] = VariableInfo(kind, shape, expr)
        return expr

    def scalar(self, name, sign=Sign.FREE) -> AffineExpr:
        i = self._new(name, sign)
        return self._register(name, "scalar", (1, 1),
                              AffineExpr(np.zeros((1, 1)), {i: np.ones((1, 1))}))

    def matrix(self, name, rows, cols) -> AffineExpr:
        terms = {}
        for r in range(rows):
            for c in range(cols):
                e = np.zeros((rows, cols))
                e[r, c] = 1.0
                terms[self._new(f"{name}[{r},{c}]")] = e
        return self._register(name, "matrix", (rows, cols),
                              AffineExpr(np.zeros((rows, cols)), terms))

    def symmetric(self, name, n, trace_one=False) -> AffineExpr:
        """Symmetric ``n×n`` variable, upper triangle as scalars.

        With ``trace_one`` the last diagonal entry is eliminated through
        ``trace = 1`` so the normalisation costs no equality constraint.
        """
        terms = {}
        const = np.zeros((n, n))
        last = n - 1
        if trace_one:
            const[last, last] = 1.0
        for r in range(n):
            for c in range(r, n):
                if trace_one and r == c == last:
                    continue
                e = np.zeros((n, n))
                e[r, c] = e[c, r] = 1.0
                if trace_one and r == c:
                    e[last, last] = -1.0
                terms[self._new(f"{name}[{r},{c}]")] = e
        return self._register(name, "symmetric", (n, n), AffineExpr(const, terms))

    def add_block(self, expr, label="", strict=False):
        blk = as_expr(expr).to_block(label=label, strict=strict)
        self._blocks.append(blk)
        return blk

    def minimize(self, expr):
        expr = as_expr(expr)
        if expr.shape != (1, 1):
            raise ValueError("objective must be a scalar expression")
        c = np.zeros(len(self._signs))
        for i, coef in expr.terms.items():
            c[i] = coef[0, 0]
        self._objective = c

    def build(self, meta=None) -> SdpProblem:
        objective = self._objective
        if objective is not None and len(objective) < len(self._signs):
            objective = np.concatenate([objective, np.zeros(len(self._signs) - len(objective))])
        return SdpProblem(
            num_scalars=len(self._signs),
            blocks=list(self._blocks),
            scalar_signs=list(self._signs),
            objective=objective,
            scalar_labels=list(self._labels),
            variables=dict(self._variables),
            meta=dict(meta or {}),
        )


@dataclass
class ResidualReport:
    block_min_eigs: np.ndarray
    sign_violations: np.ndarray

    def worst(self):
        worst_block = float(np.min(self.block_min_eigs, initial=np.inf))
        worst_sign = float(np.max(self.sign_violations, initial=0.0))
        return worst_block, worst_sign


def residual_report(problem: SdpProblem, candidate, strict_floor=0.0) -> ResidualReport:
    """Evaluate every block and sign rule at ``candidate``; nothing is solved.

    Sign violations are nonnegative amounts by which each scalar misses its
    constraint (``strict_floor`` applies to :attr:`Sign.POSITIVE`).
    """
    x = np.asarray(candidate, dtype=float).reshape(-1)
    if x.shape != (problem.num_scalars,):
        raise ValueError(f"candidate has length {x.size}, expected {problem.num_scalars}")
    eigs = np.array([np.linalg.eigvalsh(b.evaluate(x))[0] for b in problem.blocks])
    viol = np.zeros(problem.num_scalars)
    for i, sign in enumerate(problem.scalar_signs):
        if sign is Sign.NONNEG:
            viol[i] = max(0.0, -x[i])
        elif sign is Sign.POSITIVE:
            viol[i] = max(0.0, strict_floor - x[i])
    return ResidualReport(eigs, viol)


def problems_equal(a: SdpProblem, b: SdpProblem) -> bool:
    """Structural equality: signs, objective and block data (labels ignored)."""
    if a.num_scalars != b.num_scalars or a.scalar_signs != b.scalar_signs:
        return False
    if (a.objective is None) != (b.objective is None):
        return False
    if a.objective is not None and not np.array_equal(a.objective, b.objective):
        return False
    if len(a.blocks) != len(b.blocks):
        return False
    for x, y in zip(a.blocks, b.blocks):
        if x.strict != y.strict or x.dim != y.dim:
            return False
        if not (np.array_equal(x.const, y.const) and np.array_equal(x.index, y.index)
                and np.array_equal(x.coefs, y.coefs)):
            return False
    return True
