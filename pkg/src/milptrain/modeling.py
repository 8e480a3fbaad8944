"""Symbolic construction of LPs/MILPs with export to the CPLEX LP text format.

A :class:`Model` owns named variables with bounds and a kind (continuous or
binary), linear constraints, and a linear objective.  ``compile`` lowers the
model to the dense array form the solvers consume; ``to_lp_format`` renders
the model as an LP-format document that other solvers can ingest.
"""

from __future__ import annotations

import enum
import io
import os
from dataclasses import dataclass

import numpy as np

from .branch_bound import MilpProblem
from .simplex import LpProblem

__all__ = [
    "VarKind",
    "VarHandle",
    "LinExpr",
    "Model",
    "ModelError",
]

_RELATION_ALIASES = {"<=": "<=", ">=": ">=", "=": "=", "==": "="}


class ModelError(ValueError):
    """Raised for inconsistent model construction: duplicate names, inverted
    bounds, handles from another model, unknown relations."""


class VarKind(enum.Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"


@dataclass(frozen=True)
class VarHandle:
    """Reference to one model variable; supports +, -, and scalar *."""

    index: int
    name: str

    def _expr(self) -> "LinExpr":
        return LinExpr({self.index: 1.0})

    def __add__(self, other):
        return self._expr() + other

    def __radd__(self, other):
        return self._expr() + other

    def __sub__(self, other):
        return self._expr() - other

    def __rsub__(self, other):
        return (-self._expr()) + other

    def __mul__(self, scalar):
        return self._expr() * scalar

    def __rmul__(self, scalar):
        return self._expr() * scalar

    def __truediv__(self, scalar):
        return self._expr() / scalar

    def __neg__(self):
        return self._expr() * -1.0


class LinExpr:
    """Linear expression: coefficient map over variable indices + constant."""

    __slots__ = ("coeffs", "constant")

    def __init__(self, coeffs: dict[int, float] | None = None, constant: float = 0.0):
        self.coeffs = dict(coeffs) if coeffs else {}
        self.constant = float(constant)

    @staticmethod
    def _coerce(item) -> "LinExpr":
        if isinstance(item, LinExpr):
            return item
        if isinstance(item, VarHandle):
            return item._expr()
        if isinstance(item, (int, float, np.integer, np.floating)):
            return LinExpr({}, float(item))
        raise ModelError(f"cannot use {type(item).__name__} in a linear expression")

    def copy(self) -> "LinExpr":
        return LinExpr(self.coeffs, self.constant)

    def __add__(self, other):
        other = self._coerce(other)
        out = self.copy()
        for idx, coef in other.coeffs.items():
            out.coeffs[idx] = out.coeffs.get(idx, 0.0) + coef
        out.constant += other.constant
        return out

    __radd__ = __add__

    def __sub__(self, other):
        return self + (self._coerce(other) * -1.0)

    def __rsub__(self, other):
        return (self * -1.0) + other

    def __mul__(self, scalar):
        if not isinstance(scalar, (int, float, np.integer, np.floating)):
            raise ModelError("expressions can only be scaled by numbers")
        return LinExpr(
            {idx: coef * float(scalar) for idx, coef in self.coeffs.items()},
            self.constant * float(scalar),
        )

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if not isinstance(scalar, (int, float, np.integer, np.floating)):
            raise ModelError("expressions can only be divided by numbers")
        if float(scalar) == 0.0:
            raise ModelError("division of an expression by zero")
        return self * (1.0 / float(scalar))

    def __neg__(self):
        return self * -1.0


@dataclass
class _Constraint:
    name: str
    coeffs: dict[int, float]
    relation: str
    rhs: float


class Model:
    """A named LP/MILP under construction."""

    def __init__(self, name: str = "model"):
        self.name = name
        self._var_names: list[str] = []
        self._var_index: dict[str, int] = {}
        self._lower: list[float] = []
        self._upper: list[float] = []
        self._kinds: list[VarKind] = []
        self._constraints: list[_Constraint] = []
        self._objective: LinExpr = LinExpr()
        self._constraint_names: set[str] = set()

    # -- variables ---------------------------------------------------------

    def add_var(
        self,
        name: str,
        lower: float,
        upper: float,
        kind: VarKind = VarKind.CONTINUOUS,
    ) -> VarHandle:
        if name in self._var_index:
            raise ModelError(f"duplicate variable name {name!r}")
        if not name or any(ch.isspace() for ch in name):
            raise ModelError(f"variable name {name!r} must be non-empty without spaces")
        lower = float(lower)
        upper = float(upper)
        if lower > upper:
            raise ModelError(f"variable {name!r} has lower bound {lower} > upper {upper}")
        if kind == VarKind.BINARY and (lower < 0.0 or upper > 1.0):
            raise ModelError(f"binary variable {name!r} needs bounds within [0, 1]")
        idx = len(self._var_names)
        self._var_names.append(name)
        self._var_index[name] = idx
        self._lower.append(lower)
        self._upper.append(upper)
        self._kinds.append(kind)
        return VarHandle(idx, name)

    @property
    def num_vars(self) -> int:
        return len(self._var_names)

    @property
    def num_constraints(self) -> int:
        return len(self._constraints)

    def var_index(self, name: str) -> int:
        try:
            return self._var_index[name]
        except KeyError:
            raise ModelError(f"unknown variable {name!r}") from None

    def var_names(self) -> list[str]:
        return list(self._var_names)

    def handle(self, name: str) -> VarHandle:
        return VarHandle(self.var_index(name), name)

    def value_of(self, values: np.ndarray, name: str) -> float:
        """Read one variable out of a solver value vector."""
        return float(values[self.var_index(name)])

    def _check_owned(self, coeffs: dict[int, float]) -> None:
        for idx in coeffs:
            if not 0 <= idx < len(self._var_names):
                raise ModelError(f"expression references unknown variable index {idx}")

    # -- constraints and objective ----------------------------------------

    def add_constraint(self, expr, relation: str, rhs: float, name: str | None = None) -> int:
        if relation not in _RELATION_ALIASES:
            raise ModelError(f"unknown relation {relation!r}")
        relation = _RELATION_ALIASES[relation]
        expr = LinExpr._coerce(expr)
        self._check_owned(expr.coeffs)
        if name is None:
            name = f"r{len(self._constraints)}"
        if name in self._constraint_names:
            raise ModelError(f"duplicate constraint name {name!r}")
        self._constraint_names.add(name)
        rhs = float(rhs) - expr.constant
        coeffs = {idx: c for idx, c in expr.coeffs.items() if c != 0.0}
        self._constraints.append(_Constraint(name, coeffs, relation, rhs))
        return len(self._constraints) - 1

    def set_objective(self, expr) -> None:
        expr = LinExpr._coerce(expr)
        self._check_owned(expr.coeffs)
        if expr.constant != 0.0:
            raise ModelError("objective must not carry a constant term")
        self._objective = expr

    # -- lowering ----------------------------------------------------------

    def compile(self) -> LpProblem | MilpProblem:
        """Lower to dense arrays; returns a MilpProblem when any variable is
        binary, otherwise a plain LpProblem.  Variable and row order is the
        insertion order."""
        n = len(self._var_names)
        m = len(self._constraints)
        c = np.zeros(n)
        for idx, coef in self._objective.coeffs.items():
            c[idx] = coef
        A = np.zeros((m, n))
        rhs = np.zeros(m)
        relations = []
        for i, con in enumerate(self._constraints):
            for idx, coef in con.coeffs.items():
                A[i, idx] = coef
            rhs[i] = con.rhs
            relations.append(con.relation)
        base = LpProblem(
            objective=c,
            constraint_matrix=A,
            relations=tuple(relations),
            rhs=rhs,
            lower=np.array(self._lower, dtype=float),
            upper=np.array(self._upper, dtype=float),
        )
        binaries = frozenset(
            i for i, kind in enumerate(self._kinds) if kind == VarKind.BINARY
        )
        if binaries:
            return MilpProblem(base, binaries)
        return base

    # -- LP text format ----------------------------------------------------

    @staticmethod
    def _num(value: float) -> str:
        return "%.17g" % value

    def _render_terms(self, coeffs: dict[int, float]) -> list[str]:
        terms = []
        for idx in sorted(coeffs):
            coef = coeffs[idx]
            if coef == 0.0:
                continue
            sign = "-" if coef < 0 else "+"
            terms.append(f"{sign}{self._num(abs(coef))} {self._var_names[idx]}")
        return terms

    @staticmethod
    def _wrap(prefix: str, terms: list[str], suffix: str, width: int = 200) -> list[str]:
        lines = []
        current = prefix
        for term in terms:
            if len(current) + 1 + len(term) > width and current != prefix:
                lines.append(current)
                current = " "
            current += " " + term
        if suffix:
            current += " " + suffix
        lines.append(current)
        return lines

    def to_lp_format(self) -> str:
        out = io.StringIO()
        out.write(f"\\ {self.name}\n")
        out.write("Minimize\n")
        terms = self._render_terms(self._objective.coeffs)
        if not terms:
            out.write(" obj:\n")
        else:
            for line in self._wrap(" obj:", terms, ""):
                out.write(line + "\n")
        out.write("Subject To\n")
        for con in self._constraints:
            terms = self._render_terms(con.coeffs)
            if not terms:
                # All coefficients cancelled; keep the row as 0 <relation> rhs
                # so the document still reflects the model.
                terms = [f"+0 {self._var_names[0]}"] if self._var_names else ["+0 x"]
            suffix = f"{con.relation} {self._num(con.rhs)}"
            for line in self._wrap(f" {con.name}:", terms, suffix):
                out.write(line + "\n")
        out.write("Bounds\n")
        for idx, name in enumerate(self._var_names):
            lo, hi = self._lower[idx], self._upper[idx]
            lo_fin, hi_fin = np.isfinite(lo), np.isfinite(hi)
            if not lo_fin and not hi_fin:
                out.write(f" {name} free\n")
            elif lo_fin and hi_fin and lo == hi:
                out.write(f" {name} = {self._num(lo)}\n")
            elif lo_fin and hi_fin:
                out.write(f" {self._num(lo)} <= {name} <= {self._num(hi)}\n")
            elif lo_fin:
                out.write(f" {name} >= {self._num(lo)}\n")
            else:
                out.write(f" -inf <= {name} <= {self._num(hi)}\n")
        binaries = [
            self._var_names[i] for i, k in enumerate(self._kinds) if k == VarKind.BINARY
        ]
        if binaries:
            out.write("Binary\n")
            for name in binaries:
                out.write(f" {name}\n")
        out.write("End\n")
        return out.getvalue()

    def export_lp_format(self, destination) -> str:
        """Write the LP-format document to a path or file object; returns the
        document text.  I/O failures propagate to the caller."""
        text = self.to_lp_format()
        if hasattr(destination, "write"):
            destination.write(text)
        else:
            with open(os.fspath(destination), "w", encoding="ascii", newline="\n") as fh:
                fh.write(text)
        return text
