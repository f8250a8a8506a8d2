"""Linear model container and LP-style text dump."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LE, GE, EQ = "<=", ">=", "=="


@dataclass
class Variable:
    name: str
    lb: float = 0.0
    ub: float = math.inf
    binary: bool = False


@dataclass
class Constraint:
    name: str
    coefs: dict[int, float]
    sense: str
    rhs: float


@dataclass
class LinearModel:
    """Minimization model: variables with bounds, linear rows, linear objective.

    Variables and constraints keep insertion order so dumps are diffable.
    """

    name: str = "model"
    variables: list[Variable] = field(default_factory=list)
    constraints: list[Constraint] = field(default_factory=list)
    objective: dict[int, float] = field(default_factory=dict)
    objective_constant: float = 0.0

    def add_var(self, name: str, lb: float = 0.0, ub: float = math.inf,
                binary: bool = False) -> int:
        if binary:
            lb, ub = 0.0, 1.0
        if not (lb <= ub):
            raise ValueError(f"variable {name}: lb {lb} > ub {ub}")
        self.variables.append(Variable(name, float(lb), float(ub), binary))
        return len(self.variables) - 1

    def add_constraint(self, coefs: dict[int, float], sense: str, rhs: float,
                       name: str | None = None) -> int:
        if sense not in (LE, GE, EQ):
            raise ValueError(f"unknown sense {sense!r}")
        clean: dict[int, float] = {}
        for j, a in coefs.items():
            if not math.isfinite(a):
                raise ValueError(f"non-finite coefficient on {self.variables[j].name}")
            if a != 0.0:
                clean[j] = clean.get(j, 0.0) + float(a)
        if not math.isfinite(rhs):
            raise ValueError("non-finite right-hand side")
        name = name or f"c{len(self.constraints)}"
        self.constraints.append(Constraint(name, clean, sense, float(rhs)))
        return len(self.constraints) - 1

    def set_objective(self, coefs: dict[int, float], constant: float = 0.0) -> None:
        self.objective = {j: float(a) for j, a in coefs.items() if a != 0.0}
        self.objective_constant = float(constant)

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def n_constraints(self) -> int:
        return len(self.constraints)

    @property
    def binaries(self) -> list[int]:
        return [j for j, v in enumerate(self.variables) if v.binary]

    def index(self, name: str) -> int:
        for j, v in enumerate(self.variables):
            if v.name == name:
                return j
        raise KeyError(name)

    def arrays(self):
        """Dense arrays ``(c, A, row_lo, row_hi, lb, ub, is_int)``."""
        n, m = self.n_vars, self.n_constraints
        c = np.zeros(n)
        for j, a in self.objective.items():
            c[j] = a
        A = np.zeros((m, n))
        row_lo = np.full(m, -np.inf)
        row_hi = np.full(m, np.inf)
        for i, con in enumerate(self.constraints):
            for j, a in con.coefs.items():
                A[i, j] = a
            if con.sense in (GE, EQ):
                row_lo[i] = con.rhs
            if con.sense in (LE, EQ):
                row_hi[i] = con.rhs
        lb = np.array([v.lb for v in self.variables], dtype=float)
        ub = np.array([v.ub for v in self.variables], dtype=float)
        is_int = np.array([v.binary for v in self.variables], dtype=bool)
        return c, A, row_lo, row_hi, lb, ub, is_int

    def objective_value(self, x) -> float:
        return self.objective_constant + sum(a * x[j] for j, a in self.objective.items())

    def max_violation(self, x) -> float:
        """Largest absolute violation of any row or bound at ``x``."""
        worst = 0.0
        for j, v in enumerate(self.variables):
            worst = max(worst, v.lb - x[j], x[j] - v.ub)
        for con in self.constraints:
            act = sum(a * x[j] for j, a in con.coefs.items())
            if con.sense in (GE, EQ):
                worst = max(worst, con.rhs - act)
            if con.sense in (LE, EQ):
                worst = max(worst, act - con.rhs)
        return worst

    def dump(self) -> str:
        """LP-format text: objective, constraints, bounds, binaries."""
        def term_list(coefs):
            parts = []
            for j, a in coefs.items():
                sign = "-" if a < 0 else "+"
                parts.append(f"{sign} {_num(abs(a))} {self.variables[j].name}")
            if not parts:
                return "0"
            text = " ".join(parts)
            return text[2:] if text.startswith("+ ") else "-" + text[1:]

        lines = [f"\\ {self.name}", "Minimize"]
        obj = term_list(self.objective)
        if self.objective_constant:
            obj += f" + {_num(self.objective_constant)} __const"
        lines.append(f" obj: {obj}")
        lines.append("Subject To")
        for con in self.constraints:
            op = {LE: "<=", GE: ">=", EQ: "="}[con.sense]
            lines.append(f" {con.name}: {term_list(con.coefs)} {op} {_num(con.rhs)}")
        lines.append("Bounds")
        for v in self.variables:
            if v.binary:
                continue
            lo = "-inf" if v.lb == -math.inf else _num(v.lb)
            hi = "+inf" if v.ub == math.inf else _num(v.ub)
            lines.append(f" {lo} <= {v.name} <= {hi}")
        if self.objective_constant:
            lines.append(" __const = 1")
        bins = [v.name for v in self.variables if v.binary]
        if bins:
            lines.append("Binaries")
            lines.append(" " + " ".join(bins))
        lines.append("End")
        return "\n".join(lines) + "\n"


def _num(x: float) -> str:
    return repr(float(x)) if x != int(x) or abs(x) >= 1e15 else str(int(x))
