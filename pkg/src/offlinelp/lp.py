"""Dense two-phase revised simplex with Bland's rule, plus an l1 epigraph helper.

Sized for desk-scale programs (a few hundred columns). Every iteration
re-solves against the current basis from scratch instead of updating an
inverse, which costs a little speed and buys a lot of accuracy on the
degenerate programs the offline-RL solvers produce.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LE, EQ, GE = "<=", "==", ">="
_RELATIONS = {LE, EQ, GE}

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"


@dataclass
class LinearProgram:
    """``min``/``max`` of ``objective @ x`` under row constraints and box bounds."""

    objective: np.ndarray
    sense: str = "min"
    rows: list = field(default_factory=list)
    relations: list = field(default_factory=list)
    rhs: list = field(default_factory=list)
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).copy()
        n = self.objective.size
        if self.sense not in ("min", "max"):
            raise ValueError(f"unknown sense {self.sense!r}")
        self.lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, float).copy()
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, float).copy()
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("bounds must match the number of variables")

    @property
    def num_vars(self) -> int:
        return self.objective.size

    def add_constraint(self, row, relation: str, rhs: float) -> None:
        row = np.asarray(row, dtype=float)
        if row.shape != (self.num_vars,):
            raise ValueError(f"row has shape {row.shape}, expected ({self.num_vars},)")
        if relation not in _RELATIONS:
            raise ValueError(f"unknown relation {relation!r}")
        if np.isnan(row).any() or np.isnan(rhs):
            raise ValueError("NaN in constraint")
        self.rows.append(row)
        self.relations.append(relation)
        self.rhs.append(float(rhs))

    def add_rows(self, matrix, relation: str, rhs) -> None:
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        rhs = np.broadcast_to(np.asarray(rhs, dtype=float), (matrix.shape[0],))
        for row, b in zip(matrix, rhs):
            self.add_constraint(row, relation, b)

    def constraint_matrix(self) -> np.ndarray:
        if not self.rows:
            return np.zeros((0, self.num_vars))
        return np.vstack(self.rows)

    def violation(self, x: np.ndarray) -> float:
        """Largest constraint or bound violation at ``x``."""
        worst = 0.0
        if self.rows:
            lhs = self.constraint_matrix() @ x
            b = np.asarray(self.rhs)
            for val, rel, bb in zip(lhs, self.relations, b):
                if rel == LE:
                    worst = max(worst, val - bb)
                elif rel == GE:
                    worst = max(worst, bb - val)
                else:
                    worst = max(worst, abs(val - bb))
        with np.errstate(invalid="ignore"):
            worst = max(worst, float(np.max(self.lower - x, initial=0.0)))
            worst = max(worst, float(np.max(x - self.upper, initial=0.0)))
        return worst

    def to_text(self) -> str:
        """Plain tabular dump: objective, one line per row, then bounds."""
        fmt = lambda v: f"{v:.17g}"
        lines = [f"{self.sense} " + " ".join(fmt(c) for c in self.objective)]
        for row, rel, b in zip(self.rows, self.relations, self.rhs):
            lines.append("row " + " ".join(fmt(v) for v in row) + f" {rel} {fmt(b)}")
        for j, (lo, hi) in enumerate(zip(self.lower, self.upper)):
            lines.append(f"bound {j} {fmt(lo)} {fmt(hi)}")
        return "\n".join(lines) + "\n"


@dataclass
class LpSolution:
    status: str
    x: np.ndarray
    objective_value: float
    max_primal_residual: float
    iterations: int

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class _StandardForm:
    """min c@y, A y = b, y >= 0 with x = offset + T y."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    T: np.ndarray
    offset: np.ndarray
    initial_basis: list  # per row: column index of a unit slack, or -1


def _to_standard_form(lp: LinearProgram) -> _StandardForm:
    n = lp.num_vars
    sign = -1.0 if lp.sense == "max" else 1.0
    cols, offset = [], np.zeros(n)
    extra_rows = []  # (column index in y, upper width)
    for j in range(n):
        lo, hi = lp.lower[j], lp.upper[j]
        if lo > hi:
            # empty box: encode as an infeasible row so phase 1 reports it
            e = np.zeros(n)
            e[j] = 1.0
            offset[j] = lo
            cols.append(e)
            extra_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(lo):
            e = np.zeros(n)
            e[j] = 1.0
            offset[j] = lo
            cols.append(e)
            if np.isfinite(hi):
                extra_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            e = np.zeros(n)
            e[j] = -1.0
            offset[j] = hi
            cols.append(e)
        else:
            e = np.zeros(n)
            e[j] = 1.0
            cols.append(e)
            cols.append(-e)
    T = np.column_stack(cols) if cols else np.zeros((n, 0))
    ny = T.shape[1]

    A0 = lp.constraint_matrix()
    rows = list(A0 @ T) if A0.size else []
    b = list(np.asarray(lp.rhs, dtype=float) - (A0 @ offset if A0.size else 0.0))
    rels = list(lp.relations)
    for col, width in extra_rows:
        e = np.zeros(ny)
        e[col] = 1.0
        rows.append(e)
        b.append(width)
        rels.append(LE)

    num_rows = len(rows)
    num_slack = sum(rel != EQ for rel in rels)
    A = np.zeros((num_rows, ny + num_slack))
    b = np.asarray(b, dtype=float)
    initial_basis = [-1] * num_rows
    k = ny
    for i, (row, rel) in enumerate(zip(rows, rels)):
        A[i, :ny] = row
        if rel != EQ:
            A[i, k] = 1.0 if rel == LE else -1.0
            slack_col = k
            k += 1
        else:
            slack_col = -1
        if b[i] < 0:
            A[i] *= -1.0
            b[i] *= -1.0
        if slack_col >= 0 and A[i, slack_col] > 0:
            initial_basis[i] = slack_col
    c = np.zeros(A.shape[1])
    c[:ny] = sign * (lp.objective @ T)
    T_full = np.zeros((n, A.shape[1]))
    T_full[:, :ny] = T
    return _StandardForm(A=A, b=b, c=c, T=T_full, offset=offset, initial_basis=initial_basis)


def _revised_simplex(A, b, c, basis, allowed, opt_tol, piv_tol, budget):
    """Bland's-rule primal simplex from a feasible basis. Mutates ``basis``."""
    iters = 0
    num_rows = A.shape[0]
    while True:
        if num_rows == 0:
            d = c.copy()
        else:
            B = A[:, basis]
            y = np.linalg.solve(B.T, c[basis])
            d = c - A.T @ y
        in_basis = np.zeros(A.shape[1], dtype=bool)
        in_basis[basis] = True
        entering = np.flatnonzero(allowed & ~in_basis & (d < -opt_tol))
        if entering.size == 0:
            return OPTIMAL, iters
        if iters >= budget:
            return ITERATION_LIMIT, iters
        j = int(entering[0])
        if num_rows == 0:
            return UNBOUNDED, iters
        x_b = np.clip(np.linalg.solve(B, b), 0.0, None)
        direction = np.linalg.solve(B, A[:, j])
        pos = np.flatnonzero(direction > piv_tol)
        if pos.size == 0:
            return UNBOUNDED, iters
        ratios = x_b[pos] / direction[pos]
        best = ratios.min()
        ties = pos[ratios <= best + 1e-12 * max(1.0, abs(best))]
        leave = min(ties, key=lambda i: basis[i])
        basis[leave] = j
        iters += 1


def solve_lp(
    lp: LinearProgram,
    feas_tol: float = 1e-9,
    opt_tol: float = 1e-9,
    max_iter: int | None = None,
) -> LpSolution:
    """Solve ``lp`` with a dense two-phase revised simplex (Bland's rule).

    Returns status ``optimal``, ``infeasible``, ``unbounded`` or
    ``iteration_limit``; the default cap is 50 * (rows + cols) of the
    standard form.
    """
    sf = _to_standard_form(lp)
    A, b, c = sf.A, sf.b, sf.c
    num_rows, num_cols = A.shape
    budget = max_iter if max_iter is not None else 50 * (num_rows + num_cols)
    piv_tol = 1e-10

    # phase 1: artificials on rows without a usable slack
    art_rows = [i for i, col in enumerate(sf.initial_basis) if col < 0]
    A1 = np.hstack([A, np.zeros((num_rows, len(art_rows)))])
    for k, i in enumerate(art_rows):
        A1[i, num_cols + k] = 1.0
    c1 = np.zeros(A1.shape[1])
    c1[num_cols:] = 1.0
    basis = list(sf.initial_basis)
    for k, i in enumerate(art_rows):
        basis[i] = num_cols + k
    allowed = np.ones(A1.shape[1], dtype=bool)
    status, it1 = _revised_simplex(A1, b, c1, basis, allowed, opt_tol, piv_tol, budget)
    iterations = it1
    if status == ITERATION_LIMIT:
        return _fail(lp, status, iterations)
    x1 = np.linalg.solve(A1[:, basis], b) if num_rows else np.zeros(0)
    if sum(x1[i] for i, col in enumerate(basis) if col >= num_cols) > feas_tol:
        return _fail(lp, INFEASIBLE, iterations)

    # drive zero-level artificials out of the basis; drop redundant rows
    keep = list(range(num_rows))
    for i in range(num_rows):
        if basis[i] < num_cols:
            continue
        B = A1[:, basis]
        row = np.linalg.solve(B.T, np.eye(num_rows)[i]) @ A
        in_basis = set(basis)
        cand = [j for j in range(num_cols) if j not in in_basis and abs(row[j]) > 1e-9]
        if cand:
            basis[i] = cand[0]
        else:
            keep.remove(i)
    A2, b2 = A[keep], b[keep]
    basis2 = [basis[i] for i in keep]

    allowed = np.ones(num_cols, dtype=bool)
    status, it2 = _revised_simplex(
        A2, b2, c, basis2, allowed, opt_tol, piv_tol, budget - iterations
    )
    iterations += it2
    if status != OPTIMAL:
        return _fail(lp, status, iterations)

    y = np.zeros(num_cols)
    if basis2:
        y[basis2] = np.clip(np.linalg.solve(A2[:, basis2], b2), 0.0, None)
    x = sf.offset + sf.T @ y
    residual = lp.violation(x)
    if residual > feas_tol:
        # the basis solve lost accuracy; report rather than hide it
        return LpSolution(INFEASIBLE, x, float(lp.objective @ x), residual, iterations)
    return LpSolution(OPTIMAL, x, float(lp.objective @ x), residual, iterations)


def _fail(lp: LinearProgram, status: str, iterations: int) -> LpSolution:
    return LpSolution(status, np.full(lp.num_vars, np.nan), float("nan"), float("inf"), iterations)


@dataclass
class EpigraphFragments:
    """Constraint rows over the stacked variable ``[w, t]`` realising ``sum(t) >= |Aw - b|_1``."""

    rows: np.ndarray
    relations: list
    rhs: np.ndarray
    t_objective: np.ndarray  # objective weight on t (zero for the budget mode)
    num_w: int
    num_t: int

    def apply(self, lp: LinearProgram, w_index: np.ndarray, t_index: np.ndarray) -> None:
        """Scatter the fragments into ``lp`` whose ``w``/``t`` live at the given columns."""
        for row, rel, b in zip(self.rows, self.relations, self.rhs):
            full = np.zeros(lp.num_vars)
            full[w_index] = row[: self.num_w]
            full[t_index] = row[self.num_w :]
            lp.add_constraint(full, rel, b)
        lp.objective[t_index] += self.t_objective


def l1_epigraph(A, b, budget_mode: str = "summed", budget: float = 0.0, weight: float = 1.0):
    """Linear fragments for ``|A w - b|_1`` through auxiliaries ``-t <= Aw - b <= t``.

    ``budget_mode="summed"`` adds ``sum(t) <= budget``; ``"weighted"`` adds
    ``weight * sum(t)`` to the objective instead (for minimisation).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    k, p = A.shape
    if b.shape != (k,):
        raise ValueError("offset length must equal the number of rows of A")
    eye = np.eye(k)
    rows = [np.hstack([A, -eye]), np.hstack([-A, -eye])]
    rhs = [b, -b]
    relations = [LE] * (2 * k)
    t_obj = np.zeros(k)
    if budget_mode == "summed":
        rows.append(np.hstack([np.zeros((1, p)), np.ones((1, k))]))
        rhs.append(np.array([budget]))
        relations.append(LE)
    elif budget_mode == "weighted":
        t_obj = np.full(k, float(weight))
    else:
        raise ValueError(f"unknown budget_mode {budget_mode!r}")
    return EpigraphFragments(
        rows=np.vstack(rows),
        relations=relations,
        rhs=np.concatenate(rhs),
        t_objective=t_obj,
        num_w=p,
        num_t=k,
    )
