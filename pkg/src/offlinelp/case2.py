"""Case II: lower-bounded primal-dual program with rho = mu.

With ``V`` the full box of radius ``1/(1-gamma)`` the inner maximisation is an
l1 norm, so the saddle problem collapses to one LP:

    min  -u^T w + ||K w - (1-gamma) rho||_1 / (1-gamma)
    s.t. 0 <= w <= B_w,  sum_a w(s,a) pi_mu(a|s) >= 1 - gamma  for all s.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import EmpiricalModel
from .lp import GE, LinearProgram, l1_epigraph, solve_lp


class InfeasibleProgram(RuntimeError):
    """The lower-bound constraint set is empty for the given box."""


@dataclass(frozen=True)
class Case2Config:
    b_w: float
    delta: float = 0.05
    card_w: float | None = None
    card_v: float | None = None

    def __post_init__(self):
        if self.b_w < 1:
            raise ValueError("b_w must be at least 1")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")


def v_box(gamma: float) -> float:
    return 1.0 / (1.0 - gamma)


def ell(model: EmpiricalModel, w: np.ndarray, v: np.ndarray, gamma: float, rho: np.ndarray) -> float:
    """-u^T w + v^T (K w - (1-gamma) rho)."""
    return float(-model.u_d @ w + v @ (model.k_d @ w - (1.0 - gamma) * rho))


def inner_max(model: EmpiricalModel, w: np.ndarray, gamma: float, rho: np.ndarray, radius=None):
    """Closed-form ``max_{||v||_inf <= radius} ell(w, v)`` and a maximiser."""
    radius = v_box(gamma) if radius is None else radius
    res = model.k_d @ w - (1.0 - gamma) * rho
    v = radius * np.where(res < 0, -1.0, 1.0)
    return float(-model.u_d @ w + radius * np.abs(res).sum()), v


def build_case2_lp(model: EmpiricalModel, pi_mu: np.ndarray, b_w: float, rho: np.ndarray) -> LinearProgram:
    S, A, m = model.num_states, model.num_actions, model.m
    gamma = model.gamma
    objective = np.zeros(m + S)
    objective[:m] = -model.u_d
    lower = np.concatenate([np.zeros(m), np.full(S, -np.inf)])
    upper = np.concatenate([np.full(m, float(b_w)), np.full(S, np.inf)])
    lp = LinearProgram(objective, sense="min", lower=lower, upper=upper)
    lower_rows = np.zeros((S, m + S))
    for s in range(S):
        lower_rows[s, s * A : (s + 1) * A] = pi_mu[s]
    lp.add_rows(lower_rows, GE, 1.0 - gamma)
    frag = l1_epigraph(model.k_d, (1.0 - gamma) * rho, "weighted", weight=v_box(gamma))
    frag.apply(lp, np.arange(m), np.arange(m, m + S))
    return lp


def _check_nonempty(pi_mu: np.ndarray, b_w: float, gamma: float) -> None:
    # the largest achievable sum_a w pi_mu is B_w * sum_a pi_mu = B_w
    reach = b_w * pi_mu.sum(axis=1)
    bad = np.flatnonzero(reach < (1.0 - gamma) - 1e-12)
    if bad.size:
        raise InfeasibleProgram(f"lower bound unreachable at state {int(bad[0])}")


def minimize_ell(model: EmpiricalModel, pi_mu: np.ndarray, b_w: float, rho: np.ndarray):
    """Exact ``argmin_{w in W} max_v ell(w, v)``; returns ``(w, lp_optimum, lp_solution)``."""
    _check_nonempty(pi_mu, b_w, model.gamma)
    m = model.m
    sol = solve_lp(build_case2_lp(model, pi_mu, b_w, rho))
    if not sol.optimal:
        raise InfeasibleProgram(f"case-II LP ended with status {sol.status}")
    w = np.clip(sol.x[:m], 0.0, b_w)
    return w, sol.objective_value, sol


def extract_policy_case2(w: np.ndarray, pi_mu: np.ndarray) -> np.ndarray:
    """pi_w(a|s) proportional to w(s,a) pi_mu(a|s); uniform on zero rows."""
    S, A = pi_mu.shape
    weighted = np.asarray(w, dtype=float).reshape(S, A) * pi_mu
    tot = weighted.sum(axis=1)
    pi = np.full((S, A), 1.0 / A)
    pos = tot > 0
    pi[pos] = weighted[pos] / tot[pos, None]
    return pi


@dataclass
class Case2Solution:
    status: str
    w_d: np.ndarray
    policy: np.ndarray
    ell_emp: float
    delta_emp: float
    delta_pop: float | None = None
    inactive_mass: float | None = None
    delta_q: float | None = None
    c_max: float | None = None
    l1_residual: float | None = None
    bound_rhs: float | None = None

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "w": self.w_d.tolist(),
            "l1_residual": self.l1_residual,
            "objective": self.ell_emp,
            "policy": self.policy.tolist(),
            "bound_rhs": self.bound_rhs,
            "epsilon": None,
            "delta_emp": self.delta_emp,
            "delta_pop": self.delta_pop,
            "inactive_mass": self.inactive_mass,
            "delta_q": self.delta_q,
            "c_max": self.c_max,
        }


def solve_case2(
    model: EmpiricalModel,
    pi_mu: np.ndarray,
    cfg: Case2Config,
    population: EmpiricalModel | None = None,
    mu: np.ndarray | None = None,
    inactive: np.ndarray | None = None,
) -> Case2Solution:
    """Solve the empirical program with rho = mu_D.

    When the population model is supplied the population primal gap is
    filled in; ``mu`` and the inactive mask add the inactive-mass diagnostic.
    """
    rho = model.mu_d_state
    w, lp_min, _ = minimize_ell(model, pi_mu, cfg.b_w, rho)
    value, _ = inner_max(model, w, model.gamma, rho)
    sol = Case2Solution(
        status="optimal",
        w_d=w,
        policy=extract_policy_case2(w, pi_mu),
        ell_emp=value,
        delta_emp=value - lp_min,
        l1_residual=float(np.abs(model.k_d @ w - (1.0 - model.gamma) * rho).sum()),
    )
    if population is not None:
        sol.delta_pop = primal_gap(population, w, pi_mu, cfg.b_w, population.mu_d_state)
    if mu is not None and inactive is not None:
        sol.inactive_mass = inactive_mass(w, mu, inactive)
    return sol


def primal_gap(
    model: EmpiricalModel,
    w: np.ndarray,
    pi_mu: np.ndarray,
    b_w: float,
    rho: np.ndarray,
    minimum: float | None = None,
) -> float:
    """max_v ell(w, v) - min_{w'} max_v ell(w', v) for the given model and rho.

    Pass the empirical model with rho = mu_D for the empirical gap, or the
    population model with rho = mu for the population gap.
    """
    value, _ = inner_max(model, w, model.gamma, rho)
    if minimum is None:
        _, minimum, _ = minimize_ell(model, pi_mu, b_w, rho)
    return value - minimum


def bound_main2(
    b_w: float,
    gamma: float,
    c_max: float,
    delta_q: float,
    card_w: float,
    card_v: float,
    delta: float,
    n: int,
    c_mu: float = 1.0,
) -> tuple[float, bool]:
    """8 sqrt(2) B_w C_max C_mu / (Delta_Q (1-gamma)^3) * sqrt(log(|W||V|/delta)/n).

    Returns ``(bound, degenerate)``; an infinite gap yields ``(0.0, True)``.
    """
    if math.isinf(delta_q):
        return 0.0, True
    if delta_q <= 0:
        raise ValueError("delta_q must be positive")
    scale = 8.0 * math.sqrt(2.0) * b_w * c_max * c_mu / (delta_q * (1.0 - gamma) ** 3)
    return scale * math.sqrt(math.log(card_w * card_v / delta)) / math.sqrt(n), False


def generalization_bound(b_w: float, gamma: float, card_w: float, card_v: float, delta: float, n: int) -> float:
    """4 sqrt(2) B_w sqrt(log(|V||W|/delta)) / ((1-gamma) sqrt(n))."""
    return 4.0 * math.sqrt(2.0) * b_w * math.sqrt(math.log(card_v * card_w / delta)) / (
        (1.0 - gamma) * math.sqrt(n)
    )


def inactive_mass(w: np.ndarray, mu: np.ndarray, inactive: np.ndarray) -> float:
    """sum over inactive pairs of w(s,a) mu(s,a); ``inactive`` is a boolean mask."""
    inactive = np.asarray(inactive, dtype=bool)
    return float(np.sum(np.asarray(w)[inactive] * np.asarray(mu)[inactive]))
