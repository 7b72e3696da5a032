"""Case I: ell_1-budgeted offline LP with a known initial distribution.

Solves ``max u_D @ w`` over ``W = {w >= 0, sum_a w(s,a) <= B_w}`` subject to
``||K_D w - (1-gamma) mu0||_1 <= eps``, then reads a policy off
``w(s,a) * pi_mu(a|s)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import EmpiricalModel
from .lp import LE, LinearProgram, l1_epigraph, solve_lp
from .mdp import policy_from_theta

THRESHOLD_MODES = ("general", "tabular", "explicit")


@dataclass(frozen=True)
class Case1Config:
    b_w: float
    delta: float
    threshold_mode: str = "tabular"
    card_b: float | None = None
    card_w: float | None = None
    epsilon: float | None = None

    def __post_init__(self):
        if self.b_w < 1:
            raise ValueError("b_w must be at least 1")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ValueError(f"unknown threshold_mode {self.threshold_mode!r}")
        if self.threshold_mode == "explicit" and (self.epsilon is None or self.epsilon < 0):
            raise ValueError("explicit mode needs epsilon >= 0")

    def cardinalities(self, num_states: int, num_actions: int) -> tuple[float, float]:
        """(|B|, |W|), defaulting to the extreme-point counts 2^S and (A+1)^S."""
        card_b = self.card_b if self.card_b is not None else 2.0**num_states
        card_w = self.card_w if self.card_w is not None else float(num_actions + 1) ** num_states
        return card_b, card_w

    def epsilon_for(self, n: int, num_states: int, num_actions: int) -> float:
        if self.threshold_mode == "explicit":
            return float(self.epsilon)
        if self.threshold_mode == "tabular":
            return threshold_tabular(self.b_w, num_states, num_actions, self.delta, n)
        card_b, card_w = self.cardinalities(num_states, num_actions)
        return threshold_general(self.b_w, card_b, card_w, self.delta, n)


def threshold_general(b_w: float, card_b: float, card_w: float, delta: float, n: int) -> float:
    """B_w * sqrt(2 log(|B||W|/delta)) / sqrt(n)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return b_w * math.sqrt(2.0 * math.log(card_b * card_w / delta)) / math.sqrt(n)


def threshold_tabular(b_w: float, num_states: int, num_actions: int, delta: float, n: int) -> float:
    """B_w sqrt|S| log(2|A|+2) log(1/delta) / sqrt(n), as displayed in the tabular program."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return (
        b_w
        * math.sqrt(num_states)
        * math.log(2 * num_actions + 2)
        * math.log(1.0 / delta)
        / math.sqrt(n)
    )


def bound_main1(b_w: float, card_b: float, card_w: float, delta: float, n: int, gamma: float) -> float:
    """2 sqrt(2) B_w sqrt(log(|B||W|/delta)) / ((1-gamma) sqrt(n))."""
    return 2.0 * threshold_general(b_w, card_b, card_w, delta, n) / (1.0 - gamma)


def bound_tabular(b_w: float, num_states: int, num_actions: int, delta: float, n: int, gamma: float) -> float:
    """2 B_w sqrt(|S| log(2|A|+2) log(1/delta)) / ((1-gamma) sqrt(n))."""
    inner = num_states * math.log(2 * num_actions + 2) * math.log(1.0 / delta)
    return 2.0 * b_w * math.sqrt(inner) / ((1.0 - gamma) * math.sqrt(n))


def tabular_bound_variants(
    b_w: float, num_states: int, num_actions: int, delta: float, n: int, gamma: float
) -> dict[str, float]:
    """The three tabular expressions that disagree on root/log placement.

    ``program``: the threshold in the program constraint; ``proof``: the
    threshold derived from extreme-point counting; ``theorem``: the stated
    suboptimality bound.
    """
    proof = 2.0 * b_w * math.sqrt(num_states * math.log((2 * num_actions + 2) / delta)) / math.sqrt(n)
    return {
        "program": threshold_tabular(b_w, num_states, num_actions, delta, n),
        "proof": proof,
        "theorem": bound_tabular(b_w, num_states, num_actions, delta, n, gamma),
    }


def bound_for(cfg: Case1Config, n: int, num_states: int, num_actions: int, gamma: float) -> float:
    if cfg.threshold_mode == "tabular":
        return bound_tabular(cfg.b_w, num_states, num_actions, cfg.delta, n, gamma)
    if cfg.threshold_mode == "explicit":
        return 2.0 * float(cfg.epsilon) / (1.0 - gamma)
    card_b, card_w = cfg.cardinalities(num_states, num_actions)
    return bound_main1(cfg.b_w, card_b, card_w, cfg.delta, n, gamma)


def sign_vector(model: EmpiricalModel, w: np.ndarray, gamma: float, mu0: np.ndarray) -> np.ndarray:
    """Box maximiser of x @ (K w - (1-gamma) mu0); zero residual entries map to +1."""
    res = model.k_d @ w - (1.0 - gamma) * np.asarray(mu0, dtype=float)
    return np.where(res < 0, -1.0, 1.0)


@dataclass
class Case1Solution:
    status: str
    w_d: np.ndarray
    theta_tilde: np.ndarray
    policy: np.ndarray
    l1_residual: float
    objective: float
    bound_rhs: float
    epsilon: float

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "w": self.w_d.tolist(),
            "l1_residual": self.l1_residual,
            "objective": self.objective,
            "policy": self.policy.tolist(),
            "bound_rhs": self.bound_rhs,
            "epsilon": self.epsilon,
        }


def build_case1_lp(model: EmpiricalModel, mu0: np.ndarray, b_w: float, epsilon: float) -> LinearProgram:
    S, A, m = model.num_states, model.num_actions, model.m
    gamma = model.gamma
    bounded = math.isfinite(epsilon)
    nvar = m + (S if bounded else 0)
    objective = np.zeros(nvar)
    objective[:m] = model.u_d
    lower = np.zeros(nvar)
    lower[m:] = -np.inf
    lp = LinearProgram(objective, sense="max", lower=lower)
    caps = np.zeros((S, nvar))
    caps[:, :m] = np.kron(np.eye(S), np.ones((1, A)))
    lp.add_rows(caps, LE, b_w)
    if bounded:
        frag = l1_epigraph(model.k_d, (1.0 - gamma) * np.asarray(mu0, float), "summed", budget=epsilon)
        frag.apply(lp, np.arange(m), np.arange(m, m + S))
    return lp


def solve_case1(
    model: EmpiricalModel,
    mu0: np.ndarray,
    pi_mu: np.ndarray,
    cfg: Case1Config,
    n: int,
    feas_tol: float = 1e-9,
) -> Case1Solution:
    """Solve the budgeted LP; an infeasible budget is reported, not relaxed."""
    S, A, m = model.num_states, model.num_actions, model.m
    gamma = model.gamma
    eps = cfg.epsilon_for(n, S, A)
    bound = bound_for(cfg, n, S, A, gamma)
    sol = solve_lp(build_case1_lp(model, mu0, cfg.b_w, eps), feas_tol=feas_tol)
    if not sol.optimal:
        nan = np.full(m, np.nan)
        return Case1Solution(
            sol.status, nan, nan, np.full((S, A), np.nan), math.inf, math.nan, bound, eps
        )
    w = np.clip(sol.x[:m], 0.0, None)
    theta_tilde = (w.reshape(S, A) * pi_mu).reshape(-1)
    res = model.k_d @ w - (1.0 - gamma) * np.asarray(mu0, float)
    return Case1Solution(
        status=sol.status,
        w_d=w,
        theta_tilde=theta_tilde,
        policy=policy_from_theta(theta_tilde, A),
        l1_residual=float(np.abs(res).sum()),
        objective=float(model.u_d @ w),
        bound_rhs=bound,
        epsilon=eps,
    )
