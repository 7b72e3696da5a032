"""Exact tabular MDP machinery.

State-action pairs are flattened as ``idx = s * num_actions + a`` everywhere, so
``(s0,a0), (s0,a1), ..., (s1,a0), ...``. Policies are ``(S, A)`` arrays with
rows in the simplex; occupancy measures are flat length-``m`` vectors.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

PROB_TOL = 1e-12


class ConvergenceError(RuntimeError):
    """Raised when an iterative oracle fails to reach its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


@dataclass(frozen=True, eq=False)
class TabularMdp:
    num_states: int
    num_actions: int
    transition: np.ndarray  # (m, S), row (s,a) is P_{s,a}
    reward: np.ndarray  # (m,)
    discount: float
    initial_dist: np.ndarray  # (S,)

    def __post_init__(self):
        S, A = self.num_states, self.num_actions
        if S < 1 or A < 1:
            raise ValueError("num_states and num_actions must be positive")
        P = np.asarray(self.transition, dtype=float).reshape(S * A, S)
        r = np.asarray(self.reward, dtype=float).reshape(S * A)
        mu0 = np.asarray(self.initial_dist, dtype=float).reshape(S)
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=1) - 1.0)) > PROB_TOL:
            raise ValueError("transition rows must be probability vectors")
        if np.any(r < 0) or np.any(r > 1):
            raise ValueError("rewards must lie in [0, 1]")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        if np.any(mu0 < 0) or abs(mu0.sum() - 1.0) > PROB_TOL:
            raise ValueError("initial_dist must be a probability vector")
        for name, arr in (("transition", P), ("reward", r), ("initial_dist", mu0)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def m(self) -> int:
        return self.num_states * self.num_actions

    @property
    def gamma(self) -> float:
        return self.discount

    def to_json(self) -> str:
        doc = {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "gamma": self.discount,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "initial_dist": self.initial_dist.tolist(),
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "TabularMdp":
        doc = json.loads(text)
        return cls(
            num_states=int(doc["num_states"]),
            num_actions=int(doc["num_actions"]),
            transition=np.array(doc["transition"], dtype=float),
            reward=np.array(doc["reward"], dtype=float),
            discount=float(doc["gamma"]),
            initial_dist=np.array(doc["initial_dist"], dtype=float),
        )


@dataclass(frozen=True, eq=False)
class ValueProfile:
    v: np.ndarray
    q: np.ndarray  # (S, A)


@dataclass(frozen=True, eq=False)
class OptimalityProfile:
    v_star: np.ndarray
    q_star: np.ndarray  # (S, A)
    argmax_sets: tuple[tuple[int, ...], ...]
    inactive_pairs: frozenset[tuple[int, int]]
    gap: float  # +inf when every pair is active
    value_iter_residual: float
    tau_act: float = field(default=1e-8)

    @property
    def degenerate(self) -> bool:
        return not self.inactive_pairs

    def inactive_mask(self) -> np.ndarray:
        """Boolean mask over flattened (s,a) pairs marking the inactive set."""
        S, A = self.q_star.shape
        mask = np.zeros(S * A, dtype=bool)
        for s, a in self.inactive_pairs:
            mask[s * A + a] = True
        return mask

    def greedy_policy(self) -> np.ndarray:
        """Deterministic optimal policy picking the smallest active action."""
        S, A = self.q_star.shape
        pi = np.zeros((S, A))
        pi[np.arange(S), [acts[0] for acts in self.argmax_sets]] = 1.0
        return pi


def check_policy(mdp: TabularMdp, policy: np.ndarray) -> np.ndarray:
    pi = np.asarray(policy, dtype=float)
    if pi.shape != (mdp.num_states, mdp.num_actions):
        raise ValueError(f"policy shape {pi.shape} != {(mdp.num_states, mdp.num_actions)}")
    if np.any(pi < 0) or np.max(np.abs(pi.sum(axis=1) - 1.0)) > PROB_TOL:
        raise ValueError("policy rows must be probability vectors")
    return pi


def state_transition(mdp: TabularMdp, policy: np.ndarray) -> np.ndarray:
    """P_pi[s, s'] = sum_a pi(a|s) P_{s,a}(s')."""
    S, A = mdp.num_states, mdp.num_actions
    P = mdp.transition.reshape(S, A, S)
    return np.einsum("sa,sat->st", policy, P)


def occupancy_measure(mdp: TabularMdp, policy: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Discounted, normalized state-action occupancy of ``policy`` started at ``rho``."""
    pi = check_policy(mdp, policy)
    rho = np.asarray(rho, dtype=float)
    gamma = mdp.discount
    P_pi = state_transition(mdp, pi)
    lhs = np.eye(mdp.num_states) - gamma * P_pi.T
    theta_bar = np.linalg.solve(lhs, (1.0 - gamma) * rho)
    resid = np.max(np.abs(lhs @ theta_bar - (1.0 - gamma) * rho))
    if resid > 1e-9:
        raise ConvergenceError("occupancy solve inaccurate", resid)
    theta_bar = np.clip(theta_bar, 0.0, None)
    return (theta_bar[:, None] * pi).reshape(-1)


def value_profile(mdp: TabularMdp, policy: np.ndarray) -> ValueProfile:
    pi = check_policy(mdp, policy)
    S, A = mdp.num_states, mdp.num_actions
    gamma = mdp.discount
    r = mdp.reward.reshape(S, A)
    r_pi = (pi * r).sum(axis=1)
    v = np.linalg.solve(np.eye(S) - gamma * state_transition(mdp, pi), r_pi)
    q = r + gamma * (mdp.transition @ v).reshape(S, A)
    return ValueProfile(v=v, q=q)


def return_of(mdp: TabularMdp, policy: np.ndarray, rho: np.ndarray) -> float:
    """Normalized return (1 - gamma) * rho^T v_pi."""
    vp = value_profile(mdp, policy)
    return float((1.0 - mdp.discount) * np.dot(rho, vp.v))


def build_M(mdp: TabularMdp) -> np.ndarray:
    """Flow-conservation matrix Diag(1^T, ..., 1^T) - gamma P^T, shape (S, m)."""
    S, A = mdp.num_states, mdp.num_actions
    block = np.kron(np.eye(S), np.ones((1, A)))
    return block - mdp.discount * mdp.transition.T


def bellman_q(mdp: TabularMdp, v: np.ndarray) -> np.ndarray:
    S, A = mdp.num_states, mdp.num_actions
    return (mdp.reward + mdp.discount * (mdp.transition @ v)).reshape(S, A)


def optimal_profile(
    mdp: TabularMdp, tol: float = 1e-12, tau_act: float = 1e-8, max_iter: int = 100_000
) -> OptimalityProfile:
    """Optimal values by value iteration, polished with exact policy evaluation.

    The greedy policy of the value-iteration iterate is evaluated exactly and
    re-improved until it is stable, so the reported residual is usually at
    machine precision rather than at ``tol``.
    """
    if tol <= 0 or tau_act <= 0:
        raise ValueError("tol and tau_act must be positive")
    S, A = mdp.num_states, mdp.num_actions
    v = np.zeros(S)
    residual = np.inf
    for _ in range(max_iter):
        v_new = bellman_q(mdp, v).max(axis=1)
        residual = float(np.max(np.abs(v_new - v)))
        v = v_new
        if residual * max(1.0, 1.0 / (1.0 - mdp.discount)) <= tol:
            break
    # policy-iteration polish; keep the incumbent action on near-ties so it terminates
    actions = bellman_q(mdp, v).argmax(axis=1)
    for _ in range(max_iter):
        pi = np.zeros((S, A))
        pi[np.arange(S), actions] = 1.0
        v = value_profile(mdp, pi).v
        q = bellman_q(mdp, v)
        best = q.argmax(axis=1)
        improve = q[np.arange(S), best] > q[np.arange(S), actions] + 1e-14
        if not np.any(improve):
            break
        actions = np.where(improve, best, actions)
    q = bellman_q(mdp, v)
    residual = float(np.max(np.abs(q.max(axis=1) - v)))
    if residual > tol:
        raise ConvergenceError("value iteration did not converge", residual)

    v = q.max(axis=1)
    argmax_sets = tuple(
        tuple(int(a) for a in np.flatnonzero(np.abs(v[s] - q[s]) <= tau_act)) for s in range(S)
    )
    inactive = frozenset(
        (s, a) for s in range(S) for a in range(A) if a not in argmax_sets[s]
    )
    gap = min((v[s] - q[s, a] for s, a in inactive), default=np.inf)
    return OptimalityProfile(
        v_star=v,
        q_star=q,
        argmax_sets=argmax_sets,
        inactive_pairs=inactive,
        gap=float(gap),
        value_iter_residual=residual,
        tau_act=tau_act,
    )


def policy_from_theta(theta: np.ndarray, num_actions: int) -> np.ndarray:
    """Normalize each state's block of ``theta``; zero blocks become uniform."""
    th = np.asarray(theta, dtype=float).reshape(-1, num_actions)
    if np.any(th < 0):
        raise ValueError("theta must be nonnegative")
    totals = th.sum(axis=1, keepdims=True)
    pi = np.full_like(th, 1.0 / num_actions)
    pos = totals[:, 0] > 0
    pi[pos] = th[pos] / totals[pos]
    return pi


def concentrability(theta: np.ndarray, mu: np.ndarray, tol: float = PROB_TOL) -> float:
    """max theta/mu with 0/0 = 0; +inf if theta puts mass where mu has none."""
    theta = np.asarray(theta, dtype=float)
    mu = np.asarray(mu, dtype=float)
    covered = mu > tol
    if np.any(theta[~covered] > tol):
        return float("inf")
    if not np.any(covered):
        return 0.0
    return float(np.max(theta[covered] / mu[covered]))


def deterministic_policies(num_states: int, num_actions: int, choices=None):
    """Yield every deterministic policy as an ``(S, A)`` array.

    ``choices[s]`` optionally restricts the actions allowed in state ``s``.
    """
    if choices is None:
        choices = [range(num_actions)] * num_states
    for acts in itertools.product(*choices):
        pi = np.zeros((num_states, num_actions))
        pi[np.arange(num_states), list(acts)] = 1.0
        yield pi
