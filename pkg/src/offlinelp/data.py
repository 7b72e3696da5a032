"""Offline data: the data distribution, i.i.d. sampling and plug-in estimators."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .mdp import PROB_TOL, TabularMdp


@dataclass(frozen=True, eq=False)
class DataDistribution:
    """Distribution ``mu`` over flattened state-action pairs."""

    mu: np.ndarray
    num_states: int
    num_actions: int

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        if mu.size != self.num_states * self.num_actions:
            raise ValueError("mu has the wrong length")
        if np.any(mu < 0) or abs(mu.sum() - 1.0) > PROB_TOL:
            raise ValueError("mu must be a probability vector")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)

    @property
    def state_marginal(self) -> np.ndarray:
        return self.mu.reshape(self.num_states, self.num_actions).sum(axis=1)

    @property
    def support_states(self) -> np.ndarray:
        """S_0: indices of states with positive marginal mass."""
        return np.flatnonzero(self.state_marginal > PROB_TOL)

    @property
    def behavior(self) -> np.ndarray:
        return behavior_policy(self)


def behavior_policy(dist: DataDistribution) -> np.ndarray:
    """pi_mu(a|s) = mu(s,a)/mu(s), uniform on states outside the support."""
    block = dist.mu.reshape(dist.num_states, dist.num_actions)
    tot = block.sum(axis=1)
    pi = np.full_like(block, 1.0 / dist.num_actions)
    pos = tot > PROB_TOL
    pi[pos] = block[pos] / tot[pos, None]
    return pi


@dataclass(frozen=True, eq=False)
class Dataset:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    r: np.ndarray
    seed: int | None = None

    @property
    def n(self) -> int:
        return int(self.s.size)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["s", "a", "s_next", "r"])
        for row in zip(self.s, self.a, self.s_next, self.r):
            writer.writerow([int(row[0]), int(row[1]), int(row[2]), repr(float(row[3]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, seed: int | None = None) -> "Dataset":
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames != ["s", "a", "s_next", "r"]:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        rows = list(reader)
        return cls(
            s=np.array([int(r["s"]) for r in rows], dtype=int),
            a=np.array([int(r["a"]) for r in rows], dtype=int),
            s_next=np.array([int(r["s_next"]) for r in rows], dtype=int),
            r=np.array([float(r["r"]) for r in rows]),
            seed=seed,
        )


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox stream; the one RNG used by every sampler here."""
    return np.random.Generator(np.random.Philox(seed))


def sample_dataset(mdp: TabularMdp, dist: DataDistribution, n: int, seed: int) -> Dataset:
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = make_rng(seed)
    A = mdp.num_actions
    idx = rng.choice(mdp.m, size=n, p=dist.mu)
    cdf = np.cumsum(mdp.transition[idx], axis=1)
    u = rng.random(n)
    s_next = np.minimum((u[:, None] >= cdf).sum(axis=1), mdp.num_states - 1)
    # never land on a successor with zero probability because of cdf round-off
    bad = mdp.transition[idx, s_next] <= 0
    if np.any(bad):
        s_next[bad] = mdp.transition[idx[bad]].argmax(axis=1)
    return Dataset(
        s=idx // A,
        a=idx % A,
        s_next=s_next.astype(int),
        r=mdp.reward[idx].copy(),
        seed=seed,
    )


@dataclass(frozen=True, eq=False)
class EmpiricalModel:
    """Plug-in quantities mu_D, u_D, K_D, nu_D (or their population limits)."""

    mu_d: np.ndarray  # (m,)
    u_d: np.ndarray  # (m,)
    k_d: np.ndarray  # (S, m)
    nu_d: np.ndarray  # (m, S)
    gamma: float
    num_states: int
    num_actions: int

    @property
    def mu_d_state(self) -> np.ndarray:
        return self.mu_d.reshape(self.num_states, self.num_actions).sum(axis=1)

    @property
    def m(self) -> int:
        return self.num_states * self.num_actions


def _model_from_nu(nu, reward, gamma, S, A, mu=None):
    mu = nu.sum(axis=1) if mu is None else mu
    K = -gamma * nu.T
    K[np.repeat(np.arange(S), A), np.arange(S * A)] += mu
    return EmpiricalModel(
        mu_d=mu, u_d=reward * mu, k_d=K, nu_d=nu, gamma=float(gamma), num_states=S, num_actions=A
    )


def empirical_model(
    dataset: Dataset, reward: np.ndarray, gamma: float, num_states: int, num_actions: int
) -> EmpiricalModel:
    if dataset.n < 1:
        raise ValueError("dataset is empty")
    S, A = num_states, num_actions
    counts = np.zeros((S * A, S))
    np.add.at(counts, (dataset.s * A + dataset.a, dataset.s_next), 1.0)
    return _model_from_nu(counts / dataset.n, np.asarray(reward, float), gamma, S, A)


def population_model(mdp: TabularMdp, dist: DataDistribution) -> EmpiricalModel:
    """Infinite-data limit: nu(s,a,s') = P_{s,a}(s') mu(s,a)."""
    nu = dist.mu[:, None] * mdp.transition
    return _model_from_nu(
        nu, mdp.reward, mdp.discount, mdp.num_states, mdp.num_actions, mu=dist.mu.copy()
    )
