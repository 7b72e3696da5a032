"""Coverage constants and executable checks of the analysis inequalities."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import case2 as c2
from .data import DataDistribution, behavior_policy, make_rng, population_model
from .lp import EQ, LinearProgram, solve_lp
from .mdp import (
    PROB_TOL,
    OptimalityProfile,
    TabularMdp,
    build_M,
    concentrability,
    deterministic_policies,
    occupancy_measure,
    optimal_profile,
    policy_from_theta,
    return_of,
    value_profile,
)

ENUMERATION_CAP = 4096


class PreconditionError(ValueError):
    pass


def _rho(mdp: TabularMdp, dist: DataDistribution, initial: str) -> np.ndarray:
    if initial == "mu0":
        return mdp.initial_dist
    if initial == "mu":
        return dist.state_marginal
    raise ValueError(f"initial must be 'mu0' or 'mu', got {initial!r}")


def _n_policies(choices) -> int:
    return math.prod(len(c) for c in choices)


def compute_c_star(
    mdp: TabularMdp, dist: DataDistribution, initial: str = "mu0", profile: OptimalityProfile | None = None
) -> float:
    """Smallest concentrability over deterministic optimal policies (+inf if none is covered)."""
    profile = profile or optimal_profile(mdp)
    rho = _rho(mdp, dist, initial)
    choices = profile.argmax_sets
    if _n_policies(choices) > 100 * ENUMERATION_CAP:
        raise PreconditionError("too many optimal policies to enumerate")
    best = math.inf
    for pi in deterministic_policies(mdp.num_states, mdp.num_actions, choices):
        best = min(best, concentrability(occupancy_measure(mdp, pi, rho), dist.mu))
    return best


def _state_ratio(theta_state: np.ndarray, mu_state: np.ndarray) -> float:
    covered = mu_state > PROB_TOL
    if np.any(theta_state[~covered] > 1e-10):
        return math.inf
    if not np.any(covered):
        return 0.0
    return float(np.max(theta_state[covered] / mu_state[covered]))


@dataclass
class CmaxResult:
    value: float
    per_state: np.ndarray  # max achievable theta(s) under mu-optimal occupancies
    feasible: bool


def mu_optimal_polytope(mdp: TabularMdp, dist: DataDistribution, profile: OptimalityProfile) -> LinearProgram:
    """{theta >= 0 : M theta = (1-gamma) mu, theta = 0 on I and on uncovered pairs of S_0}."""
    S, A, m = mdp.num_states, mdp.num_actions, mdp.m
    upper = np.full(m, np.inf)
    upper[profile.inactive_mask()] = 0.0
    mu_state = dist.state_marginal
    in_s0 = np.repeat(mu_state > PROB_TOL, A)
    upper[in_s0 & (dist.mu <= PROB_TOL)] = 0.0
    lp = LinearProgram(np.zeros(m), sense="max", upper=upper)
    lp.add_rows(build_M(mdp), EQ, (1.0 - mdp.discount) * mu_state)
    return lp


def compute_c_max(
    mdp: TabularMdp, dist: DataDistribution, profile: OptimalityProfile | None = None
) -> CmaxResult:
    """Per-state LP maximising theta(s) over occupancies of mu-optimal policies."""
    profile = profile or optimal_profile(mdp)
    S, A = mdp.num_states, mdp.num_actions
    per_state = np.zeros(S)
    for s in range(S):
        lp = mu_optimal_polytope(mdp, dist, profile)
        lp.objective[s * A : (s + 1) * A] = 1.0
        sol = solve_lp(lp)
        if not sol.optimal:
            return CmaxResult(math.inf, np.full(S, np.nan), False)
        per_state[s] = sol.objective_value
    return CmaxResult(_state_ratio(per_state, dist.state_marginal), per_state, True)


def c_max_enumeration(mdp: TabularMdp, dist: DataDistribution, profile: OptimalityProfile) -> float:
    """Max state-marginal ratio over deterministic mu-optimal policies (a lower bound on C_max)."""
    S, A = mdp.num_states, mdp.num_actions
    mu_state = dist.state_marginal
    block = dist.mu.reshape(S, A)
    choices = []
    for s in range(S):
        acts = profile.argmax_sets[s]
        if mu_state[s] > PROB_TOL:
            acts = tuple(a for a in acts if block[s, a] > PROB_TOL)
        choices.append(acts)
    if _n_policies(choices) > ENUMERATION_CAP:
        raise PreconditionError("enumeration too large")
    best = -math.inf
    for pi in deterministic_policies(S, A, choices):
        theta = occupancy_measure(mdp, pi, mu_state).reshape(S, A).sum(axis=1)
        best = max(best, _state_ratio(theta, mu_state))
    return best


def compute_c_mu(mdp: TabularMdp, dist: DataDistribution) -> float:
    """max_s mu0(s)/mu(s) (+inf when mu0 charges a state outside S_0)."""
    return _state_ratio(mdp.initial_dist, dist.state_marginal)


def is_mu_policy(policy: np.ndarray, dist: DataDistribution, tol: float = PROB_TOL) -> bool:
    block = dist.mu.reshape(dist.num_states, dist.num_actions)
    s0 = dist.state_marginal > tol
    uses = np.asarray(policy) > tol
    return not np.any(uses[s0] & (block[s0] <= tol))


def max_mu_optimal_policy(profile: OptimalityProfile, dist: DataDistribution) -> np.ndarray | None:
    """Uniform over T(s) intersected with supp pi_mu(.|s) on S_0; uniform over T(s) elsewhere."""
    S, A = dist.num_states, dist.num_actions
    pi_mu = behavior_policy(dist)
    s0 = dist.state_marginal > PROB_TOL
    pi = np.zeros((S, A))
    for s in range(S):
        acts = list(profile.argmax_sets[s])
        if s0[s]:
            acts = [a for a in acts if pi_mu[s, a] > PROB_TOL]
            if not acts:
                return None
        pi[s, acts] = 1.0 / len(acts)
    return pi


@dataclass
class CoverageAudit:
    c_star: float  # initial mu0
    c_star_mu: float  # initial mu (SPC+ context)
    c_max: float
    c_max_enum: float | None
    c_mu: float
    s0: list
    spc_holds: bool
    spc_plus_holds: bool

    def to_dict(self) -> dict:
        return asdict(self)


def coverage_audit(
    mdp: TabularMdp, dist: DataDistribution, profile: OptimalityProfile | None = None
) -> CoverageAudit:
    profile = profile or optimal_profile(mdp)
    c_star = compute_c_star(mdp, dist, "mu0", profile)
    c_star_mu = compute_c_star(mdp, dist, "mu", profile)
    c_max = compute_c_max(mdp, dist, profile).value
    try:
        c_enum = c_max_enumeration(mdp, dist, profile)
    except PreconditionError:
        c_enum = None
    pi_plus = max_mu_optimal_policy(profile, dist)
    spc_plus = False
    if pi_plus is not None:
        theta = occupancy_measure(mdp, pi_plus, dist.state_marginal)
        spc_plus = math.isfinite(concentrability(theta, dist.mu))
    return CoverageAudit(
        c_star=c_star,
        c_star_mu=c_star_mu,
        c_max=c_max,
        c_max_enum=c_enum,
        c_mu=compute_c_mu(mdp, dist),
        s0=[int(s) for s in dist.support_states],
        spc_holds=math.isfinite(c_star),
        spc_plus_holds=spc_plus,
    )


def construct_tilde_pistar(
    w_d: np.ndarray, mdp: TabularMdp, dist: DataDistribution, profile: OptimalityProfile
) -> np.ndarray:
    """Move theta_D's inactive mass onto covered optimal actions, then normalise.

    On S_0 the inactive mass of each state is split evenly over
    T(s) intersected with supp mu(s, .); off S_0 the smallest optimal action is
    taken deterministically.
    """
    S, A = mdp.num_states, mdp.num_actions
    theta = (np.asarray(w_d) * dist.mu).reshape(S, A)
    block = dist.mu.reshape(S, A)
    inactive = profile.inactive_mask().reshape(S, A)
    s0 = dist.state_marginal > PROB_TOL
    pi = np.zeros((S, A))
    for s in range(S):
        if not s0[s]:
            pi[s, profile.argmax_sets[s][0]] = 1.0
            continue
        targets = [a for a in profile.argmax_sets[s] if block[s, a] > PROB_TOL]
        if not targets:
            raise PreconditionError(f"no covered optimal action at state {s}")
        row = np.where(inactive[s], 0.0, theta[s])
        row[targets] += theta[s, inactive[s]].sum() / len(targets)
        total = row.sum()
        if total <= 0:
            raise PreconditionError(f"theta_D vanishes at state {s}")
        pi[s] = row / total
    return pi


@dataclass
class CheckResult:
    check_id: str
    paper_ref: str
    lhs: float
    rhs: float
    slack: float
    tol: float
    passed: bool
    skipped: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


def _check(check_id, ref, lhs, rhs, tol) -> CheckResult:
    slack = float(rhs) - float(lhs)
    return CheckResult(check_id, ref, float(lhs), float(rhs), slack, tol, bool(slack >= -tol))


def _skip(check_id, ref) -> CheckResult:
    return CheckResult(check_id, ref, math.nan, math.nan, math.nan, 0.0, True, skipped=True)


def random_policy(rng: np.random.Generator, num_states: int, num_actions: int) -> np.ndarray:
    return rng.dirichlet(np.ones(num_actions), size=num_states)


def check_suite(
    mdp: TabularMdp,
    dist: DataDistribution,
    w_d: np.ndarray | None = None,
    profile: OptimalityProfile | None = None,
    seed: int = 0,
    n: int | None = None,
    b_w: float | None = None,
    card_w: float | None = None,
    card_v: float | None = None,
    delta: float = 0.05,
    w_emp_gap: float | None = None,
) -> list[CheckResult]:
    """Evaluate every checkable inequality on one instance.

    Structural checks (link identities, validity, error bound, lower bound,
    complementarity) always run. Passing a Case-II solution ``w_d`` adds the
    inactive-mass, suboptimality-chain, pi-tilde and change-of-measure checks;
    ``n`` with cardinalities and ``w_emp_gap`` add the generalisation check.
    """
    profile = profile or optimal_profile(mdp)
    rng = make_rng(seed)
    S, A = mdp.num_states, mdp.num_actions
    gamma = mdp.discount
    M = build_M(mdp)
    pop = population_model(mdp, dist)
    out: list[CheckResult] = []

    w = rng.uniform(0, 2, size=mdp.m)
    theta = w * dist.mu
    out.append(_check("lemma1_u", "Lemma 1 (u^T w = r^T theta)", abs(pop.u_d @ w - mdp.reward @ theta), 0.0, 1e-12))
    out.append(_check("lemma1_K", "Lemma 1 (K w = M theta)", np.max(np.abs(pop.k_d @ w - M @ theta)), 0.0, 1e-12))

    pi = random_policy(rng, S, A)
    rho = rng.dirichlet(np.ones(S))
    occ = occupancy_measure(mdp, pi, rho)
    out.append(_check("lemma3_validity", "Lemma 3", np.max(np.abs(M @ occ - (1 - gamma) * rho)), 0.0, 1e-9))
    supported = occ.reshape(S, A).sum(axis=1) > 0
    roundtrip = np.max(np.abs(policy_from_theta(occ, A) - pi)[supported], initial=0.0)
    out.append(_check("lemma3_roundtrip", "Lemma 3 (theta = theta_{pi_theta})", roundtrip, 0.0, 1e-9))

    raw = rng.uniform(0, 1, size=mdp.m) * rng.integers(0, 2, size=mdp.m)
    raw = raw / max(raw.sum(), 1e-300)
    pi_raw = policy_from_theta(raw, A)
    lhs = abs(mdp.reward @ (raw - occupancy_measure(mdp, pi_raw, mdp.initial_dist)))
    rhs = np.abs(M @ raw - (1 - gamma) * mdp.initial_dist).sum() / (1 - gamma)
    out.append(_check("lemma4_error_bound", "Lemma 4", lhs, rhs, 1e-9))

    pi_star = profile.greedy_policy()
    mu_state = dist.state_marginal
    occ_star = occupancy_measure(mdp, pi_star, mu_state)
    marg = occ_star.reshape(S, A).sum(axis=1)
    out.append(_check("prop1_lower_bound", "Proposition 1", np.max((1 - gamma) * mu_state - marg), 0.0, 1e-9))
    inactive = profile.inactive_mask()
    out.append(_check("lemma5_complementarity", "Lemma 5", occ_star[inactive].sum(), 0.0, 1e-9))

    if w_d is None:
        return out

    pi_mu = behavior_policy(dist)
    j_star_mu = return_of(mdp, pi_star, mu_state)
    pi_d = c2.extract_policy_case2(w_d, pi_mu)
    subopt = j_star_mu - return_of(mdp, pi_d, mu_state)
    b = b_w if b_w is not None else max(1.0, float(np.max(w_d)))
    gap_pop = c2.primal_gap(pop, w_d, pi_mu, b, mu_state)
    if profile.degenerate:
        out.append(_skip("lemma6_inactive", "Lemma 6"))
        out.append(_skip("lemma7_chain", "Lemma 7"))
    else:
        mass = c2.inactive_mass(w_d, dist.mu, inactive)
        out.append(_check("lemma6_inactive", "Lemma 6", mass, gap_pop / profile.gap, 1e-8))
        c_max = compute_c_max(mdp, dist, profile).value
        rhs = 2 * c_max * gap_pop / ((1 - gamma) ** 2 * profile.gap)
        out.append(_check("lemma7_chain", "Lemma 7", subopt, rhs, 1e-6))

    try:
        tilde = construct_tilde_pistar(w_d, mdp, dist, profile)
        j_tilde = return_of(mdp, tilde, mu_state)
        out.append(_check("tilde_pistar_optimal", "Appendix B.5", abs(j_star_mu - j_tilde), 0.0, 1e-8))
        out.append(_check("tilde_pistar_mu_policy", "Appendix B.5 (mu-policy)",
                          0.0 if is_mu_policy(tilde, dist) else 1.0, 0.0, 0.0))
    except PreconditionError:
        out.append(_skip("tilde_pistar_optimal", "Appendix B.5"))

    c_mu = compute_c_mu(mdp, dist)
    if math.isfinite(c_mu):
        v_star = value_profile(mdp, pi_star).v
        v_d = value_profile(mdp, pi_d).v
        direct = return_of(mdp, pi_star, mdp.initial_dist) - return_of(mdp, pi_d, mdp.initial_dist)
        weighted = (1 - gamma) * mdp.initial_dist @ (v_star - v_d)
        out.append(_check("corollary1_identity", "Corollary 1", abs(direct - weighted), 0.0, 1e-8))
        out.append(_check("corollary1_change_of_measure", "Corollary 1", direct, c_mu * subopt, 1e-8))
    else:
        out.append(_skip("corollary1_change_of_measure", "Corollary 1"))

    if n is not None and card_w is not None and card_v is not None and w_emp_gap is not None:
        bound = c2.generalization_bound(b, gamma, card_w, card_v, delta, n)
        out.append(_check("lemma11_generalization", "Lemma 11", abs(gap_pop - w_emp_gap), bound, 0.0))
    return out


def suite_passed(results: list[CheckResult]) -> bool:
    return all(r.passed for r in results)
