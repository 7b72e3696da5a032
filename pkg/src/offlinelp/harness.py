"""Random instances, n-sweeps for both solvers and rate fitting."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import case1 as c1
from . import case2 as c2
from .data import (
    DataDistribution,
    behavior_policy,
    empirical_model,
    make_rng,
    population_model,
    sample_dataset,
)
from .diagnostics import compute_c_max, compute_c_star
from .mdp import OptimalityProfile, TabularMdp, occupancy_measure, optimal_profile, return_of

CSV_COLUMNS = [
    "seed", "n", "case", "subopt", "bound_rhs", "l1_residual", "delta_emp", "delta_pop",
    "inactive_mass", "c_star", "c_max", "delta_q", "status", "runtime_ms",
]


@dataclass
class MdpSpec:
    num_states: int = 8
    num_actions: int = 3
    gamma: float = 0.9
    branching_factor: int = 4
    seed: int = 0


@dataclass
class ExperimentConfig:
    mdp_spec: MdpSpec = field(default_factory=MdpSpec)
    coverage_alpha: float = 0.5
    n_grid: list = field(default_factory=lambda: [500, 2000, 8000, 32000])
    num_seeds: int = 20
    delta: float = 0.05
    b_w: float | None = None  # defaults to 2 / alpha
    case: str = "both"
    output_path: str | None = None
    population: bool = False
    card_w: float | None = None  # defaults to 2^m, the vertex count of the w box
    card_v: float | None = None  # defaults to 2^S, the vertex count of the v box
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.mdp_spec, dict):
            self.mdp_spec = MdpSpec(**self.mdp_spec)
        if not 0 < self.coverage_alpha <= 1:
            raise ValueError("coverage_alpha must lie in (0, 1]")
        if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])) or not self.n_grid:
            raise ValueError("n_grid must be nonempty and strictly increasing")
        if self.num_seeds < 1:
            raise ValueError("num_seeds must be at least 1")
        if self.case not in ("one", "two", "both"):
            raise ValueError("case must be one, two or both")

    @property
    def effective_b_w(self) -> float:
        return self.b_w if self.b_w is not None else 2.0 / self.coverage_alpha

    def cardinalities(self) -> tuple[float, float]:
        S, A = self.mdp_spec.num_states, self.mdp_spec.num_actions
        card_w = self.card_w if self.card_w is not None else 2.0 ** (S * A)
        card_v = self.card_v if self.card_v is not None else 2.0**S
        return card_w, card_v

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


def generate_garnet(
    num_states: int, num_actions: int, gamma: float, branching_factor: int, seed: int
) -> TabularMdp:
    """Garnet MDP with uniform initial distribution.

    Each pair gets ``branching_factor`` distinct successors with Dirichlet(1)
    weights; rewards are i.i.d. uniform on [0, 1].
    """
    if not 1 <= branching_factor <= num_states:
        raise ValueError("branching_factor must lie in [1, num_states]")
    rng = make_rng(seed)
    m = num_states * num_actions
    P = np.zeros((m, num_states))
    for i in range(m):
        succ = rng.choice(num_states, size=branching_factor, replace=False)
        P[i, succ] = rng.dirichlet(np.ones(branching_factor))
    reward = rng.uniform(0.0, 1.0, size=m)
    mu0 = np.full(num_states, 1.0 / num_states)
    return TabularMdp(num_states, num_actions, P, reward, gamma, mu0)


def generate_mu(mdp: TabularMdp, profile: OptimalityProfile, alpha: float) -> DataDistribution:
    """alpha * theta_{pi*, mu0} + (1 - alpha) * theta_{uniform, mu0}.

    The mixture dominates alpha times the optimal occupancy, so C* <= 1/alpha.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    S, A = mdp.num_states, mdp.num_actions
    theta_opt = occupancy_measure(mdp, profile.greedy_policy(), mdp.initial_dist)
    theta_unif = occupancy_measure(mdp, np.full((S, A), 1.0 / A), mdp.initial_dist)
    mu = alpha * theta_opt + (1.0 - alpha) * theta_unif
    return DataDistribution(mu / mu.sum(), S, A)


@dataclass
class Instance:
    mdp: TabularMdp
    profile: OptimalityProfile
    dist: DataDistribution
    c_star: float
    c_star_mu: float
    c_max: float


def build_instance(spec: MdpSpec, alpha: float, index: int) -> Instance:
    mdp = generate_garnet(
        spec.num_states, spec.num_actions, spec.gamma, spec.branching_factor, spec.seed + index
    )
    profile = optimal_profile(mdp)
    dist = generate_mu(mdp, profile, alpha)
    return Instance(
        mdp=mdp,
        profile=profile,
        dist=dist,
        c_star=compute_c_star(mdp, dist, "mu0", profile),
        c_star_mu=compute_c_star(mdp, dist, "mu", profile),
        c_max=compute_c_max(mdp, dist, profile).value,
    )


def _data_seed(base: int, index: int, n: int) -> int:
    # distinct, reproducible stream per (instance, n)
    return (base + 1) * 1_000_003 + index * 7919 + n


def _row(seed, n, case, **kw) -> dict:
    row = {c: "" for c in CSV_COLUMNS}
    row.update(seed=seed, n=n, case=case, **kw)
    return row


def case1_row(inst: Instance, cfg: ExperimentConfig, index: int, n: int, model=None) -> dict:
    t0 = time.perf_counter()
    mdp, dist = inst.mdp, inst.dist
    pi_mu = behavior_policy(dist)
    b_w = max(cfg.effective_b_w, inst.c_star)
    if model is None:
        data = sample_dataset(mdp, dist, n, _data_seed(cfg.mdp_spec.seed, index, n))
        model = empirical_model(data, mdp.reward, mdp.discount, mdp.num_states, mdp.num_actions)
        c1cfg = c1.Case1Config(b_w=b_w, delta=cfg.delta, threshold_mode="tabular")
    else:
        c1cfg = c1.Case1Config(b_w=b_w, delta=cfg.delta, threshold_mode="explicit", epsilon=0.0)
    sol = c1.solve_case1(model, mdp.initial_dist, pi_mu, c1cfg, n)
    status = sol.status
    if sol.status == "infeasible" and c1cfg.threshold_mode == "tabular":
        # widen to the thresholds of smaller grid sizes, nearest first
        for n_wider in sorted((k for k in cfg.n_grid if k < n), reverse=True):
            eps = c1.threshold_tabular(b_w, mdp.num_states, mdp.num_actions, cfg.delta, n_wider)
            retry = c1.Case1Config(b_w=b_w, delta=cfg.delta, threshold_mode="explicit", epsilon=eps)
            sol = c1.solve_case1(model, mdp.initial_dist, pi_mu, retry, n)
            if sol.status == "optimal":
                status = f"optimal_widened_n{n_wider}"
                break
    subopt = ""
    if sol.status == "optimal":
        j_star = return_of(mdp, inst.profile.greedy_policy(), mdp.initial_dist)
        subopt = j_star - return_of(mdp, sol.policy, mdp.initial_dist)
    bound = c1.bound_tabular(b_w, mdp.num_states, mdp.num_actions, cfg.delta, n, mdp.discount)
    return _row(
        index, n, "one",
        subopt=subopt, bound_rhs=bound, l1_residual=sol.l1_residual, c_star=inst.c_star,
        c_max=inst.c_max, delta_q=inst.profile.gap, status=status,
        runtime_ms=1000 * (time.perf_counter() - t0),
    )


def case2_row(inst: Instance, cfg: ExperimentConfig, index: int, n: int, model=None) -> dict:
    t0 = time.perf_counter()
    mdp, dist = inst.mdp, inst.dist
    pi_mu = behavior_policy(dist)
    b_w = max(cfg.effective_b_w, inst.c_star_mu)
    pop = population_model(mdp, dist)
    if model is None:
        data = sample_dataset(mdp, dist, n, _data_seed(cfg.mdp_spec.seed, index, n))
        model = empirical_model(data, mdp.reward, mdp.discount, mdp.num_states, mdp.num_actions)
    c2cfg = c2.Case2Config(b_w=b_w, delta=cfg.delta)
    try:
        sol = c2.solve_case2(model, pi_mu, c2cfg, population=pop, mu=dist.mu,
                             inactive=inst.profile.inactive_mask())
    except c2.InfeasibleProgram as exc:
        return _row(index, n, "two", status=f"infeasible: {exc}",
                    runtime_ms=1000 * (time.perf_counter() - t0))
    mu_state = dist.state_marginal
    subopt = return_of(mdp, inst.profile.greedy_policy(), mu_state) - return_of(mdp, sol.policy, mu_state)
    card_w, card_v = cfg.cardinalities()
    bound, _ = c2.bound_main2(b_w, mdp.discount, inst.c_max, inst.profile.gap, card_w, card_v, cfg.delta, n)
    res = model.k_d @ sol.w_d - (1 - mdp.discount) * model.mu_d_state
    return _row(
        index, n, "two",
        subopt=subopt, bound_rhs=bound, l1_residual=float(np.abs(res).sum()),
        delta_emp=sol.delta_emp, delta_pop=sol.delta_pop, inactive_mass=sol.inactive_mass,
        c_star=inst.c_star_mu, c_max=inst.c_max, delta_q=inst.profile.gap, status=sol.status,
        runtime_ms=1000 * (time.perf_counter() - t0),
    )


def _seed_rows(args) -> list[dict]:
    cfg, index = args
    inst = build_instance(cfg.mdp_spec, cfg.coverage_alpha, index)
    rows = []
    pop = population_model(inst.mdp, inst.dist) if cfg.population else None
    for n in cfg.n_grid:
        if cfg.case in ("one", "both"):
            rows.append(case1_row(inst, cfg, index, n, model=pop))
        if cfg.case in ("two", "both"):
            rows.append(case2_row(inst, cfg, index, n, model=pop))
    return rows


def run_sweep(cfg: ExperimentConfig) -> list[dict]:
    """One row per (seed, n, case), sorted by (seed, n, case)."""
    jobs = [(cfg, i) for i in range(cfg.num_seeds)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            chunks = list(pool.map(_seed_rows, jobs))
    else:
        chunks = [_seed_rows(job) for job in jobs]
    rows = [r for chunk in chunks for r in chunk]
    rows.sort(key=lambda r: (r["seed"], r["n"], r["case"]))
    return rows


def rows_to_csv(rows: list[dict], runtime: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        out = {k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()}
        if not runtime:
            out["runtime_ms"] = ""
        writer.writerow(out)
    return buf.getvalue()


def rows_from_csv(text: str) -> list[dict]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        row = dict(rec)
        row["seed"] = int(row["seed"])
        row["n"] = int(row["n"])
        for key in CSV_COLUMNS[3:-2] + ["runtime_ms"]:
            row[key] = float(row[key]) if row[key] not in ("", None) else ""
        rows.append(row)
    return rows


@dataclass
class RateFit:
    verdict: str  # "fitted" or "saturated"
    slope: float
    intercept: float
    ns: list
    medians: list


def median_subopt(rows: list[dict], case: str = "one") -> tuple[list, list]:
    by_n: dict[int, list] = {}
    for row in rows:
        if row["case"] == case and row["status"] == "optimal" and row["subopt"] != "":
            by_n.setdefault(int(row["n"]), []).append(float(row["subopt"]))
    ns = sorted(by_n)
    return ns, [float(np.median(by_n[n])) for n in ns]


def fit_rate(rows: list[dict], case: str = "one", floor: float = 1e-6) -> RateFit:
    """Least-squares slope of log median subopt against log n over unsaturated points."""
    ns, med = median_subopt(rows, case)
    keep = [(n, v) for n, v in zip(ns, med) if v > floor]
    if len(keep) < 3:
        return RateFit("saturated", math.nan, math.nan, ns, med)
    x = np.log([k[0] for k in keep])
    y = np.log([k[1] for k in keep])
    slope, intercept = np.polyfit(x, y, 1)
    return RateFit("fitted", float(slope), float(intercept), ns, med)


def load_config(path: str | None, overrides: dict) -> ExperimentConfig:
    doc = {}
    if path:
        with open(path) as fh:
            doc = json.load(fh)
    spec = dict(doc.pop("mdp_spec", {}) or {})
    for key in ("num_states", "num_actions", "gamma", "branching_factor", "seed"):
        if overrides.get(key) is not None:
            spec[key] = overrides.pop(key)
        else:
            overrides.pop(key, None)
    doc.update({k: v for k, v in overrides.items() if v is not None})
    doc["mdp_spec"] = spec
    return ExperimentConfig.from_dict(doc)
