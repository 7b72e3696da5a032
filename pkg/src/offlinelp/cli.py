"""Command line entry point: ``offlinelp <command>``."""
from __future__ import annotations

import json
import math
import sys

import click
import numpy as np

from . import case1 as c1
from . import case2 as c2
from .data import (
    DataDistribution,
    Dataset,
    behavior_policy,
    empirical_model,
    population_model,
    sample_dataset,
)
from .diagnostics import check_suite, compute_c_max, coverage_audit, suite_passed
from .harness import fit_rate, generate_garnet, generate_mu, load_config, rows_from_csv, rows_to_csv, run_sweep
from .mdp import TabularMdp, optimal_profile, return_of


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def _emit(text: str, output: str | None) -> None:
    if output:
        with open(output, "w") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=not text.endswith("\n"))


def _load_mdp(path: str) -> TabularMdp:
    with open(path) as fh:
        return TabularMdp.from_json(fh.read())


def _load_dist(mdp: TabularMdp, alpha: float, mu_path: str | None) -> DataDistribution:
    if mu_path:
        with open(mu_path) as fh:
            mu = np.array(json.load(fh), dtype=float)
        return DataDistribution(mu, mdp.num_states, mdp.num_actions)
    return generate_mu(mdp, optimal_profile(mdp), alpha)


def _load_data(path: str) -> Dataset:
    with open(path) as fh:
        return Dataset.from_csv(fh.read())


mdp_option = click.option("--mdp", "mdp_path", required=True, type=click.Path(exists=True))
alpha_option = click.option("--alpha", default=0.5, show_default=True, help="coverage mixing weight for mu")
mu_option = click.option("--mu", "mu_path", type=click.Path(exists=True), help="JSON list overriding mu")
out_option = click.option("-o", "--output", type=click.Path(), help="write here instead of stdout")


@click.group()
def main():
    """LP-based offline RL on tabular MDPs."""


@main.command()
@click.option("--num-states", default=8, show_default=True)
@click.option("--num-actions", default=3, show_default=True)
@click.option("--gamma", default=0.9, show_default=True)
@click.option("--branching-factor", default=4, show_default=True)
@click.option("--seed", default=0, show_default=True)
@out_option
def gen(num_states, num_actions, gamma, branching_factor, seed, output):
    """Emit a Garnet MDP as JSON."""
    mdp = generate_garnet(num_states, num_actions, gamma, branching_factor, seed)
    _emit(mdp.to_json() + "\n", output)


@main.command()
@mdp_option
@alpha_option
@mu_option
@click.option("--n", "n", required=True, type=int)
@click.option("--seed", default=0, show_default=True)
@out_option
def sample(mdp_path, alpha, mu_path, n, seed, output):
    """Sample an i.i.d. dataset as CSV."""
    mdp = _load_mdp(mdp_path)
    dist = _load_dist(mdp, alpha, mu_path)
    _emit(sample_dataset(mdp, dist, n, seed).to_csv(), output)


@main.command("solve-case1")
@mdp_option
@alpha_option
@mu_option
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--b-w", type=float, help="defaults to 2/alpha")
@click.option("--delta", default=0.05, show_default=True)
@click.option("--epsilon", type=float, help="explicit budget; overrides the tabular threshold")
@out_option
def solve_case1_cmd(mdp_path, alpha, mu_path, data_path, b_w, delta, epsilon, output):
    """Solve the budgeted Case-I LP on a dataset."""
    mdp = _load_mdp(mdp_path)
    dist = _load_dist(mdp, alpha, mu_path)
    data = _load_data(data_path)
    model = empirical_model(data, mdp.reward, mdp.discount, mdp.num_states, mdp.num_actions)
    mode = "explicit" if epsilon is not None else "tabular"
    cfg = c1.Case1Config(b_w=b_w or 2.0 / alpha, delta=delta, threshold_mode=mode, epsilon=epsilon)
    sol = c1.solve_case1(model, mdp.initial_dist, behavior_policy(dist), cfg, data.n)
    report = sol.to_dict()
    if sol.status == "optimal":
        profile = optimal_profile(mdp)
        report["subopt"] = return_of(mdp, profile.greedy_policy(), mdp.initial_dist) - return_of(
            mdp, sol.policy, mdp.initial_dist
        )
    _emit(json.dumps(_jsonable(report), indent=2) + "\n", output)
    sys.exit(0 if sol.status == "optimal" else 1)


@main.command("solve-case2")
@mdp_option
@alpha_option
@mu_option
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--b-w", type=float, help="defaults to 2/alpha")
@click.option("--delta", default=0.05, show_default=True)
@click.option("--card-w", type=float, help="|W| surrogate for the bound (default 2^m)")
@click.option("--card-v", type=float, help="|V| surrogate for the bound (default 2^S)")
@out_option
def solve_case2_cmd(mdp_path, alpha, mu_path, data_path, b_w, delta, card_w, card_v, output):
    """Solve the lower-bounded Case-II program on a dataset."""
    mdp = _load_mdp(mdp_path)
    dist = _load_dist(mdp, alpha, mu_path)
    data = _load_data(data_path)
    model = empirical_model(data, mdp.reward, mdp.discount, mdp.num_states, mdp.num_actions)
    profile = optimal_profile(mdp)
    try:
        sol = c2.solve_case2(
            model, behavior_policy(dist), c2.Case2Config(b_w=b_w or 2.0 / alpha, delta=delta),
            population=population_model(mdp, dist), mu=dist.mu, inactive=profile.inactive_mask(),
        )
    except c2.InfeasibleProgram as exc:
        _emit(json.dumps({"status": "infeasible", "reason": str(exc)}) + "\n", output)
        sys.exit(1)
    sol.delta_q = profile.gap
    sol.c_max = compute_c_max(mdp, dist, profile).value
    sol.bound_rhs, _ = c2.bound_main2(
        b_w or 2.0 / alpha, mdp.discount, sol.c_max, sol.delta_q,
        card_w or 2.0**mdp.m, card_v or 2.0**mdp.num_states, delta, data.n,
    )
    report = sol.to_dict()
    mu_state = dist.state_marginal
    report["subopt"] = return_of(mdp, profile.greedy_policy(), mu_state) - return_of(mdp, sol.policy, mu_state)
    _emit(json.dumps(_jsonable(report), indent=2) + "\n", output)


@main.command()
@mdp_option
@alpha_option
@mu_option
@click.option("--data", "data_path", type=click.Path(exists=True), help="adds Case-II solution checks")
@click.option("--b-w", type=float, help="defaults to 2/alpha")
@click.option("--seed", default=0, show_default=True)
@out_option
def check(mdp_path, alpha, mu_path, data_path, b_w, seed, output):
    """Run the diagnostics audit; exit code 0 iff every check passes."""
    mdp = _load_mdp(mdp_path)
    dist = _load_dist(mdp, alpha, mu_path)
    profile = optimal_profile(mdp)
    b_w = b_w or 2.0 / alpha
    w_d = None
    if data_path:
        data = _load_data(data_path)
        model = empirical_model(data, mdp.reward, mdp.discount, mdp.num_states, mdp.num_actions)
        w_d = c2.solve_case2(model, behavior_policy(dist), c2.Case2Config(b_w=b_w)).w_d
    results = check_suite(mdp, dist, w_d=w_d, profile=profile, seed=seed, b_w=b_w)
    report = {
        "coverage": coverage_audit(mdp, dist, profile).to_dict(),
        "checks": [r.to_dict() for r in results],
        "pass": suite_passed(results),
    }
    _emit(json.dumps(_jsonable(report), indent=2) + "\n", output)
    sys.exit(0 if report["pass"] else 1)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), help="JSON experiment config")
@click.option("--num-states", type=int)
@click.option("--num-actions", type=int)
@click.option("--gamma", type=float)
@click.option("--branching-factor", type=int)
@click.option("--seed", type=int)
@click.option("--coverage-alpha", type=float)
@click.option("--n-grid", help="comma separated sample sizes")
@click.option("--num-seeds", type=int)
@click.option("--delta", type=float)
@click.option("--b-w", type=float)
@click.option("--case", type=click.Choice(["one", "two", "both"]))
@click.option("--population/--sampled", default=None, help="use the exact model instead of samples")
@click.option("--workers", type=int)
@click.option("--output-path", "output_path", type=click.Path())
def sweep(config_path, n_grid, **flags):
    """Run an n-sweep and write CSV rows."""
    if n_grid:
        flags["n_grid"] = [int(x) for x in n_grid.split(",")]
    cfg = load_config(config_path, flags)
    _emit(rows_to_csv(run_sweep(cfg)), cfg.output_path)


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--case", default="one", type=click.Choice(["one", "two"]), show_default=True)
def rate(input_path, case):
    """Fit log median suboptimality against log n."""
    with open(input_path) as fh:
        rows = rows_from_csv(fh.read())
    fit = fit_rate(rows, case)
    click.echo(json.dumps(_jsonable(fit.__dict__), indent=2))


if __name__ == "__main__":
    main()
