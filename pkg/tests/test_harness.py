import json
import math

import numpy as np
import pytest
from click.testing import CliRunner

from offlinelp.cli import main
from offlinelp.diagnostics import compute_c_star
from offlinelp.harness import (
    CSV_COLUMNS,
    ExperimentConfig,
    MdpSpec,
    fit_rate,
    generate_garnet,
    generate_mu,
    load_config,
    rows_from_csv,
    rows_to_csv,
    run_sweep,
)
from offlinelp.mdp import optimal_profile


def small_cfg(**kw):
    base = dict(mdp_spec=MdpSpec(4, 2, 0.8, 2, seed=3), n_grid=[200, 800], num_seeds=2)
    base.update(kw)
    return ExperimentConfig(**base)


class TestGarnet:
    def test_deterministic(self):
        a = generate_garnet(6, 3, 0.9, 3, 11)
        b = generate_garnet(6, 3, 0.9, 3, 11)
        assert a.to_json() == b.to_json()
        assert a.to_json() != generate_garnet(6, 3, 0.9, 3, 12).to_json()

    def test_valid_over_many_seeds(self):
        for seed in range(100):
            mdp = generate_garnet(8, 3, 0.9, 4, seed)
            np.testing.assert_allclose(mdp.transition.sum(axis=1), 1.0, atol=1e-12)
            assert np.all((mdp.transition > 0).sum(axis=1) == 4)
            assert mdp.reward.min() >= 0 and mdp.reward.max() <= 1

    def test_bad_branching(self):
        with pytest.raises(ValueError):
            generate_garnet(3, 2, 0.9, 4, 0)


class TestGenerateMu:
    @pytest.mark.parametrize("alpha", [1.0, 0.5, 0.2])
    def test_coverage_bound(self, alpha):
        for seed in range(5):
            mdp = generate_garnet(5, 2, 0.9, 3, seed)
            prof = optimal_profile(mdp)
            dist = generate_mu(mdp, prof, alpha)
            assert dist.mu.sum() == pytest.approx(1.0)
            assert compute_c_star(mdp, dist, "mu0", prof) <= 1.0 / alpha + 1e-9

    def test_alpha_one_is_optimal_occupancy(self):
        mdp = generate_garnet(5, 2, 0.9, 3, 1)
        prof = optimal_profile(mdp)
        assert compute_c_star(mdp, generate_mu(mdp, prof, 1.0), "mu0", prof) == pytest.approx(1.0)

    def test_rejects_zero_alpha(self):
        mdp = generate_garnet(3, 2, 0.9, 2, 0)
        with pytest.raises(ValueError):
            generate_mu(mdp, optimal_profile(mdp), 0.0)


class TestSweep:
    def test_rows_and_determinism(self):
        cfg = small_cfg()
        rows = run_sweep(cfg)
        assert len(rows) == 2 * 2 * 2
        assert [(r["seed"], r["n"], r["case"]) for r in rows] == sorted(
            (r["seed"], r["n"], r["case"]) for r in rows
        )
        assert rows_to_csv(rows, runtime=False) == rows_to_csv(run_sweep(cfg), runtime=False)
        for r in rows:
            assert r["status"] == "optimal"
            assert r["subopt"] >= -1e-9

    def test_workers_match_serial(self):
        serial = rows_to_csv(run_sweep(small_cfg()), runtime=False)
        parallel = rows_to_csv(run_sweep(small_cfg(workers=2)), runtime=False)
        assert serial == parallel

    def test_population_limit(self):
        rows = run_sweep(small_cfg(population=True))
        assert all(abs(r["subopt"]) <= 1e-7 for r in rows)

    def test_csv_roundtrip(self):
        rows = run_sweep(small_cfg(case="two", num_seeds=1))
        text = rows_to_csv(rows)
        assert text.splitlines()[0].split(",") == CSV_COLUMNS
        back = rows_from_csv(text)
        assert back[0]["subopt"] == rows[0]["subopt"]
        assert back[0]["delta_pop"] == rows[0]["delta_pop"]

    def test_infeasible_budget_widens_or_reports(self):
        cfg = small_cfg(case="one", num_seeds=1, n_grid=[1, 4, 20], delta=0.99)
        statuses = {r["n"]: r["status"] for r in run_sweep(cfg)}
        assert statuses[1] == "infeasible"
        assert statuses[4] == "optimal_widened_n1"

    def test_bound_scales_with_root_n(self):
        rows = run_sweep(small_cfg(case="one", num_seeds=1, n_grid=[100, 400]))
        assert rows[0]["bound_rhs"] / rows[1]["bound_rhs"] == pytest.approx(2.0)


class TestRateFit:
    @staticmethod
    def synth(values):
        return [
            {"case": "one", "status": "optimal", "n": n, "subopt": v}
            for n, v in values
        ]

    def test_recovers_slope(self):
        rows = self.synth([(n, 3.0 / math.sqrt(n)) for n in (100, 400, 1600, 6400)])
        fit = fit_rate(rows)
        assert fit.verdict == "fitted"
        assert fit.slope == pytest.approx(-0.5)

    def test_saturated(self):
        rows = self.synth([(100, 0.1), (400, 0.0), (1600, 0.0)])
        assert fit_rate(rows).verdict == "saturated"

    def test_uses_median(self):
        rows = self.synth([(100, 1.0), (100, 100.0), (100, 0.5)])
        assert fit_rate(rows).medians == [1.0]


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.effective_b_w == 4.0
        assert cfg.cardinalities() == (2.0**24, 2.0**8)

    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"num_seeds": 3, "mdp_spec": {"num_states": 5}}))
        cfg = load_config(str(path), {"num_states": 6, "gamma": None, "delta": 0.1})
        assert cfg.num_seeds == 3 and cfg.delta == 0.1
        assert cfg.mdp_spec.num_states == 6 and cfg.mdp_spec.gamma == 0.9

    @pytest.mark.parametrize(
        "doc", [{"bogus": 1}, {"n_grid": [10, 5]}, {"coverage_alpha": 0}, {"case": "three"}]
    )
    def test_rejects(self, doc):
        with pytest.raises(ValueError):
            ExperimentConfig.from_dict(doc)

    def test_dict_roundtrip(self):
        cfg = small_cfg()
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


class TestCli:
    @pytest.fixture
    def files(self, tmp_path):
        runner = CliRunner()
        mdp = tmp_path / "mdp.json"
        data = tmp_path / "data.csv"
        res = runner.invoke(main, ["gen", "--num-states", "4", "--num-actions", "2",
                                   "--branching-factor", "2", "--seed", "5", "-o", str(mdp)])
        assert res.exit_code == 0
        res = runner.invoke(main, ["sample", "--mdp", str(mdp), "--n", "500", "-o", str(data)])
        assert res.exit_code == 0
        return runner, mdp, data

    def test_sample_header(self, files):
        _, _, data = files
        lines = data.read_text().splitlines()
        assert lines[0] == "s,a,s_next,r" and len(lines) == 501

    def test_solve_case1(self, files):
        runner, mdp, data = files
        res = runner.invoke(main, ["solve-case1", "--mdp", str(mdp), "--data", str(data)])
        assert res.exit_code == 0, res.output
        out = json.loads(res.output)
        assert {"w", "l1_residual", "objective", "policy", "bound_rhs", "epsilon", "status"} <= set(out)
        assert out["subopt"] <= out["bound_rhs"]

    def test_solve_case2(self, files):
        runner, mdp, data = files
        res = runner.invoke(main, ["solve-case2", "--mdp", str(mdp), "--data", str(data)])
        assert res.exit_code == 0, res.output
        out = json.loads(res.output)
        assert out["epsilon"] is None
        assert {"delta_emp", "delta_pop", "inactive_mass", "c_max", "delta_q"} <= set(out)

    def test_check(self, files):
        runner, mdp, data = files
        res = runner.invoke(main, ["check", "--mdp", str(mdp), "--data", str(data)])
        out = json.loads(res.output)
        assert res.exit_code == (0 if out["pass"] else 1)
        assert out["coverage"]["spc_holds"]

    def test_sweep_and_rate(self, tmp_path):
        runner = CliRunner()
        csv_path = tmp_path / "rows.csv"
        res = runner.invoke(main, ["sweep", "--num-states", "4", "--num-actions", "2",
                                   "--branching-factor", "2", "--num-seeds", "2",
                                   "--n-grid", "100,400,1600", "--output-path", str(csv_path)])
        assert res.exit_code == 0, res.output
        assert len(rows_from_csv(csv_path.read_text())) == 12
        res = runner.invoke(main, ["rate", "--input", str(csv_path), "--case", "two"])
        assert res.exit_code == 0
        assert json.loads(res.output)["verdict"] in ("fitted", "saturated")
