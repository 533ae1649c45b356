import json

import numpy as np
import pytest

from gradlite.errors import ConfigError, NonPositiveGapError
from gradlite.harness import (CSV_HEADER, _variant_config, _final_loss_of,
                              build_problem, default_check_problems,
                              grad_check_suite, memory_account, memory_counts,
                              memory_report, rate_check, run_experiment,
                              validate_optimizer)
from gradlite.problems import make_quadratic
from gradlite.rng import derive_seed


class TestRunExperiment:
    def test_zero_steps_rejected(self):
        with pytest.raises(ConfigError):
            run_experiment({"name": "quadratic"}, {"name": "sgd"}, 0, 0)

    def test_unknown_spec_keys_rejected(self):
        with pytest.raises(ConfigError):
            run_experiment({"name": "quadratic", "rows": 5}, {"name": "sgd"}, 1, 0)
        with pytest.raises(ConfigError):
            run_experiment({"name": "quadratic"}, {"name": "sgd", "mood": 1}, 1, 0)

    def test_sgd_contracts_geometrically_at_inverse_smoothness(self):
        spec = {"name": "quadratic", "d": 10, "cond": 2.0, "sigma": 0.0}
        metrics = run_experiment(spec, {"name": "sgd", "eta": 1.0}, 100, 0)
        # last-iterate suboptimality shrinks by max(1 - eta*lam)^2 per step
        assert metrics.records[-1].loss < 1e-6 * metrics.initial_loss
        losses = [r.loss for r in metrics.records[:20]]
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_metrics_csv_bytes_identical_across_runs(self, tmp_path):
        spec = {"name": "quadratic", "d": 8, "cond": 10.0, "sigma": 0.3}
        opt = {"name": "gradlite", "eta": 0.05, "k": 3}
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        run_experiment(spec, opt, 40, 7).write_csv(p1)
        run_experiment(spec, opt, 40, 7).write_csv(p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert p1.read_text().splitlines()[0] == CSV_HEADER

    def test_gap_column_uses_averaged_iterate_and_stays_nonnegative(self):
        spec = {"name": "quadratic", "d": 6, "cond": 5.0, "sigma": 0.2}
        metrics = run_experiment(spec, {"name": "gradlite", "eta": 0.05, "k": 2},
                                 60, 1)
        for rec in metrics.records:
            assert rec.gap >= -1e-12

    def test_divergence_recorded_not_raised(self):
        spec = {"name": "quadratic", "d": 6, "cond": 5.0, "sigma": 0.5}
        opt = {"name": "gradlite", "eta": 1e8, "k": 2, "ef_mode": "paper"}
        metrics = run_experiment(spec, opt, 500, 0)
        assert metrics.diverged
        assert metrics.diverged_step is not None
        assert len(metrics.records) < 500

    def test_summary_echoes_config(self, tmp_path):
        spec = {"name": "quadratic", "d": 6, "cond": 5.0, "sigma": 0.0}
        metrics = run_experiment(spec, {"name": "sgd", "eta": 0.1}, 5, 3)
        out = tmp_path / "s.json"
        metrics.write_summary(out)
        payload = json.loads(out.read_text())
        assert payload["problem"] == spec
        assert payload["seed"] == 3
        assert payload["diverged"] is False

    def test_baseline_rows_have_nan_lowrank_columns(self):
        spec = {"name": "quadratic", "d": 6, "cond": 5.0, "sigma": 0.0}
        metrics = run_experiment(spec, {"name": "adam", "eta": 0.05}, 3, 0)
        rec = metrics.records[-1]
        assert np.isnan(rec.gtilde_norm) and np.isnan(rec.r_norm)
        assert np.isfinite(rec.g_norm)


class TestMemoryLedger:
    def test_pinned_reference_numbers(self):
        rep = memory_report(1000, 200, 8, 10)
        grad = rep.methods["gradlite"]
        exact = rep.methods["exact-sgd"]
        assert exact.signal == 1000
        assert grad.signal == 8
        assert grad.factor == 960
        assert grad.accumulator == 200
        assert grad.total == 1168
        assert rep.signal_ratio == 0.008
        assert rep.savings_vs_exact() >= 0.40

    def test_full_rank_signal_matches_exact(self):
        rep = memory_report(64, 32, 64, 10)
        assert rep.methods["gradlite"].signal == rep.methods["exact-sgd"].signal

    def test_component_recount(self):
        # independent spreadsheet-style re-addition of each method's parts
        counts = memory_counts(300, 40, k=4, tau=5)
        for name, mm in counts.items():
            assert mm.total == mm.activation + mm.signal + mm.factor \
                + mm.accumulator + mm.optimizer_state
        assert counts["gradlite"].factor == (300 + 40) * 4 / 5
        assert counts["adam"].optimizer_state == 80

    def test_account_from_problem_spec(self):
        rep = memory_account({"name": "logistic", "n": 50, "d": 10},
                             {"name": "gradlite", "k": 4, "tau": 5})
        assert rep.m == 50 and rep.d == 10

    def test_bad_dims(self):
        with pytest.raises(ConfigError):
            memory_counts(0, 5)


class TestGradCheckSuite:
    def test_clean_build_passes(self):
        report = grad_check_suite(chain_draws=25, fd_draws=2)
        assert report.passed, report.to_text()

    def test_check_count_is_blocks_times_kinds(self):
        problems = default_check_problems()
        report = grad_check_suite(problems, chain_draws=5, fd_draws=1)
        expected = 2 * sum(p.blocks for p in problems)
        assert report.total_checks == expected

    def test_corrupted_gradient_is_caught_and_named(self):
        prob = make_quadratic(6, 4.0, 0.0, seed=5)
        true_grad = prob.exact_gradient
        prob.exact_gradient = lambda theta, batch=None: \
            true_grad(theta, batch) + 1e-3
        report = grad_check_suite([prob], chain_draws=5, fd_draws=1)
        assert not report.passed
        assert any(r.problem == "quadratic" for r in report.failures())


class TestRateCheck:
    SPEC = {"name": "quadratic", "d": 8, "cond": 10.0, "sigma": 0.3}

    def test_requires_four_grid_points(self):
        with pytest.raises(ConfigError):
            rate_check(self.SPEC, 2, (10, 20, 40), (0,), 0.3)

    def test_requires_known_optimum(self):
        with pytest.raises(NonPositiveGapError):
            rate_check({"name": "mlp", "layers": (4, 6, 1), "n": 8}, 2,
                       (10, 20, 40, 80), (0,), 0.3)

    def test_fit_reproducible(self):
        grid, seeds = (25, 50, 100, 200), (0, 1)
        f1 = rate_check(self.SPEC, 8, grid, seeds, 0.3)
        f2 = rate_check(self.SPEC, 8, grid, seeds, 0.3)
        assert abs(f1.slope - f2.slope) < 0.02
        assert f1.mean_gaps == f2.mean_gaps

    def test_reference_trend_shifts_floor_only(self):
        grid, seeds = (25, 50, 100, 200), (0,)
        own = rate_check(self.SPEC, 4, grid, seeds, 0.3,
                         gradlite_overrides={"ef_mode": "off", "probe": "none"})
        ref = rate_check(self.SPEC, 4, grid, seeds, 0.3,
                         gradlite_overrides={"ef_mode": "off", "probe": "none"},
                         reference=(own.slope, own.intercept))
        assert own.slope == ref.slope
        assert own.error_floor == ref.error_floor  # same trend by construction


class TestAblationMachinery:
    def test_variant_configs(self):
        full = _variant_config("full", 0.1, 4, 5, 0)
        assert full.ef_mode == "ef-standard" and full.basis_mode == "svd"
        noef = _variant_config("no-error-feedback", 0.1, 4, 5, 0)
        assert noef.ef_mode == "off"
        rp = _variant_config("random-projection", 0.1, 4, 5, 0)
        assert rp.basis_mode == "random-projection"
        with pytest.raises(ConfigError):
            _variant_config("mystery", 0.1, 4, 5, 0)

    def test_variants_coincide_at_full_rank_on_square_problem(self):
        # square signal (m == d) makes rank d a true identity for every basis
        spec = {"name": "quadratic", "d": 10, "cond": 50.0, "sigma": 0.2}
        finals = []
        for variant in ("full", "no-error-feedback", "random-projection"):
            problem = build_problem(spec, seed=3)
            problem.reset_noise(derive_seed(3, 999))
            cfg = _variant_config(variant, 0.05, 10, 10, 4)
            loss, diverged = _final_loss_of(problem, cfg, 200)
            assert not diverged
            finals.append(loss)
        assert max(finals) - min(finals) <= 1e-8


def test_validate_optimizer_rejects_nonsense():
    with pytest.raises(ConfigError):
        validate_optimizer({"name": "sgd", "eta": -1.0})
    with pytest.raises(ConfigError):
        validate_optimizer({"name": "gradlite", "eta": 0.1, "k": 0})
    with pytest.raises(ConfigError):
        validate_optimizer({"eta": 0.1})
