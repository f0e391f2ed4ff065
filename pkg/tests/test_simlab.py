import math

import numpy as np
import pytest
from scipy import stats

from rddtrees.data import ConstraintConfig, Dataset, SamplerConfig
from rddtrees.simlab import (
    DgpConfig,
    MetricsRow,
    compute_metrics,
    evaluate_fit,
    generate_elicitation_outcome,
    generate_sim_dataset,
    run_replications,
)


class TestSimDgp:
    def test_treated_share_near_forty_percent(self):
        rng = np.random.default_rng(0)
        ds, _ = generate_sim_dataset(DgpConfig(n=100000, seed=0), rng)
        # analytic share: P(2*Beta(2,4) - 0.75 >= 0)
        share = ds.z.mean()
        analytic = 1.0 - stats.beta(2, 4).cdf(0.375)
        assert share == pytest.approx(analytic, abs=3 * math.sqrt(0.24 / 1e5))
        assert 0.35 < share < 0.42

    def test_zero_delta_tau_gives_constant_effect(self):
        rng = np.random.default_rng(1)
        cfg = DgpConfig(n=500, tau_bar=0.35, delta_tau=0.0, seed=1)
        _, truth = generate_sim_dataset(cfg, rng)
        assert np.all(truth.tau == 0.35)
        assert np.all(truth.tau_at_cutoff == 0.35)

    def test_mu_spread_matches_delta_mu(self):
        rng = np.random.default_rng(2)
        cfg = DgpConfig(n=800, delta_mu=1.25, seed=2)
        _, truth = generate_sim_dataset(cfg, rng)
        assert np.std(truth.mu, ddof=1) == pytest.approx(1.25, abs=1e-10)

    def test_tau_spread_matches_delta_tau(self):
        rng = np.random.default_rng(3)
        cfg = DgpConfig(n=800, tau_bar=0.2, delta_tau=0.3, seed=3)
        _, truth = generate_sim_dataset(cfg, rng)
        assert np.std(truth.tau, ddof=1) == pytest.approx(0.3, abs=1e-10)

    def test_seeded_determinism(self):
        cfg = DgpConfig(n=200, seed=9)
        ds1, t1 = generate_sim_dataset(cfg, np.random.default_rng(9))
        ds2, t2 = generate_sim_dataset(cfg, np.random.default_rng(9))
        assert np.array_equal(ds1.y, ds2.y)
        assert np.array_equal(t1.tau_at_cutoff, t2.tau_at_cutoff)

    def test_marginals_match_closed_forms(self):
        rng = np.random.default_rng(4)
        ds, _ = generate_sim_dataset(DgpConfig(n=100000, seed=4), rng)
        x = ds.x
        # X ~ 2 Beta(2,4) - 0.75 (soft KS gates)
        p_x = stats.kstest((x + 0.75) / 2.0, stats.beta(2, 4).cdf).pvalue
        assert p_x > 1e-4
        w = ds.w
        p_w1 = stats.kstest(w[:, 0], stats.uniform(-0.1, 0.2).cdf).pvalue
        assert p_w1 > 1e-4
        p_w2 = stats.kstest(w[:, 1], stats.norm(0, 0.2).cdf).pvalue
        assert p_w2 > 1e-4
        assert w[:, 2].mean() == pytest.approx(0.4, abs=0.01)
        # W4 is Bernoulli with x-dependent rate: probability highest near 0
        near = np.abs(x) < 0.1
        far = x > 0.8
        assert w[near, 3].mean() > w[far, 3].mean() + 0.2

    def test_outcome_composition(self):
        rng = np.random.default_rng(5)
        ds, truth = generate_sim_dataset(DgpConfig(n=300, seed=5), rng)
        eps = ds.y - truth.mu - truth.tau * ds.z
        # eps ~ N(0,1) by construction
        assert abs(eps.mean()) < 0.2
        assert eps.std() == pytest.approx(1.0, abs=0.15)


class TestElicitationOutcome:
    @staticmethod
    def _base(n=400, seed=0):
        rng = np.random.default_rng(seed)
        x = 2.0 * rng.beta(2, 4, n) - 0.75
        w = rng.normal(size=(n, 3))
        return Dataset(y=np.zeros(n), x=x, w=w, cutoff=0.0)

    def test_truth_at_cutoff_is_point_four(self):
        ds = self._base()
        _, truth = generate_elicitation_outcome(ds, np.random.default_rng(1))
        assert truth == 0.4

    def test_logistic_limit_in_running_variable(self):
        # at large x the running-variable term saturates at 1
        n = 50
        x = np.full(n, 30.0)
        w = np.ones((n, 2)) * 2.0
        ds = Dataset(y=np.zeros(n), x=x, w=w, cutoff=0.0)
        rng = np.random.default_rng(2)
        y, _ = generate_elicitation_outcome(ds, rng)
        tau_at = 0.4 - math.log1p(30.0) / 50.0
        expect = 2.0 + 1.0 + tau_at  # mean(w) + saturated logistic + effect
        assert y.mean() == pytest.approx(expect, abs=3.0 / math.sqrt(n))

    def test_seeded_determinism(self):
        ds = self._base()
        y1, _ = generate_elicitation_outcome(ds, np.random.default_rng(3))
        y2, _ = generate_elicitation_outcome(ds, np.random.default_rng(3))
        assert np.array_equal(y1, y2)

    def test_log_domain_guard(self):
        ds = Dataset(y=np.zeros(2), x=[-1.5, 0.5], w=np.zeros((2, 1)), cutoff=0.0)
        with pytest.raises(ValueError, match="x <= -1"):
            generate_elicitation_outcome(ds, np.random.default_rng(4))

    def test_real_outcome_never_read(self):
        ds = self._base()
        poisoned = Dataset(y=np.full(ds.n, 1e300), x=ds.x, w=ds.w, cutoff=0.0)
        y1, _ = generate_elicitation_outcome(ds, np.random.default_rng(5))
        y2, _ = generate_elicitation_outcome(poisoned, np.random.default_rng(5))
        assert np.array_equal(y1, y2)


FAST = SamplerConfig(num_trees_mu=8, num_trees_tau=4, num_sweeps=12, burn_in=4, seed=5)
LOOSE = ConstraintConfig(h=0.12, n_omin=3, alpha=0.5)


class TestRunReplications:
    def test_single_rep_smoke(self):
        rows = run_replications(
            DgpConfig(n=300, seed=1), ["bart-rdd"], reps=1, scfg=FAST, ccfg=LOOSE
        )
        assert len(rows) == 1
        row = rows[0]
        assert row["ok"] == 1
        for key in ("ate_est", "ate_lo", "ate_hi", "truth_ate", "cate_mse"):
            assert np.isfinite(row[key])

    def test_worker_count_does_not_change_results(self):
        dgp = DgpConfig(n=300, seed=2)
        seq = run_replications(dgp, ["bart-rdd", "s-bart"], reps=4, workers=1, scfg=FAST, ccfg=LOOSE)
        par = run_replications(dgp, ["bart-rdd", "s-bart"], reps=4, workers=3, scfg=FAST, ccfg=LOOSE)
        assert seq == par

    def test_estimator_failure_is_recorded_not_raised(self):
        # n_omin far above the strip population makes the constrained fit
        # abort; the baselines still succeed
        impossible = ConstraintConfig(h=0.01, n_omin=500, alpha=0.5)
        rows = run_replications(
            DgpConfig(n=300, seed=3), ["bart-rdd", "s-bart"], reps=2,
            scfg=FAST, ccfg=impossible,
        )
        by_est = {}
        for r in rows:
            by_est.setdefault(r["estimator"], []).append(r)
        assert all(r["ok"] == 0 for r in by_est["bart-rdd"])
        assert all("ConfigurationError" in r["error"] or "StripEmptyError" in r["error"]
                   for r in by_est["bart-rdd"])

    def test_truth_column_varies_per_sample(self):
        rows = run_replications(
            DgpConfig(n=300, delta_tau=0.3, seed=4), ["s-bart"], reps=3,
            scfg=FAST, ccfg=LOOSE,
        )
        truths = [r["truth_ate"] for r in rows]
        assert len(set(truths)) == 3  # per-sample strip-average truth
        # the full-sample average equals tau_bar exactly under empirical centering
        for r in rows:
            assert r["truth_ate_full"] == pytest.approx(0.2, abs=1e-12)

    def test_reps_validation(self):
        with pytest.raises(ValueError):
            run_replications(DgpConfig(), ["bart-rdd"], reps=0)
        with pytest.raises(ValueError, match="unknown estimator"):
            run_replications(DgpConfig(), ["mystery"], reps=1)


class TestComputeMetrics:
    @staticmethod
    def _row(est, rep, ate_est, truth, lo, hi, mse=0.01, bias=0.05, cov=0.9, width=0.4, ok=1):
        return {
            "rep": rep,
            "estimator": est,
            "ok": ok,
            "error": "",
            "n_strip": 10,
            "ate_est": ate_est,
            "ate_lo": lo,
            "ate_hi": hi,
            "truth_ate": truth,
            "truth_ate_full": truth,
            "cate_mse": mse,
            "cate_bias": bias,
            "cate_coverage": cov,
            "cate_width": width,
            "invalid_leaves": 0,
        }

    def test_exact_estimates_give_zero_rmse_full_coverage(self):
        rows = [self._row("e", r, 0.2, 0.2, 0.1, 0.3, mse=0.0, bias=0.0) for r in range(3)]
        ate = {m.target: m for m in compute_metrics(rows)}["ATE"]
        assert ate.rmse == 0.0 and ate.abs_bias == 0.0 and ate.variance == 0.0
        assert ate.coverage == 1.0
        assert ate.interval_size == pytest.approx(0.2)

    def test_symmetric_errors_have_zero_bias(self):
        d = 0.07
        rows = [
            self._row("e", 0, 0.2 + d, 0.2, 0.0, 0.1),
            self._row("e", 1, 0.2 - d, 0.2, 0.0, 0.1),
        ]
        ate = {m.target: m for m in compute_metrics(rows)}["ATE"]
        assert ate.abs_bias == pytest.approx(0.0, abs=1e-15)
        assert ate.rmse == pytest.approx(d)
        assert ate.coverage == 0.0  # neither [0, 0.1] interval holds 0.2
        assert ate.n_reps == 2

    def test_decomposition_identity_on_random_tables(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            reps = int(rng.integers(2, 40))
            rows = [
                self._row(
                    "e",
                    r,
                    float(rng.normal()),
                    float(rng.normal()),
                    -1.0,
                    1.0,
                    mse=float(rng.uniform(0.001, 1.0)),
                    bias=float(rng.normal(scale=0.3)),
                )
                for r in range(reps)
            ]
            for m in compute_metrics(rows):
                assert m.rmse**2 == pytest.approx(m.abs_bias**2 + m.variance, abs=1e-10)

    def test_failed_cells_excluded_and_counted(self):
        rows = [self._row("e", r, 0.25, 0.2, 0.0, 0.5) for r in range(3)]
        bad = self._row("e", 3, float("nan"), float("nan"), float("nan"), float("nan"), ok=0)
        out = {m.target: m for m in compute_metrics(rows + [bad])}
        assert out["ATE"].n_reps == 3
        assert out["ATE"].n_failed == 1
        assert np.isfinite(out["ATE"].rmse)

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            compute_metrics([])
        with pytest.raises(ValueError, match="successful"):
            rows = [self._row("e", 0, 0.2, 0.2, 0.0, 0.5)]
            compute_metrics(rows)
