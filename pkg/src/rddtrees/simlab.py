"""Simulation laboratory: the benchmark data-generating process, synthetic
calibration outcomes, a seeded parallel replication runner, and the accuracy
metrics (RMSE, absolute bias, variance, coverage, interval size).

The benchmark draws the running variable as 2*Beta(2,4) - 0.75 with cutoff 0
(roughly 38% treated), four covariates, a quintic prognostic curve and a
mildly covariate-moderated effect surface, both rescaled to user-chosen
spreads, plus unit-variance Gaussian noise.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .data import ConstraintConfig, Dataset, SamplerConfig
from .errors import EstimationError
from .models import ESTIMATOR_CODES, PosteriorDraws, fit_estimator

RESULT_COLUMNS = [
    "rep",
    "estimator",
    "ok",
    "error",
    "n_strip",
    "ate_est",
    "ate_lo",
    "ate_hi",
    "truth_ate",
    "truth_ate_full",
    "cate_mse",
    "cate_bias",
    "cate_coverage",
    "cate_width",
    "invalid_leaves",
]

METRICS_COLUMNS = [
    "estimator",
    "target",
    "rmse",
    "abs_bias",
    "variance",
    "coverage",
    "interval_size",
    "n_reps",
    "n_failed",
]


@dataclass(frozen=True)
class DgpConfig:
    """Benchmark DGP settings; defaults match the studied parameter grid."""

    n: int = 1000
    tau_bar: float = 0.2
    delta_mu: float = 0.5
    delta_tau: float = 0.1
    cutoff: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class SimTruth:
    mu: np.ndarray
    tau: np.ndarray
    tau_at_cutoff: np.ndarray
    ate_at_cutoff: float  # full-sample mean of tau(c, w_i)


def _sd(v: np.ndarray) -> float:
    return float(np.std(v, ddof=1))


def generate_sim_dataset(
    cfg: DgpConfig, rng: np.random.Generator
) -> tuple[Dataset, SimTruth]:
    """One benchmark sample plus its ground truth.

    Draw order is fixed (x, w1, w2, w3, w4, noise) so a seeded generator
    reproduces the sample exactly.
    """
    n = cfg.n
    c = cfg.cutoff
    x = 2.0 * rng.beta(2.0, 4.0, size=n) - 0.75
    w1 = rng.uniform(-0.1, 0.1, size=n)
    w2 = rng.normal(0.0, 0.2, size=n)
    w3 = rng.binomial(1, 0.4, size=n).astype(np.float64)
    p4 = np.exp(-0.5 * ((x - c) / 0.5) ** 2) / (0.5 * math.sqrt(2.0 * math.pi))
    w4 = (rng.random(n) < p4).astype(np.float64)
    eps = rng.standard_normal(n)

    w = np.column_stack([w1, w2, w3, w4])
    z = (x >= c).astype(np.float64)
    w_centered = w - w.mean(axis=0)

    poly = 3 * x**5 - 2.5 * x**4 - 1.5 * x**3 + 2 * x**2 + 3 * x + 2
    mu0 = poly + 0.5 * w_centered.sum(axis=1)
    tau0 = -0.1 * x + 0.25 * w_centered.sum(axis=1)

    mu = mu0 / _sd(mu0) * cfg.delta_mu
    if cfg.delta_tau == 0.0:
        tau = np.full(n, cfg.tau_bar)
        tau_at_c = np.full(n, cfg.tau_bar)
    else:
        sd_tau0 = _sd(tau0)
        tau = cfg.tau_bar + tau0 / sd_tau0 * cfg.delta_tau
        tau0_at_c = -0.1 * c + 0.25 * w_centered.sum(axis=1)
        tau_at_c = cfg.tau_bar + tau0_at_c / sd_tau0 * cfg.delta_tau

    y = mu + tau * z + eps
    ds = Dataset(y=y, x=x, w=w, cutoff=c)
    truth = SimTruth(
        mu=mu,
        tau=tau,
        tau_at_cutoff=tau_at_c,
        ate_at_cutoff=float(tau_at_c.mean()),
    )
    return ds, truth


def generate_elicitation_outcome(
    ds: Dataset, rng: np.random.Generator
) -> tuple[np.ndarray, float]:
    """A synthetic outcome over the observed (x, w) with a known, nearly
    constant effect: mu = mean(w) + logistic(5x), tau(x) = 0.4 - log(1+x)/50.

    Returns (outcome, true effect at the cutoff). The real outcome in ``ds``
    is never read.
    """
    if np.any(ds.x <= -1.0):
        raise ValueError("synthetic effect undefined: running variable has x <= -1")
    mu = ds.w.mean(axis=1) + 1.0 / (1.0 + np.exp(-5.0 * ds.x))
    tau = 0.4 - np.log1p(ds.x) / 50.0
    y = mu + tau * ds.z + rng.standard_normal(ds.n)
    truth = 0.4 - math.log1p(ds.cutoff) / 50.0
    return y, truth


@dataclass(frozen=True)
class MetricsRow:
    estimator: str
    target: str  # "ATE" or "CATE"
    rmse: float
    abs_bias: float
    variance: float
    coverage: float
    interval_size: float
    n_reps: int
    n_failed: int

    def as_dict(self) -> dict:
        return asdict(self)


def _equal_tailed(draws: np.ndarray, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
    tail = (1.0 - level) / 2.0
    lo = np.quantile(draws, tail, axis=0, method="linear")
    hi = np.quantile(draws, 1.0 - tail, axis=0, method="linear")
    return lo, hi


def evaluate_fit(draws: PosteriorDraws, truth: SimTruth, level: float = 0.95) -> dict:
    """Point estimates, intervals, and within-replication effect metrics for
    one fitted estimator against the generating truth."""
    units = draws.strip_unit_ids
    truth_cate = truth.tau_at_cutoff[units]
    truth_ate = float(truth_cate.mean())
    ate_lo, ate_hi = _equal_tailed(draws.ate, level)
    cate_lo, cate_hi = _equal_tailed(draws.cate, level)
    cate_est = draws.cate.mean(axis=0)
    err = cate_est - truth_cate
    return {
        "n_strip": int(units.shape[0]),
        "ate_est": float(draws.ate.mean()),
        "ate_lo": float(ate_lo),
        "ate_hi": float(ate_hi),
        "truth_ate": truth_ate,
        "truth_ate_full": truth.ate_at_cutoff,
        "cate_mse": float(np.mean(err**2)),
        "cate_bias": float(np.mean(err)),
        "cate_coverage": float(np.mean((cate_lo <= truth_cate) & (truth_cate <= cate_hi))),
        "cate_width": float(np.mean(cate_hi - cate_lo)),
        "invalid_leaves": draws.invalid_leaf_total,
    }


def _replication_seed(base_seed: int, rep: int, code: int) -> int:
    return int(
        np.random.SeedSequence([base_seed, rep, code]).generate_state(1, np.uint64)[0]
        >> 1
    )


def _run_one_replication(args) -> list[dict]:
    dgp, rep, estimators, scfg, ccfg = args
    rng = np.random.default_rng(np.random.SeedSequence([dgp.seed, rep]))
    ds, truth = generate_sim_dataset(dgp, rng)
    rows = []
    for name in estimators:
        row = {"rep": rep, "estimator": name, "ok": 1, "error": ""}
        fit_cfg = replace(
            scfg, seed=_replication_seed(dgp.seed, rep, ESTIMATOR_CODES[name])
        )
        try:
            draws = fit_estimator(name, ds, fit_cfg, ccfg)
            row.update(evaluate_fit(draws, truth))
        except Exception as exc:  # failed cell, not a crashed run
            row["ok"] = 0
            row["error"] = f"{type(exc).__name__}: {exc}"
            for col in RESULT_COLUMNS:
                row.setdefault(col, float("nan"))
        rows.append(row)
    return rows


def run_replications(
    dgp: DgpConfig,
    estimators: Sequence[str],
    reps: int,
    workers: int = 1,
    scfg: Optional[SamplerConfig] = None,
    ccfg: Optional[ConstraintConfig] = None,
) -> list[dict]:
    """Replicated estimator comparison on the benchmark DGP.

    Each replication owns a deterministic child RNG keyed by (seed, index),
    so results are identical for any worker count. Estimator failures are
    recorded as failed rows and the run continues.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    for name in estimators:
        if name not in ESTIMATOR_CODES:
            raise ValueError(f"unknown estimator {name!r}")
    scfg = scfg if scfg is not None else SamplerConfig()
    ccfg = ccfg if ccfg is not None else ConstraintConfig()
    tasks = [(dgp, rep, tuple(estimators), scfg, ccfg) for rep in range(reps)]
    if workers <= 1:
        results = [_run_one_replication(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one_replication, tasks))
    rows: list[dict] = []
    for chunk in results:
        rows.extend(chunk)
    return rows


def compute_metrics(raw_rows: Sequence[dict], level: float = 0.95) -> list[MetricsRow]:
    """Aggregate a raw results table into one row per (estimator, target).

    ATE: errors are per-replication (estimate - truth); rmse is their root
    mean square, abs_bias the absolute mean, variance the population variance
    of the errors, so rmse^2 = bias^2 + variance holds exactly. CATE metrics
    average within replication first; the variance is the pooled, rep-weighted
    population variance of unit errors, keeping the same identity.
    """
    if not raw_rows:
        raise ValueError("no replications to aggregate")
    out: list[MetricsRow] = []
    estimators = sorted({row["estimator"] for row in raw_rows})
    for name in estimators:
        rows = [r for r in raw_rows if r["estimator"] == name]
        ok = [r for r in rows if r["ok"]]
        n_failed = len(rows) - len(ok)
        if len(ok) < 2:
            raise ValueError(
                f"estimator {name!r}: need >= 2 successful replications, got {len(ok)}"
            )
        ate_err = np.array([r["ate_est"] - r["truth_ate"] for r in ok])
        ate_cov = np.array(
            [r["ate_lo"] <= r["truth_ate"] <= r["ate_hi"] for r in ok], dtype=float
        )
        ate_width = np.array([r["ate_hi"] - r["ate_lo"] for r in ok])
        bias = float(ate_err.mean())
        out.append(
            MetricsRow(
                estimator=name,
                target="ATE",
                rmse=float(np.sqrt(np.mean(ate_err**2))),
                abs_bias=abs(bias),
                variance=float(np.mean((ate_err - bias) ** 2)),
                coverage=float(ate_cov.mean()),
                interval_size=float(ate_width.mean()),
                n_reps=len(ok),
                n_failed=n_failed,
            )
        )
        mse_r = np.array([r["cate_mse"] for r in ok])
        bias_r = np.array([r["cate_bias"] for r in ok])
        cov_r = np.array([r["cate_coverage"] for r in ok])
        width_r = np.array([r["cate_width"] for r in ok])
        gbias = float(bias_r.mean())
        pooled_var = float(np.mean(mse_r - 2.0 * gbias * bias_r + gbias**2))
        out.append(
            MetricsRow(
                estimator=name,
                target="CATE",
                rmse=float(np.sqrt(np.mean(mse_r))),
                abs_bias=abs(gbias),
                variance=pooled_var,
                coverage=float(cov_r.mean()),
                interval_size=float(width_r.mean()),
                n_reps=len(ok),
                n_failed=n_failed,
            )
        )
    return out
