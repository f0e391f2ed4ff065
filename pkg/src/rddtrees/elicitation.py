"""Prior predictive grid search for the strip parameters (h, n_omin, alpha).

Synthetic outcomes with a known effect at the cutoff are generated over the
observed (x, w); each candidate parameter triple is scored by the RMSE of
the fitted strip-averaged effect against the synthetic truth. The real
outcome never enters: the search reads only the running variable and
covariates.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .data import ConstraintConfig, Dataset, SamplerConfig, build_strip_index
from .errors import ConfigurationError, StripEmptyError
from .models import fit_bart_rdd
from .simlab import generate_elicitation_outcome

ELICIT_COLUMNS = ["h", "n_omin", "alpha", "feasible", "rmse", "note"]


@dataclass(frozen=True)
class ElicitationGrid:
    h_values: tuple = (0.05, 0.1, 0.15, 0.2)
    n_omin_values: tuple = (1, 5, 10)
    alpha_values: tuple = (0.6, 0.75, 0.9)
    s: int = 20

    def __post_init__(self):
        if not (self.h_values and self.n_omin_values and self.alpha_values):
            raise ValueError("grid value lists must be nonempty")
        if self.s < 1:
            raise ValueError("need at least one synthetic sample")

    def cells(self) -> list[ConstraintConfig]:
        return [
            ConstraintConfig(h=h, n_omin=m, alpha=a)
            for h in self.h_values
            for m in self.n_omin_values
            for a in self.alpha_values
        ]


@dataclass(frozen=True)
class CellResult:
    h: float
    n_omin: int
    alpha: float
    feasible: bool
    rmse: float  # nan when infeasible
    note: str = ""

    def as_dict(self) -> dict:
        return {
            "h": self.h,
            "n_omin": self.n_omin,
            "alpha": self.alpha,
            "feasible": int(self.feasible),
            "rmse": self.rmse,
            "note": self.note,
        }


def _synthetic_seed(base: int, sample: int) -> int:
    return int(
        np.random.SeedSequence([base, 7919, sample]).generate_state(1, np.uint64)[0] >> 1
    )


def _score_cell(args) -> CellResult:
    ccfg, ds_payload, scfg, outcomes, truth = args
    x, w, cutoff = ds_payload
    try:
        strip = build_strip_index(Dataset(y=np.zeros(x.shape[0]), x=x, w=w, cutoff=cutoff), ccfg)
        if min(strip.n_left, strip.n_right) < ccfg.n_omin:
            return CellResult(
                ccfg.h,
                ccfg.n_omin,
                ccfg.alpha,
                feasible=False,
                rmse=float("nan"),
                note=f"strip has {strip.n_left} left / {strip.n_right} right < n_omin",
            )
    except StripEmptyError:
        return CellResult(
            ccfg.h, ccfg.n_omin, ccfg.alpha, feasible=False, rmse=float("nan"),
            note="strip empty",
        )
    errs = []
    for s_idx, y_s in enumerate(outcomes):
        ds_s = Dataset(y=y_s, x=x, w=w, cutoff=cutoff)
        fit_cfg = replace(scfg, seed=_synthetic_seed(scfg.seed, s_idx))
        try:
            draws = fit_bart_rdd(ds_s, fit_cfg, ccfg)
        except (ConfigurationError, StripEmptyError) as exc:
            return CellResult(
                ccfg.h, ccfg.n_omin, ccfg.alpha, feasible=False, rmse=float("nan"),
                note=f"{type(exc).__name__}: {exc}",
            )
        errs.append(float(draws.ate.mean()) - truth)
    rmse = float(np.sqrt(np.mean(np.square(errs))))
    return CellResult(ccfg.h, ccfg.n_omin, ccfg.alpha, feasible=True, rmse=rmse)


def elicit(
    x: np.ndarray,
    w: np.ndarray,
    cutoff: float,
    grid: ElicitationGrid,
    scfg: SamplerConfig,
    workers: int = 1,
) -> list[CellResult]:
    """Score every grid cell; feasible cells sorted ascending by RMSE, then
    infeasible cells. Deterministic given scfg.seed.

    Synthetic outcomes are generated once from (x, w) and shared across
    cells, so duplicate cells score identically.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if w.ndim == 1:
        w = w.reshape(-1, 1)
    base = Dataset(y=np.zeros(x.shape[0]), x=x, w=w, cutoff=cutoff)
    outcomes = []
    truth = None
    for s_idx in range(grid.s):
        rng = np.random.default_rng(np.random.SeedSequence([scfg.seed, 104729, s_idx]))
        y_s, truth = generate_elicitation_outcome(base, rng)
        outcomes.append(y_s)
    payload = (x, w, float(cutoff))
    tasks = [(ccfg, payload, scfg, outcomes, truth) for ccfg in grid.cells()]
    if workers <= 1:
        results = [_score_cell(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_score_cell, tasks))
    feasible = sorted(
        (r for r in results if r.feasible), key=lambda r: (r.rmse, r.h, r.n_omin, r.alpha)
    )
    infeasible = [r for r in results if not r.feasible]
    if not feasible:
        raise ConfigurationError(
            "every grid cell is infeasible for this sample; enlarge h or relax n_omin"
        )
    return feasible + infeasible


@dataclass(frozen=True)
class Recommendation:
    choice: CellResult
    stratum_spread: dict[float, float]
    high_sensitivity_h: tuple[float, ...]
    sensitivity_multiple: float

    def as_dict(self) -> dict:
        return {
            "h": self.choice.h,
            "n_omin": self.choice.n_omin,
            "alpha": self.choice.alpha,
            "rmse": self.choice.rmse,
            "stratum_spread": {str(k): v for k, v in self.stratum_spread.items()},
            "high_sensitivity_h": list(self.high_sensitivity_h),
            "sensitivity_multiple": self.sensitivity_multiple,
        }


def recommend(table: Sequence[CellResult], sensitivity_multiple: float = 3.0) -> Recommendation:
    """Lowest-RMSE feasible cell plus a per-h sensitivity report.

    The spread of RMSE across (n_omin, alpha) within each h stratum is
    compared against the steadiest stratum; strata exceeding the configured
    multiple are flagged as high sensitivity, a caution against chasing the
    single lowest cell into an unstable region.
    """
    feasible = [r for r in table if r.feasible]
    if not feasible:
        raise ValueError("recommendation needs at least one feasible cell")
    choice = min(feasible, key=lambda r: (r.rmse, r.h, r.n_omin, r.alpha))
    spreads: dict[float, float] = {}
    for r in feasible:
        spreads.setdefault(r.h, [])
    by_h: dict[float, list[float]] = {h: [] for h in spreads}
    for r in feasible:
        by_h[r.h].append(r.rmse)
    stratum_spread = {h: float(max(v) - min(v)) for h, v in by_h.items()}
    best_spread = min(stratum_spread.values())
    flagged = tuple(
        sorted(h for h, sp in stratum_spread.items() if sp > sensitivity_multiple * best_spread)
    )
    return Recommendation(
        choice=choice,
        stratum_spread=stratum_spread,
        high_sensitivity_h=flagged,
        sensitivity_multiple=sensitivity_multiple,
    )
