"""Posterior summaries: interval tables, subgroup contrasts, and a CART
summarization tree over unit-level effect point estimates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .models import PosteriorDraws


@dataclass(frozen=True)
class IntervalSummary:
    mean: float
    sd: float
    q_low: float
    q_high: float
    median: float
    min: float
    max: float
    level: float = 0.95

    def as_dict(self) -> dict:
        return {
            "mean": self.mean,
            "sd": self.sd,
            "q_low": self.q_low,
            "q_high": self.q_high,
            "median": self.median,
            "min": self.min,
            "max": self.max,
            "level": self.level,
        }


def summarize_chain(draws: np.ndarray, level: float = 0.95) -> IntervalSummary:
    """Equal-tailed summary of one scalar chain; quantiles use linear
    interpolation of order statistics."""
    d = np.asarray(draws, dtype=np.float64).ravel()
    if d.shape[0] < 2:
        raise ValueError("need at least 2 draws to summarize")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    tail = (1.0 - level) / 2.0
    qlo, med, qhi = np.quantile(d, [tail, 0.5, 1.0 - tail], method="linear")
    return IntervalSummary(
        mean=float(d.mean()),
        sd=float(d.std(ddof=1)),
        q_low=float(qlo),
        q_high=float(qhi),
        median=float(med),
        min=float(d.min()),
        max=float(d.max()),
        level=level,
    )


@dataclass(frozen=True)
class PosteriorSummary:
    ate: IntervalSummary
    cate: list[IntervalSummary]
    strip_unit_ids: np.ndarray


def summarize(draws: PosteriorDraws, level: float = 0.95) -> PosteriorSummary:
    """Interval summaries for the strip-averaged effect and each unit."""
    ate = summarize_chain(draws.ate, level)
    cate = [summarize_chain(draws.cate[:, u], level) for u in range(draws.cate.shape[1])]
    return PosteriorSummary(ate=ate, cate=cate, strip_unit_ids=draws.strip_unit_ids)


def subgroup_contrast(
    draws: PosteriorDraws, group_a, group_b
) -> tuple[np.ndarray, float]:
    """Per-draw difference in mean effects between two disjoint unit groups
    and the posterior probability that it is strictly positive.

    Groups index columns of the effect draw matrix. Ties at exactly zero
    count as non-positive.
    """
    a = np.asarray(group_a, dtype=np.int64)
    b = np.asarray(group_b, dtype=np.int64)
    if a.size == 0 or b.size == 0:
        raise ValueError("subgroup contrast needs two nonempty groups")
    if np.intersect1d(a, b).size > 0:
        raise ValueError("subgroups must be disjoint")
    ncols = draws.cate.shape[1]
    for g in (a, b):
        if g.min() < 0 or g.max() >= ncols:
            raise ValueError("group indices out of range of strip units")
    diff = draws.cate[:, a].mean(axis=1) - draws.cate[:, b].mean(axis=1)
    p_positive = float(np.mean(diff > 0.0))
    return diff, p_positive


# ---------------------------------------------------------------------------
# Summarization tree (greedy variance-reduction CART on point estimates)


@dataclass
class SummaryNode:
    mean: float
    share: float
    n: int
    var: int = -1
    threshold: float = 0.0
    left: Optional["SummaryNode"] = None
    right: Optional["SummaryNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.var < 0


@dataclass
class SummaryTree:
    root: SummaryNode
    feature_names: list[str]

    def render(self) -> str:
        lines: list[str] = []

        def walk(node: SummaryNode, indent: int, label: str):
            pad = "  " * indent
            lines.append(
                f"{pad}{label}mean={node.mean:+.4f}  share={node.share:.1%}  n={node.n}"
            )
            if not node.is_leaf:
                name = self.feature_names[node.var]
                walk(node.left, indent + 1, f"[{name} <= {node.threshold:g}] ")
                walk(node.right, indent + 1, f"[{name} > {node.threshold:g}] ")

        walk(self.root, 0, "")
        return "\n".join(lines)

    def node_list(self) -> list[dict]:
        out: list[dict] = []

        def walk(node: SummaryNode, depth: int) -> int:
            nid = len(out)
            rec = {
                "id": nid,
                "depth": depth,
                "mean": node.mean,
                "share": node.share,
                "n": node.n,
                "leaf": node.is_leaf,
            }
            out.append(rec)
            if not node.is_leaf:
                rec["feature"] = self.feature_names[node.var]
                rec["threshold"] = node.threshold
                rec["left"] = walk(node.left, depth + 1)
                rec["right"] = walk(node.right, depth + 1)
            return nid

        walk(self.root, 0)
        return out


def _best_split(est: np.ndarray, col: np.ndarray, min_leaf: int) -> tuple[float, float]:
    """Exhaustive best (threshold, SSE gain) for one feature; thresholds at
    observed values, value <= threshold goes left, children below
    ``min_leaf`` excluded."""
    order = np.argsort(col, kind="stable")
    v = col[order]
    e = est[order]
    n = v.shape[0]
    csum = np.cumsum(e)
    csq = np.cumsum(e * e)
    total_sse = csq[-1] - csum[-1] ** 2 / n
    boundaries = np.flatnonzero(v[:-1] != v[1:])
    if boundaries.size:
        nl = boundaries + 1
        keep = (nl >= min_leaf) & (n - nl >= min_leaf)
        boundaries = boundaries[keep]
    if boundaries.size == 0:
        return np.nan, -np.inf
    nl = boundaries + 1
    nr = n - nl
    sse_l = csq[boundaries] - csum[boundaries] ** 2 / nl
    sse_r = (csq[-1] - csq[boundaries]) - (csum[-1] - csum[boundaries]) ** 2 / nr
    gains = total_sse - sse_l - sse_r
    best = int(np.argmax(gains))
    return float(v[boundaries[best]]), float(gains[best])


def fit_summary_tree(
    point_estimates: np.ndarray,
    w: np.ndarray,
    *,
    max_depth: int = 3,
    min_leaf: Optional[int] = None,
    feature_names: Optional[Sequence[str]] = None,
) -> SummaryTree:
    """Greedy CART over covariates, fit to unit-level effect point estimates.

    Each node stores its mean effect and sample share; splits maximize the
    decrease in sum of squared deviations; children smaller than ``min_leaf``
    (default 5% of units) are not created.
    """
    est = np.asarray(point_estimates, dtype=np.float64).ravel()
    W = np.asarray(w, dtype=np.float64)
    if W.ndim == 1:
        W = W.reshape(-1, 1)
    n = est.shape[0]
    if W.shape[0] != n:
        raise ValueError("point estimates and covariates length mismatch")
    if min_leaf is None:
        min_leaf = max(1, int(np.ceil(0.05 * n)))
    if n < 2 * min_leaf:
        raise ValueError(f"need at least {2 * min_leaf} units for min_leaf={min_leaf}")
    names = (
        list(feature_names)
        if feature_names is not None
        else [f"w{j + 1}" for j in range(W.shape[1])]
    )
    if len(names) != W.shape[1]:
        raise ValueError("feature_names length mismatch")

    def build(rows: np.ndarray, depth: int) -> SummaryNode:
        e = est[rows]
        node = SummaryNode(mean=float(e.mean()), share=rows.shape[0] / n, n=rows.shape[0])
        if depth >= max_depth or rows.shape[0] < 2 * min_leaf or np.ptp(e) == 0.0:
            return node
        best_gain = 0.0
        best_var = -1
        best_thr = np.nan
        for j in range(W.shape[1]):
            thr, gain = _best_split(e, W[rows, j], min_leaf)
            if gain > best_gain:
                best_gain, best_var, best_thr = gain, j, thr
        if best_var < 0:
            return node
        mask = W[rows, best_var] <= best_thr
        node.var = best_var
        node.threshold = best_thr
        node.left = build(rows[mask], depth + 1)
        node.right = build(rows[~mask], depth + 1)
        return node

    return SummaryTree(root=build(np.arange(n), 0), feature_names=names)
