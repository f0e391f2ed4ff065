"""Identification-strip split policy for sharp-design tree growth.

A node that makes predictions at the cutoff (its running-variable interval
covers c) must keep a minimum number of strip observations on each side of
the cutoff (condition i: min(n_l, n_r) >= n_omin), and at least a fraction
alpha of its observations inside the strip (condition ii). Condition i
invalidates candidate splits; condition ii forbids stopping. When a node
must split but no valid split exists, growth stops anyway and the fit is
flagged with an invalid leaf.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import ClassVar, Sequence

import numpy as np

from .data import ConstraintConfig, Dataset, StripIndex, build_strip_index
from .errors import ConfigurationError
from .forest import FlatTree, Forest


class SplitCheck(Enum):
    VALID = "valid"
    INVALID_CONDITION_I = "invalid_condition_i"


class StopCheck(Enum):
    MAY_STOP = "may_stop"
    MUST_SPLIT = "must_split"


@dataclass(frozen=True)
class NodeStripStats:
    """Strip composition of one tree node.

    ``contains_cutoff`` is a geometric property of the node's
    running-variable interval (where an x = c query routes), independent of
    whether any data point sits at c.
    """

    contains_cutoff: bool
    n_l: int
    n_r: int
    n_b: int


def interval_contains_cutoff(lo: float, hi: float, c: float) -> bool:
    """Whether an x = c query routes into a node with interval (lo, hi].

    Routing sends value <= threshold left, so a node's reachable x-set is
    left-open and right-closed.
    """
    return lo < c <= hi


def node_strip_stats(
    node_data,
    node_x_interval: tuple[float, float],
    ds: Dataset,
    strip: StripIndex,
    c: float,
) -> NodeStripStats:
    """Exact strip counts for a node plus its cutoff-containment flag."""
    rows = np.asarray(node_data, dtype=np.int64)
    lo, hi = node_x_interval
    in_node = np.zeros(ds.n, dtype=bool)
    in_node[rows] = True
    n_l = int(in_node[strip.left_ids].sum())
    n_r = int(in_node[strip.right_ids].sum())
    return NodeStripStats(
        contains_cutoff=interval_contains_cutoff(lo, hi, c),
        n_l=n_l,
        n_r=n_r,
        n_b=int(rows.shape[0]),
    )


def split_validity(
    parent: NodeStripStats,
    left: NodeStripStats,
    right: NodeStripStats,
    cfg: ConstraintConfig,
) -> SplitCheck:
    """Condition i: a child covering the cutoff needs at least n_omin strip
    observations on each side; otherwise the split is invalid.

    An x-split hands the cutoff to at most one child; a covariate split
    leaves it in both, and both are checked.
    """
    for child in (left, right):
        if child.contains_cutoff and min(child.n_l, child.n_r) < cfg.n_omin:
            return SplitCheck.INVALID_CONDITION_I
    return SplitCheck.VALID


def stop_validity(node: NodeStripStats, cfg: ConstraintConfig) -> StopCheck:
    """Condition ii: a cutoff-covering node whose strip fraction is below
    alpha may not become a leaf."""
    if node.contains_cutoff and (node.n_l + node.n_r) / node.n_b < cfg.alpha:
        return StopCheck.MUST_SPLIT
    return StopCheck.MAY_STOP


def apply_policy(
    weights: np.ndarray,
    node: NodeStripStats,
    child_stats: Sequence[tuple[NodeStripStats, NodeStripStats]],
    cfg: ConstraintConfig,
) -> tuple[np.ndarray, bool]:
    """Patch a candidate weight vector per the strip constraints.

    ``weights`` has one entry per candidate split plus a final no-split
    weight. Invalid-split weights become 0; if the node must split, the
    no-split weight becomes 0 unless every candidate is invalid, in which
    case it becomes 1 and the invalid-leaf flag is raised.
    """
    out = np.array(weights, dtype=np.float64)
    if out.shape[0] != len(child_stats) + 1:
        raise ValueError("weights must hold one entry per candidate plus a stop weight")
    any_valid = False
    for i, (left, right) in enumerate(child_stats):
        if split_validity(node, left, right, cfg) is SplitCheck.INVALID_CONDITION_I:
            out[i] = 0.0
        elif out[i] > 0:
            any_valid = True
    invalid_leaf = False
    if stop_validity(node, cfg) is StopCheck.MUST_SPLIT:
        if any_valid:
            out[-1] = 0.0
        else:
            out[-1] = 1.0
            invalid_leaf = True
    return out, invalid_leaf


# ---------------------------------------------------------------------------
# Policies consumed by the grow engine


@dataclass(frozen=True)
class UnconstrainedPolicy:
    """Plain sum-of-trees growth: every split valid, stopping always allowed."""

    constrained: ClassVar[bool] = False


@dataclass(frozen=True)
class StripOverlapPolicy:
    """Enforces the strip constraints during growth on both forests."""

    cfg: ConstraintConfig
    constrained: ClassVar[bool] = True

    def check_root(self, ds: Dataset) -> StripIndex:
        """Condition i at the root: abort before fitting when the strip
        cannot support any valid tree."""
        strip = build_strip_index(ds, self.cfg)
        if min(strip.n_left, strip.n_right) < self.cfg.n_omin:
            raise ConfigurationError(
                f"identification strip too thin: {strip.n_left} left / "
                f"{strip.n_right} right observations for h={self.cfg.h}, "
                f"n_omin={self.cfg.n_omin}"
            )
        return strip


# ---------------------------------------------------------------------------
# Post-fit audit: the executable form of the leaf validity condition


@dataclass(frozen=True)
class LeafAuditRecord:
    tree_index: int
    n_l: int
    n_r: int
    n_b: int
    satisfies_min: bool
    satisfies_fraction: bool

    @property
    def ok(self) -> bool:
        return self.satisfies_min and self.satisfies_fraction


def audit_tree(
    tree: FlatTree,
    features: np.ndarray,
    strip_left: np.ndarray,
    strip_right: np.ndarray,
    cutoff: float,
    cfg: ConstraintConfig,
    tree_index: int = 0,
) -> list[LeafAuditRecord]:
    """Audit every cutoff-covering leaf of one tree, routing the training
    data independently of the sampler.

    At a running-variable split only one child keeps the cutoff; at a
    covariate split both do, so both subtrees are followed.
    """
    rows0 = np.arange(features.shape[0])
    records: list[LeafAuditRecord] = []
    stack = [(0, rows0)]
    while stack:
        nid, rows = stack.pop()
        while tree.var[nid] >= 0:
            j = int(tree.var[nid])
            go_left = features[rows, j] <= tree.thr[nid]
            if j == 0:
                if cutoff <= tree.thr[nid]:
                    rows = rows[go_left]
                    nid = int(tree.left[nid])
                else:
                    rows = rows[~go_left]
                    nid = int(tree.right[nid])
            else:
                stack.append((int(tree.right[nid]), rows[~go_left]))
                rows = rows[go_left]
                nid = int(tree.left[nid])
        n_l = int(strip_left[rows].sum())
        n_r = int(strip_right[rows].sum())
        n_b = int(rows.shape[0])
        records.append(
            LeafAuditRecord(
                tree_index=tree_index,
                n_l=n_l,
                n_r=n_r,
                n_b=n_b,
                satisfies_min=min(n_l, n_r) >= cfg.n_omin,
                satisfies_fraction=n_b > 0 and (n_l + n_r) / n_b >= cfg.alpha,
            )
        )
    return records


def audit_forest(
    forest: Forest,
    features: np.ndarray,
    strip_left: np.ndarray,
    strip_right: np.ndarray,
    cutoff: float,
    cfg: ConstraintConfig,
) -> list[LeafAuditRecord]:
    records = []
    for i, tree in enumerate(forest.flat_trees):
        records.extend(
            audit_tree(tree, features, strip_left, strip_right, cutoff, cfg, tree_index=i)
        )
    return records


def count_audit_violations(records: Sequence[LeafAuditRecord]) -> int:
    return sum(1 for rec in records if not rec.ok)
