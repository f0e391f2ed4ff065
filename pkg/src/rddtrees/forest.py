"""Sum-of-trees machinery: tree structure, cutpoint candidates, conjugate
Gaussian leaf model, integrated likelihood, and the grow-from-root sampler.

The sampler draws each split among candidate cutpoints with probability
proportional to the product of the children's integrated leaf likelihoods,
against a no-split option weighted |C| * ((1+d)^beta/alpha - 1) * m(s_node).
A pluggable policy may zero individual split weights or forbid stopping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernel
from .data import Dataset, SamplerConfig, strip_masks
from .errors import EstimationError

# stream codes for deterministic child RNGs, keyed (seed, sweep, code, tree)
STREAM_MU = 0
STREAM_TAU = 1
STREAM_SIGMA = 2
STREAM_SCALE = 3
STREAM_ARM0 = 4
STREAM_ARM1 = 5
STREAM_LEAFVAR = 6


def child_rng(seed: int, sweep: int, stream: int, tree: int) -> np.random.Generator:
    """Deterministic child generator for one (sweep, forest, tree) slot."""
    return np.random.default_rng(np.random.SeedSequence([seed, sweep, stream, tree]))


# ---------------------------------------------------------------------------
# Tree structures


@dataclass
class TreeNode:
    """A node of a binary regression tree.

    Internal nodes carry (var, threshold, left, right); routing sends
    value <= threshold to the left child. Leaves carry the scalar ``mu``
    and are marked by var == -1.
    """

    var: int = -1
    threshold: float = 0.0
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None
    mu: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.var < 0

    def route(self, features: np.ndarray) -> "TreeNode":
        node = self
        while not node.is_leaf:
            node = node.left if features[node.var] <= node.threshold else node.right
        return node

    def num_leaves(self) -> int:
        if self.is_leaf:
            return 1
        return self.left.num_leaves() + self.right.num_leaves()

    def num_internal(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + self.left.num_internal() + self.right.num_internal()


class FlatTree:
    """Preorder array form of a tree; the fast in-memory representation."""

    __slots__ = ("var", "thr", "left", "right", "leaf")

    def __init__(self, var, thr, left, right, leaf):
        self.var = var
        self.thr = thr
        self.left = left
        self.right = right
        self.leaf = leaf

    @property
    def n_nodes(self) -> int:
        return self.var.shape[0]

    @classmethod
    def single_leaf(cls, value: float = 0.0) -> "FlatTree":
        return cls(
            np.array([-1], np.int64),
            np.zeros(1),
            np.array([-1], np.int64),
            np.array([-1], np.int64),
            np.array([float(value)]),
        )

    @classmethod
    def from_node(cls, root: TreeNode) -> "FlatTree":
        var, thr, left, right, leaf = [], [], [], [], []

        def visit(node: TreeNode) -> int:
            nid = len(var)
            var.append(node.var if not node.is_leaf else -1)
            thr.append(node.threshold if not node.is_leaf else 0.0)
            left.append(-1)
            right.append(-1)
            leaf.append(node.mu if node.is_leaf else 0.0)
            if not node.is_leaf:
                left[nid] = visit(node.left)
                right[nid] = visit(node.right)
            return nid

        visit(root)
        return cls(
            np.asarray(var, np.int64),
            np.asarray(thr, np.float64),
            np.asarray(left, np.int64),
            np.asarray(right, np.int64),
            np.asarray(leaf, np.float64),
        )

    def to_node(self) -> TreeNode:
        def build(nid: int) -> TreeNode:
            if self.var[nid] < 0:
                return TreeNode(mu=float(self.leaf[nid]))
            return TreeNode(
                var=int(self.var[nid]),
                threshold=float(self.thr[nid]),
                left=build(int(self.left[nid])),
                right=build(int(self.right[nid])),
            )

        return build(0)

    def predict_rows(self, X: np.ndarray) -> np.ndarray:
        """Leaf value for every row of a feature matrix."""
        npts = X.shape[0]
        out = np.empty(npts)
        stack = [(0, np.arange(npts))]
        while stack:
            nid, rows = stack.pop()
            while self.var[nid] >= 0:
                go_left = X[rows, self.var[nid]] <= self.thr[nid]
                stack.append((int(self.right[nid]), rows[~go_left]))
                nid = int(self.left[nid])
                rows = rows[go_left]
            out[rows] = self.leaf[nid]
        return out

    def cutoff_leaf(self, cutoff: float) -> int:
        """Node id of the leaf an x = cutoff query routes to (x is feature 0)."""
        nid = 0
        while self.var[nid] >= 0:
            if self.var[nid] == 0:
                nid = int(self.left[nid]) if cutoff <= self.thr[nid] else int(self.right[nid])
            else:
                # covariate split: either child covers x = cutoff; follow left
                nid = int(self.left[nid])
        return nid


class Forest:
    """An additive ensemble; prediction is the sum over member trees."""

    def __init__(self, flat_trees: Sequence[FlatTree]):
        self._flat = list(flat_trees)
        self._nodes: Optional[list[TreeNode]] = None

    @classmethod
    def from_nodes(cls, roots: Sequence[TreeNode]) -> "Forest":
        return cls([FlatTree.from_node(r) for r in roots])

    @property
    def trees(self) -> list[TreeNode]:
        if self._nodes is None:
            self._nodes = [t.to_node() for t in self._flat]
        return self._nodes

    @property
    def flat_trees(self) -> list[FlatTree]:
        return self._flat

    def __len__(self) -> int:
        return len(self._flat)

    def predict(self, x: float, w: np.ndarray) -> float:
        if not self._flat:
            raise EstimationError("cannot predict with an empty forest")
        feats = np.concatenate([[float(x)], np.asarray(w, dtype=np.float64).ravel()])
        X = feats.reshape(1, -1)
        total = 0.0
        for tree in self._flat:
            total += tree.predict_rows(X)[0]
        return total

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        if not self._flat:
            raise EstimationError("cannot predict with an empty forest")
        X = np.asarray(X, dtype=np.float64)
        out = np.zeros(X.shape[0])
        for tree in self._flat:
            out += tree.predict_rows(X)
        return out

    def to_json_obj(self) -> list:
        """Trees as preorder node arrays: [var, threshold] or [-1, leaf value]."""
        doc = []
        for tree in self._flat:
            nodes = []
            for i in range(tree.n_nodes):
                if tree.var[i] < 0:
                    nodes.append([-1, float(tree.leaf[i])])
                else:
                    nodes.append([int(tree.var[i]), float(tree.thr[i])])
            doc.append(nodes)
        return doc

    @classmethod
    def from_json_obj(cls, doc: list) -> "Forest":
        trees = []
        for nodes in doc:
            n = len(nodes)
            var = np.empty(n, np.int64)
            thr = np.zeros(n)
            left = np.full(n, -1, np.int64)
            right = np.full(n, -1, np.int64)
            leaf = np.zeros(n)
            pos = 0

            def build() -> int:
                nonlocal pos
                nid = pos
                v, t = nodes[pos]
                pos += 1
                var[nid] = int(v)
                if v < 0:
                    leaf[nid] = float(t)
                else:
                    thr[nid] = float(t)
                    left[nid] = build()
                    right[nid] = build()
                return nid

            build()
            if pos != n:
                raise ValueError("malformed preorder tree document")
            trees.append(FlatTree(var, thr, left, right, leaf))
        return cls(trees)


def predict(forest: Forest, x: float, w: np.ndarray) -> float:
    """Deterministic forest prediction at a single point."""
    return forest.predict(x, w)


# ---------------------------------------------------------------------------
# Sufficient statistics, candidate cutpoints, conjugate leaf model


@dataclass(frozen=True)
class SuffStat:
    """Per-node count and residual sum; additive over disjoint index sets."""

    n: int
    sum_r: float

    def __add__(self, other: "SuffStat") -> "SuffStat":
        return SuffStat(self.n + other.n, self.sum_r + other.sum_r)

    @classmethod
    def of(cls, residuals: np.ndarray) -> "SuffStat":
        r = np.asarray(residuals, dtype=np.float64)
        return cls(int(r.shape[0]), float(r.sum()))


@dataclass(frozen=True)
class CutpointSet:
    """Per-feature sorted candidate thresholds; every candidate splits the
    node's data into two nonempty parts."""

    thresholds: tuple[np.ndarray, ...]

    @property
    def total(self) -> int:
        return sum(t.shape[0] for t in self.thresholds)


def candidate_cutpoints(
    node_data, ds_or_features, k: int, *_, **__
) -> CutpointSet:
    """Candidate thresholds for a node, at most k per feature.

    Thresholds sit at observed order statistics (evenly spaced empirical
    quantiles when the node has more than k distinct split positions);
    constant features contribute no candidates.
    """
    if isinstance(ds_or_features, Dataset):
        F = ds_or_features.features()
    else:
        F = np.asarray(ds_or_features, dtype=np.float64)
    rows = np.asarray(node_data, dtype=np.int64)
    if rows.shape[0] < 2:
        raise ValueError("candidate cutpoints need a node with >= 2 observations")
    out = []
    buf = np.empty(rows.shape[0], np.int64)
    for j in range(F.shape[1]):
        v = np.sort(F[rows, j])
        npos = _kernel.select_cutpoint_positions(v, int(k), buf)
        out.append(v[buf[:npos]].copy())
    return CutpointSet(thresholds=tuple(out))


def log_marginal_likelihood(s: SuffStat, sigma2: float, tau_leaf: float) -> float:
    """Integrated leaf likelihood log m(s), up to a constant shared by all
    candidate splits of a node:

        0.5 * log(sigma2 / (sigma2 + tau*n)) + tau * sum_r^2 / (2*sigma2*(sigma2 + tau*n))
    """
    if sigma2 <= 0 or tau_leaf <= 0:
        raise ValueError("sigma2 and tau_leaf must be positive")
    if s.n == 0:
        return 0.0
    denom = sigma2 + tau_leaf * s.n
    return 0.5 * math.log(sigma2 / denom) + tau_leaf * s.sum_r**2 / (2.0 * sigma2 * denom)


def sample_leaf(
    s: SuffStat, sigma2: float, tau_leaf: float, rng: np.random.Generator
) -> float:
    """Draw the leaf parameter from its conjugate Gaussian posterior."""
    if sigma2 <= 0 or tau_leaf <= 0:
        raise ValueError("sigma2 and tau_leaf must be positive")
    denom = sigma2 + tau_leaf * s.n
    mean = tau_leaf * s.sum_r / denom
    var = sigma2 * tau_leaf / denom
    return float(mean + math.sqrt(var) * rng.standard_normal())


def sample_sigma2(
    residuals: np.ndarray, prior_shape: float, prior_rate: float, rng: np.random.Generator
) -> float:
    """Draw the noise variance from InverseGamma(shape + n/2, rate + sum(r^2)/2)."""
    r = np.asarray(residuals, dtype=np.float64)
    shape = prior_shape + 0.5 * r.shape[0]
    rate = prior_rate + 0.5 * float(r @ r)
    return float(1.0 / rng.gamma(shape, 1.0 / rate))


# ---------------------------------------------------------------------------
# Grow engine


@dataclass
class GrowResult:
    tree: FlatTree
    invalid_leaves: int


class GrowEngine:
    """Owns presorted feature orderings and scratch buffers for one dataset;
    grows one tree per call against precision-weighted residuals."""

    def __init__(
        self,
        features: np.ndarray,
        strip_left: Optional[np.ndarray] = None,
        strip_right: Optional[np.ndarray] = None,
        cutoff: float = 0.0,
        n_omin: int = 0,
        alpha: float = 0.0,
    ):
        F = np.ascontiguousarray(features, dtype=np.float64)
        if F.ndim != 2 or F.shape[0] < 1:
            raise ValueError("feature matrix must be 2-D and nonempty")
        self.F = F
        n, P = F.shape
        self.n = n
        self.P = P
        self.ws0 = np.empty((P, n), np.int64)
        for j in range(P):
            self.ws0[j] = np.argsort(F[:, j], kind="stable")
        self.ws = np.empty_like(self.ws0)
        self.pred = np.zeros(n)
        self.mark = np.zeros(n, np.uint8)
        self._member = np.zeros(n, bool)
        if strip_left is None:
            self.strip_l = np.zeros(n, np.uint8)
            self.strip_r = np.zeros(n, np.uint8)
        else:
            self.strip_l = np.ascontiguousarray(strip_left, np.uint8)
            self.strip_r = np.ascontiguousarray(strip_right, np.uint8)
        self.cutoff = float(cutoff)
        self.n_omin = int(n_omin)
        self.alpha = float(alpha)

    def grow(
        self,
        wr: np.ndarray,
        w: np.ndarray,
        cfg: SamplerConfig,
        tau_leaf: float,
        rng: np.random.Generator,
        *,
        policy_on: bool = False,
        rows: Optional[np.ndarray] = None,
        depth: int = 0,
        x_lo: float = -np.inf,
        x_hi: float = np.inf,
    ) -> GrowResult:
        """Grow a tree; self.pred receives leaf values for the node's rows."""
        if rows is None:
            np.copyto(self.ws, self.ws0)
            lo, hi = 0, self.n
            m = self.n
        else:
            rows = np.asarray(rows, dtype=np.int64)
            m = rows.shape[0]
            if m < 1:
                raise ValueError("grow needs a nonempty node")
            self._member[rows] = True
            for j in range(self.P):
                order = self.ws0[j]
                sel = order[self._member[order]]
                self.ws[j, : sel.shape[0]] = sel
            self._member[rows] = False
            lo, hi = 0, m
        uniforms = rng.random(2 * m + 4)
        normals = rng.standard_normal(m + 4)
        var, thr, left, right, leaf, n_nodes, n_invalid, _, _ = _kernel.grow_tree(
            self.F,
            self.ws,
            lo,
            hi,
            np.ascontiguousarray(wr, dtype=np.float64),
            np.ascontiguousarray(w, dtype=np.float64),
            self.strip_l,
            self.strip_r,
            bool(policy_on),
            self.cutoff,
            self.n_omin,
            self.alpha,
            int(depth),
            float(x_lo),
            float(x_hi),
            cfg.max_depth,
            cfg.min_node_size,
            cfg.num_cutpoint_candidates,
            cfg.tree_prior_alpha,
            cfg.tree_prior_beta,
            float(tau_leaf),
            uniforms,
            normals,
            self.pred,
            self.mark,
        )
        return GrowResult(tree=FlatTree(var, thr, left, right, leaf), invalid_leaves=n_invalid)


def grow_from_root(
    node_data,
    residuals,
    ds: Dataset,
    depth: int,
    cfg: SamplerConfig,
    policy,
    rng: np.random.Generator,
    *,
    sigma2: float = 1.0,
    tau_leaf: Optional[float] = None,
    features: Optional[np.ndarray] = None,
    x_interval: tuple[float, float] = (-np.inf, np.inf),
) -> TreeNode:
    """Recursively grow a tree over the given node by stochastic cutpoint
    selection proportional to integrated likelihoods.

    ``residuals`` aligns with ``node_data``; ``policy`` is either
    unconstrained or an identification-strip policy (see the constraint
    module). The node's running-variable interval may be supplied when the
    entry node is not a root.
    """
    rows = np.asarray(node_data, dtype=np.int64)
    if rows.shape[0] < 1:
        raise ValueError("grow_from_root needs a nonempty node")
    r = np.asarray(residuals, dtype=np.float64)
    if r.shape[0] != rows.shape[0]:
        raise ValueError("residuals must align with node_data")
    F = ds.features() if features is None else np.asarray(features, dtype=np.float64)
    if tau_leaf is None:
        tau_leaf = cfg.leaf_prior_variance_mu
    constrained = bool(getattr(policy, "constrained", False))
    if constrained:
        ml, mr = strip_masks(ds, policy.cfg)
        engine = GrowEngine(
            F,
            strip_left=ml,
            strip_right=mr,
            cutoff=ds.cutoff,
            n_omin=policy.cfg.n_omin,
            alpha=policy.cfg.alpha,
        )
    else:
        engine = GrowEngine(F)
    w_full = np.zeros(F.shape[0])
    wr_full = np.zeros(F.shape[0])
    w_full[rows] = 1.0 / sigma2
    wr_full[rows] = r / sigma2
    result = engine.grow(
        wr_full,
        w_full,
        cfg,
        tau_leaf,
        rng,
        policy_on=constrained,
        rows=None if rows.shape[0] == F.shape[0] else rows,
        depth=depth,
        x_lo=x_interval[0],
        x_hi=x_interval[1],
    )
    return result.tree.to_node()
