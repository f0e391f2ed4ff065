"""Dataset representation, configuration records, and outcome standardization.

Everything downstream consumes the immutable :class:`Dataset` built here: an
outcome vector ``y``, a running variable ``x``, a covariate matrix ``w``, a
known cutoff, and the derived sharp treatment indicator ``z = 1(x >= cutoff)``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    CsvParseError,
    EmptyDataError,
    SchemaError,
    StripEmptyError,
)


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    if out is arr:
        out = arr.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Dataset:
    """A sharp-design sample: (y, x, w, cutoff) with z derived from x.

    Arrays are copied and marked read-only; instances are safe to share
    across worker processes.
    """

    y: np.ndarray
    x: np.ndarray
    w: np.ndarray
    cutoff: float
    z: np.ndarray = field(init=False)

    def __post_init__(self):
        y = _frozen(np.asarray(self.y, dtype=np.float64))
        x = _frozen(np.asarray(self.x, dtype=np.float64))
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim == 1:
            w = w.reshape(-1, 1)
        w = _frozen(w)
        if y.ndim != 1 or x.ndim != 1 or w.ndim != 2:
            raise ValueError("y and x must be vectors and w a matrix")
        n = y.shape[0]
        if n < 1:
            raise EmptyDataError("dataset must contain at least one row")
        if x.shape[0] != n or w.shape[0] != n:
            raise ValueError(
                f"length mismatch: y has {n} rows, x has {x.shape[0]}, w has {w.shape[0]}"
            )
        for name, arr in (("y", y), ("x", x), ("w", w)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")
        c = float(self.cutoff)
        z = _frozen((x >= c).astype(np.int64))
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "cutoff", c)
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.w.shape[1]

    def features(self) -> np.ndarray:
        """Feature matrix [x | w] with the running variable in column 0."""
        return np.column_stack([self.x, self.w])

    def with_outcome(self, y: np.ndarray) -> "Dataset":
        return Dataset(y=y, x=self.x, w=self.w, cutoff=self.cutoff)


@dataclass(frozen=True)
class ScalingRecord:
    """Mean/scale pair for exact inversion of outcome standardization."""

    mean: float
    scale: float

    def apply(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.mean) / self.scale

    def invert(self, y_std: np.ndarray) -> np.ndarray:
        return np.asarray(y_std, dtype=np.float64) * self.scale + self.mean

    def invert_difference(self, d_std: np.ndarray) -> np.ndarray:
        """Back-transform a difference of outcomes (the mean shift cancels)."""
        return np.asarray(d_std, dtype=np.float64) * self.scale


def standardize(ds: Dataset) -> tuple[Dataset, ScalingRecord]:
    """Center and scale the outcome to sample mean 0 and sample sd 1 (ddof=1).

    A constant outcome is only centered (scale fixed at 1). x and w are left
    untouched.
    """
    mean = float(np.mean(ds.y))
    sd = float(np.std(ds.y, ddof=1)) if ds.n >= 2 else 0.0
    if not np.isfinite(sd) or sd == 0.0:
        sd = 1.0
    rec = ScalingRecord(mean=mean, scale=sd)
    return ds.with_outcome(rec.apply(ds.y)), rec


@dataclass(frozen=True)
class ConstraintConfig:
    """Identification-strip prior parameters (h, n_omin, alpha)."""

    h: float = 0.1
    n_omin: int = 10
    alpha: float = 0.6

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"h must be > 0, got {self.h}")
        if int(self.n_omin) < 1:
            raise ValueError(f"n_omin must be >= 1, got {self.n_omin}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "n_omin", int(self.n_omin))
        object.__setattr__(self, "alpha", float(self.alpha))


@dataclass(frozen=True)
class SamplerConfig:
    """Settings for the sum-of-trees samplers.

    Leaf prior variances default to 0.6/num_trees_mu and 0.3/num_trees_tau on
    the standardized outcome scale, so the prior predictive spread of each
    forest sum is fixed while the effect forest is shrunk harder.
    """

    num_trees_mu: int = 50
    num_trees_tau: int = 20
    num_sweeps: int = 120
    burn_in: int = 20
    max_depth: int = 10
    min_node_size: int = 5
    num_cutpoint_candidates: int = 100
    tree_prior_alpha: float = 0.95
    tree_prior_beta: float = 2.0
    # leaf prior variances double as the hyperprior mean when
    # sample_leaf_variance is on
    leaf_prior_variance_mu: Optional[float] = None
    leaf_prior_variance_tau: Optional[float] = None
    sample_leaf_variance: bool = True
    sigma_prior_shape: float = 3.0
    sigma_prior_rate: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in (
            "num_trees_mu",
            "num_trees_tau",
            "num_sweeps",
            "min_node_size",
            "num_cutpoint_candidates",
        ):
            v = int(getattr(self, name))
            if v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v}")
            object.__setattr__(self, name, v)
        # depth 0 is allowed: forests of root-only trees
        md = int(self.max_depth)
        if md < 0:
            raise ValueError(f"max_depth must be >= 0, got {md}")
        object.__setattr__(self, "max_depth", md)
        burn = int(self.burn_in)
        if burn < 0 or burn >= self.num_sweeps:
            raise ValueError(
                f"burn_in must satisfy 0 <= burn_in < num_sweeps, got {burn}"
            )
        object.__setattr__(self, "burn_in", burn)
        if not 0.0 < self.tree_prior_alpha < 1.0:
            raise ValueError("tree_prior_alpha must lie in (0, 1)")
        if self.tree_prior_beta < 0.0:
            raise ValueError("tree_prior_beta must be >= 0")
        lv_mu = self.leaf_prior_variance_mu
        if lv_mu is None:
            lv_mu = 0.6 / self.num_trees_mu
        lv_tau = self.leaf_prior_variance_tau
        if lv_tau is None:
            lv_tau = 0.3 / self.num_trees_tau
        if lv_mu <= 0 or lv_tau <= 0:
            raise ValueError("leaf prior variances must be > 0")
        object.__setattr__(self, "leaf_prior_variance_mu", float(lv_mu))
        object.__setattr__(self, "leaf_prior_variance_tau", float(lv_tau))
        if self.sigma_prior_shape <= 0 or self.sigma_prior_rate <= 0:
            raise ValueError("sigma prior shape and rate must be > 0")
        seed = int(self.seed)
        if seed < 0:
            raise ValueError("seed must be a non-negative integer")
        object.__setattr__(self, "seed", seed)

    @property
    def num_retained(self) -> int:
        return self.num_sweeps - self.burn_in


@dataclass(frozen=True)
class StripIndex:
    """Indices of observations inside [c-h, c) and [c, c+h]."""

    left_ids: np.ndarray
    right_ids: np.ndarray

    @property
    def n_left(self) -> int:
        return self.left_ids.shape[0]

    @property
    def n_right(self) -> int:
        return self.right_ids.shape[0]


def build_strip_index(ds: Dataset, cfg: ConstraintConfig) -> StripIndex:
    """Exact strip membership: left side [c-h, c) half-open, right side [c, c+h] closed."""
    c, h = ds.cutoff, cfg.h
    left = np.flatnonzero((ds.x >= c - h) & (ds.x < c))
    right = np.flatnonzero((ds.x >= c) & (ds.x <= c + h))
    if left.size == 0 and right.size == 0:
        raise StripEmptyError(
            f"no observations in the identification strip [{c - h}, {c + h}]"
        )
    return StripIndex(left_ids=_frozen(left), right_ids=_frozen(right))


def strip_masks(ds: Dataset, cfg: ConstraintConfig) -> tuple[np.ndarray, np.ndarray]:
    """0/1 masks over all rows marking left-strip and right-strip membership."""
    strip = build_strip_index(ds, cfg)
    ml = np.zeros(ds.n, dtype=np.uint8)
    mr = np.zeros(ds.n, dtype=np.uint8)
    ml[strip.left_ids] = 1
    mr[strip.right_ids] = 1
    return ml, mr


# ---------------------------------------------------------------------------
# CSV input/output


@dataclass(frozen=True)
class CsvSchema:
    """Explicit, named column mapping for CSV data. Never positional."""

    outcome: str = "y"
    running: str = "x"
    covariates: Optional[Sequence[str]] = None  # None: all remaining columns


def load_csv(path, schema: CsvSchema, cutoff: float) -> Dataset:
    """Read a dataset from a headered CSV file.

    The treatment indicator is derived from the running variable and the
    cutoff; row order is preserved.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDataError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        rows = list(reader)
    if not rows:
        raise EmptyDataError(f"{path}: no data rows")

    col_index = {name: i for i, name in enumerate(header)}
    for required in (schema.outcome, schema.running):
        if required not in col_index:
            raise SchemaError(f"{path}: missing required column {required!r}")
    if schema.covariates is None:
        cov_names = [
            name for name in header if name not in (schema.outcome, schema.running)
        ]
    else:
        cov_names = list(schema.covariates)
        for name in cov_names:
            if name not in col_index:
                raise SchemaError(f"{path}: missing covariate column {name!r}")

    def parse(row_idx: int, row: list, column: str) -> float:
        j = col_index[column]
        if j >= len(row):
            raise CsvParseError(
                f"{path}: row {row_idx}: missing value in column {column!r}",
                row=row_idx,
                column=column,
            )
        cell = row[j].strip()
        try:
            return float(cell)
        except ValueError:
            raise CsvParseError(
                f"{path}: row {row_idx}: cannot parse {cell!r} in column {column!r}",
                row=row_idx,
                column=column,
            ) from None

    n = len(rows)
    y = np.empty(n)
    x = np.empty(n)
    w = np.empty((n, len(cov_names)))
    for i, row in enumerate(rows):
        row_no = i + 2  # 1-based, counting the header line
        y[i] = parse(row_no, row, schema.outcome)
        x[i] = parse(row_no, row, schema.running)
        for k, name in enumerate(cov_names):
            w[i, k] = parse(row_no, row, name)
    return Dataset(y=y, x=x, w=w, cutoff=cutoff)


def write_csv(ds: Dataset, path, schema: CsvSchema = CsvSchema()) -> list[str]:
    """Write a dataset as CSV using shortest round-trip float formatting.

    Returns the covariate column names used. Reloading with the same schema
    reproduces y, x, w bit for bit.
    """
    if schema.covariates is None:
        cov_names = [f"w{k + 1}" for k in range(ds.p)]
    else:
        cov_names = list(schema.covariates)
        if len(cov_names) != ds.p:
            raise SchemaError(
                f"schema names {len(cov_names)} covariates, dataset has {ds.p}"
            )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([schema.outcome, schema.running, *cov_names])
        for i in range(ds.n):
            writer.writerow(
                [repr(ds.y[i].item()), repr(ds.x[i].item())]
                + [repr(v.item()) for v in ds.w[i]]
            )
    return cov_names


# ---------------------------------------------------------------------------
# Flat key-value config documents


def load_config_file(path) -> tuple[SamplerConfig, ConstraintConfig]:
    """Parse a flat JSON document whose keys match the config field names."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: expected a flat JSON object")
    return configs_from_mapping(doc, source=str(path))


def configs_from_mapping(doc: dict, source: str = "config") -> tuple[SamplerConfig, ConstraintConfig]:
    sampler_fields = {f.name for f in fields(SamplerConfig)}
    constraint_fields = {f.name for f in fields(ConstraintConfig)}
    skw, ckw = {}, {}
    for key, value in doc.items():
        if key in sampler_fields:
            skw[key] = value
        elif key in constraint_fields:
            ckw[key] = value
        else:
            raise ConfigurationError(f"{source}: unknown config key {key!r}")
    return SamplerConfig(**skw), ConstraintConfig(**ckw)
