"""Overlap-constrained Bayesian tree ensembles for sharp regression
discontinuity designs, with unconstrained baselines, prior elicitation, and a
simulation laboratory."""

__version__ = "0.1.0"

from .data import (
    ConstraintConfig,
    CsvSchema,
    Dataset,
    SamplerConfig,
    ScalingRecord,
    StripIndex,
    build_strip_index,
    load_csv,
    standardize,
    write_csv,
)
from .forest import (
    CutpointSet,
    Forest,
    SuffStat,
    TreeNode,
    candidate_cutpoints,
    grow_from_root,
    log_marginal_likelihood,
    predict,
    sample_leaf,
    sample_sigma2,
)
from .constraint import (
    NodeStripStats,
    SplitCheck,
    StopCheck,
    StripOverlapPolicy,
    UnconstrainedPolicy,
    apply_policy,
    audit_forest,
    node_strip_stats,
    split_validity,
    stop_validity,
)
from .models import (
    BartRddState,
    PosteriorDraws,
    fit_bart,
    fit_bart_rdd,
    fit_s_bart,
    fit_t_bart,
    sample_scale_params,
)
from .inference import (
    IntervalSummary,
    SummaryTree,
    fit_summary_tree,
    subgroup_contrast,
    summarize,
    summarize_chain,
)
from .simlab import (
    DgpConfig,
    MetricsRow,
    compute_metrics,
    generate_elicitation_outcome,
    generate_sim_dataset,
    run_replications,
)
from .elicitation import ElicitationGrid, elicit, recommend

__all__ = [name for name in dir() if not name.startswith("_")]
