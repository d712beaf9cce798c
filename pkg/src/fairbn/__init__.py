"""fairbn: robustness-based individual fairness analysis for discrete
Bayesian-network classifiers."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    Assignment,
    BayesianNetwork,
    CPT,
    DiscreteVariable,
    Factor,
    MarkovRandomField,
    ModelError,
    Representation,
    Role,
    bn_joint_probability,
    factor_product,
    factor_reduce,
    factor_restrict,
)
from .inference import (  # noqa: F401
    EliminationOrder,
    InferenceError,
    MpeResult,
    ZeroEvidenceError,
    min_fill_order,
    mpe,
    posterior,
)
from .ingest import (  # noqa: F401
    Dataset,
    IngestConfig,
    IngestError,
    binarise_target_by_median,
    discretise_quantile,
    load_csv,
    read_discretised,
    stratified_folds,
    write_discretised,
)
from .learning import (  # noqa: F401
    CountTable,
    LearningError,
    StructureSearchConfig,
    blanket_subnetwork,
    count_table,
    estimate_cpt,
    learn_structure,
    load_network,
    markov_blanket,
    save_network,
)
from .fairness import (  # noqa: F401
    FairnessError,
    FairnessModel,
    FRLRecord,
    NonBinaryTargetError,
    ZeroRatioError,
    build_fairness_model,
    build_ratio_mrf,
    classify,
    conservative_bounds,
    frl,
    frl_bruteforce,
    manhattan,
)
from .evaluation import (  # noqa: F401
    DecileSummary,
    EvaluationError,
    FoldResult,
    OracleMismatchError,
    brier,
    brier_bin_table,
    dataset_summary,
    decile_summary,
    run_experiment,
    timing_ratios,
)
