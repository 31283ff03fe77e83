"""session-miner: mine learning-platform transaction logs.

Parses heterogeneous logs into one canonical stream, infers class
sessions from activity gaps, computes time-based engagement measures on
a monthly panel, labels gaming-the-system behavior with a pluggable rule
engine plus a crossed random-intercept tendency model, and evaluates the
measures with generalizability theory and BIC-guided regression.
"""

__version__ = "0.1.0"

from .canonlog import (
    OutcomeRecord,
    ParseResult,
    RosterReport,
    Transaction,
    join_outcomes,
    parse_log,
    read_canonical,
    read_outcomes,
    write_canonical,
)
from .config import RunConfig, load_run_config
from .errors import SessionMinerError
from .gaming import (
    DEFAULT_RULES,
    GamingRule,
    TendencyModel,
    detect_gaming,
    estimate_tendency,
    monthly_gaming,
    parse_rules,
)
from .measures import (
    MEASURE_COLUMNS,
    monthly_panel,
    session_measures,
    student_aggregate,
)
from .sessionize import (
    Session,
    assign_sessions,
    auto_idle_threshold,
    classify_sessions,
    infer_sessions,
    slice_students,
    threshold_sweep,
)
from .stats import (
    RegressionFit,
    SkewReport,
    StepwiseResult,
    VarianceDecomposition,
    add_one,
    ols,
    pearson,
    skewness,
    skewness_and_transform,
    stepwise,
    variance_components,
    vif,
)
from .synth import CohortSpec, generate_cohort, parse_cohort_spec, write_bundle

__all__ = [
    "__version__",
    "CohortSpec",
    "DEFAULT_RULES",
    "GamingRule",
    "MEASURE_COLUMNS",
    "OutcomeRecord",
    "ParseResult",
    "RegressionFit",
    "RosterReport",
    "RunConfig",
    "Session",
    "SessionMinerError",
    "SkewReport",
    "StepwiseResult",
    "TendencyModel",
    "Transaction",
    "VarianceDecomposition",
    "add_one",
    "assign_sessions",
    "auto_idle_threshold",
    "classify_sessions",
    "detect_gaming",
    "estimate_tendency",
    "generate_cohort",
    "infer_sessions",
    "join_outcomes",
    "load_run_config",
    "monthly_gaming",
    "monthly_panel",
    "ols",
    "parse_cohort_spec",
    "parse_log",
    "parse_rules",
    "pearson",
    "read_canonical",
    "read_outcomes",
    "session_measures",
    "skewness",
    "skewness_and_transform",
    "slice_students",
    "stepwise",
    "student_aggregate",
    "threshold_sweep",
    "variance_components",
    "vif",
    "write_bundle",
    "write_canonical",
]
