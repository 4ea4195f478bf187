"""Numerical laboratory for branching fixed points X =_d sum_i A_i X_i + B.

Simulates the minimal solution on the weighted branching tree, analyzes
the Mellin function m(s) = E[sum A_i^s], and estimates critical-case
tail constants by two independent routes (direct Monte Carlo tails and
a Laplace-transform/renewal formula).
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    CensoringExcess,
    ComplexityExceeded,
    DegenerateSample,
    GridTooNarrow,
    MellinDiverged,
    MonotonicityViolated,
    NoFiniteWindow,
    NoPlateau,
    NotConverged,
    NotNormalized,
    NoTwoRoots,
    SmoothtailError,
    WindowEmpty,
)
from .models import (  # noqa: F401
    BranchSample,
    InhomLaw,
    ModelSpec,
    OffspringLaw,
    WeightLaw,
    analytic_mellin,
    is_nonarithmetic,
    make_critical_lognormal,
    make_two_root_lognormal,
    sample_branch,
    sample_branches,
    spec_from_dict,
    spec_from_json,
    spec_to_dict,
    spec_to_json,
    two_root_exponents,
)
from .mellin import (  # noqa: F401
    AssumptionFlags,
    MellinReport,
    RootInfo,
    check_assumptions,
    default_delta,
    find_roots,
)
from .tilted import (  # noqa: F401
    TiltedLaw,
    WalkPath,
    WalkStats,
    W_function,
    estimate_sigma2,
    many_to_one_check,
    sample_Y,
    sample_Y_batch,
    tilted_law,
    walk_path,
)
from .tree import (  # noqa: F401
    PrunePolicy,
    SurvivalCounts,
    TreeBatch,
    TreeSample,
    floor_correction,
    max_weight_survival,
    pool_init,
    pool_iterate,
    sample_R,
    sample_R_batch,
    sample_max_weight,
    survival_counts,
)
from .laplace import (  # noqa: F401
    LaplaceGrid,
    PoissonData,
    TailConstant,
    derive_poisson,
    iterate_phi,
    regular_variation_ratios,
    tail_constant_from_laplace,
)
from .tails import (  # noqa: F401
    TailReport,
    estimate_C_plus,
    fit_tail,
    hill_plot,
    log_pareto_samples,
    pareto_samples,
    tail_report,
)
from .verify import (  # noqa: F401
    CheckResult,
    RunRecord,
    run_verify,
)
