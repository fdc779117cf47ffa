"""Two-weight bounds for the zero-diagonal discrete Hilbert kernel.

Finite nonnegative measures on a dyadic grid, the bilinear form between
them, and every constant the theory compares: interval testing, weak
boundedness, A2-type brackets, Hardy and half-line characterizations,
Poisson-type profiles with holes, positive dyadic forms, and the
stopping-time decomposition with its exact splitting identities.
``twoweight.report`` drives all of it over instance files and ensembles;
``twoweight.envelopes`` stores the frozen comparability constants next
to the scans that measured them.
"""

from .grid import (
    GridFunction,
    GridInterval,
    GridMeasure,
    InvariantViolation,
    from_atoms,
    joint_hull,
    norm_l2,
    reflect_translate,
)
from .dyadic import (
    ShiftedDyadicSystem,
    TripledInterval,
    expand_and_reconstruct,
    good_bad_split,
    tripled_iu,
    tripled_of,
)
from .forms import (
    HilbertForm,
    TestingReport,
    basic_bound_check,
    build_form,
    evaluate,
    testing_constants,
    truncation_sup,
    weak_boundedness,
    windowed_kn,
)
from .hardy import (
    ComplementRecord,
    complement_constants,
    halfline_characterization,
    hardy_constant,
    hardy_norm,
    tail_power_bound,
)
from .poisson import (
    A2Report,
    HolesTestingReport,
    PoissonProfile,
    QCompareRecord,
    a2_constants,
    compare_Q,
    energy_profile,
    holes_inequality_norm,
    holes_testing,
)
from .positive import (
    CubeMeasure,
    LambdaEntry,
    LatticeCube,
    PositiveDyadicForm,
    PositiveTestingReport,
    lambda_norm,
    lambda_testing,
)
from .decomposition import (
    AdmissiblePairs,
    ExtractionLedger,
    SplitResiduals,
    StoppingTree,
    admissible_q,
    box_form,
    build_stopping_tree,
    carleson_embedding_check,
    extraction,
    monotonicity_check,
    size_of_q,
    split_identities,
)
from .ensembles import ENSEMBLE_KINDS, make_ensemble, make_pair, random_functions
from .report import (
    ReportConfig,
    VerificationReport,
    default_battery,
    examine_pair,
    format_instance,
    ingest,
    parse_instance,
    run_report,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
