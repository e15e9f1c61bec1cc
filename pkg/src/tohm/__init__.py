"""Global p-values for tests with parameters unidentifiable under the null.

The supremum of a test-statistic field over a D-dimensional lattice is
calibrated by the expected Euler characteristic of its excursion sets, with
Lipschitz-Killing curvatures estimated from a small Monte Carlo run.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    CapabilityError,
    DomainError,
    EmptyDomainError,
    FieldParseError,
    InputError,
    NumericalError,
    SolveError,
    TohmError,
    ValidationError,
)
from .lattice import FieldSample, Lattice, build_lattice, index_distance, load_field, save_field  # noqa: F401
from .euler import (  # noqa: F401
    build_graph,
    clique_counts,
    count_cliques,
    euler_characteristic,
    euler_characteristic_oracle,
    excursion_set,
)
from .rft import (  # noqa: F401
    CHIBAR01,
    GAUSSIAN,
    DensityFamily,
    LKCSolution,
    PValueReport,
    chisquare,
    ec_density,
    expected_ec,
    global_pvalue,
    sigma_significance,
    solve_lkc,
)
