"""Magnetic-gradient dephasing in a three-grating lithium atom interferometer.

A transverse magnetic-field gradient shifts each (F, M_F) matter-wave
pattern by a phase proportional to g_F M_F I / (m v^2); summed over the
populated sublevels and the beam's velocity distribution, the fringe
visibility decays and revives as the coil current grows.  This package
forward-models those curves for both lithium isotopes (linear Zeeman or
full Breit-Rabi energies), extracts visibility and phase from raw fringe
scans with drift correction, and fits the instrument parameters (coupling
constant, parallel speed ratio, isotope contamination) to measured data.
"""

from .atoms import (
    CODATA,
    LI6,
    LI7,
    IsotopeSpec,
    PhysicalConstants,
    Sublevel,
    hyperfine_f_levels,
    isotope_preset,
    lande_g,
    sublevels,
    zeeman_energy_breit_rabi,
    zeeman_energy_linear,
    zeeman_slope_breit_rabi,
)
from .errors import (
    ConfigError,
    CsvFormatError,
    DataQualityError,
    FieldSingularityError,
    FitError,
    FitNonConvergenceError,
    QuadratureError,
)
from .fitting import (
    FitParameter,
    FitProblem,
    FitResult,
    VisibilityModel,
    fit_visibility,
    profile_uncertainty,
)
from .fringes import (
    FringeFit,
    FringeScan,
    fit_fringe,
    reject_outliers,
    relative_series,
    synthesize_scan,
)
from .geometry import (
    CoilSpec,
    CouplingConstant,
    InterferometerGeometry,
    default_coil,
    default_geometry,
    field_profile_table,
    gradient_profile,
    loop_field,
    path_separation,
    phase_integral,
    reduce_to_coupling,
)
from .visibility import (
    BeamSpec,
    SublevelPopulation,
    VisibilityPoint,
    complex_fringe_sum,
    envelope_approximation,
    pumped_population,
    population_from_weights,
    uniform_population,
    velocity_pdf,
    velocity_support,
    visibility_curve,
)

__version__ = "0.1.0"
