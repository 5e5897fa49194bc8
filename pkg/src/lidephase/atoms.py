"""Hyperfine structure and Zeeman energies of alkali ground states (J = 1/2).

The electronic ground level splits into two hyperfine levels F = I -/+ 1/2.
In a weak magnetic field each (F, M_F) sublevel shifts linearly,

    E(F, M_F) = -g_F * mu_B * M_F * B,

while at larger fields the hyperfine coupling starts to break up and the
closed-form Breit-Rabi eigenvalues of the combined hyperfine + Zeeman
Hamiltonian are required.  Both energy models are provided, together with
the analytic field derivative dE/dB used by the dephasing integrals.

Energies are referenced to the hyperfine centroid, which makes the sum over
all 2(2I+1) sublevels independent of the field (the Zeeman operator is
traceless).  The sign convention above fixes the sign of every g_F branch;
dephasing observables depend only on the products g_F * M_F and are
insensitive to the global choice.
"""

import math
from dataclasses import dataclass

from scipy import constants as _sc

from .errors import ConfigError

__all__ = [
    "PhysicalConstants",
    "CODATA",
    "IsotopeSpec",
    "Sublevel",
    "LI6",
    "LI7",
    "isotope_preset",
    "isotope_from_config",
    "load_isotope",
    "hyperfine_f_levels",
    "sublevels",
    "lande_g",
    "hyperfine_offset",
    "zeeman_energy_linear",
    "zeeman_energy_breit_rabi",
    "zeeman_slope_breit_rabi",
]


@dataclass(frozen=True)
class PhysicalConstants:
    """CODATA constants used throughout, SI units."""

    mu_B: float = _sc.physical_constants["Bohr magneton"][0]  # J/T
    hbar: float = _sc.hbar  # J s
    mu_0: float = _sc.mu_0  # T m/A
    h: float = _sc.h  # J s


CODATA = PhysicalConstants()

_ATOMIC_MASS = _sc.physical_constants["atomic mass constant"][0]


def _is_half_integer(x, name):
    if not math.isfinite(x) or abs(2 * x - round(2 * x)) > 1e-9:
        raise ValueError(f"{name} must be a half-integer, got {x}")
    return round(2 * x) / 2


@dataclass(frozen=True)
class IsotopeSpec:
    """Ground-state constants of one isotope.

    mass            atomic mass in kg
    nuclear_spin    I (half-integer)
    hfs_splitting   ground-state hyperfine interval in J
    electronic_g    g_J of the J=1/2 level; the default 2.0 reproduces the
                    textbook g_F values (+-1/2 for I=3/2, +-2/3 for I=1)
    nuclear_g       g_I; 0 by default (nuclear moments neglected)
    abundance       number fraction in the natural beam, in [0, 1]
    """

    name: str
    mass: float
    nuclear_spin: float
    hfs_splitting: float
    electronic_g: float = 2.0
    nuclear_g: float = 0.0
    abundance: float = 1.0

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if self.hfs_splitting <= 0:
            raise ValueError("hfs_splitting must be positive")
        spin = _is_half_integer(self.nuclear_spin, "nuclear_spin")
        if spin < 0.5:
            raise ValueError("nuclear_spin must be at least 1/2 for two hyperfine levels")
        object.__setattr__(self, "nuclear_spin", spin)
        if not 0.0 <= self.abundance <= 1.0:
            raise ValueError(f"abundance must lie in [0, 1], got {self.abundance}")


@dataclass(frozen=True)
class Sublevel:
    """One (F, M_F) hyperfine sublevel."""

    F: float
    M_F: float

    def __post_init__(self):
        F = _is_half_integer(self.F, "F")
        M = _is_half_integer(self.M_F, "M_F")
        if F < 0:
            raise ValueError(f"F must be nonnegative, got {F}")
        if abs(M) > F + 1e-12:
            raise ValueError(f"|M_F| = {abs(M)} exceeds F = {F}")
        if abs((F - M) - round(F - M)) > 1e-9:
            raise ValueError(f"M_F = {M} is not an integer step away from F = {F}")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "M_F", M)


# Shipped presets.  Interval values are the standard ground-state hyperfine
# splittings (803.504 MHz for 7Li, 228.205 MHz for 6Li); natural abundances
# 92.4% / 7.6%.
LI7 = IsotopeSpec(
    name="Li7",
    mass=7.0160034366 * _ATOMIC_MASS,
    nuclear_spin=1.5,
    hfs_splitting=803.5040866e6 * CODATA.h,
    abundance=0.924,
)

LI6 = IsotopeSpec(
    name="Li6",
    mass=6.0151228874 * _ATOMIC_MASS,
    nuclear_spin=1.0,
    hfs_splitting=228.2052610e6 * CODATA.h,
    abundance=0.076,
)

_PRESETS = {"li6": LI6, "li7": LI7}


def isotope_preset(name):
    """Look up a built-in isotope ("Li6" or "Li7", case-insensitive)."""
    try:
        return _PRESETS[name.strip().lower()]
    except KeyError:
        raise ConfigError(f"unknown isotope preset {name!r}; known: Li6, Li7") from None


def isotope_from_config(cfg):
    """Build an IsotopeSpec from a key=value mapping (SI units).

    Required keys: name, mass_kg, nuclear_spin, hfs_splitting_J.
    Optional: electronic_g, nuclear_g, abundance.
    """
    def _get(key, cast, default=None):
        if key not in cfg:
            if default is not None:
                return default
            raise ConfigError(f"isotope config is missing key {key!r}")
        try:
            return cast(cfg[key])
        except (TypeError, ValueError):
            raise ConfigError(f"isotope config key {key!r} has invalid value {cfg[key]!r}") from None

    return IsotopeSpec(
        name=_get("name", str),
        mass=_get("mass_kg", float),
        nuclear_spin=_get("nuclear_spin", float),
        hfs_splitting=_get("hfs_splitting_J", float),
        electronic_g=_get("electronic_g", float, 2.0),
        nuclear_g=_get("nuclear_g", float, 0.0),
        abundance=_get("abundance", float, 1.0),
    )


def load_isotope(path):
    """Read an isotope definition from a key=value file (see isotope_from_config)."""
    from .config import read_config

    return isotope_from_config(read_config(path))


def hyperfine_f_levels(iso):
    """(F_lower, F_upper) of the two ground hyperfine levels."""
    I = iso.nuclear_spin
    return (abs(I - 0.5), I + 0.5)


def sublevels(iso):
    """All 2(2I+1) ground-state sublevels, ordered by (F, M_F)."""
    out = []
    for F in hyperfine_f_levels(iso):
        n = round(2 * F)
        out.extend(Sublevel(F, -F + k) for k in range(n + 1))
    return tuple(out)


def _check_f(iso, F):
    lo, up = hyperfine_f_levels(iso)
    if abs(F - lo) < 1e-9:
        return lo, False
    if abs(F - up) < 1e-9:
        return up, True
    raise ValueError(f"F = {F} is not a ground hyperfine level of {iso.name} (expected {lo} or {up})")


def lande_g(iso, F):
    """Hyperfine Lande factor g_F of one ground hyperfine level.

    Standard angular-momentum coupling for J = 1/2:
    g_F = gJ [F(F+1)+J(J+1)-I(I+1)] / [2F(F+1)]
        + gI [F(F+1)-J(J+1)+I(I+1)] / [2F(F+1)].
    """
    F, _ = _check_f(iso, F)
    if F == 0:
        # single M_F = 0 state; its moment never enters any observable
        return 0.0
    I = iso.nuclear_spin
    jj = 0.5 * 1.5
    ff = F * (F + 1)
    ii = I * (I + 1)
    return (iso.electronic_g * (ff + jj - ii) + iso.nuclear_g * (ff - jj + ii)) / (2 * ff)


def hyperfine_offset(iso, F):
    """Zero-field energy of level F relative to the hyperfine centroid."""
    _, upper = _check_f(iso, F)
    I = iso.nuclear_spin
    if upper:
        return iso.hfs_splitting * I / (2 * I + 1)
    return -iso.hfs_splitting * (I + 1) / (2 * I + 1)


def zeeman_energy_linear(iso, s, B, constants=CODATA):
    """Linear Zeeman energy -g_F mu_B M_F B (no hyperfine offset)."""
    if B < 0:
        raise ValueError("B must be a nonnegative field magnitude")
    _check_f(iso, s.F)
    return -lande_g(iso, s.F) * constants.mu_B * s.M_F * B


def _breit_rabi_terms(iso, s, B, constants):
    """Common pieces of the Breit-Rabi eigenvalue and its derivative."""
    I = iso.nuclear_spin
    _, upper = _check_f(iso, s.F)
    dW = iso.hfs_splitting
    x = (iso.electronic_g - iso.nuclear_g) * constants.mu_B * B / dW
    dx_dB = (iso.electronic_g - iso.nuclear_g) * constants.mu_B / dW
    return I, upper, dW, x, dx_dB


def zeeman_energy_breit_rabi(iso, s, B, constants=CODATA, field_ceiling=1.0):
    """Breit-Rabi eigenvalue of the state adiabatically connected to (F, M_F).

    Valid for J = 1/2 and any I.  Includes the zero-field hyperfine offset
    (centroid convention) so that summing over all sublevels gives a
    field-independent total.  The stretched states |M_F| = I + 1/2 follow
    their exact linear branch; the others carry the square-root term with
    the branch sign of their F level.  As B -> 0 the slope matches
    zeeman_energy_linear.

    Raises ValueError above `field_ceiling` (default 1 T): far beyond that
    the ground-manifold model itself stops being the right description.
    """
    if B < 0:
        raise ValueError("B must be a nonnegative field magnitude")
    if B > field_ceiling:
        raise ValueError(
            f"B = {B} T exceeds the validity ceiling {field_ceiling} T of the "
            "ground-state hyperfine model"
        )
    I, upper, dW, x, _ = _breit_rabi_terms(iso, s, B, constants)
    M = s.M_F
    base = -dW / (2 * (2 * I + 1)) - iso.nuclear_g * constants.mu_B * M * B
    if upper and abs(abs(M) - (I + 0.5)) < 1e-9:
        # stretched state: exact eigenstate, linear for all B
        return base + 0.5 * dW * (1 - 2 * M * x / (2 * I + 1))
    root = math.sqrt(1 - 4 * M * x / (2 * I + 1) + x * x)
    return base + (0.5 * dW * root if upper else -0.5 * dW * root)


def zeeman_slope_breit_rabi(iso, s, B, constants=CODATA, field_ceiling=1.0):
    """Analytic dE/dB of the Breit-Rabi eigenvalue at field B."""
    if B < 0:
        raise ValueError("B must be a nonnegative field magnitude")
    if B > field_ceiling:
        raise ValueError(f"B = {B} T exceeds the validity ceiling {field_ceiling} T")
    I, upper, dW, x, dx_dB = _breit_rabi_terms(iso, s, B, constants)
    M = s.M_F
    base = -iso.nuclear_g * constants.mu_B * M
    if upper and abs(abs(M) - (I + 0.5)) < 1e-9:
        return base - dW * M * dx_dB / (2 * I + 1)
    root = math.sqrt(1 - 4 * M * x / (2 * I + 1) + x * x)
    slope = 0.5 * dW * dx_dB * (x - 2 * M / (2 * I + 1)) / root
    return base + (slope if upper else -slope)
