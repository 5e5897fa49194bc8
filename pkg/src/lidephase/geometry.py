"""Gradient coil and interferometer geometry.

The dephasing coil is a small circular coil whose symmetry axis points
along x, toward the atomic beam line (the z axis).  Everything needed by
the dephasing integral lives here: the exact off-axis loop field (complete
elliptic integrals), the transverse gradient of |B| on the beam midline,
the triangular path separation dx(z) of the two interferometer arms, the
phase accumulated by one (F, M_F) sublevel, and its reduction to a single
coupling constant C such that

    dphi = C * p * g_F * M_F * I / (m v^2).

Coordinates: z along the beam, increasing from the first to the third
grating; x transverse, positive toward the coil; y completes the frame.
The beam midline is x = y = 0.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import integrate
from scipy.special import ellipe, ellipk

from .atoms import CODATA, lande_g, zeeman_slope_breit_rabi
from .errors import ConfigError, FieldSingularityError, QuadratureError

__all__ = [
    "CoilSpec",
    "InterferometerGeometry",
    "CouplingConstant",
    "default_coil",
    "default_geometry",
    "loop_field",
    "gradient_profile",
    "path_separation",
    "phase_integral",
    "reduce_to_coupling",
    "field_profile_table",
    "coil_from_config",
    "geometry_from_config",
]

_WIRE_CLEARANCE = 1e-6  # m; closer than this to the conductor is an error
_GRAD_STEP = 1e-6  # m; finite-difference step for d|B|/dx


@dataclass(frozen=True)
class CoilSpec:
    """Circular gradient coil, axis along +x.

    radius           loop radius in m
    turns            number of windings (all modelled at the same radius)
    center_offset    distance from the coil center to the beam midline, m
    z_position       axial position of the coil center along the beam, m
    current          drive current in A (per-run value; parameter fits keep
                     geometry fixed and sweep this)
    """

    radius: float
    turns: int = 1
    center_offset: float = 0.007
    z_position: float = 0.0
    current: float = 0.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"coil radius must be positive, got {self.radius}")
        if self.turns < 1 or self.turns != int(self.turns):
            raise ValueError(f"turns must be a positive integer, got {self.turns}")
        if not math.isfinite(self.current):
            raise ValueError("coil current must be finite")

    def with_current(self, current):
        return replace(self, current=current)


@dataclass(frozen=True)
class InterferometerGeometry:
    """Symmetric three-grating Mach-Zehnder geometry.

    The gratings are standing light waves of period a = lambda_L / 2, so
    the grating period and the laser wavevector are tied by a = pi / k_L.
    """

    z1: float
    z2: float
    z3: float
    grating_period: float
    laser_wavevector: float
    diffraction_order: int = 1

    def __post_init__(self):
        if not self.z1 < self.z2 < self.z3:
            raise ValueError("grating positions must satisfy z1 < z2 < z3")
        if abs((self.z2 - self.z1) - (self.z3 - self.z2)) > 1e-9 * (self.z3 - self.z1):
            raise ValueError("Mach-Zehnder geometry must be symmetric: z2-z1 == z3-z2")
        if self.grating_period <= 0 or self.laser_wavevector <= 0:
            raise ValueError("grating period and laser wavevector must be positive")
        if abs(self.grating_period * self.laser_wavevector - math.pi) > 1e-9:
            raise ValueError("grating period must equal pi / k_L (half the laser wavelength)")
        if self.diffraction_order < 1 or self.diffraction_order != int(self.diffraction_order):
            raise ValueError("diffraction order must be a positive integer")

    @classmethod
    def from_wavelength(cls, laser_wavelength, z1=0.0, grating_spacing=0.605, diffraction_order=1):
        k_L = 2 * math.pi / laser_wavelength
        return cls(
            z1=z1,
            z2=z1 + grating_spacing,
            z3=z1 + 2 * grating_spacing,
            grating_period=laser_wavelength / 2,
            laser_wavevector=k_L,
            diffraction_order=diffraction_order,
        )


@dataclass(frozen=True)
class CouplingConstant:
    """Geometry factor C of the dephasing law dphi = C p g_F M_F I / (m v^2).

    Units J/A: multiplied by the dimensionless p g_F M_F, the current in A
    and divided by m v^2 in J, it yields a phase in rad.
    """

    C: float

    def __post_init__(self):
        if not math.isfinite(self.C):
            raise ValueError("coupling constant must be finite")


def default_geometry(diffraction_order=1):
    """671 nm standing waves, 0.605 m grating spacing, z1 at the origin."""
    return InterferometerGeometry.from_wavelength(
        671e-9, z1=0.0, grating_spacing=0.605, diffraction_order=diffraction_order
    )


def default_coil(geometry=None):
    """3 cm diameter coil, 0.7 cm from the beam, 4 cm before the middle grating.

    The winding count is not a measured quantity; 5 turns puts the field at
    closest approach near 1.3 mT at 9 A, the scale seen by the atoms in the
    experiment this models.  Absolute field knowledge is not critical since
    the coupling constant is a fit parameter.
    """
    geom = geometry or default_geometry()
    return CoilSpec(radius=0.015, turns=5, center_offset=0.007, z_position=geom.z2 - 0.04)


def loop_field(coil, point, constants=CODATA):
    """Magnetic field of the coil at a lab-frame point (x, y, z), in T.

    Exact magnetostatic solution for a circular filament (complete elliptic
    integrals), multiplied by the number of turns.  Positive current gives
    a field along +x at the coil center.
    """
    x, y, z = (float(c) for c in point)
    axial = x - coil.center_offset  # along the coil axis (+x)
    dy = y
    dz = z - coil.z_position
    rho = math.hypot(dy, dz)
    a = coil.radius
    if math.hypot(rho - a, axial) < _WIRE_CLEARANCE:
        raise FieldSingularityError(
            f"field point {point} is within {_WIRE_CLEARANCE} m of the coil conductor"
        )
    amps = coil.turns * coil.current
    if amps == 0.0:
        return np.zeros(3)
    pref = constants.mu_0 * amps / (2 * math.pi)
    denom_sq = (a + rho) ** 2 + axial**2
    denom = math.sqrt(denom_sq)
    m = 4 * a * rho / denom_sq
    K = ellipk(m)
    E = ellipe(m)
    near = (a - rho) ** 2 + axial**2
    b_axial = pref / denom * (K + E * (a * a - rho * rho - axial * axial) / near)
    if rho == 0.0:
        b_rho = 0.0
    else:
        b_rho = pref * axial / (rho * denom) * (-K + E * (a * a + rho * rho + axial * axial) / near)
    field = np.zeros(3)
    field[0] = b_axial
    if rho > 0.0:
        field[1] = b_rho * dy / rho
        field[2] = b_rho * dz / rho
    return field


def _field_magnitude(coil, x, z, ambient, constants):
    b = loop_field(coil, (x, 0.0, z), constants)
    if ambient is not None:
        b = b + ambient
    return float(np.linalg.norm(b))


def gradient_profile(coil, geom, z, ambient=None, step=_GRAD_STEP, constants=CODATA):
    """d|B|/dx on the beam midline at height z, in T/m.

    Central difference with Richardson extrapolation (steps h and h/2);
    z must lie between the first and last grating.
    """
    if not geom.z1 <= z <= geom.z3:
        raise ValueError(f"z = {z} lies outside the interferometer [{geom.z1}, {geom.z3}]")
    h = step

    def central(hh):
        return (
            _field_magnitude(coil, hh, z, ambient, constants)
            - _field_magnitude(coil, -hh, z, ambient, constants)
        ) / (2 * hh)

    d1 = central(h)
    d2 = central(h / 2)
    return (4 * d2 - d1) / 3


def path_separation(geom, mass, v, z):
    """Transverse separation dx(z) of the two arms for an atom of speed v.

    Triangular profile: zero at the outer gratings, maximal at the middle
    one.  The opening angle is the Bragg diffraction angle
    theta = 2 p hbar k_L / (m v), i.e. p grating-momentum transfers
    h / a = 2 hbar k_L each.
    """
    if v <= 0:
        raise ValueError(f"atom speed must be positive, got {v}")
    if not geom.z1 <= z <= geom.z3:
        raise ValueError(f"z = {z} lies outside the interferometer [{geom.z1}, {geom.z3}]")
    theta = 2 * geom.diffraction_order * CODATA.hbar * geom.laser_wavevector / (mass * v)
    if z <= geom.z2:
        return theta * (z - geom.z1)
    return theta * (geom.z3 - z)


def _quad_checked(fn, geom, coil, rtol):
    """Adaptive quadrature over [z1, z3] with breakpoints at the kink and peak."""
    points = sorted({geom.z2, min(max(coil.z_position, geom.z1), geom.z3)})
    out = integrate.quad(
        fn, geom.z1, geom.z3, points=points, limit=200, epsabs=0.0, epsrel=rtol,
        full_output=True,
    )
    result, abserr = out[0], out[1]
    if len(out) > 3:  # an explanation string is only present on failure
        raise QuadratureError(f"dephasing quadrature did not converge: {out[3].strip()}")
    if abserr > rtol * max(abs(result), 1e-300) and abserr > 1e-16:
        raise QuadratureError(
            f"dephasing quadrature reached error {abserr:.2e} on result {result:.6e}, "
            f"above the requested relative tolerance {rtol:.1e}"
        )
    return result


def phase_integral(coil, geom, iso, s, v, current, mode="linear", ambient=None,
                   rtol=1e-8, constants=CODATA):
    """Dephasing phase of sublevel s for one arm pair, in rad.

    Integrates -(1/hbar v) dE/dB(|B(z)|) d|B|/dx(z) dx(z) over z between
    the outer gratings.  In "linear" mode dE/dB is the constant
    -g_F mu_B M_F; in "breit_rabi" mode it is the local Breit-Rabi slope at
    the on-axis field magnitude, which captures hyperfine uncoupling.
    """
    if v <= 0:
        raise ValueError(f"atom speed must be positive, got {v}")
    if mode not in ("linear", "breit_rabi"):
        raise ValueError(f"mode must be 'linear' or 'breit_rabi', got {mode!r}")
    driven = coil.with_current(current)
    if mode == "linear":
        const_slope = -lande_g(iso, s.F) * constants.mu_B * s.M_F

        def slope(z):
            return const_slope

    else:

        def slope(z):
            b_mag = _field_magnitude(driven, 0.0, z, ambient, constants)
            return zeeman_slope_breit_rabi(iso, s, b_mag, constants)

    def integrand(z):
        return (
            slope(z)
            * gradient_profile(driven, geom, z, ambient=ambient, constants=constants)
            * path_separation(geom, iso.mass, v, z)
        )

    total = _quad_checked(integrand, geom, driven, rtol)
    return -total / (constants.hbar * v)


def reduce_to_coupling(coil, geom, rtol=1e-8, constants=CODATA):
    """Collapse the geometry to the coupling constant C of the scaling law.

    C = 2 mu_B k_L * integral of (d|B|/dx per ampere) * T(z) dz, where T(z)
    is the triangular arm-separation profile with unit opening angle.  By
    construction C * p * g_F * M_F * I / (m v^2) reproduces phase_integral
    in linear mode with no ambient field.
    """
    unit = coil.with_current(1.0)

    def triangle(z):
        return (z - geom.z1) if z <= geom.z2 else (geom.z3 - z)

    def integrand(z):
        return gradient_profile(unit, geom, z, constants=constants) * triangle(z)

    total = _quad_checked(integrand, geom, unit, rtol)
    return CouplingConstant(2 * constants.mu_B * geom.laser_wavevector * total)


def field_profile_table(coil, geom, mass, v, n=401, ambient=None, constants=CODATA):
    """Sample B, d|B|/dx and dx along the beam for CSV export.

    Returns four arrays (z, |B|, d|B|/dx, dx) of length n.
    """
    z = np.linspace(geom.z1, geom.z3, n)
    b = np.array([_field_magnitude(coil, 0.0, zz, ambient, constants) for zz in z])
    dbdx = np.array(
        [gradient_profile(coil, geom, zz, ambient=ambient, constants=constants) for zz in z]
    )
    dx = np.array([path_separation(geom, mass, v, zz) for zz in z])
    return z, b, dbdx, dx


def coil_from_config(view, geom):
    """CoilSpec from config keys under `coil.` (missing keys -> defaults)."""
    base = default_coil(geom)
    try:
        return CoilSpec(
            radius=view.get_float("coil.radius_m", base.radius),
            turns=view.get_int("coil.turns", base.turns),
            center_offset=view.get_float("coil.offset_m", base.center_offset),
            z_position=view.get_float("coil.z_m", base.z_position),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid coil configuration: {exc}") from exc


def geometry_from_config(view, diffraction_order=1):
    """InterferometerGeometry from `laser.` / `grating.` config keys."""
    wavelength = view.get_float("laser.wavelength_m", 671e-9)
    z1 = view.get_float("grating.z1_m", 0.0)
    spacing = view.get_float("grating.spacing_m", 0.605)
    try:
        return InterferometerGeometry.from_wavelength(
            wavelength, z1=z1, grating_spacing=spacing, diffraction_order=diffraction_order
        )
    except ValueError as exc:
        raise ConfigError(f"invalid interferometer geometry: {exc}") from exc
