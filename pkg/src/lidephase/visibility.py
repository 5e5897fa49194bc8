"""Velocity- and sublevel-averaged fringe visibility.

The detected interference signal is an incoherent sum over the populated
(F, M_F) sublevels and over the longitudinal velocity distribution of the
beam.  Each term contributes a unit phasor exp(i dphi(F, M_F, v)), so the
relative visibility and net phase shift follow from

    Z = sum_{F,M_F} P(F,M_F) * integral P(v) exp(i dphi(F,M_F,v)) dv,

normalized to the zero-gradient case: V_r = |Z|, net phase = arg Z.
Because dphi scales as 1/v^2, the velocity average washes the fringes out
with revivals whenever the populated dephasing phases realign modulo 2pi.

The velocity density is the supersonic-beam form

    P(v) = S / (u sqrt(pi)) * exp(-((v - u) S / u)^2)

with most probable velocity u and parallel speed ratio S (the v^3
pre-factor of the full supersonic theory is negligible at large S^2 and is
off by default; a flag restores it).  An optional Gaussian transmission
factor models the velocity acceptance of Bragg diffraction; when enabled
the product density is renormalized.  A beam with S = inf is treated as
monochromatic.

Numerics: composite Gauss-Legendre quadrature (32-point panels) over the
six-sigma support of the density, doubling the panel count until two
successive levels agree.  Node sets and density weights are cached per
beam, and sublevels whose dephasing laws are exact mirror images share one
quadrature through complex conjugation, which also makes the conjugate
pairing of +-M_F phasors exact in floating point.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .atoms import CODATA, lande_g, sublevels
from .errors import ConfigError, QuadratureError
from .geometry import phase_integral, reduce_to_coupling

__all__ = [
    "BeamSpec",
    "SublevelPopulation",
    "VisibilityPoint",
    "uniform_population",
    "pumped_population",
    "population_from_weights",
    "velocity_support",
    "velocity_pdf",
    "complex_fringe_sum",
    "visibility_curve",
    "envelope_approximation",
]

_SUPPORT_HALF_WIDTHS = 6.0  # integration support in units of u/S
_MIN_SPEED_FRACTION = 0.05  # keep v > u/20 even for very broad distributions
_PANEL = 32  # Gauss-Legendre nodes per panel
_LEVEL_MIN = 1  # 2 panels = 64 nodes
_LEVEL_MAX = 12  # 4096 panels = 131072 nodes
_DEFAULT_RTOL = 1e-9


@dataclass(frozen=True)
class BeamSpec:
    """Longitudinal velocity distribution of the beam.

    u                    most probable velocity, m/s
    speed_ratio          parallel speed ratio S (> 1); math.inf selects a
                         monochromatic beam
    v3_prefactor         restore the v^3 weighting of supersonic-beam theory
    transmission_center  center of the Gaussian velocity acceptance, m/s
                         (None disables the transmission factor)
    transmission_ratio   speed-ratio-like inverse width of the acceptance
    """

    u: float
    speed_ratio: float
    v3_prefactor: bool = False
    transmission_center: float | None = None
    transmission_ratio: float | None = None

    def __post_init__(self):
        if self.u <= 0:
            raise ValueError(f"most probable velocity must be positive, got {self.u}")
        if not self.speed_ratio > 1:
            raise ValueError(f"speed ratio must exceed 1, got {self.speed_ratio}")
        if (self.transmission_center is None) != (self.transmission_ratio is None):
            raise ValueError("transmission_center and transmission_ratio come as a pair")
        if self.transmission_center is not None:
            if self.transmission_center <= 0 or self.transmission_ratio <= 0:
                raise ValueError("transmission parameters must be positive")

    @property
    def monochromatic(self):
        return math.isinf(self.speed_ratio)

    @property
    def plain(self):
        """True when the density is the bare analytic form (unit norm)."""
        return not self.v3_prefactor and self.transmission_center is None


@dataclass(frozen=True)
class SublevelPopulation:
    """Occupation probabilities of the (F, M_F) sublevels."""

    entries: tuple

    def __post_init__(self):
        entries = tuple((s, float(w)) for s, w in self.entries)
        if not entries:
            raise ValueError("population must contain at least one sublevel")
        if any(w < 0 for _, w in entries):
            raise ValueError("population weights must be nonnegative")
        total = math.fsum(w for _, w in entries)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"population weights must sum to 1, got {total!r}")
        object.__setattr__(self, "entries", entries)

    def weights(self):
        return np.array([w for _, w in self.entries])

    def states(self):
        return [s for s, _ in self.entries]


def uniform_population(iso):
    """All 2(2I+1) ground sublevels equally populated (no optical pumping)."""
    levels = sublevels(iso)
    w = 1.0 / len(levels)
    return SublevelPopulation(tuple((s, w) for s in levels))


def pumped_population(iso, F):
    """Equal population of the 2F+1 sublevels of a single hyperfine level."""
    levels = [s for s in sublevels(iso) if abs(s.F - F) < 1e-9]
    if not levels:
        raise ValueError(f"F = {F} is not a ground hyperfine level of {iso.name}")
    w = 1.0 / len(levels)
    return SublevelPopulation(tuple((s, w) for s in levels))


def population_from_weights(pairs):
    """Population from (Sublevel, weight) pairs; weights are renormalized."""
    total = math.fsum(w for _, w in pairs)
    if total <= 0:
        raise ConfigError("population weights must have a positive sum")
    return SublevelPopulation(tuple((s, w / total) for s, w in pairs))


@dataclass(frozen=True)
class VisibilityPoint:
    """One point of a relative-visibility curve."""

    current: float
    V_r: float
    phase: float
    sigma: float | None = None
    phase_sigma: float | None = None

    def __post_init__(self):
        tol = 3 * (self.sigma or 0.0) + 1e-9
        if self.V_r < -tol or self.V_r > 1 + tol:
            raise ValueError(f"relative visibility {self.V_r} outside [0, 1] tolerance band")


def velocity_support(beam):
    """Integration interval [v_lo, v_hi] covering the velocity density."""
    if beam.monochromatic:
        return beam.u, beam.u
    half = _SUPPORT_HALF_WIDTHS / beam.speed_ratio
    lo = beam.u * max(1.0 - half, _MIN_SPEED_FRACTION)
    hi = beam.u * (1.0 + half)
    return lo, hi


def _density_factors(beam, v):
    """Unnormalized density on an array of speeds."""
    xi = (v - beam.u) * beam.speed_ratio / beam.u
    dens = np.exp(-xi * xi) * (beam.speed_ratio / (beam.u * math.sqrt(math.pi)))
    if beam.v3_prefactor:
        dens = dens * (v / beam.u) ** 3
    if beam.transmission_center is not None:
        eta = (v - beam.transmission_center) * beam.transmission_ratio / beam.transmission_center
        dens = dens * np.exp(-eta * eta)
    return dens


@lru_cache(maxsize=4)
def _panel_rule(order):
    return np.polynomial.legendre.leggauss(order)


@lru_cache(maxsize=256)
def _beam_rule(beam, level):
    """Composite-rule speeds and density-weighted quadrature weights."""
    lo, hi = velocity_support(beam)
    x, w = _panel_rule(_PANEL)
    edges = np.linspace(lo, hi, 2**level + 1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    halves = 0.5 * np.diff(edges)
    v = (mids[:, None] + halves[:, None] * x).ravel()
    weights = (halves[:, None] * w).ravel()
    return v, weights * _density_factors(beam, v)


def _beam_norm(beam, rtol=1e-12):
    """Numerical norm of the density over its support (1 for the plain form)."""
    if beam.monochromatic:
        return 1.0
    prev = None
    for level in range(_LEVEL_MIN, _LEVEL_MAX + 1):
        _, dens_w = _beam_rule(beam, level)
        norm = float(np.sum(dens_w))
        if prev is not None and abs(norm - prev) <= rtol * max(1.0, abs(norm)):
            return norm
        prev = norm
    raise QuadratureError("velocity-density normalization did not converge")


def velocity_pdf(beam, v):
    """Normalized velocity density P(v), including any optional factors."""
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise ValueError("speeds must be positive")
    if beam.monochromatic:
        raise ValueError("a monochromatic beam has no density; use the quadrature API")
    dens = _density_factors(beam, v)
    if not beam.plain:
        dens = dens / _beam_norm(beam)
    return dens if dens.ndim else float(dens)


def _phasor_level(beam, phase_grid, level):
    """One quadrature level: Z batch and the bare-density norm.

    Entries of the batch whose phase law is identically zero are assigned
    the norm itself, so downstream ratios are exact at zero dephasing.
    """
    v, dens_w = _beam_rule(beam, level)
    phases = phase_grid(v)
    norm = complex(np.sum((1.0 + 0.0j) * dens_w))
    z = np.sum(np.exp(1j * phases) * dens_w, axis=-1)
    quiet = ~phases.any(axis=-1)
    if np.any(quiet):
        z[quiet] = norm
    return z, norm


def _averaged_phasors(beam, phase_grid, rtol=_DEFAULT_RTOL, level=None,
                      max_level=_LEVEL_MAX, strict=True):
    """Velocity average of exp(i phase) for a batch of phase laws.

    phase_grid(v_nodes) must return an array whose last axis matches the
    nodes.  Returns (Z, norm, level): Z has the leading shape of the
    batch; norm is the quadrature of the bare density on the same node
    set with the same reduction, so Z/norm is exactly 1 at zero phase.
    With `level=None` the panel count doubles until two successive levels
    agree within rtol; an explicit level skips the adaptivity (used to
    keep the model perfectly smooth inside optimizer loops).  When the
    ladder is exhausted the strict mode raises; otherwise the last level
    is returned (useful for optimizers probing pathological corners).
    """
    if beam.monochromatic:
        phases = phase_grid(np.array([beam.u]))
        return np.exp(1j * phases)[..., 0], 1.0 + 0.0j, 0
    if level is not None:
        z, norm = _phasor_level(beam, phase_grid, level)
        return z, norm, level
    prev = None
    for lvl in range(_LEVEL_MIN, max_level + 1):
        z, norm = _phasor_level(beam, phase_grid, lvl)
        if prev is not None:
            scale = max(1.0, float(np.max(np.abs(z))), abs(norm))
            if (
                float(np.max(np.abs(z - prev[0]))) <= rtol * scale
                and abs(norm - prev[1]) <= rtol * scale
            ):
                return z, norm, lvl
        prev = (z, norm)
    if not strict:
        return prev[0], prev[1], max_level
    raise QuadratureError(
        f"velocity average did not converge within {_PANEL * 2**max_level} quadrature nodes"
    )


def complex_fringe_sum(pop, beam, phase_fn, rtol=_DEFAULT_RTOL):
    """Relative visibility and net phase of one population.

    phase_fn(sublevel, v) must accept an ndarray of speeds and return the
    dephasing phases in rad.  Returns (V_r, phase) where V_r = |Z| is
    normalized so the zero-dephasing case gives exactly 1.
    """
    states = pop.states()
    weights = pop.weights()

    def phase_grid(v):
        return np.stack([np.broadcast_to(phase_fn(s, v), v.shape) for s in states])

    z, norm, _ = _averaged_phasors(beam, phase_grid, rtol=rtol)
    num = np.dot(weights, z)
    den = np.dot(weights, np.full(len(states), norm))
    vis = abs(num) / abs(den)
    return min(float(vis), 1.0), float(np.angle(num))


def envelope_approximation(dphi_u, speed_ratio):
    """First-order washout envelope exp(-(dphi_u / S)^2).

    Obtained by linearizing the 1/v^2 dephasing around u under the
    supersonic velocity density; a quick analytic cross-check for the
    single-sublevel decay.  It underestimates the exact average once
    dphi_u approaches S, where the curvature of 1/v^2 starts to matter.
    """
    if not speed_ratio > 1:
        raise ValueError(f"speed ratio must exceed 1, got {speed_ratio}")
    return math.exp(-((dphi_u / speed_ratio) ** 2))


def _phase_matrix(components, order, mode, currents, u, coupling, coil, geometry,
                  constants, phase_rtol):
    """Phase-at-u matrix K (rows: component sublevels) and weight vector."""
    rows = []
    weight_rows = []
    if mode == "linear" and coupling is None:
        if coil is None or geometry is None:
            raise ValueError("linear mode needs either a coupling constant or coil + geometry")
        coupling = reduce_to_coupling(coil, geometry, constants=constants)
    for iso, pop, comp_weight in components:
        for s, w in pop.entries:
            if mode == "linear":
                per_amp = coupling.C * order * lande_g(iso, s.F) * s.M_F / (iso.mass * u * u)
                rows.append(per_amp * currents)
            else:
                rows.append(
                    np.array(
                        [
                            phase_integral(
                                coil, geometry, iso, s, u, cur, mode="breit_rabi",
                                rtol=phase_rtol, constants=constants,
                            )
                            for cur in currents
                        ]
                    )
                )
            weight_rows.append(comp_weight * w)
    return np.array(rows), np.array(weight_rows)


def _dedupe_rows(K):
    """Group identical and sign-mirrored phase rows.

    Returns (unique row matrix, index of each original row, conjugation
    sign per original row).  Mirrored rows share one quadrature; their
    phasors are exact complex conjugates of each other.
    """
    seen = {}
    unique = []
    index = np.empty(K.shape[0], dtype=int)
    conj = np.empty(K.shape[0], dtype=bool)
    for r in range(K.shape[0]):
        key = K[r].tobytes()
        if key in seen:
            index[r], conj[r] = seen[key], False
            continue
        neg = (-K[r]).tobytes()
        if neg in seen:
            index[r], conj[r] = seen[neg], True
            continue
        seen[key] = len(unique)
        unique.append(K[r])
        index[r], conj[r] = seen[key], False
    return np.array(unique), index, conj


def visibility_curve(components, beam, currents, *, order=1, mode="linear",
                     coupling=None, coil=None, geometry=None, constants=CODATA,
                     rtol=_DEFAULT_RTOL, phase_rtol=1e-8, level=None):
    """Relative visibility and phase versus coil current.

    components  sequence of (IsotopeSpec, SublevelPopulation, weight); the
                weights are signal fractions and must be nonnegative and
                sum to 1.  Fringe patterns of different components are
                assumed in phase at zero current, so they add as phasors.
    currents    nonnegative drive currents, A
    mode        "linear" (scaling law, needs `coupling` or coil+geometry)
                or "breit_rabi" (full field-dependent slope, needs
                coil+geometry)
    level       explicit quadrature level (None = adaptive); exposed so
                optimizers can freeze the node set

    Returns a list of VisibilityPoint, one per current, with V_r = 1
    exactly at zero current.
    """
    comps = list(components)
    total = math.fsum(w for _, _, w in comps)
    if any(w < 0 for _, _, w in comps) or abs(total - 1.0) > 1e-9:
        raise ValueError("component weights must be nonnegative and sum to 1")
    currents = np.asarray(currents, dtype=float)
    if np.any(currents < 0):
        raise ValueError("currents must be nonnegative")
    if mode not in ("linear", "breit_rabi"):
        raise ValueError(f"mode must be 'linear' or 'breit_rabi', got {mode!r}")
    if mode == "breit_rabi" and (coil is None or geometry is None):
        raise ValueError("breit_rabi mode requires coil and geometry")

    K, weights = _phase_matrix(
        comps, order, mode, currents, beam.u, coupling, coil, geometry, constants, phase_rtol
    )
    uniq, index, conj = _dedupe_rows(K)

    def phase_grid(v):
        return uniq[:, :, None] * (beam.u / v) ** 2

    z_uniq, norm, used_level = _averaged_phasors(beam, phase_grid, rtol=rtol, level=level)
    z = z_uniq[index]
    z[conj] = np.conj(z[conj])
    num = weights @ z
    den = weights @ np.full(z.shape, norm)
    points = []
    for i, cur in enumerate(currents):
        vis = min(float(abs(num[i]) / abs(den[i])), 1.0)
        points.append(VisibilityPoint(float(cur), vis, float(np.angle(num[i]))))
    return points


def adaptive_level(components, beam, currents, max_level=_LEVEL_MAX, strict=True, **kwargs):
    """Quadrature level the adaptive engine settles on for this problem.

    Convenience for optimizers that afterwards evaluate visibility_curve
    with a frozen `level` to keep the objective perfectly smooth.  With
    strict=False the ladder is simply capped at max_level instead of
    raising when it fails to converge there.
    """
    kwargs.pop("level", None)
    comps = list(components)
    currents = np.asarray(currents, dtype=float)
    K, _ = _phase_matrix(
        comps,
        kwargs.get("order", 1),
        kwargs.get("mode", "linear"),
        currents,
        beam.u,
        kwargs.get("coupling"),
        kwargs.get("coil"),
        kwargs.get("geometry"),
        kwargs.get("constants", CODATA),
        kwargs.get("phase_rtol", 1e-8),
    )
    uniq, _, _ = _dedupe_rows(K)

    def phase_grid(v):
        return uniq[:, :, None] * (beam.u / v) ** 2

    _, _, level = _averaged_phasors(
        beam, phase_grid, rtol=kwargs.get("rtol", _DEFAULT_RTOL),
        max_level=max_level, strict=strict,
    )
    return level
