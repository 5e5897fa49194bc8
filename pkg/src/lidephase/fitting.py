"""Least-squares estimation of model parameters from visibility curves.

The measured relative visibility V_r(I) is fit by the forward model of
`visibility`, with up to four free parameters: the coupling constant C (or
equivalently the coil-to-beam distance), the parallel speed ratio S, and
an optional contamination fraction f of a second isotope.  The objective

    chi2(theta) = sum_i [ (V_model(I_i; theta) - V_i) / sigma_i ]^2

is minimized with a damped Gauss-Newton (Levenberg-Marquardt) iteration
inside box bounds, forward-difference Jacobians, and a deterministic
multi-start over speed-ratio values to escape the local minima created by
the revival structure.

Each start freezes the quadrature node count discovered by the adaptive
engine at its initial point, so the objective seen by the optimizer is
perfectly smooth; once a start converges, the node count is re-checked at
the solution and the start is re-polished if it proved insufficient.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .atoms import CODATA
from .errors import FitError, FitNonConvergenceError
from .geometry import CouplingConstant, reduce_to_coupling
from .visibility import adaptive_level, visibility_curve

__all__ = [
    "FitParameter",
    "VisibilityModel",
    "FitProblem",
    "FitResult",
    "ProfilePoint",
    "fit_visibility",
    "profile_uncertainty",
]

SPEED_RATIO_STARTS = (5.0, 8.5, 12.0, 16.0, 25.0)

_XTOL = 1e-8  # relative parameter step for convergence
_GTOL = 1e-10  # infinity norm of the chi2 gradient
_FD_STEP = 1e-6  # forward-difference step scale
_MAX_ITER = 200


@dataclass(frozen=True)
class FitParameter:
    """One free parameter with bounds and an initial value."""

    name: str
    init: float
    lower: float
    upper: float

    def __post_init__(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise ValueError(f"bounds of {self.name!r} must be finite")
        if not self.lower < self.upper:
            raise ValueError(f"bounds of {self.name!r} must satisfy lower < upper")
        if not self.lower <= self.init <= self.upper:
            raise ValueError(f"initial {self.name!r} = {self.init} outside bounds")


@dataclass(frozen=True)
class VisibilityModel:
    """Forward-model configuration for a fit.

    main / contaminant   (IsotopeSpec, SublevelPopulation) pairs; the
                         contaminant signal fraction is the parameter "f"
                         (fixed at `contamination` when f is not free)
    beam                 BeamSpec template; its speed ratio is replaced by
                         the parameter "S_par" when that is free
    coupling             baseline coupling constant (parameter "C"
                         overrides it; parameter "coil_offset" recomputes
                         it from the coil geometry)
    coil, geometry       needed for "coil_offset" fits and breit_rabi mode
    """

    main: tuple
    beam: object
    coupling: CouplingConstant | None = None
    contaminant: tuple | None = None
    contamination: float = 0.0
    order: int = 1
    mode: str = "linear"
    coil: object = None
    geometry: object = None
    rtol: float = 1e-8  # velocity-quadrature agreement; data noise is >> this

    def _assemble(self, params):
        beam = self.beam
        if "S_par" in params:
            beam = replace(beam, speed_ratio=params["S_par"])
        coupling = self.coupling
        coil = self.coil
        if "coil_offset" in params:
            if self.coil is None or self.geometry is None:
                raise FitError("fitting coil_offset requires coil and geometry")
            coil = replace(self.coil, center_offset=params["coil_offset"])
            coupling = reduce_to_coupling(coil, self.geometry)
        if "C" in params:
            coupling = CouplingConstant(params["C"])
        f = params.get("f", self.contamination)
        components = [(self.main[0], self.main[1], 1.0 - f)]
        if f != 0.0:
            if self.contaminant is None:
                raise FitError("contamination requested but no contaminant configured")
            components.append((self.contaminant[0], self.contaminant[1], f))
        kwargs = dict(
            order=self.order,
            mode=self.mode,
            coupling=coupling,
            coil=coil,
            geometry=self.geometry,
            constants=CODATA,
            rtol=self.rtol,
        )
        return components, beam, kwargs

    def evaluate(self, currents, params, level=None):
        """V_r at the given currents for a {name: value} parameter set."""
        components, beam, kwargs = self._assemble(params)
        pts = visibility_curve(components, beam, currents, level=level, **kwargs)
        return np.array([p.V_r for p in pts])

    def quadrature_level(self, currents, params, max_level=None, strict=True):
        """Node-doubling level the adaptive engine picks for these parameters."""
        components, beam, kwargs = self._assemble(params)
        if max_level is not None:
            kwargs.update(max_level=max_level, strict=strict)
        return adaptive_level(components, beam, currents, **kwargs)


@dataclass(frozen=True)
class FitProblem:
    """Data plus model plus free-parameter layout."""

    currents: np.ndarray
    values: np.ndarray
    model: VisibilityModel
    parameters: tuple
    sigmas: np.ndarray | None = None

    def __post_init__(self):
        currents = np.asarray(self.currents, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if currents.shape != values.shape or currents.ndim != 1:
            raise ValueError("currents and values must be 1-d arrays of equal length")
        if len(self.parameters) == 0:
            raise ValueError("at least one free parameter is required")
        if currents.size < len(self.parameters) + 2:
            raise ValueError(
                f"need at least {len(self.parameters) + 2} data points for "
                f"{len(self.parameters)} free parameters, got {currents.size}"
            )
        names = [p.name for p in self.parameters]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        sig = self.sigmas
        if sig is not None:
            sig = np.asarray(sig, dtype=float)
            if sig.shape != values.shape or np.any(sig <= 0):
                raise ValueError("sigmas must be positive and match the data shape")
        object.__setattr__(self, "currents", currents)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "sigmas", sig)
        object.__setattr__(self, "parameters", tuple(self.parameters))

    @classmethod
    def from_points(cls, points, model, parameters):
        currents = np.array([p.current for p in points])
        values = np.array([p.V_r for p in points])
        sigmas = None
        if all(p.sigma is not None for p in points):
            sigmas = np.array([p.sigma for p in points])
        return cls(currents, values, model, tuple(parameters), sigmas)

    def _params(self, theta):
        return {p.name: float(t) for p, t in zip(self.parameters, theta)}

    def residuals(self, theta, level=None):
        model = self.model.evaluate(self.currents, self._params(theta), level=level)
        resid = model - self.values
        if self.sigmas is not None:
            resid = resid / self.sigmas
        return resid


@dataclass(frozen=True)
class StartDiagnostics:
    start_index: int
    x0: tuple
    converged: bool
    iterations: int
    chi2: float
    step_norm: float
    message: str


@dataclass(frozen=True)
class FitResult:
    """Converged estimate with uncertainties and diagnostics."""

    names: tuple
    estimates: np.ndarray
    errors: np.ndarray
    chi2: float
    chi2_reduced: float
    residuals: np.ndarray
    iterations: int
    step_norm: float
    pinned: tuple = ()
    start_index: int = 0
    starts: tuple = field(default=(), repr=False)

    def __getitem__(self, name):
        return float(self.estimates[self.names.index(name)])

    def error(self, name):
        return float(self.errors[self.names.index(name)])


@dataclass(frozen=True)
class ProfilePoint:
    value: float
    chi2: float
    ok: bool


def _scales(parameters):
    """Per-parameter magnitudes that bring the optimizer to O(1) variables.

    The forward-difference step 1e-6 * (1 + |theta|) and the convergence
    thresholds are meaningful only for O(1) parameters; C is ~1e-19 in SI
    units, so all internal linear algebra runs on x / scale.
    """
    return np.array([max(abs(p.init), 1e-3 * (p.upper - p.lower)) for p in parameters])


def _jacobian(resid_fn, x, r0, lower, upper):
    J = np.empty((r0.size, x.size))
    for j in range(x.size):
        h = _FD_STEP * (1.0 + abs(x[j]))
        xj = x.copy()
        if x[j] + h > upper[j]:  # step backwards at the upper bound
            h = -h
        xj[j] = min(max(x[j] + h, lower[j]), upper[j])
        if xj[j] == x[j]:
            J[:, j] = 0.0
            continue
        J[:, j] = (resid_fn(xj) - r0) / (xj[j] - x[j])
    return J


def _lm_minimize(resid_fn, x0, lower, upper, max_iter=_MAX_ITER):
    """Damped Gauss-Newton inside a box; returns (x, diag dict)."""
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    r = resid_fn(x)
    chi2 = float(r @ r)
    lam = 1e-3
    step_norm = math.inf
    converged = False
    message = "iteration limit reached"
    iterations = 0
    for iterations in range(1, max_iter + 1):
        J = _jacobian(resid_fn, x, r, lower, upper)
        grad = 2.0 * (J.T @ r)
        if float(np.max(np.abs(grad))) < _GTOL:
            converged = True
            message = "gradient norm below tolerance"
            break
        JtJ = J.T @ J
        diag = np.diag(JtJ).copy()
        diag[diag <= 0] = 1.0
        accepted = False
        for _ in range(40):
            try:
                step = np.linalg.solve(JtJ + lam * np.diag(diag), -(J.T @ r))
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            x_new = np.clip(x + step, lower, upper)
            r_new = resid_fn(x_new)
            chi2_new = float(r_new @ r_new)
            if chi2_new <= chi2:
                accepted = True
                break
            lam *= 10
        if not accepted:
            converged = True  # cannot improve: at a minimum to working precision
            message = "no downhill step found"
            step_norm = 0.0
            break
        step_norm = float(np.max(np.abs(x_new - x) / (1.0 + np.abs(x))))
        x, r, chi2 = x_new, r_new, chi2_new
        lam = max(lam / 3.0, 1e-12)
        if step_norm < _XTOL:
            converged = True
            message = "relative step below tolerance"
            break
    return x, {
        "converged": converged,
        "iterations": iterations,
        "chi2": chi2,
        "residuals": r,
        "step_norm": step_norm,
        "message": message,
    }


_FIT_LEVEL_CAP = 9  # 16384 nodes; plenty for any physical parameter region


def _discover_level(problem, x):
    """Adaptive node-count discovery, tolerant of pathological corners.

    Trial points near the parameter bounds (very small speed ratios with
    strong currents) can exceed any quadrature budget; inside a fit those
    evaluations are simply run at the capped level instead of aborting.
    """
    return problem.model.quadrature_level(
        problem.currents, problem._params(x), max_level=_FIT_LEVEL_CAP, strict=False
    )


def _run_start(problem, x0, lower, upper):
    """One optimizer start with frozen quadrature, re-polished if needed."""
    scale = _scales(problem.parameters)
    level = _discover_level(problem, x0)

    def scaled_resid(t, lvl):
        return problem.residuals(t * scale, level=lvl)

    t, info = _lm_minimize(
        lambda t_: scaled_resid(t_, level), x0 / scale, lower / scale, upper / scale
    )
    total_iterations = info["iterations"]
    for _ in range(2):
        level_at_solution = _discover_level(problem, t * scale)
        if level_at_solution <= level:
            break
        level = level_at_solution
        t, info = _lm_minimize(
            lambda t_: scaled_resid(t_, level), t, lower / scale, upper / scale
        )
        total_iterations += info["iterations"]
    info["iterations"] = total_iterations
    return t * scale, info, level


def _covariance(problem, x, lower, upper, level):
    scale = _scales(problem.parameters)

    def resid(t):
        return problem.residuals(t * scale, level=level)

    t = x / scale
    r = resid(t)
    J = _jacobian(resid, t, r, lower / scale, upper / scale)
    ndof = max(r.size - x.size, 1)
    chi2 = float(r @ r)
    try:
        cov_t = np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError:
        cov_t = np.full((x.size, x.size), np.nan)
    if problem.sigmas is None:
        cov_t = cov_t * (chi2 / ndof)  # unit-weight fits: scale by reduced chi2
    cov = cov_t * np.outer(scale, scale)
    return cov, chi2, ndof


def _starts_for(problem):
    """Deterministic multi-start list: vary S_par, keep other inits."""
    base = np.array([p.init for p in problem.parameters])
    names = [p.name for p in problem.parameters]
    if "S_par" not in names:
        return [base]
    idx = names.index("S_par")
    par = problem.parameters[idx]
    starts = []
    for s in SPEED_RATIO_STARTS:
        x = base.copy()
        x[idx] = min(max(s, par.lower), par.upper)
        starts.append(x)
    return starts


def fit_visibility(problem):
    """Multi-start bounded Levenberg-Marquardt fit of a visibility curve.

    Runs every deterministic start to convergence (relative step < 1e-8 or
    gradient norm < 1e-10) and returns the lowest-chi2 converged start,
    ties broken by start index.  Raises FitNonConvergenceError with
    per-start diagnostics when no start converges.  Parameters resting on
    a bound are reported in `pinned`.
    """
    lower = np.array([p.lower for p in problem.parameters])
    upper = np.array([p.upper for p in problem.parameters])
    names = tuple(p.name for p in problem.parameters)
    diags = []
    best = None
    for k, x0 in enumerate(_starts_for(problem)):
        x, info, level = _run_start(problem, x0, lower, upper)
        diags.append(
            StartDiagnostics(
                start_index=k,
                x0=tuple(float(v) for v in x0),
                converged=info["converged"],
                iterations=info["iterations"],
                chi2=info["chi2"],
                step_norm=info["step_norm"],
                message=info["message"],
            )
        )
        if info["converged"] and (best is None or info["chi2"] < best[1]["chi2"]):
            best = (x, info, k, level)
    if best is None:
        raise FitNonConvergenceError(
            "no optimizer start converged; see diagnostics", diagnostics=diags
        )
    x, info, start_index, level = best
    cov, chi2, ndof = _covariance(problem, x, lower, upper, level)
    errors = np.sqrt(np.maximum(np.diag(cov), 0.0))
    span = upper - lower
    pinned = tuple(
        names[i]
        for i in range(x.size)
        if x[i] <= lower[i] + 1e-12 * span[i] or x[i] >= upper[i] - 1e-12 * span[i]
    )
    return FitResult(
        names=names,
        estimates=x,
        errors=errors,
        chi2=chi2,
        chi2_reduced=chi2 / ndof,
        residuals=info["residuals"],
        iterations=info["iterations"],
        step_norm=info["step_norm"],
        pinned=pinned,
        start_index=start_index,
        starts=tuple(diags),
    )


def profile_uncertainty(problem, result, name, grid):
    """chi2 profile of one parameter, re-optimizing the others.

    Returns a ProfilePoint per grid value; points where the conditional
    re-optimization fails are marked ok=False instead of aborting.
    """
    if name not in result.names:
        raise ValueError(f"unknown parameter {name!r}")
    others = [p for p in problem.parameters if p.name != name]
    out = []
    for value in grid:
        try:
            if not others:
                fixed = {name: float(value)}
                resid = problem.model.evaluate(problem.currents, fixed) - problem.values
                if problem.sigmas is not None:
                    resid = resid / problem.sigmas
                out.append(ProfilePoint(float(value), float(resid @ resid), True))
                continue
            conditioned = FitProblem(
                problem.currents,
                problem.values,
                _fix_parameter(problem.model, name, float(value)),
                tuple(
                    replace(p, init=float(np.clip(result[p.name], p.lower, p.upper)))
                    for p in others
                ),
                problem.sigmas,
            )
            x, info, _ = _run_start(
                conditioned,
                np.array([p.init for p in conditioned.parameters]),
                np.array([p.lower for p in conditioned.parameters]),
                np.array([p.upper for p in conditioned.parameters]),
            )
            if not info["converged"]:
                out.append(ProfilePoint(float(value), math.nan, False))
            else:
                out.append(ProfilePoint(float(value), info["chi2"], True))
        except FitError:
            out.append(ProfilePoint(float(value), math.nan, False))
    return out


def _fix_parameter(model, name, value):
    """Bake a fixed parameter value into the model configuration."""
    if name == "S_par":
        return replace(model, beam=replace(model.beam, speed_ratio=value))
    if name == "C":
        return replace(model, coupling=CouplingConstant(value))
    if name == "f":
        return replace(model, contamination=value)
    if name == "coil_offset":
        coil = replace(model.coil, center_offset=value)
        return replace(model, coil=coil, coupling=reduce_to_coupling(coil, model.geometry))
    raise FitError(f"cannot fix unknown parameter {name!r}")
