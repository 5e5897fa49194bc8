"""Extraction of visibility and phase from raw fringe scans.

A scan records detector counts versus the position x3 of the third-grating
mirror; the expected rate is

    rate(x3) = background + A * (1 + V cos(2 p k_L x3 + phi0)),

so the counts per point are dwell * rate with Poisson statistics.  The
model is linear in (A, A V cos phi0, -A V sin phi0), which makes the
weighted least-squares problem exactly solvable; parameter uncertainties
follow from the covariance of that linear problem and the delta method.
Drifts of the apparatus are divided out by interleaved zero-current
reference scans: each scan is normalized to the reference visibility and
phase linearly interpolated to its timestamp.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataQualityError, FitError
from .visibility import VisibilityPoint

__all__ = [
    "FringeScan",
    "FringeFit",
    "fit_fringe",
    "reject_outliers",
    "relative_series",
    "synthesize_scan",
]


@dataclass(frozen=True)
class FringeScan:
    """Raw fringe record: counts versus mirror position.

    x3          mirror positions, m
    counts      detected counts per point (nonnegative integers)
    dwell       counting time per point, s
    background  detector background rate, counts/s (measured separately)
    current     coil current during the scan, A
    order       diffraction order p
    k_L         laser wavevector, rad/m
    timestamp   acquisition time, s (needed for drift correction)
    """

    x3: np.ndarray
    counts: np.ndarray
    dwell: float
    background: float
    current: float = 0.0
    order: int = 1
    k_L: float = 2 * math.pi / 671e-9
    timestamp: float | None = None

    def __post_init__(self):
        x3 = np.asarray(self.x3, dtype=float)
        counts = np.asarray(self.counts)
        if counts.shape != x3.shape or x3.ndim != 1:
            raise ValueError("x3 and counts must be 1-d arrays of equal length")
        if x3.size < 8:
            raise ValueError(f"a scan needs at least 8 samples, got {x3.size}")
        # real data are integer counts; synthetic noiseless scans may carry
        # exact model values, so only nonnegativity is enforced
        if np.any(counts < 0) or not np.all(np.isfinite(counts.astype(float))):
            raise ValueError("counts must be nonnegative and finite")
        if self.dwell <= 0:
            raise ValueError("dwell time must be positive")
        if self.order < 1 or self.k_L <= 0:
            raise ValueError("order must be >= 1 and k_L positive")
        period = math.pi / (self.order * self.k_L)
        if np.ptp(x3) < period:
            raise ValueError(
                f"scan spans {np.ptp(x3):.3e} m, less than one fringe period {period:.3e} m"
            )
        object.__setattr__(self, "x3", x3)
        object.__setattr__(self, "counts", counts.astype(float))

    @property
    def fringe_period(self):
        return math.pi / (self.order * self.k_L)


@dataclass(frozen=True)
class FringeFit:
    """Sinusoid fit of one scan."""

    mean_level: float  # counts/s above background
    visibility: float
    phase: float  # rad, wrapped to (-pi, pi]
    mean_level_err: float
    visibility_err: float
    phase_err: float
    chi2_reduced: float
    n_points: int
    degenerate: bool = False

    def __post_init__(self):
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError("fitted visibility must lie in [0, 1]")
        for err in (self.mean_level_err, self.visibility_err, self.phase_err):
            if err < 0:
                raise ValueError("parameter errors must be nonnegative")


def _design(scan):
    theta = 2 * scan.order * scan.k_L * scan.x3
    return np.column_stack([np.ones_like(theta), np.cos(theta), np.sin(theta)]) * scan.dwell


def _wls(scan, mask=None):
    """Weighted linear solve; returns (params, covariance, chi2, ndof)."""
    X = _design(scan)
    y = scan.counts - scan.dwell * scan.background
    w = 1.0 / np.maximum(scan.counts, 1.0)
    if mask is not None:
        X, y, w = X[mask], y[mask], w[mask]
    if y.size < 4:
        raise FitError("too few points left for a 3-parameter fringe fit")
    A = (X * w[:, None]).T @ X
    b = (X * w[:, None]).T @ y
    try:
        cov = np.linalg.inv(A)
    except np.linalg.LinAlgError:
        raise FitError("degenerate fringe design matrix (scan too short or aliased)") from None
    params = cov @ b
    resid = X @ params - y
    chi2 = float(np.sum(w * resid**2))
    return params, cov, chi2, y.size - 3


def fit_fringe(scan, background="fixed"):
    """Fit mean level, visibility and phase of one scan.

    Weighted least squares with Poisson weights (variance = max(counts, 1))
    and the background fixed to its measured value.  Uncertainties come
    from the covariance of the linear problem propagated through the
    (V, phi) reparameterization.  A fit driven to the visibility bound is
    returned with the `degenerate` flag set.

    background="absorbed" folds the background into the fitted mean level
    instead of subtracting the measured value (the constant term and the
    signal level are not separable within a single scan); comparing the
    two modes probes the sensitivity of V to the background measurement.
    """
    if background not in ("fixed", "absorbed"):
        raise ValueError(f"background must be 'fixed' or 'absorbed', got {background!r}")
    if background == "absorbed":
        scan = replace(scan, background=0.0)
    params, cov, chi2, ndof = _wls(scan)
    a0, ac, as_ = params
    if a0 <= 0:
        raise FitError(f"fitted mean level {a0:.3e} is not positive; scan unusable")
    amp = math.hypot(ac, as_)
    vis = amp / a0
    phase = math.atan2(-as_, ac)
    degenerate = False
    if vis >= 1.0:
        vis = 1.0
        degenerate = True
    if amp == 0.0:
        degenerate = True
    # delta method: gradients of V and phi in (a0, ac, as)
    if amp > 0:
        gv = np.array([-amp / a0**2, ac / (amp * a0), as_ / (amp * a0)])
        gp = np.array([0.0, as_ / amp**2, -ac / amp**2])
        vis_err = math.sqrt(max(float(gv @ cov @ gv), 0.0))
        phase_err = math.sqrt(max(float(gp @ cov @ gp), 0.0))
    else:
        vis_err = math.sqrt(max(float(cov[1, 1] + cov[2, 2]), 0.0)) / a0
        phase_err = math.pi
    return FringeFit(
        mean_level=float(a0),
        visibility=float(vis),
        phase=float(phase),
        mean_level_err=math.sqrt(max(float(cov[0, 0]), 0.0)),
        visibility_err=float(vis_err),
        phase_err=float(phase_err),
        chi2_reduced=chi2 / ndof if ndof > 0 else math.inf,
        n_points=scan.x3.size,
        degenerate=degenerate,
    )


def reject_outliers(scan, threshold=5.0, max_fraction=0.10, max_rounds=5):
    """Drop detector bursts before fitting.

    Iteratively fits the remaining points and flags any whose residual
    exceeds `threshold` Poisson standard deviations, until no new point is
    flagged.  Returns (cleaned scan, sorted indices of removed points).
    Removing more than `max_fraction` of the scan raises DataQualityError.
    """
    n = scan.x3.size
    if n < 12:
        raise ValueError(f"outlier rejection needs at least 12 samples, got {n}")
    max_removed = int(max_fraction * n)
    keep = np.ones(n, dtype=bool)
    X = _design(scan)
    y = scan.counts - scan.dwell * scan.background
    sigma = np.sqrt(np.maximum(scan.counts, 1.0))
    for _ in range(max_rounds):
        params, _, _, _ = _wls(scan, mask=keep)
        resid = np.abs(X @ params - y) / sigma
        flag = (resid > threshold) & keep
        if int(np.sum(~keep) + np.sum(flag)) > max_removed:
            raise DataQualityError(
                f"outlier rejection would remove more than {max_fraction:.0%} of the scan "
                f"({int(np.sum(~keep) + np.sum(flag))}/{n} points); data unusable"
            )
        if not np.any(flag):
            break
        keep &= ~flag
    removed = sorted(int(i) for i in np.flatnonzero(~keep))
    if not removed:
        return scan, []
    cleaned = replace(scan, x3=scan.x3[keep], counts=scan.counts[keep])
    return cleaned, removed


def _wrap(phi):
    """Wrap to (-pi, pi]."""
    out = math.remainder(phi, 2 * math.pi)
    return out if out != -math.pi else math.pi


def _unwrap_sequence(phases):
    """Nearest-branch continuation from the previous point."""
    out = [phases[0]]
    for p in phases[1:]:
        k = round((out[-1] - p) / (2 * math.pi))
        out.append(p + 2 * math.pi * k)
    return out


def relative_series(scans, references, allow_extrapolation=False):
    """Drift-corrected relative visibility and phase for a series of scans.

    Every scan and reference must carry a timestamp; references are the
    interleaved zero-gradient recordings.  For each scan the reference
    visibility and phase are linearly interpolated in time between the
    bracketing references (exact-time matches are used directly), then

        V_r = V / V_ref,  dphi = phase - phase_ref,

    with uncertainties propagated in quadrature.  dphi is unwrapped by
    nearest-branch continuation along the input order of `scans`.  Scans
    outside the reference bracket raise DataQualityError unless
    `allow_extrapolation` is set (end references are then extended flat).
    """
    if not references:
        raise ValueError("at least one reference scan is required")
    for sc in list(scans) + list(references):
        if sc.timestamp is None:
            raise ValueError("all scans need timestamps for drift correction")
    refs = sorted(references, key=lambda sc: sc.timestamp)
    t_ref = [sc.timestamp for sc in refs]
    if any(t2 <= t1 for t1, t2 in zip(t_ref, t_ref[1:])):
        raise ValueError("reference timestamps must be strictly increasing")
    ref_fits = [fit_fringe(sc) for sc in refs]
    ref_phases = _unwrap_sequence([f.phase for f in ref_fits])

    out = []
    raw_dphi = []
    for sc in scans:
        fit = fit_fringe(sc)
        t = sc.timestamp
        exact = next((i for i, tr in enumerate(t_ref) if tr == t), None)
        if exact is not None:
            v_ref, v_ref_err = ref_fits[exact].visibility, ref_fits[exact].visibility_err
            p_ref, p_ref_err = ref_phases[exact], ref_fits[exact].phase_err
        else:
            if t < t_ref[0] or t > t_ref[-1]:
                if not allow_extrapolation:
                    raise DataQualityError(
                        f"scan at t = {t} lies outside the reference bracket "
                        f"[{t_ref[0]}, {t_ref[-1]}]"
                    )
                i = 0 if t < t_ref[0] else len(refs) - 1
                v_ref, v_ref_err = ref_fits[i].visibility, ref_fits[i].visibility_err
                p_ref, p_ref_err = ref_phases[i], ref_fits[i].phase_err
            else:
                hi = next(i for i, tr in enumerate(t_ref) if tr > t)
                lo = hi - 1
                wgt = (t - t_ref[lo]) / (t_ref[hi] - t_ref[lo])
                v_ref = (1 - wgt) * ref_fits[lo].visibility + wgt * ref_fits[hi].visibility
                p_ref = (1 - wgt) * ref_phases[lo] + wgt * ref_phases[hi]
                v_ref_err = math.hypot(
                    (1 - wgt) * ref_fits[lo].visibility_err, wgt * ref_fits[hi].visibility_err
                )
                p_ref_err = math.hypot(
                    (1 - wgt) * ref_fits[lo].phase_err, wgt * ref_fits[hi].phase_err
                )
        if v_ref <= 0:
            raise DataQualityError(f"reference visibility {v_ref} at t = {t} is not positive")
        v_r = fit.visibility / v_ref
        v_r_err = math.hypot(fit.visibility_err / v_ref, fit.visibility * v_ref_err / v_ref**2)
        raw_dphi.append((_wrap(fit.phase - p_ref), math.hypot(fit.phase_err, p_ref_err)))
        out.append((sc.current, v_r, v_r_err))

    dphi = _unwrap_sequence([d for d, _ in raw_dphi])
    return [
        VisibilityPoint(cur, v_r, phase, sigma=v_err, phase_sigma=raw_dphi[i][1])
        for i, ((cur, v_r, v_err), phase) in enumerate(zip(out, dphi))
    ]


def synthesize_scan(mean_level, visibility, phase, *, n_points=50, span=None,
                    dwell=0.1, background=0.0, current=0.0, order=1,
                    k_L=2 * math.pi / 671e-9, timestamp=None, seed=0, poisson=True):
    """Generate a synthetic scan from the fringe model.

    mean_level is the signal rate A in counts/s; `span` defaults to two
    fringe periods.  With `poisson` the counts are Poisson-distributed
    using a deterministic seeded generator, otherwise the expected counts
    are rounded (near-noiseless scans for exactness tests).
    """
    if not 0.0 <= visibility <= 1.0:
        raise ValueError("visibility must lie in [0, 1]")
    if mean_level < 0 or background < 0:
        raise ValueError("rates must be nonnegative")
    period = math.pi / (order * k_L)
    if span is None:
        span = 2 * period
    x3 = np.linspace(0.0, span, n_points)
    rate = background + mean_level * (1 + visibility * np.cos(2 * order * k_L * x3 + phase))
    expected = dwell * rate
    if poisson:
        rng = np.random.default_rng(seed)
        counts = rng.poisson(expected)
    else:
        counts = expected  # exact model values, for inversion tests
    return FringeScan(
        x3=x3,
        counts=counts,
        dwell=dwell,
        background=background,
        current=current,
        order=order,
        k_L=k_L,
        timestamp=timestamp,
    )
