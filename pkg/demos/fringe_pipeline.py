"""From raw fringe scans to a drift-corrected visibility series.

Synthesizes a measurement session the way the instrument records one:
zero-current reference scans interleaved with gradient scans, slow phase
and visibility drifts, Poisson counting noise, one detector burst.  Then
runs the full pipeline: outlier rejection, sinusoid fits, and the
reference-interpolated relative series.
"""

import math
from dataclasses import replace

import numpy as np

from lidephase import fit_fringe, reject_outliers, relative_series, synthesize_scan

K_L = 2 * math.pi / 671e-9

# truth for the synthetic session: visibility decays with current while the
# apparatus drifts slowly in phase and contrast
SESSION = [
    # (current_A, timestamp_s, relative_visibility, dephasing_phase)
    (0.0, 0.0, 1.00, 0.00),
    (0.5, 60.0, 0.83, 0.55),
    (1.0, 120.0, 0.47, 1.30),
    (0.0, 180.0, 1.00, 0.00),
    (1.5, 240.0, 0.24, 2.40),
    (2.0, 300.0, 0.31, 3.30),
    (0.0, 360.0, 1.00, 0.00),
]

BASE_VISIBILITY = 0.75


def drift_phase(t):
    return 0.3 + 1.2e-3 * t  # slow mirror drift, rad


def drift_visibility(t):
    return BASE_VISIBILITY * (1.0 - 8e-5 * t)


def main():
    scans = []
    references = []
    for k, (current, t, v_rel, dphi) in enumerate(SESSION):
        scan = synthesize_scan(
            5000.0,
            min(drift_visibility(t) * v_rel, 1.0),
            drift_phase(t) + dphi,
            n_points=60,
            dwell=0.1,
            background=300.0,
            current=current,
            k_L=K_L,
            timestamp=t,
            seed=1000 + k,
        )
        if k == 2:  # one hot-wire burst in the middle of a scan
            counts = scan.counts.copy()
            counts[33] += 60 * math.sqrt(counts[33])
            scan = replace(scan, counts=counts)
        (references if current == 0.0 else scans).append(scan)

    print("scan fits (after outlier rejection):")
    cleaned_scans = []
    for scan in scans:
        cleaned, removed = reject_outliers(scan)
        fit = fit_fringe(cleaned)
        cleaned_scans.append(cleaned)
        note = f", {len(removed)} burst(s) at {removed}" if removed else ""
        print(f"  I = {scan.current:3.1f} A: V = {fit.visibility:.3f} "
              f"+- {fit.visibility_err:.3f}, phase = {fit.phase:+.3f} rad{note}")

    points = relative_series(cleaned_scans, references)
    print("\ndrift-corrected series (truth in parentheses):")
    for p, (current, _, v_rel, dphi) in zip(points, [s for s in SESSION if s[0] != 0.0]):
        print(f"  I = {p.current:3.1f} A: V_r = {p.V_r:.3f} +- {p.sigma:.3f} ({v_rel:.2f})"
              f"   dphi = {p.phase:+.3f} +- {p.phase_sigma:.3f} ({dphi:+.2f})")

    pulls = [
        (p.V_r - v_rel) / p.sigma
        for p, (_, _, v_rel, _) in zip(points, [s for s in SESSION if s[0] != 0.0])
    ]
    print(f"\nvisibility pulls: {np.round(pulls, 2)} (should scatter within ~+-3)")


if __name__ == "__main__":
    main()
