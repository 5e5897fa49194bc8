"""Relative visibility versus coil current for the four headline cases.

Unpumped beams show the characteristic decay-and-revival pattern set by
the populated g_F M_F ladder: 7Li (eight sublevels, g_F M_F in
{0, +-1/2, +-1}) against 6Li (six sublevels, g_F M_F in {+-1/3, +-1}),
which revives three times more slowly because of its fermionic
half-integer projections.  Optically pumping 7Li into F = 1 leaves only
{0, +-1/2}: at first order the revivals wash out quickly toward the 1/3
floor contributed by the surviving M_F = 0 atoms, while second-order
diffraction doubles every phase and (being more velocity selective in the
real machine) keeps revivals visible longer.
"""

import os

import numpy as np

from lidephase import (
    LI6,
    LI7,
    BeamSpec,
    default_coil,
    default_geometry,
    pumped_population,
    reduce_to_coupling,
    uniform_population,
    visibility_curve,
)
from lidephase.io import write_csv

OUT = os.path.join(os.path.dirname(__file__), "output")


def main():
    geom = default_geometry()
    coupling = reduce_to_coupling(default_coil(geom), geom)
    currents = np.linspace(0.0, 9.0, 361)
    beam = BeamSpec(1065.0, 9.0)

    cases = {
        "li7_unpumped_p1": ([(LI7, uniform_population(LI7), 1.0)], 1),
        "li6_unpumped_p1": ([(LI6, uniform_population(LI6), 1.0)], 1),
        "li7_pumped_F1_p1": ([(LI7, pumped_population(LI7, 1), 1.0)], 1),
        "li7_pumped_F1_p2": ([(LI7, pumped_population(LI7, 1), 1.0)], 2),
    }
    curves = {}
    for name, (components, order) in cases.items():
        pts = visibility_curve(components, beam, currents, order=order, coupling=coupling)
        curves[name] = np.array([p.V_r for p in pts])
        path = os.path.join(OUT, f"visibility_{name}.csv")
        write_csv(path, ["current_A", "V_r", "phase_rad"],
                  [(p.current, p.V_r, p.phase) for p in pts])
        print(f"{name}: first minimum near "
              f"{currents[np.argmin(curves[name][:200])]:.2f} A -> {path}")

    tail = curves["li7_pumped_F1_p1"][-40:]
    print(f"pumped p=1 tail: V_r = {tail.mean():.3f} (the M_F = 0 third survives)")

    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib not available; skipping plot")
        return
    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True, sharey=True)
    for ax, (name, vr) in zip(axes.ravel(), curves.items()):
        ax.plot(currents, vr, lw=1.0)
        ax.set_title(name.replace("_", " "), fontsize=9)
        ax.set_ylim(0, 1.02)
        if name == "li7_pumped_F1_p1" or name == "li7_pumped_F1_p2":
            ax.axhline(1 / 3, color="gray", ls="--", lw=0.8)
    for ax in axes[1]:
        ax.set_xlabel("coil current (A)")
    for ax in axes[:, 0]:
        ax.set_ylabel("relative visibility")
    fig.tight_layout()
    png = os.path.join(OUT, "revival_curves.png")
    fig.savefig(png, dpi=150)
    print(f"plot -> {png}")


if __name__ == "__main__":
    main()
