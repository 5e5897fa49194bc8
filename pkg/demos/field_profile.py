"""Field, transverse gradient and arm separation along the beam.

The gradient coil sits 4 cm before the middle grating, 0.7 cm off the
beam line; the two interferometer arms are ~90 um apart there.  The
dephasing integrand is the product of the three curves this script dumps:
d|B|/dx falls off like a dipole away from the coil plane while the arm
separation dx(z) is the long triangle spanning the full interferometer.
"""

import os

import numpy as np

from lidephase import LI7, default_coil, default_geometry, field_profile_table, reduce_to_coupling
from lidephase.io import write_csv

OUT = os.path.join(os.path.dirname(__file__), "output")


def main():
    geom = default_geometry()
    coil = default_coil(geom).with_current(9.0)
    z, b, dbdx, dx = field_profile_table(coil, geom, LI7.mass, 1065.0, n=601)
    path = os.path.join(OUT, "field_profile.csv")
    write_csv(path, ["z_m", "B_T", "dBdx_T_per_m", "dx_m"], zip(z, b, dbdx, dx))
    print(f"wrote {len(z)} samples -> {path}")
    print(f"peak |B| on the beam: {b.max() * 1e3:.3f} mT at z = {z[np.argmax(b)]:.3f} m")
    print(f"arm separation at the coil plane: {dx[np.argmin(np.abs(z - coil.z_position))] * 1e6:.1f} um")

    coupling = reduce_to_coupling(coil, geom)
    print(f"coupling constant C = {coupling.C:.4e} J/A")
    alpha_per_amp = coupling.C / (LI7.mass * 1065.0**2)
    print(f"-> dephasing per unit g_F M_F: {alpha_per_amp:.3f} rad/A for 7Li at 1065 m/s")

    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib not available; skipping plot")
        return
    fig, axes = plt.subplots(3, 1, sharex=True, figsize=(6, 7))
    axes[0].plot(z, b * 1e3)
    axes[0].set_ylabel("|B| (mT)")
    axes[1].plot(z, dbdx)
    axes[1].set_ylabel("d|B|/dx (T/m)")
    axes[2].plot(z, dx * 1e6)
    axes[2].set_ylabel("dx (um)")
    axes[2].set_xlabel("z (m)")
    for ax in axes:
        ax.axvline(coil.z_position, color="gray", lw=0.6, ls=":")
    fig.tight_layout()
    png = os.path.join(OUT, "field_profile.png")
    fig.savefig(png, dpi=150)
    print(f"plot -> {png}")


if __name__ == "__main__":
    main()
