"""Zeeman maps of the lithium ground states: linear law vs Breit-Rabi.

Sweeps the field from zero to well past the experiment's ~1.3 mT working
point and tabulates every (F, M_F) energy in both models.  The bend of the
non-stretched levels away from the straight lines is the hyperfine
uncoupling that matters most for 6Li.  Writes one CSV per isotope into
demos/output/ and, when matplotlib is importable, a diagram per isotope.
"""

import os

import numpy as np

from lidephase import CODATA, LI6, LI7
from lidephase.atoms import (
    hyperfine_offset,
    sublevels,
    zeeman_energy_breit_rabi,
    zeeman_energy_linear,
)
from lidephase.io import write_csv

OUT = os.path.join(os.path.dirname(__file__), "output")


def main():
    fields = np.linspace(0.0, 4e-3, 161)
    for iso in (LI7, LI6):
        header = ["B_T"]
        columns = [fields]
        for s in sublevels(iso):
            tag = f"F{s.F:g}_M{s.M_F:+g}"
            linear = np.array(
                [hyperfine_offset(iso, s.F) + zeeman_energy_linear(iso, s, b) for b in fields]
            )
            exact = np.array([zeeman_energy_breit_rabi(iso, s, b) for b in fields])
            header += [f"E_linear_{tag}_J", f"E_breit_rabi_{tag}_J"]
            columns += [linear, exact]
        path = os.path.join(OUT, f"zeeman_{iso.name.lower()}.csv")
        write_csv(path, header, zip(*columns))
        print(f"{iso.name}: wrote {len(fields)} field points -> {path}")

        worst = 0.0
        for s in sublevels(iso):
            b = 1.3e-3
            lin = hyperfine_offset(iso, s.F) + zeeman_energy_linear(iso, s, b)
            full = zeeman_energy_breit_rabi(iso, s, b)
            worst = max(worst, abs(full - lin))
        print(f"  largest linear-model error at 1.3 mT: {worst / CODATA.h / 1e6:.3f} MHz x h")

    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib not available; skipping plots")
        return
    for iso in (LI7, LI6):
        fig, ax = plt.subplots(figsize=(6, 4.5))
        for s in sublevels(iso):
            exact = [zeeman_energy_breit_rabi(iso, s, b) / CODATA.h / 1e6 for b in fields]
            lin = [
                (hyperfine_offset(iso, s.F) + zeeman_energy_linear(iso, s, b)) / CODATA.h / 1e6
                for b in fields
            ]
            ax.plot(fields * 1e3, exact, lw=1.2)
            ax.plot(fields * 1e3, lin, lw=0.6, ls="--", color="gray")
        ax.set_xlabel("B (mT)")
        ax.set_ylabel("E / h (MHz)")
        ax.set_title(f"{iso.name} ground-state Zeeman map (dashed: linear)")
        fig.tight_layout()
        png = os.path.join(OUT, f"zeeman_{iso.name.lower()}.png")
        fig.savefig(png, dpi=150)
        plt.close(fig)
        print(f"  plot -> {png}")


if __name__ == "__main__":
    main()
