"""Command-line entry point: simulate | fit | fringes | export-field.

Every run reads one flat key=value config file, optionally overridden by a
few flags, resolves all defaults, and echoes the fully resolved settings
into a sidecar file (`run_meta.txt`) next to the outputs.  Re-running any
subcommand with the sidecar as its config reproduces the outputs byte for
byte.  Outputs are CSV files with explicit SI-unit headers, written
atomically.

Exit codes: 0 success, 2 input problems (missing files, bad config or data
rows), 3 fit non-convergence, 1 unexpected errors.
"""

import argparse
import math
import os
import sys

import numpy as np

from . import fringes as fringe_mod
from .atoms import Sublevel, isotope_preset
from .config import ConfigView, read_config, write_config
from .errors import (
    ConfigError,
    CsvFormatError,
    DataQualityError,
    FitError,
    FitNonConvergenceError,
)
from .fitting import FitParameter, FitProblem, VisibilityModel, fit_visibility
from .geometry import (
    CouplingConstant,
    coil_from_config,
    field_profile_table,
    geometry_from_config,
    reduce_to_coupling,
)
from .io import read_csv_table, write_csv, write_text_atomic
from .visibility import (
    BeamSpec,
    population_from_weights,
    pumped_population,
    uniform_population,
    visibility_curve,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NO_CONVERGENCE = 3

_NATURAL_LI7_FRACTION = 0.924 / (0.924 + 0.076)


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class RunContext:
    """Config view plus the resolved key=value record for the sidecar."""

    def __init__(self, mapping, source, out_dir, overrides):
        merged = dict(mapping)
        merged.update({k: _fmt(v) for k, v in overrides.items() if v is not None})
        self.view = ConfigView(merged, source=source)
        self.out_dir = out_dir
        self.resolved = {}

    def get(self, key, default, kind="str"):
        getter = {
            "str": self.view.get_str,
            "float": self.view.get_float,
            "int": self.view.get_int,
            "bool": self.view.get_bool,
            "floats": self.view.get_float_list,
        }[kind]
        value = getter(key, default) if default is not None else getter(key)
        self.record(key, value)
        return value

    def record(self, key, value):
        if isinstance(value, (list, tuple, np.ndarray)):
            self.resolved[key] = ",".join(_fmt(float(v)) for v in value)
        else:
            self.resolved[key] = _fmt(value)

    def out_path(self, name):
        return os.path.join(self.out_dir, name)

    def write_sidecar(self, subcommand):
        meta = {"run.subcommand": subcommand}
        meta.update({k: self.resolved[k] for k in sorted(self.resolved)})
        write_config(
            self.out_path("run_meta.txt"),
            meta,
            header="resolved run settings; pass this file back via --config to reproduce",
        )


def _resolve_population(ctx, iso, key="population"):
    name = ctx.get(key, "unpumped")
    low = name.strip().lower()
    if low == "unpumped":
        return uniform_population(iso)
    if low == "pumped_f1":
        if abs(iso.nuclear_spin - 1.5) > 1e-9:
            raise ConfigError(
                f"key {key!r}: pumped_F1 preset is defined for Li7 (I=3/2), not {iso.name}"
            )
        return pumped_population(iso, 1.0)
    if low.startswith("file:"):
        path = name[5:].strip()
        if not os.path.exists(path):
            raise FileNotFoundError(f"population file not found: {path}")
        view = ConfigView(read_config(path), source=path)
        pairs = []
        index = 1
        while f"sublevel.{index}" in view:
            f_val, m_val, weight = view.get_float_list(f"sublevel.{index}")
            pairs.append((Sublevel(f_val, m_val), weight))
            index += 1
        if not pairs:
            raise ConfigError(f"{path}: no 'sublevel.N = F, M_F, weight' entries found")
        return population_from_weights(pairs)
    raise ConfigError(f"key {key!r}: unknown population {name!r} "
                      "(expected unpumped | pumped_F1 | file:<path>)")


def _resolve_components(ctx):
    """(IsotopeSpec, population, weight) list from isotope/population keys."""
    choice = ctx.get("isotope", "li7").strip().lower()
    if choice not in ("li6", "li7", "mix"):
        raise ConfigError(f"key 'isotope': expected li6 | li7 | mix, got {choice!r}")
    if choice == "mix":
        li7 = isotope_preset("li7")
        li6 = isotope_preset("li6")
        frac = ctx.get("mix.li7_fraction", _NATURAL_LI7_FRACTION, kind="float")
        if not 0.0 <= frac <= 1.0:
            raise ConfigError(f"key 'mix.li7_fraction': {frac} outside [0, 1]")
        return [
            (li7, _resolve_population(ctx, li7, "population"), frac),
            (li6, _resolve_population(ctx, li6, "mix.li6_population"), 1.0 - frac),
        ]
    iso = isotope_preset(choice)
    return [(iso, _resolve_population(ctx, iso), 1.0)]


def _resolve_beam(ctx):
    u = ctx.get("beam.u_m_per_s", 1065.0, kind="float")
    s_par = ctx.get("beam.speed_ratio", 9.0, kind="float")
    v3 = ctx.get("beam.v3_prefactor", False, kind="bool")
    center = None
    ratio = None
    if "beam.transmission_center_m_per_s" in ctx.view:
        center = ctx.get("beam.transmission_center_m_per_s", None, kind="float")
        ratio = ctx.get("beam.transmission_speed_ratio", None, kind="float")
    try:
        return BeamSpec(u, s_par, v3_prefactor=v3,
                        transmission_center=center, transmission_ratio=ratio)
    except ValueError as exc:
        raise ConfigError(f"invalid beam configuration: {exc}") from exc


def _resolve_geometry(ctx, order):
    geom = geometry_from_config(ctx.view, diffraction_order=order)
    coil = coil_from_config(ctx.view, geom)
    ctx.record("laser.wavelength_m", 2 * math.pi / geom.laser_wavevector)
    ctx.record("grating.z1_m", geom.z1)
    ctx.record("grating.spacing_m", geom.z2 - geom.z1)
    ctx.record("coil.radius_m", coil.radius)
    ctx.record("coil.turns", coil.turns)
    ctx.record("coil.offset_m", coil.center_offset)
    ctx.record("coil.z_m", coil.z_position)
    return geom, coil


def _resolve_coupling(ctx, order):
    """Coupling constant plus the coil/geometry it came from (if any)."""
    geom, coil = _resolve_geometry(ctx, order)
    if "coupling_C_J_per_A" in ctx.view:
        c_val = ctx.get("coupling_C_J_per_A", None, kind="float")
        return CouplingConstant(c_val), coil, geom
    coupling = reduce_to_coupling(coil, geom)
    ctx.record("coupling_C_J_per_A", coupling.C)
    return coupling, coil, geom


def _resolve_currents(ctx):
    """Current grid, canonicalized to an explicit `currents_A` list."""
    if "currents_A" in ctx.view:
        currents = ctx.get("currents_A", None, kind="floats")
    else:
        start = ctx.view.get_float("currents.start_A", 0.0)
        stop = ctx.view.get_float("currents.stop_A", 9.0)
        count = ctx.view.get_int("currents.count", 46)
        if count < 1:
            raise ConfigError(f"key 'currents.count': must be >= 1, got {count}")
        currents = np.linspace(start, stop, count)
        ctx.record("currents_A", currents)
    currents = np.asarray(currents, dtype=float)
    if currents.size == 0:
        raise ConfigError("key 'currents_A': at least one current is required")
    if np.any(currents < 0):
        raise ConfigError("key 'currents_A': currents must be nonnegative")
    if np.any(np.diff(currents) < 0):
        raise ConfigError("key 'currents_A': currents must be ascending")
    return currents


def _mode_key(ctx):
    mode = ctx.get("mode", "linear").strip().lower().replace("-", "_")
    if mode not in ("linear", "breit_rabi"):
        raise ConfigError(f"key 'mode': expected linear | breit-rabi, got {mode!r}")
    return mode


def cmd_simulate(ctx):
    order = ctx.get("order", 1, kind="int")
    mode = _mode_key(ctx)
    ctx.get("seed", 42, kind="int")  # recorded for reproducibility of the run record
    components = _resolve_components(ctx)
    beam = _resolve_beam(ctx)
    coupling, coil, geom = _resolve_coupling(ctx, order)
    currents = _resolve_currents(ctx)
    points = visibility_curve(
        components, beam, currents, order=order, mode=mode,
        coupling=coupling, coil=coil, geometry=geom,
    )
    write_csv(
        ctx.out_path("visibility.csv"),
        ["current_A", "V_r", "phase_rad"],
        [(p.current, p.V_r, p.phase) for p in points],
    )
    if ctx.get("export_field", False, kind="bool"):
        iso = components[0][0]
        z, b, dbdx, dx = field_profile_table(
            coil.with_current(float(currents[-1])), geom, iso.mass, beam.u,
            n=ctx.get("profile.samples", 401, kind="int"),
        )
        write_csv(
            ctx.out_path("field_profile.csv"),
            ["z_m", "B_T", "dBdx_T_per_m", "dx_m"],
            zip(z, b, dbdx, dx),
        )
    ctx.write_sidecar("simulate")
    return EXIT_OK


def cmd_export_field(ctx):
    order = ctx.get("order", 1, kind="int")
    ctx.get("seed", 42, kind="int")
    geom, coil = _resolve_geometry(ctx, order)
    current = ctx.get("current_A", 9.0, kind="float")
    u = ctx.get("beam.u_m_per_s", 1065.0, kind="float")
    iso = isotope_preset(ctx.get("isotope", "li7"))
    samples = ctx.get("profile.samples", 401, kind="int")
    if samples < 2:
        raise ConfigError(f"key 'profile.samples': must be >= 2, got {samples}")
    z, b, dbdx, dx = field_profile_table(
        coil.with_current(current), geom, iso.mass, u, n=samples
    )
    write_csv(
        ctx.out_path("field_profile.csv"),
        ["z_m", "B_T", "dBdx_T_per_m", "dx_m"],
        zip(z, b, dbdx, dx),
    )
    ctx.write_sidecar("export-field")
    return EXIT_OK


def _load_visibility_data(path):
    table = read_csv_table(path, numeric=("current_A", "V_r"), optional_numeric=("V_r_err",))
    return table["current_A"], table["V_r"], table.get("V_r_err")


def cmd_fit(ctx):
    ctx.get("seed", 42, kind="int")
    data_path = ctx.get("data", None)
    currents, values, sigmas = _load_visibility_data(data_path)
    order = ctx.get("order", 1, kind="int")
    mode = _mode_key(ctx)
    components = _resolve_components(ctx)
    beam = _resolve_beam(ctx)
    coupling, coil, geom = _resolve_coupling(ctx, order)

    main = (components[0][0], components[0][1])
    contaminant = None
    if "contaminant" in ctx.view:
        c_iso = isotope_preset(ctx.get("contaminant", "li7"))
        contaminant = (c_iso, _resolve_population(ctx, c_iso, "contaminant.population"))
    model = VisibilityModel(
        main=main,
        beam=beam,
        coupling=coupling,
        contaminant=contaminant,
        order=order,
        mode=mode,
        coil=coil,
        geometry=geom,
    )

    free_names = [n.strip() for n in ctx.get("free", "C,S_par").split(",") if n.strip()]
    known = {"C", "S_par", "f", "coil_offset"}
    unknown = sorted(set(free_names) - known)
    if unknown:
        raise ConfigError(f"key 'free': unknown parameter(s) {unknown}; known: {sorted(known)}")
    if "f" in free_names and contaminant is None:
        raise ConfigError("key 'free': fitting f requires a 'contaminant' isotope key")

    defaults = {
        "C": (coupling.C, 0.1 * coupling.C, 10.0 * coupling.C),
        "S_par": (beam.speed_ratio, 2.0, 100.0),
        "f": (0.05, 0.0, 1.0),
        "coil_offset": (coil.center_offset, 0.2 * coil.center_offset, 5.0 * coil.center_offset),
    }
    parameters = []
    for name in free_names:
        init_default, lo_default, hi_default = defaults[name]
        init = ctx.get(f"init.{name}", init_default, kind="float")
        lo = ctx.get(f"bounds.{name}.lower", lo_default, kind="float")
        hi = ctx.get(f"bounds.{name}.upper", hi_default, kind="float")
        try:
            parameters.append(FitParameter(name, init, lo, hi))
        except ValueError as exc:
            raise ConfigError(f"key 'free' parameter {name!r}: {exc}") from exc

    problem = FitProblem(currents, values, model, tuple(parameters), sigmas)
    try:
        result = fit_visibility(problem)
    except FitNonConvergenceError as exc:
        lines = [f"fit failed to converge: {exc}"]
        for d in exc.diagnostics:
            lines.append(
                f"  start {d.start_index} from {d.x0}: {d.message} "
                f"(iterations {d.iterations}, chi2 {d.chi2:.6g})"
            )
        write_text_atomic(ctx.out_path("fit_report.txt"), "\n".join(lines) + "\n")
        print("\n".join(lines), file=sys.stderr)
        return EXIT_NO_CONVERGENCE

    model_curve = model.evaluate(currents, dict(zip(result.names, result.estimates)))
    resid_rows = []
    for i in range(currents.size):
        sigma = sigmas[i] if sigmas is not None else ""
        resid_rows.append((currents[i], values[i], model_curve[i],
                           model_curve[i] - values[i], sigma))
    write_csv(
        ctx.out_path("fit_residuals.csv"),
        ["current_A", "V_r_data", "V_r_model", "residual", "sigma"],
        resid_rows,
    )
    lines = ["fit converged"]
    for name in result.names:
        lines.append(f"{name} = {result[name]:.10g} +- {result.error(name):.4g}")
    lines.append(f"chi2 = {result.chi2:.10g}")
    lines.append(f"chi2_reduced = {result.chi2_reduced:.10g}")
    lines.append(f"n_data = {currents.size}")
    lines.append(f"selected_start = {result.start_index}")
    lines.append(f"iterations = {result.iterations}")
    lines.append(f"final_step_norm = {result.step_norm:.4g}")
    if result.pinned:
        lines.append(f"pinned_at_bound = {','.join(result.pinned)}")
    for d in result.starts:
        lines.append(
            f"start {d.start_index}: converged={d.converged} iterations={d.iterations} "
            f"chi2={d.chi2:.6g} ({d.message})"
        )
    write_text_atomic(ctx.out_path("fit_report.txt"), "\n".join(lines) + "\n")
    ctx.write_sidecar("fit")
    return EXIT_OK


def _load_scans(ctx, manifest_path, order, k_L):
    table = read_csv_table(
        manifest_path,
        numeric=("current_A", "timestamp_s", "dwell_s", "background_cps"),
        text=("file", "is_reference"),
    )
    base = os.path.dirname(os.path.abspath(manifest_path))
    missing = [f for f in table["file"] if not os.path.exists(os.path.join(base, f))]
    if missing:
        raise FileNotFoundError(
            f"{manifest_path}: scan file(s) not found: {', '.join(missing)}"
        )
    scans = []
    for i, fname in enumerate(table["file"]):
        path = os.path.join(base, fname)
        scan_table = read_csv_table(path, numeric=("x3_m", "counts"))
        flag_raw = table["is_reference"][i].strip().lower()
        if flag_raw not in ("true", "false", "1", "0", "yes", "no"):
            raise CsvFormatError(
                f"{manifest_path}: row {i + 2}: is_reference must be boolean, got {flag_raw!r}"
            )
        scan = fringe_mod.FringeScan(
            x3=scan_table["x3_m"],
            counts=scan_table["counts"],
            dwell=table["dwell_s"][i],
            background=table["background_cps"][i],
            current=table["current_A"][i],
            order=order,
            k_L=k_L,
            timestamp=table["timestamp_s"][i],
        )
        scans.append((fname, flag_raw in ("true", "1", "yes"), scan))
    return scans


def cmd_fringes(ctx):
    ctx.get("seed", 42, kind="int")
    manifest = ctx.get("manifest", None)
    order = ctx.get("order", 1, kind="int")
    wavelength = ctx.get("laser.wavelength_m", 671e-9, kind="float")
    k_L = 2 * math.pi / wavelength
    threshold = ctx.get("outlier.threshold_sigma", 5.0, kind="float")
    reject = ctx.get("outlier.enabled", True, kind="bool")
    allow_extrapolation = ctx.get("allow_extrapolation", False, kind="bool")

    entries = _load_scans(ctx, manifest, order, k_L)

    fit_rows = []
    outlier_rows = []
    cleaned = []
    for fname, is_ref, scan in entries:
        removed = []
        use = scan
        if reject and scan.x3.size >= 12:
            use, removed = fringe_mod.reject_outliers(use, threshold=threshold)
        for idx in removed:
            outlier_rows.append((fname, idx, scan.x3[idx], int(scan.counts[idx])))
        fit = fringe_mod.fit_fringe(use)
        fit_rows.append(
            (fname, scan.current, scan.timestamp, is_ref, fit.mean_level, fit.visibility,
             fit.phase, fit.mean_level_err, fit.visibility_err, fit.phase_err,
             fit.chi2_reduced, fit.n_points, len(removed), fit.degenerate)
        )
        cleaned.append((fname, is_ref, use))

    write_csv(
        ctx.out_path("fringe_fits.csv"),
        ["file", "current_A", "timestamp_s", "is_reference", "mean_cps", "visibility",
         "phase_rad", "mean_cps_err", "visibility_err", "phase_rad_err", "chi2_reduced",
         "n_points", "n_rejected", "degenerate"],
        fit_rows,
    )
    write_csv(
        ctx.out_path("outliers.csv"),
        ["file", "point_index", "x3_m", "counts"],
        outlier_rows,
    )

    references = [scan for _, is_ref, scan in cleaned if is_ref]
    series_scans = [scan for _, is_ref, scan in cleaned if not is_ref]
    if not references:
        raise DataQualityError(f"{manifest}: no reference (is_reference) scans present")
    if series_scans:
        points = fringe_mod.relative_series(
            series_scans, references, allow_extrapolation=allow_extrapolation
        )
        write_csv(
            ctx.out_path("relative.csv"),
            ["current_A", "V_r", "V_r_err", "dphi_rad", "dphi_rad_err"],
            [(p.current, p.V_r, p.sigma, p.phase, p.phase_sigma) for p in points],
        )
    ctx.write_sidecar("fringes")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lidephase",
        description="Magnetic-gradient dephasing in a lithium atom interferometer: "
                    "forward simulation, fringe analysis and parameter fits.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, help_text in (
        ("simulate", "compute a relative-visibility curve versus coil current"),
        ("fit", "fit model parameters to a measured visibility curve"),
        ("fringes", "fit raw fringe scans and build the drift-corrected series"),
        ("export-field", "dump B, d|B|/dx and the arm separation along the beam"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="key=value config file")
        p.add_argument("--out", default=".", help="output directory (default: .)")
        p.add_argument("--seed", type=int, default=None, help="random seed (default 42)")
        p.add_argument("--mode", choices=["linear", "breit-rabi"], default=None,
                       help="Zeeman energy model")
        p.add_argument("--order", type=int, default=None, help="diffraction order p")
        p.add_argument("--isotope", choices=["li6", "li7", "mix"], default=None)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        mapping = read_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        overrides = {
            "seed": args.seed,
            "mode": args.mode,
            "order": args.order,
            "isotope": args.isotope,
        }
        ctx = RunContext(mapping, args.config, args.out, overrides)
        handler = {
            "simulate": cmd_simulate,
            "fit": cmd_fit,
            "fringes": cmd_fringes,
            "export-field": cmd_export_field,
        }[args.subcommand]
        return handler(ctx)
    except (FileNotFoundError, ConfigError, CsvFormatError, DataQualityError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
