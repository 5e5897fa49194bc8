import math

import numpy as np
import pytest

from lidephase.cli import main
from lidephase.fringes import synthesize_scan
from lidephase.io import read_csv_table, write_csv

K_L = 2 * math.pi / 671e-9


def write_cfg(path, text):
    path.write_text(text)
    return str(path)


SIM_CFG = """
isotope = li7
population = pumped_F1
order = 1
mode = linear
beam.u_m_per_s = 1065
beam.speed_ratio = 9.0
currents_A = 0, 0.5, 1, 1.5, 2, 3, 4.5, 6, 9
"""


class TestSimulate:
    def test_zero_current_row(self, tmp_path):
        cfg = write_cfg(tmp_path / "sim.cfg", SIM_CFG)
        out = tmp_path / "out"
        assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
        lines = (out / "visibility.csv").read_text().splitlines()
        assert lines[0] == "current_A,V_r,phase_rad"
        assert lines[1] == "0,1,0"

    def test_deterministic_outputs(self, tmp_path):
        cfg = write_cfg(tmp_path / "sim.cfg", SIM_CFG)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["simulate", "--config", cfg, "--out", str(out1)]) == 0
        assert main(["simulate", "--config", cfg, "--out", str(out2)]) == 0
        assert (out1 / "visibility.csv").read_bytes() == (out2 / "visibility.csv").read_bytes()

    def test_sidecar_reproduces_run(self, tmp_path):
        cfg = write_cfg(tmp_path / "sim.cfg", SIM_CFG)
        out1, out2, out3 = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        assert main(["simulate", "--config", cfg, "--out", str(out1)]) == 0
        meta = str(out1 / "run_meta.txt")
        assert main(["simulate", "--config", meta, "--out", str(out2)]) == 0
        assert (out1 / "visibility.csv").read_bytes() == (out2 / "visibility.csv").read_bytes()
        # the sidecar is a fixed point of resolution
        assert main(["simulate", "--config", str(out2 / "run_meta.txt"),
                     "--out", str(out3)]) == 0
        assert (out2 / "run_meta.txt").read_bytes() == (out3 / "run_meta.txt").read_bytes()

    def test_pumped_tail_approaches_one_third(self, tmp_path):
        cfg = write_cfg(
            tmp_path / "sim.cfg",
            SIM_CFG.replace("currents_A = 0, 0.5, 1, 1.5, 2, 3, 4.5, 6, 9",
                            "currents_A = 100, 120, 140"),
        )
        out = tmp_path / "out"
        assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
        table = read_csv_table(out / "visibility.csv", numeric=("current_A", "V_r"))
        assert np.all(np.abs(table["V_r"] - 1 / 3) <= 0.01)

    def test_flag_overrides_config(self, tmp_path):
        cfg = write_cfg(tmp_path / "sim.cfg", SIM_CFG.replace("pumped_F1", "unpumped"))
        out = tmp_path / "out"
        assert main(["simulate", "--config", cfg, "--out", str(out),
                     "--isotope", "li6", "--order", "2"]) == 0
        meta = (out / "run_meta.txt").read_text()
        assert "isotope = li6" in meta
        assert "order = 2" in meta

    def test_invalid_population_names_key(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "sim.cfg", SIM_CFG.replace("pumped_F1", "plasma"))
        code = main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")])
        assert code == 2
        assert "population" in capsys.readouterr().err

    def test_descending_currents_rejected(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "sim.cfg",
                        SIM_CFG.replace("currents_A = 0, 0.5, 1, 1.5, 2, 3, 4.5, 6, 9",
                                        "currents_A = 2, 1"))
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "currents_A" in capsys.readouterr().err

    def test_breit_rabi_mode(self, tmp_path):
        cfg = write_cfg(
            tmp_path / "sim.cfg",
            SIM_CFG.replace("mode = linear", "mode = breit-rabi")
                   .replace("currents_A = 0, 0.5, 1, 1.5, 2, 3, 4.5, 6, 9",
                            "currents_A = 0, 4.5, 9"),
        )
        out = tmp_path / "out"
        assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
        table = read_csv_table(out / "visibility.csv", numeric=("current_A", "V_r"))
        assert table["V_r"][0] == 1.0
        assert np.all((table["V_r"] >= 0) & (table["V_r"] <= 1))

    def test_simulate_with_field_export(self, tmp_path):
        cfg = write_cfg(tmp_path / "sim.cfg", SIM_CFG + "export_field = true\n")
        out = tmp_path / "out"
        assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
        table = read_csv_table(out / "field_profile.csv",
                               numeric=("z_m", "B_T", "dBdx_T_per_m", "dx_m"))
        assert table["z_m"].size == 401

    def test_custom_population_file(self, tmp_path):
        pop = tmp_path / "pop.cfg"
        pop.write_text("sublevel.1 = 1, 0, 0.5\nsublevel.2 = 2, 0, 0.5\n")
        cfg = write_cfg(tmp_path / "sim.cfg",
                        SIM_CFG.replace("pumped_F1", f"file:{pop}"))
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
        table = read_csv_table(tmp_path / "o" / "visibility.csv", numeric=("current_A", "V_r"))
        # both populated sublevels have M_F = 0: no dephasing at any current
        assert np.all(table["V_r"] == 1.0)


class TestFit:
    def test_self_generated_data_fits_exactly(self, tmp_path):
        sim_cfg = write_cfg(tmp_path / "sim.cfg", SIM_CFG + "currents.count = 12\n")
        out = tmp_path / "sim"
        assert main(["simulate", "--config", sim_cfg, "--out", str(out)]) == 0
        fit_cfg = write_cfg(
            tmp_path / "fit.cfg",
            f"""
data = {out / 'visibility.csv'}
isotope = li7
population = pumped_F1
beam.u_m_per_s = 1065
beam.speed_ratio = 8.0
free = C,S_par
""",
        )
        fit_out = tmp_path / "fit"
        assert main(["fit", "--config", fit_cfg, "--out", str(fit_out)]) == 0
        report = (fit_out / "fit_report.txt").read_text()
        assert "fit converged" in report
        chi2_red = float(next(l.split("=")[1] for l in report.splitlines()
                              if l.startswith("chi2_reduced")))
        assert chi2_red < 1e-6
        s_par = float(next(l.split("=")[1].split("+-")[0] for l in report.splitlines()
                           if l.startswith("S_par")))
        assert s_par == pytest.approx(9.0, rel=1e-5)
        resid = read_csv_table(fit_out / "fit_residuals.csv",
                               numeric=("current_A", "V_r_data", "V_r_model", "residual"))
        assert np.max(np.abs(resid["residual"])) < 1e-5

    def test_missing_data_file(self, tmp_path, capsys):
        fit_cfg = write_cfg(tmp_path / "fit.cfg", "data = /no/such/file.csv\nfree = S_par\n")
        assert main(["fit", "--config", fit_cfg, "--out", str(tmp_path / "o")]) == 2
        assert "/no/such/file.csv" in capsys.readouterr().err

    def test_malformed_row_names_line(self, tmp_path, capsys):
        data = tmp_path / "d.csv"
        data.write_text("current_A,V_r\n0,1\n1,broken\n")
        fit_cfg = write_cfg(tmp_path / "fit.cfg", f"data = {data}\nfree = S_par\n")
        assert main(["fit", "--config", fit_cfg, "--out", str(tmp_path / "o")]) == 2
        assert "d.csv:3" in capsys.readouterr().err

    def test_contamination_fraction_reported(self, tmp_path):
        # two-isotope synthetic curve, f free: report carries the estimate
        from lidephase.atoms import LI6, LI7
        from lidephase.fitting import VisibilityModel
        from lidephase.geometry import CouplingConstant
        from lidephase.visibility import BeamSpec, uniform_population

        c0 = 7.0e-20
        model = VisibilityModel(
            main=(LI6, uniform_population(LI6)),
            beam=BeamSpec(1065.0, 9.0),
            coupling=CouplingConstant(c0),
            contaminant=(LI7, uniform_population(LI7)),
        )
        m6u2 = LI6.mass * 1065.0**2
        currents = np.linspace(0.0, 5 * 2 * np.pi * m6u2 / c0, 18)
        values = model.evaluate(currents, {"C": c0, "S_par": 9.0, "f": 0.08})
        data = tmp_path / "vis.csv"
        write_csv(data, ["current_A", "V_r"], zip(currents, values))
        fit_cfg = write_cfg(
            tmp_path / "fit.cfg",
            f"""
data = {data}
isotope = li6
population = unpumped
contaminant = li7
contaminant.population = unpumped
beam.u_m_per_s = 1065
beam.speed_ratio = 8.0
coupling_C_J_per_A = {c0 * 1.15}
free = C,S_par,f
""",
        )
        fit_out = tmp_path / "fit"
        assert main(["fit", "--config", fit_cfg, "--out", str(fit_out)]) == 0
        report = (fit_out / "fit_report.txt").read_text()
        f_line = next(l for l in report.splitlines() if l.startswith("f ="))
        f_value = float(f_line.split("=")[1].split("+-")[0])
        assert f_value == pytest.approx(0.08, abs=0.02)


def build_manifest(tmp_path, entries):
    scan_dir = tmp_path / "scans"
    scan_dir.mkdir(exist_ok=True)
    rows = []
    for name, phase, vis, t, is_ref, current, seed, inject in entries:
        scan = synthesize_scan(5000.0, vis, phase, n_points=50, dwell=0.1,
                               background=300.0, current=current, order=1,
                               k_L=K_L, seed=seed)
        counts = scan.counts.copy()
        if inject is not None:
            counts[inject] += 50 * math.sqrt(counts[inject])
        write_csv(scan_dir / name, ["x3_m", "counts"],
                  zip(scan.x3, counts.astype(int)))
        rows.append((name, current, t, "true" if is_ref else "false", 0.1, 300.0))
    manifest = scan_dir / "manifest.csv"
    write_csv(manifest, ["file", "current_A", "timestamp_s", "is_reference",
                         "dwell_s", "background_cps"], rows)
    return manifest


FRINGES_CFG = """
manifest = {manifest}
order = 1
laser.wavelength_m = 671e-9
"""


class TestFringes:
    def test_identical_pair(self, tmp_path):
        manifest = build_manifest(tmp_path, [
            ("ref.csv", 0.5, 0.75, 0.0, True, 0.0, 7, None),
            ("scan.csv", 0.5, 0.75, 0.0, False, 1.0, 7, None),
        ])
        cfg = write_cfg(tmp_path / "fr.cfg", FRINGES_CFG.format(manifest=manifest))
        out = tmp_path / "out"
        assert main(["fringes", "--config", cfg, "--out", str(out)]) == 0
        rel = read_csv_table(out / "relative.csv", numeric=("current_A", "V_r", "dphi_rad"))
        assert rel["V_r"][0] == 1.0
        assert rel["dphi_rad"][0] == 0.0

    def test_pi_offset_pair(self, tmp_path):
        manifest = build_manifest(tmp_path, [
            ("ref.csv", 0.5, 0.75, 0.0, True, 0.0, 31, None),
            ("scan.csv", 0.5 + math.pi, 0.75, 5.0, False, 1.4, 32, None),
            ("ref2.csv", 0.5, 0.75, 10.0, True, 0.0, 33, None),
        ])
        cfg = write_cfg(tmp_path / "fr.cfg", FRINGES_CFG.format(manifest=manifest))
        out = tmp_path / "out"
        assert main(["fringes", "--config", cfg, "--out", str(out)]) == 0
        rel = read_csv_table(out / "relative.csv",
                             numeric=("current_A", "V_r", "dphi_rad", "dphi_rad_err"))
        assert abs(abs(rel["dphi_rad"][0]) - math.pi) <= 3 * rel["dphi_rad_err"][0]

    def test_burst_reported(self, tmp_path):
        manifest = build_manifest(tmp_path, [
            ("ref.csv", 0.5, 0.75, 0.0, True, 0.0, 41, None),
            ("scan.csv", 0.8, 0.7, 0.0, False, 1.0, 42, 13),
        ])
        cfg = write_cfg(tmp_path / "fr.cfg", FRINGES_CFG.format(manifest=manifest))
        out = tmp_path / "out"
        assert main(["fringes", "--config", cfg, "--out", str(out)]) == 0
        outliers = read_csv_table(out / "outliers.csv", numeric=("point_index",),
                                  text=("file",))
        assert list(outliers["file"]) == ["scan.csv"]
        assert outliers["point_index"][0] == 13

    def test_missing_scan_listed(self, tmp_path, capsys):
        manifest = build_manifest(tmp_path, [
            ("ref.csv", 0.5, 0.75, 0.0, True, 0.0, 51, None),
        ])
        # append a manifest row pointing nowhere
        with open(manifest, "a") as fh:
            fh.write("ghost.csv,1.0,5.0,false,0.1,300\n")
        cfg = write_cfg(tmp_path / "fr.cfg", FRINGES_CFG.format(manifest=manifest))
        assert main(["fringes", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "ghost.csv" in capsys.readouterr().err


class TestExportField:
    def test_profile_columns(self, tmp_path):
        cfg = write_cfg(tmp_path / "f.cfg", "current_A = 9\nprofile.samples = 51\n")
        out = tmp_path / "out"
        assert main(["export-field", "--config", cfg, "--out", str(out)]) == 0
        table = read_csv_table(out / "field_profile.csv",
                               numeric=("z_m", "B_T", "dBdx_T_per_m", "dx_m"))
        assert table["z_m"].size == 51
        assert table["dx_m"][0] == 0.0
        # peak field sits at the coil plane, 4 cm before the middle grating
        z_peak = table["z_m"][np.argmax(table["B_T"])]
        assert z_peak == pytest.approx(0.565, abs=0.01)

    def test_bad_samples_key(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "f.cfg", "profile.samples = 1\n")
        assert main(["export-field", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "profile.samples" in capsys.readouterr().err
