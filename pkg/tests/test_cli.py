import textwrap

import pytest
from click.testing import CliRunner

from omkalman.cli import main

import conftest


def write_config(path, *, power=conftest.POWER_DETUNED_WEAK_W, n_steps=50000,
                 seed=2026, extra=""):
    path.write_text(textwrap.dedent(f"""\
        [mechanics]
        omega_m_hz = {conftest.OMEGA_M_HZ}
        gamma_m_hz = {conftest.GAMMA_M_HZ}

        [cavity]
        kappa1_hz = {conftest.KAPPA1_HZ}
        kappa2_hz = {conftest.KAPPA2_HZ}
        g0_hz = {conftest.G0_HZ}

        [bath]
        temperature_k = {conftest.TEMPERATURE_K}

        [beams.detuned]
        power_w = {power}
        wavelength_m = {conftest.WAVELENGTH_M}
        detuning_hz = "omega_m"
        homodyne_phase_rad = 0.0

        [beams.resonant]
        power_w = {conftest.POWER_RESONANT_W}
        wavelength_m = {conftest.WAVELENGTH_M}
        detuning_hz = 0.0
        homodyne_phase_rad = 1.5707963267948966

        [run]
        dt_s = 2e-8
        n_steps = {n_steps}
        seed = {seed}
        """) + textwrap.dedent(extra))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Config plus a completed build/simulate/filter pipeline."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.toml"
    write_config(cfg)
    runner = CliRunner()
    for cmd in ("build", "simulate", "filter"):
        res = runner.invoke(main, ["--config", str(cfg), "--out", str(root),
                                   "--quiet", cmd])
        assert res.exit_code == 0, res.output
    return root, cfg, runner


class TestPipeline:
    def test_build_writes_model(self, workdir):
        root, cfg, runner = workdir
        assert (root / "model.json").exists()
        res = runner.invoke(main, ["--config", str(cfg), "--out", str(root),
                                   "build"])
        assert res.exit_code == 0
        assert "states" in res.output

    def test_simulate_reproducible(self, workdir, tmp_path):
        root, cfg, runner = workdir
        res = runner.invoke(main, ["--config", str(cfg), "--out",
                                   str(tmp_path), "--quiet", "simulate"])
        assert res.exit_code == 0, res.output
        a = (root / "trajectory.bin").read_bytes()
        b = (tmp_path / "trajectory.bin").read_bytes()
        assert a == b

    def test_seed_override_changes_data(self, workdir, tmp_path):
        root, cfg, runner = workdir
        res = runner.invoke(main, ["--config", str(cfg), "--out",
                                   str(tmp_path), "--quiet", "--seed", "999",
                                   "simulate"])
        assert res.exit_code == 0, res.output
        assert (tmp_path / "trajectory.bin").read_bytes() != \
            (root / "trajectory.bin").read_bytes()

    def test_filter_reports_steady_state(self, workdir):
        root, cfg, runner = workdir
        assert (root / "filter_run.bin").exists()
        res = runner.invoke(main, ["--config", str(cfg), "--out", str(root),
                                   "filter"])
        assert res.exit_code == 0, res.output
        assert "zpf" in res.output

    def test_check_passes_on_matched_run(self, workdir):
        root, cfg, runner = workdir
        res = runner.invoke(main, ["--config", str(cfg), "--out", str(root),
                                   "check"])
        assert res.exit_code == 0, res.output
        report = (root / "innovation_report.txt").read_text()
        assert "passed=True" in report
        assert "reference" in report
        assert (root / "innovation_spectrum.csv").exists()

    def test_check_fails_on_model_mismatch(self, workdir, tmp_path):
        root, _, runner = workdir
        # filter the same record with a model at 100x drive power
        wrong = tmp_path / "wrong.toml"
        write_config(wrong, power=100 * conftest.POWER_DETUNED_WEAK_W)
        res = runner.invoke(main, [
            "--config", str(wrong), "--out", str(tmp_path), "--quiet",
            "filter", "--trajectory", str(root / "trajectory.bin")])
        assert res.exit_code == 0, res.output
        res = runner.invoke(main, ["--config", str(wrong), "--out",
                                   str(tmp_path), "check"])
        assert res.exit_code == 1, res.output

    def test_spectrum_csv(self, workdir, tmp_path):
        _, cfg, runner = workdir
        res = runner.invoke(main, ["--config", str(cfg), "--out",
                                   str(tmp_path), "--quiet", "spectrum",
                                   "--points", "50"])
        assert res.exit_code == 0, res.output
        lines = (tmp_path / "spectrum.csv").read_text().splitlines()
        assert lines[0].startswith("freq_hz,")
        assert "s00" in lines[0]
        assert len(lines) == 51


class TestErrors:
    def test_missing_section_named(self, tmp_path):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("[cavity]\nkappa1_hz = 1.0\n")
        runner = CliRunner()
        res = runner.invoke(main, ["--config", str(cfg), "--out",
                                   str(tmp_path), "build"])
        assert res.exit_code == 2
        assert "mechanics" in res.output

    def test_nonexistent_config(self, tmp_path):
        runner = CliRunner()
        res = runner.invoke(main, ["--config", str(tmp_path / "nope.toml"),
                                   "build"])
        assert res.exit_code == 2

    def test_unknown_threshold_key(self, tmp_path):
        cfg = tmp_path / "thr.toml"
        write_config(cfg, extra="""
            [check]
            no_such_knob = 1.0
            """)
        runner = CliRunner()
        res = runner.invoke(main, ["--config", str(cfg), "--out",
                                   str(tmp_path), "build"])
        assert res.exit_code == 2
        assert "no_such_knob" in res.output

    def test_filter_rejects_foreign_dt(self, workdir, tmp_path):
        root, _, runner = workdir
        other = tmp_path / "other.toml"
        write_config(other, extra="")
        other.write_text(other.read_text().replace("dt_s = 2e-8",
                                                   "dt_s = 1e-8"))
        res = runner.invoke(main, [
            "--config", str(other), "--out", str(tmp_path), "filter",
            "--trajectory", str(root / "trajectory.bin")])
        assert res.exit_code == 2
        assert "dt" in res.output

    def test_check_without_filter_run(self, tmp_path):
        cfg = tmp_path / "run.toml"
        write_config(cfg)
        runner = CliRunner()
        res = runner.invoke(main, ["--config", str(cfg), "--out",
                                   str(tmp_path), "check"])
        assert res.exit_code == 2
