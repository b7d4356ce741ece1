import json
import math

import numpy as np
import pytest

from chipspec.cli import main
from chipspec.config import (ConfigError, config_digest, override_config,
                             parse_config, serialize_config)
from chipspec.experiment import (DecayProtocol, MicrowaveScanProtocol,
                                 OpticalScanProtocol)
from chipspec.physics import TWO_PI
from chipspec.presets import PRESETS, preset_names, preset_text
from chipspec.series import read_series_csv

MINIMAL_SCAN = """
protocol.type = optical-scan
run.seed = 7
"""


class TestParsing:
    def test_angular_frequency_conversion(self):
        cfg = parse_config("trap.omega_x = 17 Hz\nprotocol.type = decay\n")
        assert cfg.trap.omega_x == pytest.approx(TWO_PI * 17.0, rel=1e-12)

    def test_rad_per_s_passthrough(self):
        cfg = parse_config("trap.omega_x = 106.0 rad/s\nprotocol.type = decay\n")
        assert cfg.trap.omega_x == 106.0

    def test_temperature_suffix(self):
        cfg = parse_config("cloud.T = 18 uK\nprotocol.type = decay\n")
        assert cfg.cloud.temperature == pytest.approx(1.8e-5, rel=1e-12)

    def test_power_and_length_suffixes(self):
        text = ("beams.diode.power = 440 uW\nbeams.fiber.waist = 26 um\n"
                "protocol.type = decay\n")
        cfg = parse_config(text)
        assert cfg.diode.power == pytest.approx(440e-6)
        assert cfg.fiber.waist == pytest.approx(26e-6)

    def test_scan_rate_compound_unit(self):
        cfg = parse_config("protocol.type = optical-scan\n"
                           "protocol.scan_rate = -45 MHz/s\n")
        assert cfg.protocol.scan_rate == pytest.approx(-45e6)

    def test_missing_protocol_rejected(self):
        with pytest.raises(ConfigError, match="exactly one protocol"):
            parse_config("trap.omega_x = 17 Hz\n")

    def test_unknown_key_with_line_number(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config("protocol.type = decay\ntrap.omega_q = 17 Hz\n")

    def test_unknown_protocol_key(self):
        with pytest.raises(ConfigError, match="protocol.span"):
            parse_config("protocol.type = decay\nprotocol.span = 1 MHz\n")

    def test_range_violation_names_key_and_range(self):
        with pytest.raises(ConfigError, match=r"cloud.T.*range"):
            parse_config("protocol.type = decay\ncloud.T = 5 mK\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config("cloud.T = 1 uK\ncloud.T = 2 uK\nprotocol.type = decay\n")

    def test_malformed_line(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config("this is not a config\nprotocol.type = decay\n")

    def test_unknown_unit(self):
        with pytest.raises(ConfigError, match="unit"):
            parse_config("cloud.T = 18 degC\nprotocol.type = decay\n")

    def test_defaults_applied(self):
        cfg = parse_config(MINIMAL_SCAN)
        assert cfg.trap.omega_r == pytest.approx(TWO_PI * 240.0)
        assert cfg.spectrum.line_offsets == (0.0, 7.73e6, 18.59e6, 32.08e6)
        assert isinstance(cfg.protocol, OpticalScanProtocol)
        assert cfg.seed == 7

    def test_spectrum_list_with_unit(self):
        cfg = parse_config("spectrum.line_offsets = 0, 7.73, 18.59, 32.08 MHz\n"
                           "protocol.type = decay\n")
        assert cfg.spectrum.line_offsets == (0.0, 7.73e6, 18.59e6, 32.08e6)

    def test_protocol_enum_validation(self):
        with pytest.raises(ConfigError, match="fiber_ramp"):
            parse_config("protocol.type = decay\nprotocol.fiber_ramp = sideways\n")

    def test_dataclass_invariant_surfaces_as_config_error(self):
        with pytest.raises(ConfigError):
            parse_config("protocol.type = optical-scan\nprotocol.scan_rate = 0\n")


class TestRoundTrip:
    @pytest.mark.parametrize("name", preset_names())
    def test_presets_roundtrip_exactly(self, name):
        cfg = parse_config(preset_text(name))
        text = serialize_config(cfg)
        again = parse_config(text)
        assert again == cfg
        assert serialize_config(again) == text
        assert config_digest(again) == config_digest(cfg)

    def test_each_preset_has_expected_protocol(self):
        kinds = {"fig2-instant": DecayProtocol, "fig2-ramped": DecayProtocol,
                 "fig3-scan": OpticalScanProtocol,
                 "fig4-lowpower": MicrowaveScanProtocol,
                 "fig4-highpower": MicrowaveScanProtocol}
        for name, cls in kinds.items():
            cfg = parse_config(preset_text(name))
            assert isinstance(cfg.protocol, cls)

    def test_override_config(self):
        cfg = parse_config(preset_text("fig3-scan"))
        changed = override_config(cfg, "beams.fiber.power", "0.8 W")
        assert changed.fiber.power == pytest.approx(0.8)
        assert changed.trap == cfg.trap


class TestCliCommands:
    def _write(self, tmp_path, text, name="run.cfg"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    def test_presets_list_and_write(self, tmp_path, capsys):
        assert main(["presets", "list"]) == 0
        out = capsys.readouterr().out
        for name in PRESETS:
            assert name in out
        assert main(["--out-dir", str(tmp_path), "presets", "write", "fig3-scan"]) == 0
        assert (tmp_path / "fig3-scan.cfg").exists()

    def test_presets_unknown_name(self, tmp_path):
        assert main(["--out-dir", str(tmp_path), "presets", "write", "nope"]) == 2

    def test_run_writes_csv_with_provenance(self, tmp_path):
        text = preset_text("fig4-lowpower") + "cloud.n_sim = 2000\n"
        cfg_path = self._write(tmp_path, text)
        assert main(["--out-dir", str(tmp_path), "run", str(cfg_path)]) == 0
        csv_path = tmp_path / "fig4-lowpower.csv"
        assert csv_path.exists()
        head = csv_path.read_text().splitlines()[:12]
        assert any(line.startswith("# tool_version=") for line in head)
        assert any(line.startswith("# config_sha256=") for line in head)
        assert any(line.startswith("# seed=") for line in head)
        assert (tmp_path / "fig4-lowpower_fit.json").exists()
        report = json.loads((tmp_path / "fig4-lowpower_fit.json").read_text())
        assert report["converged"]

    def test_run_missing_config(self, tmp_path):
        status = main(["--out-dir", str(tmp_path), "run", str(tmp_path / "none.cfg")])
        assert status == 3

    def test_run_bad_config_exit_2(self, tmp_path):
        cfg_path = self._write(tmp_path, "cloud.T = 18 uK\n")
        assert main(["--out-dir", str(tmp_path), "run", str(cfg_path)]) == 2

    def test_optical_scan_axis_span(self, tmp_path):
        text = preset_text("fig3-scan").replace("cloud.n_sim = 20000",
                                                "cloud.n_sim = 300")
        text = text.replace("protocol.auto_fit = multi-gauss",
                            "protocol.auto_fit = none")
        cfg_path = self._write(tmp_path, text)
        assert main(["--out-dir", str(tmp_path), "run", str(cfg_path)]) == 0
        series = read_series_csv(tmp_path / "fig3-scan.csv")
        assert np.ptp(series.bin_centers) == pytest.approx(65e6, rel=0.02)
        assert series.metadata["unit"] == "Hz"

    def test_fit_command_on_synthetic_decay(self, tmp_path):
        rng = np.random.default_rng(1)
        t = np.arange(0, 3.0, 5e-3) + 2.5e-3
        counts = rng.poisson(1200.0 * np.exp(-t / 0.771) + 4.0)
        from chipspec.series import CountTimeSeries, write_series_csv
        series = CountTimeSeries(bin_centers=t, counts=counts, axis_kind="time")
        csv_path = tmp_path / "decay.csv"
        write_series_csv(series, csv_path)
        out_path = tmp_path / "decay_fit.json"
        assert main(["fit", str(csv_path), "exp", "--out", str(out_path)]) == 0
        report = json.loads(out_path.read_text())
        assert report["parameters"]["tau"]["value"] == pytest.approx(0.771, rel=0.05)

    def test_fit_command_missing_file(self, tmp_path):
        status = main(["fit", str(tmp_path / "ghost.csv"), "exp"])
        assert status == 3
        assert not (tmp_path / "ghost.fit.json").exists()

    def test_fit_multi_gauss_sorted_centers(self, tmp_path, rng):
        from chipspec.analysis import multi_gaussian_model
        from chipspec.series import CountTimeSeries, write_series_csv
        x = np.linspace(-5e6, 45e6, 300)
        params = np.array([4e6, 3e6, 400.0, 12e6, 3e6, 350.0,
                           22e6, 3e6, 300.0, 36e6, 3e6, 380.0, 2.0])
        counts = rng.poisson(multi_gaussian_model(4).predict(params, x))
        series = CountTimeSeries(bin_centers=x, counts=counts,
                                 axis_kind="diode_detuning")
        csv_path = tmp_path / "spec.csv"
        write_series_csv(series, csv_path)
        assert main(["fit", str(csv_path), "multi-gauss", "--peaks", "4"]) == 0
        report = json.loads((tmp_path / "spec.fit.json").read_text())
        centers = [report["parameters"][f"center_{i}"]["value"] for i in (1, 2, 3, 4)]
        assert centers == sorted(centers)

    def test_determinism_byte_identical(self, tmp_path):
        text = preset_text("fig4-lowpower") + "cloud.n_sim = 1500\n"
        cfg_path = self._write(tmp_path, text)
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert main(["--out-dir", str(out_a), "run", str(cfg_path)]) == 0
        assert main(["--out-dir", str(out_b), "run", str(cfg_path)]) == 0
        assert (out_a / "fig4-lowpower.csv").read_bytes() == \
            (out_b / "fig4-lowpower.csv").read_bytes()

    def test_seed_flag_changes_output(self, tmp_path):
        text = preset_text("fig4-lowpower") + "cloud.n_sim = 1500\n"
        cfg_path = self._write(tmp_path, text)
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert main(["--out-dir", str(out_a), "run", str(cfg_path)]) == 0
        assert main(["--out-dir", str(out_b), "--seed", "99", "run", str(cfg_path)]) == 0
        assert (out_a / "fig4-lowpower.csv").read_bytes() != \
            (out_b / "fig4-lowpower.csv").read_bytes()

    def test_sweep_writes_spectra_and_summary(self, tmp_path):
        text = preset_text("fig3-scan")
        text = text.replace("cloud.n_sim = 20000", "cloud.n_sim = 2500")
        text = text.replace("protocol.auto_fit = multi-gauss",
                            "protocol.auto_fit = none")
        cfg_path = self._write(tmp_path, text)
        status = main(["--out-dir", str(tmp_path), "sweep", str(cfg_path),
                       "--param", "beams.fiber.power", "--values", "0.4 W, 1.2 W"])
        assert status == 0
        assert (tmp_path / "fig3-scan_00.csv").exists()
        assert (tmp_path / "fig3-scan_01.csv").exists()
        summary = (tmp_path / "fig3-scan_summary.csv").read_text().splitlines()
        assert summary[0].startswith("value,center1_hz")
        assert len(summary) == 3
        values = [float(line.split(",")[0]) for line in summary[1:]]
        assert values == pytest.approx([0.4, 1.2])
