import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from chipspec import CODATA, diode_beam, fiber_beam
from chipspec.analysis import (fit_exponential, fit_multi_gaussian,
                               fit_temperature, linear_fit)
from chipspec.ensemble import CloudState, sample_harmonic_cloud, sample_thermal_cloud
from chipspec.experiment import (DecayProtocol, MicrowaveScanProtocol,
                                 OpticalScanProtocol, apply_chopping,
                                 chop_gate_fraction, detect,
                                 expected_microwave_spectrum,
                                 expected_optical_spectrum, run_decay,
                                 run_microwave_scan, run_optical_scan,
                                 zeeman_detuning, _HazardTerms, _run_hazard_sim)
from chipspec.physics import TWO_PI, magnetic_potential, resonance_shell
from chipspec.series import CountTimeSeries, read_series_csv, write_series_csv

M = CODATA.m_Rb87
KB = CODATA.k_B
HBAR = CODATA.hbar


def uniform_cloud(n, weight=1.0, temperature=1e-6):
    return CloudState(positions=np.zeros((n, 3)), velocities=np.zeros((n, 3)),
                      weights=np.full(n, weight), temperature_label=temperature)


class ConstHazardTerms:
    """Spatially uniform hazards for closed-form checks."""

    def __init__(self, apparatus, h_ion, h_loss=0.0, efficiency=1.0):
        self.diode = apparatus.diode
        self.fiber = apparatus.fiber
        self.efficiency = efficiency
        self._h_ion = h_ion
        self._h_loss = h_loss

    def gates(self, t, dt, period):
        return 1.0, 1.0

    def line(self, detuning):
        return 1.0

    def envelopes(self, rel):
        ones = np.ones(rel.shape[0])
        return ones, ones

    def hazards(self, env_d, env_f, line, gd, gf):
        return self._h_ion * gd * env_d, self._h_loss * gf * env_f


class TestDetect:
    def test_identity(self):
        times = np.linspace(0, 1, 100)
        kept = detect(times, 1.0, 3)
        assert np.array_equal(kept, times)

    def test_empty(self):
        assert detect(np.linspace(0, 1, 50), 0.0, 3).size == 0

    def test_binomial_statistics(self):
        times = np.linspace(0, 1, 100000)
        kept = detect(times, 0.5, 12345)
        sigma = math.sqrt(100000 * 0.25)
        assert abs(kept.size - 50000) < 5 * sigma
        assert np.all(np.diff(kept) > 0)  # order preserved

    def test_efficiency_range(self):
        with pytest.raises(ValueError):
            detect([0.1], 1.5, 0)


class TestChopping:
    def test_full_duty_unchanged(self):
        t = np.linspace(0, 0.01, 100)
        out = apply_chopping(5.0, t, 1.0, 1e-3)
        assert np.all(out == 5.0)

    def test_duty_gating(self):
        # within each 1 ms period the hazard lives in the first 100 us
        assert apply_chopping(7.0, 0.00005, 0.1, 1e-3) == 7.0
        assert apply_chopping(7.0, 0.00050, 0.1, 1e-3) == 0.0
        assert apply_chopping(7.0, 0.00105, 0.1, 1e-3) == 7.0

    def test_time_average_scaling(self):
        t = np.arange(0, 1.0, 1e-5)
        duty = 0.1
        out = apply_chopping(3.0, t, duty, 1e-3)
        assert out.mean() == pytest.approx(3.0 * duty, rel=1e-2)

    def test_gate_fraction_exact_average(self):
        # sub-step gate fractions average to the duty cycle for any dt
        for dt in (2.8e-5, 1.3e-4, 7.7e-4):
            ts = np.arange(0, 1.0, dt)
            fr = np.array([chop_gate_fraction(t, dt, 0.023, 1e-3) for t in ts])
            assert fr.mean() == pytest.approx(0.023, rel=2e-2)

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            apply_chopping(1.0, 0.0, 0.0, 1e-3)
        with pytest.raises(ValueError):
            apply_chopping(1.0, 0.0, 0.5, 0.0)

    def test_detected_rate_scales_with_duty(self, apparatus):
        # Monte-Carlo average over many chopping periods
        rng_totals = []
        for duty in (0.25, 0.5, 1.0):
            terms = ConstHazardTerms(apparatus, h_ion=2.0)
            terms.gates = lambda t, dt, period, d=duty: (
                chop_gate_fraction(t, dt, d, 1e-3), 1.0)
            cloud = uniform_cloud(40000)
            series = _run_hazard_sim(
                cloud, apparatus, terms, lambda t: 0.0, 0.2, 0.05,
                lambda t: t, "time", 5, move=False, dt=1e-4, counting="analog")
            rng_totals.append(series.metadata["ions_total"])
        expected = [1 - math.exp(-2.0 * 0.2 * d) for d in (0.25, 0.5, 1.0)]
        observed = [v / 40000 for v in rng_totals]
        for obs, exp in zip(observed, expected):
            assert obs == pytest.approx(exp, rel=0.05)


class TestZeemanDetuning:
    def test_center_is_zero(self, trap):
        assert zeeman_detuning(trap.center, trap) == 0.0

    def test_planar_sheet_value(self, trap):
        dw = TWO_PI * 1e6
        z = math.sqrt(4.0 * HBAR * dw / (3.0 * M * trap.omega_r ** 2))
        assert zeeman_detuning((0, 0, z), trap) == pytest.approx(dw, rel=1e-12)
        assert z == pytest.approx(51.9e-6, rel=1e-3)

    def test_roundtrip_with_shell(self, trap, rng):
        for dw in rng.uniform(1e3, 1e7, size=12):
            a = resonance_shell(dw, trap)
            for pos in ((a[0], 0, 0), (0, a[1], 0), (0, 0, a[2])):
                assert zeeman_detuning(pos, trap) == pytest.approx(dw, rel=1e-12)


class TestHazardKernel:
    def test_constant_hazard_exponential_oracle(self, apparatus):
        h = 5.0
        cloud = uniform_cloud(150000)
        series = _run_hazard_sim(
            cloud, apparatus, ConstHazardTerms(apparatus, h), lambda t: 0.0,
            1.0, 0.02, lambda t: t, "time", 12, move=False, dt=1e-3,
            counting="analog")
        report = fit_exponential(series)
        assert report.converged
        assert report["tau"] == pytest.approx(1.0 / h, rel=0.02)

    def test_bookkeeping_identity_exact(self, apparatus):
        n = 30000
        cloud = uniform_cloud(n, weight=13.5)
        terms = ConstHazardTerms(apparatus, h_ion=3.0, h_loss=1.0, efficiency=0.5)
        series = _run_hazard_sim(
            cloud, apparatus, terms, lambda t: 0.0, 0.8, 0.05,
            lambda t: t, "time", 3, move=False, dt=1e-3)
        meta = series.metadata
        assert meta["ionized_atoms"] + meta["scattered_atoms"] + \
            meta["surviving_atoms"] == n
        total = meta["ions_total"] + meta["scattered_total"] + meta["survivors"]
        assert total == pytest.approx(n * 13.5, rel=1e-12)
        # competing-risk split matches the hazard ratio
        assert meta["ionized_atoms"] / (meta["ionized_atoms"] + meta["scattered_atoms"]) \
            == pytest.approx(0.75, abs=0.01)

    def test_zero_efficiency_zero_counts(self, apparatus):
        cloud = uniform_cloud(5000)
        terms = ConstHazardTerms(apparatus, h_ion=5.0, efficiency=0.0)
        for counting in ("analog", "poisson"):
            series = _run_hazard_sim(
                cloud, apparatus, terms, lambda t: 0.0, 0.3, 0.05,
                lambda t: t, "time", 7, move=False, dt=1e-3, counting=counting)
            assert series.total_counts == 0

    def test_empty_cloud_warning(self, apparatus):
        cloud = uniform_cloud(4)
        cloud.alive[:] = False
        proto = DecayProtocol(observe_duration=0.1)
        series = run_decay(cloud, proto, apparatus, 1)
        assert series.total_counts == 0
        assert series.metadata["warning"] == "empty-cloud"
        assert series.counts.size == math.ceil(0.1 / proto.bin_width)

    def test_poisson_counting_matches_analog_mean(self, apparatus):
        h = 4.0
        cloud_a = uniform_cloud(80000)
        cloud_p = uniform_cloud(80000)
        terms = ConstHazardTerms(apparatus, h, efficiency=0.5)
        a = _run_hazard_sim(cloud_a, apparatus, terms, lambda t: 0.0, 0.5, 0.5,
                            lambda t: t, "time", 5, move=False, dt=1e-3,
                            counting="analog")
        p = _run_hazard_sim(cloud_p, apparatus, terms, lambda t: 0.0, 0.5, 0.5,
                            lambda t: t, "time", 6, move=False, dt=1e-3,
                            counting="poisson")
        expected = 80000 * 0.5 * (1 - math.exp(-h * 0.5))
        assert a.total_counts == pytest.approx(expected, rel=0.02)
        assert p.total_counts == pytest.approx(expected, rel=0.02)


class TestDecayRun:
    def test_determinism(self, apparatus, magnetic_potential_obj):
        cloud = sample_thermal_cloud(1500, 7e5, 6e-6, magnetic_potential_obj, 4)
        proto = DecayProtocol(observe_duration=0.2, diode_power=440e-6,
                              fiber_power=1.6, diode_detuning=35.92e6)
        s1 = run_decay(cloud, proto, apparatus, 99)
        s2 = run_decay(cloud, proto, apparatus, 99)
        assert np.array_equal(s1.counts, s2.counts)
        assert np.array_equal(s1.bin_centers, s2.bin_centers)

    def test_metadata_echo(self, apparatus, magnetic_potential_obj):
        cloud = sample_thermal_cloud(500, 7e5, 6e-6, magnetic_potential_obj, 4)
        proto = DecayProtocol(observe_duration=0.05, diode_power=440e-6,
                              fiber_power=1.6, diode_detuning=35.92e6)
        series = run_decay(cloud, proto, apparatus, 99)
        meta = series.metadata
        assert meta["protocol"] == "decay"
        assert meta["seed"] == 99
        assert meta["observe_duration"] == 0.05
        assert meta["ions_total"] + meta["scattered_total"] + meta["survivors"] \
            == pytest.approx(cloud.total_weight, rel=1e-12)


class TestOpticalScan:
    def test_zero_diode_power_flat_zero(self, apparatus, magnetic_potential_obj):
        cloud = sample_thermal_cloud(800, 1.8e6, 18e-6, magnetic_potential_obj, 6)
        proto = OpticalScanProtocol(diode_power=0.0, fiber_power=1.6)
        series = run_optical_scan(cloud, proto, apparatus, 8)
        assert series.total_counts == 0

    def test_axis_is_diode_detuning(self, apparatus, magnetic_potential_obj):
        cloud = sample_thermal_cloud(300, 1.8e6, 18e-6, magnetic_potential_obj, 6)
        proto = OpticalScanProtocol(scan_rate=-45e6, span=65e6, start_detuning=45e6,
                                    diode_power=0.0, fiber_power=1.0)
        series = run_optical_scan(cloud, proto, apparatus, 8)
        assert series.axis_kind == "diode_detuning"
        assert series.bin_centers.max() < 45e6
        assert series.bin_centers.min() > -20.1e6
        assert np.ptp(series.bin_centers) == pytest.approx(65e6, rel=0.02)

    def test_center_shift_slope_on_expectation_curves(self, apparatus,
                                                      magnetic_potential_obj):
        # regression of fitted centers over the eleven reference powers
        # recovers the configured shift slope on noiseless expectations
        cloud = sample_thermal_cloud(4000, 1.8e6, 18e-6, magnetic_potential_obj, 13)
        powers = np.linspace(0.08, 1.6, 11)
        proto0 = OpticalScanProtocol(scan_rate=-45e6, span=65e6, start_detuning=45e6,
                                     diode_power=270e-6)
        centers = np.empty((11, 4))
        fwhms = np.empty((11, 4))
        for i, p in enumerate(powers):
            proto = replace(proto0, fiber_power=float(p))
            det, lam = expected_optical_spectrum(cloud, proto, apparatus)
            spec = CountTimeSeries(bin_centers=det,
                                   counts=np.round(lam * (2e5 / lam.sum())).astype(int),
                                   axis_kind="diode_detuning")
            report = fit_multi_gaussian(spec, 4)
            centers[i] = [report[f"center_{k}"] for k in (1, 2, 3, 4)]
            fwhms[i] = [report[f"fwhm_{k}"] for k in (1, 2, 3, 4)]
        for k in range(4):
            slope, _, _ = linear_fit(powers, centers[:, k])
            assert slope == pytest.approx(apparatus.spectrum.shift_slope, rel=0.05)
        slope, intercept, _ = linear_fit(powers, fwhms.mean(axis=1))
        assert slope == pytest.approx(apparatus.spectrum.broadening_slope, rel=0.05)
        assert intercept == pytest.approx(apparatus.spectrum.base_linewidth_fwhm, rel=0.05)


class TestMicrowaveScan:
    def test_analytic_poisson_spectrum(self, apparatus, trap):
        cloud = sample_harmonic_cloud(50000, 1.8e6, 18e-6, trap, 3)
        proto = MicrowaveScanProtocol(simulation_mode="analytic", fiber_ramp="instant",
                                      fiber_power=0.5)
        series = run_microwave_scan(cloud, proto, trap, apparatus, 4)
        assert series.axis_kind == "microwave_detuning"
        assert series.total_counts > 0
        # spectrum rises toward the trap bottom (late bins, low detuning)
        third = series.counts.size // 3
        assert series.counts[-third:].sum() > series.counts[:third].sum()

    def test_below_bottom_warning(self, apparatus, trap):
        cloud = sample_harmonic_cloud(100, 1e4, 18e-6, trap, 3)
        proto = MicrowaveScanProtocol(f_start=6.80e9, f_end=6.79e9,
                                      simulation_mode="analytic", fiber_ramp="instant")
        series = run_microwave_scan(cloud, proto, trap, apparatus, 4)
        assert series.total_counts == 0
        assert series.metadata["warning"] == "below-trap-bottom"

    def test_modes_agree_chi_square(self, apparatus, trap):
        # weight-one snapshot cloud: tight transverse tube, thermal axis
        rng = np.random.default_rng(5)
        n = 120000
        t = 12e-6
        sz = math.sqrt(KB * t / (M * trap.omega_r ** 2))
        pos = np.column_stack([rng.normal(0, 3e-6, n), rng.normal(0, 3e-6, n),
                               rng.normal(0, sz, n)])
        cloud = CloudState(positions=pos, velocities=np.zeros((n, 3)),
                           weights=np.ones(n), temperature_label=t)
        proto = MicrowaveScanProtocol(simulation_mode="monte-carlo",
                                      fiber_ramp="instant", fiber_power=1.6)
        mc = run_microwave_scan(cloud, proto, trap, apparatus, 77)
        _, lam = expected_microwave_spectrum(cloud, proto, trap, apparatus)
        assert mc.metadata["counting"] == "analog"
        assert mc.total_counts == pytest.approx(lam.sum(), rel=0.02)
        # exclude the two bins at the trap-bottom scan edge, where the sweep
        # stops mid-passage and truncates the transfer
        mask = lam >= 10
        mask[-2:] = False
        chi2 = float(np.sum((mc.counts[mask] - lam[mask]) ** 2 / lam[mask]))
        dof = int(mask.sum())
        p = 1.0 - stats.chi2.cdf(chi2, dof)
        assert p > 0.01

    def test_temperature_halves_log_slope(self, apparatus, trap):
        proto = MicrowaveScanProtocol(simulation_mode="analytic", fiber_ramp="instant",
                                      fiber_power=0.5)
        cloud = sample_harmonic_cloud(20000, 1.8e6, 9e-6, trap, 3)
        _, lam1 = expected_microwave_spectrum(cloud, proto, trap, apparatus,
                                              temperature=9e-6)
        _, lam2 = expected_microwave_spectrum(cloud, proto, trap, apparatus,
                                              temperature=18e-6)
        edges = np.arange(lam1.size + 1) * proto.bin_width
        f = proto.f_start + (proto.f_end - proto.f_start) * edges / proto.duration
        dw = TWO_PI * (0.5 * (f[1:] + f[:-1]) - trap.bottom_frequency)
        sel = dw > TWO_PI * 1e6
        s1 = np.polyfit(dw[sel], np.log(lam1[sel] * np.sqrt(dw[sel])), 1)[0]
        s2 = np.polyfit(dw[sel], np.log(lam2[sel] * np.sqrt(dw[sel])), 1)[0]
        assert s1 / s2 == pytest.approx(2.0, rel=0.02)

    def test_mc_bookkeeping(self, apparatus, trap):
        cloud = sample_harmonic_cloud(20000, 20000, 14e-6, trap, 9)
        proto = MicrowaveScanProtocol(simulation_mode="monte-carlo",
                                      fiber_ramp="instant", fiber_power=1.0)
        series = run_microwave_scan(cloud, proto, trap, apparatus, 10)
        meta = series.metadata
        assert meta["ionized_atoms"] + meta["scattered_atoms"] + \
            meta["surviving_atoms"] == 20000
        assert meta["ions_total"] + meta["scattered_total"] + meta["survivors"] \
            == pytest.approx(20000.0, rel=1e-12)


class TestSeriesCsv:
    def test_roundtrip(self, tmp_path):
        series = CountTimeSeries(bin_centers=np.array([0.0025, 0.0075]),
                                 counts=np.array([3, 7]), axis_kind="time",
                                 metadata={"seed": 5, "ions_total": 12.5})
        path = tmp_path / "series.csv"
        write_series_csv(series, path, extra_header={"tool_version": "0.1.0"})
        text = path.read_text()
        assert "# unit: s" in text
        assert "# seed=5" in text
        assert text.strip().splitlines()[-1].startswith("0.0075,")
        back = read_series_csv(path)
        assert back.axis_kind == "time"
        assert np.array_equal(back.counts, series.counts)
        assert np.array_equal(back.bin_centers, series.bin_centers)
        assert back.metadata["tool_version"] == "0.1.0"

    def test_malformed_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("axis;counts\n1,2\n")
        with pytest.raises(ValueError):
            read_series_csv(path)

    def test_counts_validation(self):
        with pytest.raises(ValueError):
            CountTimeSeries(bin_centers=np.array([1.0]), counts=np.array([-1]),
                            axis_kind="time")
        with pytest.raises(ValueError):
            CountTimeSeries(bin_centers=np.array([1.0]), counts=np.array([1]),
                            axis_kind="sideways")
