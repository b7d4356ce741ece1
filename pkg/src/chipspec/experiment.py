"""The three simulated experiment protocols and the detection chain.

All runs are pure functions of (cloud, protocol, seed). Detector counts are
produced in one of two statistically faithful ways:

  * "analog": every simulated ion event is Bernoulli-thinned by the detection
    efficiency and binned; exact when each simulated atom represents one
    physical atom
  * "poisson": when simulated atoms carry weight > 1, per-bin counts are
    Poisson samples of the weighted detected-ion intensity, which reproduces
    physical counting statistics at any ensemble reduction

"auto" picks analog for weight <= 1 and poisson otherwise. Atom removal is
always a per-step Bernoulli draw on 1 - exp(-h dt), so the weight bookkeeping
(survivors + ionized + scattered = initial) is exact in both modes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict, replace

import numpy as np
from scipy.special import erf

from .constants import CODATA
from .ensemble import (CloudState, effective_temperature_after_ramp,
                       resample_equilibrium)
from .physics import (Apparatus, TrapConfig, FOUR_LN2, TWO_PI,
                      magnetic_potential)
from .potentials import make_total_potential
from .series import CountTimeSeries

DEFAULT_TIME_STEP = 1e-4     # s, capped further by the stiffest trap frequency
DEFAULT_CHOP_PERIOD = 1e-3   # s, used whenever a beam duty cycle is < 1

_TAG_RUN = 11
_TAG_PREP = 12


@dataclass(frozen=True)
class DecayProtocol:
    """Ionize a held cloud at fixed diode detuning and record the count decay."""

    fiber_ramp: str = "instant"          # "instant" or "linear"
    ramp_duration: float = 1.0           # s, only for the linear ramp
    hold_after_ramp: float = 0.0         # s
    observe_duration: float = 3.0        # s
    bin_width: float = 5e-3              # s
    diode_power: float | None = None     # W, None uses the apparatus beam power
    fiber_power: float | None = None     # W
    diode_detuning: float = 0.0          # Hz on the diode axis
    heating_mode: str = "none"           # cloud prep after a ramp
    heating_factor: float = 1.3

    def __post_init__(self):
        if self.fiber_ramp not in ("instant", "linear"):
            raise ValueError("fiber_ramp must be 'instant' or 'linear'")
        for name in ("ramp_duration", "hold_after_ramp", "observe_duration"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if self.bin_width <= 0.0:
            raise ValueError("bin_width must be positive")


@dataclass(frozen=True)
class OpticalScanProtocol:
    """Sweep the diode detuning across the two-photon lines."""

    scan_rate: float = -45e6             # Hz/s on the diode axis
    span: float = 65e6                   # Hz
    start_detuning: float = 45e6         # Hz
    bin_width: float = 5e-3              # s
    fiber_power: float | None = None
    diode_power: float | None = None
    thermalize_hold: float = 0.0         # s; > 0 re-equilibrates into the dimple
    heating_mode: str = "none"
    heating_factor: float = 1.3

    def __post_init__(self):
        if self.span <= 0.0:
            raise ValueError("span must be positive")
        if self.scan_rate == 0.0:
            raise ValueError("scan_rate must be nonzero")
        if self.bin_width <= 0.0:
            raise ValueError("bin_width must be positive")
        if self.thermalize_hold < 0.0:
            raise ValueError("thermalize_hold must be >= 0")

    @property
    def duration(self) -> float:
        return self.span / abs(self.scan_rate)


@dataclass(frozen=True)
class MicrowaveScanProtocol:
    """Sweep the ground-state microwave across the Zeeman-shifted resonance."""

    f_start: float = 6.841e9             # Hz
    f_end: float = 6.835e9               # Hz
    duration: float = 0.32               # s
    rabi_frequency: float = TWO_PI * 23.7e3  # rad/s, FWHM of the transfer window
    bin_width: float = 1e-3              # s
    axis_origin: float = 6.835e9         # Hz, display origin of the output axis
    simulation_mode: str = "analytic"    # "analytic" or "monte-carlo"
    fiber_power: float | None = None
    diode_power: float | None = None
    fiber_ramp: str = "linear"           # dimple loading before the scan
    heating_mode: str = "none"
    heating_factor: float = 1.3
    residual_line_amplitude: float = 0.0  # extra spectral component, off by default
    residual_line_scale: float = 0.5      # detuning scale factor of that component

    def __post_init__(self):
        if self.duration <= 0.0:
            raise ValueError("duration must be positive")
        if self.rabi_frequency <= 0.0:
            raise ValueError("rabi_frequency must be positive")
        if self.bin_width <= 0.0:
            raise ValueError("bin_width must be positive")
        if self.simulation_mode not in ("analytic", "monte-carlo"):
            raise ValueError("simulation_mode must be 'analytic' or 'monte-carlo'")
        if self.fiber_ramp not in ("instant", "linear"):
            raise ValueError("fiber_ramp must be 'instant' or 'linear'")
        if self.residual_line_amplitude < 0.0 or self.residual_line_scale <= 0.0:
            raise ValueError("residual line settings out of range")


# ----------------------------------------------------------------------
# elementary operations
# ----------------------------------------------------------------------

def detect(event_times, efficiency: float, rng_seed: int) -> np.ndarray:
    """Bernoulli-thin a sequence of event times, preserving order."""
    if not 0.0 <= efficiency <= 1.0:
        raise ValueError("efficiency must lie in [0, 1]")
    times = np.atleast_1d(np.asarray(event_times, dtype=float))
    rng = np.random.default_rng(rng_seed)
    keep = rng.random(times.shape[0]) < efficiency
    return times[keep]


def apply_chopping(hazard, t, duty_cycle: float, period: float):
    """Gate a hazard by a rectangular chopping waveform.

    The hazard applies while (t mod period) < duty_cycle * period and is zero
    otherwise.
    """
    if not 0.0 < duty_cycle <= 1.0:
        raise ValueError("duty_cycle must lie in (0, 1]")
    if period <= 0.0:
        raise ValueError("period must be positive")
    t_arr = np.asarray(t, dtype=float)
    gate = np.mod(t_arr, period) < duty_cycle * period
    out = np.where(gate, hazard, 0.0)
    return float(out) if out.ndim == 0 else out


def chop_gate_fraction(t: float, dt: float, duty_cycle: float, period: float) -> float:
    """Fraction of the step [t, t + dt) falling inside the chopping on-window.

    Exact sub-step average of the rectangular gate, so small duty cycles do
    not alias against the integrator step.
    """
    if duty_cycle >= 1.0:
        return 1.0
    if dt >= period:  # many windows per step: the average is the duty cycle
        return duty_cycle
    on = duty_cycle * period
    a = math.fmod(t, period)
    overlap = max(0.0, min(a + dt, on) - a)
    if a + dt > period:  # step wraps into the next window
        overlap += max(0.0, min(a + dt - period, on))
    return overlap / dt


def zeeman_detuning(pos, trap: TrapConfig) -> np.ndarray | float:
    """Local microwave detuning (rad/s) above the trap-bottom resonance.

    Inverse of the resonance-shell relation on each trap axis:
    delta_omega(r) = (3 / (2 hbar)) * magnetic_potential(r).
    """
    return 1.5 * magnetic_potential(pos, trap) / CODATA.hbar


# ----------------------------------------------------------------------
# shared hazard machinery
# ----------------------------------------------------------------------

class _HazardTerms:
    """Precomputed per-run constants of the two-step ionization hazard."""

    def __init__(self, apparatus: Apparatus, diode_power: float | None,
                 fiber_power: float | None):
        self.diode = apparatus.diode if diode_power is None else \
            replace(apparatus.diode, power=diode_power)
        self.fiber = apparatus.fiber if fiber_power is None else \
            replace(apparatus.fiber, power=fiber_power)
        for beam in (self.diode, self.fiber):
            axis = np.asarray(beam.axis)
            if abs(abs(axis[2]) - 1.0) > 1e-9:
                raise ValueError("experiment runners assume beams along the z axis")
        rates = apparatus.rates
        spectrum = apparatus.spectrum
        self.rates = rates
        self.efficiency = rates.detection_efficiency
        self.inv_wd2 = 2.0 / self.diode.waist ** 2
        self.inv_wf2 = 2.0 / self.fiber.waist ** 2
        self.two_photon_amp = rates.two_photon_peak_rate_ref * \
            (self.diode.power / rates.two_photon_ref_power) ** 2
        self.centers = spectrum.line_centers(self.fiber.power)
        self.fwhm = spectrum.linewidth_fwhm(self.fiber.power)
        self.weights = np.asarray(spectrum.line_weights)
        self.ion_center_rate = rates.ionization_rate_ref * \
            self.fiber.power / rates.ionization_ref_power
        self.gamma_sp = rates.spontaneous_decay_rate
        self.scatter_d = self.diode.scatter_coefficient * self.diode.power
        self.scatter_f = self.fiber.scatter_coefficient * self.fiber.power
        # dipole force prefactors (4 C / w^2 with C the beam-center energy)
        depth_d = -CODATA.h * self.diode.shift_coefficient * self.diode.power
        depth_f = -CODATA.h * self.fiber.shift_coefficient * self.fiber.power
        self.force_d = 2.0 * self.inv_wd2 * depth_d
        self.force_f = 2.0 * self.inv_wf2 * depth_f

    def gates(self, t: float, dt: float, chop_period: float) -> tuple[float, float]:
        gd = 1.0 if self.diode.duty_cycle >= 1.0 else \
            chop_gate_fraction(t, dt, self.diode.duty_cycle, chop_period)
        gf = 1.0 if self.fiber.duty_cycle >= 1.0 else \
            chop_gate_fraction(t, dt, self.fiber.duty_cycle, chop_period)
        return gd, gf

    def line(self, detuning: float) -> float:
        return float(self.weights @ np.exp(
            -FOUR_LN2 * np.square(detuning - self.centers) / (self.fwhm * self.fwhm)))

    def envelopes(self, rel: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rho2 = rel[:, 0] ** 2 + rel[:, 1] ** 2
        return np.exp(-self.inv_wd2 * rho2), np.exp(-self.inv_wf2 * rho2)

    def hazards(self, env_d, env_f, line: float, gd: float, gf: float):
        r_ion = (self.ion_center_rate * gf) * env_f
        branching = r_ion / (r_ion + self.gamma_sp)
        h_ion = (self.two_photon_amp * line * gd * gf) * env_d * env_d * branching
        h_loss = (self.scatter_d * gd) * env_d + (self.scatter_f * gf) * env_f
        return h_ion, h_loss

    def detection_kernel(self, rel: np.ndarray) -> np.ndarray:
        """Spatial probability that an excited/transferred atom yields an ion:
        ionization branching times the squared diode-beam envelope."""
        env_d, env_f = self.envelopes(rel)
        r_ion = self.ion_center_rate * env_f
        return (r_ion / (r_ion + self.gamma_sp)) * env_d * env_d


def _stiffness_limited_dt(apparatus: Apparatus, terms: _HazardTerms) -> float:
    potential = make_total_potential(apparatus.trap, [terms.diode, terms.fiber])
    limit = (TWO_PI / potential.stiffest_omega) / 20.0
    return min(DEFAULT_TIME_STEP, limit)


def _zero_series(duration: float, bin_width: float, axis_fn, axis_kind: str,
                 metadata: dict) -> CountTimeSeries:
    n_bins = max(1, math.ceil(duration / bin_width - 1e-9))
    centers_t = (np.arange(n_bins) + 0.5) * bin_width
    return CountTimeSeries(bin_centers=axis_fn(centers_t),
                           counts=np.zeros(n_bins, dtype=np.int64),
                           axis_kind=axis_kind, metadata=metadata)


def _choose_counting(mode: str, weights: np.ndarray) -> str:
    if mode == "auto":
        return "analog" if (weights.size == 0 or weights.max() <= 1.0 + 1e-9) else "poisson"
    if mode not in ("analog", "poisson"):
        raise ValueError("counting must be 'auto', 'analog' or 'poisson'")
    return mode


def _run_hazard_sim(cloud: CloudState, apparatus: Apparatus, terms: _HazardTerms,
                    detuning_fn, duration: float, bin_width: float,
                    axis_fn, axis_kind: str, rng_seed: int, *,
                    move: bool = True, dt: float | None = None,
                    counting: str = "auto",
                    chop_period: float = DEFAULT_CHOP_PERIOD) -> CountTimeSeries:
    """Propagate the cloud under the ionization/loss hazards and bin the ions."""
    metadata: dict = {"seed": int(rng_seed)}
    if cloud.n_alive == 0:
        metadata.update(warning="empty-cloud", ions_total=0.0, scattered_total=0.0,
                        survivors=0.0)
        return _zero_series(duration, bin_width, axis_fn, axis_kind, metadata)

    pos, vel, weights = cloud.alive_arrays()
    counting = _choose_counting(counting, weights)
    center = np.asarray(apparatus.trap.center, dtype=float)
    rel = pos - center
    vel = vel.copy()

    if dt is None:
        dt = _stiffness_limited_dt(apparatus, terms)
    dt = bin_width / math.ceil(bin_width / dt)  # integer steps per bin
    n_bins = max(1, math.ceil(duration / bin_width - 1e-9))
    n_steps = max(1, math.ceil(duration / dt - 1e-9))

    m = CODATA.m_Rb87
    k_harm = m * np.array([apparatus.trap.omega_x ** 2,
                           apparatus.trap.omega_r ** 2,
                           apparatus.trap.omega_r ** 2])
    eff = terms.efficiency
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(rng_seed), _TAG_RUN)))

    lam = np.zeros(n_bins)
    analog_counts = np.zeros(n_bins, dtype=np.int64)
    ionized_weight = 0.0
    scattered_weight = 0.0
    ionized_n = 0
    scattered_n = 0
    initial_n = rel.shape[0]

    def beam_force(r, env_d, env_f):
        f = -r * k_harm
        scale = terms.force_f * env_f + terms.force_d * env_d
        f[:, 0] += scale * r[:, 0]
        f[:, 1] += scale * r[:, 1]
        return f

    env_d, env_f = terms.envelopes(rel)
    accel = beam_force(rel, env_d, env_f) / m if move else None
    half = 0.5 * dt

    for k in range(n_steps):
        if rel.shape[0] == 0:
            break
        t = k * dt
        b = min(int(t / bin_width), n_bins - 1)
        gd, gf = terms.gates(t, dt, chop_period)
        line = terms.line(float(detuning_fn(t)))
        h_ion, h_loss = terms.hazards(env_d, env_f, line, gd, gf)
        h_tot = h_ion + h_loss
        p = -np.expm1(-h_tot * dt)
        frac_ion = np.divide(h_ion, h_tot, out=np.zeros_like(h_ion), where=h_tot > 0.0)
        if counting == "poisson":
            lam[b] += eff * float(np.sum(weights * p * frac_ion))
        u = rng.random(rel.shape[0])
        hit = u < p
        if np.any(hit):
            idx = np.nonzero(hit)[0]
            u_kind = rng.random(idx.shape[0])
            is_ion = u_kind < frac_ion[idx]
            ion_idx = idx[is_ion]
            ionized_n += ion_idx.shape[0]
            ionized_weight += float(weights[ion_idx].sum())
            scattered_n += idx.shape[0] - ion_idx.shape[0]
            scattered_weight += float(weights[idx[~is_ion]].sum())
            if counting == "analog" and ion_idx.shape[0] > 0:
                u_det = rng.random(ion_idx.shape[0])
                analog_counts[b] += int(np.sum(u_det < eff))
            keep = ~hit
            rel = rel[keep]
            vel = vel[keep]
            weights = weights[keep]
            env_d = env_d[keep]
            env_f = env_f[keep]
            if move:
                accel = accel[keep]
            if rel.shape[0] == 0:
                break
        if move:
            vel += half * accel
            rel += dt * vel
            env_d, env_f = terms.envelopes(rel)
            accel = beam_force(rel, env_d, env_f) / m
            vel += half * accel

    if counting == "poisson":
        counts = rng.poisson(lam).astype(np.int64)
    else:
        counts = analog_counts

    survivors_weight = float(weights.sum())
    metadata.update(
        counting=counting,
        ions_total=ionized_weight,
        scattered_total=scattered_weight,
        survivors=survivors_weight,
        ionized_atoms=ionized_n,
        scattered_atoms=scattered_n,
        surviving_atoms=rel.shape[0],
        initial_atoms=initial_n,
        time_step=dt,
    )
    centers_t = (np.arange(n_bins) + 0.5) * bin_width
    return CountTimeSeries(bin_centers=axis_fn(centers_t), counts=counts,
                           axis_kind=axis_kind, metadata=metadata)


def _protocol_echo(protocol) -> dict:
    echo = {}
    for key, value in asdict(protocol).items():
        echo[key] = value if value is not None else "apparatus-default"
    return echo


def _prep_seed(rng_seed: int) -> int:
    return int(np.random.SeedSequence(entropy=(int(rng_seed), _TAG_PREP))
               .generate_state(1, np.uint64)[0])


def _dimple_depth(terms: _HazardTerms) -> float:
    return CODATA.h * terms.fiber.shift_coefficient * terms.fiber.power


# ----------------------------------------------------------------------
# protocol runners
# ----------------------------------------------------------------------

def run_decay(cloud: CloudState, protocol: DecayProtocol, physics: Apparatus,
              rng_seed: int, *, counting: str = "auto",
              chop_period: float = DEFAULT_CHOP_PERIOD) -> CountTimeSeries:
    """Simulate a decay run and return binned detected counts versus time.

    Instant mode starts the dynamics from the supplied cloud at t = 0; linear
    mode models the adiabatic ramp as a Boltzmann re-equilibration into the
    combined trap at the post-ramp temperature before observation.
    """
    terms = _HazardTerms(physics, protocol.diode_power, protocol.fiber_power)
    if protocol.fiber_ramp == "linear" and cloud.n_alive > 0:
        t_eff = effective_temperature_after_ramp(
            cloud.temperature_label, _dimple_depth(terms),
            protocol.heating_mode, protocol.heating_factor)
        potential = make_total_potential(physics.trap, [terms.diode, terms.fiber])
        cloud = resample_equilibrium(cloud, potential, t_eff, _prep_seed(rng_seed))
    series = _run_hazard_sim(
        cloud, physics, terms,
        detuning_fn=lambda t: protocol.diode_detuning,
        duration=protocol.observe_duration, bin_width=protocol.bin_width,
        axis_fn=lambda t: t, axis_kind="time", rng_seed=rng_seed,
        counting=counting, chop_period=chop_period)
    series.metadata.update(_protocol_echo(protocol), protocol="decay")
    return series


def run_optical_scan(cloud: CloudState, protocol: OpticalScanProtocol,
                     physics: Apparatus, rng_seed: int, *, counting: str = "auto",
                     chop_period: float = DEFAULT_CHOP_PERIOD) -> CountTimeSeries:
    """Simulate a swept two-photon spectrum; output axis is diode detuning (Hz)."""
    terms = _HazardTerms(physics, protocol.diode_power, protocol.fiber_power)
    if protocol.thermalize_hold > 0.0 and cloud.n_alive > 0:
        t_eff = effective_temperature_after_ramp(
            cloud.temperature_label, _dimple_depth(terms),
            protocol.heating_mode, protocol.heating_factor)
        potential = make_total_potential(physics.trap, [terms.diode, terms.fiber])
        cloud = resample_equilibrium(cloud, potential, t_eff, _prep_seed(rng_seed))
    initial_weight = cloud.total_weight
    series = _run_hazard_sim(
        cloud, physics, terms,
        detuning_fn=lambda t: protocol.start_detuning + protocol.scan_rate * t,
        duration=protocol.duration, bin_width=protocol.bin_width,
        axis_fn=lambda t: protocol.start_detuning + protocol.scan_rate * t,
        axis_kind="diode_detuning", rng_seed=rng_seed,
        counting=counting, chop_period=chop_period)
    if initial_weight > 0.0:
        series.metadata["ionized_fraction"] = series.metadata["ions_total"] / initial_weight
        series.metadata["surviving_fraction"] = series.metadata["survivors"] / initial_weight
    series.metadata.update(_protocol_echo(protocol), protocol="optical-scan")
    return series


def expected_optical_spectrum(cloud: CloudState, protocol: OpticalScanProtocol,
                              physics: Apparatus) -> tuple[np.ndarray, np.ndarray]:
    """Noiseless expected detected counts per bin for a frozen initial cloud.

    Ignores depletion and motion; cross-checks the linear light-shift law on
    expectation curves without Monte-Carlo noise.
    """
    terms = _HazardTerms(physics, protocol.diode_power, protocol.fiber_power)
    if cloud.n_alive == 0:
        n_bins = max(1, math.ceil(protocol.duration / protocol.bin_width - 1e-9))
        t = (np.arange(n_bins) + 0.5) * protocol.bin_width
        return protocol.start_detuning + protocol.scan_rate * t, np.zeros(n_bins)
    pos, _, weights = cloud.alive_arrays()
    rel = pos - np.asarray(physics.trap.center)
    env_d, env_f = terms.envelopes(rel)
    n_bins = max(1, math.ceil(protocol.duration / protocol.bin_width - 1e-9))
    t = (np.arange(n_bins) + 0.5) * protocol.bin_width
    detunings = protocol.start_detuning + protocol.scan_rate * t
    lam = np.empty(n_bins)
    for i, d in enumerate(detunings):
        h_ion, _ = terms.hazards(env_d, env_f, terms.line(float(d)), 1.0, 1.0)
        lam[i] = terms.efficiency * protocol.bin_width * float(np.sum(weights * h_ion))
    return detunings, lam


# ----------------------------------------------------------------------
# microwave double resonance
# ----------------------------------------------------------------------

def _sheet_probability(edges: np.ndarray, decay_const: float) -> np.ndarray:
    """Probability mass of the thermal detuning distribution between edges.

    The z-sheet distribution integrates in closed form:
    P([lo, hi]) = erf(sqrt(a hi)) - erf(sqrt(a lo)), clipped at zero detuning.
    """
    clipped = np.maximum(edges, 0.0)
    vals = erf(np.sqrt(decay_const * clipped))
    return np.abs(np.diff(vals))


def expected_microwave_spectrum(cloud: CloudState, protocol: MicrowaveScanProtocol,
                                trap: TrapConfig, physics: Apparatus,
                                temperature: float | None = None
                                ) -> tuple[np.ndarray, np.ndarray]:
    """Expected detected counts per bin for the analytic microwave model.

    The thermal detuning density (exponential over square root) is integrated
    over each bin, convolved with the Gaussian transfer window of FWHM equal
    to the Rabi frequency, and scaled by the cloud weight, the detection
    efficiency and the mean spatial detection kernel of the cloud.
    """
    terms = _HazardTerms(physics, protocol.diode_power, protocol.fiber_power)
    n_bins = max(1, math.ceil(protocol.duration / protocol.bin_width - 1e-9))
    t_edges = np.arange(n_bins + 1) * protocol.bin_width
    f_edges = protocol.f_start + (protocol.f_end - protocol.f_start) * t_edges / protocol.duration
    dw_edges = TWO_PI * (f_edges - trap.bottom_frequency)
    if temperature is None:
        temperature = cloud.temperature_label
    if cloud.n_alive == 0 or np.all(np.maximum(dw_edges, 0.0) == 0.0):
        return f_edges, np.zeros(n_bins)

    pos, _, weights = cloud.alive_arrays()
    rel = pos - np.asarray(trap.center)
    kernel = terms.detection_kernel(rel)
    mean_kernel = float(np.sum(weights * kernel) / np.sum(weights))
    total_weight = float(np.sum(weights))
    a = 2.0 * CODATA.hbar / (3.0 * CODATA.k_B * temperature)

    # fine grid for the window convolution
    sub = 8
    fine_edges = np.interp(np.arange(n_bins * sub + 1) / sub,
                           np.arange(n_bins + 1), dw_edges)
    prob = _sheet_probability(fine_edges, a)
    if protocol.residual_line_amplitude > 0.0:
        prob = prob + protocol.residual_line_amplitude * _sheet_probability(
            fine_edges, a / protocol.residual_line_scale)
    step = abs(np.diff(fine_edges)).mean()
    sigma_w = protocol.rabi_frequency / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    sweep_speed = TWO_PI * abs(protocol.f_end - protocol.f_start) / protocol.duration
    if sigma_w > 0.1 * step and sweep_speed > 0.0:
        # The sweep drags the Gaussian transfer window across each atom, so the
        # detected response is the first-passage density of an exponential
        # clock whose rate traces the window: atoms fire in the leading tail
        # when the per-passage exposure is large. Build that kernel over the
        # offset (atom detuning minus microwave detuning) and convolve.
        r0 = protocol.rabi_frequency / TWO_PI  # transfer rate at window center
        half = int(math.ceil(6.0 * sigma_w / step)) + 2
        edges_x = np.arange(-half, half + 1) * step
        g = np.exp(-0.5 * (edges_x / sigma_w) ** 2)
        exposure = np.concatenate(
            [[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * step)]) * (r0 / sweep_speed)
        survival = np.exp(-exposure)
        kernel = survival[:-1] - survival[1:]  # transfer mass per offset cell
        if protocol.f_end > protocol.f_start:  # up-sweep mirrors the response
            kernel = kernel[::-1]
        n_fine = prob.shape[0]
        full = np.convolve(prob, kernel, mode="full")
        prob = full[half:half + n_fine].copy()
        # fold spill-over into the edge cells: transfers triggered while the
        # window approaches the scan edges land in the nearest observed bins
        prob[0] += full[:half].sum()
        prob[-1] += full[half + n_fine:].sum()
    lam_fine = terms.efficiency * mean_kernel * total_weight * prob
    lam = lam_fine.reshape(n_bins, sub).sum(axis=1)
    return f_edges, lam


def run_microwave_scan(cloud: CloudState, protocol: MicrowaveScanProtocol,
                       trap: TrapConfig, physics: Apparatus, rng_seed: int, *,
                       counting: str = "auto") -> CountTimeSeries:
    """Simulate the microwave double-resonance scan.

    Analytic mode Poisson-samples the expected spectrum; monte-carlo mode
    transfers individual atoms whose local Zeeman detuning falls inside the
    Gaussian Rabi window of the instantaneous microwave detuning and ionizes
    them through the spatial detection kernel. Atom positions are treated as
    a frozen snapshot of the equilibrium cloud for the duration of the sweep.
    """
    terms = _HazardTerms(physics, protocol.diode_power, protocol.fiber_power)
    metadata: dict = {"seed": int(rng_seed), "mode": protocol.simulation_mode,
                      "axis_origin": protocol.axis_origin,
                      "bottom_frequency": trap.bottom_frequency}

    if protocol.fiber_ramp == "linear" and cloud.n_alive > 0 and terms.fiber.power > 0.0:
        t_eff = effective_temperature_after_ramp(
            cloud.temperature_label, _dimple_depth(terms),
            protocol.heating_mode, protocol.heating_factor)
        potential = make_total_potential(trap, [terms.diode, terms.fiber])
        cloud = resample_equilibrium(cloud, potential, t_eff, _prep_seed(rng_seed))
    metadata["temperature_label"] = cloud.temperature_label

    n_bins = max(1, math.ceil(protocol.duration / protocol.bin_width - 1e-9))
    t_centers = (np.arange(n_bins) + 0.5) * protocol.bin_width
    sweep_rate = (protocol.f_end - protocol.f_start) / protocol.duration

    def f_of_t(t):
        return protocol.f_start + sweep_rate * t

    axis = f_of_t(t_centers) - protocol.axis_origin
    dw_max = TWO_PI * (max(protocol.f_start, protocol.f_end) - trap.bottom_frequency)
    if dw_max < 0.0 or cloud.n_alive == 0:
        metadata.update(warning="empty-cloud" if cloud.n_alive == 0 else "below-trap-bottom",
                        ions_total=0.0, scattered_total=0.0, survivors=cloud.total_weight)
        series = CountTimeSeries(bin_centers=axis, counts=np.zeros(n_bins, dtype=np.int64),
                                 axis_kind="microwave_detuning", metadata=metadata)
        series.metadata.update(_protocol_echo(protocol), protocol="microwave-scan")
        return series

    rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(rng_seed), _TAG_RUN)))

    if protocol.simulation_mode == "analytic":
        _, lam = expected_microwave_spectrum(cloud, protocol, trap, physics)
        counts = rng.poisson(lam).astype(np.int64)
        expected_total = float(lam.sum())
        metadata.update(ions_total=expected_total, scattered_total=0.0,
                        survivors=cloud.total_weight - expected_total)
        series = CountTimeSeries(bin_centers=axis, counts=counts,
                                 axis_kind="microwave_detuning", metadata=metadata)
        series.metadata.update(_protocol_echo(protocol), protocol="microwave-scan")
        return series

    # monte-carlo mode: frozen positions, per-step transfer draws
    pos, _, weights = cloud.alive_arrays()
    counting = _choose_counting(counting, weights)
    rel = pos - np.asarray(trap.center)
    atom_dw = zeeman_detuning(pos, trap)
    kernel = terms.detection_kernel(rel)
    eff = terms.efficiency

    window_fwhm = protocol.rabi_frequency
    transfer_rate = protocol.rabi_frequency / TWO_PI  # 1/s at window center
    passage = window_fwhm / (TWO_PI * abs(sweep_rate)) if sweep_rate != 0.0 else protocol.duration
    dt = min(protocol.bin_width, max(passage / 6.0, 1e-6), 1e-3)
    dt = protocol.bin_width / math.ceil(protocol.bin_width / dt)  # integer steps per bin
    n_steps = max(1, math.ceil(protocol.duration / dt - 1e-9))

    lam = np.zeros(n_bins)
    analog_counts = np.zeros(n_bins, dtype=np.int64)
    ionized_weight = 0.0
    lost_weight = 0.0
    ionized_n = 0
    lost_n = 0

    for k in range(n_steps):
        if rel.shape[0] == 0:
            break
        t = k * dt
        b = min(int(t / protocol.bin_width), n_bins - 1)
        dw_mw = TWO_PI * (f_of_t(t) - trap.bottom_frequency)
        offset = atom_dw - dw_mw
        h = transfer_rate * np.exp(-FOUR_LN2 * offset * offset / (window_fwhm * window_fwhm))
        p = -np.expm1(-h * dt)
        if counting == "poisson":
            lam[b] += eff * float(np.sum(weights * p * kernel))
        u = rng.random(rel.shape[0])
        hit = u < p
        if np.any(hit):
            idx = np.nonzero(hit)[0]
            u_ion = rng.random(idx.shape[0])
            is_ion = u_ion < kernel[idx]
            ion_idx = idx[is_ion]
            ionized_n += ion_idx.shape[0]
            ionized_weight += float(weights[ion_idx].sum())
            lost_n += idx.shape[0] - ion_idx.shape[0]
            lost_weight += float(weights[idx[~is_ion]].sum())
            if counting == "analog" and ion_idx.shape[0] > 0:
                u_det = rng.random(ion_idx.shape[0])
                analog_counts[b] += int(np.sum(u_det < eff))
            keep = ~hit
            rel = rel[keep]
            weights = weights[keep]
            atom_dw = atom_dw[keep]
            kernel = kernel[keep]

    counts = rng.poisson(lam).astype(np.int64) if counting == "poisson" else analog_counts
    metadata.update(counting=counting, ions_total=ionized_weight,
                    scattered_total=lost_weight, survivors=float(weights.sum()),
                    ionized_atoms=ionized_n, scattered_atoms=lost_n,
                    surviving_atoms=rel.shape[0], time_step=dt)
    series = CountTimeSeries(bin_centers=axis, counts=counts,
                             axis_kind="microwave_detuning", metadata=metadata)
    series.metadata.update(_protocol_echo(protocol), protocol="microwave-scan")
    return series
