"""Trap, beam and rate physics for the chip-trap photoionization simulator.

Conventions:
  * plain frequencies are in Hz; angular frequencies (rad/s) appear only in
    the trap oscillation frequencies, Zeeman detunings and the Rabi window,
    and every signature says which one it uses
  * positions are metres, 3-vectors or (n, 3) arrays
  * laser beams are collimated Gaussians: the Rayleigh length of the tightest
    beam (~2 mm) dwarfs the cloud radius (~30 um), so axial divergence is
    ignored
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .constants import CODATA

TWO_PI = 2.0 * math.pi
FOUR_LN2 = 4.0 * math.log(2.0)


class BeamRole(Enum):
    DIODE_778 = "diode778"
    FIBER_1080 = "fiber1080"


# Beam-center coefficients for linearly polarized light, per unit beam power.
DIODE_SHIFT_COEFF = -97.6e3 / 1e-3    # Hz/W, repulsive ground-state shift
DIODE_SCATTER_COEFF = 3.2 / 1e-3      # 1/(s W)
DIODE_WAIST = 34e-6                   # m, 1/e^2 intensity radius
FIBER_SHIFT_COEFF = 2.9e6             # Hz/W, attractive
FIBER_SCATTER_COEFF = 0.47            # 1/(s W)
FIBER_WAIST = 26e-6                   # m


@dataclass(frozen=True)
class TrapConfig:
    """Harmonic magnetic chip trap.

    omega_x / omega_r are angular frequencies (rad/s); bottom_frequency is
    the hyperfine transition frequency (Hz) for an atom at the trap bottom.
    """

    omega_x: float = TWO_PI * 17.0
    omega_r: float = TWO_PI * 240.0
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    bottom_frequency: float = 6.835e9

    def __post_init__(self):
        if self.omega_x <= 0.0 or self.omega_r <= 0.0:
            raise ValueError("trap frequencies must be positive")


@dataclass(frozen=True)
class BeamConfig:
    """Collimated Gaussian laser beam with its per-role rate coefficients.

    ``shift_coefficient`` (Hz/W) and ``scatter_coefficient`` (1/(s W)) apply
    at beam-center intensity; off axis both scale with the same intensity
    envelope. ``waist`` is the 1/e^2 intensity radius.
    """

    role: BeamRole
    power: float
    waist: float
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    shift_coefficient: float = 0.0
    scatter_coefficient: float = 0.0
    duty_cycle: float = 1.0

    def __post_init__(self):
        if self.power < 0.0:
            raise ValueError("beam power must be >= 0")
        if self.waist <= 0.0:
            raise ValueError("beam waist must be > 0")
        if not 0.0 < self.duty_cycle <= 1.0:
            raise ValueError("duty_cycle must lie in (0, 1]")
        n = math.sqrt(sum(a * a for a in self.axis))
        if abs(n - 1.0) > 1e-9:
            raise ValueError("beam axis must be a unit vector")
        if self.role is BeamRole.DIODE_778 and self.shift_coefficient >= 0.0:
            raise ValueError("diode beam shift coefficient must be negative (repulsive)")
        if self.role is BeamRole.FIBER_1080 and self.shift_coefficient <= 0.0:
            raise ValueError("fiber beam shift coefficient must be positive (attractive)")


def diode_beam(power: float, waist: float = DIODE_WAIST, duty_cycle: float = 1.0) -> BeamConfig:
    return BeamConfig(
        role=BeamRole.DIODE_778,
        power=power,
        waist=waist,
        shift_coefficient=DIODE_SHIFT_COEFF,
        scatter_coefficient=DIODE_SCATTER_COEFF,
        duty_cycle=duty_cycle,
    )


def fiber_beam(power: float, waist: float = FIBER_WAIST, duty_cycle: float = 1.0) -> BeamConfig:
    return BeamConfig(
        role=BeamRole.FIBER_1080,
        power=power,
        waist=waist,
        shift_coefficient=FIBER_SHIFT_COEFF,
        scatter_coefficient=FIBER_SCATTER_COEFF,
        duty_cycle=duty_cycle,
    )


@dataclass(frozen=True)
class RateModel:
    """Reference transition rates of the two-step ionization chain.

    The two-photon rate is quoted at ``two_photon_ref_power`` at beam center;
    it scales quadratically with intensity. The single-photon ionization rate
    is quoted at ``ionization_ref_power`` and scales linearly.
    """

    two_photon_peak_rate_ref: float = 2250.0      # 1/s at 0.5 mW
    two_photon_ref_power: float = 0.5e-3          # W
    ionization_rate_ref: float = 1.0 / 70e-9      # 1/s at 1.6 W
    ionization_ref_power: float = 1.6             # W
    spontaneous_decay_rate: float = 1.0 / 240e-9  # 1/s, excited-state decay
    detection_efficiency: float = 0.5

    def __post_init__(self):
        for name in ("two_photon_peak_rate_ref", "two_photon_ref_power",
                     "ionization_rate_ref", "ionization_ref_power",
                     "spontaneous_decay_rate"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.detection_efficiency <= 1.0:
            raise ValueError("detection_efficiency must lie in [0, 1]")


@dataclass(frozen=True)
class HyperfineSpectrum:
    """Four-line spectrum on the diode-laser detuning axis.

    Line centers move linearly with fiber power (``shift_slope``) and the
    common FWHM grows linearly (``broadening_slope``); both are empirical
    beam-center laws, not re-derived from the intensity distribution.
    The detuning origin is arbitrary; offsets default to the cumulative
    measured splittings. Relative line strengths default to equal weights.
    """

    line_offsets: tuple[float, ...] = (0.0, 7.73e6, 18.59e6, 32.08e6)  # Hz
    line_weights: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)
    base_linewidth_fwhm: float = 2.6e6   # Hz at zero fiber power
    shift_slope: float = 2.4e6           # Hz/W
    broadening_slope: float = 3.0e6      # Hz/W

    def __post_init__(self):
        if len(self.line_offsets) != len(self.line_weights):
            raise ValueError("offsets and weights must have equal length")
        if len(self.line_offsets) == 0:
            raise ValueError("at least one line required")
        if any(b <= a for a, b in zip(self.line_offsets, self.line_offsets[1:])):
            raise ValueError("line offsets must be strictly increasing")
        if any(w <= 0.0 for w in self.line_weights):
            raise ValueError("line weights must be positive")
        if self.base_linewidth_fwhm <= 0.0:
            raise ValueError("base linewidth must be positive")

    def line_centers(self, fiber_power: float) -> np.ndarray:
        """Line centers (Hz) at the given fiber power."""
        return np.asarray(self.line_offsets) + self.shift_slope * fiber_power

    def linewidth_fwhm(self, fiber_power: float) -> float:
        """Common FWHM (Hz) at the given fiber power."""
        return self.base_linewidth_fwhm + self.broadening_slope * fiber_power


@dataclass(frozen=True)
class Apparatus:
    """Everything the experiment runners need: trap, beams, rates, lines."""

    trap: TrapConfig = field(default_factory=TrapConfig)
    diode: BeamConfig = field(default_factory=lambda: diode_beam(300e-6))
    fiber: BeamConfig = field(default_factory=lambda: fiber_beam(1.0))
    rates: RateModel = field(default_factory=RateModel)
    spectrum: HyperfineSpectrum = field(default_factory=HyperfineSpectrum)


def default_apparatus() -> Apparatus:
    return Apparatus()


# ----------------------------------------------------------------------
# geometry helpers
# ----------------------------------------------------------------------

def _as_positions(pos) -> tuple[np.ndarray, bool]:
    """Return positions as (n, 3) plus a flag whether the input was a single vector."""
    a = np.asarray(pos, dtype=float)
    if a.ndim == 1:
        return a[None, :], True
    return a, False


def transverse_r2(pos, axis, anchor=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Squared distance from the beam axis (line through ``anchor`` along ``axis``)."""
    p, single = _as_positions(pos)
    rel = p - np.asarray(anchor, dtype=float)
    ax = np.asarray(axis, dtype=float)
    along = rel @ ax
    r2 = np.einsum("ij,ij->i", rel, rel) - along * along
    r2 = np.maximum(r2, 0.0)
    return r2[0] if single else r2


# ----------------------------------------------------------------------
# potentials and rates
# ----------------------------------------------------------------------

def magnetic_potential(pos, trap: TrapConfig) -> np.ndarray | float:
    """Harmonic Zeeman potential energy (J), zero at the trap center."""
    p, single = _as_positions(pos)
    rel = p - np.asarray(trap.center)
    m = CODATA.m_Rb87
    u = 0.5 * m * (trap.omega_x ** 2 * rel[:, 0] ** 2
                   + trap.omega_r ** 2 * (rel[:, 1] ** 2 + rel[:, 2] ** 2))
    return float(u[0]) if single else u


def beam_envelope(pos, beam: BeamConfig, anchor=(0.0, 0.0, 0.0)) -> np.ndarray | float:
    """Transverse intensity envelope exp(-2 rho^2 / w^2), 1 on the beam axis."""
    r2 = transverse_r2(pos, beam.axis, anchor)
    return np.exp(-2.0 * r2 / beam.waist ** 2)


def beam_intensity(pos, beam: BeamConfig, anchor=(0.0, 0.0, 0.0)) -> np.ndarray | float:
    """Local intensity (W/m^2) of the collimated Gaussian beam."""
    peak = 2.0 * beam.power / (math.pi * beam.waist ** 2)
    return peak * beam_envelope(pos, beam, anchor)


def light_shift(pos, beam: BeamConfig, anchor=(0.0, 0.0, 0.0)) -> np.ndarray | float:
    """Ground-state AC-Stark shift (Hz) at ``pos``; sign follows the beam role."""
    return beam.shift_coefficient * beam.power * beam_envelope(pos, beam, anchor)


def scattering_rate(pos, beam: BeamConfig, anchor=(0.0, 0.0, 0.0)) -> np.ndarray | float:
    """Off-resonant photon scattering rate (1/s) at ``pos``."""
    return beam.scatter_coefficient * beam.power * beam_envelope(pos, beam, anchor)


def dipole_potential(pos, beams, anchor=(0.0, 0.0, 0.0)) -> np.ndarray | float:
    """Total optical dipole energy (J): -h * sum of ground-state light shifts.

    An attractive beam (positive shift coefficient) yields negative energy.
    """
    p, single = _as_positions(pos)
    u = np.zeros(p.shape[0])
    for beam in beams:
        u -= CODATA.h * light_shift(p, beam, anchor)
    return float(u[0]) if single else u


def gaussian_peak(x, fwhm: float):
    """Unit-peak Gaussian profile with the given full width at half maximum."""
    return np.exp(-FOUR_LN2 * np.square(x) / (fwhm * fwhm))


def two_photon_rate(pos, diode: BeamConfig, detuning_diode: float,
                    spectrum: HyperfineSpectrum, fiber_power: float,
                    rates: RateModel | None = None,
                    anchor=(0.0, 0.0, 0.0)) -> np.ndarray | float:
    """Two-photon excitation rate (1/s) at ``pos`` and diode detuning (Hz).

    Scales with the square of the local diode intensity (two-photon process)
    relative to the reference beam-center intensity; the line profile is a
    sum of unit-peak Gaussians whose centers and common FWHM follow the
    linear fiber-power laws of ``spectrum``.
    """
    if diode.role is not BeamRole.DIODE_778:
        raise ValueError("two_photon_rate requires the 778 nm diode beam")
    if rates is None:
        rates = RateModel()
    centers = spectrum.line_centers(fiber_power)
    fwhm = spectrum.linewidth_fwhm(fiber_power)
    weights = np.asarray(spectrum.line_weights)
    line = float(weights @ gaussian_peak(detuning_diode - centers, fwhm))
    env = beam_envelope(pos, diode, anchor)
    power_ratio = diode.power / rates.two_photon_ref_power
    return rates.two_photon_peak_rate_ref * power_ratio ** 2 * np.square(env) * line


def ionization_rate(pos, fiber: BeamConfig, rates: RateModel | None = None,
                    anchor=(0.0, 0.0, 0.0)) -> np.ndarray | float:
    """Single-photon ionization rate (1/s) out of the excited state."""
    if fiber.role is not BeamRole.FIBER_1080:
        raise ValueError("ionization requires the 1080 nm fiber beam")
    if rates is None:
        rates = RateModel()
    return (rates.ionization_rate_ref * fiber.power / rates.ionization_ref_power
            * beam_envelope(pos, fiber, anchor))


def ionization_branching(pos, fiber: BeamConfig, rates: RateModel | None = None,
                         anchor=(0.0, 0.0, 0.0)) -> np.ndarray | float:
    """Probability that an excited atom ionizes rather than decays back.

    p = R_ion / (R_ion + Gamma_spont), monotone in fiber power and in
    proximity to the beam axis; always in [0, 1).
    """
    if rates is None:
        rates = RateModel()
    r = ionization_rate(pos, fiber, rates, anchor)
    return r / (r + rates.spontaneous_decay_rate)


def resonance_shell(delta_omega: float, trap: TrapConfig) -> tuple[float, float, float]:
    """Semi-axes (m) of the constant-Zeeman-energy ellipsoid at ``delta_omega`` (rad/s).

    Each semi-axis satisfies (1/2) m omega_i^2 a_i^2 = (2/3) hbar delta_omega.
    Raises ValueError for negative detuning: no shell exists below the trap
    bottom.
    """
    if delta_omega < 0.0:
        raise ValueError("resonance shell undefined below the trap bottom")
    m = CODATA.m_Rb87
    e = 4.0 * CODATA.hbar * delta_omega / (3.0 * m)
    a_x = math.sqrt(e) / trap.omega_x
    a_r = math.sqrt(e) / trap.omega_r
    return (a_x, a_r, a_r)


def line_density_thermal(delta_omega, temperature: float) -> np.ndarray | float:
    """Thermal-cloud detuning density exp(-2 hbar dw / (3 kB T)) / sqrt(dw).

    ``delta_omega`` is in rad/s and must be strictly positive (the expression
    is singular at zero; callers restrict themselves to dw >= 2*pi*1 kHz).
    """
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    dw = np.asarray(delta_omega, dtype=float)
    if np.any(dw <= 0.0):
        raise ValueError("delta_omega must be strictly positive")
    a = 2.0 * CODATA.hbar / (3.0 * CODATA.k_B * temperature)
    out = np.exp(-a * dw) / np.sqrt(dw)
    return float(out) if out.ndim == 0 else out


def thermal_detuning_decay_constant(temperature: float) -> float:
    """The exponential constant a = 2 hbar / (3 kB T), in s/rad."""
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    return 2.0 * CODATA.hbar / (3.0 * CODATA.k_B * temperature)
