"""Potential-energy objects used by the sampler and the trajectory integrator.

Each potential evaluates energy and force on (n, 3) position arrays and
reports its stiffest oscillation frequency so callers can pick a safe time
step. Potentials built from trap/beam configs also expose Gaussian proposal
components that let the equilibrium sampler make global moves into narrow
dimple regions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import CODATA
from .physics import BeamConfig, TrapConfig


@dataclass(frozen=True)
class ProposalComponent:
    """One diagonal-Gaussian component of an equilibrium proposal mixture."""

    weight: float
    mean: tuple[float, float, float]
    sigma: tuple[float, float, float]


class HarmonicPotential:
    """Anisotropic harmonic magnetic trap potential."""

    def __init__(self, trap: TrapConfig):
        self.trap = trap
        m = CODATA.m_Rb87
        self._k = m * np.array([trap.omega_x ** 2, trap.omega_r ** 2, trap.omega_r ** 2])
        self._center = np.asarray(trap.center, dtype=float)

    def energy(self, pos: np.ndarray) -> np.ndarray:
        rel = pos - self._center
        # explicit per-coordinate sum: bit-identical for any atom partition
        return 0.5 * (self._k[0] * rel[:, 0] ** 2
                      + self._k[1] * rel[:, 1] ** 2
                      + self._k[2] * rel[:, 2] ** 2)

    def force(self, pos: np.ndarray) -> np.ndarray:
        return -(pos - self._center) * self._k

    @property
    def stiffest_omega(self) -> float:
        return max(self.trap.omega_x, self.trap.omega_r)

    @property
    def minimum(self) -> np.ndarray:
        return self._center.copy()

    def proposal_components(self, temperature: float) -> list[ProposalComponent]:
        kt = CODATA.k_B * temperature
        sigma = np.sqrt(kt / self._k)
        return [ProposalComponent(1.0, tuple(self._center), tuple(sigma))]


class GaussianBeamPotential:
    """Dipole potential of one collimated Gaussian beam through ``anchor``.

    U(r) = -h * shift_coefficient * P * exp(-2 rho^2 / w^2); negative
    (attractive) for the fiber beam, positive for the diode beam.
    """

    def __init__(self, beam: BeamConfig, anchor=(0.0, 0.0, 0.0)):
        self.beam = beam
        self._anchor = np.asarray(anchor, dtype=float)
        self._axis = np.asarray(beam.axis, dtype=float)
        self._depth = -CODATA.h * beam.shift_coefficient * beam.power  # J at beam center
        self._inv_w2 = 1.0 / beam.waist ** 2
        # fast path when the beam runs along a coordinate axis
        idx = int(np.argmax(np.abs(self._axis)))
        self._axis_index = idx if abs(abs(self._axis[idx]) - 1.0) < 1e-12 else None

    @property
    def center_energy(self) -> float:
        return self._depth

    def _envelope_and_perp(self, pos: np.ndarray):
        rel = pos - self._anchor
        if self._axis_index is not None:
            i, j = [k for k in range(3) if k != self._axis_index]
            r2 = rel[:, i] ** 2 + rel[:, j] ** 2
            perp = rel.copy()
            perp[:, self._axis_index] = 0.0
            return np.exp(-2.0 * r2 * self._inv_w2), perp
        along = rel @ self._axis
        perp = rel - along[:, None] * self._axis
        r2 = np.einsum("ij,ij->i", perp, perp)
        return np.exp(-2.0 * r2 * self._inv_w2), perp


    def energy(self, pos: np.ndarray) -> np.ndarray:
        if self._axis_index is not None:
            rel = pos - self._anchor
            i, j = [k for k in range(3) if k != self._axis_index]
            r2 = rel[:, i] ** 2 + rel[:, j] ** 2
            return self._depth * np.exp(-2.0 * r2 * self._inv_w2)
        env, _ = self._envelope_and_perp(pos)
        return self._depth * env

    def force(self, pos: np.ndarray) -> np.ndarray:
        env, perp = self._envelope_and_perp(pos)
        # -dU/dr = depth * env * (4/w^2) * r_perp
        return (4.0 * self._inv_w2 * self._depth) * env[:, None] * perp

    @property
    def stiffest_omega(self) -> float:
        # curvature scale |U''| = 4|U0|/w^2 at the beam axis
        return math.sqrt(4.0 * abs(self._depth) * self._inv_w2 / CODATA.m_Rb87)

    def proposal_components(self, temperature: float):
        return []


class CompositePotential:
    """Sum of component potentials."""

    def __init__(self, parts):
        self.parts = list(parts)

    def energy(self, pos: np.ndarray) -> np.ndarray:
        total = np.zeros(pos.shape[0])
        for p in self.parts:
            total += p.energy(pos)
        return total

    def force(self, pos: np.ndarray) -> np.ndarray:
        total = np.zeros_like(pos)
        for p in self.parts:
            total += p.force(pos)
        return total

    @property
    def stiffest_omega(self) -> float:
        return max(p.stiffest_omega for p in self.parts)

    def proposal_components(self, temperature: float) -> list[ProposalComponent]:
        """Global proposal mixture: the broad trap Gaussian plus one narrow
        component per attractive beam deeper than kT (the dimple tube)."""
        kt = CODATA.k_B * temperature
        base = None
        for p in self.parts:
            if isinstance(p, HarmonicPotential):
                base = p.proposal_components(temperature)[0]
                break
        if base is None:
            comps = []
            for p in self.parts:
                comps.extend(p.proposal_components(temperature))
            return comps
        tubes = []
        for p in self.parts:
            if not isinstance(p, GaussianBeamPotential):
                continue
            depth = -p.center_energy
            if depth <= kt:  # too shallow to matter for global moves
                continue
            axis = np.asarray(p.beam.axis)
            # only axis-aligned beams get a dedicated component
            idx = int(np.argmax(np.abs(axis)))
            if abs(abs(axis[idx]) - 1.0) > 1e-9:
                continue
            sigma_tube = p.beam.waist * math.sqrt(kt / (4.0 * depth))
            sigma = list(base.sigma)
            for j in range(3):
                if j != idx:
                    sigma[j] = min(sigma[j], sigma_tube)
            tubes.append(ProposalComponent(1.0, base.mean, tuple(sigma)))
        if not tubes:
            return [base]
        w = 0.5 / len(tubes)
        comps = [ProposalComponent(0.5, base.mean, base.sigma)]
        comps.extend(ProposalComponent(w, t.mean, t.sigma) for t in tubes)
        return comps


def make_total_potential(trap: TrapConfig, beams=(), anchor=None) -> CompositePotential:
    """Magnetic trap plus the dipole potential of the given beams.

    Beams pass through the trap center unless ``anchor`` is given.
    """
    if anchor is None:
        anchor = trap.center
    parts = [HarmonicPotential(trap)]
    parts.extend(GaussianBeamPotential(b, anchor) for b in beams if b.power > 0.0)
    return CompositePotential(parts)
