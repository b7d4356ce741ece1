import numpy as np
import pytest

from chipspec import CODATA, TrapConfig, diode_beam, fiber_beam
from chipspec import dipole_potential, magnetic_potential
from chipspec.potentials import (CompositePotential, GaussianBeamPotential,
                                 HarmonicPotential, make_total_potential)


def numeric_force(potential, pos, h=1e-9):
    f = np.zeros(3)
    for i in range(3):
        up = pos.copy()
        dn = pos.copy()
        up[i] += h
        dn[i] -= h
        f[i] = -(potential.energy(up[None, :])[0] - potential.energy(dn[None, :])[0]) / (2 * h)
    return f


@pytest.fixture()
def total(trap):
    return make_total_potential(trap, [fiber_beam(1.6), diode_beam(440e-6)])


def test_energies_match_module_functions(trap, total, rng):
    pos = rng.normal(0.0, 40e-6, size=(30, 3))
    expected = magnetic_potential(pos, trap) + dipole_potential(
        pos, [fiber_beam(1.6), diode_beam(440e-6)])
    assert np.allclose(total.energy(pos), expected, rtol=1e-12)


def test_forces_match_numeric_gradient(total, rng):
    for pos in rng.normal(0.0, 30e-6, size=(12, 3)):
        f = total.force(pos[None, :])[0]
        fn = numeric_force(total, pos)
        assert np.allclose(f, fn, rtol=2e-5, atol=1e-32)


def test_harmonic_minimum_and_stiffness(trap):
    hp = HarmonicPotential(trap)
    assert np.allclose(hp.minimum, trap.center)
    assert hp.stiffest_omega == trap.omega_r


def test_beam_stiffness_scale():
    bp = GaussianBeamPotential(fiber_beam(1.6))
    depth = CODATA.h * 2.9e6 * 1.6
    expected = np.sqrt(4.0 * depth / (CODATA.m_Rb87 * 26e-6 ** 2))
    assert bp.stiffest_omega == pytest.approx(expected, rel=1e-12)


def test_composite_stiffness_is_max(trap, total):
    parts = total.parts
    assert total.stiffest_omega == max(p.stiffest_omega for p in parts)


def test_proposal_components_add_tube(trap):
    base = make_total_potential(trap)
    assert len(base.proposal_components(18e-6)) == 1
    dimple = make_total_potential(trap, [fiber_beam(1.6)])
    comps = dimple.proposal_components(18e-6)
    assert len(comps) == 2
    sig_base = np.asarray(comps[0].sigma)
    sig_tube = np.asarray(comps[1].sigma)
    assert sig_tube[0] < sig_base[0] and sig_tube[1] < sig_base[1]
    assert sig_tube[2] == sig_base[2]  # beam along z leaves z confinement magnetic


def test_shallow_beam_gets_no_component(trap):
    weak = make_total_potential(trap, [fiber_beam(1e-4)])
    assert len(weak.proposal_components(18e-6)) == 1


def test_offcenter_trap_force(rng):
    trap = TrapConfig(center=(5e-6, -3e-6, 2e-6))
    hp = HarmonicPotential(trap)
    assert hp.energy(np.array([trap.center]))[0] == 0.0
    assert np.allclose(hp.force(np.array([trap.center]))[0], 0.0)
