"""Thermal-cloud sampling and classical propagation.

The cloud is collisionless: thermal equilibrium in a new potential is imposed
by re-sampling the Boltzmann distribution (``resample_equilibrium``) rather
than by simulating collisions. Every sampled atom owns an RNG substream keyed
by (master seed, stage tag, atom index), so clouds are bit-identical no
matter how the atom loop is partitioned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import CODATA
from .physics import TrapConfig

# stage tags separating the RNG substream families
_TAG_SAMPLE = 1
_TAG_RESAMPLE = 2
_TAG_DIRECT = 3

BURN_IN_SWEEPS = 2000       # Metropolis burn-in length
_ADAPT_EVERY = 50           # sweeps between step-size adaptations
_ADAPT_STOP = 1500          # freeze the scale here; diagnose on the rest
_INDEPENDENCE_FRACTION = 0.25  # share of global-mixture proposals
_BLOCK = 1024               # atoms chained per vectorized block

# dimple depth of the reference 1.6 W fiber beam, used as the heating anchor
REFERENCE_DIMPLE_DEPTH = CODATA.h * 2.9e6 * 1.6  # J


class SamplerConvergenceError(RuntimeError):
    """Raised when the equilibrium sampler ends outside its acceptance window."""


@dataclass
class AtomRecord:
    """One simulated atom standing in for ``weight`` physical atoms."""

    position: np.ndarray
    velocity: np.ndarray
    alive: bool = True
    weight: float = 1.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        if self.weight <= 0.0:
            raise ValueError("atom weight must be positive")
        if not (np.all(np.isfinite(self.position)) and np.all(np.isfinite(self.velocity))):
            raise ValueError("atom coordinates must be finite")


@dataclass
class CloudState:
    """Ensemble of simulated atoms plus scalar metadata."""

    positions: np.ndarray            # (n, 3) m
    velocities: np.ndarray           # (n, 3) m/s
    weights: np.ndarray              # (n,) physical atoms per simulated atom
    temperature_label: float         # K
    alive: np.ndarray = field(default=None)  # (n,) bool

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        self.velocities = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if self.alive is None:
            self.alive = np.ones(len(self.weights), dtype=bool)
        self.alive = np.atleast_1d(np.asarray(self.alive, dtype=bool))
        n = self.positions.shape[0]
        if not (self.velocities.shape[0] == self.weights.shape[0] == self.alive.shape[0] == n):
            raise ValueError("cloud arrays must have matching lengths")
        if self.temperature_label <= 0.0:
            raise ValueError("temperature label must be positive")
        if np.any(self.weights <= 0.0):
            raise ValueError("atom weights must be positive")
        if not np.all(np.isfinite(self.positions)) or not np.all(np.isfinite(self.velocities)):
            raise ValueError("cloud coordinates must be finite")

    @property
    def n_atoms(self) -> int:
        return self.positions.shape[0]

    @property
    def n_alive(self) -> int:
        return int(self.alive.sum())

    @property
    def total_weight(self) -> float:
        return float(self.weights[self.alive].sum())

    def alive_arrays(self):
        m = self.alive
        return self.positions[m], self.velocities[m], self.weights[m]

    def records(self) -> list[AtomRecord]:
        return [AtomRecord(self.positions[i].copy(), self.velocities[i].copy(),
                           bool(self.alive[i]), float(self.weights[i]))
                for i in range(self.n_atoms)]

    def write_snapshot(self, path) -> None:
        """Dump the alive atoms as CSV (x_m,y_m,z_m,vx_mps,vy_mps,vz_mps,weight)."""
        pos, vel, w = self.alive_arrays()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x_m,y_m,z_m,vx_mps,vy_mps,vz_mps,weight\n")
            for i in range(pos.shape[0]):
                row = (*pos[i], *vel[i], w[i])
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_snapshot(path, temperature_label: float) -> CloudState:
    """Read a snapshot CSV written by :meth:`CloudState.write_snapshot`."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return CloudState(positions=data[:, 0:3], velocities=data[:, 3:6],
                      weights=data[:, 6], temperature_label=temperature_label)


# ----------------------------------------------------------------------
# equilibrium sampling
# ----------------------------------------------------------------------

def _atom_generator(seed: int, tag: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), tag, index)))


class _Mixture:
    """Precompiled diagonal-Gaussian proposal mixture."""

    def __init__(self, comps):
        total = sum(c.weight for c in comps)
        self.mus = np.array([c.mean for c in comps])
        self.sigs = np.array([c.sigma for c in comps])
        self.lognorm = np.array([
            math.log(c.weight / total) - 1.5 * math.log(2.0 * math.pi)
            - math.log(c.sigma[0] * c.sigma[1] * c.sigma[2]) for c in comps])
        self.cum = np.cumsum([c.weight / total for c in comps])

    def component_index(self, u: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.cum, u, side="right")
        return np.minimum(idx, len(self.cum) - 1)

    def draw(self, idx: np.ndarray, z: np.ndarray) -> np.ndarray:
        return self.mus[idx] + self.sigs[idx] * z

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        logs = np.empty((len(self.cum), x.shape[0]))
        for c in range(len(self.cum)):
            mu = self.mus[c]
            sig = self.sigs[c]
            z2 = (((x[:, 0] - mu[0]) / sig[0]) ** 2
                  + ((x[:, 1] - mu[1]) / sig[1]) ** 2
                  + ((x[:, 2] - mu[2]) / sig[2]) ** 2)
            logs[c] = self.lognorm[c] - 0.5 * z2
        if logs.shape[0] == 1:
            return logs[0]
        top = np.max(logs, axis=0)
        return top + np.log(np.sum(np.exp(logs - top), axis=0))


def sample_thermal_cloud(n_sim: int, n_phys: float, temperature: float,
                         potential, rng_seed: int, *,
                         burn_in: int = BURN_IN_SWEEPS,
                         initial_step: float = 1e-5,
                         _tag: int = _TAG_SAMPLE,
                         _weights: np.ndarray | None = None) -> CloudState:
    """Sample ``n_sim`` atoms from the Boltzmann distribution of ``potential``.

    Positions come from per-atom Metropolis chains (random-walk steps with an
    auto-tuned scale, mixed with global independence proposals when the
    potential provides a proposal mixture); velocities are Maxwell-Boltzmann.
    Each simulated atom carries weight ``n_phys / n_sim``.

    Raises :class:`SamplerConvergenceError` if the post-adaptation random-walk
    acceptance rate leaves [0.1, 0.9].
    """
    if n_sim < 1:
        raise ValueError("need at least one simulated atom")
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    kt = CODATA.k_B * temperature
    sigma_v = math.sqrt(kt / CODATA.m_Rb87)

    comps = []
    if hasattr(potential, "proposal_components"):
        comps = list(potential.proposal_components(temperature))
    mixture = _Mixture(comps) if comps else None
    p_ind = _INDEPENDENCE_FRACTION if mixture else 0.0

    energy = potential.energy if hasattr(potential, "energy") else \
        (lambda x: np.apply_along_axis(potential, 1, x))
    inv_kt = 1.0 / kt

    if comps:
        base_scale = 2.4 * min(float(np.exp(np.mean(np.log(c.sigma)))) for c in comps)
    else:
        base_scale = initial_step

    positions = np.empty((n_sim, 3))
    velocities = np.empty((n_sim, 3))
    acc_total = 0
    prop_total = 0

    # adapt over the first three quarters of the burn-in, then freeze the
    # scale and measure the acceptance diagnostic on the remainder
    adapt_stop = min(_ADAPT_STOP, (3 * burn_in) // 4)
    adapt_marks = set(range(_ADAPT_EVERY - 1, adapt_stop, _ADAPT_EVERY))
    with np.errstate(divide="ignore"):
        for lo in range(0, n_sim, _BLOCK):
            hi = min(lo + _BLOCK, n_sim)
            b = hi - lo
            u_all = np.empty((burn_in, b, 3))
            z_all = np.empty((burn_in, b, 3))
            u_init = np.empty(b)
            z_init = np.empty((b, 3))
            z_vel = np.empty((b, 3))
            for j in range(b):
                g = _atom_generator(rng_seed, _tag, lo + j)
                u_all[:, j, :] = g.random((burn_in, 3))
                z_all[:, j, :] = g.standard_normal((burn_in, 3))
                u_init[j] = g.random()
                z_init[j] = g.standard_normal(3)
                z_vel[j] = g.standard_normal(3)

            log_u_acc = np.log(u_all[:, :, 2])
            ind_all = u_all[:, :, 0] < p_ind
            comp_idx = mixture.component_index(u_all[:, :, 1].ravel()).reshape(
                burn_in, b) if mixture else None

            if mixture:
                x = mixture.draw(mixture.component_index(u_init), z_init)
                logq_x = mixture.logpdf(x)
            else:
                x = initial_step * z_init
                logq_x = None
            logpi_x = -energy(x) * inv_kt

            scale = np.full(b, base_scale)
            win_acc = np.zeros(b)
            win_prop = np.zeros(b)
            tail_acc = 0
            tail_prop = 0

            for s in range(burn_in):
                z = z_all[s]
                ind = ind_all[s]
                prop = x + scale[:, None] * z
                if mixture:
                    prop_ind = mixture.draw(comp_idx[s], z)
                    prop = np.where(ind[:, None], prop_ind, prop)
                logpi_p = -energy(prop) * inv_kt
                log_alpha = logpi_p - logpi_x
                if mixture:
                    logq_p = mixture.logpdf(prop)
                    log_alpha += np.where(ind, logq_x - logq_p, 0.0)
                accept = log_u_acc[s] < log_alpha
                x = np.where(accept[:, None], prop, x)
                logpi_x = np.where(accept, logpi_p, logpi_x)
                if mixture:
                    logq_x = np.where(accept, logq_p, logq_x)

                rw_acc = accept & ~ind
                if s < adapt_stop:
                    win_acc += rw_acc
                    win_prop += ~ind
                    if s in adapt_marks:
                        rate = win_acc / np.maximum(win_prop, 1.0)
                        scale *= np.exp(0.8 * (rate - 0.5))
                        np.clip(scale, 1e-10, 1e-2, out=scale)
                        win_acc[:] = 0.0
                        win_prop[:] = 0.0
                else:
                    tail_acc += int(rw_acc.sum())
                    tail_prop += int((~ind).sum())

            positions[lo:hi] = x
            velocities[lo:hi] = sigma_v * z_vel
            acc_total += tail_acc
            prop_total += tail_prop

    if prop_total > 0:
        rate = acc_total / prop_total
        if not 0.1 <= rate <= 0.9:
            raise SamplerConvergenceError(
                f"random-walk acceptance {rate:.3f} outside [0.1, 0.9] after adaptation")

    if _weights is None:
        weights = np.full(n_sim, float(n_phys) / n_sim)
    else:
        weights = np.asarray(_weights, dtype=float).copy()
    return CloudState(positions=positions, velocities=velocities,
                      weights=weights, temperature_label=temperature)


def resample_equilibrium(cloud: CloudState, new_potential, t_eff: float,
                         rng_seed: int) -> CloudState:
    """Redraw phase space from the Boltzmann distribution in ``new_potential``.

    Models instantaneous thermalization after a potential change; the
    collisionless dynamics cannot thermalize on their own. Keeps the alive
    atoms' weights, so the total represented atom number is preserved.
    """
    if cloud.n_alive == 0:
        raise ValueError("cannot resample an empty cloud")
    _, _, w = cloud.alive_arrays()
    return sample_thermal_cloud(
        int(w.shape[0]), float(w.sum()), t_eff, new_potential, rng_seed,
        _tag=_TAG_RESAMPLE, _weights=w)


def sample_harmonic_cloud(n_sim: int, n_phys: float, temperature: float,
                          trap: TrapConfig, rng_seed: int) -> CloudState:
    """Directly sample the exact Gaussian equilibrium of a harmonic trap.

    Single-stream vectorized sampler; used as the brute-force oracle where
    large sample counts are needed.
    """
    if n_sim < 1:
        raise ValueError("need at least one simulated atom")
    kt = CODATA.k_B * temperature
    m = CODATA.m_Rb87
    sigma = np.array([math.sqrt(kt / (m * trap.omega_x ** 2)),
                      math.sqrt(kt / (m * trap.omega_r ** 2)),
                      math.sqrt(kt / (m * trap.omega_r ** 2))])
    g = np.random.default_rng(np.random.SeedSequence(entropy=(int(rng_seed), _TAG_DIRECT)))
    positions = np.asarray(trap.center) + sigma * g.standard_normal((n_sim, 3))
    velocities = math.sqrt(kt / m) * g.standard_normal((n_sim, 3))
    weights = np.full(n_sim, float(n_phys) / n_sim)
    return CloudState(positions=positions, velocities=velocities,
                      weights=weights, temperature_label=temperature)


# ----------------------------------------------------------------------
# trajectory integration
# ----------------------------------------------------------------------

def max_time_step(potential) -> float:
    """Largest dt the integrator contract allows: a twentieth of the stiffest period."""
    omega = getattr(potential, "stiffest_omega", None)
    if omega is None or omega <= 0.0:
        return math.inf
    return (2.0 * math.pi / omega) / 20.0


def leapfrog(positions: np.ndarray, velocities: np.ndarray, potential,
             dt: float, steps: int):
    """Velocity-Verlet propagation of an (n, 3) ensemble; returns new arrays."""
    m = CODATA.m_Rb87
    x = np.array(positions, dtype=float, copy=True)
    v = np.array(velocities, dtype=float, copy=True)
    a = potential.force(x) / m
    half = 0.5 * dt
    for _ in range(steps):
        v += half * a
        x += dt * v
        a = potential.force(x) / m
        v += half * a
    return x, v


def integrate_trajectory(atom: AtomRecord, potential, dt: float, steps: int) -> AtomRecord:
    """Propagate a single atom with the symplectic velocity-Verlet update.

    ``dt`` must not exceed a twentieth of the stiffest oscillation period of
    the potential; deterministic for fixed inputs.
    """
    limit = max_time_step(potential)
    if dt > limit * (1.0 + 1e-12):
        raise ValueError(f"dt={dt:g} s exceeds the integrator limit {limit:g} s")
    x, v = leapfrog(atom.position[None, :], atom.velocity[None, :], potential, dt, steps)
    return AtomRecord(position=x[0], velocity=v[0], alive=atom.alive, weight=atom.weight)


def effective_temperature_after_ramp(t0: float, dimple_depth: float, mode: str,
                                     factor: float = 1.3,
                                     reference_depth: float = REFERENCE_DIMPLE_DEPTH) -> float:
    """Heuristic temperature after adiabatically ramping on a dimple.

    mode "none" returns ``t0``. mode "adiabatic-heuristic" scales ``t0`` by
    the configured compression factor, interpolated linearly in the dimple
    depth up to ``reference_depth`` (full factor at the reference depth,
    unchanged at zero depth).
    """
    if t0 <= 0.0:
        raise ValueError("temperature must be positive")
    if mode == "none":
        return t0
    if mode == "adiabatic-heuristic":
        if factor < 1.0:
            raise ValueError("compression factor must be >= 1")
        if dimple_depth <= 0.0:
            return t0
        frac = min(dimple_depth / reference_depth, 1.0)
        return t0 * (1.0 + (factor - 1.0) * frac)
    raise ValueError(f"unknown heating mode: {mode!r}")
