"""Desk-scale simulator and analysis toolkit for photoionization spectroscopy
of magnetically chip-trapped ultracold atoms."""

__version__ = "0.1.0"

from .constants import CODATA, PhysicalConstants
from .physics import (Apparatus, BeamConfig, BeamRole, HyperfineSpectrum,
                      RateModel, TrapConfig, beam_intensity, default_apparatus,
                      diode_beam, dipole_potential, fiber_beam,
                      ionization_branching, light_shift, line_density_thermal,
                      magnetic_potential, resonance_shell, scattering_rate,
                      two_photon_rate)
from .potentials import (CompositePotential, GaussianBeamPotential,
                         HarmonicPotential, make_total_potential)
from .ensemble import (AtomRecord, CloudState, SamplerConvergenceError,
                       effective_temperature_after_ramp, integrate_trajectory,
                       resample_equilibrium, sample_harmonic_cloud,
                       sample_thermal_cloud)
from .series import CountTimeSeries, read_series_csv, write_series_csv
from .experiment import (DecayProtocol, MicrowaveScanProtocol,
                         OpticalScanProtocol, apply_chopping, detect,
                         expected_microwave_spectrum, expected_optical_spectrum,
                         run_decay, run_microwave_scan, run_optical_scan,
                         zeeman_detuning)
from .analysis import (FitInputError, FitModel, FitReport, PeakSeedingError,
                       fit_double_exponential, fit_exponential,
                       fit_multi_gaussian, fit_temperature, levenberg_marquardt,
                       linear_fit)
from .config import ConfigError, RunConfig, parse_config, serialize_config

__all__ = [name for name in dir() if not name.startswith("_")]
