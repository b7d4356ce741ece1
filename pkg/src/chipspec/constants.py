"""Physical constants (CODATA 2018), fixed at build time.

All values are SI. ``H_PLANCK`` is stored as ``2*pi*HBAR`` so the two are
related exactly in floating point, not merely to rounding.
"""

from dataclasses import dataclass
import math

HBAR = 1.054_571_817e-34      # J s
H_PLANCK = 2.0 * math.pi * HBAR  # J s, exactly 2*pi*hbar as stored
K_B = 1.380_649e-23           # J/K
MU_B = 9.274_010_0783e-24     # J/T
M_RB87 = 1.443_160_60e-25     # kg, rubidium-87 atomic mass


@dataclass(frozen=True)
class PhysicalConstants:
    """Bundle of the constants the rate and geometry formulas consume."""

    hbar: float = HBAR
    h: float = H_PLANCK
    k_B: float = K_B
    mu_B: float = MU_B
    m_Rb87: float = M_RB87

    def __post_init__(self):
        if self.h != 2.0 * math.pi * self.hbar:
            raise ValueError("h must equal 2*pi*hbar exactly as stored")
        for name in ("hbar", "h", "k_B", "mu_B", "m_Rb87"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")


CODATA = PhysicalConstants()
