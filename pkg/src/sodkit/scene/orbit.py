"""Circular two-body orbits in low Earth orbit.

A satellite is parameterized by altitude, inclination, right ascension of
the ascending node, and an in-plane phase angle. Position and velocity at
time t follow circular Keplerian motion: the orbital radius is constant
and the angular rate is sqrt(mu / r^3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

R_EARTH_KM = 6371.0
MU_EARTH_KM3_S2 = 398600.4418


@dataclass(frozen=True)
class OrbitConfig:
    altitude_km: float
    inclination: float
    raan: float
    phase: float

    @property
    def radius_km(self) -> float:
        return R_EARTH_KM + self.altitude_km

    @property
    def angular_rate(self) -> float:
        r = self.radius_km
        return math.sqrt(MU_EARTH_KM3_S2 / (r * r * r))

    @staticmethod
    def sample(rng: np.random.Generator,
               altitude_range_km: tuple[float, float] = (500.0, 600.0)) -> "OrbitConfig":
        return OrbitConfig(
            altitude_km=float(rng.uniform(*altitude_range_km)),
            inclination=float(rng.uniform(0.0, math.pi)),
            raan=float(rng.uniform(0.0, 2.0 * math.pi)),
            phase=float(rng.uniform(0.0, 2.0 * math.pi)),
        )


def orbital_period(orbit: OrbitConfig) -> float:
    """Seconds per revolution: 2*pi*sqrt(r^3 / mu)."""
    r = orbit.radius_km
    return 2.0 * math.pi * math.sqrt(r * r * r / MU_EARTH_KM3_S2)


def _plane_basis(orbit: OrbitConfig) -> tuple[np.ndarray, np.ndarray]:
    """Unit vectors spanning the orbital plane in the world frame.

    p points at the ascending node, q is 90 degrees ahead in the direction
    of motion; both follow from rotating the equatorial frame by RAAN about
    z and by inclination about the node line.
    """
    cos_o, sin_o = math.cos(orbit.raan), math.sin(orbit.raan)
    cos_i, sin_i = math.cos(orbit.inclination), math.sin(orbit.inclination)
    p = np.array([cos_o, sin_o, 0.0])
    q = np.array([-sin_o * cos_i, cos_o * cos_i, sin_i])
    return p, q


def propagate(orbit: OrbitConfig, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Position (km) and velocity (km/s) at time t seconds."""
    if t < 0:
        raise ValueError("propagation time must be non-negative")
    p, q = _plane_basis(orbit)
    r = orbit.radius_km
    omega = orbit.angular_rate
    u = orbit.phase + omega * t
    position = r * (math.cos(u) * p + math.sin(u) * q)
    velocity = r * omega * (-math.sin(u) * p + math.cos(u) * q)
    return position, velocity
