"""ECEF points, circular satellite orbits and local tangent frames.

The Earth is a sphere of radius :data:`EARTH_RADIUS`; there is no Earth
rotation, no ellipsoid and no relativistic correction. All angles are radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometry, InvalidScenario

EARTH_RADIUS = 6.371e6
GPS_ORBIT_RADIUS = 2.656e7
GPS_INCLINATION = math.radians(55.0)
GPS_PERIOD = 43_082.0

# ``range`` is deliberately left out so star-imports keep the builtin.
__all__ = [
    "EARTH_RADIUS",
    "GPS_ORBIT_RADIUS",
    "GPS_INCLINATION",
    "GPS_PERIOD",
    "EcefPoint",
    "CircularOrbit",
    "SatelliteTable",
    "orbit_position",
    "range_between",
    "unit_vector",
    "enu_basis",
    "ecef_to_enu",
    "enu_to_ecef",
    "elevation",
    "geodetic_to_ecef",
]


@dataclass(frozen=True)
class EcefPoint:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)):
            raise ValueError(f"non-finite ECEF component in {self!r}")

    @property
    def array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def from_array(cls, v) -> "EcefPoint":
        x, y, z = (float(c) for c in v)
        return cls(x, y, z)

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def __add__(self, other):
        o = np.asarray(other.array if isinstance(other, EcefPoint) else other, dtype=float)
        return EcefPoint.from_array(self.array + o)

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.z]


@dataclass(frozen=True)
class CircularOrbit:
    radius: float = GPS_ORBIT_RADIUS
    inclination: float = GPS_INCLINATION
    raan: float = 0.0
    phase0: float = 0.0
    angular_rate: float = 2.0 * math.pi / GPS_PERIOD

    def __post_init__(self):
        if not self.radius > EARTH_RADIUS:
            raise InvalidScenario(f"orbit radius {self.radius} m is inside the Earth")
        if not self.angular_rate > 0:
            raise InvalidScenario("orbit angular_rate must be positive")


def orbit_position(orbit: CircularOrbit, t: float) -> EcefPoint:
    """Satellite position on ``orbit`` at ``t`` seconds after the orbit epoch."""
    if not math.isfinite(t):
        raise ValueError("t must be finite")
    theta = orbit.phase0 + orbit.angular_rate * t
    # Closed form of Rz(raan) @ Rx(incl) @ (r cos th, r sin th, 0).
    ct, st = math.cos(theta), math.sin(theta)
    ci, si = math.cos(orbit.inclination), math.sin(orbit.inclination)
    co, so = math.cos(orbit.raan), math.sin(orbit.raan)
    r = orbit.radius
    return EcefPoint(
        r * (co * ct - so * ci * st),
        r * (so * ct + co * ci * st),
        r * (si * st),
    )


def range_between(a: EcefPoint, b: EcefPoint) -> float:
    return math.dist((a.x, a.y, a.z), (b.x, b.y, b.z))


def unit_vector(frm: EcefPoint, to: EcefPoint) -> np.ndarray:
    d = to.array - frm.array
    n = float(np.linalg.norm(d))
    if n == 0.0:
        raise DegenerateGeometry("unit vector between identical points")
    return d / n


def enu_basis(origin: EcefPoint) -> np.ndarray:
    """Rows are the east, north and up unit vectors at ``origin`` (spherical Earth)."""
    p = origin.array
    n = np.linalg.norm(p)
    if n == 0.0:
        raise DegenerateGeometry("local frame undefined at the Earth's centre")
    up = p / n
    east = np.cross([0.0, 0.0, 1.0], up)
    if np.linalg.norm(east) < 1e-12:
        east = np.array([0.0, 1.0, 0.0])
    east /= np.linalg.norm(east)
    north = np.cross(up, east)
    return np.vstack([east, north, up])


def ecef_to_enu(point: EcefPoint, origin: EcefPoint) -> np.ndarray:
    return enu_basis(origin) @ (point.array - origin.array)


def enu_to_ecef(enu, origin: EcefPoint) -> EcefPoint:
    return EcefPoint.from_array(origin.array + enu_basis(origin).T @ np.asarray(enu, float))


def elevation(sat: EcefPoint, rx: EcefPoint) -> float:
    up = enu_basis(rx)[2]
    los = unit_vector(rx, sat)
    return math.asin(max(-1.0, min(1.0, float(los @ up))))


def geodetic_to_ecef(lat: float, lon: float, height: float = 0.0) -> EcefPoint:
    r = EARTH_RADIUS + height
    return EcefPoint(
        r * math.cos(lat) * math.cos(lon),
        r * math.cos(lat) * math.sin(lon),
        r * math.sin(lat),
    )


class SatelliteTable:
    """Satellite positions by svid: fixed points or circular orbits.

    Orbit time is ``epoch_ms / 1000`` seconds; epoch 0 is the orbit epoch.
    """

    def __init__(self, entries=None):
        self._entries: dict[int, CircularOrbit | EcefPoint] = dict(entries or {})

    def __contains__(self, svid) -> bool:
        return svid in self._entries

    def __iter__(self):
        return iter(sorted(self._entries))

    def __len__(self):
        return len(self._entries)

    def entry(self, svid: int):
        return self._entries[svid]

    def position(self, svid: int, epoch_ms: float) -> EcefPoint:
        e = self._entries[svid]
        if isinstance(e, EcefPoint):
            return e
        return orbit_position(e, epoch_ms / 1000.0)

    def at(self, epoch_ms: float) -> dict[int, EcefPoint]:
        return {s: self.position(s, epoch_ms) for s in self}


# Public alias. Bound last so nothing above sees the builtin shadowed.
range = range_between  # noqa: A001
