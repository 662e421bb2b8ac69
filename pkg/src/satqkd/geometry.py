"""Pass geometry: slant range and elevation time series for one satellite pass."""

from __future__ import annotations

import csv
import decimal
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

EARTH_RADIUS_M = 6371e3
GM_EARTH = 3.986004418e14
OPERATIONAL_MIN_ELEVATION_RAD = math.radians(20.0)
EPHEMERIS_HEADER = ("t_s", "elevation_deg", "range_m")

_UNIFORM_TOL_S = 1e-9


class GeometryError(ValueError):
    """Invalid pass geometry or an invariant violated by a pass profile."""


class EphemerisParseError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class PassSample:
    t: float
    range_m: float
    elevation_rad: float


class PassProfile:
    """Uniformly sampled (t, range, elevation) series.

    Stored column-wise; the arrays are read-only so a profile can be shared
    between threads.
    """

    __slots__ = ("_t", "_range", "_elev", "_step")

    def __init__(self, t, range_m, elevation_rad, step_s):
        t = np.array(t, dtype=np.float64)
        rng = np.array(range_m, dtype=np.float64)
        el = np.array(elevation_rad, dtype=np.float64)
        if not (t.shape == rng.shape == el.shape) or t.ndim != 1:
            raise GeometryError("t, range_m and elevation_rad must be 1-D arrays of equal length")
        step_s = float(step_s)
        if not step_s > 0:
            raise GeometryError("step_s must be positive")
        if t.size:
            if not np.all(rng > 0):
                raise GeometryError("range_m > 0 violated")
            if not np.all((el > 0) & (el <= math.pi / 2)):
                raise GeometryError("0 < elevation_rad <= pi/2 violated")
        if t.size > 1:
            dt = np.diff(t)
            if not np.all(dt > 0):
                raise GeometryError("samples must be strictly increasing in t")
            if np.max(np.abs(dt - step_s)) > _UNIFORM_TOL_S:
                raise GeometryError(f"sample spacing differs from step_s={step_s} by more than 1e-9 s")
        for a in (t, rng, el):
            a.flags.writeable = False
        self._t, self._range, self._elev, self._step = t, rng, el, step_s

    @property
    def t(self):
        return self._t

    @property
    def range_m(self):
        return self._range

    @property
    def elevation_rad(self):
        return self._elev

    @property
    def step_s(self):
        return self._step

    @property
    def samples(self):
        return [PassSample(float(a), float(b), float(c))
                for a, b, c in zip(self._t, self._range, self._elev)]

    @property
    def duration_s(self):
        return float(self._t[-1] - self._t[0]) if self._t.size else 0.0

    def __len__(self):
        return self._t.size

    def __getitem__(self, i):
        return PassSample(float(self._t[i]), float(self._range[i]), float(self._elev[i]))

    def __eq__(self, other):
        if not isinstance(other, PassProfile):
            return NotImplemented
        return (self._step == other._step
                and np.array_equal(self._t, other._t)
                and np.array_equal(self._range, other._range)
                and np.array_equal(self._elev, other._elev))

    def __repr__(self):
        return f"PassProfile(n={len(self)}, step_s={self._step}, duration_s={self.duration_s})"

    def subset(self, mask):
        """Profile restricted to a contiguous boolean mask."""
        idx = np.nonzero(mask)[0]
        if idx.size and np.any(np.diff(idx) != 1):
            raise GeometryError("subset mask must select a contiguous block")
        return PassProfile(self._t[idx], self._range[idx], self._elev[idx], self._step)


def slant_range(elevation_rad, altitude_m, earth_radius_m=EARTH_RADIUS_M):
    """Distance from a ground station to a satellite at ``altitude_m`` seen at ``elevation_rad``."""
    s = np.sin(elevation_rad)
    re = earth_radius_m
    return np.sqrt(re * re * s * s + altitude_m * altitude_m + 2.0 * re * altitude_m) - re * s


def _central_angle(elevation_rad, radius_ratio):
    # earth-centre angle between station and sub-satellite point
    return np.arccos(radius_ratio * np.cos(elevation_rad)) - elevation_rad


def synthetic_pass(orbit_altitude_m, peak_elevation_rad, min_elevation_rad, step_s=1.0,
                   earth_radius_m=EARTH_RADIUS_M):
    """Circular-orbit pass with the station offset from the ground track.

    The sub-satellite point moves along a great circle at the Keplerian
    angular rate; earth rotation is ignored. Samples sit at ``k * step_s``
    from the culmination so the series is symmetric about the peak, and all
    samples with elevation >= ``min_elevation_rad`` are kept.
    """
    if not 2e5 <= orbit_altitude_m <= 2e6:
        raise GeometryError("orbit_altitude_m must lie in [2e5, 2e6]")
    if not 0 < min_elevation_rad < peak_elevation_rad <= math.pi / 2:
        raise GeometryError("need 0 < min_elevation_rad < peak_elevation_rad <= pi/2")
    if not step_s > 0:
        raise GeometryError("step_s must be positive")

    r = earth_radius_m + orbit_altitude_m
    ratio = earth_radius_m / r
    beta = _central_angle(peak_elevation_rad, ratio)
    psi_edge = _central_angle(min_elevation_rad, ratio)
    if not psi_edge > beta:
        raise GeometryError("peak elevation unreachable for this altitude and elevation mask")
    cos_phi_max = math.cos(psi_edge) / math.cos(beta)
    if not -1.0 <= cos_phi_max <= 1.0:
        raise GeometryError("peak elevation unreachable for this altitude and elevation mask")
    omega = math.sqrt(GM_EARTH / r ** 3)
    half = math.acos(cos_phi_max) / omega
    kmax = int(math.floor(half / step_s + 1e-12))

    k = np.abs(np.arange(-kmax, kmax + 1, dtype=np.float64))
    cos_psi = math.cos(beta) * np.cos(omega * k * step_s)
    psi = np.arccos(np.clip(cos_psi, -1.0, 1.0))
    elev = np.arctan2(np.cos(psi) - ratio, np.sin(psi))
    elev = np.minimum(elev, math.pi / 2)
    rng = slant_range(elev, orbit_altitude_m, earth_radius_m)
    t = np.arange(2 * kmax + 1, dtype=np.float64) * step_s
    return PassProfile(t, rng, elev, step_s)


def pass_duration(orbit_altitude_m, peak_elevation_rad, min_elevation_rad,
                  earth_radius_m=EARTH_RADIUS_M):
    """Continuous time the satellite spends above ``min_elevation_rad``."""
    r = earth_radius_m + orbit_altitude_m
    ratio = earth_radius_m / r
    beta = _central_angle(peak_elevation_rad, ratio)
    psi_edge = _central_angle(min_elevation_rad, ratio)
    omega = math.sqrt(GM_EARTH / r ** 3)
    return 2.0 * math.acos(math.cos(psi_edge) / math.cos(beta)) / omega


def reference_pass(step_s=1.0, duration_s=220.0, orbit_altitude_m=500e3,
                   peak_elevation_deg=54.0):
    """Synthetic stand-in for the 220 s, 54 deg culmination pass used throughout the tests.

    The elevation mask is solved so the pass lasts ``duration_s``.
    """
    from scipy.optimize import brentq

    peak = math.radians(peak_elevation_deg)
    lo = math.radians(0.5)
    if pass_duration(orbit_altitude_m, peak, lo) < duration_s:
        raise GeometryError("requested duration exceeds the horizon-to-horizon pass")
    mask = brentq(lambda e: pass_duration(orbit_altitude_m, peak, e) - duration_s,
                  lo, peak - 1e-9, xtol=1e-13)
    # nudge below the root so the endpoint samples at +-duration/2 survive
    return synthetic_pass(orbit_altitude_m, peak, mask - 1e-9, step_s)


def clamp_elevation(profile, min_elevation_rad=OPERATIONAL_MIN_ELEVATION_RAD):
    """Drop samples below the operational elevation floor.

    A pass has a single culmination, so the kept samples are contiguous.
    """
    return profile.subset(profile.elevation_rad >= min_elevation_rad)


# ---------------------------------------------------------------------------
# CSV ephemeris

_PI = decimal.Decimal("3.14159265358979323846264338327950288419716939937510582097494")
_DEC = decimal.Context(prec=60)


def _deg_to_rad(text):
    """Correctly rounded radians of a decimal-degree string."""
    return float(_DEC.divide(_DEC.multiply(decimal.Decimal(text.strip()), _PI), 180))


def _degrees_exact(x):
    """Shortest decimal degrees string that converts back to exactly ``x``."""
    exact = _DEC.divide(_DEC.multiply(decimal.Decimal(x), 180), _PI)
    for digits in range(15, 30):
        text = format(decimal.Context(prec=digits).plus(exact), "f")
        if _deg_to_rad(text) == x:
            return text
    return format(exact, "f")


def write_ephemeris(profile, path):
    buf = io.StringIO()
    buf.write(",".join(EPHEMERIS_HEADER) + "\n")
    for t, r, e in zip(profile.t, profile.range_m, profile.elevation_rad):
        buf.write(f"{float(t)!r},{_degrees_exact(float(e))},{float(r)!r}\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="\n")


def load_ephemeris(path):
    """Read ``t_s,elevation_deg,range_m`` rows; resample non-uniform input linearly."""
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = None
        for lineno, row in enumerate(reader, start=1):
            if not row or row[0].startswith("#"):
                continue
            if header is None:
                header = tuple(c.strip() for c in row)
                if header != EPHEMERIS_HEADER:
                    raise EphemerisParseError(
                        f"expected header {','.join(EPHEMERIS_HEADER)}, got {','.join(header)}", lineno)
                continue
            if len(row) != 3:
                raise EphemerisParseError(f"expected 3 fields, got {len(row)}", lineno)
            try:
                rows.append((lineno, float(row[0]), _deg_to_rad(row[1]), float(row[2])))
            except (ValueError, decimal.InvalidOperation) as exc:
                raise EphemerisParseError(str(exc), lineno) from None
    if header is None:
        raise EphemerisParseError("empty file: missing header", 1)
    if not rows:
        return PassProfile([], [], [], 1.0)

    for lineno, _, el, rng in rows:
        if not 0 < el <= math.pi / 2:
            raise GeometryError(f"line {lineno}: 0 < elevation_rad <= pi/2 violated "
                                f"(elevation_deg={math.degrees(el)})")
        if not rng > 0:
            raise GeometryError(f"line {lineno}: range_m > 0 violated (range_m={rng})")
    t = np.array([r[1] for r in rows])
    el = np.array([r[2] for r in rows])
    rng = np.array([r[3] for r in rows])
    if t.size > 1 and not np.all(np.diff(t) > 0):
        bad = int(np.nonzero(np.diff(t) <= 0)[0][0]) + 1
        raise GeometryError(f"line {rows[bad][0]}: samples strictly increasing in t violated")
    t = t - t[0]
    if t.size == 1:
        return PassProfile(t, rng, el, 1.0)

    dt = np.diff(t)
    step = float(dt[0])
    if np.max(np.abs(dt - step)) <= _UNIFORM_TOL_S:
        return PassProfile(t, rng, el, step)

    step = float(dt.min())
    n = int(math.floor(t[-1] / step + 1e-9)) + 1
    grid = np.arange(n) * step
    return PassProfile(grid, np.interp(grid, t, rng), np.interp(grid, t, el), step)
