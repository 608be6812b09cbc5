"""Geometry, grids and deterministic random streams shared by all modules.

Latitudes are colatitude-style angles in ``[0, pi]`` and longitudes live in
``[0, 2*pi]``.  Longitude differences are never wrapped.

Random numbers come from a counter-based Philox4x32-10 generator.  A stream
is addressed by ``(master, k, n, branch)``: the 64-bit master seed is the
Philox key and the remaining path components occupy three of the four
counter words, so distinct paths read disjoint counter ranges and any
subset of draws can be regenerated without touching the others.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "KernelError",
    "ProductGrid",
    "RandomStream",
    "SeedSpec",
    "angle_difference",
    "build_grid",
    "check_latitude",
    "check_longitude",
    "derive_stream",
    "philox4x32",
    "philox_normals",
]

TWO_PI = 2.0 * math.pi


class KernelError(ValueError):
    """A coefficient kernel or covariance is not a valid covariance."""


def check_latitude(phi):
    """Return ``phi`` as float, rejecting values outside ``[0, pi]``."""
    phi = float(phi)
    if not 0.0 <= phi <= math.pi:
        raise ValueError(f"latitude {phi!r} outside [0, pi]")
    return phi


def check_longitude(theta):
    """Return ``theta`` as float, rejecting values outside ``[0, 2*pi]``."""
    theta = float(theta)
    if not 0.0 <= theta <= TWO_PI:
        raise ValueError(f"longitude {theta!r} outside [0, 2*pi]")
    return theta


def angle_difference(theta1, theta2):
    """Longitude difference ``theta1 - theta2`` without wrapping.

    The result lies in ``[-2*pi, 2*pi]``.
    """
    return check_longitude(theta1) - check_longitude(theta2)


def _strictly_increasing(name, values):
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    if arr.size > 1 and np.any(np.diff(arr) <= 0):
        raise ValueError(f"{name} must be strictly increasing")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ProductGrid:
    """Latitude x longitude x time lattice for an ``m``-variate field."""

    lats: np.ndarray
    lons: np.ndarray
    times: np.ndarray
    m: int = 1

    def __post_init__(self):
        lats = _strictly_increasing("lats", self.lats)
        lons = _strictly_increasing("lons", self.lons)
        times = _strictly_increasing("times", self.times)
        if lats[0] < 0 or lats[-1] > math.pi:
            raise ValueError("lats must lie in [0, pi]")
        if lons[0] < 0 or lons[-1] > TWO_PI:
            raise ValueError("lons must lie in [0, 2*pi]")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"component count m must be >= 1, got {self.m!r}")
        object.__setattr__(self, "lats", lats)
        object.__setattr__(self, "lons", lons)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "m", int(self.m))

    @property
    def shape(self):
        """``(m, n_lat, n_lon, n_time)``."""
        return (self.m, self.lats.size, self.lons.size, self.times.size)

    @property
    def temporal(self):
        return self.times.size > 1

    def is_uniform_lons(self):
        """True if longitudes are ``2*pi*j/n`` for ``j = 0..n-1``."""
        n = self.lons.size
        return np.allclose(self.lons, TWO_PI * np.arange(n) / n, rtol=0, atol=1e-12)

    def to_dict(self):
        return {
            "m": self.m,
            "lats": self.lats.tolist(),
            "lons": self.lons.tolist(),
            "times": self.times.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["lats"]), np.asarray(d["lons"]),
                   np.asarray(d["times"]), int(d["m"]))


def build_grid(lat_count, lon_count, time_count=1, m=1):
    """Uniform product grid.

    Latitudes include both poles, longitudes exclude ``2*pi`` (it is the same
    meridian as 0) and times are the integer lattice ``0..time_count-1``.
    """
    for name, value in (("lat_count", lat_count), ("lon_count", lon_count),
                        ("time_count", time_count), ("m", m)):
        if int(value) != value or value < 1:
            raise ValueError(f"{name} must be a positive integer, got {value!r}")
    if lat_count == 1:
        lats = np.zeros(1)
    else:
        lats = np.linspace(0.0, math.pi, int(lat_count))
        lats[-1] = math.pi
    lons = TWO_PI * np.arange(int(lon_count)) / int(lon_count)
    times = np.arange(int(time_count), dtype=float)
    return ProductGrid(lats, lons, times, int(m))


# ---------------------------------------------------------------------------
# Philox4x32-10

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)


def philox4x32(counter, key, rounds=10):
    """Vectorized Philox4x32 block function.

    Parameters
    ----------
    counter : tuple of four uint32 arrays (broadcastable)
    key : pair of python ints < 2**32

    Returns
    -------
    tuple of four uint64 arrays holding 32-bit outputs
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK32 for c in counter)
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    for _ in range(rounds):
        p0 = c0 * _M0
        p1 = c2 * _M1
        c0, c1, c2, c3 = (
            (p1 >> _SHIFT32) ^ c1 ^ np.uint64(k0),
            p1 & _MASK32,
            (p0 >> _SHIFT32) ^ c3 ^ np.uint64(k1),
            p0 & _MASK32,
        )
        k0 = (k0 + _W0) & 0xFFFFFFFF
        k1 = (k1 + _W1) & 0xFFFFFFFF
    return c0, c1, c2, c3


def _split_master(master):
    master = int(master)
    if not 0 <= master < 2**64:
        raise ValueError(f"master seed must be a 64-bit unsigned integer, got {master!r}")
    return master & 0xFFFFFFFF, master >> 32


def _to_unit(hi, lo):
    # 53-bit double in [0, 1)
    return ((hi >> np.uint64(5)).astype(np.float64) * 67108864.0
            + (lo >> np.uint64(6)).astype(np.float64)) / 9007199254740992.0


def philox_normals(master, ks, n, branch, start, count):
    """Standard normal draws ``start .. start+count-1`` of many streams at once.

    Returns an array of shape ``(len(ks), count)``; row ``r`` is the slice of
    stream ``(master, ks[r], n, branch)``.  Each Philox block yields two
    normals via Box-Muller, so the values do not depend on how a stream is
    consumed in pieces.
    """
    ks = np.atleast_1d(np.asarray(ks, dtype=np.uint64))
    key = _split_master(master)
    if count <= 0:
        return np.zeros((ks.size, 0))
    first = start // 2
    last = (start + count - 1) // 2
    blocks = np.arange(first, last + 1, dtype=np.uint64)
    w0, w1, w2, w3 = philox4x32(
        (blocks[None, :], np.uint64(n), ks[:, None], np.uint64(branch)), key)
    u1 = _to_unit(w0, w1)
    u2 = _to_unit(w2, w3)
    r = np.sqrt(-2.0 * np.log1p(-u1))
    ang = TWO_PI * u2
    out = np.empty((ks.size, 2 * blocks.size))
    out[:, 0::2] = r * np.cos(ang)
    out[:, 1::2] = r * np.sin(ang)
    off = start - 2 * first
    return out[:, off:off + count]


@dataclass(frozen=True)
class SeedSpec:
    """Master seed from which every substream is derived."""

    master: int

    def __post_init__(self):
        _split_master(self.master)


class RandomStream:
    """Sequential view of one Philox substream.

    Instances carry a read position and are meant for a single owner.
    """

    def __init__(self, master, k, n, branch):
        self.master = int(master)
        self.k = int(k)
        self.n = int(n)
        self.branch = int(branch)
        self.position = 0

    @property
    def path(self):
        return (self.master, self.k, self.n, self.branch)

    def standard_normal(self, size):
        size = int(size)
        out = philox_normals(self.master, [self.k], self.n, self.branch,
                             self.position, size)[0]
        self.position += size
        return out

    def __repr__(self):
        return (f"RandomStream(master={self.master}, k={self.k}, n={self.n}, "
                f"branch={self.branch}, position={self.position})")


def derive_stream(seed, k, n, branch):
    """Independent, reproducible substream for replicate ``k``, level ``n``."""
    master = seed.master if isinstance(seed, SeedSpec) else int(seed)
    _split_master(master)
    if branch not in (1, 2):
        raise ValueError(f"branch must be 1 or 2, got {branch!r}")
    for name, v in (("k", k), ("n", n)):
        if int(v) != v or not 0 <= v < 2**32:
            raise ValueError(f"{name} must be an integer in [0, 2**32), got {v!r}")
    return RandomStream(master, k, n, branch)
