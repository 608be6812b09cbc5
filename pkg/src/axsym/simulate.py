"""Gaussian synthesis through the truncated longitudinal Fourier series.

Each level ``n`` gets two independent coefficient processes ``V_n1, V_n2``
sampled jointly over the latitude-time lattice with covariance ``B_n``; the
field is ``Z = sum_n V_n1 cos(n theta) + V_n2 sin(n theta)``.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import TWO_PI, KernelError, ProductGrid, RandomStream, SeedSpec, philox_normals
from .kernels import CoefficientFamily

__all__ = [
    "CoefficientDraw",
    "FieldEnsemble",
    "SimulationPlan",
    "assemble_coefficient_covariance",
    "cholesky_with_jitter",
    "project_onto_harmonic",
    "read_ensemble_binary",
    "read_ensemble_csv",
    "sample_coefficient_processes",
    "synthesize_field",
    "write_ensemble_binary",
    "write_ensemble_csv",
]

log = logging.getLogger(__name__)

ASYMMETRY_TOL = 1e-10
JITTER_SCHEDULE = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
# replicates per work unit; fixed so results do not depend on the pool size
CHUNK = 1024


@dataclass(frozen=True, eq=False)
class SimulationPlan:
    grid: ProductGrid
    family: CoefficientFamily
    N: Optional[int] = None
    K: int = 1
    seed: SeedSpec = SeedSpec(0)

    def __post_init__(self):
        N = self.N if self.N is not None else self.family.truncation_hint
        if N is None:
            raise ValueError("family has no tail bound; give the truncation N explicitly")
        if N < 0:
            raise ValueError("N must be >= 0")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.family.m != self.grid.m:
            raise ValueError(f"family has m={self.family.m} but grid has m={self.grid.m}")
        if not isinstance(self.seed, SeedSpec):
            object.__setattr__(self, "seed", SeedSpec(int(self.seed)))
        object.__setattr__(self, "N", int(N))
        object.__setattr__(self, "K", int(self.K))

    def to_dict(self):
        return {
            "grid": self.grid.to_dict(),
            "family": {"kind": self.family.kind, "params": self.family.params},
            "N": self.N,
            "K": self.K,
            "seed": self.seed.master,
            "tail_bound": self.family.tail_bound(self.N),
        }


@dataclass
class CoefficientDraw:
    V1: np.ndarray
    V2: np.ndarray


@dataclass(eq=False)
class FieldEnsemble:
    """``values`` has shape ``(K, m, n_lat, n_lon, n_time)``."""

    values: np.ndarray
    grid: ProductGrid
    plan: Optional[SimulationPlan] = None
    seeds: list = field(default_factory=list)
    coefficients: Optional[np.ndarray] = None

    @property
    def K(self):
        return self.values.shape[0]


def _level_covariances(family, ns, lats, times):
    """``(len(ns), S, S)`` coefficient covariances, S = m * n_lat * n_time."""
    ns = np.atleast_1d(np.asarray(ns, dtype=np.int64))
    lats = np.atleast_1d(np.asarray(lats, dtype=float))
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if lats.size == 0 or times.size == 0:
        raise ValueError("grids must be non-empty")
    m, L, T = family.m, lats.size, times.size
    S = m * L * T
    out = np.empty((ns.size, m, L, T, m, L, T))
    for a in range(L):
        for p in range(T):
            for b in range(L):
                for q in range(T):
                    B, _ = family.coefficients(ns, lats[a], lats[b], times[p] - times[q])
                    out[:, :, a, p, :, b, q] = B
    out = out.reshape(ns.size, S, S)
    for n, Sn in zip(ns, out):
        scale = max(float(np.max(np.abs(Sn))), 1e-300)
        if np.max(np.abs(Sn - Sn.T)) > ASYMMETRY_TOL * scale:
            raise KernelError(f"level {n}: coefficient covariance is not symmetric; "
                              "the family is not a valid covariance kernel")
    return out


def assemble_coefficient_covariance(family, n, lats, times=(0.0,)):
    """Joint covariance of ``V_n`` over components, latitudes and times.

    Row/column index is ``(i, a, p)`` in C order, i.e. component-major.
    """
    return _level_covariances(family, [n], lats, times)[0]


def cholesky_with_jitter(S):
    """Lower Cholesky factor of ``S + eps I`` with the smallest workable jitter.

    ``eps`` runs through ``0, 1e-12 d, ..., 1e-6 d`` with ``d`` the mean
    diagonal.  Returns ``(L, eps)``.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("S must be square")
    if not np.allclose(S, S.T, rtol=0, atol=ASYMMETRY_TOL * max(np.max(np.abs(S)), 1e-300)):
        raise KernelError("S must be symmetric")
    d = float(np.mean(np.diag(S)))
    if not np.any(S):
        return np.zeros_like(S), 0.0
    if d > 0:
        eye = np.eye(S.shape[0])
        for rel in JITTER_SCHEDULE:
            eps = rel * d
            try:
                return np.linalg.cholesky(S + eps * eye), eps
            except np.linalg.LinAlgError:
                continue
    raise KernelError("kernel not numerically PSD: Cholesky failed at jitter 1e-6 * mean diagonal")


def sample_coefficient_processes(L, stream1: RandomStream, stream2: RandomStream):
    """Draw ``V1 = L xi1`` and ``V2 = L xi2`` from two distinct streams.

    Returns flat draws of length ``L.shape[0]``; callers reshape to
    ``(m, n_lat, n_time)``.
    """
    if stream1 is stream2 or stream1.path == stream2.path:
        raise ValueError("V_n1 and V_n2 must come from distinct streams")
    L = np.asarray(L, dtype=float)
    S = L.shape[0]
    return CoefficientDraw(V1=L @ stream1.standard_normal(S),
                           V2=L @ stream2.standard_normal(S))


def _synthesize_chunk(ks, factors, plan, cosines, sines, keep):
    m, L, Th, T = plan.grid.shape
    S = m * L * T
    K = ks.size
    Z = np.zeros((K, m, L, T, Th))
    kept = np.empty((K, plan.N + 1, 2, m, L, T)) if keep else None
    for n, Lf in enumerate(factors):
        xi1 = philox_normals(plan.seed.master, ks, n, 1, 0, S)
        xi2 = philox_normals(plan.seed.master, ks, n, 2, 0, S)
        V1 = (xi1 @ Lf.T).reshape(K, m, L, T)
        V2 = (xi2 @ Lf.T).reshape(K, m, L, T)
        Z += V1[..., None] * cosines[n] + V2[..., None] * sines[n]
        if keep:
            kept[:, n, 0] = V1
            kept[:, n, 1] = V2
    return np.moveaxis(Z, -1, 3), kept


def synthesize_field(plan: SimulationPlan, threads=1, keep_coefficients=False):
    """Simulate ``plan.K`` independent replicates of the truncated series field.

    Replicate ``k`` at level ``n`` reads the substreams
    ``derive_stream(seed, k, n, 1)`` and ``(..., 2)``, so the output is a
    pure function of the plan regardless of ``threads``.
    """
    grid = plan.grid
    m, L, Th, T = grid.shape
    covs = _level_covariances(plan.family, np.arange(plan.N + 1), grid.lats, grid.times)
    factors = []
    for n in range(plan.N + 1):
        try:
            Lf, eps = cholesky_with_jitter(covs[n])
        except KernelError as exc:
            raise KernelError(f"level n={n}: {exc}") from exc
        if eps:
            log.debug("level %d factored with jitter %.3g", n, eps)
        factors.append(Lf)
    ns = np.arange(plan.N + 1)[:, None]
    cosines = np.cos(ns * grid.lons)
    sines = np.sin(ns * grid.lons)

    values = np.empty((plan.K, m, L, Th, T))
    kept = np.empty((plan.K, plan.N + 1, 2, m, L, T)) if keep_coefficients else None
    starts = list(range(0, plan.K, CHUNK))

    def work(start):
        ks = np.arange(start, min(start + CHUNK, plan.K), dtype=np.uint64)
        Z, V = _synthesize_chunk(ks, factors, plan, cosines, sines, keep_coefficients)
        values[start:start + ks.size] = Z
        if keep_coefficients:
            kept[start:start + ks.size] = V

    threads = max(1, int(threads))
    if threads == 1:
        for s in starts:
            work(s)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    seeds = [{"master": plan.seed.master, "k": k} for k in range(plan.K)]
    return FieldEnsemble(values=values, grid=grid, plan=plan, seeds=seeds, coefficients=kept)


def project_onto_harmonic(values, lons, n, trig="cos", axis=-2):
    """Trapezoid integral over longitude of ``Z * cos(n theta)`` or ``sin``.

    On a uniform grid of ``M`` longitudes this is exact for fields whose
    longitudinal degree is below ``M - n``: it returns ``2 pi V_01`` for
    ``n = 0`` and ``pi V_n1`` / ``pi V_n2`` for ``n >= 1``.
    """
    lons = np.asarray(lons, dtype=float)
    M = lons.size
    n = int(n)
    if n < 0:
        raise ValueError("n must be >= 0")
    if M < 2 * (n + 1):
        raise ValueError(f"{M} longitudes cannot resolve harmonic {n}; need >= {2 * (n + 1)}")
    if not np.allclose(lons, TWO_PI * np.arange(M) / M, rtol=0, atol=1e-12):
        raise ValueError("projection requires the uniform grid 2*pi*j/M")
    if trig == "cos":
        w = np.cos(n * lons)
    elif trig == "sin":
        w = np.sin(n * lons)
    else:
        raise ValueError("trig must be 'cos' or 'sin'")
    values = np.moveaxis(np.asarray(values, dtype=float), axis, -1)
    return (TWO_PI / M) * (values @ w)


# ---------------------------------------------------------------------------
# ensemble I/O

CSV_HEADER = "replicate,component,phi,theta,t,value\n"


def write_ensemble_csv(ensemble: FieldEnsemble, path):
    """One row per value, floats with 17 significant digits."""
    g = ensemble.grid
    K, m, L, Th, T = ensemble.values.shape
    lat_s = ["%.17g" % x for x in g.lats]
    lon_s = ["%.17g" % x for x in g.lons]
    time_s = ["%.17g" % x for x in g.times]
    site = [f"{lat_s[a]},{lon_s[b]},{time_s[p]}"
            for a in range(L) for b in range(Th) for p in range(T)]
    vals = ensemble.values.reshape(K, m, L * Th * T)
    with open(path, "w", newline="\n") as fh:
        fh.write(CSV_HEADER)
        for k in range(K):
            for i in range(m):
                prefix = f"{k},{i},"
                row = vals[k, i]
                fh.write("".join(f"{prefix}{s},{'%.17g' % v}\n"
                                 for s, v in zip(site, row.tolist())))


def read_ensemble_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 6:
        raise ValueError(f"{path}: expected 6 columns")
    ks = data[:, 0].astype(int)
    comps = data[:, 1].astype(int)
    lats, lat_idx = np.unique(data[:, 2], return_inverse=True)
    lons, lon_idx = np.unique(data[:, 3], return_inverse=True)
    times, time_idx = np.unique(data[:, 4], return_inverse=True)
    K, m = ks.max() + 1, comps.max() + 1
    shape = (K, m, lats.size, lons.size, times.size)
    if data.shape[0] != math.prod(shape):
        raise ValueError(f"{path}: rows do not form a complete product grid")
    values = np.full(shape, np.nan)
    values[ks, comps, lat_idx, lon_idx, time_idx] = data[:, 5]
    if np.isnan(values).any():
        raise ValueError(f"{path}: duplicate or missing rows")
    return FieldEnsemble(values=values, grid=ProductGrid(lats, lons, times, int(m)))


def write_ensemble_binary(ensemble: FieldEnsemble, path):
    """Little-endian float64 in C order plus a JSON sidecar ``<path>.json``."""
    path = Path(path)
    np.ascontiguousarray(ensemble.values, dtype="<f8").tofile(path)
    meta = {"dtype": "<f8", "order": "C", "axes": ["replicate", "component", "lat", "lon", "time"],
            "shape": list(ensemble.values.shape), "grid": ensemble.grid.to_dict()}
    if ensemble.plan is not None:
        meta["plan"] = ensemble.plan.to_dict()
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return sidecar


def read_ensemble_binary(path):
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    values = np.fromfile(path, dtype=meta.get("dtype", "<f8")).reshape(meta["shape"])
    return FieldEnsemble(values=values.astype(float), grid=ProductGrid.from_dict(meta["grid"]))
