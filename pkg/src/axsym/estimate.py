"""Monte Carlo recovery of the covariance structure from an ensemble.

A site is an index tuple ``(component, lat_index, lon_index, time_index)``
into the ensemble grid; a pair is two sites.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .simulate import FieldEnsemble, project_onto_harmonic

__all__ = [
    "EnsembleStats",
    "GaussianityResult",
    "empirical_covariance",
    "gaussianity_test",
    "oracle_loop_passes",
    "projection_variance_test",
    "random_pairs",
    "reversibility_test",
    "series_targets",
]


@dataclass
class EnsembleStats:
    pairs: list
    c_hat: np.ndarray
    se: np.ndarray
    target: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)

    @property
    def z(self):
        if self.target is None:
            return None
        return _zscores(self.c_hat - self.target, self.se)

    def to_dict(self):
        z = self.z
        rows = []
        for idx, pair in enumerate(self.pairs):
            row = {"pair_id": idx, "site1": list(map(int, pair[0])),
                   "site2": list(map(int, pair[1])),
                   "C_hat": float(self.c_hat[idx]), "SE": float(self.se[idx])}
            if z is not None:
                row["target"] = float(self.target[idx])
                row["z"] = _finite(z[idx])
            rows.append(row)
        return {"pairs": rows, **self.extra}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    def to_csv(self, path):
        z = self.z
        with open(path, "w", newline="\n") as fh:
            fh.write("pair_id,C_hat,SE,target,z\n")
            for idx in range(len(self.pairs)):
                target = "" if z is None else "%.17g" % self.target[idx]
                zval = "" if z is None else "%.17g" % z[idx]
                fh.write(f"{idx},{'%.17g' % self.c_hat[idx]},{'%.17g' % self.se[idx]},"
                         f"{target},{zval}\n")


def _finite(x):
    x = float(x)
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def _zscores(diff, se):
    diff = np.asarray(diff, dtype=float)
    se = np.asarray(se, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = diff / se
    z = np.where(se > 0, z, np.where(diff == 0, 0.0, np.copysign(np.inf, diff)))
    return z


def _site_values(ensemble, site):
    i, a, b, p = (int(x) for x in site)
    return ensemble.values[:, i, a, b, p]


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    mean = math.fsum(x.tolist()) / x.size
    se = math.sqrt(math.fsum(((x - mean) ** 2).tolist()) / (x.size - 1)) / math.sqrt(x.size)
    return mean, se


def empirical_covariance(ensemble: FieldEnsemble, pairs, subtract_mean=False, target=None):
    """Covariance estimates ``mean_k Z_k(site1) Z_k(site2)`` with standard errors.

    The field mean is taken as zero unless ``subtract_mean`` is set.
    ``target`` is an optional callable ``(site1, site2) -> float`` used to
    fill in reference values and z-scores.
    """
    K = ensemble.K
    if K < 2:
        raise ValueError("need at least two replicates")
    values = ensemble.values
    if subtract_mean:
        values = values - values.mean(axis=0, keepdims=True)
        ensemble = FieldEnsemble(values=values, grid=ensemble.grid, plan=ensemble.plan)
    c_hat, se = [], []
    for s1, s2 in pairs:
        c, e = _mean_se(_site_values(ensemble, s1) * _site_values(ensemble, s2))
        c_hat.append(c)
        se.append(e)
    tgt = None
    if target is not None:
        tgt = np.array([float(target(s1, s2)) for s1, s2 in pairs])
    return EnsembleStats(pairs=[tuple(map(tuple, p)) for p in pairs],
                         c_hat=np.array(c_hat), se=np.array(se), target=tgt)


def series_targets(ensemble: FieldEnsemble, model):
    """Callable giving ``model`` covariance between two grid sites."""
    g = ensemble.grid

    def target(s1, s2):
        i, a, b, p = s1
        j, a2, b2, q = s2
        C = model(g.lats[a], g.lats[a2], g.lons[b] - g.lons[b2], g.times[p] - g.times[q])
        return C[i, j]

    return target


def random_pairs(grid, count, seed=0):
    """``count`` random site pairs on ``grid``."""
    rng = np.random.default_rng(seed)
    m, L, Th, T = grid.shape
    pairs = []
    for _ in range(count):
        s1 = (int(rng.integers(m)), int(rng.integers(L)), int(rng.integers(Th)), int(rng.integers(T)))
        s2 = (int(rng.integers(m)), int(rng.integers(L)), int(rng.integers(Th)), int(rng.integers(T)))
        pairs.append((s1, s2))
    return pairs


def oracle_loop_passes(z, z_threshold=4.0, median_threshold=1.5, coverage=0.95):
    """Simultaneous check: median ``|z|`` small and most ``|z|`` under threshold."""
    az = np.abs(np.asarray(z, dtype=float))
    return bool(np.median(az) < median_threshold and np.mean(az < z_threshold) >= coverage)


def projection_variance_test(ensemble: FieldEnsemble, n, lat_index, component=0, time_index=0,
                             family=None):
    """Compare ``Var(W_n)`` with ``4 pi^2 B_0`` (n = 0) or ``pi^2 B_n``.

    ``W_n`` is the cosine projection of each replicate along its latitude
    ring.  Returns ``(estimate, target, z)``.
    """
    family = family if family is not None else getattr(ensemble.plan, "family", None)
    if family is None:
        raise ValueError("a coefficient family is needed for the target")
    g = ensemble.grid
    M = g.lons.size
    if M < 2 * (n + 1):
        raise ValueError(f"{M} longitudes cannot resolve harmonic {n}")
    if ensemble.plan is not None and ensemble.plan.N >= M - n:
        raise ValueError(f"harmonic {n} aliases with level {M - n} <= N={ensemble.plan.N}; "
                         "use more longitudes")
    ring = ensemble.values[:, component, lat_index, :, time_index]
    W = project_onto_harmonic(ring, g.lons, n, "cos", axis=-1)
    est, se = _mean_se(W * W)
    phi = g.lats[lat_index]
    B, _ = family.eval(n, phi, phi, 0.0)
    target = (4.0 if n == 0 else 1.0) * math.pi ** 2 * B[component, component]
    z = float(_zscores(est - target, se))
    return est, float(target), z


def reversibility_test(ensemble: FieldEnsemble, pairs):
    """Largest ``|z|`` of ``C_hat(dtheta) - C_hat(-dtheta)`` over ``pairs``.

    The mirrored pair swaps the two longitude indices.  Returns
    ``(max_abs_z, pair)``.
    """
    Th = ensemble.grid.lons.size
    worst, worst_pair = 0.0, None
    for s1, s2 in pairs:
        i, a, b, p = s1
        j, a2, b2, q = s2
        if not (0 <= b < Th and 0 <= b2 < Th):
            raise ValueError(f"mirrored pair for {(s1, s2)} is not on the grid")
        x = _site_values(ensemble, s1) * _site_values(ensemble, s2)
        y = _site_values(ensemble, (i, a, b2, p)) * _site_values(ensemble, (j, a2, b, q))
        d, se = _mean_se(x - y)
        z = abs(float(_zscores(d, se)))
        if worst_pair is None or z > worst:
            worst, worst_pair = z, (tuple(s1), tuple(s2))
    return worst, worst_pair


@dataclass
class GaussianityResult:
    site: tuple
    skew_z: float
    kurtosis_z: float
    degenerate: bool = False


def gaussianity_test(ensemble: FieldEnsemble, sites):
    """Moment z-scores for skewness and excess kurtosis at each site.

    Uses ``SE(g1) = sqrt(6/K)`` and ``SE(g2) = sqrt(24/K)``.  Sites with zero
    variance are flagged ``degenerate`` with z-scores of zero.
    """
    K = ensemble.K
    if K < 100:
        raise ValueError(f"need K >= 100 replicates for moment tests, got {K}")
    out = []
    for site in sites:
        x = _site_values(ensemble, site)
        c = x - x.mean()
        m2 = float(np.mean(c ** 2))
        if m2 <= 0:
            out.append(GaussianityResult(tuple(site), 0.0, 0.0, True))
            continue
        g1 = float(np.mean(c ** 3)) / m2 ** 1.5
        g2 = float(np.mean(c ** 4)) / m2 ** 2 - 3.0
        out.append(GaussianityResult(tuple(site), g1 / math.sqrt(6.0 / K),
                                     g2 / math.sqrt(24.0 / K)))
    return out
