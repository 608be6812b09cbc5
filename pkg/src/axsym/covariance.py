"""Covariance models, Fourier extraction and positive-definiteness checks."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import TWO_PI
from .kernels import CoefficientFamily

__all__ = [
    "Configuration",
    "CovarianceModel",
    "PsdReport",
    "closed_form_model",
    "constant_model",
    "eval_series_covariance",
    "extract_fourier_coefficients",
    "gram_matrix",
    "probe_points",
    "psd_check",
    "reversibility_diagnostic",
    "series_model",
    "symmetrize",
    "symmetry_diagnostic",
    "thm7_check",
]

MAX_TERMS = 10**6
MAX_CONFIG_POINTS = 16


@dataclass(frozen=True, eq=False)
class CovarianceModel:
    """Matrix covariance ``C(phi1, phi2, theta; t)``.

    ``fn(phi1, phi2, theta, t)`` receives scalar latitudes and time and an
    array of longitude differences and returns ``(*theta.shape, m, m)``.
    """

    m: int
    fn: Callable
    provenance: dict = field(default_factory=dict)
    temporal: bool = False

    def __call__(self, phi1, phi2, theta, t=0.0):
        theta_arr = np.asarray(theta, dtype=float)
        out = np.asarray(self.fn(float(phi1), float(phi2), theta_arr, float(t)), dtype=float)
        out = np.broadcast_to(out, theta_arr.shape + (self.m, self.m))
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("covariance evaluation produced non-finite values")
        return out


def eval_series_covariance(family, N, phi1, phi2, theta, t=0.0):
    """Truncated series ``sum_{n<=N} B_n cos(n theta) + A_n sin(n theta)``.

    ``theta`` may be an array; the result has shape ``(*theta.shape, m, m)``.
    """
    N = int(N)
    if N < 0:
        raise ValueError("N must be >= 0")
    if N > MAX_TERMS:
        raise ValueError(f"N={N} exceeds the cap of {MAX_TERMS} terms")
    ns = np.arange(N + 1)
    B, A = family.coefficients(ns, phi1, phi2, t)
    theta = np.asarray(theta, dtype=float)
    arg = theta[..., None] * ns
    out = np.tensordot(np.cos(arg), B, axes=(-1, 0))
    if not family.reversible:
        out = out + np.tensordot(np.sin(arg), A, axes=(-1, 0))
    return out


def series_model(family: CoefficientFamily, N: Optional[int] = None):
    """Covariance model given by the family's series truncated at ``N``."""
    if N is None:
        N = family.truncation_hint
        if N is None:
            raise ValueError("family has no tail bound; an explicit truncation N is required")
    N = int(N)
    if not 0 <= N <= MAX_TERMS:
        raise ValueError(f"N must lie in [0, {MAX_TERMS}], got {N}")
    cache = {}

    def fn(phi1, phi2, theta, t):
        key = (phi1, phi2, t)
        coef = cache.get(key)
        if coef is None:
            coef = family.coefficients(np.arange(N + 1), phi1, phi2, t)
            if len(cache) < 4096:
                cache[key] = coef
        B, A = coef
        arg = theta[..., None] * np.arange(N + 1)
        out = np.tensordot(np.cos(arg), B, axes=(-1, 0))
        if not family.reversible:
            out = out + np.tensordot(np.sin(arg), A, axes=(-1, 0))
        return out

    return CovarianceModel(m=family.m, fn=fn, temporal=family.temporal,
                           provenance={"series": family.kind, "N": N,
                                       "tail_bound": family.tail_bound(N)})


def closed_form_model(family: CoefficientFamily):
    """Exact covariance of a builtin family (infinite series)."""
    if family.closed_form is None:
        raise ValueError(f"{family.kind} family has no closed form")
    return CovarianceModel(m=family.m, fn=family.closed_form, temporal=family.temporal,
                           provenance={"closed_form": family.kind})


def constant_model(value, m=1):
    """Model that is the same matrix everywhere."""
    M = np.broadcast_to(np.asarray(value, dtype=float), (m, m)).copy()

    def fn(phi1, phi2, theta, t):
        return np.broadcast_to(M, np.shape(theta) + (m, m))

    return CovarianceModel(m=m, fn=fn, provenance={"constant": M.tolist()})


def symmetrize(C: CovarianceModel):
    """Symmetric, time-even part of ``C``.

    Averages ``C(t)``, ``C(t)'``, ``C(-t)`` and ``C(-t)'``; for a purely
    spatial model this is ``(C + C')/2``.  The result is a projection: a
    symmetric, time-even model is returned unchanged.
    """

    def swap(x):
        return np.swapaxes(x, -1, -2)

    if C.temporal:
        def fn(phi1, phi2, theta, t):
            a = C(phi1, phi2, theta, t)
            b = C(phi1, phi2, theta, -t)
            return (a + swap(a) + b + swap(b)) / 4.0
    else:
        def fn(phi1, phi2, theta, t):
            a = C(phi1, phi2, theta, t)
            return (a + swap(a)) / 2.0

    return CovarianceModel(m=C.m, fn=fn, temporal=C.temporal,
                           provenance={"symmetrized": C.provenance})


def extract_fourier_coefficients(C, n, phi1, phi2, t=0.0, M=4096):
    """Cosine and sine coefficients of ``C`` at level ``n`` by the trapezoid rule.

    Uses ``M`` uniform nodes on ``[0, 2*pi)``; exact when ``C`` is a
    trigonometric polynomial of degree below ``M/2``.  ``n`` may also be a
    sequence of levels, in which case ``C`` is evaluated once and the
    results are stacked along a leading axis.
    """
    levels = np.atleast_1d(np.asarray(n))
    if levels.ndim != 1 or levels.size == 0 or np.any(levels != levels.astype(int)):
        raise ValueError("n must be an integer or a sequence of integers")
    levels = levels.astype(int)
    M = int(M)
    if np.any(levels < 0):
        raise ValueError("n must be >= 0")
    top = int(levels.max())
    if M % 2 or M < 4 * (top + 1):
        raise ValueError(f"M={M} must be even and at least 4*(n+1)={4 * (top + 1)}")
    theta = TWO_PI * np.arange(M) / M
    vals = C(phi1, phi2, theta, t)
    # the uniform trapezoid sums of C cos(n theta_j), C sin(n theta_j) are the
    # real and (negated) imaginary parts of the DFT at frequency n
    spec = np.fft.rfft(vals, axis=0)[levels]
    scale = np.where(levels == 0, 0.5, 1.0)[:, None, None] * (2.0 / M)
    b_hat = scale * spec.real
    a_hat = -scale * spec.imag
    a_hat[levels == 0] = 0.0
    if np.ndim(n) == 0:
        return b_hat[0], a_hat[0]
    return b_hat, a_hat


@dataclass(frozen=True)
class Configuration:
    """Finite point set ``(phi, theta, t)`` for the quadratic form."""

    points: np.ndarray
    max_points: int = MAX_CONFIG_POINTS

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[1] == 2:
            pts = np.column_stack([pts, np.zeros(len(pts))])
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("points must have shape (l, 3) of (phi, theta, t)")
        if not 1 <= len(pts) <= self.max_points:
            raise ValueError(f"configuration size must be in [1, {self.max_points}]")
        if np.any(pts[:, 0] < 0) or np.any(pts[:, 0] > math.pi):
            raise ValueError("latitudes must lie in [0, pi]")
        if np.any(pts[:, 1] < 0) or np.any(pts[:, 1] > TWO_PI):
            raise ValueError("longitudes must lie in [0, 2*pi]")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)


def gram_matrix(C: CovarianceModel, config):
    """Block matrix with block ``(i, j) = C(phi_i, phi_j, theta_i - theta_j; t_i - t_j)``."""
    if not isinstance(config, Configuration):
        config = Configuration(config)
    pts = config.points
    l, m = len(pts), C.m
    G = np.empty((l * m, l * m))
    for i in range(l):
        for j in range(l):
            G[i * m:(i + 1) * m, j * m:(j + 1) * m] = C(
                pts[i, 0], pts[j, 0], pts[i, 1] - pts[j, 1], pts[i, 2] - pts[j, 2])
    return G


@dataclass
class PsdReport:
    """Outcome of a randomized positive-semidefiniteness check."""

    passed: bool
    tol: float
    n_configs: int
    min_eigenvalues: list
    worst_min_eigenvalue: float
    worst_config: list
    seed: int
    level: Optional[int] = None

    def to_dict(self):
        d = {
            "pass": bool(self.passed),
            "tol": self.tol,
            "n_configs": self.n_configs,
            "worst_min_eigenvalue": self.worst_min_eigenvalue,
            "worst_config": self.worst_config,
            "seed": self.seed,
        }
        if self.level is not None:
            d["level"] = self.level
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def _draw_configs(rng, n_configs, max_l, temporal, time_span, lattice):
    configs = []
    for _ in range(n_configs):
        l = int(rng.integers(1, max_l + 1))
        phi = rng.uniform(0.0, math.pi, l)
        theta = rng.uniform(0.0, TWO_PI, l)
        if not temporal:
            t = np.zeros(l)
        elif lattice:
            t = rng.integers(0, int(time_span) + 1, l).astype(float)
        else:
            t = rng.uniform(0.0, time_span, l)
        configs.append(np.column_stack([phi, theta, t]))
    return configs


def _min_eig_report(mats_and_points, tol, seed, level=None):
    mins, ratios = [], []
    for G, pts in mats_and_points:
        S = (G + G.T) / 2.0
        lam = float(np.linalg.eigvalsh(S)[0])
        scale = float(np.max(np.abs(np.diag(S))))
        mins.append(lam)
        ratios.append(lam / scale if scale > 0 else (0.0 if lam >= 0 else -math.inf))
    passed = all(r >= -tol for r in ratios)
    worst = int(np.argmin(ratios))
    return PsdReport(passed=passed, tol=tol, n_configs=len(mins), min_eigenvalues=mins,
                     worst_min_eigenvalue=mins[worst],
                     worst_config=mats_and_points[worst][1].tolist(), seed=seed, level=level)


def psd_check(C: CovarianceModel, n_configs=100, max_l=8, tol=1e-8, seed=0,
              time_span=4.0, lattice=True):
    """Sample configurations and check the Gram matrices are PSD.

    Passes when every minimum eigenvalue of ``(G + G')/2`` is at least
    ``-tol`` times that matrix's largest diagonal magnitude.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    rng = np.random.default_rng(seed)
    configs = _draw_configs(rng, n_configs, max_l, C.temporal, time_span, lattice)
    return _min_eig_report(
        [(gram_matrix(C, Configuration(p, max_points=max(max_l, 1))), p) for p in configs],
        tol, seed)


def thm7_block_matrix(family, n, phis, ts):
    """``[[B, A], [-A, B]]`` built from level-``n`` coefficients at ``(phi_i, t_i)``."""
    l, m = len(phis), family.m
    Bm = np.empty((l * m, l * m))
    Am = np.empty((l * m, l * m))
    for i in range(l):
        for j in range(l):
            B, A = family.eval(n, phis[i], phis[j], ts[i] - ts[j])
            Bm[i * m:(i + 1) * m, j * m:(j + 1) * m] = B
            Am[i * m:(i + 1) * m, j * m:(j + 1) * m] = A
    return np.block([[Bm, Am], [-Am, Bm]])


def thm7_check(family: CoefficientFamily, n, n_configs=100, max_l=8, tol=1e-8, seed=0,
               time_span=4.0, lattice=True):
    """Per-level sufficient condition on ``(B_n, A_n)``.

    For ``w = (u, v)``, ``w' K w`` with ``K = [[B, A], [-A, B]]`` is the
    quadratic form ``u'Bu + v'Bv + u'Av - v'Au``; the check samples
    latitude/time configurations and reports the smallest eigenvalue of the
    symmetric part of ``K``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    rng = np.random.default_rng(seed)
    configs = _draw_configs(rng, n_configs, max_l, family.temporal, time_span, lattice)
    mats = [(thm7_block_matrix(family, n, p[:, 0], p[:, 2]), p[:, [0, 2]]) for p in configs]
    return _min_eig_report(mats, tol, seed, level=int(n))


def probe_points(n_probe, seed, temporal=False, time_span=4.0):
    """Random ``(phi1, phi2, theta, t)`` probes with ``theta`` in ``[-2pi, 2pi]``."""
    if n_probe < 1:
        raise ValueError("n_probe must be >= 1")
    rng = np.random.default_rng(seed)
    phi1 = rng.uniform(0.0, math.pi, n_probe)
    phi2 = rng.uniform(0.0, math.pi, n_probe)
    theta = rng.uniform(-TWO_PI, TWO_PI, n_probe)
    t = rng.uniform(-time_span, time_span, n_probe) if temporal else np.zeros(n_probe)
    return np.column_stack([phi1, phi2, theta, t])


def symmetry_diagnostic(C: CovarianceModel, n_probe=64, seed=0, probes=None):
    """Largest entry of ``|C(phi1, phi2, theta; t) - C(phi2, phi1, -theta; -t)'|``."""
    if probes is None:
        probes = probe_points(n_probe, seed, C.temporal)
    worst = 0.0
    for p1, p2, th, t in probes:
        d = C(p1, p2, th, t) - C(p2, p1, -th, -t).T
        worst = max(worst, float(np.max(np.abs(d))))
    return worst


def reversibility_diagnostic(C: CovarianceModel, n_probe=64, seed=0, probes=None):
    """Largest entry of ``|C(phi1, phi2, theta; t) - C(phi1, phi2, -theta; t)|``."""
    if probes is None:
        probes = probe_points(n_probe, seed, C.temporal)
    worst = 0.0
    for p1, p2, th, t in probes:
        d = C(p1, p2, th, t) - C(p1, p2, -th, t)
        worst = max(worst, float(np.max(np.abs(d))))
    return worst
