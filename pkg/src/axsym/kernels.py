"""Coefficient families ``n -> (B_n, A_n)`` and their closed-form covariances.

A family describes the covariance

    C(phi1, phi2, theta; t) = sum_n B_n(phi1, phi2; t) cos(n theta)
                                  + A_n(phi1, phi2; t) sin(n theta)

through vectorized coefficient callables.  ``cos_coef(ns, phi1, phi2, t)``
returns an array of shape ``(len(ns), m, m)``; ``sin_coef`` likewise, or
``None`` for a longitudinally reversible family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import KernelError

__all__ = [
    "AffineLatFunction",
    "CoefficientFamily",
    "MatrixKernel",
    "cosh_closed_form",
    "log_closed_form",
    "make_cosh_family",
    "make_lambda_family",
    "make_log_family",
    "make_poisson_family",
    "make_separable_time",
    "poisson_closed_form",
    "table_family",
    "truncation_for",
]

HINT_TOL = 1e-8
HINT_CAP = 10**5


def truncation_for(tail_bound, tol=HINT_TOL, cap=HINT_CAP):
    """Smallest ``N`` with ``tail_bound(N) < tol``, capped at ``cap``.

    ``tail_bound`` must be non-increasing.
    """
    if tail_bound(0) < tol:
        return 0
    if tail_bound(cap) >= tol:
        return cap
    lo, hi = 0, 1
    while tail_bound(hi) >= tol:
        lo, hi = hi, min(2 * hi, cap)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if tail_bound(mid) < tol:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True, eq=False)
class CoefficientFamily:
    """Matrix coefficient kernels of an axially symmetric covariance.

    Attributes
    ----------
    m : int
        Number of field components.
    cos_coef, sin_coef : callable
        ``(ns, phi1, phi2, t) -> ndarray (len(ns), m, m)``.  ``sin_coef`` is
        ``None`` when every ``A_n`` vanishes.
    tail : callable or None
        ``N -> bound`` on the sum over ``n > N`` of the max entry of
        ``|B_n| + |A_n|``.  Without it, evaluation needs an explicit ``N``.
    closed_form : callable or None
        ``(phi1, phi2, theta, t) -> ndarray (*theta.shape, m, m)``, the exact
        infinite-series covariance if known.
    """

    m: int
    cos_coef: Callable
    sin_coef: Optional[Callable] = None
    tail: Optional[Callable[[int], float]] = None
    temporal: bool = False
    closed_form: Optional[Callable] = None
    kind: str = "user"
    params: dict = field(default_factory=dict)

    @property
    def reversible(self):
        return self.sin_coef is None

    def tail_bound(self, N):
        if self.tail is None:
            return None
        return float(self.tail(int(N)))

    @property
    def truncation_hint(self):
        if self.tail is None:
            return None
        return truncation_for(self.tail)

    def coefficients(self, ns, phi1, phi2, t=0.0):
        """``(B, A)`` stacked over the levels ``ns``, each ``(len(ns), m, m)``."""
        ns = np.atleast_1d(np.asarray(ns, dtype=np.int64))
        if np.any(ns < 0):
            raise ValueError("levels must be non-negative")
        B = np.asarray(self.cos_coef(ns, float(phi1), float(phi2), float(t)), dtype=float)
        if self.sin_coef is None:
            A = np.zeros_like(B)
        else:
            A = np.asarray(self.sin_coef(ns, float(phi1), float(phi2), float(t)), dtype=float)
        expected = (ns.size, self.m, self.m)
        if B.shape != expected or A.shape != expected:
            raise KernelError(f"{self.kind} family returned shape {B.shape}/{A.shape}, "
                              f"expected {expected}")
        return B, A

    def eval(self, n, phi1, phi2, t=0.0):
        """``(B_n, A_n)`` at a single level."""
        B, A = self.coefficients([n], phi1, phi2, t)
        return B[0], A[0]


# ---------------------------------------------------------------------------
# latitude functions and base matrix kernels


@dataclass(frozen=True)
class AffineLatFunction:
    """``b(phi) = c0 + c1 * phi / pi``, required positive on ``[0, pi]``."""

    c0: float
    c1: float = 0.0

    def __post_init__(self):
        if min(self.c0, self.c0 + self.c1) <= 0:
            raise ValueError(f"b(phi) = {self.c0} + {self.c1}*phi/pi is not positive on [0, pi]")

    def __call__(self, phi):
        return self.c0 + self.c1 * np.asarray(phi) / math.pi


@dataclass(frozen=True, eq=False)
class MatrixKernel:
    """Base covariance ``B(phi1, phi2; t) = M * exp(-|phi1-phi2|/ell) * exp(-alpha|t|)``.

    ``M`` must be symmetric positive semidefinite with entries in ``(-1, 1)``.
    A user callable may be supplied instead through ``fn`` together with an
    explicit sup-norm bound ``sup``.
    """

    matrix: Optional[np.ndarray] = None
    length_scale: Optional[float] = None
    alpha: float = 0.0
    fn: Optional[Callable] = None
    sup: Optional[float] = None

    def __post_init__(self):
        if self.fn is None:
            M = np.atleast_2d(np.asarray(self.matrix, dtype=float))
            if M.ndim != 2 or M.shape[0] != M.shape[1]:
                raise ValueError("base matrix must be square")
            if not np.allclose(M, M.T, rtol=0, atol=1e-14):
                raise ValueError("base matrix must be symmetric")
            if np.max(np.abs(M)) >= 1:
                raise ValueError("base matrix entries must lie in (-1, 1)")
            if np.linalg.eigvalsh(M)[0] < -1e-12 * max(1.0, np.max(np.abs(M))):
                raise ValueError("base matrix must be positive semidefinite")
            if self.length_scale is not None and self.length_scale <= 0:
                raise ValueError("length_scale must be positive")
            if self.alpha < 0:
                raise ValueError("alpha must be non-negative")
            M.setflags(write=False)
            object.__setattr__(self, "matrix", M)
            object.__setattr__(self, "sup", float(np.max(np.abs(M))))
        elif self.sup is None or not 0 <= self.sup < 1:
            raise ValueError("a callable base kernel needs a sup-norm bound in [0, 1)")

    @property
    def m(self):
        if self.matrix is not None:
            return self.matrix.shape[0]
        return np.atleast_2d(self.fn(0.0, 0.0, 0.0)).shape[0]

    @property
    def temporal(self):
        return self.fn is not None or self.alpha > 0

    def __call__(self, phi1, phi2, t=0.0):
        if self.fn is not None:
            B = np.atleast_2d(np.asarray(self.fn(phi1, phi2, t), dtype=float))
            if np.any(np.abs(B) >= 1):
                raise KernelError("base kernel entries must lie in (-1, 1)")
            return B
        scale = math.exp(-self.alpha * abs(t))
        if self.length_scale is not None:
            scale *= math.exp(-abs(phi1 - phi2) / self.length_scale)
        return self.matrix * scale


# ---------------------------------------------------------------------------
# closed forms


def cosh_closed_form(bi, bj, theta):
    """``cosh((pi - |theta|) a) / (a sinh(pi a))`` with ``a = sqrt(bi + bj)``."""
    s = np.asarray(bi, dtype=float) + np.asarray(bj, dtype=float)
    if np.any(s <= 0):
        raise ValueError("cosh closed form needs bi + bj > 0")
    a = np.sqrt(s)
    theta = np.abs(np.asarray(theta, dtype=float))
    if np.any(theta > 2 * math.pi + 1e-12):
        raise ValueError("theta must lie in [-2*pi, 2*pi]")
    # ratio form avoids overflow of cosh/sinh for large a
    x = math.pi * a
    num = np.exp(-theta * a) + np.exp((theta - 2 * math.pi) * a)
    den = a * (1.0 - np.exp(-2.0 * x))
    return num / den


def _check_b(b):
    b = np.asarray(b, dtype=float)
    if np.any(np.abs(b) >= 1):
        raise ValueError("closed form needs |b| < 1")
    return b


def log_closed_form(b, theta):
    """``-log(1 - 2 b cos(theta) + b**2)``."""
    b = _check_b(b)
    return -np.log1p(b * b - 2.0 * b * np.cos(theta))


def poisson_closed_form(b, theta):
    """``(1 - b**2) / (1 - 2 b cos(theta) + b**2)``."""
    b = _check_b(b)
    return (1.0 - b * b) / (1.0 - 2.0 * b * np.cos(theta) + b * b)


# ---------------------------------------------------------------------------
# builtin families


def make_cosh_family(b):
    """Rational-coefficient family whose series sums to a cosh/sinh ratio.

    ``B_{n,ij} = c_n / ((n**2 + b_i(phi1) + b_j(phi2)) pi)`` with ``c_0 = 1``
    and ``c_n = 2`` otherwise; all ``A_n`` vanish.

    Parameters
    ----------
    b : sequence of callables
        One positive latitude function per component.  Plain numbers are
        treated as constants.
    """
    funcs = []
    for bi in b:
        if callable(bi):
            funcs.append(bi)
        else:
            funcs.append(AffineLatFunction(float(bi)))
    m = len(funcs)
    if m < 1:
        raise ValueError("need at least one latitude function")

    def sums(phi1, phi2):
        b1 = np.array([float(f(phi1)) for f in funcs])
        b2 = np.array([float(f(phi2)) for f in funcs])
        if np.any(b1 <= 0) or np.any(b2 <= 0):
            raise KernelError("latitude functions must be positive on [0, pi]")
        return b1[:, None] + b2[None, :]

    def cos_coef(ns, phi1, phi2, t):
        s = sums(phi1, phi2)
        n2 = (ns.astype(float) ** 2)[:, None, None]
        weight = np.where(ns == 0, 1.0, 2.0)[:, None, None]
        return weight / ((n2 + s[None]) * math.pi)

    def closed_form(phi1, phi2, theta, t):
        s = sums(phi1, phi2)
        theta = np.asarray(theta, dtype=float)
        return cosh_closed_form(s, 0.0, theta[..., None, None])

    return CoefficientFamily(
        m=m, cos_coef=cos_coef, tail=lambda N: 2.0 / (math.pi * max(N, 1e-300)),
        closed_form=closed_form, kind="cosh", params={"b": [repr(f) for f in funcs]})


def _hadamard_family(base, kind):
    if not isinstance(base, MatrixKernel):
        base = MatrixKernel(matrix=base)
    rho = base.sup
    m = base.m

    def base_at(phi1, phi2, t):
        B = base(phi1, phi2, t)
        if B.shape != (m, m):
            raise KernelError(f"base kernel returned shape {B.shape}, expected {(m, m)}")
        return B

    if kind == "log":
        def cos_coef(ns, phi1, phi2, t):
            B = base_at(phi1, phi2, t)
            safe = np.maximum(ns, 1).astype(float)[:, None, None]
            out = (2.0 / safe) * B[None] ** ns[:, None, None]
            out[ns == 0] = 0.0
            return out

        def closed_form(phi1, phi2, theta, t):
            B = base_at(phi1, phi2, t)
            return log_closed_form(B, np.asarray(theta, dtype=float)[..., None, None])

        def tail(N):
            if rho == 0:
                return 0.0
            return 2.0 * rho ** (N + 1) / ((N + 1) * (1.0 - rho))
    else:
        def cos_coef(ns, phi1, phi2, t):
            B = base_at(phi1, phi2, t)
            out = 2.0 * B[None] ** ns[:, None, None]
            out[ns == 0] = 1.0
            return out

        def closed_form(phi1, phi2, theta, t):
            B = base_at(phi1, phi2, t)
            return poisson_closed_form(B, np.asarray(theta, dtype=float)[..., None, None])

        def tail(N):
            if rho == 0:
                return 0.0
            return 2.0 * rho ** (N + 1) / (1.0 - rho)

    params = {"sup": rho}
    if base.matrix is not None:
        params.update(matrix=base.matrix.tolist(), length_scale=base.length_scale,
                      alpha=base.alpha)
    return CoefficientFamily(m=m, cos_coef=cos_coef, tail=tail, temporal=base.temporal,
                             closed_form=closed_form, kind=kind, params=params)


def make_log_family(base):
    """Hadamard-power family summing to ``-log(1 - 2 b cos(theta) + b**2)``.

    ``B_0 = 0`` and ``B_n = (2/n) B^{on}`` (entrywise power) for ``n >= 1``.
    ``base`` is a :class:`MatrixKernel` or a constant matrix.
    """
    return _hadamard_family(base, "log")


def make_poisson_family(base):
    """Hadamard-power family summing to the Poisson kernel.

    ``B_0`` is the all-ones matrix and ``B_n = 2 B^{on}`` for ``n >= 1``; the
    weight 2 is what makes the series equal ``(1-b^2)/(1-2b cos(theta)+b^2)``.
    """
    return _hadamard_family(base, "poisson")


def make_lambda_family(base, lam, m=None, tail=None):
    """Add sine coefficients ``A_n = lam * B_n`` to a cosine family.

    ``base`` is either a :class:`CoefficientFamily` (its ``B_n`` are reused)
    or a scalar kernel ``b(n, phi1, phi2)`` in which case ``B_n = b_n I_m``
    and ``tail`` bounds the tail of ``b_n``.
    """
    lam = float(lam)
    if abs(lam) > 1:
        raise ValueError(f"|lambda| must be <= 1, got {lam}")
    if isinstance(base, CoefficientFamily):
        if not base.reversible:
            raise ValueError("base family must have vanishing sine coefficients")
        cos_coef = base.cos_coef
        m = base.m
        base_tail = base.tail
        temporal = base.temporal
        base_kind = base.kind
    else:
        m = 1 if m is None else int(m)
        eye = np.eye(m)
        scalar = base

        def cos_coef(ns, phi1, phi2, t):
            vals = np.array([float(scalar(int(n), phi1, phi2)) for n in ns])
            return vals[:, None, None] * eye[None]

        base_tail = tail
        temporal = False
        base_kind = "scalar"

    sin_coef = None
    if lam != 0:
        def sin_coef(ns, phi1, phi2, t):
            return lam * cos_coef(ns, phi1, phi2, t)

    full_tail = None
    if base_tail is not None:
        def full_tail(N):
            return (1.0 + abs(lam)) * base_tail(N)

    return CoefficientFamily(m=m, cos_coef=cos_coef, sin_coef=sin_coef, tail=full_tail,
                             temporal=temporal, kind="lambda",
                             params={"lambda": lam, "base": base_kind})


def make_separable_time(spatial, alpha):
    """Multiply every coefficient of ``spatial`` by ``exp(-alpha |t|)``."""
    alpha = float(alpha)
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")

    def cos_coef(ns, phi1, phi2, t):
        return spatial.cos_coef(ns, phi1, phi2, 0.0) * math.exp(-alpha * abs(t))

    sin_coef = None
    if spatial.sin_coef is not None:
        def sin_coef(ns, phi1, phi2, t):
            return spatial.sin_coef(ns, phi1, phi2, 0.0) * math.exp(-alpha * abs(t))

    closed_form = None
    if spatial.closed_form is not None:
        def closed_form(phi1, phi2, theta, t):
            return spatial.closed_form(phi1, phi2, theta, 0.0) * math.exp(-alpha * abs(t))

    return CoefficientFamily(m=spatial.m, cos_coef=cos_coef, sin_coef=sin_coef,
                             tail=spatial.tail, temporal=True, closed_form=closed_form,
                             kind="separable", params={"alpha": alpha, "spatial": spatial.kind})


def table_family(B: Sequence, A: Optional[Sequence] = None, temporal=False):
    """Family with latitude-independent coefficients listed per level.

    Levels past the table are zero, so the series is finite and the tail
    bound is exact (zero beyond the last level).
    """
    Bt = np.asarray(B, dtype=float)
    if Bt.ndim == 1:
        Bt = Bt[:, None, None]
    if Bt.ndim != 3 or Bt.shape[1] != Bt.shape[2]:
        raise ValueError("B table must have shape (levels, m, m)")
    At = None
    if A is not None:
        At = np.asarray(A, dtype=float)
        if At.ndim == 1:
            At = At[:, None, None]
        if At.shape != Bt.shape:
            raise ValueError("A table must match the shape of B")
    levels, m = Bt.shape[0], Bt.shape[1]

    def lookup(table):
        def coef(ns, phi1, phi2, t):
            out = np.zeros((ns.size, m, m))
            inside = ns < levels
            out[inside] = table[ns[inside]]
            return out
        return coef

    def tail(N):
        rest = np.abs(Bt[N + 1:]).max(axis=(1, 2)) if N + 1 < levels else np.zeros(0)
        if At is not None and N + 1 < levels:
            rest = rest + np.abs(At[N + 1:]).max(axis=(1, 2))
        return float(np.sum(rest))

    return CoefficientFamily(m=m, cos_coef=lookup(Bt),
                             sin_coef=None if At is None else lookup(At),
                             tail=tail, temporal=temporal, kind="table",
                             params={"B": Bt.tolist(), "A": None if At is None else At.tolist()})
