"""Symmetric eigenvalue operators, their cones, gradients and subsolution margins.

Every function here is vectorized: an argument ``lam`` may be a single
eigenvalue vector of length n or an array of shape (..., n); results keep
the leading axes.  All operators are normalized so that f(1, ..., 1) = 0,
matching the wedge-quotient convention pinned by the small-n exterior
algebra oracle in :mod:`hktflow.oracles`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AdmissibilityError, MalformedInputError

LIMIT_SAMPLES = (1e3, 1e6, 1e9)
LIMIT_AGREE_TOL = 1e-3


# ---------------------------------------------------------------------------
# elementary symmetric polynomials


def sigma_all(lam, kmax):
    """sigma_0 .. sigma_kmax via the stable recursive scheme.

    Returns a list of kmax + 1 arrays shaped like lam without its last axis.
    """
    lam = np.asarray(lam, dtype=float)
    base = lam.shape[:-1]
    n = lam.shape[-1]
    e = [np.ones(base)] + [np.zeros(base) for _ in range(kmax)]
    for idx in range(n):
        x = lam[..., idx]
        for j in range(min(idx + 1, kmax), 0, -1):
            e[j] = e[j] + x * e[j - 1]
    return e


def sigma(k, lam):
    """k-th elementary symmetric polynomial of the entries of lam."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    if not 1 <= k <= n:
        raise MalformedInputError(f"sigma order k={k} outside 1..{n}")
    return sigma_all(lam, k)[k]


def sigma_deflated(lam, k):
    """sigma_k with one entry removed: returns sigma_k(lam | i) for every i.

    Shape (..., n).  Uses sigma_j(lam|i) = sigma_j(lam) - lam_i * sigma_{j-1}(lam|i).
    """
    lam = np.asarray(lam, dtype=float)
    e = sigma_all(lam, k)
    d = np.ones(lam.shape)
    for j in range(1, k + 1):
        d = e[j][..., None] - lam * d
    return d


def t_map(lam):
    """Average of the other entries: T(lam)_k = sum_{i != k} lam_i / (n - 1).

    Linear, permutation-equivariant, fixes constant vectors.  For n = 2 it
    is exactly the swap and is computed as such (this keeps the identity
    f_nminusone(lam) = log(lam1 * lam2) exact in floating point).
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    if n < 2:
        raise MalformedInputError("t_map needs at least two eigenvalues")
    if n == 2:
        return lam[..., ::-1].copy()
    total = np.sum(lam, axis=-1, keepdims=True)
    return (total - lam) / (n - 1)


# ---------------------------------------------------------------------------
# cones


@dataclass(frozen=True)
class ConeSpec:
    """Admissibility cone: 'gamma_k' (sigma_1..sigma_k > 0) or 'pullback_t'."""

    kind: str
    n: int
    k: int | None = None

    def __post_init__(self):
        if self.kind not in ("gamma_k", "pullback_t"):
            raise MalformedInputError(f"unknown cone kind {self.kind!r}")
        if self.kind == "gamma_k":
            if self.k is None or not 1 <= self.k <= self.n:
                raise MalformedInputError(f"gamma_k order k={self.k} outside 1..{self.n}")
        elif self.n < 2:
            raise MalformedInputError("pullback_t cone needs n >= 2")


def gamma_k(n, k):
    return ConeSpec("gamma_k", n, k)


def gamma_n(n):
    return ConeSpec("gamma_k", n, n)


def pullback_t(n):
    return ConeSpec("pullback_t", n)


def cone_margin(cone, lam):
    """Vectorized margin: min over the cone's defining inequalities."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape[-1] != cone.n:
        raise MalformedInputError(
            f"eigenvalue vector length {lam.shape[-1]} does not match cone n={cone.n}"
        )
    if cone.kind == "gamma_k":
        e = sigma_all(lam, cone.k)
        margin = e[1]
        for j in range(2, cone.k + 1):
            margin = np.minimum(margin, e[j])
        return margin
    return np.min(t_map(lam), axis=-1)


def cone_contains(cone, lam):
    """(contained, margin) for a single eigenvalue vector."""
    margin = cone_margin(cone, lam)
    m = float(np.min(margin))
    return m > 0.0, m


# ---------------------------------------------------------------------------
# operators


@dataclass(frozen=True)
class OperatorSpec:
    """A symmetric concave operator f with its cone.

    kinds: 'log_sigma_k' (log of the normalized k-th symmetric polynomial,
    'log_ma' is the k = n case), 'log_quotient' (difference of two such,
    k < l), 'n_minus_one_psh' (log of the product of the averaged
    eigenvalues, on the pullback cone).
    """

    kind: str
    n: int
    k: int | None = None
    l: int | None = None

    def __post_init__(self):
        if self.kind in ("log_sigma_k", "log_ma"):
            k = self.n if self.kind == "log_ma" else self.k
            if k is None or not 1 <= k <= self.n:
                raise MalformedInputError(f"operator order k={k} outside 1..{self.n}")
        elif self.kind == "log_quotient":
            if self.k is None or self.l is None or not (1 <= self.k < self.l <= self.n):
                raise MalformedInputError(
                    f"quotient orders must satisfy 1 <= k < l <= n, got k={self.k} l={self.l}"
                )
        elif self.kind == "n_minus_one_psh":
            if self.n < 2:
                raise MalformedInputError("n_minus_one_psh needs n >= 2")
        else:
            raise MalformedInputError(f"unknown operator kind {self.kind!r}")

    @property
    def order(self):
        # the k of log sigma_k; n for the determinant case
        return self.n if self.kind == "log_ma" else self.k

    @property
    def cone(self):
        if self.kind in ("log_sigma_k", "log_ma"):
            return gamma_k(self.n, self.order)
        if self.kind == "log_quotient":
            return gamma_k(self.n, self.l)
        return pullback_t(self.n)


def log_sigma_k(n, k):
    return OperatorSpec("log_sigma_k", n, k=k)


def log_ma(n):
    return OperatorSpec("log_ma", n)


def log_quotient(n, k, l):
    return OperatorSpec("log_quotient", n, k=k, l=l)


def n_minus_one_psh(n):
    return OperatorSpec("n_minus_one_psh", n)


def _require_admissible(op, lam):
    margin = cone_margin(op.cone, lam)
    worst = float(np.min(margin))
    if not worst > 0.0:
        flat = int(np.argmin(margin)) if np.ndim(margin) else 0
        point = np.unravel_index(flat, margin.shape) if np.ndim(margin) else ()
        raise AdmissibilityError(
            f"eigenvalues outside cone: margin {worst:.6e} at point {point}",
            margin=worst,
            point=point,
        )
    return margin


def f_value(op, lam, check=True):
    """Operator value f(lam); raises AdmissibilityError off the cone.

    log_sigma_k: log(sigma_k / C(n, k)); log_quotient: the difference of the
    l and k normalized terms; n_minus_one_psh: log prod T(lam).
    """
    lam = np.asarray(lam, dtype=float)
    if check:
        _require_admissible(op, lam)
    if op.kind in ("log_sigma_k", "log_ma"):
        k = op.order
        return np.log(sigma(k, lam) / math.comb(op.n, k))
    if op.kind == "log_quotient":
        e = sigma_all(lam, op.l)
        return np.log(e[op.l] / math.comb(op.n, op.l)) - np.log(
            e[op.k] / math.comb(op.n, op.k)
        )
    tl = t_map(lam)
    return np.log(np.prod(tl, axis=-1))


def f_gradient(op, lam, check=True):
    """Analytic gradient of f; strictly positive componentwise on the cone."""
    lam = np.asarray(lam, dtype=float)
    if check:
        _require_admissible(op, lam)
    if op.kind in ("log_sigma_k", "log_ma"):
        k = op.order
        return sigma_deflated(lam, k - 1) / sigma(k, lam)[..., None]
    if op.kind == "log_quotient":
        grad_l = sigma_deflated(lam, op.l - 1) / sigma(op.l, lam)[..., None]
        grad_k = sigma_deflated(lam, op.k - 1) / sigma(op.k, lam)[..., None]
        return grad_l - grad_k
    n = op.n
    inv = 1.0 / t_map(lam)
    total = np.sum(inv, axis=-1, keepdims=True)
    return (total - inv) / (n - 1)


def f_gradient_sum(op, lam, check=False):
    """sum_i df/dlam_i, the linearization weight used for time-step control."""
    return np.sum(f_gradient(op, lam, check=check), axis=-1)


def classify_f_infinity(op):
    """'unbounded' when f(lam + s e_i) diverges for every direction, else 'bounded'.

    The log sigma operators and the averaged-eigenvalue operator are
    unbounded; the quotients have finite directional limits.
    """
    return "bounded" if op.kind == "log_quotient" else "unbounded"


def directional_limits(op, lam, s_values=LIMIT_SAMPLES, agree_tol=LIMIT_AGREE_TOL):
    """Numeric limits L_i = lim_{s->inf} f(lam + s e_i), one per direction.

    Samples f at logarithmically spaced s.  A finite limit has a tail that
    shrinks by the s-ratio between refinements, so agreement of the last,
    most-refined pair within agree_tol certifies convergence; a divergent
    direction grows by ~log of the s-ratio per refinement and can never
    agree.  Divergent directions report +inf.

    lam may be a single vector or a batch (..., n); the result appends no
    axis, shape (..., n), with the limit per direction.
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    samples = np.empty((len(s_values),) + lam.shape)
    eye = np.eye(n)
    for a, s in enumerate(s_values):
        shifted = lam[..., None, :] + s * eye
        samples[a] = f_value(op, shifted, check=False)
    finite = np.abs(samples[-1] - samples[-2]) < agree_tol
    limits = np.where(finite, samples[-1], np.inf)
    return limits, finite


@dataclass(frozen=True)
class CSubReport:
    """Outcome of the parabolic subsolution margin check at one eigenvalue vector.

    margins are the per-direction limits L_i; rho = min_i L_i - dt_sub - h_val
    is the uniform gap; the check passes when rho > 0.  delta and big_r are
    surfaced constant candidates (half the gap, and a crude localization
    radius), reported for inspection only.
    """

    delta: float
    big_r: float
    margins: tuple
    classification: str
    rho: float
    passes: bool


def csub_margin(op, lam, h_val, dt_sub):
    """Subsolution margin report for eigenvalues lam against data h_val, dt_sub.

    Unbounded operators pass automatically with infinite margins; bounded
    ones require min_i L_i > dt_sub + h_val.
    """
    lam = np.asarray(lam, dtype=float)
    _require_admissible(op, lam)
    classification = classify_f_infinity(op)
    limits, _ = directional_limits(op, lam)
    rho = float(np.min(limits) - dt_sub - h_val)
    passes = rho > 0.0
    if passes:
        delta = 1.0 if math.isinf(rho) else rho / 2.0
    else:
        delta = 0.0
    big_r = float(op.n * (1.0 + np.max(np.abs(lam))) + abs(h_val) + abs(dt_sub))
    return CSubReport(
        delta=delta,
        big_r=big_r,
        margins=tuple(np.atleast_1d(limits).tolist()),
        classification=classification,
        rho=rho,
        passes=passes,
    )


def csub_margin_field(op, lam, h_values, dt_sub):
    """Worst-case subsolution gap over a grid of eigenvalue vectors.

    lam has shape (..., n), h_values shape (...); returns (rho_min, point)
    where point is the multi-index of the worst grid location.
    """
    lam = np.asarray(lam, dtype=float)
    h_values = np.asarray(h_values, dtype=float)
    _require_admissible(op, lam)
    if classify_f_infinity(op) == "unbounded":
        return math.inf, ()
    limits, _ = directional_limits(op, lam)
    rho = np.min(limits, axis=-1) - dt_sub - h_values
    flat = int(np.argmin(rho))
    point = tuple(int(i) for i in np.unravel_index(flat, rho.shape)) if rho.ndim else ()
    return float(np.min(rho)), point
