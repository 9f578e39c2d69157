"""Scalar fields on a discretized flat quaternionic torus and their calculus.

The torus has n quaternionic coordinates, 4n real coordinates x_p^r
(p = 0..3 within a block, r = 1..n), each of period 2 pi.  A grid
activates an ordered subset of the real coordinates; fields are constant
along inactive ones, so derivatives there vanish identically.  All
differentiation is spectral (FFT with integer frequencies), exact on
band-limited inputs; Nyquist modes are zeroed in every derivative
multiplier.
"""

from __future__ import annotations

import functools
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .errors import AdmissibilityError, MalformedInputError
from . import cones
from . import quat

TWO_PI = 2.0 * np.pi
LEAF_BLOCK = 64


@functools.lru_cache(maxsize=1)
def fft_workers():
    """Worker cap for scipy.fft, from HKTFLOW_THREADS (default 1).

    Worker count never changes results: parallelism only splits independent
    1-d transforms.
    """
    raw = os.environ.get("HKTFLOW_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise MalformedInputError(f"HKTFLOW_THREADS={raw!r} is not an integer")
    return max(1, value)


def coordinate_label(c):
    """Human-readable name of flat coordinate index c: x{p}^{r}, r 1-based."""
    return f"x{c % 4}^{c // 4 + 1}"


@dataclass(frozen=True)
class TorusGrid:
    """Discretization: quaternionic dimension, active coordinates, resolutions.

    active holds strictly increasing flat coordinate indices in [0, 4n);
    points_per_dim holds one power-of-two resolution per active coordinate.
    """

    n: int
    active: tuple
    points: tuple

    def __post_init__(self):
        if self.n < 1:
            raise MalformedInputError(f"quaternionic dimension n={self.n} must be >= 1")
        active = tuple(int(a) for a in self.active)
        points = tuple(int(m) for m in self.points)
        if len(active) != len(points):
            raise MalformedInputError(
                f"{len(active)} active coordinates but {len(points)} resolutions"
            )
        if not active:
            raise MalformedInputError("at least one active coordinate required")
        if any(not 0 <= a < 4 * self.n for a in active):
            raise MalformedInputError(
                f"active coordinates {active} outside 0..{4 * self.n - 1}"
            )
        if any(a >= b for a, b in zip(active, active[1:])):
            raise MalformedInputError("active coordinates must be strictly increasing")
        for m in points:
            if m < 2 or m & (m - 1):
                raise MalformedInputError(f"points per dim must be a power of two >= 2, got {m}")
        object.__setattr__(self, "active", active)
        object.__setattr__(self, "points", points)

    @property
    def shape(self):
        return self.points

    @property
    def num_points(self):
        return int(np.prod(self.points))

    @property
    def spectral_shape(self):
        return self.points[:-1] + (self.points[-1] // 2 + 1,)

    @property
    def nyquist_sq_sum(self):
        # sum over active coordinates of (m/2)^2, the dt-formula denominator
        return float(sum((m // 2) ** 2 for m in self.points))

    def axis_of(self, c):
        """Array axis of flat coordinate c, or None when inactive."""
        try:
            return self.active.index(c)
        except ValueError:
            return None

    def coordinate_values(self, axis):
        m = self.points[axis]
        x = TWO_PI * np.arange(m) / m
        shape = [1] * len(self.points)
        shape[axis] = m
        return x.reshape(shape)

    @functools.cached_property
    def _freqs(self):
        # integer frequency array per active axis, broadcast over the
        # rfft spectrum, with the Nyquist entry zeroed
        out = []
        naxes = len(self.points)
        for axis, m in enumerate(self.points):
            if axis == naxes - 1:
                k = np.arange(m // 2 + 1, dtype=float)
            else:
                k = np.fft.fftfreq(m) * m
            k[np.abs(k) == m // 2] = 0.0
            shape = [1] * naxes
            shape[axis] = k.size
            out.append(k.reshape(shape))
        return tuple(out)

    def freq(self, axis):
        return self._freqs[axis]


@dataclass
class ScalarField:
    """A real function sampled on the active grid."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise MalformedInputError(
                f"field shape {self.values.shape} does not match grid {self.grid.shape}"
            )

    def copy(self):
        return ScalarField(self.grid, self.values.copy())


@dataclass
class QuaternionField:
    """Quaternion-valued function: components stacked on a leading axis of 4."""

    grid: TorusGrid
    values: np.ndarray


@dataclass
class HessianField:
    """Field of n x n hyperhermitian matrices, shape (n, n, 4, *grid).

    asymmetry records the worst deviation from conj-transpose symmetry seen
    before symmetrization (spectral roundoff only, for real inputs).
    """

    grid: TorusGrid
    values: np.ndarray
    asymmetry: float = 0.0


@dataclass(frozen=True)
class Mode:
    amplitude: float
    wave: tuple
    phase: float = 0.0


class ModeSum:
    """Band-limited test function: sum of amplitude * cos(<wave, x> + phase).

    wave holds one integer frequency per active coordinate and must stay
    strictly below the Nyquist frequency of that coordinate.
    """

    def __init__(self, modes):
        self.modes = [
            m if isinstance(m, Mode) else Mode(float(m[0]), tuple(m[1]), float(m[2]) if len(m) > 2 else 0.0)
            for m in modes
        ]

    def validate(self, grid):
        for i, mode in enumerate(self.modes):
            if len(mode.wave) != len(grid.active):
                raise MalformedInputError(
                    f"mode {i}: wave length {len(mode.wave)} does not match "
                    f"{len(grid.active)} active coordinates"
                )
            for j, (w, m) in enumerate(zip(mode.wave, grid.points)):
                if w != int(w):
                    raise MalformedInputError(f"mode {i}: wave[{j}]={w} is not an integer")
                if abs(int(w)) >= m // 2:
                    raise MalformedInputError(
                        f"mode {i}: wave[{j}]={w} at or above Nyquist {m // 2}"
                    )

    def evaluate(self, grid):
        self.validate(grid)
        values = np.zeros(grid.shape)
        for mode in self.modes:
            arg = np.zeros(grid.shape)
            for axis, w in enumerate(mode.wave):
                if w:
                    arg = arg + w * grid.coordinate_values(axis)
            values += mode.amplitude * np.cos(arg + mode.phase)
        return ScalarField(grid, values)


# ---------------------------------------------------------------------------
# spectral plumbing


def rfftn(values):
    return scipy.fft.rfftn(values, workers=fft_workers())


def irfftn(spec, shape):
    return scipy.fft.irfftn(spec, s=shape, workers=fft_workers())


def irfftn_batch(specs, shape):
    """Inverse transform a stack of spectra in one call (leading batch axis)."""
    axes = tuple(range(1, 1 + len(shape)))
    return scipy.fft.irfftn(specs, s=shape, axes=axes, workers=fft_workers())


def spectral_derivative(u_hat, grid, axis):
    """First derivative along an active axis, Nyquist zeroed."""
    return irfftn(1j * grid.freq(axis) * u_hat, grid.shape)


# ---------------------------------------------------------------------------
# quaternionic calculus

# signature of the second factor in the second-derivative pairing:
# +1 for the real unit, -1 for i, j, k
CJ = np.array([1.0, -1.0, -1.0, -1.0])


def crf_derivative(u, r, variant):
    """First-order quaternionic derivative of a real field in block r (1-based).

    variant 'bar' assembles sum_i e_i d/dx_i^r u; variant 'plain' assembles
    d/dx_0^r u - sum_{i>=1} e_i d/dx_i^r u.  Components along inactive
    coordinates are identically zero.  Exact on band-limited inputs.
    """
    if variant not in ("bar", "plain"):
        raise MalformedInputError(f"unknown variant {variant!r}")
    grid = u.grid
    if not 1 <= r <= grid.n:
        raise MalformedInputError(f"block index r={r} out of range 1..{grid.n}")
    u_hat = rfftn(u.values)
    comps = np.zeros((4,) + grid.shape)
    for p in range(4):
        axis = grid.axis_of(4 * (r - 1) + p)
        if axis is None:
            continue
        comps[p] = spectral_derivative(u_hat, grid, axis)
    if variant == "plain":
        comps[1:] = -comps[1:]
    return QuaternionField(grid, comps)


def hessian_multiplier(grid, r, s, c):
    """Fourier multiplier of component c of Hessian entry (r, s), 0-based blocks.

    Entry (r, s) is a quarter of the bar-derivative in block r of the plain
    derivative in block s; expanding both in components gives
    -1/4 sum_{i,j} cj_j T[i,j,c] k_i^r k_j^s with T the quaternion structure
    constants.  Returns None when the multiplier vanishes identically.
    """
    mult = None
    for i in range(4):
        axis_i = grid.axis_of(4 * r + i)
        if axis_i is None:
            continue
        ki = grid.freq(axis_i)
        for j in range(4):
            coeff = CJ[j] * quat.STRUCTURE[i, j, c]
            if coeff == 0.0:
                continue
            axis_j = grid.axis_of(4 * s + j)
            if axis_j is None:
                continue
            term = (-0.25 * coeff) * (ki * grid.freq(axis_j))
            mult = term if mult is None else mult + term
    if mult is None or not np.any(mult):
        return None
    return np.broadcast_to(mult, grid.spectral_shape)


class HessianPlan:
    """Cached Fourier multipliers of the nonvanishing Hessian components.

    Holds the upper-triangle slots (r <= s); the lower triangle follows by
    the conjugate-transpose mirror, which the multiplier algebra satisfies
    identically.  full_slots/full_multipliers additionally carry the lower
    triangle computed independently, for asymmetry measurement.
    """

    def __init__(self, grid):
        n = grid.n
        upper, lower = [], []
        for r in range(n):
            for s in range(n):
                for c in range(4):
                    mult = hessian_multiplier(grid, r, s, c)
                    if mult is not None:
                        (upper if r <= s else lower).append(((r, s, c), mult))
        self.grid = grid
        self.slots = tuple(slot for slot, _ in upper)
        self.multipliers = (
            np.ascontiguousarray(np.stack([m for _, m in upper]))
            if upper else np.zeros((0,) + grid.spectral_shape)
        )
        self.full_slots = self.slots + tuple(slot for slot, _ in lower)
        self.full_multipliers = (
            np.ascontiguousarray(np.stack([m for _, m in upper + lower]))
            if upper or lower else np.zeros((0,) + grid.spectral_shape)
        )
        self.slot_index = {slot: a for a, slot in enumerate(self.slots)}

    def apply(self, u_hat):
        """Upper-triangle Hessian components of a field, (C, *grid)."""
        if not self.slots:
            return np.zeros((0,) + self.grid.shape)
        return irfftn_batch(self.multipliers * u_hat, self.grid.shape)

    def scatter(self, comps):
        """Assemble the full hyperhermitian (n, n, 4, *grid) array by mirroring."""
        n = self.grid.n
        values = np.zeros((n, n, 4) + self.grid.shape)
        for (r, s, c), comp in zip(self.slots, comps):
            values[r, s, c] = comp
            if r != s:
                values[s, r, c] = comp if c == 0 else -comp
        return values


@functools.lru_cache(maxsize=32)
def hessian_plan(grid):
    return HessianPlan(grid)


def q_hessian(u, measure_asymmetry=False):
    """Quaternionic Hessian of a real field: (n, n, 4, *grid), hyperhermitian.

    The result mirrors the upper triangle, which agrees with computing every
    entry independently up to summation roundoff; pass measure_asymmetry to
    compute the lower triangle independently and record the worst deviation.
    For n = 1 the single entry is a quarter of the real 4-dimensional
    Laplacian.
    """
    grid = u.grid
    plan = hessian_plan(grid)
    u_hat = rfftn(u.values)
    values = plan.scatter(plan.apply(u_hat))
    asym = 0.0
    if measure_asymmetry and plan.full_slots:
        comps = irfftn_batch(plan.full_multipliers * u_hat, grid.shape)
        independent = np.zeros_like(values)
        for (r, s, c), comp in zip(plan.full_slots, comps):
            independent[r, s, c] = comp
        adjoint = np.swapaxes(independent.copy(), 0, 1)
        adjoint[:, :, 1:] = -adjoint[:, :, 1:]
        asym = float(np.max(np.abs(independent - adjoint)))
    return HessianField(grid, values, asymmetry=asym)


def q_laplacian(u):
    """Real trace of the quaternionic Hessian: a quarter of the 4n-Laplacian."""
    grid = u.grid
    u_hat = rfftn(u.values)
    mult = np.zeros(grid.spectral_shape)
    for axis in range(len(grid.points)):
        k = grid.freq(axis)
        mult = mult - 0.25 * k * k
    return ScalarField(grid, irfftn(mult * u_hat, grid.shape))


# ---------------------------------------------------------------------------
# reductions


def leaf_sums(values, block=LEAF_BLOCK):
    """Per-block partial sums over fixed contiguous blocks of the flat array."""
    x = np.ascontiguousarray(values, dtype=float).ravel()
    pad = (-x.size) % block
    if pad:
        x = np.concatenate([x, np.zeros(pad)])
    return x.reshape(-1, block).sum(axis=1)


def combine_tree(sums):
    """Fixed binary reduction of leaf sums; zero-padded at odd levels."""
    s = np.asarray(sums, dtype=float)
    while s.size > 1:
        if s.size % 2:
            s = np.concatenate([s, [0.0]])
        s = s[0::2] + s[1::2]
    return float(s[0]) if s.size else 0.0


def pairwise_sum(values, block=LEAF_BLOCK):
    """Deterministic fixed-tree sum, independent of evaluation schedule."""
    return combine_tree(leaf_sums(values, block))


def _values_of(u):
    return u.values if isinstance(u, ScalarField) else np.asarray(u, dtype=float)


def mean(u):
    """Grid mean via the fixed pairwise reduction tree (bitwise reproducible)."""
    v = _values_of(u)
    return pairwise_sum(v) / v.size


def osc(u):
    """Oscillation: max - min over the grid."""
    v = _values_of(u)
    return float(np.max(v) - np.min(v))


def sup_norm(u):
    v = _values_of(u)
    return float(np.max(np.abs(v)))


def grad_sup_norm(u):
    """Max over the grid of the Euclidean norm of all 4n spectral partials.

    Inactive coordinates contribute zero exactly and are skipped.
    """
    grid = u.grid
    u_hat = rfftn(u.values)
    specs = np.stack([1j * grid.freq(a) * u_hat for a in range(len(grid.points))])
    grads = irfftn_batch(specs, grid.shape)
    return float(np.sqrt(np.max(np.sum(grads * grads, axis=0))))


# ---------------------------------------------------------------------------
# manufactured data


def broadcast_omega(omega, grid):
    """Constant background matrix as an (n, n, 4, *grid-broadcastable) array."""
    ent = quat.entries_of(omega)
    if ent.shape[0] != grid.n:
        raise MalformedInputError(
            f"background matrix size {ent.shape[0]} does not match grid n={grid.n}"
        )
    return ent.reshape(ent.shape + (1,) * len(grid.shape))


def manufacture_h(op, omega, phi_star):
    """Data h for which the flow's stationary state is exactly phi_star.

    h = f(eigenvalues(omega + Hess phi_star)) pointwise, computed through
    the same discrete operators the flow uses, so the residual at phi_star
    vanishes identically.  Raises AdmissibilityError (with the worst grid
    point) when phi_star is not admissible for op.
    """
    grid = phi_star.grid
    hess = q_hessian(phi_star)
    a_field = hess.values + broadcast_omega(omega, grid)
    lam = quat.eigenvalues_field(a_field)
    margin = cones.cone_margin(op.cone, lam)
    worst = float(np.min(margin))
    if not worst > 0.0:
        point = tuple(int(i) for i in np.unravel_index(int(np.argmin(margin)), margin.shape))
        raise AdmissibilityError(
            f"phi_star is not admissible: cone margin {worst:.6e} at grid point {point}",
            margin=worst,
            point=point,
        )
    return ScalarField(grid, cones.f_value(op, lam, check=False))
