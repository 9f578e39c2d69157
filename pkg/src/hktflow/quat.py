"""Quaternion arithmetic and hyperhermitian matrix algebra.

Quaternions are stored as float arrays whose last axis has length 4,
holding components (e0, e1, e2, e3) with respect to the units 1, i, j, k.
Matrices of quaternions use shape (n, n, 4); fields of matrices append
grid axes after the component axis.

A quaternionic matrix H is hyperhermitian when H[s, r] = conj(H[r, s])
for all r, s.  Such a matrix has n real eigenvalues, each appearing
twice among the eigenvalues of its 2n x 2n complex adjoint.
"""

from __future__ import annotations

import numpy as np

from .errors import MalformedInputError, NumericalDegeneracyError

HERMITICITY_TOL = 1e-12
PAIRING_RTOL = 1e-8


def quat_mul(a, b):
    """Hamilton product of quaternion arrays (broadcasts over leading axes).

    Associative, non-commutative: i*j = k while j*i = -k, and
    conj(a*b) = conj(b)*conj(a).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a0, a1, a2, a3 = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    b0, b1, b2, b3 = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
            a0 * b1 + a1 * b0 + a2 * b3 - a3 * b2,
            a0 * b2 - a1 * b3 + a2 * b0 + a3 * b1,
            a0 * b3 + a1 * b2 - a2 * b1 + a3 * b0,
        ],
        axis=-1,
    )


def quat_conj(q):
    """Quaternion conjugate: negate the e1, e2, e3 components."""
    q = np.asarray(q, dtype=float)
    out = q.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def quat_abs2(q):
    """Squared norm q * conj(q); real and non-negative."""
    q = np.asarray(q, dtype=float)
    return np.sum(q * q, axis=-1)


def _basis_table():
    # structure constants T[i, j, c] with e_i e_j = sum_c T[i, j, c] e_c
    table = np.zeros((4, 4, 4))
    eye = np.eye(4)
    for i in range(4):
        for j in range(4):
            table[i, j] = quat_mul(eye[i], eye[j])
    return table


STRUCTURE = _basis_table()


def entries_of(H):
    """Coerce a HyperhermitianMatrix or raw array to an (n, n, 4) array."""
    if isinstance(H, HyperhermitianMatrix):
        return H.entries
    arr = np.asarray(H, dtype=float)
    if arr.ndim != 3 or arr.shape[0] != arr.shape[1] or arr.shape[2] != 4:
        raise MalformedInputError(
            f"expected quaternionic matrix of shape (n, n, 4), got {arr.shape}"
        )
    return arr


def hermiticity_defect(entries):
    """Largest absolute deviation of H from conj-transpose symmetry."""
    entries = entries_of(entries)
    adjoint = np.swapaxes(quat_conj(entries), 0, 1)
    return float(np.max(np.abs(entries - adjoint))) if entries.size else 0.0


class HyperhermitianMatrix:
    """An n x n quaternionic matrix equal to its conjugate transpose.

    Validates the symmetry on construction (absolute tolerance
    ``HERMITICITY_TOL``), then stores an exactly symmetrized copy so that
    downstream algebra never sees roundoff asymmetry.
    """

    __slots__ = ("entries",)

    def __init__(self, entries, tol=HERMITICITY_TOL):
        arr = entries_of(entries)
        defect = hermiticity_defect(arr)
        if defect > tol:
            raise MalformedInputError(
                f"matrix is not hyperhermitian: asymmetry {defect:.3e} exceeds {tol:.0e}"
            )
        adjoint = np.swapaxes(quat_conj(arr), 0, 1)
        self.entries = 0.5 * (arr + adjoint)

    @property
    def n(self):
        return self.entries.shape[0]

    @classmethod
    def identity(cls, n):
        ent = np.zeros((n, n, 4))
        ent[np.arange(n), np.arange(n), 0] = 1.0
        return cls(ent)

    @classmethod
    def diagonal(cls, values):
        values = np.asarray(values, dtype=float)
        n = values.shape[0]
        ent = np.zeros((n, n, 4))
        ent[np.arange(n), np.arange(n), 0] = values
        return cls(ent)

    def __repr__(self):
        return f"HyperhermitianMatrix(n={self.n})"


def complex_adjoint(H):
    """Embed a quaternionic matrix into a 2n x 2n complex matrix.

    Each entry q = a + b*j maps to the block [[a, b], [-conj(b), conj(a)]]
    with a = e0 + e1*i and b = e2 + e3*i; the blocks are arranged so the
    result is Hermitian exactly when H is hyperhermitian, and the embedding
    is multiplicative and sends I_n to I_2n.

    Raises MalformedInputError when H is not hyperhermitian within 1e-12.
    """
    ent = entries_of(H)
    if not isinstance(H, HyperhermitianMatrix):
        H = HyperhermitianMatrix(ent)
        ent = H.entries
    return _complex_adjoint_raw(ent)


def _complex_adjoint_raw(ent):
    # no symmetry requirement; used for general quaternionic matrices too
    a = ent[..., 0] + 1j * ent[..., 1]
    b = ent[..., 2] + 1j * ent[..., 3]
    n = ent.shape[0]
    out = np.empty((2 * n, 2 * n), dtype=complex)
    out[:n, :n] = a
    out[:n, n:] = b
    out[n:, :n] = -b.conj()
    out[n:, n:] = a.conj()
    return out


def quat_from_complex_adjoint(M, tol=1e-10):
    """Invert the complex embedding, validating the block structure."""
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] % 2:
        raise MalformedInputError(f"expected a 2n x 2n complex matrix, got {M.shape}")
    n = M.shape[0] // 2
    a, b = M[:n, :n], M[:n, n:]
    defect = max(
        float(np.max(np.abs(M[n:, :n] + b.conj()))) if n else 0.0,
        float(np.max(np.abs(M[n:, n:] - a.conj()))) if n else 0.0,
    )
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if defect > tol * scale:
        raise MalformedInputError(
            f"matrix is not in the image of the embedding: block defect {defect:.3e}"
        )
    return np.stack([a.real, a.imag, b.real, b.imag], axis=-1)


def quat_matmul(A, B):
    """Quaternionic matrix product on raw (n, n, 4) arrays."""
    A = entries_of(A)
    B = entries_of(B)
    return np.einsum("rsi,stj,ijc->rtc", A, B, STRUCTURE)


def quat_conj_transpose(A):
    """Conjugate transpose of a raw quaternionic matrix."""
    return np.swapaxes(quat_conj(entries_of(A)), 0, 1)


def _paired(spectrum, rtol=PAIRING_RTOL):
    """Collapse the sorted 2n-spectrum of a complex adjoint into n pairs.

    The eigenvalues of the adjoint of a hyperhermitian matrix occur in
    equal pairs; a gap larger than rtol times the spectral radius between
    the members of a pair signals numerical degeneracy.
    """
    spectrum = np.asarray(spectrum, dtype=float)
    if spectrum.ndim != 1 or spectrum.size % 2:
        raise MalformedInputError("spectrum must be a 1-d array of even length")
    radius = float(np.max(np.abs(spectrum))) if spectrum.size else 0.0
    gaps = np.abs(spectrum[1::2] - spectrum[0::2])
    worst = float(np.max(gaps)) if gaps.size else 0.0
    if worst > rtol * radius:
        raise NumericalDegeneracyError(
            f"eigenvalue pairing failed: gap {worst:.3e} exceeds "
            f"{rtol:.0e} * spectral radius {radius:.3e}"
        )
    return 0.5 * (spectrum[0::2] + spectrum[1::2])


def eigenvalues(H):
    """Real eigenvalues of a hyperhermitian matrix, sorted descending.

    Computed from the complex adjoint; each adjoint eigenvalue pair is
    returned once (pair mean).  The product of the returned values equals
    moore_det(H) up to roundoff.
    """
    chi = complex_adjoint(H)
    spectrum = np.linalg.eigvalsh(chi)
    pairs = _paired(spectrum)
    return pairs[::-1].copy()


def moore_det(H):
    """Real determinant of a hyperhermitian matrix.

    Equal to the product of the paired adjoint eigenvalues, which is the
    square root of det(complex_adjoint(H)) with the sign consistent with
    continuity from the identity.  Real diagonal matrices short-circuit to
    the exact product of their diagonal entries.
    """
    ent = entries_of(H)
    if not isinstance(H, HyperhermitianMatrix):
        ent = HyperhermitianMatrix(ent).entries
    n = ent.shape[0]
    off = ent.copy()
    off[np.arange(n), np.arange(n)] = 0.0
    if not np.any(off):
        return float(np.prod(ent[np.arange(n), np.arange(n), 0]))
    return float(np.prod(eigenvalues(ent)))


def eig2_pair(a, d, q2):
    """Descending eigenvalues of [[a, q], [conj(q), d]] from |q|^2, batched.

    Shared by the field eigensolver and the flow engine so both produce the
    same bits for the same inputs.
    """
    mid = 0.5 * (a + d)
    half = np.sqrt((0.5 * (a - d)) ** 2 + q2)
    return np.stack([mid + half, mid - half], axis=-1)


def eigenvalues_field(entries):
    """Eigenvalues of a field of hyperhermitian matrices.

    ``entries`` has shape (n, n, 4, *grid); returns shape (*grid, n) with
    eigenvalues sorted descending along the last axis.  Sizes n = 1, 2 use
    closed forms; larger n goes through a batched Hermitian eigensolve of
    the complex adjoints.
    """
    entries = np.asarray(entries, dtype=float)
    n = entries.shape[0]
    if n == 1:
        return entries[0, 0, 0][..., None].copy()
    if n == 2:
        q2 = np.sum(entries[0, 1] ** 2, axis=0)
        return eig2_pair(entries[0, 0, 0], entries[1, 1, 0], q2)
    grid_shape = entries.shape[3:]
    flat = entries.reshape(n, n, 4, -1)
    npts = flat.shape[-1]
    chi = np.empty((npts, 2 * n, 2 * n), dtype=complex)
    a = flat[..., 0, :] + 1j * flat[..., 1, :]
    b = flat[..., 2, :] + 1j * flat[..., 3, :]
    chi[:, :n, :n] = np.moveaxis(a, -1, 0)
    chi[:, :n, n:] = np.moveaxis(b, -1, 0)
    chi[:, n:, :n] = -np.moveaxis(b, -1, 0).conj()
    chi[:, n:, n:] = np.moveaxis(a, -1, 0).conj()
    spec = np.linalg.eigvalsh(chi)
    lam = 0.5 * (spec[:, 0::2] + spec[:, 1::2])
    return lam[:, ::-1].reshape(*grid_shape, n)


def real_hessian_comparison(H, D2):
    """Determinant comparison between a real Hessian and its quaternionic one.

    For a C^2 function whose quaternionic Hessian is H and whose full real
    Hessian is D2 (a 4n x 4n symmetric matrix), checks
    det(D2) <= 2**(4n) * moore_det(H)**4 within an absolute slack of
    1e-8 times the scale of the two sides.  Meaningful when D2 >= 0;
    callers skip indefinite inputs.
    """
    ent = entries_of(H)
    n = ent.shape[0]
    D2 = np.asarray(D2, dtype=float)
    if D2.shape != (4 * n, 4 * n):
        raise MalformedInputError(
            f"dimension mismatch: expected real Hessian of shape {(4 * n, 4 * n)}, "
            f"got {D2.shape}"
        )
    lhs = float(np.linalg.det(D2))
    rhs = float(2.0 ** (4 * n) * moore_det(ent) ** 4)
    scale = max(1.0, abs(lhs), abs(rhs))
    return lhs <= rhs + 1e-8 * scale
