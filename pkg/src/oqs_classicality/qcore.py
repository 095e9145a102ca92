"""Dense linear algebra helpers and density-matrix validation.

States are plain complex ``numpy`` arrays. Bipartite operators are ordered
system ⊗ environment everywhere in the package.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = 1e-10
DEGENERACY_TOL = 1e-10

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (PAULI_X, PAULI_Y, PAULI_Z)


class DimensionError(ValueError):
    pass


class InvalidStateError(ValueError):
    pass


def as_matrix(m):
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-d array, got shape {m.shape}")
    return m


def kron(a, b):
    return np.kron(as_matrix(a), as_matrix(b))


def ket(i, d):
    v = np.zeros(d, dtype=complex)
    v[i] = 1.0
    return v


def ketbra(i, j, d):
    """|i><j| in dimension ``d``."""
    return np.outer(ket(i, d), ket(j, d).conj())


def dagger(m):
    return np.conj(m).T


def bloch_state(r):
    """Qubit density matrix (I + r.σ)/2 for a Bloch vector ``r``."""
    r = np.asarray(r, dtype=float)
    if r.shape != (3,):
        raise DimensionError("Bloch vector needs three components")
    if np.linalg.norm(r) > 1 + 1e-12:
        raise InvalidStateError(f"Bloch vector norm {np.linalg.norm(r)} exceeds 1")
    return 0.5 * (np.eye(2, dtype=complex) + sum(c * p for c, p in zip(r, PAULIS)))


def bloch_vector(rho):
    rho = as_matrix(rho)
    return np.array([np.trace(p @ rho).real for p in PAULIS])


def pure_state(psi):
    psi = np.asarray(psi, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def partial_trace(rho, dims, keep="system"):
    """Reduced state of a system⊗environment operator.

    ``dims`` is ``(dim_s, dim_e)``; ``keep`` selects the factor that survives.
    """
    rho = as_matrix(rho)
    ds, de = dims
    if rho.shape != (ds * de, ds * de):
        raise DimensionError(f"operator of shape {rho.shape} does not match dims {dims}")
    r = rho.reshape(ds, de, ds, de)
    if keep == "system":
        return np.einsum("ijkj->ik", r)
    if keep == "environment":
        return np.einsum("ijil->jl", r)
    raise ValueError(f"keep must be 'system' or 'environment', not {keep!r}")


@dataclass(frozen=True)
class EigenSystem:
    """Ascending eigenvalues with phase-fixed orthonormal eigenvectors (columns).

    ``degenerate_groups`` lists index tuples of eigenvalues closer than the
    degeneracy threshold; singletons are omitted.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    degenerate_groups: tuple = field(default=())

    @property
    def is_degenerate(self):
        return len(self.degenerate_groups) > 0


def fix_phase(vectors):
    """Rotate each column so its largest-magnitude entry is real positive.

    Ties on magnitude go to the lowest index.
    """
    v = np.array(vectors, dtype=complex, copy=True)
    for j in range(v.shape[1]):
        mags = np.abs(v[:, j])
        # argmax on rounded magnitudes keeps the lowest index among near-ties
        k = int(np.argmax(np.round(mags, 12)))
        if mags[k] > 0:
            v[:, j] *= np.conj(v[k, j]) / mags[k]
    return v


def hermitian_eigensystem(h, tol=1e-10):
    h = as_matrix(h)
    if h.shape[0] != h.shape[1]:
        raise DimensionError("eigensystem needs a square matrix")
    if np.max(np.abs(h - dagger(h)), initial=0.0) > tol:
        raise ValueError("matrix is not Hermitian")
    vals, vecs = np.linalg.eigh(0.5 * (h + dagger(h)))
    vecs = fix_phase(vecs)
    groups = []
    start = 0
    for i in range(1, len(vals) + 1):
        if i == len(vals) or vals[i] - vals[i - 1] >= DEGENERACY_TOL:
            if i - start > 1:
                groups.append(tuple(range(start, i)))
            start = i
    return EigenSystem(vals, vecs, tuple(groups))


def matrix_exponential(m):
    """exp(M) by scaling and squaring with a Padé approximant."""
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise DimensionError("matrix exponential needs a square matrix")
    return scipy.linalg.expm(m)


@dataclass(frozen=True)
class Diagnostics:
    hermiticity: float
    trace_error: float
    min_eigenvalue: float
    passed: bool

    def __bool__(self):
        return self.passed


def validate_density(m, tol=1e-9):
    """Hermiticity, trace and positivity residuals of ``m``.

    ``tol`` bounds all three residuals; never raises on an invalid state.
    """
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise DimensionError("density matrix must be square")
    herm = float(np.max(np.abs(m - dagger(m)), initial=0.0))
    tr = float(abs(np.trace(m) - 1.0))
    min_eig = float(np.linalg.eigvalsh(0.5 * (m + dagger(m)))[0])
    passed = herm <= tol and tr <= tol and min_eig >= -tol
    return Diagnostics(herm, tr, min_eig, passed)


def as_density(m):
    """Return ``m`` as a complex array, raising if it is not a valid state."""
    m = as_matrix(m)
    d = validate_density(m)
    if d.hermiticity > HERMITIAN_TOL or d.trace_error > TRACE_TOL or d.min_eigenvalue < -PSD_TOL:
        raise InvalidStateError(f"not a density matrix: {d}")
    return m
