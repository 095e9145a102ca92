"""Superoperators, canonical qubit/qudit maps and Lindblad generators.

Operators are vectorized by stacking columns, ``vec(X)[i + d*j] = X[i, j]``,
so ``vec(A X B) = (B^T ⊗ A) vec(X)``. Every superoperator matrix in the package
uses this convention.
"""

from dataclasses import dataclass, field

import numpy as np

from .qcore import (
    PAULIS,
    DimensionError,
    InvalidStateError,
    as_matrix,
    dagger,
    matrix_exponential,
    validate_density,
)

CP_TOL = 1e-9
TP_TOL = 1e-10


def vec(x):
    return as_matrix(x).reshape(-1, order="F")


def unvec(v, d):
    return np.asarray(v).reshape(d, d, order="F")


@dataclass(frozen=True)
class Superoperator:
    """Linear map on ``dim × dim`` operators, stored as a ``dim² × dim²`` matrix.

    ``cptp`` marks maps whose outputs are validated in :func:`apply`.
    """

    matrix: np.ndarray
    dim: int
    cptp: bool = field(default=False, compare=False)

    def __post_init__(self):
        if self.matrix.shape != (self.dim**2, self.dim**2):
            raise DimensionError(f"superoperator matrix {self.matrix.shape} does not act on dim {self.dim}")

    def __call__(self, rho):
        return unvec(self.matrix @ vec(rho), self.dim)

    def __matmul__(self, other):
        """Composition: ``(a @ b)[ρ] = a[b[ρ]]``."""
        if self.dim != other.dim:
            raise DimensionError("cannot compose superoperators of different dimension")
        return Superoperator(self.matrix @ other.matrix, self.dim, self.cptp and other.cptp)

    def choi(self):
        """Choi matrix Σ_kl |k><l| ⊗ S[|k><l|]."""
        d = self.dim
        s4 = self.matrix.reshape(d, d, d, d)  # s4[j, i, l, k] = S[i + d j, k + d l]
        return s4.transpose(3, 1, 2, 0).reshape(d * d, d * d)

    def trace_residual(self):
        """Max |Tr S[E_kl] - δ_kl| over matrix units."""
        d = self.dim
        tr_row = np.eye(d).reshape(-1, order="F")
        return float(np.max(np.abs(tr_row @ self.matrix - tr_row)))

    def choi_min_eigenvalue(self):
        c = self.choi()
        return float(np.linalg.eigvalsh(0.5 * (c + dagger(c)))[0])

    def is_tp(self, tol=TP_TOL):
        return self.trace_residual() <= tol

    def is_cp(self, tol=CP_TOL):
        return self.choi_min_eigenvalue() >= -tol


def identity_map(d):
    return Superoperator(np.eye(d * d, dtype=complex), d, cptp=True)


def from_kraus(kraus, cptp=False):
    kraus = [as_matrix(k) for k in kraus]
    d = kraus[0].shape[0]
    m = sum(np.kron(k.conj(), k) for k in kraus)
    return Superoperator(m, d, cptp)


def lift(s, other_dim, side="system"):
    """Extend a map on one tensor factor to system ⊗ environment.

    ``side`` names the factor ``s`` acts on; the other factor, of dimension
    ``other_dim``, is left untouched.
    """
    d = s.dim
    s4 = s.matrix.reshape(d, d, d, d)  # s4[j, i, l, k] = S[i + d j, k + d l]
    eye = np.eye(other_dim)
    # Composite column-major vec index of X[(i,a),(j,b)] has C-order digits (j, b, i, a).
    if side == "system":
        t = np.einsum("jilk,ac,bf->jbialfkc", s4, eye, eye)
    elif side == "environment":
        t = np.einsum("bafc,ik,jl->jbialfkc", s4, eye, eye)
    else:
        raise ValueError(f"side must be 'system' or 'environment', not {side!r}")
    n = d * other_dim
    return Superoperator(t.reshape(n * n, n * n), n, s.cptp)


def heisenberg_weyl_set(d):
    """The d² clock-shift unitaries X^a Z^b, each scaled by 1/d.

    With this scaling Σ_k W_k ρ W_k† = Tr(ρ) I/d and Σ_k W_k† W_k = I.
    For d = 2 the set is {I, σ_x, -iσ_y, σ_z}/2 (σ_y up to a phase).
    """
    if d < 2:
        raise ValueError("Heisenberg-Weyl set needs d >= 2")
    shift = np.roll(np.eye(d, dtype=complex), 1, axis=0)
    clock = np.diag(np.exp(2j * np.pi * np.arange(d) / d))
    ops = []
    for a in range(d):
        for b in range(d):
            ops.append(np.linalg.matrix_power(shift, a) @ np.linalg.matrix_power(clock, b) / d)
    return ops


def depolarizing_cp_range(d):
    return -1.0 / (d * d - 1), 1.0


def depolarizing_kraus(weight, d):
    """Kraus operators of D_w[ρ] = w ρ + (1 - w) Tr(ρ) I/d.

    Uses the twirl form, valid on the whole CP range w >= -1/(d²-1):
    √(w + (1-w)/d²)·I and √((1-w)/d²)·U_k for the non-identity Weyl unitaries.
    Zero-weight operators are dropped.
    """
    lo, hi = depolarizing_cp_range(d)
    if not (lo - 1e-12 <= weight <= hi + 1e-12):
        raise ValueError(f"depolarizing weight {weight} outside CP range [{lo}, {hi}]")
    unitaries = [d * w for w in heisenberg_weyl_set(d)]
    c0 = max(weight + (1 - weight) / d**2, 0.0)
    ck = max((1 - weight) / d**2, 0.0)
    out = []
    if c0 > 0:
        out.append(np.sqrt(c0) * unitaries[0])
    if ck > 0:
        out.extend(np.sqrt(ck) * u for u in unitaries[1:])
    return out


def depolarizing_map(weight, d):
    """ρ ↦ w ρ + (1 - w) I/d, CP for -1/(d²-1) <= w <= 1."""
    lo, hi = depolarizing_cp_range(d)
    if not (lo - 1e-12 <= weight <= hi + 1e-12):
        raise ValueError(f"depolarizing weight {weight} outside CP range [{lo}, {hi}]")
    ident = np.eye(d, dtype=complex)
    tr_row = ident.reshape(-1, order="F")
    m = weight * np.eye(d * d, dtype=complex) + (1 - weight) / d * np.outer(vec(ident), tr_row)
    return Superoperator(m, d, cptp=True)


def dephasing_map(basis, tol=1e-10):
    """Complete dephasing Σ_c |c><c| ρ |c><c| in the orthonormal ``basis``.

    ``basis`` holds the vectors as columns.
    """
    b = as_matrix(basis)
    if np.max(np.abs(dagger(b) @ b - np.eye(b.shape[1]))) > tol:
        raise ValueError("dephasing basis is not orthonormal")
    projectors = [np.outer(b[:, c], b[:, c].conj()) for c in range(b.shape[1])]
    return from_kraus(projectors, cptp=True)


def pauli_sum_map(indices=(1, 2, 3)):
    """ρ ↦ Σ_{k ∈ indices} σ_k ρ σ_k. Not trace preserving for more than one index."""
    indices = tuple(indices)
    if not indices:
        raise ValueError("pauli_sum_map needs at least one index")
    if any(k not in (1, 2, 3) for k in indices):
        raise ValueError(f"Pauli indices must be in {{1, 2, 3}}, got {indices}")
    return from_kraus([PAULIS[k - 1] for k in indices], cptp=len(indices) == 1)


def unitary_conjugation(u, tol=1e-10):
    u = as_matrix(u)
    if np.max(np.abs(u @ dagger(u) - np.eye(u.shape[0]))) > tol:
        raise ValueError("operator is not unitary")
    return Superoperator(np.kron(u.conj(), u), u.shape[0], cptp=True)


@dataclass(frozen=True)
class LindbladSpec:
    """Hamiltonian plus weighted jump operators, ħ = 1.

    ``jumps`` is a sequence of ``(rate, operator)`` pairs.
    """

    hamiltonian: np.ndarray
    jumps: tuple = ()

    def __post_init__(self):
        h = as_matrix(self.hamiltonian)
        object.__setattr__(self, "hamiltonian", h)
        if np.max(np.abs(h - dagger(h)), initial=0.0) > 1e-12:
            raise ValueError("Hamiltonian is not Hermitian")
        jumps = tuple((float(r), as_matrix(a)) for r, a in self.jumps)
        for r, a in jumps:
            if r < 0:
                raise ValueError(f"negative jump rate {r}")
            if a.shape != h.shape:
                raise DimensionError("jump operator and Hamiltonian shapes differ")
        object.__setattr__(self, "jumps", jumps)

    @property
    def dim(self):
        return self.hamiltonian.shape[0]


def build_liouvillian(spec):
    """L[ρ] = -i[H, ρ] + Σ γ (A ρ A† - ½{A†A, ρ}) as a superoperator."""
    h = spec.hamiltonian
    n = spec.dim
    ident = np.eye(n, dtype=complex)
    m = -1j * (np.kron(ident, h) - np.kron(h.T, ident))
    for rate, a in spec.jumps:
        ada = dagger(a) @ a
        m += rate * (np.kron(a.conj(), a) - 0.5 * np.kron(ident, ada) - 0.5 * np.kron(ada.T, ident))
    return Superoperator(m, n)


def collision_jump_expansion(rate, env_op, system_kraus, tol=1e-10):
    """Expand γ (B K[ρ] B† - ½{B†B, ρ}) into standard jump operators.

    ``system_kraus`` holds ``(weight, A)`` pairs with Σ weight·A†A = I; each
    becomes a jump √weight·A ⊗ B at ``rate``.
    """
    env_op = as_matrix(env_op)
    system_kraus = [(float(w), as_matrix(a)) for w, a in system_kraus]
    if not system_kraus:
        raise ValueError("empty system Kraus set")
    d = system_kraus[0][1].shape[0]
    total = sum(w * dagger(a) @ a for w, a in system_kraus)
    if np.max(np.abs(total - np.eye(d))) > tol:
        raise ValueError("system-side Kraus set is not trace preserving")
    return [(rate, np.kron(np.sqrt(w) * a, env_op)) for w, a in system_kraus if w > 0]


def depolarizing_collision(rate, env_op, weight, d):
    """Jumps applying D_weight to the system whenever ``env_op`` fires."""
    return collision_jump_expansion(rate, env_op, [(1.0, k) for k in depolarizing_kraus(weight, d)])


def propagator(generator, t):
    """exp(t L); raises for negative times."""
    if t < 0:
        raise ValueError(f"propagator needs t >= 0, got {t}")
    return Superoperator(matrix_exponential(t * generator.matrix), generator.dim, cptp=True)


def apply(s, rho, tol=1e-9):
    rho = as_matrix(rho)
    if rho.shape != (s.dim, s.dim):
        raise DimensionError(f"state of shape {rho.shape} does not match superoperator dim {s.dim}")
    out = s(rho)
    if s.cptp:
        diag = validate_density(out, tol)
        if not diag.passed and validate_density(rho, tol).passed:
            raise InvalidStateError(f"CPTP map produced an invalid state: {diag}")
    return out
