"""Exact three-measurement statistics on a system coupled to an environment.

Measurements are projective, act on the system factor only, and never touch
the environment. Probabilities are computed on unnormalized bipartite states
so each joint probability is a single trace at the end.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .qcore import (
    DimensionError,
    as_density,
    as_matrix,
    bloch_vector,
    dagger,
    hermitian_eigensystem,
    partial_trace,
)

OUTCOMES = (1, -1)
ORTHONORMAL_TOL = 1e-10
CONDITIONING_TOL = 1e-14


@dataclass(frozen=True, eq=False)
class MeasurementSpec:
    """Projective measurement; column ``c`` of ``basis`` is outcome ``OUTCOMES[c]``."""

    basis: np.ndarray
    theta: float = None
    phi: float = None

    def __post_init__(self):
        b = as_matrix(self.basis)
        if b.shape[0] != b.shape[1]:
            raise DimensionError("measurement basis must be square")
        if np.max(np.abs(dagger(b) @ b - np.eye(b.shape[0]))) > ORTHONORMAL_TOL:
            raise ValueError("measurement basis is not orthonormal")
        object.__setattr__(self, "basis", b)

    @property
    def dim(self):
        return self.basis.shape[0]

    @property
    def projectors(self):
        return [np.outer(self.basis[:, c], self.basis[:, c].conj()) for c in range(self.dim)]

    def projector(self, outcome):
        return self.projectors[OUTCOMES.index(outcome)]

    def bloch_angles(self):
        """(θ, φ) of the +1 projector's Bloch direction."""
        n = bloch_vector(self.projectors[0])
        return float(np.arccos(np.clip(n[2], -1, 1))), float(np.arctan2(n[1], n[0]))

    def same_as(self, other, tol=1e-10):
        return all(np.max(np.abs(p - q)) <= tol for p, q in zip(self.projectors, other.projectors))

    def __repr__(self):
        if self.theta is not None:
            return f"MeasurementSpec(theta={self.theta:.6g}, phi={self.phi:.6g})"
        return "MeasurementSpec(theta=%.6g, phi=%.6g, derived)" % self.bloch_angles()


def basis_from_angles(theta, phi=0.0):
    """Qubit measurement along n = (sinθ cosφ, sinθ sinφ, cosθ); +1 is the aligned state."""
    theta, phi = float(theta), float(phi)
    up = np.array([np.cos(theta / 2), np.exp(1j * phi) * np.sin(theta / 2)])
    down = np.array([-np.exp(-1j * phi) * np.sin(theta / 2), np.cos(theta / 2)])
    return MeasurementSpec(np.column_stack([up, down]), theta, phi)


def _as_spec(m):
    if isinstance(m, MeasurementSpec):
        return m
    return basis_from_angles(m)


@dataclass(frozen=True, eq=False)
class JointTable:
    """Exact joint outcome probabilities.

    ``probs`` is indexed ``[z, y, x]`` for order 3 and ``[z, x]`` for order 2,
    each axis in ``OUTCOMES`` order.
    """

    probs: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def order(self):
        return self.probs.ndim

    def __getitem__(self, outcomes):
        return float(self.probs[tuple(OUTCOMES.index(o) for o in outcomes)])

    def marginal(self):
        """Drop the last measurement: P₃(z,y,x) → P₂(y,x), P₂(z,x) → P₁(x)."""
        return JointTable(self.probs.sum(axis=0), dict(self.meta))

    def first_measurement(self):
        p = self.probs
        while p.ndim > 1:
            p = p.sum(axis=0)
        return p

    def total(self):
        return float(self.probs.sum())


def _selective(p, de):
    pe = np.kron(p, np.eye(de))
    return np.kron(pe.conj(), pe)


def _trace_row(p, de):
    return np.kron(p, np.eye(de)).T.reshape(-1, order="F")


def _vec(x):
    return x.reshape(-1, order="F")


def _check_inputs(model, rho0, specs, times):
    rho0 = as_density(rho0)
    if rho0.shape != (model.dim_s, model.dim_s):
        raise DimensionError("initial state does not match the system dimension")
    for s in specs:
        if s.dim != model.dim_s:
            raise DimensionError("measurement dimension does not match the system")
    for t in times:
        if not np.isfinite(t) or t < 0:
            raise ValueError(f"times must be finite and non-negative, got {t}")
    return rho0


def three_point_protocol(model, rho0, sigma0, X, Y, Z, t, tau):
    """Run X at 0, Y at t, Z at t+τ, and the two-point run with Y skipped.

    Returns ``(P3, P2skip)``. ``sigma0=None`` uses the model's default
    environment state. Angles may be passed in place of specs.
    """
    X, Y, Z = _as_spec(X), _as_spec(Y), _as_spec(Z)
    rho0 = _check_inputs(model, rho0, (X, Y, Z), (t, tau))
    sigma0 = model.sigma0 if sigma0 is None else as_density(sigma0)
    de = model.dim_e
    g_t = model.propagator(t).matrix
    g_tau = model.propagator(tau).matrix
    g_sum = model.propagator(t + tau).matrix
    n = model.dim_s
    p3 = np.zeros((n, n, n))
    p2 = np.zeros((n, n))
    z_rows = [_trace_row(p, de) for p in Z.projectors]
    y_ops = [_selective(p, de) for p in Y.projectors]
    for xi, px in enumerate(X.projectors):
        start = _vec(np.kron(px @ rho0 @ px, sigma0))
        at_t = g_t @ start
        for yi, collapse in enumerate(y_ops):
            at_end = g_tau @ (collapse @ at_t)
            for zi, row in enumerate(z_rows):
                p3[zi, yi, xi] = (row @ at_end).real
        skipped = g_sum @ start
        for zi, row in enumerate(z_rows):
            p2[zi, xi] = (row @ skipped).real
    meta = {"model": model.name, "params": dict(model.params), "t": float(t), "tau": float(tau),
            "X": X, "Y": Y, "Z": Z}
    skip_meta = {k: v for k, v in meta.items() if k != "Y"}
    return JointTable(p3, meta), JointTable(p2, skip_meta)


def _match_labels(reference, candidate):
    """Reorder candidate columns so column c overlaps most with reference column c."""
    overlap = np.abs(dagger(reference) @ candidate) ** 2
    _, cols = linear_sum_assignment(-overlap)
    return candidate[:, cols]


def dni_basis(model, rho0, X, t, sigma0=None):
    """Eigenbasis of the reduced state after dephasing in X and evolving for t.

    Outcome labels follow the X basis by maximal overlap. When that state is
    degenerate, the eigenbasis of the evolved X(+1) projector is used instead,
    and if that is degenerate too, the X basis itself.
    """
    X = _as_spec(X)
    rho0 = _check_inputs(model, rho0, (X,), (t,))
    dephased = sum(p @ rho0 @ p for p in X.projectors)
    candidates = [dephased, X.projectors[0]]
    for state in candidates:
        reduced = partial_trace(model.evolve(state, t, sigma0), model.dims, "system")
        es = hermitian_eigensystem(0.5 * (reduced + dagger(reduced)))
        if not es.is_degenerate:
            return MeasurementSpec(_match_labels(X.basis, es.eigenvectors))
    return X


def branch_map_oracle(model, rho0, X, Y, Z, t, tau):
    """Joint tables assembled from a model's declared branch maps.

    Uses G_t[ρ ⊗ σ] = Σ_g V_g ρ V_g† ⊗ E^g_t[σ] with V_0 = I: the conditional
    probabilities P(y|x), P(z|y,x) and the post-measurement environment state
    are written as branch sums, without propagating the bipartite state.
    Returns ``(P3, P2skip)`` like :func:`three_point_protocol`.
    """
    if model.branch_maps is None:
        raise ValueError(f"model {model.name!r} declares no conditional environment propagators")
    X, Y, Z = _as_spec(X), _as_spec(Y), _as_spec(Z)
    rho0 = _check_inputs(model, rho0, (X, Y, Z), (t, tau))
    bm = model.branch_maps
    ops = [np.eye(model.dim_s, dtype=complex)] + list(bm.system_ops)

    def maps(s):
        return [bm.stay(s)] + list(bm.branches(s))

    e_t, e_tau, e_sum = maps(t), maps(tau), maps(t + tau)
    sigma0 = model.sigma0
    n = model.dim_s
    p3 = np.zeros((n, n, n))
    p2 = np.zeros((n, n))

    def overlap(proj, state, v):
        return np.trace(proj @ v @ state @ dagger(v)).real

    for xi, px in enumerate(X.projectors):
        p1 = np.trace(px @ rho0).real
        if p1 <= CONDITIONING_TOL:
            continue
        rho_x = px @ rho0 @ px / p1
        env_t = [m(sigma0) for m in e_t]
        for yi, py in enumerate(Y.projectors):
            weights = [overlap(py, rho_x, v) for v in ops]
            env_y = sum(w * s for w, s in zip(weights, env_t))
            p_y = np.trace(env_y).real
            if abs(p_y) <= CONDITIONING_TOL:
                continue
            sigma_yx = env_y / p_y
            for zi, pz in enumerate(Z.projectors):
                p_z = sum(overlap(pz, py, v) * np.trace(m(sigma_yx)).real for v, m in zip(ops, e_tau))
                p3[zi, yi, xi] = p1 * p_y * p_z
        for zi, pz in enumerate(Z.projectors):
            p2[zi, xi] = p1 * sum(overlap(pz, rho_x, v) * np.trace(m(sigma0)).real for v, m in zip(ops, e_sum))
    meta = {"model": model.name, "params": dict(model.params), "t": float(t), "tau": float(tau),
            "X": X, "Y": Y, "Z": Z}
    return JointTable(p3, meta), JointTable(p2, {k: v for k, v in meta.items() if k != "Y"})


def depolarizing_p2_closed_form(lam, rho_t, proj):
    """P(y|x) = Tr(E_y ρ_t^x) λ_t + (1 - λ_t)/2 for a qubit depolarizing branch model."""
    return np.trace(proj @ rho_t).real * lam + (1 - lam) / 2


def _check_metadata(a, b):
    for key in ("model", "t", "tau"):
        if a.meta.get(key) != b.meta.get(key):
            raise ValueError(f"joint tables disagree on {key}: {a.meta.get(key)!r} vs {b.meta.get(key)!r}")
    if a.meta.get("params") != b.meta.get("params"):
        raise ValueError("joint tables come from differently parametrized models")
    for key in ("X", "Z"):
        sa, sb = a.meta.get(key), b.meta.get(key)
        if sa is None or sb is None or not sa.same_as(sb):
            raise ValueError(f"joint tables use different {key} measurements")


def dni_distance(p3, p2skip):
    """I = Σ_{z,x} |Σ_y P₃(z,y,x) - P₂(z,x)| with Y skipped in P₂."""
    if p3.order != 3 or p2skip.order != 2:
        raise ValueError("dni_distance needs a three-point and a two-point table")
    _check_metadata(p3, p2skip)
    return float(np.sum(np.abs(p3.probs.sum(axis=1) - p2skip.probs)))


def cpf_correlation(p3, y=1):
    """Past-future correlation of x and z conditioned on the middle outcome y."""
    if p3.order != 3:
        raise ValueError("cpf_correlation needs a three-point table")
    joint = p3.probs[:, OUTCOMES.index(y), :]  # [z, x]
    norm = joint.sum()
    if norm <= CONDITIONING_TOL:
        raise ValueError(f"outcome y={y} has zero probability; cannot condition")
    cond = joint / norm
    pz = cond.sum(axis=1)
    px = cond.sum(axis=0)
    signs = np.array(OUTCOMES, dtype=float)
    return float(signs @ (cond - np.outer(pz, px)) @ signs)


def dni_witness(model, rho0, X, Z, t, tau, Y=None, sigma0=None):
    """I(t, τ) with Y chosen by :func:`dni_basis` unless given."""
    X, Z = _as_spec(X), _as_spec(Z)
    Y = dni_basis(model, rho0, X, t, sigma0) if Y is None else _as_spec(Y)
    p3, p2 = three_point_protocol(model, rho0, sigma0, X, Y, Z, t, tau)
    return dni_distance(p3, p2)
