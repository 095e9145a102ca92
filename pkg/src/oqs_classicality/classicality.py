"""Classicality audits for qubit dynamics coupled to an environment.

Three notions are checked: the reduced propagator being a unitary followed
by a depolarizing map, the fixed-basis condition that an intermediate
dephasing does not change dephased statistics, and the measurement-based
(superclassicality) condition that a non-invasive intermediate measurement
leaves later statistics unchanged. Grid audits only certify violations;
a pass means "no violation on the grid".
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import itertools

import numpy as np
from scipy.spatial.transform import Rotation

from .channels import Superoperator, dephasing_map, lift
from .protocol import MeasurementSpec, _as_spec, basis_from_angles, dni_witness
from .qcore import (
    PAULIS,
    DimensionError,
    as_matrix,
    bloch_state,
    bloch_vector,
    dagger,
    hermitian_eigensystem,
    partial_trace,
)

DEFAULT_TOL = 1e-9
DEFAULT_ANGLES = tuple(np.pi * k / 8 for k in range(5))
DEFAULT_TIMES = (0.25, 0.5, 1.0, 2.0)


def default_probes():
    """Two pure states and one mixed state, none on a Bloch axis except |0>."""
    return [
        bloch_state([0.0, 0.0, 1.0]),
        bloch_state(np.ones(3) / np.sqrt(3)),
        bloch_state([0.3, -0.2, 0.4]),
    ]


@dataclass(frozen=True)
class AuditReport:
    """Outcome of one audit; ``witness`` holds the configuration of the worst case."""

    name: str
    passed: bool
    max_violation: float
    witness: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "check": self.name,
            "passed": bool(self.passed),
            "max_violation": _jsonable(self.max_violation),
            "witness": _jsonable(self.witness),
            "details": _jsonable(self.details),
        }


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        if np.iscomplexobj(x):
            return {"re": x.real.tolist(), "im": x.imag.tolist()}
        return x.tolist()
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if np.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, MeasurementSpec):
        theta, phi = x.bloch_angles()
        return {"theta": theta, "phi": phi}
    return x


def _merge_max(results):
    """Largest violation, ties resolved by the lowest grid index."""
    best_i, best = 0, -np.inf
    for i, (v, _) in enumerate(results):
        if v > best:
            best_i, best = i, v
    return best_i, best


@dataclass(frozen=True)
class ClassicalityFit:
    is_unitary_depolarizing: bool
    lam: float
    unitary: np.ndarray
    residual: float
    bloch_translation_norm: float


def bloch_affine_form(s):
    """(M, c) with Bloch vectors mapping as v ↦ M v + c under the qubit map ``s``."""
    if s.dim != 2:
        raise DimensionError("Bloch form is defined for qubit maps")
    m = np.array([[0.5 * np.trace(p @ s(q)).real for q in PAULIS] for p in PAULIS])
    c = bloch_vector(s(np.eye(2) / 2))
    return m, c


def unitary_from_rotation(r):
    """SU(2) element whose conjugation rotates Bloch vectors by ``r``."""
    rv = Rotation.from_matrix(r).as_rotvec()
    angle = np.linalg.norm(rv)
    if angle < 1e-15:
        return np.eye(2, dtype=complex)
    n = rv / angle
    return np.cos(angle / 2) * np.eye(2) - 1j * np.sin(angle / 2) * sum(a * p for a, p in zip(n, PAULIS))


def _unitary_depolarizing(lam, u):
    m = lam * np.eye(4, dtype=complex)
    m[:, 0] += (1 - lam) / 2 * np.array([1, 0, 0, 1])
    m[:, 3] += (1 - lam) / 2 * np.array([1, 0, 0, 1])
    return Superoperator(m @ np.kron(u.conj(), u), 2)


def fit_unitary_depolarizing(s, tol=DEFAULT_TOL):
    """Try to write a qubit map as ρ ↦ λ UρU† + (1 - λ) I/2.

    λ carries the sign of det M so that the rotation M/λ is proper; λ = 0
    is the replacement map, reported with U = I.
    """
    if not s.is_tp(1e-10):
        raise ValueError(f"map is not trace preserving (residual {s.trace_residual():.3g})")
    m, c = bloch_affine_form(s)
    det = np.linalg.det(m)
    lam = (1.0 if det >= 0 else -1.0) * np.sqrt(np.trace(m @ m.T) / 3)
    cnorm = float(np.linalg.norm(c))
    if abs(lam) <= tol:
        u = np.eye(2, dtype=complex)
        residual = float(np.max(np.abs(s.matrix - _unitary_depolarizing(0.0, u).matrix)))
        return ClassicalityFit(residual <= tol, 0.0, u, residual, cnorm)
    r = m / lam
    checks = [
        cnorm,
        np.max(np.abs(m @ m.T - lam**2 * np.eye(3))),
        abs(det - lam**3),
        np.max(np.abs(r @ r.T - np.eye(3))),
    ]
    u = unitary_from_rotation(r) if checks[3] < 1e-3 else np.eye(2, dtype=complex)
    residual = float(np.max(np.abs(s.matrix - _unitary_depolarizing(lam, u).matrix)))
    ok = max(max(checks), residual) <= tol and -1 / 3 - tol <= lam <= 1 + tol
    return ClassicalityFit(bool(ok), float(lam), u, max(residual, float(max(checks))), cnorm)


@dataclass(frozen=True)
class RateWitness:
    times: np.ndarray
    lambdas: np.ndarray
    rates: np.ndarray
    negative_intervals: list
    divergences: list

    @property
    def pauli_rates(self):
        """Rate in dρ/dt = γ_t (S[ρ] - 3ρ), with S the sum of Pauli conjugations.

        S[ρ] - 3ρ = 4(I/2 - ρ), so this is a quarter of ``rates``.
        """
        return self.rates / 4

    def report(self):
        finite = self.rates[np.isfinite(self.rates)]
        worst = max(0.0, float(-finite.min())) if finite.size else 0.0
        if self.divergences:
            worst = np.inf
        i = int(np.argmin(self.rates)) if self.rates.size else 0
        witness = {"t": float(self.times[i]), "gamma_rate": float(self.rates[i])} if self.rates.size else {}
        return AuditReport(
            "rate-witness",
            not self.negative_intervals and not self.divergences,
            worst,
            witness,
            {"negative_intervals": self.negative_intervals, "divergences": self.divergences},
        )


def fitted_lambda(model, t, tol=DEFAULT_TOL):
    fit = fit_unitary_depolarizing(model.reduced_propagator(t), tol)
    if not fit.is_unitary_depolarizing:
        raise ValueError(f"reduced propagator at t={t} is not unitary-depolarizing (residual {fit.residual:.3g})")
    return fit.lam


def _runs(mask, times):
    out = []
    start = None
    for i, flag in enumerate(mask):
        if flag and start is None:
            start = i
        if start is not None and (not flag or i == len(mask) - 1):
            end = i if flag else i - 1
            out.append((float(times[start]), float(times[end])))
            start = None
    return out


def rate_witness(model, times, h=1e-5, tol=DEFAULT_TOL, zero_threshold=1e-3):
    """γ_t = -d/dt ln|λ_t| by central differences, with sign and divergence report.

    A divergence is bracketed by a grid cell where λ changes sign, or by the
    neighbours of a local minimum of |λ| below ``zero_threshold``.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise ValueError("empty time grid")
    lams = np.array([fitted_lambda(model, t, tol) for t in times])
    rates = np.empty_like(lams)
    for i, t in enumerate(times):
        lo = max(t - h, 0.0)
        hi = t + h
        a, b = abs(fitted_lambda(model, lo, tol)), abs(fitted_lambda(model, hi, tol))
        if a == 0 or b == 0:
            rates[i] = np.inf
        else:
            rates[i] = -(np.log(b) - np.log(a)) / (hi - lo)
    divergences = []
    for i in range(len(times) - 1):
        if np.sign(lams[i]) * np.sign(lams[i + 1]) < 0:
            divergences.append((float(times[i]), float(times[i + 1])))
    mags = np.abs(lams)
    for i in range(len(times)):
        left = mags[i - 1] if i > 0 else np.inf
        right = mags[i + 1] if i < len(times) - 1 else np.inf
        if mags[i] < zero_threshold and mags[i] <= left and mags[i] <= right:
            cell = (float(times[max(i - 1, 0)]), float(times[min(i + 1, len(times) - 1)]))
            if not any(lo <= times[i] <= hi for lo, hi in divergences):
                divergences.append(cell)
    divergences.sort()
    return RateWitness(times, lams, rates, _runs(rates < 0, times), divergences)


def candidate_basis(model, rho0, t):
    """Eigenbasis of the freely evolved U_t ρ0 U_t†, or None if degenerate."""
    u = model.system_unitary(t)
    es = hermitian_eigensystem(u @ as_matrix(rho0) @ dagger(u))
    return None if es.is_degenerate else es.eigenvectors


def zero_discord_check(rho_se, dims, basis=None, fallback_basis=None, tol=DEFAULT_TOL):
    """Is ``rho_se`` classical on the system side in some natural basis?

    The basis is ``basis`` if given, else the eigenbasis of the reduced
    system state, else ``fallback_basis``. Returns ``(is_cq, residual)`` with
    the residual the max-abs change under system dephasing.
    """
    rho_se = as_matrix(rho_se)
    ds, de = dims
    if basis is None:
        es = hermitian_eigensystem(partial_trace(rho_se, dims, "system"))
        if not es.is_degenerate:
            basis = es.eigenvectors
        elif fallback_basis is not None:
            basis = fallback_basis
        else:
            raise ValueError("reduced state is degenerate and no candidate basis was supplied")
    deph = lift(dephasing_map(basis), de, "system")
    residual = float(np.max(np.abs(deph(rho_se) - rho_se)))
    return residual <= tol, residual


def discord_audit(model, probes=None, times=DEFAULT_TIMES, tol=DEFAULT_TOL):
    probes = default_probes() if probes is None else probes
    results = []
    for rho0 in probes:
        for t in times:
            state = model.evolve(rho0, t)
            _, res = zero_discord_check(state, model.dims, fallback_basis=candidate_basis(model, rho0, t), tol=tol)
            results.append((res, {"rho0_bloch": bloch_vector(rho0), "t": float(t)}))
    i, worst = _merge_max(results)
    return AuditReport("discord", worst <= tol, worst, results[i][1], {"zero_discord": worst <= tol})


def fixed_basis_classicality(model, basis, t, tau, tol=DEFAULT_TOL):
    """Compare Δ G_τ Δ G_t Δ with Δ G_τ G_t Δ on inputs E_ij ⊗ σ0."""
    spec = _as_spec(basis)
    de = model.dim_e
    deph = lift(dephasing_map(spec.basis), de, "system").matrix
    g_t = model.propagator(t).matrix
    g_tau = model.propagator(tau).matrix
    with_mid = deph @ g_tau @ deph @ g_t @ deph
    without = deph @ g_tau @ g_t @ deph
    d = model.dim_s
    worst, arg = 0.0, (0, 0)
    for j in range(d):
        for i in range(d):
            unit = np.zeros((d, d), dtype=complex)
            unit[i, j] = 1.0
            v = np.kron(unit, model.sigma0).reshape(-1, order="F")
            diff = float(np.max(np.abs((with_mid - without) @ v)))
            if diff > worst:
                worst, arg = diff, (i, j)
    theta = spec.theta if spec.theta is not None else spec.bloch_angles()[0]
    witness = {"theta": theta, "t": float(t), "tau": float(tau), "input_unit": arg}
    return AuditReport("fixed-basis", worst <= tol, worst, witness)


def fixed_basis_audit(model, thetas=DEFAULT_ANGLES, times=DEFAULT_TIMES, taus=None, tol=DEFAULT_TOL):
    """Fixed-basis check over a θ × t × τ grid."""
    taus = times if taus is None else taus
    results = []
    per_theta = {}
    for theta in thetas:
        rep_theta = []
        for t, tau in itertools.product(times, taus):
            rep = fixed_basis_classicality(model, basis_from_angles(theta), t, tau, tol)
            results.append((rep.max_violation, rep.witness))
            rep_theta.append(rep.max_violation)
        per_theta[float(theta)] = max(rep_theta)
    i, worst = _merge_max(results)
    return AuditReport("fixed-basis", worst <= tol, worst, results[i][1], {"max_violation_by_theta": per_theta})


def _scan_point(model, cfg):
    rho0, tx, tz, t, tau = cfg
    X, Z = basis_from_angles(tx), basis_from_angles(tz)
    return dni_witness(model, rho0, X, Z, t, tau)


def superclassicality_scan(
    model,
    probes=None,
    thetas_x=DEFAULT_ANGLES,
    thetas_z=None,
    times=DEFAULT_TIMES,
    taus=None,
    tol=DEFAULT_TOL,
    diagonal=False,
    workers=None,
):
    """Max DNI distance over a grid of initial states, angles and times.

    Y is chosen by :func:`dni_basis` at every point. ``diagonal`` ties θ_Z to
    θ_X. ``details["samples"]`` holds every evaluated point in grid order.
    """
    if model.dim_s != 2:
        raise DimensionError("superclassicality scan is implemented for qubits")
    probes = default_probes() if probes is None else probes
    thetas_z = thetas_x if thetas_z is None else thetas_z
    taus = times if taus is None else taus
    if diagonal:
        angle_pairs = [(tx, tx) for tx in thetas_x]
    else:
        angle_pairs = list(itertools.product(thetas_x, thetas_z))
    grid = [
        (rho0, tx, tz, t, tau)
        for rho0 in probes
        for tx, tz in angle_pairs
        for t in times
        for tau in taus
    ]
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(lambda cfg: _scan_point(model, cfg), grid))
    else:
        values = [_scan_point(model, cfg) for cfg in grid]
    samples = [
        {"rho0_bloch": bloch_vector(r), "theta_x": float(tx), "theta_z": float(tz), "t": float(t), "tau": float(tau), "I": v}
        for (r, tx, tz, t, tau), v in zip(grid, values)
    ]
    i, worst = _merge_max([(v, None) for v in values])
    witness = dict(samples[i])
    witness["theta_y"] = "auto"
    return AuditReport("superclassical", worst <= tol, worst, witness, {"samples": samples, "points": len(grid)})


def decomposition_audit(model, times=DEFAULT_TIMES, tol=DEFAULT_TOL):
    """Unitary-depolarizing fit of the reduced propagator at each time."""
    results = []
    for t in times:
        fit = fit_unitary_depolarizing(model.reduced_propagator(t), tol)
        results.append((fit.residual, {"t": float(t), "lambda": fit.lam, "unitary": fit.unitary}))
    i, worst = _merge_max(results)
    lams = {float(t): r[1]["lambda"] for t, r in zip(times, results)}
    return AuditReport("decomposition", worst <= tol, worst, results[i][1], {"lambda": lams})


@dataclass(frozen=True)
class BranchTraces:
    """Traces on σ0 of the Weyl-form branch maps, indices k, j = 0..3."""

    stay: float  # Tr E_t
    branch: np.ndarray  # Tr Ẽ^k_t
    stay_then_branch: np.ndarray  # Tr E_τ Ẽ^k_t
    branch_then_stay: np.ndarray  # Tr Ẽ^k_τ E_t
    branch_pairs: np.ndarray  # [k, j] -> Tr Ẽ^k_τ Ẽ^j_t
    stay_total: float  # Tr E_{t+τ}


def weyl_branch_maps(model, t):
    """Re-express Pauli branch maps in the form ρ ⊗ E + Σ_k W_k ρ W_k† ⊗ Ẽ^k.

    With W_k = σ_k/2 over all four Paulis the identity term is split between
    E and Ẽ^0. The split takes Ẽ^0 as the mean of the other three, which
    makes a product-form environment I/2 ⊗ Ē come out as Ẽ^k = Ē for every k.
    """
    if model.branch_maps is None:
        raise ValueError(f"model {model.name!r} declares no conditional environment propagators")
    bm = model.branch_maps
    stay = bm.stay(t).matrix
    branches = [b.matrix for b in bm.branches(t)]
    de = model.dim_e
    tilde = [4 * b for b in branches]
    tilde0 = sum(tilde) / 3
    e = stay - tilde0 / 4
    return Superoperator(e, de), [Superoperator(m, de) for m in [tilde0] + tilde]


def branch_traces(model, t, tau):
    s0 = model.sigma0
    stay_t, br_t = weyl_branch_maps(model, t)
    stay_tau, br_tau = weyl_branch_maps(model, tau)
    stay_sum, _ = weyl_branch_maps(model, t + tau)

    def tr(x):
        return float(np.trace(x).real)

    after_t = [m(s0) for m in br_t]
    stay_state = stay_t(s0)
    return BranchTraces(
        stay=tr(stay_state),
        branch=np.array([tr(x) for x in after_t]),
        stay_then_branch=np.array([tr(stay_tau(x)) for x in after_t]),
        branch_then_stay=np.array([tr(m(stay_state)) for m in br_tau]),
        branch_pairs=np.array([[tr(mk(x)) for x in after_t] for mk in br_tau]),
        stay_total=tr(stay_sum(s0)),
    )


def disco_constraint_check(model, times=DEFAULT_TIMES, taus=None, tol=DEFAULT_TOL):
    """Index independence of the branch-map traces and their composition rule.

    Checks that Tr Ẽ^k_t, Tr E_τ Ẽ^k_t, Tr Ẽ^k_τ E_t and Tr Ẽ^k_τ Ẽ^j_t do
    not depend on k, j, and that 1 - Tr E_{t+τ} equals the sum of one term of
    each family (``single`` reading). The ``summed`` reading sums the last
    term over j; it is reported but does not decide the verdict.
    """
    taus = times if taus is None else taus
    spread = lambda a: float(np.max(a) - np.min(a))
    results = []
    residuals = {"k_independence": 0.0, "normalization": 0.0, "single": 0.0, "summed": 0.0}
    for t, tau in itertools.product(times, taus):
        bt = branch_traces(model, t, tau)
        indep = max(
            spread(bt.branch),
            spread(bt.stay_then_branch),
            spread(bt.branch_then_stay),
            spread(bt.branch_pairs),
        )
        norm = float(np.max(np.abs(bt.branch - (1 - bt.stay))))
        lhs = 1.0 - bt.stay_total
        base = bt.stay_then_branch.mean() + bt.branch_then_stay.mean()
        single = abs(lhs - base - bt.branch_pairs.mean())
        summed = abs(lhs - base - bt.branch_pairs.sum(axis=1).mean())
        row = {"k_independence": indep, "normalization": norm, "single": single, "summed": summed}
        for key, val in row.items():
            residuals[key] = max(residuals[key], float(val))
        results.append((max(indep, norm, single), dict(row, t=float(t), tau=float(tau))))
    i, worst = _merge_max(results)
    return AuditReport("disco-constraints", worst <= tol, worst, results[i][1], {"max_residuals": residuals})


AUDITS = {
    "decomposition": decomposition_audit,
    "rate-witness": lambda model, tol=DEFAULT_TOL: rate_witness(model, np.arange(0.05, 2.0 + 1e-9, 0.01), tol=tol).report(),
    "discord": discord_audit,
    "fixed-basis": fixed_basis_audit,
    "superclassical": superclassicality_scan,
    "disco-constraints": disco_constraint_check,
}
