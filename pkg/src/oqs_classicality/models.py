"""Catalog of qubit-plus-bath models and builders for collision dynamics.

Every catalog entry is a bipartite generator with a default environment state
and closed-form evaluators (``oracles``) that the simulation path never reads.

Collision models apply a depolarizing map D_w to the system whenever an
environment jump B fires. A weight of -1/3 on a qubit gives the map
ρ ↦ S[ρ]/3 with S[ρ] = Σ_k σ_k ρ σ_k, i.e. one random Pauli per collision.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .channels import (
    LindbladSpec,
    Superoperator,
    build_liouvillian,
    depolarizing_collision,
    depolarizing_cp_range,
    heisenberg_weyl_set,
    propagator,
    unvec,
    vec,
)
from .qcore import (
    PAULIS,
    DimensionError,
    as_density,
    as_matrix,
    dagger,
    hermitian_eigensystem,
    ketbra,
    matrix_exponential,
    partial_trace,
)

PAULI_COLLISION_WEIGHT = -1.0 / 3.0
DEFAULT_PROBE = np.diag([0.8, 0.2]).astype(complex)


@dataclass(frozen=True)
class Collision:
    """Environment jump ``env_op`` at ``rate`` that applies D_weight to the system."""

    rate: float
    env_op: np.ndarray
    weight: float


@dataclass(frozen=True, eq=False)
class BranchMaps:
    """Conditional environment propagators of a Pauli-branch model.

    The bipartite propagator acts on ρ ⊗ σ as
    ``ρ ⊗ stay(t)[σ] + Σ_k V_k ρ V_k† ⊗ branches(t)[k][σ]``
    with ``V_k = system_ops[k]``.
    """

    system_ops: tuple
    stay: Callable
    branches: Callable
    analytic: bool = True


@dataclass(frozen=True, eq=False)
class ModelInstance:
    name: str
    dim_s: int
    dim_e: int
    generator: LindbladSpec
    sigma0: np.ndarray
    params: dict = field(default_factory=dict)
    oracles: dict = field(default_factory=dict)
    description: str = ""
    system_hamiltonian: Optional[np.ndarray] = None
    env_spec: Optional[LindbladSpec] = None
    collisions: Optional[tuple] = None
    branch_maps: Optional[BranchMaps] = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.generator.dim != self.dim_s * self.dim_e:
            raise DimensionError(
                f"generator acts on dim {self.generator.dim}, expected {self.dim_s}x{self.dim_e}"
            )
        sigma0 = as_density(self.sigma0)
        if sigma0.shape != (self.dim_e, self.dim_e):
            raise DimensionError("default environment state has the wrong dimension")
        object.__setattr__(self, "sigma0", sigma0)
        object.__setattr__(self, "_cache", {"liouvillian": build_liouvillian(self.generator)})

    @property
    def dims(self):
        return self.dim_s, self.dim_e

    @property
    def liouvillian(self):
        return self._cache["liouvillian"]

    @property
    def zero_discord_class(self):
        return self.collisions is not None

    def propagator(self, t):
        """Bipartite exp(t L), memoized per time."""
        key = ("G", float(t))
        g = self._cache.get(key)
        if g is None:
            g = propagator(self.liouvillian, float(t))
            self._cache[key] = g
        return g

    def initial_state(self, rho0, sigma0=None):
        sigma0 = self.sigma0 if sigma0 is None else as_matrix(sigma0)
        return np.kron(as_matrix(rho0), sigma0)

    def evolve(self, rho0, t, sigma0=None):
        """Bipartite state at time t from ρ0 ⊗ σ0."""
        return self.propagator(t)(self.initial_state(rho0, sigma0))

    def reduced_state(self, rho0, t, sigma0=None):
        return partial_trace(self.evolve(rho0, t, sigma0), self.dims, "system")

    def reduced_propagator(self, t, sigma0=None):
        """System map ρ0 ↦ Tr_e G_t[ρ0 ⊗ σ0] as a superoperator."""
        d = self.dim_s
        cols = []
        for j in range(d):
            for i in range(d):
                cols.append(vec(self.reduced_state(ketbra(i, j, d), t, sigma0)))
        return Superoperator(np.array(cols).T, d, cptp=True)

    def system_unitary(self, t):
        if self.system_hamiltonian is None:
            return np.eye(self.dim_s, dtype=complex)
        return matrix_exponential(-1j * t * self.system_hamiltonian)


def _check_positive(name, value):
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")


def _check_nonnegative(name, value):
    if value < 0:
        raise ValueError(f"{name} must be non-negative, got {value}")


def _ground(d):
    return ketbra(0, 0, d)


def _pauli_jumps(rate, env_ops):
    """Jumps σ_k ⊗ env_ops[k] at ``rate`` for k = x, y, z."""
    return [(rate, np.kron(p, b)) for p, b in zip(PAULIS, env_ops)]


def _depolarizing_weight_oracles(w):
    return {"w": w, "lambda": lambda t: (4 * w(t) - 1) / 3}


def _decay_env_maps(gamma, dim_e, targets):
    """Analytic branch maps for a ground state |0> decaying at total rate γ.

    Branch k sends the population into ``targets[k]``; nothing else moves.
    """

    def stay(t):
        damp = np.ones((dim_e, dim_e))
        damp[0, :] = damp[:, 0] = np.exp(-gamma * t / 2)
        damp[0, 0] = np.exp(-gamma * t)
        return Superoperator(np.diag(vec(damp)).astype(complex), dim_e)

    def branches(t):
        out = []
        for k in targets:
            m = np.zeros((dim_e**2, dim_e**2), dtype=complex)
            m[k + dim_e * k, 0] = (1 - np.exp(-gamma * t)) / 3
            out.append(Superoperator(m, dim_e))
        return out

    return BranchMaps(PAULIS, stay, branches, analytic=True)


def pauli_branch_maps(model, t, tol=1e-9):
    """Numerically split a qubit model's propagator into Pauli branches.

    Returns ``(stay, [E^x, E^y, E^z])`` as environment superoperators such that
    G_t[ρ ⊗ σ] = ρ ⊗ stay[σ] + Σ_k σ_k ρ σ_k ⊗ E^k[σ]. Raises ValueError when
    the propagator does not have that form.
    """
    if model.dim_s != 2:
        raise DimensionError("Pauli branch decomposition is qubit-only")
    de = model.dim_e
    g = model.propagator(t)
    basis = (np.eye(2, dtype=complex),) + PAULIS
    # sign[g][c]: σ_g P_c σ_g = sign * P_c
    sign = np.array([[1 if (gi == 0 or c == 0 or c == gi) else -1 for c in range(4)] for gi in range(4)])
    cols = [[] for _ in range(4)]
    for b in range(de):
        for a in range(de):
            sigma = ketbra(a, b, de)
            blocks = []
            for p in basis:
                out = g(np.kron(p, sigma)).reshape(2, de, 2, de)
                blocks.append(0.5 * np.einsum("ji,iajb->ab", p, out))
            for gi in range(4):
                cols[gi].append(vec(0.25 * sum(sign[gi, c] * blocks[c] for c in range(4))))
    maps = [Superoperator(np.array(c).T, de) for c in cols]
    ops = (np.eye(2, dtype=complex),) + PAULIS
    worst = 0.0
    for b in range(de):
        for a in range(de):
            sigma = ketbra(a, b, de)
            for p in basis:
                direct = g(np.kron(p, sigma))
                rebuilt = sum(np.kron(v @ p @ v, m(sigma)) for v, m in zip(ops, maps))
                worst = max(worst, float(np.max(np.abs(direct - rebuilt))))
    if worst > tol:
        raise ValueError(f"propagator is not Pauli-branch diagonal (residual {worst:.3g})")
    return maps[0], maps[1:]


def _numerical_branch_maps(model_ref):
    def stay(t):
        return pauli_branch_maps(model_ref(), t)[0]

    def branches(t):
        return pauli_branch_maps(model_ref(), t)[1]

    return BranchMaps(PAULIS, stay, branches, analytic=False)


def _attach_numerical_branches(model):
    object.__setattr__(model, "branch_maps", _numerical_branch_maps(lambda: model))
    return model


def build_superclassical_general(
    env_spec, collisions, system_hamiltonian=None, sigma0=None, dim_s=2, name="superclassical-general"
):
    """Bipartite generator applying D_w on the system per environment transition.

    ``env_spec`` carries the system-independent part of the environment
    dynamics; ``collisions`` is a sequence of ``(rate, B, w)`` triples.
    """
    collisions = tuple(Collision(float(r), as_matrix(b), float(w)) for r, b, w in collisions)
    de = env_spec.dim
    lo, hi = depolarizing_cp_range(dim_s)
    for c in collisions:
        _check_nonnegative("collision rate", c.rate)
        if not lo - 1e-12 <= c.weight <= hi + 1e-12:
            raise ValueError(f"collision weight {c.weight} outside CP range [{lo}, {hi}]")
        if c.env_op.shape != (de, de):
            raise DimensionError("collision operator does not act on the environment")
    ident_s = np.eye(dim_s, dtype=complex)
    ident_e = np.eye(de, dtype=complex)
    h = np.kron(ident_s, env_spec.hamiltonian)
    if system_hamiltonian is not None:
        system_hamiltonian = as_matrix(system_hamiltonian)
        h = h + np.kron(system_hamiltonian, ident_e)
    jumps = [(r, np.kron(ident_s, a)) for r, a in env_spec.jumps]
    for c in collisions:
        jumps.extend(depolarizing_collision(c.rate, c.env_op, c.weight, dim_s))
    return ModelInstance(
        name=name,
        dim_s=dim_s,
        dim_e=de,
        generator=LindbladSpec(h, tuple(jumps)),
        sigma0=_ground(de) if sigma0 is None else sigma0,
        system_hamiltonian=system_hamiltonian,
        env_spec=env_spec,
        collisions=collisions,
        description="collision dynamics applying depolarizing maps on environment jumps",
    )


def partial_depolarizing_kraus(weight, k, d):
    """Kraus operators of D^k_w[ρ] = w ρ δ_k0 + (1 - w) W_k ρ W_k†.

    The identity branch carries the twirl weight w + (1-w)/d² so that the
    k-sum over all branches reproduces D_w.
    """
    unitaries = [d * w for w in heisenberg_weyl_set(d)]
    if k == 0:
        c = weight + (1 - weight) / d**2
    else:
        c = (1 - weight) / d**2
    if c < -1e-12:
        raise ValueError(f"weight {weight} outside CP range")
    return [np.sqrt(max(c, 0.0)) * unitaries[k]] if c > 1e-15 else []


def build_disco_general(env_ops, rates, weights, sigma0=None, dim_s=2, system_hamiltonian=None, name="disco-general"):
    """Collision dynamics where each Weyl branch k has its own environment jump.

    ``env_ops[α][k]`` is the jump B_α^k fired together with the k-th partial
    depolarizing map of weight ``weights[α]``; k runs over the d² Weyl branches
    in :func:`heisenberg_weyl_set` order (for a qubit: I, σ_z, σ_x, σ_xσ_z).
    A system Hamiltonian is rejected.
    """
    if system_hamiltonian is not None:
        raise ValueError("a system Hamiltonian is not allowed in discord-generating collision models")
    if not len(env_ops) == len(rates) == len(weights):
        raise ValueError("env_ops, rates and weights must have one entry per channel")
    n_branch = dim_s**2
    jumps = []
    de = None
    for ops, rate, w in zip(env_ops, rates, weights):
        _check_nonnegative("rate", rate)
        if len(ops) != n_branch:
            raise ValueError(f"each channel needs {n_branch} environment operators, got {len(ops)}")
        for k, b in enumerate(ops):
            b = as_matrix(b)
            if de is None:
                de = b.shape[0]
            elif b.shape != (de, de):
                raise DimensionError("environment operators differ in shape")
            jumps.extend((rate, np.kron(a, b)) for a in partial_depolarizing_kraus(w, k, dim_s))
    h = np.zeros((dim_s * de, dim_s * de), dtype=complex)
    return ModelInstance(
        name=name,
        dim_s=dim_s,
        dim_e=de,
        generator=LindbladSpec(h, tuple(jumps)),
        sigma0=_ground(de) if sigma0 is None else sigma0,
        description="collision dynamics with one environment transition per Weyl branch",
    )


def model_decay_dnull(gamma):
    """Two-level bath decaying |0> → |1>, one random Pauli on the system per decay."""
    _check_positive("gamma", gamma)
    b = ketbra(1, 0, 2)
    jumps = _pauli_jumps(gamma, [b / np.sqrt(3)] * 3)
    w = lambda t: np.exp(-gamma * t)

    def dni_distance(t, tau, tx, ty, tz):
        lam = (4 * np.exp(-gamma * (t + tau)) - 1) / 3
        return abs(lam * np.sin(tz - ty) * np.sin(ty - tx))

    def cpf(t, tau, tx, ty, tz):
        return (
            -16 / 9 * np.exp(-gamma * t) * (1 - np.exp(-gamma * t)) * (1 - np.exp(-gamma * tau))
            * np.cos(tz - ty) * np.cos(ty - tx)
        )

    oracles = _depolarizing_weight_oracles(w)
    oracles.update(I=dni_distance, cpf=cpf, pauli_rate=lambda t: gamma / (4 - np.exp(gamma * t)))
    return ModelInstance(
        name="decay-dnull",
        dim_s=2,
        dim_e=2,
        generator=LindbladSpec(np.zeros((4, 4)), tuple(jumps)),
        sigma0=_ground(2),
        params={"gamma": gamma},
        oracles=oracles,
        description="two-level bath, decay |0>->|1> applies S/3 to the system; no discord generated",
        env_spec=LindbladSpec(np.zeros((2, 2))),
        collisions=(Collision(gamma, b, PAULI_COLLISION_WEIGHT),),
        branch_maps=_decay_env_maps(gamma, 2, [1, 1, 1]),
    )


def model_condisco4(gamma):
    """Four-level bath; decay |0> → |k> applies σ_k. Same reduced dynamics as decay-dnull."""
    _check_positive("gamma", gamma)
    jumps = _pauli_jumps(gamma / 3, [ketbra(k, 0, 4) for k in (1, 2, 3)])
    jumps = [(r, a) for r, a in jumps]
    w = lambda t: np.exp(-gamma * t)
    oracles = _depolarizing_weight_oracles(w)
    oracles.update(
        stay_trace=w,
        branch_trace=lambda t: (1 - np.exp(-gamma * t)) / 3,
    )
    return ModelInstance(
        name="condisco4",
        dim_s=2,
        dim_e=4,
        generator=LindbladSpec(np.zeros((8, 8)), tuple(jumps)),
        sigma0=_ground(4),
        params={"gamma": gamma},
        oracles=oracles,
        description="four-level bath, decay |0>->|k> applies sigma_k; discord generated but not detected",
        branch_maps=_decay_env_maps(gamma, 4, [1, 2, 3]),
    )


def model_general2(gamma, phi, hs_omega=None):
    """Two-level bath with decay (γ) and re-excitation (φ), both applying S/3.

    ``hs_omega`` adds the system Hamiltonian ω σ_z / 2.
    """
    _check_nonnegative("gamma", gamma)
    _check_nonnegative("phi", phi)
    b = ketbra(1, 0, 2)
    hs = None if not hs_omega else hs_omega * PAULIS[2] / 2
    model = build_superclassical_general(
        LindbladSpec(np.zeros((2, 2))),
        [(gamma, b, PAULI_COLLISION_WEIGHT), (phi, dagger(b), PAULI_COLLISION_WEIGHT)],
        system_hamiltonian=hs,
        name="general2",
    )
    # Each jump multiplies the Bloch vector by -1/3, so λ_t is the jump-counting
    # generating function of the bare two-level bath evaluated at s = -1/3.
    s = PAULI_COLLISION_WEIGHT
    tilted = np.array([[-gamma, s * phi], [s * gamma, -phi]])

    def lam(t):
        return float(np.sum(matrix_exponential(t * tilted)[:, 0]).real)

    oracles = {"lambda": lam, "w": lambda t: (3 * lam(t) + 1) / 4}
    object.__setattr__(model, "params", {"gamma": gamma, "phi": phi, "hs_omega": hs_omega or 0.0})
    object.__setattr__(model, "oracles", oracles)
    object.__setattr__(
        model,
        "description",
        "two-level bath with decay and re-excitation, each applying S/3; optional system Hamiltonian",
    )
    if hs is None:
        _attach_numerical_branches(model)
    return model


def model_general4(gamma, phi):
    """Four-level bath: |0> → |k> at γ/3 and |k> → |0> at φ, each applying σ_k."""
    _check_nonnegative("gamma", gamma)
    _check_nonnegative("phi", phi)
    fwd = _pauli_jumps(gamma / 3, [ketbra(k, 0, 4) for k in (1, 2, 3)])
    back = _pauli_jumps(phi, [ketbra(0, k, 4) for k in (1, 2, 3)])
    kappa = gamma + phi
    w = lambda t: (phi + gamma * np.exp(-kappa * t)) / kappa if kappa > 0 else 1.0
    oracles = _depolarizing_weight_oracles(w)
    if np.isclose(phi, gamma / 3):

        def g(t, tau):
            return (
                (1 / 3) * np.exp(-(gamma / 3) * tau) * (1 - np.exp(-gamma * tau))
                * (1 - np.exp(-(4 / 3) * gamma * t))
            )

        oracles["g"] = g
        # equal angles for all three measurements
        oracles["I"] = lambda t, tau, theta: 0.5 * abs(g(t, tau)) * np.sin(2 * theta) ** 2
        oracles["cpf"] = lambda t, tau, theta: -0.25 * g(t, tau) * (
            1 - np.cos(4 * theta) + 8 * np.exp(-(4 / 3) * gamma * t)
        )
    model = ModelInstance(
        name="general4",
        dim_s=2,
        dim_e=4,
        generator=LindbladSpec(np.zeros((8, 8)), tuple(fwd + back)),
        sigma0=_ground(4),
        params={"gamma": gamma, "phi": phi},
        oracles=oracles,
        description="four-level bath with decay and return transitions applying sigma_k; not superclassical",
    )
    return _attach_numerical_branches(model)


def model_unitary_exchange(omega):
    """Qubit bath coupled by H = (Ω/2) Σ_k σ_k ⊗ σ_k, bath starting maximally mixed."""
    omega = float(omega)
    h = omega / 2 * sum(np.kron(p, p) for p in PAULIS)
    w = lambda t: 0.25 * (1 + 3 * np.cos(omega * t) ** 2)
    oracles = _depolarizing_weight_oracles(w)

    def wave_propagator(t):
        a = np.exp(-1j * omega * t / 2)
        b = 0.5j * np.exp(1j * omega * t / 2) * np.sin(omega * t)
        return (a + b) * np.eye(4) - b * sum(np.kron(p, p) for p in PAULIS)

    oracles.update(
        wave_propagator=wave_propagator,
        # θ_Y = θ_X, τ = t
        I=lambda t, tx, tz: 0.5 * abs(np.cos(tz - tx)) * np.sin(2 * t * omega) ** 2,
        cpf=lambda t, tx, tz: np.cos(tz - tx) * np.sin(omega * t) ** 4,
    )
    return ModelInstance(
        name="unitary-exchange",
        dim_s=2,
        dim_e=2,
        generator=LindbladSpec(h),
        sigma0=np.eye(2, dtype=complex) / 2,
        params={"omega": omega},
        oracles=oracles,
        description="Heisenberg exchange with a maximally mixed qubit bath; unitary coupling",
    )


def model_markov_dephasing(gamma):
    """Single qubit with pure dephasing at rate γ and a trivial (1-dim) environment."""
    _check_nonnegative("gamma", gamma)
    return ModelInstance(
        name="markov-dephasing",
        dim_s=2,
        dim_e=1,
        generator=LindbladSpec(np.zeros((2, 2)), ((gamma, PAULIS[2]),)),
        sigma0=np.ones((1, 1), dtype=complex),
        params={"gamma": gamma},
        description="environmentless Markovian dephasing",
    )


CATALOG = {
    "decay-dnull": (model_decay_dnull, ("gamma",)),
    "condisco4": (model_condisco4, ("gamma",)),
    "general2": (model_general2, ("gamma", "phi", "hs_omega")),
    "general4": (model_general4, ("gamma", "phi")),
    "unitary-exchange": (model_unitary_exchange, ("omega",)),
}


def make_model(name, **params):
    """Build a catalog model by CLI name, ignoring parameters it does not take."""
    try:
        builder, keys = CATALOG[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(CATALOG)}") from None
    kwargs = {k: params[k] for k in keys if params.get(k) is not None}
    missing = [k for k in keys if k not in kwargs and k != "hs_omega"]
    if missing:
        raise ValueError(f"model {name!r} needs parameter(s) {missing}")
    return builder(**kwargs)


@dataclass(frozen=True)
class ConditionalEnvStates:
    """Environment operators η = E_t[σ0] and η̄ = Ē_t[σ0] at one time."""

    eta: np.ndarray
    eta_bar: np.ndarray
    residual: float
    t: float

    @property
    def stay_weight(self):
        return float(np.trace(self.eta).real)

    @property
    def mix_weight(self):
        return float(np.trace(self.eta_bar).real)


def extract_conditional_env_states(model, rho0=None, t=0.0, tol=1e-9, check=True):
    """Split ρ_t^se into U(ρ0 ⊗ η + I/d ⊗ η̄)U† and report the misfit.

    U is the free system evolution. The split solves the eigenbranch equations
    <c_t|ρ^se|c_t> = p_c η + η̄/d by least squares; the residual is the
    max-abs deviation of the rebuilt bipartite state. With ``check`` a residual
    above ``tol`` raises ValueError.
    """
    rho0 = DEFAULT_PROBE if rho0 is None else as_density(rho0)
    es = hermitian_eigensystem(rho0)
    if es.is_degenerate:
        raise ValueError("probe state must have distinct eigenvalues")
    ds, de = model.dims
    rho_se = model.evolve(rho0, t)
    u = model.system_unitary(t)
    basis_t = u @ es.eigenvectors
    blocks = []
    for c in range(ds):
        bra = np.kron(basis_t[:, c].conj()[None, :], np.eye(de))
        blocks.append(bra @ rho_se @ dagger(bra))
    design = np.column_stack([es.eigenvalues, np.full(ds, 1.0 / ds)])
    rhs = np.array([b.reshape(-1) for b in blocks])
    sol, *_ = np.linalg.lstsq(design, rhs, rcond=None)
    eta = sol[0].reshape(de, de)
    eta_bar = sol[1].reshape(de, de)
    u_se = np.kron(u, np.eye(de))
    rebuilt = u_se @ (np.kron(rho0, eta) + np.kron(np.eye(ds) / ds, eta_bar)) @ dagger(u_se)
    residual = float(np.max(np.abs(rebuilt - rho_se)))
    if check and residual > tol:
        raise ValueError(f"state does not have the conditional-environment form (residual {residual:.3g})")
    return ConditionalEnvStates(eta, eta_bar, residual, float(t))


def _lindblad_terms(spec):
    """Callable σ ↦ -i[H, σ] + Σ γ(BσB† - ½{B†B, σ}) on environment operators."""
    lv = build_liouvillian(spec)
    return lambda x: unvec(lv.matrix @ vec(x), spec.dim)


def auxiliary_rhs(model, eta, eta_bar):
    """Right-hand sides of the coupled equations for (η, η̄)."""
    if not model.zero_discord_class:
        raise ValueError(f"model {model.name!r} is not a collision model without discord generation")
    env = _lindblad_terms(model.env_spec)
    d_eta = env(eta)
    d_bar = env(eta_bar)
    for c in model.collisions:
        b = c.env_op
        bdb = dagger(b) @ b
        d_eta = d_eta + c.rate * c.weight * (b @ eta @ dagger(b) - 0.5 * (bdb @ eta + eta @ bdb))
        d_eta = d_eta - c.rate * (1 - c.weight) * 0.5 * (bdb @ eta + eta @ bdb)
        d_bar = d_bar + c.rate * (b @ eta_bar @ dagger(b) - 0.5 * (bdb @ eta_bar + eta_bar @ bdb))
        d_bar = d_bar + c.rate * (1 - c.weight) * (b @ eta @ dagger(b))
    return d_eta, d_bar


def auxiliary_ode_residual(model, times, rho0=None):
    """Max deviation between finite-difference derivatives of (η, η̄) and their equations.

    ``times`` must be uniformly spaced. Derivatives use the five-point central
    stencil, so the first and last two grid points are not evaluated.
    """
    times = np.asarray(times, dtype=float)
    if times.size < 5:
        raise ValueError("need at least five grid points")
    steps = np.diff(times)
    h = steps[0]
    if np.max(np.abs(steps - h)) > 1e-9 * max(1.0, abs(h)):
        raise ValueError("time grid must be uniform")
    states = [extract_conditional_env_states(model, rho0, t) for t in times]
    worst = 0.0
    for i in range(2, len(times) - 2):
        for attr, idx in (("eta", 0), ("eta_bar", 1)):
            f = [getattr(states[i + o], attr) for o in (-2, -1, 1, 2)]
            deriv = (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * h)
            rhs = auxiliary_rhs(model, states[i].eta, states[i].eta_bar)[idx]
            worst = max(worst, float(np.max(np.abs(deriv - rhs))))
    return worst
