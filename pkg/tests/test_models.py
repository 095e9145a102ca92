import numpy as np
import pytest

from conftest import random_density
from oqs_classicality.channels import LindbladSpec, heisenberg_weyl_set
from oqs_classicality.classicality import fit_unitary_depolarizing, zero_discord_check
from oqs_classicality.models import (
    DEFAULT_PROBE,
    auxiliary_ode_residual,
    build_disco_general,
    build_superclassical_general,
    extract_conditional_env_states,
    make_model,
    model_condisco4,
    model_decay_dnull,
    model_general2,
    model_general4,
    model_markov_dephasing,
    model_unitary_exchange,
    pauli_branch_maps,
)
from oqs_classicality.qcore import PAULIS, DimensionError, bloch_state, ketbra

LN2 = np.log(2)
PLUS = bloch_state([1, 0, 0])
OFF_AXIS = bloch_state(np.ones(3) / np.sqrt(3))


def pauli_twirl(rho):
    return sum(p @ rho @ p for p in PAULIS)


@pytest.mark.parametrize("builder", [model_decay_dnull, model_condisco4])
def test_non_positive_rate_rejected(builder):
    with pytest.raises(ValueError):
        builder(0.0)


@pytest.mark.parametrize("builder", [model_general2, model_general4])
def test_negative_rates_rejected(builder):
    with pytest.raises(ValueError):
        builder(1.0, -0.1)
    with pytest.raises(ValueError):
        builder(-1.0, 0.1)


def test_decay_dnull_state_at_ln2(rng):
    model = model_decay_dnull(1.0)
    for _ in range(3):
        rho0 = random_density(rng, 2)
        expect = 0.5 * rho0 + (2 * np.eye(2) - rho0) / 6
        assert np.max(np.abs(model.reduced_state(rho0, LN2) - expect)) <= 1e-10


def test_decay_dnull_fixed_point():
    model = model_decay_dnull(1.3)
    for t in (0.1, 1.0, 3.0):
        assert np.allclose(model.reduced_state(np.eye(2) / 2, t), np.eye(2) / 2, atol=1e-14)


def test_decay_dnull_matches_generic_collision_builder():
    generic = build_superclassical_general(LindbladSpec(np.zeros((2, 2))), [(0.8, ketbra(1, 0, 2), -1 / 3)])
    assert np.max(np.abs(generic.liouvillian.matrix - model_decay_dnull(0.8).liouvillian.matrix)) <= 1e-12


def test_decay_dnull_keeps_plus_state_classical_quantum():
    model = model_decay_dnull(1.0)
    for t in (0.25, LN2, 1.0, 2.0):
        ok, res = zero_discord_check(model.evolve(PLUS, t), model.dims)
        assert ok and res <= 1e-9


def test_condisco4_reduced_propagator_equals_decay_dnull():
    a, b = model_decay_dnull(0.9), model_condisco4(0.9)
    for t in (0.1, 0.5, 1.0, 2.0, 4.0):
        assert np.max(np.abs(a.reduced_propagator(t).matrix - b.reduced_propagator(t).matrix)) <= 1e-10


def test_condisco4_state_has_printed_branch_form():
    model = model_condisco4(1.0)
    t = 0.7
    w = np.exp(-t)
    rho = model.evolve(OFF_AXIS, t)
    expect = w * np.kron(OFF_AXIS, ketbra(0, 0, 4)) + (1 - w) / 3 * sum(
        np.kron(p @ OFF_AXIS @ p, ketbra(k, k, 4)) for k, p in zip((1, 2, 3), PAULIS)
    )
    assert np.max(np.abs(rho - expect)) <= 1e-12
    assert model.oracles["stay_trace"](t) == pytest.approx(w)
    assert model.oracles["branch_trace"](t) == pytest.approx((1 - w) / 3)


def test_condisco4_generates_discord_for_off_axis_state():
    model = model_condisco4(1.0)
    ok, res = zero_discord_check(model.evolve(OFF_AXIS, LN2), model.dims)
    assert not ok and res > 0.05


def test_condisco4_plus_state_stays_classical_quantum():
    # Pauli images of an on-axis Bloch vector stay on that axis, so |+> gives no discord.
    model = model_condisco4(1.0)
    ok, res = zero_discord_check(model.evolve(PLUS, LN2), model.dims)
    assert ok and res <= 1e-12


def test_condisco4_maximally_mixed_stays_product():
    model = model_condisco4(1.0)
    rho = model.evolve(np.eye(2) / 2, 1.1)
    env = rho.reshape(2, 4, 2, 4).trace(axis1=0, axis2=2)
    assert np.allclose(rho, np.kron(np.eye(2) / 2, env), atol=1e-14)


def test_general2_without_reexcitation_is_decay_dnull():
    a, b = model_general2(1.1, 0.0), model_decay_dnull(1.1)
    assert np.max(np.abs(a.liouvillian.matrix - b.liouvillian.matrix)) <= 1e-10


def test_general2_lambda_oracle():
    model = model_general2(1.0, 0.4)
    for t in (0.25, 0.5, 1.0, 2.0):
        fit = fit_unitary_depolarizing(model.reduced_propagator(t))
        assert fit.lam == pytest.approx(model.oracles["lambda"](t), abs=1e-10)


def test_general2_hamiltonian_rotates_unitary_part():
    model = model_general2(1.0, 0.4, hs_omega=0.7)
    fit = fit_unitary_depolarizing(model.reduced_propagator(0.5))
    assert fit.is_unitary_depolarizing
    u = model.system_unitary(0.5)
    overlap = abs(np.trace(u.conj().T @ fit.unitary)) / 2
    assert overlap == pytest.approx(1, abs=1e-10)


def test_general4_weight_oracle():
    model = model_general4(1.0, 1 / 3)
    for t in (0.25, 0.5, 1.0, 2.0):
        fit = fit_unitary_depolarizing(model.reduced_propagator(t))
        assert (3 * fit.lam + 1) / 4 == pytest.approx(model.oracles["w"](t), abs=1e-9)
    assert model.oracles["w"](0) == pytest.approx(1)
    assert model.oracles["w"](1e3) == pytest.approx(0.25)


def test_general4_g_value():
    model = model_general4(1.0, 1 / 3)
    assert model.oracles["g"](LN2, LN2) == pytest.approx(0.0798, abs=5e-5)


def test_unitary_exchange_lambda_and_wave_propagator():
    omega = 1.0
    model = model_unitary_exchange(omega)
    for t in (0.3, 0.7, 1.1):
        fit = fit_unitary_depolarizing(model.reduced_propagator(t))
        assert abs(fit.lam - np.cos(omega * t) ** 2) <= 1e-9
        h = model.generator.hamiltonian
        w, v = np.linalg.eigh(h)
        direct = v @ np.diag(np.exp(-1j * w * t)) @ v.conj().T
        assert np.max(np.abs(direct - model.oracles["wave_propagator"](t))) <= 1e-12


def test_unitary_exchange_fully_mixes_at_half_period(rng):
    model = model_unitary_exchange(2.0)
    rho0 = random_density(rng, 2, pure=True)
    assert np.allclose(model.reduced_state(rho0, np.pi / 4), np.eye(2) / 2, atol=1e-12)


def test_markov_dephasing_has_trivial_environment():
    model = model_markov_dephasing(0.5)
    assert model.dim_e == 1
    out = model.reduced_state(PLUS, 1.0)
    assert out[0, 1] == pytest.approx(0.5 * np.exp(-1.0))


def test_superclassical_builder_identity_weight_leaves_system_alone(rng):
    env = LindbladSpec(np.zeros((2, 2)), ((0.3, ketbra(0, 1, 2)),))
    model = build_superclassical_general(env, [(1.0, ketbra(1, 0, 2), 1.0)])
    rho0 = random_density(rng, 2)
    for t in (0.3, 1.5):
        assert np.allclose(model.reduced_state(rho0, t), rho0, atol=1e-12)
        env_state = model.evolve(rho0, t).reshape(2, 2, 2, 2).trace(axis1=0, axis2=2)
        p1 = (1 - np.exp(-1.3 * t)) / 1.3  # population of |1> under 0->1 at 1.0, 1->0 at 0.3
        assert env_state[1, 1].real == pytest.approx(p1, abs=1e-12)


def test_superclassical_builder_rejects_weights_outside_cp_range():
    with pytest.raises(ValueError):
        build_superclassical_general(LindbladSpec(np.zeros((2, 2))), [(1.0, ketbra(1, 0, 2), -0.5)])


def test_superclassical_builder_full_replacement_has_branch_form():
    model = build_superclassical_general(LindbladSpec(np.zeros((2, 2))), [(1.0, ketbra(1, 0, 2), 0.0)])
    ces = extract_conditional_env_states(model, DEFAULT_PROBE, 0.8)
    assert ces.residual <= 1e-9


def test_superclassical_builder_random_states_stay_classical_quantum(rng):
    env = LindbladSpec(0.3 * PAULIS[0], ((0.2, ketbra(0, 1, 2)),))
    model = build_superclassical_general(env, [(1.0, ketbra(1, 0, 2), -0.2)], system_hamiltonian=0.5 * PAULIS[1])
    for _ in range(10):
        rho0 = random_density(rng, 2, pure=True)
        for t in (0.2, 0.7, 1.5):
            ok, _ = zero_discord_check(model.evolve(rho0, t), model.dims)
            assert ok
            assert extract_conditional_env_states(model, random_density(rng, 2), t).residual <= 1e-9


def test_disco_builder_reduces_to_superclassical_builder():
    b = ketbra(1, 0, 2)
    disco = build_disco_general([[b] * 4], [0.7], [0.2])
    plain = build_superclassical_general(LindbladSpec(np.zeros((2, 2))), [(0.7, b, 0.2)])
    assert np.max(np.abs(disco.liouvillian.matrix - plain.liouvillian.matrix)) <= 1e-12


def test_disco_builder_reproduces_condisco4():
    # Weyl order for a qubit is I, σz, σx, σxσz; map each branch to its target level.
    zero = np.zeros((4, 4))
    ops = [zero, ketbra(3, 0, 4), ketbra(1, 0, 4), ketbra(2, 0, 4)]
    disco = build_disco_general([ops], [1.2], [-1 / 3])
    ref = model_condisco4(1.2)
    assert np.max(np.abs(disco.liouvillian.matrix - ref.liouvillian.matrix)) <= 1e-12
    ws = heisenberg_weyl_set(2)
    assert np.allclose(np.abs(2 * ws[3]), np.abs(PAULIS[1]))


def test_disco_builder_identity_weight_is_environment_only(rng):
    ops = [ketbra(1, 0, 2)] * 4
    model = build_disco_general([ops], [1.0], [1.0])
    rho0 = random_density(rng, 2)
    assert np.allclose(model.reduced_state(rho0, 1.0), rho0, atol=1e-12)


def test_disco_builder_errors():
    with pytest.raises(ValueError):
        build_disco_general([[np.eye(2)] * 4], [1.0], [0.0], system_hamiltonian=PAULIS[2])
    with pytest.raises(ValueError):
        build_disco_general([[np.eye(2)] * 3], [1.0], [0.0])
    with pytest.raises(DimensionError):
        build_disco_general([[np.eye(2)] * 3 + [np.eye(3)]], [1.0], [0.0])


def test_extraction_at_ln2_gives_lambda_and_its_complement():
    model = model_decay_dnull(1.0)
    ces = extract_conditional_env_states(model, np.diag([0.8, 0.2]), LN2)
    assert ces.stay_weight == pytest.approx(1 / 3, abs=1e-12)
    assert ces.mix_weight == pytest.approx(2 / 3, abs=1e-12)
    assert ces.stay_weight + ces.mix_weight == pytest.approx(1, abs=1e-10)
    # the stay operator is not positive: the collision weight lies below zero
    assert np.allclose(ces.eta, np.diag([0.5, -1 / 6]), atol=1e-12)
    assert np.allclose(ces.eta_bar, np.diag([0, 2 / 3]), atol=1e-12)


def test_extraction_at_time_zero():
    model = model_decay_dnull(1.0)
    ces = extract_conditional_env_states(model, DEFAULT_PROBE, 0.0)
    assert np.allclose(ces.eta, model.sigma0, atol=1e-14)
    assert np.allclose(ces.eta_bar, 0, atol=1e-14)


def test_extraction_detects_discord_structure():
    model = model_condisco4(1.0)
    with pytest.raises(ValueError):
        extract_conditional_env_states(model, bloch_state([0.4, 0.4, 0.4]), 0.5)
    ces = extract_conditional_env_states(model, bloch_state([0.4, 0.4, 0.4]), 0.5, check=False)
    assert ces.residual > 1e-3


def test_extraction_rejects_degenerate_probe():
    with pytest.raises(ValueError):
        extract_conditional_env_states(model_decay_dnull(1.0), np.eye(2) / 2, 0.5)


def test_stay_weight_decays_without_repopulation():
    model = model_decay_dnull(0.7)
    ts = np.linspace(0, 3, 13)
    weights = [extract_conditional_env_states(model, DEFAULT_PROBE, t).stay_weight for t in ts]
    assert np.all(np.diff(weights) <= 1e-12)


@pytest.mark.parametrize("model", [model_decay_dnull(1.0), model_general2(1.0, 0.4), model_general2(1.0, 0.4, 0.7)])
def test_auxiliary_ode_residual(model):
    grid = np.round(np.arange(0.1, 2.0 + 1e-9, 0.01), 12)
    assert auxiliary_ode_residual(model, grid, bloch_state([0.3, -0.2, 0.4])) <= 1e-6


def test_auxiliary_ode_input_checks():
    model = model_decay_dnull(1.0)
    with pytest.raises(ValueError):
        auxiliary_ode_residual(model, [0.1, 0.2, 0.3])
    with pytest.raises(ValueError):
        auxiliary_ode_residual(model, [0.1, 0.2, 0.3, 0.5, 0.6])
    with pytest.raises(ValueError):
        auxiliary_ode_residual(model_condisco4(1.0), np.arange(5) * 0.1)


@pytest.mark.parametrize("model", [model_decay_dnull(1.0), model_condisco4(1.0)])
def test_analytic_branch_maps_match_numerical_split(model):
    for t in (0.3, 1.2):
        stay, branches = pauli_branch_maps(model, t)
        assert np.max(np.abs(stay.matrix - model.branch_maps.stay(t).matrix)) <= 1e-12
        for a, b in zip(branches, model.branch_maps.branches(t)):
            assert np.max(np.abs(a.matrix - b.matrix)) <= 1e-12


def test_branch_split_rejects_non_pauli_dynamics():
    with pytest.raises(ValueError):
        pauli_branch_maps(model_general2(1.0, 0.4, 0.7), 0.5)


def test_make_model_by_name():
    assert make_model("general4", gamma=1.0, phi=0.2, omega=3.0).params == {"gamma": 1.0, "phi": 0.2}
    with pytest.raises(ValueError):
        make_model("nope", gamma=1.0)
    with pytest.raises(ValueError):
        make_model("general4", gamma=1.0)
