import numpy as np
import pytest

from conftest import random_density, random_unitary
from oqs_classicality.channels import (
    dephasing_map,
    depolarizing_map,
    identity_map,
    unitary_conjugation,
)
from oqs_classicality.classicality import (
    AuditReport,
    branch_traces,
    candidate_basis,
    decomposition_audit,
    disco_constraint_check,
    discord_audit,
    fit_unitary_depolarizing,
    fixed_basis_audit,
    fixed_basis_classicality,
    rate_witness,
    superclassicality_scan,
    zero_discord_check,
)
from oqs_classicality.models import (
    model_condisco4,
    model_decay_dnull,
    model_general2,
    model_general4,
    model_markov_dephasing,
    model_unitary_exchange,
)
from oqs_classicality.qcore import PAULIS, bloch_state

LN2 = np.log(2)
ANGLES = [np.pi * k / 8 for k in range(5)]


def test_fit_identity():
    fit = fit_unitary_depolarizing(identity_map(2))
    assert fit.is_unitary_depolarizing and fit.lam == pytest.approx(1)
    assert np.allclose(fit.unitary, np.eye(2))


def test_fit_round_trip(rng):
    for _ in range(20):
        lam = rng.uniform(-1 / 3, 1)
        u = random_unitary(rng, 2)
        s = depolarizing_map(lam, 2) @ unitary_conjugation(u)
        fit = fit_unitary_depolarizing(s)
        assert fit.is_unitary_depolarizing and fit.residual <= 1e-10
        assert fit.lam == pytest.approx(lam, abs=1e-10)
        assert abs(np.trace(u.conj().T @ fit.unitary)) / 2 == pytest.approx(1, abs=1e-10)


def test_fit_replacement_map():
    fit = fit_unitary_depolarizing(depolarizing_map(0.0, 2))
    assert fit.is_unitary_depolarizing and fit.lam == 0 and np.allclose(fit.unitary, np.eye(2))


def test_fit_rejects_dephasing_and_amplitude_damping():
    assert not fit_unitary_depolarizing(dephasing_map(np.eye(2))).is_unitary_depolarizing
    g = 0.3
    k0 = np.diag([1, np.sqrt(1 - g)])
    k1 = np.array([[0, np.sqrt(g)], [0, 0]])
    from oqs_classicality.channels import from_kraus

    fit = fit_unitary_depolarizing(from_kraus([k0, k1]))
    assert not fit.is_unitary_depolarizing and fit.bloch_translation_norm == pytest.approx(g)


def test_fit_requires_trace_preservation():
    from oqs_classicality.channels import pauli_sum_map

    with pytest.raises(ValueError):
        fit_unitary_depolarizing(pauli_sum_map())


def test_fit_decay_dnull_and_unitary_model():
    fit = fit_unitary_depolarizing(model_decay_dnull(1.0).reduced_propagator(LN2))
    assert fit.lam == pytest.approx(1 / 3, abs=1e-12) and np.allclose(fit.unitary, np.eye(2))
    fit = fit_unitary_depolarizing(model_unitary_exchange(1.0).reduced_propagator(0.7))
    assert fit.residual <= 1e-9 and fit.lam == pytest.approx(np.cos(0.7) ** 2, abs=1e-9)


def test_rate_witness_decay_dnull():
    times = np.round(np.arange(0.05, 2.0 + 1e-9, 0.01), 12)
    rw = rate_witness(model_decay_dnull(1.0), times)
    early = rw.times <= 1.2
    assert np.max(np.abs(rw.rates[early] - 4 / (4 - np.exp(rw.times[early])))) <= 1e-6
    assert len(rw.divergences) == 1
    lo, hi = rw.divergences[0]
    assert lo < np.log(4) < hi and hi - lo <= 0.011
    assert rw.negative_intervals[0][0] > np.log(4)
    assert not rw.report().passed


def test_rate_witness_unitary_model():
    omega = 1.0
    times = np.round(np.arange(0.05, 3.0 + 1e-9, 0.01), 12)
    rw = rate_witness(model_unitary_exchange(omega), times)
    mask = np.abs(np.cos(omega * rw.times)) > 0.05
    assert np.max(np.abs(rw.rates[mask] - 2 * omega * np.tan(omega * rw.times[mask])) / (1 + np.abs(rw.rates[mask]))) <= 1e-6
    assert any(lo <= np.pi / 2 <= hi for lo, hi in rw.divergences)
    lo, hi = rw.negative_intervals[0]
    assert np.pi / 2 <= lo + 0.02 and hi >= 2.99


def test_rate_witness_is_unchanged_by_extra_unitary():
    plain = model_general2(1.0, 0.4)
    rotated = model_general2(1.0, 0.4, hs_omega=0.9)
    times = [0.2, 0.6, 1.4]
    a, b = rate_witness(plain, times), rate_witness(rotated, times)
    assert np.allclose(a.lambdas, b.lambdas, atol=1e-10)
    assert rate_witness(model_markov_dephasing(0.0), times).report().passed


def test_rate_witness_reports_fit_failure():
    from oqs_classicality.channels import LindbladSpec
    from oqs_classicality.models import ModelInstance

    damping = ModelInstance("damp", 2, 1, LindbladSpec(np.zeros((2, 2)), ((1.0, np.array([[0, 1], [0, 0]])),)), np.ones((1, 1)))
    with pytest.raises(ValueError):
        rate_witness(damping, [0.5])


def test_zero_discord_on_product_state(rng):
    rho = np.kron(bloch_state([0.1, 0.2, 0.3]), random_density(rng, 3))
    ok, res = zero_discord_check(rho, (2, 3))
    assert ok and res <= 1e-12


def test_zero_discord_needs_a_basis_for_degenerate_reduction():
    bell = np.zeros(4)
    bell[[0, 3]] = 1 / np.sqrt(2)
    rho = np.outer(bell, bell)
    with pytest.raises(ValueError):
        zero_discord_check(rho, (2, 2))
    ok, res = zero_discord_check(rho, (2, 2), fallback_basis=np.eye(2))
    assert not ok and res == pytest.approx(0.5)


def test_zero_discord_models():
    state = model_decay_dnull(1.0).evolve(bloch_state([1, 0, 0]), LN2)
    assert zero_discord_check(state, (2, 2))[0]
    model = model_condisco4(1.0)
    off = bloch_state(np.ones(3) / np.sqrt(3))
    ok, res = zero_discord_check(model.evolve(off, LN2), model.dims)
    assert not ok and res > 0.05


def test_candidate_basis_follows_free_rotation():
    model = model_general2(1.0, 0.4, 0.7)
    rho0 = bloch_state([0.5, 0, 0])
    basis = candidate_basis(model, rho0, 0.8)
    u = model.system_unitary(0.8)
    rotated = u @ rho0 @ u.conj().T
    for c in range(2):
        v = basis[:, c]
        assert np.allclose(rotated @ v, (v.conj() @ rotated @ v) * v, atol=1e-12)
    assert candidate_basis(model, np.eye(2) / 2, 0.8) is None


def test_discord_audit():
    assert discord_audit(model_decay_dnull(1.0)).passed
    assert discord_audit(model_general2(1.0, 0.4, 0.7)).passed
    rep = discord_audit(model_condisco4(1.0))
    assert not rep.passed and rep.max_violation > 0.05


def test_fixed_basis_decay_dnull_any_angle():
    model = model_decay_dnull(1.0)
    for theta in ANGLES:
        for t, tau in ((0.25, 0.5), (1.0, 2.0), (LN2, LN2)):
            assert fixed_basis_classicality(model, theta, t, tau).passed


def test_fixed_basis_general4_only_along_z():
    model = model_general4(1.0, 1 / 3)
    rep = fixed_basis_audit(model, [0.0])
    assert rep.passed
    rep = fixed_basis_audit(model, [np.pi / 8])
    assert not rep.passed and rep.max_violation > 1e-4


def test_fixed_basis_fails_with_system_hamiltonian():
    rep = fixed_basis_audit(model_general2(1.0, 0.4, 0.7), [np.pi / 8])
    assert not rep.passed and rep.max_violation > 1e-4
    rep = fixed_basis_classicality(model_unitary_exchange(1.0), np.pi / 8, 0.6, 0.6)
    assert not rep.passed


def test_superclassical_scans():
    for model in (model_decay_dnull(1.0), model_condisco4(1.0), model_general2(1.0, 0.4), model_general2(1.0, 0.4, 0.7)):
        rep = superclassicality_scan(model)
        assert rep.passed, (model.name, rep.max_violation)
    rep = superclassicality_scan(model_general4(1.0, 1 / 3))
    assert not rep.passed
    assert rep.witness["theta_x"] == pytest.approx(np.pi / 4)


def test_scan_is_deterministic_with_threads():
    model = model_general4(1.0, 1 / 3)
    kw = dict(thetas_x=ANGLES[:3], times=(0.5, 1.0))
    a = superclassicality_scan(model, **kw)
    b = superclassicality_scan(model, workers=4, **kw)
    assert a.to_dict() == b.to_dict()


def test_superclassical_pass_implies_fixed_basis_pass():
    for model in (model_decay_dnull(1.0), model_condisco4(1.0), model_general2(1.0, 0.4)):
        assert superclassicality_scan(model, thetas_x=ANGLES, diagonal=True).passed
        assert fixed_basis_audit(model, ANGLES).passed


def test_decomposition_audit():
    assert decomposition_audit(model_general4(1.0, 0.3)).passed
    assert decomposition_audit(model_general2(1.0, 0.4, 0.7)).passed


def test_weyl_branch_normalization():
    model = model_condisco4(1.0)
    bt = branch_traces(model, 0.6, 0.4)
    lam = (4 * np.exp(-0.6) - 1) / 3
    assert bt.stay == pytest.approx(lam, abs=1e-12)
    assert np.allclose(bt.branch, 1 - lam, atol=1e-12)


def test_disco_constraints():
    for model in (model_condisco4(1.0), model_decay_dnull(1.0), model_general2(1.0, 0.4)):
        rep = disco_constraint_check(model)
        assert rep.passed, (model.name, rep.details)
    rep = disco_constraint_check(model_general4(1.0, 1 / 3))
    assert not rep.passed and rep.details["max_residuals"]["single"] > 1e-3
    rep = disco_constraint_check(model_general4(1.0, 1 / 3), times=[0.0], taus=[0.0])
    assert rep.passed
    with pytest.raises(ValueError):
        disco_constraint_check(model_unitary_exchange(1.0))


def test_audit_report_serializes():
    rep = AuditReport("x", False, np.inf, {"m": np.eye(2)}, {"v": np.float64(0.5)})
    data = rep.to_dict()
    assert data["max_violation"] == "inf" and data["details"]["v"] == 0.5
