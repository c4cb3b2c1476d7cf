import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpemba.gates import (
    P01,
    P02,
    R01,
    R02,
    Z01,
    Z02,
    GatePlan,
    TomographyData,
    adjusted_liouvillian,
    adjusted_tomography,
    decompose,
    fidelity,
    mle_reconstruct,
    simulate_tomography,
    target_factors,
    tomography_setup,
)
from mpemba.model import IonParams, ion_liouvillian, rotated_state, sample_haar_pure, state_family_context
from mpemba.operators import exp_evolve


def random_dm(rng, d=3):
    G = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    r = G @ G.conj().T
    return r / np.trace(r)


angles = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(angles, angles)
def test_gates_are_unitary(x, y):
    for U in (P01(x), P02(x), Z01(x), Z02(x), R01(x, y), R02(x, y)):
        assert np.abs(U.conj().T @ U - np.eye(3)).max() <= 1e-12


def test_identity_target():
    plan = decompose([1, 0, 0])
    assert np.abs(plan.prepared_state() - [1, 0, 0]).max() <= 1e-12


def test_uniform_superposition():
    v = np.ones(3) / np.sqrt(3)
    assert np.abs(decompose(v).prepared_state() - v).max() <= 1e-10


def test_haar_targets():
    worst = worst_mm = worst_phys = 0.0
    for v in sample_haar_pure(3, 31, size=1000):
        plan = decompose(v)
        worst = max(worst, np.abs(plan.prepared_state() - v).max())
        M, m = target_factors(v)
        worst_mm = max(worst_mm, np.abs(plan.prepared_state() - (M @ m)[:, 0]).max())
        # physical pulses alone give the target once the phase gates are re-applied
        worst_phys = max(worst_phys, np.abs(plan.phase_gates() @ plan.physical_state() - v).max())
        assert all(np.isfinite([plan.phi, plan.phi_p, plan.phi_l1, plan.phi_l2]))
    assert worst <= 1e-10 and worst_mm <= 1e-10 and worst_phys <= 1e-10


def test_full_matrix_agrees_with_product():
    # stronger than required: the six-gate product equals M m as a matrix
    for v in sample_haar_pure(3, 32, size=50):
        M, m = target_factors(v)
        assert np.abs(decompose(v).unitary() - M @ m).max() <= 1e-10


def test_phase_frame_offsets():
    for v in sample_haar_pure(3, 33, size=50):
        plan = decompose(v)
        d = np.diag(plan.phase_gates())
        assert np.exp(1j * (np.angle(d[0]) - np.angle(d[1]))) == pytest.approx(np.exp(1j * plan.phi_l1))
        assert np.exp(1j * (np.angle(d[0]) - np.angle(d[2]))) == pytest.approx(np.exp(1j * plan.phi_l2))


def test_degenerate_branch():
    for c in (1.0, 1j, np.exp(0.3j)):
        plan = decompose([0, 0, c])
        assert plan.degenerate
        assert np.abs(plan.prepared_state() - [0, 0, c]).max() <= 1e-12


def test_rejects_bad_targets():
    with pytest.raises(ValueError):
        decompose([1, 1, 0])
    with pytest.raises(ValueError):
        decompose([1, 0])


def test_plan_json():
    plan = decompose(np.array([1, 1j, -1]) / np.sqrt(3))
    doc = json.loads(plan.to_json())
    assert doc["target"][1] == pytest.approx([0, 1 / np.sqrt(3)])
    for k in ("gamma", "phi", "phi_p", "phi_l1", "phi_l2"):
        assert np.isfinite(doc[k])


def test_zero_phase_plan_leaves_generator_unchanged():
    plan = GatePlan((1, 0, 0), 0.0, 0.0, 0.0, np.pi / 8, 0.0, 0.0, 0.0, np.pi / 4)
    assert abs(plan.phi) < 1e-15 and abs(plan.phi_p) < 1e-15
    p = IonParams()
    assert np.abs(adjusted_liouvillian(p, plan).matrix - ion_liouvillian(p).matrix).max() == 0


@pytest.mark.parametrize("phases", ["rotation", "frame"])
def test_adjusted_generator_is_isospectral(phases):
    p = IonParams()
    ref = np.linalg.eigvals(ion_liouvillian(p).matrix)
    scale = np.abs(ref).max()
    for v in sample_haar_pure(3, 34, size=10):
        w = np.linalg.eigvals(adjusted_liouvillian(p, decompose(v), phases).matrix)
        gap = np.abs(w[:, None] - ref[None, :])
        assert gap.min(axis=0).max() <= 1e-9 * scale
        assert gap.min(axis=1).max() <= 1e-9 * scale


def test_frame_phases_reproduce_dynamics(ion_spec):
    p = IonParams()
    S0 = ion_liouvillian(p)
    rng = np.random.default_rng(35)
    for v in sample_haar_pure(3, rng, size=10):
        plan = decompose(v)
        D = plan.phase_gates()
        t = rng.uniform(0, 3 * ion_spec.timescales[0])
        phys = plan.physical_state()
        lab = exp_evolve(adjusted_liouvillian(p, plan, "frame"), np.outer(phys, phys.conj()), t)
        ref = exp_evolve(S0, np.outer(v, v.conj()), t)
        assert np.abs(D @ lab @ D.conj().T - ref).max() <= 1e-10


def test_unknown_phase_mode():
    with pytest.raises(ValueError):
        adjusted_liouvillian(IonParams(), decompose([1, 0, 0]), "lab")


def test_settings_resolve_identity():
    for setup in (tomography_setup(), tomography_setup(0.4, -1.1)):
        assert len(setup.settings) == 9
        for s in setup.settings:
            assert np.abs(s.projectors.sum(axis=0) - np.eye(3)).max() <= 1e-12
            assert np.abs(s.rotation @ s.basis - np.eye(3)).max() <= 1e-12


def test_listed_basis_states_are_covered():
    r2 = 1 / np.sqrt(2)
    listed = [np.eye(3)[k] for k in range(3)]
    for j, k in ((0, 1), (0, 2), (1, 2)):
        for ph in (1, -1, 1j, -1j):
            v = np.zeros(3, dtype=complex)
            v[j], v[k] = r2, r2 * ph
            listed.append(v)
    first = [s.basis[:, 0] for s in tomography_setup().settings] + [s.basis[:, 1] for s in tomography_setup().settings[3:]]
    for v in listed:
        assert any(abs(abs(np.vdot(v, b)) - 1) < 1e-12 for b in first)


def test_simple_probabilities():
    setup = tomography_setup()
    data = simulate_tomography(np.diag([1.0, 0, 0]), setup)
    np.testing.assert_allclose(data.counts[0], [1, 0, 0], atol=1e-15)
    data = simulate_tomography(np.eye(3) / 3, setup)
    for c in data.counts:
        np.testing.assert_allclose(c, [1 / 3] * 3, atol=1e-15)


def test_probabilities_match_projector_contraction(ion_spec):
    ctx = state_family_context(ion_spec)
    psi = rotated_state(ctx, ctx.s_star)
    rho = np.outer(psi, psi.conj())
    setup = tomography_setup()
    data = simulate_tomography(rho, setup)
    for s, probs in zip(setup.settings, data.counts):
        expected = [np.real(np.vdot(s.basis[:, k], rho @ s.basis[:, k])) for k in range(3)]
        np.testing.assert_allclose(probs, expected, atol=1e-14)


def test_finite_shots_reproducible():
    rho = random_dm(np.random.default_rng(36))
    a = simulate_tomography(rho, tomography_setup(), shots=500, seed=9)
    b = simulate_tomography(rho, tomography_setup(), shots=500, seed=9)
    assert all(np.array_equal(x, y) for x, y in zip(a.counts, b.counts))
    assert all(x.sum() == 500 for x in a.counts)
    lines = a.to_csv().splitlines()
    assert lines[0] == "setting,outcome,count" and len(lines) == 28


def test_mle_pure_state_exact():
    for psi in sample_haar_pure(3, 37, size=10):
        rho = np.outer(psi, psi.conj())
        res = mle_reconstruct(simulate_tomography(rho, tomography_setup()))
        assert fidelity(rho, res.rho) >= 0.9999


def test_mle_maximally_mixed():
    res = mle_reconstruct(simulate_tomography(np.eye(3) / 3, tomography_setup()))
    assert np.abs(res.rho - np.eye(3) / 3).max() <= 1e-6


def test_mle_output_valid_and_monotone():
    rng = np.random.default_rng(38)
    for _ in range(10):
        data = simulate_tomography(random_dm(rng), tomography_setup(), shots=200, seed=rng)
        res = mle_reconstruct(data)
        r = res.rho
        assert np.abs(r - r.conj().T).max() <= 1e-12
        assert abs(np.trace(r) - 1) <= 1e-12
        assert np.linalg.eigvalsh(r).min() >= -1e-12
        assert np.all(np.diff(res.log_likelihood) >= 0)


def test_mle_finite_shots_median_fidelity():
    # measured at build time: median 0.995 over 100 trials
    rng = np.random.default_rng(39)
    fids = []
    for psi in sample_haar_pure(3, rng, size=100):
        rho = np.outer(psi, psi.conj())
        data = simulate_tomography(rho, tomography_setup(), shots=1000, seed=rng)
        fids.append(fidelity(rho, mle_reconstruct(data).rho))
    assert np.median(fids) >= 0.98


def test_mle_rejects_empty_counts():
    setup = tomography_setup()
    with pytest.raises(ValueError):
        mle_reconstruct(TomographyData(setup, [np.zeros(3)] * 9, 0))


def test_mle_bootstrap_errorbars():
    rho = random_dm(np.random.default_rng(40))
    data = simulate_tomography(rho, tomography_setup(), shots=300, seed=1)
    res = mle_reconstruct(data, bootstrap=20, seed=2)
    assert res.errorbars.shape == (3, 3)
    assert np.all(res.errorbars.real >= 0) and res.errorbars.real.max() > 0


def test_fidelity_basics():
    rng = np.random.default_rng(41)
    r, s = random_dm(rng), random_dm(rng)
    assert fidelity(r, r) == pytest.approx(1.0, abs=1e-10)
    assert fidelity(r, s) == pytest.approx(fidelity(s, r), abs=1e-10)
    assert fidelity(np.diag([1.0, 0, 0]), np.diag([0, 1.0, 0])) == pytest.approx(0.0, abs=1e-15)


def test_adjusted_tomography_offsets():
    plan = decompose(np.array([0.6, 0.0, 0.8j]))
    setup = adjusted_tomography(plan)
    assert setup.phase01 == plan.phi_l1 and setup.phase02 == plan.phi_l2
