import logging
from math import pi

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from levykoop.koopman import estimate_generator
from levykoop.polydict import (PolyCoeffs, aligned_indices, build_basis, coordinate_selector,
                               from_terms)
from levykoop.stoch_sim import SdeModel, generate_snapshots, levy_second_moment
from levykoop.sysid import (IdentifiedModel, SeparationError, assemble_model, backward_iteration,
                            identify, identify_drift, render_table, separate_diffusions)


def _L_with_rho(basis, rhos):
    """Zero-drift generator whose action on x_i^2 is the given rho_i (one per coordinate)."""
    L = np.zeros((len(basis), len(basis)))
    for i, r in enumerate(rhos):
        k = int(np.flatnonzero(coordinate_selector(basis, i, 2).values)[0])
        L[:, k] = r
    return L


def _separate(basis, rhos, **kw):
    L = _L_with_rho(basis, rhos)
    return separate_diffusions(L, basis, identify_drift(L, basis), **kw)


def test_drift_of_zero_generator():
    B = build_basis(2, 3)
    assert all(np.all(p.values == 0) for p in identify_drift(np.zeros((10, 10)), B))


def test_drift_from_exact_linear_generator():
    # dX = -X dt sends x^k to -k x^k
    B = build_basis(1, 3)
    (xi,) = identify_drift(np.diag([0.0, -1.0, -2.0, -3.0]), B)
    np.testing.assert_array_equal(xi.values, [0, -1, 0, 0])


def test_separation_worked_example():
    B = build_basis(1, 2)
    rho = np.array([1 + 9 * 2 / pi, 4.0, 4.0])
    a, s2, diag = _separate(B, [rho], alpha=1.0, c=1.0, p2=1)
    np.testing.assert_allclose(a[0].values, [1, 4, 4], rtol=1e-13)
    np.testing.assert_allclose(s2, [9.0], rtol=1e-13)
    np.testing.assert_allclose(diag["eta"][0], [1, 2], rtol=1e-13)


def test_separation_zero_rho():
    B = build_basis(1, 4)
    a, s2, _ = _separate(B, [np.zeros(5)], alpha=1.0, p2=1)
    assert np.all(a[0].values == 0) and s2[0] == 0


def test_brownian_mode_is_identity():
    B = build_basis(2, 3)
    rng = np.random.default_rng(0)
    rhos = [rng.normal(size=10), rng.normal(size=10)]
    L = _L_with_rho(B, rhos)
    a, s2, _ = separate_diffusions(L, B, identify_drift(L, B), mode="brownian")
    for ai, r in zip(a, rhos):
        np.testing.assert_array_equal(ai.values, r)
    assert np.all(s2 == 0)


@settings(max_examples=50)
@given(st.floats(0.1, 3), st.floats(-3, 3), st.floats(0, 2), st.sampled_from([0.5, 1.0, 1.5]))
def test_p1_closed_form(eta1, eta0, sigma2, alpha):
    B = build_basis(1, 2)
    ct = levy_second_moment(alpha, 1.0)
    rho = np.array([eta0**2 + ct * sigma2**2, 2 * eta0 * eta1, eta1**2])
    a, s2, diag = _separate(B, [rho], alpha=alpha, p2=1)
    e1 = np.sqrt(rho[2])
    e0_sq = (rho[1] / (2 * e1)) ** 2
    np.testing.assert_allclose(diag["eta"][0][1], e1, rtol=1e-14)
    np.testing.assert_allclose(diag["eta"][0][0] ** 2, e0_sq, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(s2[0], (rho[0] - e0_sq) / ct, rtol=1e-9, atol=1e-12)


@st.composite
def _eta_sigma(draw):
    p = draw(st.integers(1, 3))
    eta = [draw(st.floats(-2, 2)) for _ in range(p)] + [draw(st.floats(0.2, 2))]
    return p, np.array(eta), draw(st.floats(0, 3)), draw(st.sampled_from([0.5, 1.0, 1.5]))


@settings(max_examples=100)
@given(_eta_sigma())
def test_round_trip_and_sign_invariance(args):
    p, eta, sigma2, alpha = args
    B = build_basis(1, 6)
    ct = levy_second_moment(alpha, 1.0)
    tilde = np.convolve(eta, eta)
    rho = np.zeros(7)
    rho[: 2 * p + 1] = tilde
    rho[0] += ct * sigma2**2
    a, s2, _ = _separate(B, [rho], alpha=alpha, p2=p)
    np.testing.assert_allclose(a[0].values[: 2 * p + 1], tilde, rtol=1e-10, atol=1e-10 * np.abs(tilde).max())
    assert abs(s2[0] - sigma2**2) <= 1e-10 * max(1.0, sigma2**2) * max(1.0, np.abs(tilde).max())
    # -eta produces the same rho, hence the same output
    rho_neg = np.zeros(7)
    rho_neg[: 2 * p + 1] = np.convolve(-eta, -eta)
    rho_neg[0] += ct * sigma2**2
    a2, s22, _ = _separate(B, [rho_neg], alpha=alpha, p2=p)
    np.testing.assert_array_equal(a2[0].values, a[0].values)
    np.testing.assert_array_equal(s22, s2)


def test_backward_iteration_p3():
    eta = np.array([0.3, -1.2, 0.7, 1.5])
    np.testing.assert_allclose(backward_iteration(np.convolve(eta, eta), 3), eta, rtol=1e-13)


def test_constant_sigma1_refused():
    with pytest.raises(SeparationError, match="constant"):
        _separate(build_basis(1, 2), [np.array([1.0, 0, 0])], alpha=1.0, p2=0)


def test_negative_lead_raises():
    with pytest.raises(SeparationError):
        _separate(build_basis(1, 2), [np.array([1.0, 0.0, -0.5])], alpha=1.0, p2=1, tol=1e-3)


def test_small_negative_sigma2_clamped(caplog):
    B = build_basis(1, 2)
    rho = np.array([1.0 - 1e-4, 2.0, 1.0])  # eta = [1, 1], sigma2^2 slightly below 0
    with caplog.at_level(logging.WARNING):
        a, s2, diag = _separate(B, [rho], alpha=1.0, p2=1, tol=1e-3)
    assert s2[0] == 0 and diag["clamped"][0] == ["sigma2_sq"]
    assert "clamped" in caplog.text
    with pytest.raises(SeparationError):
        _separate(B, [np.array([0.5, 2.0, 1.0])], alpha=1.0, p2=1, tol=1e-3)


def test_p2_validation():
    B = build_basis(1, 3)
    with pytest.raises(SeparationError):
        _separate(B, [np.zeros(4)], alpha=1.0, p2=2)
    with pytest.raises(ValueError):
        _separate(B, [np.zeros(4)], alpha=1.0)


def test_auto_p2_detection():
    B = build_basis(1, 6)
    eta = np.array([0.5, 1.0, 0.8])
    rho = np.zeros(7)
    rho[:5] = np.convolve(eta, eta)
    rho[0] += levy_second_moment(1.0, 1.0) * 0.25
    a, s2, diag = _separate(B, [rho], alpha=1.0, auto_p2=True, tol=1e-9)
    assert diag["p2"] == [2]
    assert s2[0] == pytest.approx(0.25, rel=1e-10)


def test_two_dimensional_separation_uses_aligned_entries():
    B = build_basis(2, 3)
    ct = levy_second_moment(1.0, 1.0)
    rhos = []
    for i, (eta, s) in enumerate([(np.array([0.0, 1.0]), 1.0), (np.array([0.5, 2.0]), 0.5)]):
        r = np.zeros(10)
        idx = aligned_indices(B, i)
        r[idx[:3]] = np.convolve(eta, eta)
        r[idx[0]] += ct * s**2
        r[4] = 0.01  # xy cross term is reported, not used
        rhos.append(r)
    a, s2, diag = _separate(B, rhos, alpha=1.0, p2=[1, 1])
    np.testing.assert_allclose(s2, [1.0, 0.25], rtol=1e-12)
    np.testing.assert_allclose(a[0].values, from_terms(B, {"x^2": 1}).values, atol=1e-14)
    np.testing.assert_allclose(a[1].values, from_terms(B, {"1": 0.25, "y": 2, "y^2": 4}).values, atol=1e-14)
    assert 0.01 in diag["cross_terms"][0]


def test_assemble_model_examples(tmp_path):
    B = build_basis(1, 5)
    m = assemble_model([from_terms(B, {"x": 4, "x^3": -1})], [from_terms(B, {"x^2": 1})], [1.0955], 1.0, 1.0)
    assert m.mode == "levy"
    assert m.sigma2[0] == pytest.approx(1.0467, abs=1e-4)
    assert m.levy.alpha == 1.0
    z = assemble_model([PolyCoeffs(B, np.zeros(6))], [PolyCoeffs(B, np.zeros(6))], [0.0])
    assert z.mode == "brownian" and z.levy is None
    np.testing.assert_array_equal(z.drift_at(np.array([[0.5]])), [[0.0]])
    m.save(tmp_path / "m.json")
    back = IdentifiedModel.load(tmp_path / "m.json")
    np.testing.assert_array_equal(back.drift[0].values, m.drift[0].values)
    np.testing.assert_array_equal(back.sigma2_sq, m.sigma2_sq)
    assert back.alpha == 1.0 and back.c == 1.0


def test_zero_noise_linear_drift_recovered_exactly():
    B = build_basis(1, 3)
    model = SdeModel([from_terms(B, {"1": 0.5, "x": -2})], [from_terms(B, {})])
    S = generate_snapshots(model, [(-1, 1)], 2000, 0.01)
    m = identify(estimate_generator(S, B), mode="brownian")
    np.testing.assert_allclose(m.drift[0].values, [0.5, -2, 0, 0], atol=1e-9)
    table = render_table(m, model)
    assert "-2.0000" in table and "0.5000" in table
    # Euler quadratic term a^2 dt = 0.04 stays below the display threshold
    assert "Diffusion sigma1_x^2" in table
    diffusion = table.split("Diffusion sigma1_x^2")[1]
    assert all(row.split()[-1] == "0" for row in diffusion.strip().splitlines()[1:])


def test_identify_levy_end_to_end_small():
    from levykoop.stoch_sim import LevySpec
    B = build_basis(1, 4)
    model = SdeModel([from_terms(B, {"x": 1, "x^3": -1})], [from_terms(B, {"x": 1})], [1.0], LevySpec())
    S = generate_snapshots(model, [(-2, 2)], 200000, 0.01, seed=3)
    m = identify(estimate_generator(S, B), "levy", 1.0, 1.0, p2=1, bounds=[(-2, 2)])
    assert abs(m.drift[0].values[1] - 1) < 0.5
    assert abs(m.sigma2_sq[0] - 1) < 0.5
    assert "rho_stderr" in m.diagnostics and "drift_stderr" in m.diagnostics
    assert "sigma2^2" in render_table(m, model)


def test_truncation_warning_respects_noise_level(caplog):
    B = build_basis(1, 3)
    L = np.zeros((4, 4))
    L[3, 1] = 0.02  # drift has a small x^3 term, so x * b leaves the basis
    drift = identify_drift(L, B)
    with caplog.at_level(logging.WARNING):
        _, _, diag = separate_diffusions(L, B, drift, mode="brownian")
    assert "exceeds degree" in caplog.text and diag["truncated_drift_shift"] == [True]
    caplog.clear()
    with caplog.at_level(logging.WARNING):
        separate_diffusions(L, B, drift, mode="brownian", drift_tol=0.1)
    assert "exceeds degree" not in caplog.text
