from math import pi

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from levykoop.nonlocal_pde import (Domain, Grid, ScalarField, SolverError, assemble_generator,
                                   field_error, jump_weights, solve_ep, solve_met, solve_met_ep,
                                   write_svg)
from levykoop.polydict import build_basis, from_terms
from levykoop.stoch_sim import LevySpec, SdeModel, c_alpha
from levykoop.sysid import assemble_model


def _model(drift, sigma1, sigma2=None, alpha=1.0, c=1.0, dim=1, deg=3):
    B = build_basis(dim, deg)
    levy = LevySpec(alpha, c) if sigma2 is not None else None
    return SdeModel([from_terms(B, t) for t in drift], [from_terms(B, t) for t in sigma1], sigma2, levy)


def _interior_x(gen):
    return gen.nodes[gen.interior][:, 0]


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
def test_jump_part_on_x_squared(alpha):
    m = _model([{}], [{}], [1.0], alpha)
    gen = assemble_generator(m, Domain([(-1, 1)]), Grid(199))
    out = gen.apply(lambda p: p[:, 0] ** 2)
    target = 2 * c_alpha(alpha) / (2 - alpha)
    assert np.abs(out - target).max() < 0.02
    if alpha == 1.0:
        np.testing.assert_allclose(target, 2 / pi)


def test_constants_annihilated():
    m = _model([{"x": 4, "x^3": -1}], [{"x": 1}], [1.0])
    gen = assemble_generator(m, Domain([(-2, 2)]), Grid(99))
    assert np.abs(gen.apply(lambda p: np.ones(len(p)))).max() < 1e-10


def test_drift_acts_on_coordinate():
    m = _model([{"x": 4, "x^3": -1}], [{}])
    gen = assemble_generator(m, Domain([(-2, 2)]), Grid(99))
    x = _interior_x(gen)
    np.testing.assert_allclose(gen.apply(lambda p: p[:, 0]), 4 * x - x**3, atol=1e-10)


def test_drift_on_coordinate_with_central_differences():
    m = _model([{"x": 4, "x^3": -1}], [{"1": 3}])
    errs = []
    for n in (49, 99):
        gen = assemble_generator(m, Domain([(-2, 2)]), Grid(n))
        x = _interior_x(gen)
        errs.append(np.abs(gen.apply(lambda p: p[:, 0] ** 3) - (3 * x**2 * (4 * x - x**3) + 9 * 3 * x)).max())
    assert errs[1] < errs[0] / 3.5  # second order


def test_jump_weights_integrate_linear_exactly():
    h, W, alpha = 0.1, 0.73, 1.3
    omega = jump_weights(h, W, alpha)
    g = lambda w: 2.0 + 3.0 * w
    j = np.arange(1, len(omega) + 1)
    approx = omega @ g(j * h)
    # on (0, h) the quadrature holds g(h); elsewhere it is exact for linear g
    exact = integrate.quad(lambda w: w ** (1 - alpha) * g(w), h, W)[0] + g(h) * h ** (2 - alpha) / (2 - alpha)
    assert approx == pytest.approx(exact, rel=1e-12)


def test_brownian_met_and_ep_closed_forms():
    m = _model([{}], [{"1": 1}])
    for n in (49, 99):
        met, ep = solve_met_ep(m, Domain([(-1, 1)], "right"), Grid(n))
        x = met.interior_nodes[:, 0]
        h = met.h[0]
        assert np.abs(met.interior_values - (1 - x**2)).max() < 4 * h**2
        assert np.abs(ep.interior_values - (x + 1) / 2).max() < 4 * h**2
    assert met(np.array([[0.0]]))[0] == pytest.approx(1.0, abs=1e-8)


def test_ep_full_exterior_is_one():
    for m in (_model([{"x": 1}], [{"1": 0.5}]), _model([{"x": 1}], [{"x": 1}], [1.0])):
        ep = solve_ep(m, Domain([(-1, 1)], "all"), Grid(60))
        np.testing.assert_allclose(ep.values, 1.0, atol=1e-10)


def _const_drift_met(x, mu, s):
    k = 2 * mu / s**2
    return -(x + 1) / mu + (2 / mu) * (1 - np.exp(-k * (x + 1))) / (1 - np.exp(-2 * k))


def test_second_order_convergence_with_drift():
    mu, s = 1.0, 1.0
    m = _model([{"1": mu}], [{"1": s}])
    errs = []
    for n in (39, 79, 159):
        met = solve_met(m, Domain([(-1, 1)]), Grid(n))
        x = met.interior_nodes[:, 0]
        errs.append(np.abs(met.interior_values - _const_drift_met(x, mu, s)).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.9)


def test_pure_jump_generator_converges():
    # L x^4 for the truncated 1-stable generator: C int_0^1 (12 x^2 w^2 + 2 w^4) / w^2 dw
    m = _model([{}], [{}], [1.0])
    errs = []
    for n in (99, 199, 399):
        gen = assemble_generator(m, Domain([(-1, 1)]), Grid(n))
        x = _interior_x(gen)
        exact = (12 * x**2 + 2 / 3) / pi
        errs.append(np.abs(gen.apply(lambda p: p[:, 0] ** 4) - exact).max())
    assert errs[1] < errs[0] / 1.8 and errs[2] < errs[1] / 1.8


def test_nonlocal_tends_to_local_as_sigma2_vanishes():
    dom, grid = Domain([(-1, 1)]), Grid(49)
    f = lambda p: np.sin(2 * p[:, 0]) + p[:, 0] ** 3
    local = assemble_generator(_model([{"x": 1}], [{"x": 1}]), dom, grid).apply(f)
    diffs = []
    for s in (1e-1, 1e-2, 1e-3):
        gen = assemble_generator(_model([{"x": 1}], [{"x": 1}], [s]), dom, grid)
        diffs.append(np.abs(gen.apply(f) - local).max())
    assert diffs[0] > diffs[1] > diffs[2]
    assert diffs[2] < 1e-4


def test_symmetry_of_drift_free_model():
    m = _model([{}], [{"1": 0.5}], [1.0], alpha=1.5)
    dom_r, dom_l = Domain([(-1, 1)], "right"), Domain([(-1, 1)], "left")
    met = solve_met(m, dom_r, Grid(101))
    v = met.interior_values
    assert np.abs(v - v[::-1]).max() < 1e-10
    pr = solve_ep(m, dom_r, Grid(101)).interior_values
    pl = solve_ep(m, dom_l, Grid(101)).interior_values
    assert np.abs(pr - pl[::-1]).max() < 1e-10


def test_exterior_values_and_maximum_principle():
    m = _model([{"x": 4, "x^3": -1}], [{"x": 1}], [1.0])
    met, ep = solve_met_ep(m, Domain([(-2, 2)], "right"), Grid(199))
    ext = ~met.interior
    assert met.info["band_nodes"] == [int(np.floor(1.0 / met.h[0] + 1e-9))]
    np.testing.assert_array_equal(met.values[ext], 0.0)
    x_ext = met.nodes[ext][:, 0]
    np.testing.assert_array_equal(ep.values[ext], (x_ext >= 2 - 1e-12).astype(float))
    assert met.values.min() >= 0
    assert 0 <= ep.values.min() and ep.values.max() <= 1


def test_two_dimensional_levy_small_grid():
    m = _model([{"x": 3, "y^2": -1}, {"x": 2, "y": 1}], [{"x": 1}, {"y": 1}], [1.0, 1.0], dim=2)
    met, ep = solve_met_ep(m, Domain([(-1, 1), (-1, 1)]), Grid((24, 24)))
    assert met.info["solver"] == "dense-lu"
    assert met.interior_grid().shape == (24, 24)
    assert met.values.min() >= 0 and 0 <= ep.values.min() <= ep.values.max() <= 1
    # escape to the right is likelier from the right half
    g = ep.interior_grid()
    assert g[-1].mean() > g[0].mean()


def test_iterative_path_agrees_with_dense(monkeypatch):
    import levykoop.nonlocal_pde as pde
    m = _model([{"x": 1}, {"y": -1}], [{"x": 1}, {"y": 1}], [0.5, 0.5], dim=2)
    dom, grid = Domain([(-1, 1), (-1, 1)]), Grid((20, 20))
    dense = solve_met(m, dom, grid)
    monkeypatch.setattr(pde, "DENSE_LIMIT", 10)
    it = solve_met(m, dom, grid)
    assert it.info["solver"] == "ilu-gmres"
    assert field_error(dense, it)["max_abs"] < 1e-7


def test_learned_model_with_negative_diffusion_is_clipped(caplog):
    B = build_basis(1, 3)
    learned = assemble_model([from_terms(B, {"x": 1})], [from_terms(B, {"1": -0.01, "x^2": 1})], [0.0])
    met = solve_met(learned, Domain([(-1, 1)]), Grid(50))
    assert met.values.min() >= 0
    assert "clipping" in caplog.text


def test_singular_system_reported():
    m = _model([{}], [{}])
    with pytest.raises(SolverError, match="singular"):
        solve_met(m, Domain([(-1, 1)]), Grid(10))


def test_band_too_narrow():
    m = _model([{}], [{"1": 1}], [1.0])
    with pytest.raises(ValueError, match="band"):
        assemble_generator(m, Domain([(-1, 1)]), Grid(10, band=0.5))


def test_field_error_examples():
    m = _model([{}], [{"1": 1}])
    f = solve_met(m, Domain([(-1, 1)]), Grid(20))
    assert field_error(f, f) == {"mean_abs": 0.0, "max_abs": 0.0}
    xy = f.interior_nodes
    assert field_error((xy, np.ones(20)), (xy, 1.5 * np.ones(20))) == {"mean_abs": 0.5, "max_abs": 0.5}
    g = solve_met(m, Domain([(-1, 1)]), Grid(21))
    with pytest.raises(ValueError):
        field_error(f, g)


def test_csv_and_svg(tmp_path):
    m = _model([{"x": 1}], [{"1": 1}])
    met, ep = solve_met_ep(m, Domain([(-1, 1)]), Grid(30))
    met.to_csv(tmp_path / "met.csv")
    xy, v, kind = ScalarField.read_csv(tmp_path / "met.csv")
    assert kind == "met"
    np.testing.assert_allclose(v, met.interior_values, rtol=1e-11)
    write_svg(tmp_path / "f.svg", [met, ep])
    assert (tmp_path / "f.svg").read_text().startswith("<svg")
    m2 = _model([{}, {}], [{"1": 1}, {"1": 1}], dim=2)
    write_svg(tmp_path / "g.svg", solve_met(m2, Domain([(-1, 1), (-1, 1)]), Grid((8, 8))))
    assert (tmp_path / "g.svg").read_text().count("<rect") > 64


@settings(max_examples=10, deadline=None)
@given(st.floats(0.3, 1.7), st.floats(0.2, 1.5), st.floats(-2, 2))
def test_maximum_principle_property(alpha, s2, mu):
    m = _model([{"1": mu, "x": -1}], [{"1": 0.3}], [s2], alpha)
    met, ep = solve_met_ep(m, Domain([(-1, 1)], "right"), Grid(40))
    assert met.values.min() >= 0
    assert ep.values.min() >= -1e-8 and ep.values.max() <= 1 + 1e-8
