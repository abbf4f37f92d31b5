import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from indiffbond import pde
from indiffbond.oracle import bernoulli_closed_form
from indiffbond.params import REFERENCE_CIR, REFERENCE_MARKET, AgentKind, GridSpec, validate


def config(T=1.0, N=40, M=99, **changes):
    market = replace(REFERENCE_MARKET, **changes)
    return validate(market, REFERENCE_CIR, GridSpec(T=T, N=N, M=M))


@settings(max_examples=50, deadline=None)
@given(st.integers(3, 40), st.integers(0, 2 ** 32 - 1))
def test_thomas_matches_dense_solve(n, seed):
    rng = np.random.default_rng(seed)
    sub, sup = rng.uniform(0.1, 1.0, n), rng.uniform(0.1, 1.0, n)
    diag = -(sub + sup + rng.uniform(0.5, 2.0, n))  # diagonally dominant like the march
    rhs = rng.normal(size=n)
    dense = np.diag(diag) + np.diag(sub[1:], -1) + np.diag(sup[:-1], 1)
    np.testing.assert_allclose(pde.thomas_solve(sub, diag, sup, rhs),
                               np.linalg.solve(dense, rhs), rtol=1e-10, atol=1e-12)


def test_thomas_reports_zero_pivot():
    with pytest.raises(pde.SolverBreakdownError) as info:
        pde.thomas_solve([0, 1, 1], [0.0, 1, 1], [1, 1, 0], [1, 1, 1])
    assert info.value.node == 0


def test_linearize_power():
    src, shift = pde.linearize_power(2.0, 0.5)
    assert src == pytest.approx(1.5 * 2 ** -0.5)
    assert shift == pytest.approx(-0.5 * 2 ** -1.5)
    # tangent line: exact at the expansion point
    assert src + shift * 2.0 == pytest.approx(2 ** -0.5)
    with pytest.raises(pde.PositivityError):
        pde.linearize_power(np.array([1.0, 0.0]), 0.1)


def test_zero_correlation_linearization_is_exact():
    src, shift = pde.linearize_power(np.array([0.3, 1.7]), 0.0)
    np.testing.assert_array_equal(src, 1.0)
    np.testing.assert_array_equal(shift, 0.0)


@pytest.mark.parametrize("agent", list(AgentKind))
def test_vectorised_stencil_matches_scalar_rows(agent):
    cfg = config(correlation=-0.5)
    coeffs = pde.build_coefficients(cfg, agent)
    sub, base_diag, sup = pde._stencil(coeffs, cfg.dt, cfg.dy, upwind=False)
    v_prev = np.linspace(0.7, 1.0, coeffs.y.size)
    for j in (1, 7, cfg.grid.N):
        row = pde.assemble_row(j, coeffs, v_prev[j], cfg.dt, cfg.dy)
        src, shift = pde.linearize_power(v_prev[j], coeffs.theta)
        assert row.alpha == pytest.approx(sub[j], rel=1e-14)
        assert row.nu == pytest.approx(sup[j], rel=1e-14)
        assert row.beta == pytest.approx(base_diag[j] + cfg.dt * coeffs.F4[j] * shift, rel=1e-14)
        assert row.d == pytest.approx(-v_prev[j] - cfg.dt * coeffs.F4[j] * src, rel=1e-14)


def test_assemble_row_folds_dirichlet_neighbours():
    cfg = config()
    coeffs = pde.build_coefficients(cfg, AgentKind.BUYER)
    free = pde.assemble_row(1, coeffs, 0.9, cfg.dt, cfg.dy)
    fixed = pde.assemble_row(1, coeffs, 0.9, cfg.dt, cfg.dy, left=0.8, right=0.7)
    assert fixed.alpha == 0.0 and fixed.nu == 0.0
    assert fixed.d == pytest.approx(free.d - free.alpha * 0.8 - free.nu * 0.7)


def test_coefficients():
    cfg = config(correlation=-0.3)
    c = pde.build_coefficients(cfg, AgentKind.SELLER)
    y = c.y
    one_m = 1 - 0.09
    np.testing.assert_allclose(c.F1, 0.5 * 0.03 ** 2 * y)
    np.testing.assert_allclose(c.F2, 0.2 * (0.06 - y) + 0.3 * 0.09 / 0.15 * 0.03 * np.sqrt(y))
    np.testing.assert_allclose(c.F3, -one_m * (0.18 + y))
    np.testing.assert_allclose(c.F4, math.exp(-0.01 * cfg.discount) * one_m * y)
    assert y[0] == 0.0 and y[-1] == pytest.approx(1.0)


@pytest.mark.parametrize("agent", list(AgentKind))
@pytest.mark.parametrize("lam", [0.0, 0.02, 0.5])
def test_degenerate_march_tracks_closed_form(agent, lam):
    cfg = config(T=2.0, N=5, M=3999, risk_aversion=0.7, correlation=-0.6)
    surf = pde.march(cfg, agent, intensity_override=lam)
    exact = bernoulli_closed_form(lam, surf.tau, cfg, agent).u
    # every node carries the same scalar ODE
    assert np.ptp(surf.values, axis=1).max() == 0.0
    np.testing.assert_allclose(surf.values[:, 0], exact, atol=1e-4)


def test_boundary_values():
    cfg = config(T=3.0, risk_aversion=0.5)
    for agent in AgentKind:
        bottom, top = pde.boundary_values(0.0, agent, cfg)
        assert bottom == 1.0 and top == pytest.approx(1.0)
    bottom, top = pde.boundary_values(3.0, AgentKind.MERTON, cfg)
    assert bottom == pytest.approx(math.exp(-0.99 * 0.18 * 3.0))
    assert top == 1.0
    s = AgentKind.BUYER.source_scale(cfg.gamma_c)
    _, top = pde.boundary_values(3.0, AgentKind.BUYER, cfg)
    from indiffbond.cir import survival_prob
    assert top == pytest.approx((s - (s - 1) * survival_prob(1.0, 3.0, REFERENCE_CIR)) ** 0.99)


@pytest.mark.parametrize("mode", ["dirichlet", "upwind"])
@pytest.mark.parametrize("interior", [False, True])
def test_march_is_positive_and_ordered(mode, interior):
    grid = GridSpec(T=5.0, N=100, M=499, bottom_boundary=mode, upwind_interior=interior)
    cfg = validate(replace(REFERENCE_MARKET, risk_aversion=0.7, correlation=-0.5), REFERENCE_CIR, grid)
    u, wb, ws = (pde.march(cfg, a).values for a in AgentKind)
    assert np.all(u > 0) and np.all(ws > 0)
    assert np.max(ws - u) <= 1e-12
    assert np.max(u - wb) <= 1e-12
    assert np.all(u[1:, 1:-1] < 1.0)


def test_bottom_modes_agree_away_from_zero_intensity():
    kw = dict(T=5.0, N=400, M=499)
    a = pde.march(validate(REFERENCE_MARKET, REFERENCE_CIR, GridSpec(**kw)), AgentKind.BUYER)
    b = pde.march(validate(REFERENCE_MARKET, REFERENCE_CIR, GridSpec(bottom_boundary="upwind", **kw)),
                  AgentKind.BUYER)
    # the intensity leaves zero at once, so the buyer's payoff stream lifts the
    # true value above the frozen-intensity Dirichlet value; the layer is thin
    assert b.final[0] > a.final[0]
    assert b.at(0.02) == pytest.approx(a.at(0.02), abs=2e-4)
    assert b.at(0.12) == pytest.approx(a.at(0.12), abs=1e-5)


def test_march_is_deterministic():
    cfg = config(T=2.0, N=60, M=199)
    a = pde.march(cfg, AgentKind.SELLER).values
    b = pde.march(cfg, AgentKind.SELLER).values
    assert a.tobytes() == b.tobytes()


def test_positivity_error_reports_location(monkeypatch):
    cfg = config(T=1.0, N=10, M=9)
    original = pde._stencil

    def broken(*args, **kwargs):
        sub, diag, sup = original(*args, **kwargs)
        return sub, diag * -1.0, sup  # flips the sign of the solution

    monkeypatch.setattr(pde, "_stencil", broken)
    with pytest.raises(pde.PositivityError) as info:
        pde.march(cfg, AgentKind.MERTON)
    assert info.value.level == 1
    assert info.value.value <= 0.0
    assert "refine" in str(info.value)


def test_surface_interpolation_and_csv(tmp_path):
    cfg = config(T=0.5, N=4, M=1)
    surf = pde.march(cfg, AgentKind.BUYER)
    assert surf.at(surf.y[2]) == pytest.approx(surf.final[2])
    mid = 0.5 * (surf.y[1] + surf.y[2])
    assert surf.at(mid) == pytest.approx(0.5 * (surf.final[1] + surf.final[2]))
    with pytest.raises(ValueError):
        surf.at(1.5)
    path = tmp_path / "s.csv"
    surf.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "tau,y,value"
    assert len(lines) == 1 + surf.values.size
    tau, y, value = (float(x) for x in lines[1 + 6 + 2].split(","))
    assert (tau, y) == (pytest.approx(surf.tau[1]), pytest.approx(surf.y[2]))
    assert value == pytest.approx(surf.values[1, 2], rel=1e-11)


def test_coefficients_at_zero_intensity_and_agent_ratio():
    cfg = config(correlation=-0.4, risk_aversion=0.7)
    m = pde.build_coefficients(cfg, AgentKind.MERTON)
    b = pde.build_coefficients(cfg, AgentKind.BUYER)
    assert (m.F1[0], m.F4[0]) == (0.0, 0.0)
    assert m.F2[0] == pytest.approx(0.2 * 0.06)
    assert m.F3[0] == pytest.approx(-(1 - 0.16) * 0.18)
    np.testing.assert_allclose(b.F4[1:] / m.F4[1:], math.exp(cfg.gamma_c), rtol=1e-14)
    flat = pde.build_coefficients(config(correlation=0.0), AgentKind.MERTON)
    from indiffbond.cir import drift_b
    np.testing.assert_array_equal(flat.F2, drift_b(flat.y, REFERENCE_CIR))


def test_linearisation_at_one_and_error_bound():
    theta = 0.01 / 0.99
    src, shift = pde.linearize_power(1.0, theta)
    assert (src, shift) == (pytest.approx(1 + theta), pytest.approx(-theta))
    assert src + shift * 1.0 == pytest.approx(1.0)
    v_prev = 0.9
    src, shift = pde.linearize_power(v_prev, theta)
    v = np.linspace(0.8, 1.0, 2001)
    err = np.abs(src + shift * v - v ** (-theta))
    # second-order remainder of the tangent line: theta (1 + theta) / 2 * dv^2 * v^(-theta - 2)
    bound = 0.5 * theta * (1 + theta) * (v - v_prev) ** 2 * 0.8 ** (-theta - 2)
    assert np.all(err <= bound + 1e-15)


def test_row_identities():
    cfg = config()
    coeffs = pde.build_coefficients(cfg, AgentKind.BUYER)
    for j in (1, 5, 20):
        row = pde.assemble_row(j, coeffs, 0.95, cfg.dt, cfg.dy)
        assert row.alpha + row.nu == pytest.approx(2 * cfg.dt * coeffs.F1[j] / cfg.dy ** 2)
    no_drift = replace(coeffs, F2=np.zeros_like(coeffs.F2))
    row = pde.assemble_row(5, no_drift, 0.95, cfg.dt, cfg.dy)
    assert row.alpha == row.nu


def test_frozen_row_is_scalar_bernoulli_update():
    cfg = config(T=1.0, N=3, M=9, correlation=-0.7, risk_aversion=0.7)
    lam = 0.3
    coeffs = pde.build_coefficients(cfg, AgentKind.SELLER, intensity_override=lam)
    surf = pde.march(cfg, AgentKind.SELLER, intensity_override=lam)
    u = 1.0
    for i in range(1, cfg.grid.M + 2):
        row = pde.assemble_row(2, coeffs, u, cfg.dt, cfg.dy)
        assert row.alpha == 0.0 and row.nu == 0.0
        u = row.d / row.beta
        assert surf.values[i, 2] == pytest.approx(u, rel=1e-13)


def test_boundary_special_cases():
    flat = config(T=2.0, excess_return=0.0)
    for agent in AgentKind:
        assert pde.boundary_values(2.0, agent, flat)[0] == 1.0
    tiny = config(T=2.0, risk_aversion=1e-12)
    for agent in AgentKind:
        assert pde.boundary_values(2.0, agent, tiny)[1] == pytest.approx(1.0, abs=1e-11)


def test_no_default_risk_limit():
    """lambda_bar = 0 and a vanishing CIR: F4 = 0 and every agent decays like Merton."""
    from indiffbond.params import CirParams
    cir = CirParams(alpha=1e-9, lambda_bar=1e-12, phi=1e-12)
    cfg = validate(replace(REFERENCE_MARKET, correlation=-0.3), cir,
                   GridSpec(T=2.0, N=20, M=199, y_max=1e-9))
    decay = np.exp(-cfg.one_minus_rho2 * cfg.sharpe_term * (cfg.dt * np.arange(201)))
    for agent in AgentKind:
        surf = pde.march(cfg, agent)
        # the top node keeps its no-stock value 1; the decay holds everywhere else
        np.testing.assert_allclose(surf.values[:, -1], 1.0, atol=1e-12)
        below = surf.values[:, :-1]
        # backward Euler for v' = -k v has a first-order time error only
        np.testing.assert_allclose(below, np.broadcast_to(decay[:, None], below.shape), rtol=2e-3)


def test_reference_parameters_keep_strict_ordering_in_interior():
    cfg = validate(REFERENCE_MARKET, REFERENCE_CIR, GridSpec.for_maturity(10.0, N=400))
    u, wb, ws = (pde.march(cfg, a).values for a in AgentKind)
    assert np.all(ws[1:, 1:] < u[1:, 1:])
    assert np.all(u <= wb)
