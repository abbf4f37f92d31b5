import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp

from indiffbond import cir as cm
from indiffbond.params import REFERENCE_CIR, CirParams


def riccati_factors(tau, cir):
    """Integrate B' = 1 - alpha B - phi^2 B^2 / 2, (log A)' = -alpha lambda_bar B."""
    def rhs(_, z):
        B = z[0]
        return [1.0 - cir.alpha * B - 0.5 * cir.phi ** 2 * B * B, -cir.alpha * cir.lambda_bar * B]
    sol = solve_ivp(rhs, (0.0, tau), [0.0, 0.0], rtol=1e-12, atol=1e-14)
    B, log_a = sol.y[:, -1]
    return math.exp(log_a), B


@pytest.mark.parametrize("tau", [0.05, 1.0, 5.0, 30.0])
@pytest.mark.parametrize("cir", [REFERENCE_CIR, CirParams(0.5, 0.1, 0.3), CirParams(0.05, 0.02, 0.05)])
def test_survival_factors_match_riccati_ode(tau, cir):
    A, B = riccati_factors(tau, cir)
    f = cm.survival_factors(tau, cir)
    assert f.A == pytest.approx(A, rel=1e-9)
    assert f.B == pytest.approx(B, rel=1e-9)


def test_tau_zero_is_identity():
    f = cm.survival_factors(0.0, REFERENCE_CIR)
    assert (f.A, f.B) == (1.0, 0.0)
    assert cm.survival_prob(0.3, 0.0, REFERENCE_CIR) == 1.0


def test_long_horizon_is_finite_and_tends_to_limit():
    f = cm.survival_factors(1e5, REFERENCE_CIR)
    assert f.B == pytest.approx(2.0 / (REFERENCE_CIR.alpha + f.xi), rel=1e-14)
    assert math.isfinite(math.log(cm.survival_factors(1e4, REFERENCE_CIR).A))


def test_deterministic_limit():
    """phi -> 0 leaves an ODE for lambda with an explicit integral."""
    cir = CirParams(0.2, 0.06, 1e-8)
    lam0, T = 0.3, 4.0
    integral = 0.06 * T + (lam0 - 0.06) * (1 - math.exp(-0.2 * T)) / 0.2
    assert cm.survival_prob(lam0, T, cir) == pytest.approx(math.exp(-integral), rel=1e-10)


@given(st.floats(0.0, 2.0), st.floats(0.0, 40.0), st.floats(0.0, 40.0))
def test_survival_decreasing_in_tau_and_bounded(lam0, t1, t2):
    lo, hi = sorted((t1, t2))
    p_lo = cm.survival_prob(lam0, lo, REFERENCE_CIR)
    p_hi = cm.survival_prob(lam0, hi, REFERENCE_CIR)
    assert 0.0 < p_hi <= p_lo <= 1.0


@given(st.floats(0.0, 2.0), st.floats(0.0, 2.0), st.floats(0.01, 30.0))
def test_survival_decreasing_in_intensity(l1, l2, tau):
    lo, hi = sorted((l1, l2))
    assert cm.survival_prob(hi, tau, REFERENCE_CIR) <= cm.survival_prob(lo, tau, REFERENCE_CIR)


def test_classical_price_and_spread():
    T, r, lam0 = 5.0, 0.03, 0.02
    p = cm.classical_price(lam0, T, r, REFERENCE_CIR)
    assert p == pytest.approx(math.exp(-r * T) * cm.survival_prob(lam0, T, REFERENCE_CIR))
    assert cm.classical_spread(lam0, T, REFERENCE_CIR) == pytest.approx(-math.log(p) / T - r)
    assert cm.classical_spread(lam0, 0.0, REFERENCE_CIR) == lam0
    assert cm.classical_spread(lam0, 1e-8, REFERENCE_CIR) == pytest.approx(lam0, rel=1e-6)


def test_coefficients():
    y = np.array([0.0, 0.04, 0.25])
    np.testing.assert_allclose(cm.drift_b(y, REFERENCE_CIR), 0.2 * (0.06 - y))
    np.testing.assert_allclose(cm.vol_a(y, REFERENCE_CIR), 0.03 * np.sqrt(y))
    assert isinstance(cm.vol_a(0.04, REFERENCE_CIR), float)
    with pytest.raises(ValueError):
        cm.vol_a(-0.1, REFERENCE_CIR)
    with pytest.raises(ValueError):
        cm.drift_b(np.array([0.1, -1e-9]), REFERENCE_CIR)


def test_coefficient_values_at_reference_params():
    assert cm.drift_b(0.06, REFERENCE_CIR) == 0.0
    assert cm.drift_b(0.0, REFERENCE_CIR) == pytest.approx(0.012)
    assert cm.drift_b(1.0, REFERENCE_CIR) == pytest.approx(-0.188)
    assert cm.vol_a(0.0, REFERENCE_CIR) == 0.0
    assert cm.vol_a(1.0, REFERENCE_CIR) == pytest.approx(0.03)
    assert cm.vol_a(0.25, REFERENCE_CIR) == pytest.approx(0.015)
    assert cm.survival_factors(1.0, REFERENCE_CIR).xi == pytest.approx(math.sqrt(0.0418))


def test_vanishing_alpha_and_phi():
    cir = CirParams(1e-6, 0.06, 1e-6)
    f = cm.survival_factors(3.0, cir)
    assert f.B == pytest.approx(3.0, rel=1e-5)
    assert f.A == pytest.approx(1.0, abs=1e-6)
    assert cm.survival_prob(0.2, 3.0, cir) == pytest.approx(math.exp(-0.6), rel=1e-5)
    assert cm.classical_price(0.0, 3.0, 0.04, cir) == pytest.approx(math.exp(-0.12), rel=1e-6)
    assert cm.classical_price(0.2, 3.0, 0.0, cir) == pytest.approx(math.exp(-0.6), rel=1e-5)


def test_zero_vol_is_exact():
    cir = CirParams(0.2, 0.06, 0.0)
    integral = 0.06 * 2.0 + (0.3 - 0.06) * (1 - math.exp(-0.4)) / 0.2
    assert cm.survival_prob(0.3, 2.0, cir) == pytest.approx(math.exp(-integral), rel=1e-14)
