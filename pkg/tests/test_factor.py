import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emdtn import jets
from emdtn.errors import JetOrderExhausted
from emdtn.factor import (
    assemble_b_c,
    factorization_residual,
    phi_recursion,
    principal_part_defect,
    q_recursion,
    q_residual,
)
from emdtn.geometry import BoundaryMetricJet
from emdtn.jets import Jet3
from emdtn.scenario import Scenario, random_scenario
from emdtn.symalg import SymbolElement, sym_mul

I3 = np.eye(3)


def flat(**kw):
    return Scenario.flat(order=4, depth=4, **kw)


def test_flat_coefficients():
    c = assemble_b_c(flat())
    assert c.b0.max_abs() == 0
    assert np.abs(c.c0.p0[:, :, 0, 0] - I3).max() == 0
    assert np.abs(c.c0.p0[:, :, 0, 1:]).max() == 0
    assert c.c1.max_abs() == 0


def test_exponential_permeability():
    n = 4
    mu = Jet3.var(3, n).exp()
    s = Scenario(1.0, BoundaryMetricJet.flat(n), mu, Jet3.const(1.0, n), n, 3)
    b0 = assemble_b_c(s).b0
    assert np.allclose(b0.p0[:, :, 0, 0], np.diag([-1.0, -1.0, 0.0]), atol=1e-15)


def test_principal_parts_random():
    c = assemble_b_c(random_scenario(4, order=5))
    assert principal_part_defect(c) < 1e-13
    q = SymbolElement.q_form(c.ctx)
    for j in range(3):
        assert (c.c2[j, j] + q).max_abs() == 0
    assert c.b0.degree == 0 and c.b0.p0.shape[2] == 1 and not c.b0.p1.any()


def test_flat_phi_terms():
    omega, mu, sigma = 1.3, 0.7, 2.0
    s = flat(omega=omega, mu=mu, sigma=sigma)
    phi = phi_recursion(assemble_b_c(s), -1)
    assert phi[0].max_abs() == 0
    xi = np.array([3.0, 4.0])
    # degree-0 slot: 2 w phi_{-1} + c0 = 0
    assert np.allclose(phi[-1].evaluate(xi), -omega**2 * mu * sigma / (2 * 5.0) * I3, atol=1e-15)
    assert np.allclose(phi[1].evaluate(np.array([1.0, 0.0])), I3)


def test_flat_q_terms():
    s = flat()
    c = assemble_b_c(s)
    phi = phi_recursion(c, -1)
    q = q_recursion(phi, c, -3)
    assert q[-1].evaluate(np.array([1.0, 0.0]))[0, 0] == pytest.approx(1.0)
    assert q[-2].max_abs() == 0


def test_flat_residual_exact():
    c = assemble_b_c(flat())
    res = factorization_residual(c, phi_recursion(c, -1))
    assert set(res) == {2, 1, 0}
    assert max(res.values()) < 1e-12
    assert res[2] == 0.0


def test_random_residuals():
    s = random_scenario(9, order=5)
    c = assemble_b_c(s)
    phi = phi_recursion(c, -3)
    res = factorization_residual(c, phi)
    assert res[2] == 0.0
    assert max(res.values()) < 1e-9
    q = q_recursion(phi, c, -4)
    assert max(q_residual(q, c, phi).values()) < 1e-10


def test_recursion_needs_jet_order():
    c = assemble_b_c(random_scenario(1, order=2))
    with pytest.raises(JetOrderExhausted):
        phi_recursion(c, -3)


def test_principal_symbol_elliptic_and_central():
    c = assemble_b_c(random_scenario(12, order=3))
    phi1 = phi_recursion(c, 1)[1]
    t = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    vals = phi1.evaluate(np.stack([np.cos(t), np.sin(t)], axis=-1))
    assert np.all(np.linalg.eigvalsh(vals.real) > 0) and np.abs(vals.imag).max() == 0
    other = c.c1
    lhs = sym_mul(phi1, other).evaluate(np.array([0.4, 1.1]))
    rhs = sym_mul(other, phi1).evaluate(np.array([0.4, 1.1]))
    assert np.abs(lhs - rhs).max() < 1e-14


@settings(max_examples=5)
@given(st.integers(min_value=0, max_value=10**6))
def test_residuals_property(seed):
    s = random_scenario(seed, order=5)
    c = assemble_b_c(s)
    phi = phi_recursion(c, -2)
    assert max(factorization_residual(c, phi).values()) < 1e-9
    q = q_recursion(phi, c, -3)
    assert max(q_residual(q, c, phi).values()) < 1e-9
