import numpy as np
import pytest
from conftest import random_jet
from hypothesis import given
from hypothesis import strategies as st

from emdtn import jets
from emdtn.checks import bianchi_residual, geometry_residuals
from emdtn.errors import CoincidentPoints, NonPositiveDefinite
from emdtn.geometry import (
    BoundaryMetricJet,
    Geometry,
    VectorFieldJet,
    christoffel,
    classical_dyadic_green,
    cross,
    curl,
    curl_curl_identity_residual,
    curvature,
    inverse_metric,
    laplace_beltrami,
    trace_identity_residual,
)
from emdtn.jets import Jet3
from emdtn.scenario import random_scenario


def const(v, n):
    return Jet3.const(v, n)


def test_inverse_flat():
    u11, u12, u22, det = inverse_metric(BoundaryMetricJet.flat(3))
    assert u11 == const(1, 3) and u22 == const(1, 3) and u12.max_abs() == 0 and det == const(1, 3)


def test_inverse_diagonal():
    n = 2
    u11, u12, u22, det = inverse_metric(BoundaryMetricJet(const(2, n), const(0, n), const(1, n)))
    assert u11.value == 0.5 and det.value == 2


def test_inverse_random():
    g = random_scenario(3, order=5).metric
    geo = Geometry(g)
    prod = jets.contract("ab,bc->ac", geo.lower, geo.upper, 5)
    assert np.abs(prod - jets.constant(1.0, 5) * np.eye(3)[:, :, None]).max() < 1e-12


def test_rejects_indefinite():
    with pytest.raises(NonPositiveDefinite):
        BoundaryMetricJet(const(1, 2), const(2, 2), const(1, 2))


def test_christoffel_flat():
    assert np.abs(christoffel(BoundaryMetricJet.flat(3)).gamma).max() == 0


def test_christoffel_stretched():
    # g11 = 1 + 2 x3: Gamma^1_13 = 1/(1 + 2 x3), Gamma^3_11 = -1
    n = 3
    g = BoundaryMetricJet(1 + 2 * Jet3.var(3, n), const(0, n), const(1, n))
    gam = christoffel(g)
    want = (1 + 2 * Jet3.var(3, n - 1)).inv()
    assert gam[0, 0, 2].allclose(want, 1e-14)
    assert gam[2, 0, 0].allclose(const(-1, n - 1), 1e-14)


def test_christoffel_normal_coordinate_zeros():
    gam = christoffel(random_scenario(5, order=4).metric).gamma
    assert np.abs(gam[2, 2, :]).max() == 0
    assert np.abs(gam[:, 2, 2]).max() == 0
    assert np.abs(gam - gam.transpose(0, 2, 1, 3)).max() == 0


def test_curvature_flat():
    r, ric, mixed = curvature(BoundaryMetricJet.flat(4))
    assert max(np.abs(r).max(), np.abs(ric).max(), np.abs(mixed).max()) == 0


def test_warped_product_curvature():
    # dx3^2 + f^2 (dx1^2 + dx2^2), f = 1 + x3: planes tangent to the slices
    # have sectional curvature -f'^2/f^2, planes containing d3 have -f''/f = 0
    n = 5
    f2 = (1 + Jet3.var(3, n)) ** 2
    r, _, _ = curvature(BoundaryMetricJet(f2, const(0, n), f2))
    m = r.shape[-1]
    assert np.abs(r[0, 1, 0, 1] - jets.constant(-1.0, n - 2)[:m]).max() < 1e-13
    assert np.abs(r[0, 2, 0, 2]).max() < 1e-13
    assert np.abs(r[2, 0, 2, 0]).max() < 1e-13


def test_curvature_symmetries():
    geo = Geometry(random_scenario(11, order=5).metric)
    r = geo.riemann
    assert np.abs(r + r.transpose(0, 1, 3, 2, 4)).max() < 1e-12
    assert np.abs(geo.ricci - geo.ricci.transpose(1, 0, 2)).max() < 1e-12
    assert bianchi_residual(geo) < 1e-10


def test_euclidean_curl_and_laplacian():
    n = 3
    g = BoundaryMetricJet.flat(n)
    x = VectorFieldJet(Jet3.var(2, n), -Jet3.var(1, n), const(0, n))
    c = curl(g, x)
    assert c.X3.allclose(const(-2, n - 1)) and c.X1.max_abs() == 0 and c.X2.max_abs() == 0
    assert laplace_beltrami(g, Jet3.var(1, n) ** 2).allclose(const(2, n - 2))


def test_trace_identity_random():
    assert trace_identity_residual(random_scenario(8, order=5).metric) < 1e-10


def test_curl_curl_flat(rng):
    # both sides are the vector Laplacian identity; only rounding remains
    n = 4
    x = VectorFieldJet(*(random_jet(rng, n) for _ in range(3)))
    assert curl_curl_identity_residual(BoundaryMetricJet.flat(n), x).max_abs() < 1e-13


def test_curl_curl_stretched():
    n = 4
    g = BoundaryMetricJet(1 + Jet3.var(3, n), const(0, n), const(1, n))
    x = VectorFieldJet(const(1, n), const(0, n), const(0, n))
    assert curl_curl_identity_residual(g, x).max_abs() < 1e-9


def test_cross_forms_agree(rng):
    n = 4
    g = random_scenario(2, order=n).metric
    e = VectorFieldJet(*(random_jet(rng, n) for _ in range(3)))
    f = VectorFieldJet(*(random_jet(rng, n) for _ in range(3)))
    a, b = cross(g, e, f, "dual"), cross(g, e, f, "lowered")
    assert (a.X1 - b.X1).max_abs() < 1e-12
    assert (a.X2 - b.X2).max_abs() < 1e-12
    assert (a.X3 - b.X3).max_abs() < 1e-12


@given(st.integers(min_value=0, max_value=10**6))
def test_identity_suite_random(seed):
    s = random_scenario(seed, order=4)
    res = geometry_residuals(s, np.random.default_rng(seed))
    assert max(res.values()) < 1e-9, res


# ------------------------------------------------------------------ Green's function


def test_green_scalar_factor():
    # k = 1, r = 1 along x3: G_11 = g + g'/r = i g and G_33 = g + g'' = (2 - 2i) g
    g = np.exp(1j) / (4 * np.pi)
    G = classical_dyadic_green(1.0, 1.0, 1.0, np.zeros(3), np.array([0.0, 0.0, 1.0]))
    assert G[0, 0] == pytest.approx(1j * g, abs=1e-15)
    assert G[2, 2] == pytest.approx((2 - 2j) * g, abs=1e-15)
    assert np.abs(G - np.diag(np.diag(G))).max() < 1e-16


def test_green_coincident():
    with pytest.raises(CoincidentPoints):
        classical_dyadic_green(1.0, 1.0, 1.0, np.ones(3), np.ones(3))


def test_green_reciprocity(rng):
    for _ in range(20):
        x, y = rng.normal(size=3), rng.normal(size=3)
        a = classical_dyadic_green(1.3, 1.1, 0.7 + 0.2j, x, y)
        b = classical_dyadic_green(1.3, 1.1, 0.7 + 0.2j, y, x)
        assert np.abs(a.T - b).max() < 1e-10


def curl_curl_fd(field, x, h=1e-3):
    # curl curl F = grad div F - Laplacian F by central differences
    e = np.eye(3)
    hess = np.zeros((3, 3, 3), complex)  # hess[i, j, c] = d_i d_j F_c
    for i in range(3):
        for j in range(3):
            hess[i, j] = (field(x + h * e[i] + h * e[j]) - field(x + h * e[i] - h * e[j])
                          - field(x - h * e[i] + h * e[j]) + field(x - h * e[i] - h * e[j])) / (4 * h * h)
    grad_div = np.array([sum(hess[i, j, j] for j in range(3)) for i in range(3)])
    lap = sum(hess[j, j] for j in range(3))
    return grad_div - lap


def test_green_solves_maxwell_away_from_source(rng):
    omega, mu, sigma = 1.0, 1.2, 0.9 + 0.1j
    k2 = omega**2 * mu * sigma
    for _ in range(20):
        y = rng.normal(size=3)
        # the h^2 stencil error grows like 1/|x - y|^4, so stay at unit distance or more
        u = rng.normal(size=3)
        x = y + rng.uniform(1.0, 2.0) * u / np.linalg.norm(u)
        for c in range(3):
            col = lambda p: classical_dyadic_green(omega, mu, sigma, p, y)[:, c]  # noqa: E731
            res = curl_curl_fd(col, x) - k2 * col(x)
            assert np.linalg.norm(res) < 1e-4 * np.linalg.norm(k2 * col(x))
