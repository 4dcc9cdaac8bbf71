import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from emdtn import jets
from emdtn.errors import JetOrderExhausted, ScenarioMismatch, ShapeMismatch, ZeroCovector
from emdtn.geometry import Geometry
from emdtn.scenario import random_scenario
from emdtn.symalg import SymbolContext, SymbolElement, _n0, _n1, sym_dx, sym_dxi, sym_eval, sym_mul

N = 5


def random_ctx(seed, order=N):
    return SymbolContext.from_upper(Geometry(random_scenario(seed, order=order).metric).upper, order)


def random_element(rng, ctx, degree, k, shape=(2, 2), order=N):
    j = jets.n_coeffs(order)

    def draw(n):
        return rng.uniform(-1, 1, shape + (n, j)) + 1j * rng.uniform(-1, 1, shape + (n, j))

    return SymbolElement(ctx, degree, k, draw(_n0(degree, k)), draw(_n1(degree, k)), order)


def value_at(e, xi, x):
    """Entries of e at covector xi and spatial point x, through the jets."""
    vals = e.evaluate_jet(xi)
    return np.array([[jets.evaluate(vals[r, c], e.order, x) for c in range(e.shape[1])] for r in range(e.shape[0])])


def test_weight_squared_is_q():
    ctx = random_ctx(1)
    w = SymbolElement.weight(ctx)
    diff = sym_mul(w, w) - SymbolElement.q_form(ctx)
    assert diff.max_abs() < 1e-15
    assert not sym_mul(w, w).p1.any()


def test_reciprocal_weights():
    ctx = SymbolContext.flat(2)
    w = SymbolElement.weight(ctx)
    a = SymbolElement.xi(ctx, 1).divide_by_weight()
    b = SymbolElement.xi(ctx, 2).divide_by_weight()
    prod = sym_mul(a, b).reduce()
    assert prod.degree == 0 and prod.k == 1 and not prod.p1.any()
    assert np.array_equal(prod.p0[0, 0, :, 0], [0, 1, 0])
    assert sym_eval(prod, [1.0, 1.0])[0, 0] == pytest.approx(0.5)
    assert w.degree == 1


def test_product_pointwise(rng):
    ctx = random_ctx(2)
    a = random_element(rng, ctx, 1, 1)
    b = random_element(rng, ctx, -2, 2)
    ab = sym_mul(a, b)
    assert ab.degree == -1
    xi = rng.normal(size=(20, 2))
    got = ab.evaluate(xi)
    want = np.einsum("nij,njk->nik", a.evaluate(xi), b.evaluate(xi))
    assert np.abs(got - want).max() <= 1e-11 * np.abs(want).max()


def test_shape_and_context_checks(rng):
    ctx = random_ctx(3)
    a = random_element(rng, ctx, 0, 0, shape=(2, 3))
    with pytest.raises(ShapeMismatch):
        sym_mul(a, a)
    other = random_element(rng, random_ctx(4), 0, 0, shape=(3, 2))
    with pytest.raises(ScenarioMismatch):
        sym_mul(a, other)


def test_dxi_examples():
    ctx = SymbolContext.flat(3)
    w = SymbolElement.weight(ctx)
    xi = np.array([0.3, -1.7])
    assert sym_dxi(w, 1).evaluate(xi)[0, 0] == pytest.approx(xi[0] / np.linalg.norm(xi))
    x1x2 = sym_mul(SymbolElement.xi(ctx, 1), SymbolElement.xi(ctx, 2))
    assert sym_dxi(x1x2, 2).evaluate(xi)[0, 0] == pytest.approx(xi[0])


def test_dxi_finite_difference(rng):
    ctx = random_ctx(5)
    a = random_element(rng, ctx, -1, 2)
    h = 1e-5
    for _ in range(10):
        xi = rng.normal(size=2)
        for m in (1, 2):
            e = np.eye(2)[m - 1] * h
            fd = (a.evaluate(xi + e) - a.evaluate(xi - e)) / (2 * h)
            got = sym_dxi(a, m).evaluate(xi)
            assert np.abs(got - fd).max() <= 1e-6 * max(1.0, np.abs(got).max())


def test_dx_examples():
    n = 3
    one = jets.constant(1.0, n)
    x3 = np.zeros(jets.n_coeffs(n), complex)
    x3[jets.index_map(n)[(0, 0, 1)]] = 1
    ctx = SymbolContext(one + x3, 0 * one, one, n)
    dw = sym_dx(SymbolElement.weight(ctx), 3)
    xi = np.array([1.3, 0.4])
    assert dw.evaluate(xi)[0, 0] == pytest.approx(xi[0] ** 2 / (2 * np.linalg.norm(xi)))
    c = SymbolElement.scalar(SymbolContext.flat(n), 2.5)
    assert sym_dx(c, 1).max_abs() == 0


def test_dx_finite_difference(rng):
    ctx = random_ctx(6, order=6)
    a = random_element(rng, ctx, 0, 1, order=6)
    h = 1e-5
    x0 = np.array([0.01, -0.02, 0.015])
    xi = np.array([0.8, -0.6])
    for l in (1, 2, 3):
        e = np.eye(3)[l - 1] * h
        fd = (value_at(a, xi, x0 + e) - value_at(a, xi, x0 - e)) / (2 * h)
        got = value_at(sym_dx(a, l), xi, x0)
        assert np.abs(got - fd).max() <= 1e-6 * max(1.0, np.abs(got).max())


def test_dx_needs_order():
    a = SymbolElement.scalar(SymbolContext.flat(0), 1.0)
    with pytest.raises(JetOrderExhausted):
        sym_dx(a, 1)


def test_eval_examples():
    ctx = SymbolContext.flat(2)
    assert sym_eval(SymbolElement.weight(ctx), [3.0, 4.0])[0, 0] == pytest.approx(5.0)
    with pytest.raises(ZeroCovector):
        sym_eval(SymbolElement.weight(ctx), [0.0, 0.0])


# ----------------------------------------------------------------- properties

seeds = st.integers(min_value=0, max_value=2**32 - 1)
degrees = st.integers(min_value=-3, max_value=2)
ks = st.integers(min_value=0, max_value=3)


@given(seeds, degrees, ks, st.floats(min_value=0.1, max_value=10.0))
def test_homogeneity(seed, degree, k, t):
    rng = np.random.default_rng(seed)
    a = random_element(rng, random_ctx(seed % 50), degree, k, order=2)
    xi = rng.normal(size=2)
    v, vt = a.evaluate(xi), a.evaluate(t * xi)
    assert np.abs(vt - t**degree * v).max() <= 1e-10 * max(np.abs(vt).max(), 1e-300)


@given(seeds, degrees, ks)
def test_derivatives_commute(seed, degree, k):
    rng = np.random.default_rng(seed)
    a = random_element(rng, random_ctx(seed % 50, order=4), degree, k, order=4)
    xi = rng.normal(size=2)
    pairs = [(lambda e: e.dxi(1), lambda e: e.dxi(2)), (lambda e: e.dx(1), lambda e: e.dx(3)),
             (lambda e: e.dxi(1), lambda e: e.dx(2))]
    for f, g in pairs:
        lhs, rhs = f(g(a)).evaluate(xi), g(f(a)).evaluate(xi)
        assert np.abs(lhs - rhs).max() <= 1e-9 * max(1.0, np.abs(lhs).max())


@given(seeds, degrees, degrees)
def test_leibniz(seed, da, db):
    rng = np.random.default_rng(seed)
    ctx = random_ctx(seed % 50, order=4)
    a = random_element(rng, ctx, da, 1, order=4)
    b = random_element(rng, ctx, db, 1, order=4)
    xi = rng.normal(size=2)
    for d in (lambda e: e.dxi(2), lambda e: e.dx(3)):
        lhs = d(sym_mul(a, b)).evaluate(xi)
        rhs = (sym_mul(d(a), b) + sym_mul(a, d(b))).evaluate(xi)
        assert np.abs(lhs - rhs).max() <= 1e-9 * max(1.0, np.abs(lhs).max())


@given(seeds, degrees)
def test_reduce_idempotent(seed, degree):
    rng = np.random.default_rng(seed)
    ctx = random_ctx(seed % 50, order=3)
    a = random_element(rng, ctx, degree, 0, order=3)
    # multiply by Q/Q so reduce has something to strip
    padded = a.raise_k(2)
    once = padded.reduce()
    twice = once.reduce()
    assert once.k == twice.k
    assert np.array_equal(once.p0, twice.p0) and np.array_equal(once.p1, twice.p1)
    xi = rng.normal(size=2)
    assert np.abs(once.evaluate(xi) - a.evaluate(xi)).max() <= 1e-10 * max(1.0, np.abs(a.evaluate(xi)).max())
