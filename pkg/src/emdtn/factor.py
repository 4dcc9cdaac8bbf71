"""Second-order Maxwell system and its first-order factorization symbols.

The electric field obeys M E = 0 with

    M E = grad((1/sigma) div(sigma E)) - curl curl E + (grad log mu) x curl E + omega^2 mu sigma E,

which in boundary normal coordinates reads d3^2 + B d3 + C with B a matrix
function and C a second-order tangential operator.  M is assembled here as a
differential operator with jet coefficients built from the geometry
primitives; B and the symbols c2, c1, c0 of C are read off from it.

The factorization M = (d3 + B - Phi)(d3 + Phi) holds modulo smoothing when
the symbol phi of Phi satisfies

    sum_theta (-i)^|theta|/theta! (d_xi^theta phi)(d_x^theta phi) - b0 phi - d3 phi + c = 0,

which is solved degree by degree starting from phi_1 = w I.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import comb

import numpy as np

from . import jets
from .geometry import EPS, Geometry
from .scenario import Scenario
from .symalg import SymbolContext, SymbolElement, SymbolTable, compose_slot

Key = tuple[int, int, int]


def _unit(l: int) -> Key:
    k = [0, 0, 0]
    k[l] = 1
    return tuple(k)


@dataclass
class DiffOp:
    """Matrix differential operator sum_a A_a(x) d^a with per-term jet orders."""

    shape: tuple[int, int]
    terms: dict = field(default_factory=dict)  # key -> (array (r, c, J), order)

    @classmethod
    def multiplication(cls, arr: np.ndarray, order: int) -> "DiffOp":
        arr = np.asarray(arr, dtype=complex)
        return cls(arr.shape[:2], {(0, 0, 0): (arr, order)})

    @classmethod
    def partials(cls, coeffs: list, order: int, zeroth: np.ndarray | None = None, zeroth_order: int = 0):
        """sum_l coeffs[l] d_l (+ zeroth)."""
        terms = {_unit(l): (np.asarray(c, dtype=complex), order) for l, c in enumerate(coeffs)}
        if zeroth is not None:
            terms[(0, 0, 0)] = (np.asarray(zeroth, dtype=complex), zeroth_order)
        return cls(np.asarray(coeffs[0]).shape[:2], terms)

    def _put(self, key: Key, arr: np.ndarray, order: int):
        if key in self.terms:
            old, n0 = self.terms[key]
            n = min(n0, order)
            self.terms[key] = (jets.truncate(old, n) + jets.truncate(arr, n), n)
        else:
            self.terms[key] = (arr, order)

    def __add__(self, other: "DiffOp") -> "DiffOp":
        out = DiffOp(self.shape, dict(self.terms))
        for key, (arr, n) in other.terms.items():
            out._put(key, arr, n)
        return out

    def __neg__(self) -> "DiffOp":
        return DiffOp(self.shape, {k: (-a, n) for k, (a, n) in self.terms.items()})

    def __sub__(self, other: "DiffOp") -> "DiffOp":
        return self + (-other)

    def __matmul__(self, other: "DiffOp") -> "DiffOp":
        """Operator composition by the Leibniz rule."""
        out = DiffOp((self.shape[0], other.shape[1]))
        for alpha, (a, na) in self.terms.items():
            for beta, (b, nb) in other.terms.items():
                for g1 in range(alpha[0] + 1):
                    for g2 in range(alpha[1] + 1):
                        for g3 in range(alpha[2] + 1):
                            gamma = (g1, g2, g3)
                            n = min(na, nb - sum(gamma))
                            if n < 0:
                                continue
                            db = b
                            nd = nb
                            for axis, t in enumerate(gamma):
                                for _ in range(t):
                                    db = jets.diff(db, axis, nd)
                                    nd -= 1
                            c = comb(alpha[0], g1) * comb(alpha[1], g2) * comb(alpha[2], g3)
                            prod = c * jets.contract("rs,sc->rc", jets.truncate(a, n), jets.truncate(db, n), n)
                            key = tuple(alpha[i] - gamma[i] + beta[i] for i in range(3))
                            out._put(key, prod, n)
        return out

    def apply(self, x: np.ndarray, order: int) -> tuple[np.ndarray, int]:
        """Apply to a jet column vector x of shape (c, J)."""
        total, n_out = None, None
        for key, (a, na) in self.terms.items():
            d, nd = x, order
            for axis, t in enumerate(key):
                for _ in range(t):
                    d = jets.diff(d, axis, nd)
                    nd -= 1
            n = min(na, nd)
            term = jets.contract("rc,c->r", jets.truncate(a, n), jets.truncate(d, n), n)
            if total is None:
                total, n_out = term, n
            else:
                n_out = min(n_out, n)
                total = jets.truncate(total, n_out) + jets.truncate(term, n_out)
        return total, n_out


# ---------------------------------------------------------------------------
# geometry primitives as operators


def grad_op(geo: Geometry) -> DiffOp:
    """(grad f)^j = g^{jk} d_k f, as a 3x1 operator."""
    up = geo.upper
    return DiffOp.partials([up[:, k][:, None] for k in range(3)], geo.order)


def div_op(geo: Geometry) -> DiffOp:
    """div X = d_j X^j + (d_j log sqrt|g|) X^j, as a 1x3 operator."""
    n = geo.order
    coeffs = []
    for j in range(3):
        c = np.zeros((1, 3, jets.n_coeffs(n)), dtype=complex)
        c[0, j, 0] = 1.0
        coeffs.append(c)
    return DiffOp.partials(coeffs, n, geo.log_sqrt_det_grad[None, :], n - 1)


def curl_op(geo: Geometry) -> DiffOp:
    """(curl X)^j = |g|^{-1/2} eps^{jkl} d_k (g_{lm} X^m)."""
    n = geo.order
    inv = geo.inv_sqrt_det
    g = geo.lower
    coeffs = []
    for k in range(3):
        c = np.einsum("jl,lmz->jmz", EPS[:, k, :], g)
        coeffs.append(jets.mul(inv, c, n))
    dg = np.stack([jets.diff(g, k, n) for k in range(3)])
    zeroth = jets.mul(jets.truncate(inv, n - 1), np.einsum("jkl,klmz->jmz", EPS, dg), n - 1)
    return DiffOp.partials(coeffs, n, zeroth, n - 1)


def cross_op(geo: Geometry, a: np.ndarray, order: int) -> DiffOp:
    """Y -> a x Y with (a x Y)^k = sqrt|g| g^{kj} eps_{jab} a^a Y^b."""
    n = min(order, geo.order)
    flat = np.einsum("jab,az->jbz", EPS, jets.truncate(a, n))
    raised = jets.contract("kj,jb->kb", jets.truncate(geo.upper, n), flat, n)
    return DiffOp.multiplication(jets.mul(jets.truncate(geo.sqrt_det, n), raised, n), n)


def scalar_op(f: np.ndarray, order: int, size: int = 1) -> DiffOp:
    return DiffOp.multiplication(np.eye(size)[:, :, None] * jets.truncate(f, order)[None, None], order)


def maxwell_operator(scenario: Scenario, geo: Geometry | None = None) -> DiffOp:
    """The second-order operator M acting on the contravariant field E."""
    geo = geo or Geometry(scenario.metric)
    n = scenario.order
    mu, sigma = scenario.mu.coeffs, scenario.sigma.coeffs
    inv_sigma = jets.inv(sigma, n)
    grad_div = grad_op(geo) @ scalar_op(inv_sigma, n) @ div_op(geo) @ scalar_op(sigma, n, 3)
    curl = curl_op(geo)
    dlogmu = np.stack([jets.diff(mu, l, n) for l in range(3)])
    dlogmu = jets.mul(dlogmu, jets.truncate(jets.inv(mu, n), n - 1), n - 1)
    grad_logmu = jets.contract("jk,k->j", jets.truncate(geo.upper, n - 1), dlogmu, n - 1)
    k2 = (scenario.omega**2) * jets.mul(mu, sigma, n)
    return grad_div - curl @ curl + cross_op(geo, grad_logmu, n - 1) @ curl + scalar_op(k2, n, 3)


# ---------------------------------------------------------------------------


@dataclass
class OperatorCoefficients:
    """Symbols of B (b0) and C (c2, c1, c0) with the shared context."""

    scenario: Scenario
    geometry: Geometry
    ctx: SymbolContext
    b0: SymbolElement
    c2: SymbolElement
    c1: SymbolElement
    c0: SymbolElement
    operator: DiffOp

    @property
    def c(self) -> dict:
        return {2: self.c2, 1: self.c1, 0: self.c0}

    @cached_property
    def normal_log_volume(self) -> np.ndarray:
        """(1/2) sum g^{ab} d3 g_ab = sum_c Gamma^c_{3c}, order N - 1."""
        return self.geometry.log_sqrt_det_grad[2]


def assemble_b_c(scenario: Scenario) -> OperatorCoefficients:
    geo = Geometry(scenario.metric)
    n = scenario.order
    ctx = SymbolContext.from_upper(geo.upper, n)
    op = maxwell_operator(scenario, geo)

    def coeff(key):
        arr, order = op.terms.get(key, (np.zeros((3, 3, 1), complex), n))
        return arr, order

    b, nb = coeff((0, 0, 1))
    b0 = SymbolElement.from_jets(ctx, b, nb)
    # c2 = -Q I exactly; the assembled second-order coefficients are checked in tests
    q = jets.truncate(ctx.q, n)
    c2 = SymbolElement.polynomial(ctx, -np.eye(3)[:, :, None, None] * q[None, None], n)
    a1, n1 = coeff((1, 0, 0))
    a2, n2 = coeff((0, 1, 0))
    n_c1 = min(n1, n2)
    c1 = SymbolElement.polynomial(
        ctx, 1j * np.stack([jets.truncate(a1, n_c1), jets.truncate(a2, n_c1)], axis=2), n_c1
    )
    a0, n0 = coeff((0, 0, 0))
    c0 = SymbolElement.from_jets(ctx, a0, n0)
    return OperatorCoefficients(scenario, geo, ctx, b0, c2, c1, c0, op)


def principal_part_defect(coeffs: OperatorCoefficients) -> float:
    """Max deviation of the assembled second-order part from d3^2 + g^{ab} d_a d_b."""
    op, up = coeffs.operator, coeffs.geometry.upper
    n = coeffs.scenario.order
    one = jets.constant(1.0, n)
    expected = {
        (0, 0, 2): one,
        (2, 0, 0): up[0, 0],
        (1, 1, 0): 2.0 * up[0, 1],
        (0, 2, 0): up[1, 1],
        (1, 0, 1): 0.0 * one,
        (0, 1, 1): 0.0 * one,
    }
    worst = 0.0
    for key, scalar in expected.items():
        arr, order = op.terms.get(key, (np.zeros((3, 3, jets.n_coeffs(n)), complex), n))
        diff = jets.truncate(arr, order) - np.eye(3)[:, :, None] * jets.truncate(scalar, order)
        worst = max(worst, float(np.abs(diff).max(initial=0.0)))
    for key, (arr, _) in op.terms.items():
        if sum(key) > 2:
            worst = max(worst, float(np.abs(arr).max(initial=0.0)))
    return worst


# ---------------------------------------------------------------------------
# factorization recursion


def _half_inverse_weight(x: SymbolElement, scale: complex) -> SymbolElement:
    """scale * x / w."""
    return x.divide_by_weight() * scale


def phi_recursion(coeffs: OperatorCoefficients, lowest_degree: int) -> SymbolTable:
    """Homogeneous terms phi_1, phi_0, ..., phi_lowest of the factorization symbol."""
    if lowest_degree > 1:
        raise ValueError("lowest degree must be at most 1")
    ctx = coeffs.ctx
    w = SymbolElement.weight(ctx)
    phi = {1: SymbolElement.from_jets(ctx, np.eye(3)[:, :, None] * jets.constant(1.0, ctx.order), ctx.order) @ w}
    for s in range(1, lowest_degree, -1):
        rest = _slot_rest(coeffs, phi, s)
        phi[s - 1] = _half_inverse_weight(rest, -0.5).reduce()
    return SymbolTable("phi", phi)


def _slot_rest(coeffs: OperatorCoefficients, phi: dict, s: int) -> SymbolElement:
    """Degree-s slot of the factorization equation without the 2 w phi_{s-1} term."""
    total = compose_slot(phi, phi, s, exclude={(1, s - 1), (s - 1, 1)})
    if s in phi:
        lin = coeffs.b0 @ phi[s] + phi[s].dx(3)
        total = -lin if total is None else total - lin
    if s in coeffs.c:
        total = coeffs.c[s] if total is None else total + coeffs.c[s]
    return total


def factorization_residual(coeffs: OperatorCoefficients, phi: SymbolTable) -> dict:
    """Max |coefficient| of each graded slot from degree 2 down to lowest + 1.

    Slots below lowest + 1 would need the next, uncomputed phi term.
    """
    out = {}
    table = phi.entries
    for s in range(2, phi.lowest_degree, -1):
        total = compose_slot(table, table, s)
        if s in table:
            total = total - (coeffs.b0 @ table[s] + table[s].dx(3))
        if s in coeffs.c:
            total = total + coeffs.c[s]
        out[s] = total.max_abs()
    return out


# ---------------------------------------------------------------------------
# the Q operator: left parametrix of sigma (Phi^{33} + sum Gamma^c_{3c}) + d3 sigma


def normal_operator_table(coeffs: OperatorCoefficients, phi: SymbolTable) -> SymbolTable:
    """Symbol of sigma (Phi^{33} + (1/2) sum g^{ab} d3 g_ab) + d3 sigma, degree by degree."""
    n = coeffs.scenario.order
    ctx = coeffs.ctx
    sigma = coeffs.scenario.sigma.coeffs
    sig = SymbolElement.from_jets(ctx, sigma, n)
    out = {}
    for d, e in phi.entries.items():
        out[d] = sig @ e[2, 2]
    extra = jets.mul(jets.truncate(sigma, n - 1), coeffs.normal_log_volume, n - 1) + jets.diff(sigma, 2, n)
    out[0] = out[0] + SymbolElement.from_jets(ctx, extra, n - 1)
    return SymbolTable("normal", out)


def q_recursion(phi: SymbolTable, coeffs: OperatorCoefficients, lowest_degree: int) -> SymbolTable:
    """Homogeneous terms q_{-1}, ..., q_lowest of the parametrix symbol."""
    if lowest_degree > -1:
        raise ValueError("lowest degree must be at most -1")
    if phi.lowest_degree > lowest_degree + 2:
        raise ValueError("phi must reach degree lowest + 2")
    ctx = coeffs.ctx
    n = coeffs.scenario.order
    a = normal_operator_table(coeffs, phi).entries
    inv_sigma = SymbolElement.from_jets(ctx, jets.inv(coeffs.scenario.sigma.coeffs, n), n)
    lead = lambda x: inv_sigma @ x.divide_by_weight()  # noqa: E731  x / (sigma w)
    q = {-1: lead(SymbolElement.scalar(ctx, 1.0, n))}
    for m in range(1, -lowest_degree):
        rest = compose_slot(q, a, -m, exclude={(-m - 1, 1)})
        q[-m - 1] = (-lead(rest)).reduce()
    return SymbolTable("q", q)


def q_residual(q: SymbolTable, coeffs: OperatorCoefficients, phi: SymbolTable) -> dict:
    """Graded slots of q # a - 1 from degree 0 down to lowest + 1."""
    a = normal_operator_table(coeffs, phi).entries
    out = {}
    for s in range(0, q.lowest_degree, -1):
        total = compose_slot(q.entries, a, s)
        if s == 0:
            total = total - SymbolElement.scalar(coeffs.ctx, 1.0, total.order)
        out[s] = total.max_abs()
    return out
