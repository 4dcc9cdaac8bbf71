"""Matrix-valued homogeneous symbols over the quotient ring Jet3[xi1, xi2, w]/(w^2 - Q).

An entry of a :class:`SymbolElement` is

    (P0(x, xi) + w * P1(x, xi)) / Q(x, xi)**k,        w = sqrt(Q),

with Q = sum g^{ab} xi_a xi_b.  For homogeneity degree d, P0 is a homogeneous
polynomial of degree d + 2k and P1 one of degree d + 2k - 1.  Coefficients
are jets in (x1, x2, x3).  A polynomial of degree D is stored as D + 1 slots,
slot a holding the coefficient of xi1**(D - a) * xi2**a.

Since {1, w} is a basis over rational functions, an element is zero exactly
when both numerators vanish, so no common-denominator cancellation is needed
to test identities.  ``reduce`` still strips exact factors of Q to keep the
numerators short.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import factorial

import numpy as np

from . import jets
from .errors import JetOrderExhausted, ScenarioMismatch, ShapeMismatch, ZeroCovector


class SymbolContext:
    """Per-scenario data shared by all symbols: the quadratic form Q."""

    is_boundary = False

    def __init__(self, g11u: np.ndarray, g12u: np.ndarray, g22u: np.ndarray, order: int):
        self.order = order
        n = jets.n_coeffs(order)
        u = [np.asarray(x, dtype=complex)[:n] for x in (g11u, g12u, g22u)]
        self.q = np.stack([u[0], 2.0 * u[1], u[2]])
        self.q.setflags(write=False)
        # d/dxi_m Q as degree-1 polynomials
        self.dq_xi = (np.stack([2.0 * u[0], 2.0 * u[1]]), np.stack([2.0 * u[1], 2.0 * u[2]]))

    @classmethod
    def from_upper(cls, upper: np.ndarray, order: int) -> "SymbolContext":
        return cls(upper[0, 0], upper[0, 1], upper[1, 1], order)

    @classmethod
    def flat(cls, order: int) -> "SymbolContext":
        one = jets.constant(1.0, order)
        return cls(one, jets.constant(0.0, order), one, order)

    @cached_property
    def dq_x(self) -> tuple[np.ndarray, ...]:
        return tuple(jets.diff(self.q, l, self.order) for l in range(3))

    @cached_property
    def q_boundary(self) -> "SymbolContext":
        """Same context with Q restricted to x3 = 0."""
        if self.is_boundary:
            return self
        q = jets.restrict_boundary(self.q, self.order)
        out = SymbolContext(q[0], 0.5 * q[1], q[2], self.order)
        out.is_boundary = True
        return out

    def q_value(self, xi: np.ndarray) -> np.ndarray:
        """Q at the base point for covectors of shape (..., 2)."""
        xi = np.asarray(xi, dtype=float)
        c = self.q[:, 0]
        return (c[0] * xi[..., 0] ** 2 + c[1] * xi[..., 0] * xi[..., 1] + c[2] * xi[..., 1] ** 2).real


# ---------------------------------------------------------------------------
# polynomial kernels; polynomials live on axis -2, jets on axis -1


def _conv(a: np.ndarray, b: np.ndarray, order: int, n_out: int) -> np.ndarray:
    """Product of polynomials with jet coefficients, broadcasting leading axes."""
    lead = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    out = np.zeros(lead + (max(n_out, 0), jets.n_coeffs(order)), dtype=complex)
    na, nb = a.shape[-2], b.shape[-2]
    if na == 0 or nb == 0 or n_out <= 0 or order < 0:
        return out
    assert na + nb - 1 == n_out, (na, nb, n_out)
    left, right, starts = jets._product_plan(order)
    ai = a[..., left]
    bj = b[..., right]
    for s in range(na):
        prod = ai[..., s : s + 1, :] * bj
        out[..., s : s + nb, :] += np.add.reduceat(prod, starts, axis=-1)
    return out


def _matconv(a: np.ndarray, b: np.ndarray, order: int, n_out: int) -> np.ndarray:
    """Matrix product of polynomial matrices a (r,s,na,J) and b (s,c,nb,J)."""
    r, s = a.shape[:2]
    c = b.shape[1]
    out = np.zeros((r, c, max(n_out, 0), jets.n_coeffs(order)), dtype=complex)
    na, nb = a.shape[-2], b.shape[-2]
    if na == 0 or nb == 0 or n_out <= 0 or order < 0:
        return out
    assert na + nb - 1 == n_out
    left, right, starts = jets._product_plan(order)
    ai = a[..., left]  # r s na P
    bj = b[..., right]  # s c nb P
    for t in range(na):
        prod = np.einsum("rsp,scbp->rcbp", ai[:, :, t, :], bj)
        out[:, :, t : t + nb, :] += np.add.reduceat(prod, starts, axis=-1)
    return out


def _poly_dxi(p: np.ndarray, m: int) -> np.ndarray:
    """Derivative of polynomials (axis -2) in xi_m, m in {0, 1}."""
    n = p.shape[-2]
    if n <= 1:
        return np.zeros(p.shape[:-2] + (0, p.shape[-1]), dtype=complex)
    deg = n - 1
    a = np.arange(n)
    if m == 0:
        fac = (deg - a)[:-1]
        return p[..., :-1, :] * fac[:, None]
    fac = a[1:]
    return p[..., 1:, :] * fac[:, None]


def _monomials(xi: np.ndarray, deg: int) -> np.ndarray:
    """xi1**(deg - a) * xi2**a for a = 0..deg, stacked on the last axis."""
    xi = np.asarray(xi)
    a = np.arange(deg + 1)
    return xi[..., 0:1] ** (deg - a) * xi[..., 1:2] ** a


def _n0(deg: int, k: int) -> int:
    return max(deg + 2 * k + 1, 0)


def _n1(deg: int, k: int) -> int:
    return max(deg + 2 * k, 0)


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SymbolElement:
    """Homogeneous matrix symbol (P0 + w P1) / Q**k of degree ``degree``."""

    ctx: SymbolContext
    degree: int
    k: int
    p0: np.ndarray
    p1: np.ndarray
    order: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        r, c = self.p0.shape[:2]
        if self.p0.shape != (r, c, _n0(self.degree, self.k), jets.n_coeffs(self.order)):
            raise ValueError(f"bad P0 shape {self.p0.shape} for degree {self.degree}, k {self.k}")
        if self.p1.shape != (r, c, _n1(self.degree, self.k), jets.n_coeffs(self.order)):
            raise ValueError(f"bad P1 shape {self.p1.shape} for degree {self.degree}, k {self.k}")
        self.p0.setflags(write=False)
        self.p1.setflags(write=False)

    # ------------------------------------------------------------ builders
    @classmethod
    def zero(cls, ctx, degree: int, shape=(1, 1), order: int | None = None, k: int | None = None):
        order = ctx.order if order is None else order
        if k is None:
            k = max(0, -((degree) // 2)) if degree < 0 else 0
        r, c = shape
        j = jets.n_coeffs(order)
        return cls(
            ctx,
            degree,
            k,
            np.zeros((r, c, _n0(degree, k), j), dtype=complex),
            np.zeros((r, c, _n1(degree, k), j), dtype=complex),
            order,
        )

    @classmethod
    def from_jets(cls, ctx, arr: np.ndarray, order: int) -> "SymbolElement":
        """Degree-0 symbol independent of xi from a (r, c, J) jet matrix."""
        arr = np.asarray(arr, dtype=complex)
        if arr.ndim == 1:
            arr = arr[None, None]
        arr = jets.truncate(arr, order)
        r, c = arr.shape[:2]
        return cls(ctx, 0, 0, arr[:, :, None, :].copy(), np.zeros((r, c, 0, arr.shape[-1]), complex), order)

    @classmethod
    def scalar(cls, ctx, value: complex, order: int | None = None) -> "SymbolElement":
        order = ctx.order if order is None else order
        return cls.from_jets(ctx, jets.constant(value, order), order)

    @classmethod
    def polynomial(cls, ctx, coeffs: np.ndarray, order: int) -> "SymbolElement":
        """Polynomial symbol from coefficients of shape (r, c, D + 1, J)."""
        coeffs = jets.truncate(np.asarray(coeffs, dtype=complex), order)
        r, c, n = coeffs.shape[:3]
        deg = n - 1
        return cls(ctx, deg, 0, coeffs.copy(), np.zeros((r, c, _n1(deg, 0), coeffs.shape[-1]), complex), order)

    @classmethod
    def xi(cls, ctx, m: int, order: int | None = None) -> "SymbolElement":
        """The covector component xi_m (m in 1..2)."""
        order = ctx.order if order is None else order
        p = np.zeros((1, 1, 2, jets.n_coeffs(order)), dtype=complex)
        p[0, 0, m - 1, 0] = 1.0
        return cls.polynomial(ctx, p, order)

    @classmethod
    def weight(cls, ctx, order: int | None = None) -> "SymbolElement":
        """The principal weight w = sqrt(Q)."""
        order = ctx.order if order is None else order
        j = jets.n_coeffs(order)
        p1 = np.zeros((1, 1, 1, j), dtype=complex)
        p1[0, 0, 0, 0] = 1.0
        return cls(ctx, 1, 0, np.zeros((1, 1, 2, j), complex), p1, order)

    @classmethod
    def q_form(cls, ctx, order: int | None = None) -> "SymbolElement":
        order = ctx.order if order is None else order
        return cls.polynomial(ctx, jets.truncate(ctx.q, order)[None, None], order)

    # ------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple[int, int]:
        return self.p0.shape[:2]

    def _check(self, other: "SymbolElement"):
        if other.ctx is not self.ctx:
            raise ScenarioMismatch("symbols belong to different scenarios")

    def truncated(self, order: int) -> "SymbolElement":
        if order >= self.order:
            return self
        return SymbolElement(self.ctx, self.degree, self.k, jets.truncate(self.p0, order).copy(),
                             jets.truncate(self.p1, order).copy(), order)

    def _qmul(self, p: np.ndarray, order: int) -> np.ndarray:
        n = p.shape[-2]
        return _conv(jets.truncate(self.ctx.q, order), jets.truncate(p, order), order, n + 2 if n else 0)

    def raise_k(self, k: int) -> "SymbolElement":
        """Rewrite with denominator Q**k (k >= self.k)."""
        if k < self.k:
            raise ValueError("cannot lower the Q power by raising")
        p0, p1 = self.p0, self.p1
        n = self.order
        for kk in range(self.k, k):
            n0, n1 = _n0(self.degree, kk + 1), _n1(self.degree, kk + 1)
            p0 = self._qmul(p0, n) if p0.shape[-2] else np.zeros(self.shape + (n0, p0.shape[-1]), complex)
            p1 = self._qmul(p1, n) if p1.shape[-2] else np.zeros(self.shape + (n1, p1.shape[-1]), complex)
        return SymbolElement(self.ctx, self.degree, k, p0, p1, n)

    def __add__(self, other):
        if isinstance(other, (int, float, complex)) and other == 0:
            return self
        self._check(other)
        if other.degree != self.degree:
            raise ValueError(f"cannot add degrees {self.degree} and {other.degree}")
        if self.shape != other.shape:
            raise ShapeMismatch(f"{self.shape} vs {other.shape}")
        k = max(self.k, other.k)
        n = min(self.order, other.order)
        a, b = self.truncated(n).raise_k(k), other.truncated(n).raise_k(k)
        return SymbolElement(self.ctx, self.degree, k, a.p0 + b.p0, a.p1 + b.p1, n)

    __radd__ = __add__

    def __neg__(self):
        return SymbolElement(self.ctx, self.degree, self.k, -self.p0, -self.p1, self.order)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, c):
        """Multiplication by a numeric scalar."""
        if not np.isscalar(c):
            return NotImplemented
        return SymbolElement(self.ctx, self.degree, self.k, self.p0 * c, self.p1 * c, self.order)

    __rmul__ = __mul__

    def __matmul__(self, other: "SymbolElement") -> "SymbolElement":
        return sym_mul(self, other)

    def __getitem__(self, idx) -> "SymbolElement":
        """Sub-matrix by (rows, cols); integers keep the matrix rank."""
        rows, cols = idx
        rows = [rows] if isinstance(rows, (int, np.integer)) else rows
        cols = [cols] if isinstance(cols, (int, np.integer)) else cols
        p0 = self.p0[np.ix_(list(np.arange(self.shape[0])[rows]), list(np.arange(self.shape[1])[cols]))]
        p1 = self.p1[np.ix_(list(np.arange(self.shape[0])[rows]), list(np.arange(self.shape[1])[cols]))]
        return SymbolElement(self.ctx, self.degree, self.k, p0.copy(), p1.copy(), self.order)

    def transpose(self) -> "SymbolElement":
        return SymbolElement(self.ctx, self.degree, self.k, self.p0.transpose(1, 0, 2, 3).copy(),
                             self.p1.transpose(1, 0, 2, 3).copy(), self.order)

    def is_zero(self) -> bool:
        return not (self.p0.any() or self.p1.any())

    def max_abs(self) -> float:
        m0 = np.abs(self.p0).max(initial=0.0)
        m1 = np.abs(self.p1).max(initial=0.0)
        return float(max(m0, m1))

    def restrict_boundary(self) -> "SymbolElement":
        """Trace on x3 = 0: numerators and Q are both restricted."""
        return SymbolElement(self.ctx.q_boundary, self.degree, self.k,
                             jets.restrict_boundary(self.p0, self.order),
                             jets.restrict_boundary(self.p1, self.order), self.order)

    def scale_jets(self, arr: np.ndarray, order: int) -> "SymbolElement":
        """Entrywise multiplication by a scalar jet (left multiplication operator)."""
        return sym_mul(SymbolElement.from_jets(self.ctx, arr, order), self)

    def divide_by_weight(self) -> "SymbolElement":
        """self / w, using 1/w = w / Q."""
        n = self.order
        n0 = _n0(self.degree - 1, self.k + 1)
        p0 = self._qmul(self.p1, n) if self.p1.shape[-2] else np.zeros(self.shape + (n0, self.p1.shape[-1]), complex)
        return SymbolElement(self.ctx, self.degree - 1, self.k + 1, p0, self.p0.copy(), n)

    # ------------------------------------------------------------ calculus
    def _derive(self, dp, dq: np.ndarray, new_order: int, new_degree: int) -> "SymbolElement":
        """Quotient/chain rule shared by xi- and x-derivatives.

        d[(P0 + w P1) Q^-k] = [Q dP0 - k dQ P0 + w (Q dP1 + (1/2 - k) dQ P1)] / Q^(k+1)
        """
        n = new_order
        k = self.k
        d0, d1 = dp(self.p0), dp(self.p1)
        q = jets.truncate(self.ctx.q, n)
        if k == 0 and not self.p1.any():
            if d0.shape[-2] != _n0(new_degree, 0):
                d0 = np.zeros(self.shape + (_n0(new_degree, 0), jets.n_coeffs(n)), complex)
            return SymbolElement(self.ctx, new_degree, 0, jets.truncate(d0, n).copy(),
                                 np.zeros(self.shape + (_n1(new_degree, 0), jets.n_coeffs(n)), complex), n)
        n0, n1 = _n0(new_degree, k + 1), _n1(new_degree, k + 1)
        p0n = self.p0[..., : jets.n_coeffs(n)]
        p1n = self.p1[..., : jets.n_coeffs(n)]
        e0 = _conv(q, d0, n, n0) - k * _conv(dq, p0n, n, n0)
        e1 = _conv(q, d1, n, n1) + (0.5 - k) * _conv(dq, p1n, n, n1)
        return SymbolElement(self.ctx, new_degree, k + 1, e0, e1, n)

    def dxi(self, m: int) -> "SymbolElement":
        """d/dxi_m, m in 1..2."""
        key = ("xi", m)
        if key not in self._cache:
            dq = jets.truncate(self.ctx.dq_xi[m - 1], self.order)
            self._cache[key] = self._derive(lambda p: _poly_dxi(p, m - 1), dq, self.order, self.degree - 1)
        return self._cache[key]

    def dx(self, l: int) -> "SymbolElement":
        """d/dx_l, l in 1..3."""
        key = ("x", l)
        if key not in self._cache:
            if self.order <= 0:
                raise JetOrderExhausted(
                    f"x{l}-derivative of a degree-{self.degree} symbol whose jets have order {self.order}"
                )
            n = self.order - 1
            dq = jets.truncate(self.ctx.dq_x[l - 1], n)
            self._cache[key] = self._derive(lambda p: jets.diff(p, l - 1, self.order), dq, n, self.degree)
        return self._cache[key]

    def dxi_multi(self, theta: tuple[int, int]) -> "SymbolElement":
        out = self
        for m, t in ((1, theta[0]), (2, theta[1])):
            for _ in range(t):
                out = out.dxi(m)
        return out

    def dx_multi(self, theta: tuple[int, int]) -> "SymbolElement":
        out = self
        for l, t in ((1, theta[0]), (2, theta[1])):
            for _ in range(t):
                out = out.dx(l)
        return out

    # ------------------------------------------------------------ canonical form
    def reduce(self, rtol: float = 1e-12) -> "SymbolElement":
        """Divide out factors of Q shared by both numerators while the division is exact."""
        out = self
        while out.k > 0:
            scale = out.max_abs()
            if scale == 0.0:
                return SymbolElement.zero(out.ctx, out.degree, out.shape, out.order)
            s0, r0 = _divide_by_q(out.p0, out.ctx, out.order)
            s1, r1 = _divide_by_q(out.p1, out.ctx, out.order)
            rem = max(np.abs(r0).max(initial=0.0), np.abs(r1).max(initial=0.0))
            if rem > rtol * scale:
                break
            k = out.k - 1
            s0 = _fit(s0, out.shape, _n0(out.degree, k), out.order)
            s1 = _fit(s1, out.shape, _n1(out.degree, k), out.order)
            out = SymbolElement(out.ctx, out.degree, k, s0, s1, out.order)
        return out

    # ------------------------------------------------------------ evaluation
    def evaluate(self, xi) -> np.ndarray:
        """Numeric value at x = 0 for covectors xi of shape (..., 2); returns (..., r, c)."""
        xi = np.asarray(xi, dtype=float)
        q = self.ctx.q_value(xi)
        if np.any(q <= 0):
            raise ZeroCovector("symbols are only defined for nonzero covectors")
        w = np.sqrt(q)
        out = np.zeros(xi.shape[:-1] + self.shape, dtype=complex)
        if self.order < 0:
            return out * np.nan
        if self.p0.shape[-2]:
            mono = _monomials(xi, self.p0.shape[-2] - 1)
            out += np.einsum("...a,rca->...rc", mono, self.p0[..., 0])
        if self.p1.shape[-2]:
            mono = _monomials(xi, self.p1.shape[-2] - 1)
            out += w[..., None, None] * np.einsum("...a,rca->...rc", mono, self.p1[..., 0])
        return out / (q**self.k)[..., None, None]

    def evaluate_jet(self, xi) -> np.ndarray:
        """Jet-valued entries (r, c, J) at a fixed covector."""
        xi = np.asarray(xi, dtype=float)
        n = self.order
        q = _monomials(xi, 2) @ jets.truncate(self.ctx.q, n)
        if q[0].real <= 0:
            raise ZeroCovector("symbols are only defined for nonzero covectors")
        w = jets.sqrt(q, n)
        out = np.zeros(self.shape + (jets.n_coeffs(n),), dtype=complex)
        if self.p0.shape[-2]:
            out += np.einsum("a,rcaz->rcz", _monomials(xi, self.p0.shape[-2] - 1), self.p0)
        if self.p1.shape[-2]:
            p1 = np.einsum("a,rcaz->rcz", _monomials(xi, self.p1.shape[-2] - 1), self.p1)
            out += jets.mul(w, p1, n)
        if self.k:
            qinv = jets.inv(q, n)
            scale = jets.constant(1.0, n)
            for _ in range(self.k):
                scale = jets.mul(scale, qinv, n)
            out = jets.mul(scale, out, n)
        return out


def _fit(p: np.ndarray, shape, n: int, order: int) -> np.ndarray:
    if p.shape[-2] == n:
        return p
    out = np.zeros(tuple(shape) + (n, jets.n_coeffs(order)), dtype=complex)
    m = min(n, p.shape[-2])
    out[..., :m, :] = p[..., :m, :]
    return out


def _divide_by_q(p: np.ndarray, ctx: SymbolContext, order: int):
    """Polynomial division by Q in xi1; returns (quotient, remainder)."""
    n = p.shape[-2]
    if n == 0:
        return p, p
    if n < 3:
        return np.zeros(p.shape[:-2] + (0, p.shape[-1]), complex), p
    q = jets.truncate(ctx.q, order)
    lead_inv = jets.inv(q[0], order)
    s = np.zeros(p.shape[:-2] + (n - 2, p.shape[-1]), dtype=complex)
    for a in range(n - 2):
        acc = p[..., a, :].copy()
        if a >= 1:
            acc -= jets.mul(q[1], s[..., a - 1, :], order)
        if a >= 2:
            acc -= jets.mul(q[2], s[..., a - 2, :], order)
        s[..., a, :] = jets.mul(lead_inv, acc, order)
    rem = p - _conv(q, s, order, n)
    return s, rem


def sym_mul(a: SymbolElement, b: SymbolElement) -> SymbolElement:
    """Pointwise matrix product of symbols; 1x1 operands broadcast as scalars."""
    a._check(b)
    n = min(a.order, b.order)
    degree, k = a.degree + b.degree, a.k + b.k
    n0, n1 = _n0(degree, k), _n1(degree, k)
    a0, a1 = jets.truncate(a.p0, n), jets.truncate(a.p1, n)
    b0, b1 = jets.truncate(b.p0, n), jets.truncate(b.p1, n)
    if a.shape == (1, 1) or b.shape == (1, 1):
        shape = b.shape if a.shape == (1, 1) else a.shape

        def mm(x, y, m):
            return _conv(x, y, n, m)
    else:
        if a.shape[1] != b.shape[0]:
            raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
        shape = (a.shape[0], b.shape[1])

        def mm(x, y, m):
            return _matconv(x, y, n, m)

    e0 = mm(a0, b0, n0)
    inner = mm(a1, b1, max(n0 - 2, 0))
    if inner.shape[-2]:
        e0 = e0 + _conv(jets.truncate(a.ctx.q, n), inner, n, n0)
    e1 = mm(a0, b1, n1) + mm(a1, b0, n1)
    e0 = np.broadcast_to(e0, shape + e0.shape[2:]).copy()
    e1 = np.broadcast_to(e1, shape + e1.shape[2:]).copy()
    return SymbolElement(a.ctx, degree, k, e0, e1, n)


def sym_dxi(a: SymbolElement, m: int) -> SymbolElement:
    return a.dxi(m)


def sym_dx(a: SymbolElement, l: int) -> SymbolElement:
    return a.dx(l)


def sym_eval(a: SymbolElement, xi) -> np.ndarray:
    return a.evaluate(xi)


def block(rows: list[list[SymbolElement]]) -> SymbolElement:
    """Assemble a matrix symbol from blocks of equal degree."""
    flat = [e for row in rows for e in row]
    k = max(e.k for e in flat)
    n = min(e.order for e in flat)
    rows = [[e.truncated(n).raise_k(k) for e in row] for row in rows]
    p0 = np.concatenate([np.concatenate([e.p0 for e in row], axis=1) for row in rows], axis=0)
    p1 = np.concatenate([np.concatenate([e.p1 for e in row], axis=1) for row in rows], axis=0)
    return SymbolElement(flat[0].ctx, flat[0].degree, k, p0, p1, n)


def thetas(total: int):
    """Multi-indices (t1, t2) with t1 + t2 = total."""
    return [(t1, total - t1) for t1 in range(total, -1, -1)]


def compose_slot(left: dict, right: dict, degree: int, exclude=()) -> SymbolElement:
    """Degree-``degree`` part of the composition symbol of two expansions.

    ``left`` and ``right`` map homogeneity degree to SymbolElement.  The sum
    runs over (-i)^|theta| / theta! (d_xi^theta a_j)(d_x'^theta b_k) with
    j + k - |theta| = degree.  Pairs (j, k) listed in ``exclude`` are skipped.
    """
    total = None
    for da in sorted(left, reverse=True):
        for db in sorted(right, reverse=True):
            t = da + db - degree
            if t < 0 or (da, db) in exclude:
                continue
            for theta in thetas(t):
                la = left[da].dxi_multi(theta)
                if la.is_zero():
                    continue
                coef = (-1j) ** t / (factorial(theta[0]) * factorial(theta[1]))
                term = sym_mul(la, right[db].dx_multi(theta))
                term = term * coef if t else term
                total = term if total is None else total + term
    if total is None:
        a, b = next(iter(left.values())), next(iter(right.values()))
        shape = b.shape if a.shape == (1, 1) else (a.shape[0], b.shape[1]) if b.shape != (1, 1) else a.shape
        total = SymbolElement.zero(a.ctx, degree, shape, min(a.order, b.order))
    return total


@dataclass
class SymbolTable:
    """Homogeneous expansion of one operator: degree -> SymbolElement."""

    name: str
    entries: dict = field(default_factory=dict)

    @property
    def top_degree(self) -> int:
        return max(self.entries)

    @property
    def lowest_degree(self) -> int:
        return min(self.entries)

    def __getitem__(self, degree: int) -> SymbolElement:
        return self.entries[degree]

    def __contains__(self, degree: int) -> bool:
        return degree in self.entries

    def degrees(self) -> list[int]:
        return sorted(self.entries, reverse=True)

    def map(self, fn, name: str | None = None) -> "SymbolTable":
        return SymbolTable(name or self.name, {d: fn(e) for d, e in self.entries.items()})

    def evaluate(self, xi, lowest: int | None = None) -> np.ndarray:
        """Sum of the homogeneous terms down to ``lowest`` at covectors xi."""
        lowest = self.lowest_degree if lowest is None else lowest
        out = None
        for d in self.degrees():
            if d < lowest:
                continue
            v = self.entries[d].evaluate(xi)
            out = v if out is None else out + v
        return out
