"""Truncated Taylor series in (x1, x2, x3) with complex coefficients.

Coefficients are stored densely in graded order: all multi-indices of total
degree 0, then degree 1, and so on.  A jet of order ``n`` therefore owns the
first ``n_coeffs(n)`` slots, and truncating to a lower order is a prefix slice.

Two layers live here.  The array kernels (``mul``, ``inv``, ``diff`` ...) act on
the last axis of numpy arrays and broadcast over leading axes; the symbol
algebra and the geometry code use them directly.  :class:`Jet3` is a thin value
type on top for scalar work and for the public API.
"""

from __future__ import annotations

from functools import lru_cache
from math import comb, factorial

import numpy as np

from .errors import NonPositiveLeadingCoefficient, ZeroLeadingCoefficient

ZERO_THRESHOLD = 1e-300


def n_coeffs(order: int) -> int:
    """Number of multi-indices in three variables with total degree <= order."""
    if order < 0:
        return 0
    return comb(order + 3, 3)


@lru_cache(maxsize=None)
def multi_indices(order: int) -> tuple[tuple[int, int, int], ...]:
    out = []
    for d in range(order + 1):
        for a in range(d, -1, -1):
            for b in range(d - a, -1, -1):
                out.append((a, b, d - a - b))
    return tuple(out)


@lru_cache(maxsize=None)
def index_map(order: int) -> dict[tuple[int, int, int], int]:
    return {m: i for i, m in enumerate(multi_indices(order))}


@lru_cache(maxsize=None)
def _product_plan(order: int):
    """Index pairs (i, j) feeding each target slot t, sorted by t."""
    mi = multi_indices(order)
    pos = index_map(order)
    left, right, target = [], [], []
    for i, a in enumerate(mi):
        da = sum(a)
        for j, b in enumerate(mi):
            if da + sum(b) > order:
                continue
            left.append(i)
            right.append(j)
            target.append(pos[(a[0] + b[0], a[1] + b[1], a[2] + b[2])])
    perm = np.argsort(np.asarray(target), kind="stable")
    left = np.asarray(left)[perm]
    right = np.asarray(right)[perm]
    target = np.asarray(target)[perm]
    starts = np.searchsorted(target, np.arange(n_coeffs(order)))
    return left, right, starts


@lru_cache(maxsize=None)
def _diff_plan(order: int, axis: int):
    """Source slots and integer factors for d/dx_axis (axis 0-based)."""
    pos = index_map(order)
    src, fac = [], []
    for m in multi_indices(order - 1):
        up = list(m)
        up[axis] += 1
        src.append(pos[tuple(up)])
        fac.append(up[axis])
    return np.asarray(src, dtype=int), np.asarray(fac, dtype=float)


@lru_cache(maxsize=None)
def _boundary_mask(order: int) -> np.ndarray:
    return np.array([m[2] == 0 for m in multi_indices(order)])


# ---------------------------------------------------------------------------
# array kernels


def truncate(a: np.ndarray, order: int) -> np.ndarray:
    return a[..., : n_coeffs(order)]


def mul(a: np.ndarray, b: np.ndarray, order: int) -> np.ndarray:
    """Broadcasting Cauchy product truncated at ``order``."""
    if order < 0:
        shape = np.broadcast_shapes(a.shape[:-1], b.shape[:-1])
        return np.zeros(shape + (0,), dtype=complex)
    left, right, starts = _product_plan(order)
    prod = a[..., left] * b[..., right]
    return np.add.reduceat(prod, starts, axis=-1)


def contract(subscripts: str, a: np.ndarray, b: np.ndarray, order: int) -> np.ndarray:
    """``np.einsum`` over tensor indices with the jet product on the last axis.

    ``subscripts`` names only the tensor indices, e.g. ``"ij,jk->ik"``.
    """
    if order < 0:
        raise ValueError("cannot contract jets of negative order")
    left, right, starts = _product_plan(order)
    lhs, out = subscripts.split("->")
    sa, sb = lhs.split(",")
    prod = np.einsum(f"{sa}z,{sb}z->{out}z", a[..., left], b[..., right])
    return np.add.reduceat(prod, starts, axis=-1)


def constant(value, order: int, shape=()) -> np.ndarray:
    out = np.zeros(tuple(shape) + (n_coeffs(order),), dtype=complex)
    if order >= 0:
        out[..., 0] = value
    return out


def _series(v: np.ndarray, coeffs: list, order: int) -> np.ndarray:
    """Evaluate sum_k coeffs[k] * v**k for nilpotent v (zero constant term)."""
    out = constant(coeffs[order], order, v.shape[:-1])
    for k in range(order - 1, -1, -1):
        out = mul(v, out, order)
        out[..., 0] += coeffs[k]
    return out


def _split(a: np.ndarray, order: int):
    a = truncate(np.asarray(a, dtype=complex), order)
    a0 = a[..., 0].copy()
    return a, a0


def inv(a: np.ndarray, order: int) -> np.ndarray:
    a, a0 = _split(a, order)
    if np.any(np.abs(a0) < ZERO_THRESHOLD):
        raise ZeroLeadingCoefficient("jet inverse needs a nonzero constant term")
    v = a / a0[..., None]
    v[..., 0] = 0.0
    coeffs = [(-1.0) ** k for k in range(order + 1)]
    return _series(v, coeffs, order) / a0[..., None]


def sqrt(a: np.ndarray, order: int, principal_only: bool = True) -> np.ndarray:
    """Square root with the principal branch at the base point."""
    a, a0 = _split(a, order)
    if principal_only and np.any((np.abs(a0.imag) > 0) | (a0.real <= 0)):
        raise NonPositiveLeadingCoefficient("jet sqrt needs a real positive constant term")
    if np.any(np.abs(a0) < ZERO_THRESHOLD):
        raise ZeroLeadingCoefficient("jet sqrt needs a nonzero constant term")
    v = a / a0[..., None]
    v[..., 0] = 0.0
    coeffs = [_binom_half(k) for k in range(order + 1)]
    return _series(v, coeffs, order) * np.sqrt(a0)[..., None]


def _binom_half(k: int) -> float:
    out = 1.0
    for i in range(k):
        out *= (0.5 - i) / (i + 1)
    return out


def exp(a: np.ndarray, order: int) -> np.ndarray:
    a, a0 = _split(a, order)
    v = a.copy()
    v[..., 0] = 0.0
    coeffs = [1.0 / factorial(k) for k in range(order + 1)]
    return _series(v, coeffs, order) * np.exp(a0)[..., None]


def log(a: np.ndarray, order: int) -> np.ndarray:
    a, a0 = _split(a, order)
    if np.any(np.abs(a0) < ZERO_THRESHOLD):
        raise ZeroLeadingCoefficient("jet log needs a nonzero constant term")
    v = a / a0[..., None]
    v[..., 0] = 0.0
    coeffs = [0.0] + [(-1.0) ** (k + 1) / k for k in range(1, order + 1)]
    out = _series(v, coeffs, order)
    out[..., 0] += np.log(a0)
    return out


def diff(a: np.ndarray, axis: int, order: int) -> np.ndarray:
    """d/dx_axis with axis 0-based; the result has order ``order - 1``."""
    if order <= 0:
        return np.zeros(a.shape[:-1] + (0,), dtype=complex)
    src, fac = _diff_plan(order, axis)
    return a[..., src] * fac


def restrict_boundary(a: np.ndarray, order: int) -> np.ndarray:
    """Zero every coefficient carrying a power of x3 (restriction to x3 = 0)."""
    out = truncate(a, order).copy()
    out[..., ~_boundary_mask(order)] = 0.0
    return out


def normal_layer(a: np.ndarray, order: int, m: int) -> np.ndarray:
    """Boundary jet of d3^m a at x3 = 0, of order ``order - m``."""
    n = order - m
    pos = index_map(order)
    out = np.zeros(a.shape[:-1] + (n_coeffs(n),), dtype=complex)
    for t, (i, j, k) in enumerate(multi_indices(n)):
        if k == 0:
            out[..., t] = a[..., pos[(i, j, m)]] * factorial(m)
    return out


def stack_layers(layers, order: int) -> np.ndarray:
    """Inverse of :func:`normal_layer`: sum_m layer_m(x1, x2) x3^m / m!.

    Layer m is read up to order ``order - m``; missing layers count as zero.
    """
    first = np.asarray(layers[0])
    out = np.zeros(first.shape[:-1] + (n_coeffs(order),), dtype=complex)
    pos = index_map(order)
    for m, layer in enumerate(layers):
        if m > order:
            break
        layer = np.asarray(layer)
        small = index_map(order - m)
        for (i, j, k), t in small.items():
            if k == 0 and t < layer.shape[-1]:
                out[..., pos[(i, j, m)]] = layer[..., t] / factorial(m)
    return out


def integrate_gradient(d1: np.ndarray, d2: np.ndarray, order: int) -> tuple[np.ndarray, float]:
    """Boundary potential f with f(0) = 0 and tangential gradient (d1, d2).

    ``d1`` and ``d2`` are boundary jets of order ``order - 1``; the result has
    order ``order``.  The second return value is the largest violation of the
    mixed-partials condition, zero for an exact gradient.
    """
    pos = index_map(order - 1)
    out = np.zeros(n_coeffs(order), dtype=complex)
    mismatch = 0.0
    for t, (i, j, k) in enumerate(multi_indices(order)):
        if k or (i == 0 and j == 0):
            continue
        if i:
            out[t] = d1[pos[(i - 1, j, 0)]] / i
            if j:
                mismatch = max(mismatch, abs(out[t] - d2[pos[(i, j - 1, 0)]] / j))
        else:
            out[t] = d2[pos[(0, j - 1, 0)]] / j
    return out, mismatch


def evaluate(a: np.ndarray, order: int, point) -> np.ndarray:
    """Evaluate the truncated polynomial at a point of R^3."""
    x = np.asarray(point, dtype=complex)
    mono = np.array([x[0] ** i * x[1] ** j * x[2] ** k for i, j, k in multi_indices(order)])
    return truncate(a, order) @ mono


# ---------------------------------------------------------------------------
# value type


class Jet3:
    """Immutable truncated power series in (x1, x2, x3)."""

    __slots__ = ("coeffs", "order")

    def __init__(self, coeffs, order: int):
        arr = np.zeros(n_coeffs(order), dtype=complex)
        c = np.asarray(coeffs, dtype=complex).ravel()
        m = min(arr.size, c.size)
        arr[:m] = c[:m]
        arr.setflags(write=False)
        object.__setattr__(self, "coeffs", arr)
        object.__setattr__(self, "order", int(order))

    def __setattr__(self, name, value):
        raise AttributeError("Jet3 is immutable")

    def __reduce__(self):
        return (Jet3, (np.array(self.coeffs), self.order))

    @classmethod
    def from_dict(cls, terms: dict, order: int) -> "Jet3":
        pos = index_map(order)
        arr = np.zeros(n_coeffs(order), dtype=complex)
        for key, val in terms.items():
            key = tuple(int(k) for k in key)
            if sum(key) > order:
                raise ValueError(f"multi-index {key} exceeds order {order}")
            arr[pos[key]] += val
        return cls(arr, order)

    @classmethod
    def const(cls, value, order: int) -> "Jet3":
        return cls(constant(value, order), order)

    @classmethod
    def var(cls, axis: int, order: int) -> "Jet3":
        """The coordinate function x_axis (axis in 1..3)."""
        key = [0, 0, 0]
        key[axis - 1] = 1
        return cls.from_dict({tuple(key): 1.0}, order)

    def to_dict(self, drop_zeros: bool = True) -> dict:
        return {
            m: complex(c)
            for m, c in zip(multi_indices(self.order), self.coeffs)
            if not (drop_zeros and c == 0)
        }

    def __getitem__(self, key) -> complex:
        key = tuple(key)
        if sum(key) > self.order:
            raise KeyError(key)
        return complex(self.coeffs[index_map(self.order)[key]])

    @property
    def value(self) -> complex:
        return complex(self.coeffs[0]) if self.order >= 0 else 0j

    def truncate(self, order: int) -> "Jet3":
        return Jet3(self.coeffs, min(order, self.order))

    def _coerce(self, other):
        if isinstance(other, Jet3):
            n = min(self.order, other.order)
            return truncate(self.coeffs, n), truncate(other.coeffs, n), n
        if np.isscalar(other):
            return self.coeffs, constant(other, self.order), self.order
        return NotImplemented

    def __add__(self, other):
        c = self._coerce(other)
        if c is NotImplemented:
            return c
        return Jet3(c[0] + c[1], c[2])

    __radd__ = __add__

    def __neg__(self):
        return Jet3(-self.coeffs, self.order)

    def __sub__(self, other):
        c = self._coerce(other)
        if c is NotImplemented:
            return c
        return Jet3(c[0] - c[1], c[2])

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if np.isscalar(other):
            return Jet3(self.coeffs * other, self.order)
        c = self._coerce(other)
        if c is NotImplemented:
            return c
        return Jet3(mul(c[0], c[1], c[2]), c[2])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if np.isscalar(other):
            return Jet3(self.coeffs / other, self.order)
        return self * other.inv()

    def __rtruediv__(self, other):
        return self.inv() * other

    def __pow__(self, k: int):
        out = Jet3.const(1.0, self.order)
        for _ in range(k):
            out = out * self
        return out

    def inv(self) -> "Jet3":
        return Jet3(inv(self.coeffs, self.order), self.order)

    def sqrt(self) -> "Jet3":
        return Jet3(sqrt(self.coeffs, self.order), self.order)

    def exp(self) -> "Jet3":
        return Jet3(exp(self.coeffs, self.order), self.order)

    def log(self) -> "Jet3":
        return Jet3(log(self.coeffs, self.order), self.order)

    def diff(self, axis: int) -> "Jet3":
        """Formal derivative in x_axis, axis in 1..3."""
        return Jet3(diff(self.coeffs, axis - 1, self.order), self.order - 1)

    def restrict_boundary(self) -> "Jet3":
        return Jet3(restrict_boundary(self.coeffs, self.order), self.order)

    def __call__(self, point) -> complex:
        return complex(evaluate(self.coeffs, self.order, point))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.coeffs), initial=0.0))

    def allclose(self, other: "Jet3", tol: float = 1e-12) -> bool:
        return (self - other).max_abs() <= tol

    def __eq__(self, other):
        if not isinstance(other, Jet3):
            return NotImplemented
        n = min(self.order, other.order)
        return bool(np.array_equal(truncate(self.coeffs, n), truncate(other.coeffs, n)))

    __hash__ = None

    def __repr__(self):
        terms = ", ".join(f"{k}: {v:.6g}" for k, v in self.to_dict().items())
        return f"Jet3(order={self.order}, {{{terms}}})"


def jet_add(a: Jet3, b: Jet3) -> Jet3:
    return a + b


def jet_mul(a: Jet3, b: Jet3) -> Jet3:
    return a * b


def jet_inv(a: Jet3) -> Jet3:
    return a.inv()


def jet_sqrt(a: Jet3) -> Jet3:
    return a.sqrt()


def jet_diff(a: Jet3, axis: int) -> Jet3:
    return a.diff(axis)
