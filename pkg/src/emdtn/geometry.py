"""Riemannian tensor calculus in boundary normal coordinates.

The metric has the block form g13 = g23 = 0, g33 = 1, so only the tangential
2x2 block is stored.  Every tensor is a numpy array whose last axis holds jet
coefficients; index positions are 0-based (0, 1, 2 stand for x1, x2, x3).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import jets
from .errors import CoincidentPoints, NonPositiveDefinite
from .jets import Jet3

# Levi-Civita symbol
EPS = np.zeros((3, 3, 3))
for _i, _j, _k in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
    EPS[_i, _j, _k] = 1.0
    EPS[_i, _k, _j] = -1.0


def _common(*items):
    """Truncate (array, order) pairs to their smallest order."""
    n = min(o for _, o in items)
    return [jets.truncate(a, n) for a, _ in items], n


def _grad_array(a: np.ndarray, order: int) -> np.ndarray:
    """Stack d/dx_l along a new leading axis: result[l, ...]."""
    return np.stack([jets.diff(a, l, order) for l in range(3)])


@dataclass(frozen=True)
class BoundaryMetricJet:
    """Tangential block of a metric in boundary normal coordinates."""

    g11: Jet3
    g12: Jet3
    g22: Jet3

    def __post_init__(self):
        a, b, c = self.g11.value, self.g12.value, self.g22.value
        if max(abs(a.imag), abs(b.imag), abs(c.imag)) > 0:
            raise NonPositiveDefinite("metric must be real at the base point")
        if not (a.real > 0 and a.real * c.real - b.real**2 > 0):
            raise NonPositiveDefinite("metric block is not positive definite at the base point")

    @property
    def order(self) -> int:
        return min(self.g11.order, self.g12.order, self.g22.order)

    @classmethod
    def flat(cls, order: int) -> "BoundaryMetricJet":
        one, zero = Jet3.const(1.0, order), Jet3.const(0.0, order)
        return cls(one, zero, one)

    @classmethod
    def from_upper(cls, u11: Jet3, u12: Jet3, u22: Jet3) -> "BoundaryMetricJet":
        """Build the metric from its inverse block g^{ab}."""
        det_u = u11 * u22 - u12 * u12
        inv = det_u.inv()
        return cls(u22 * inv, -u12 * inv, u11 * inv)

    def lower(self) -> np.ndarray:
        n = self.order
        out = np.zeros((3, 3, jets.n_coeffs(n)), dtype=complex)
        out[0, 0] = jets.truncate(self.g11.coeffs, n)
        out[0, 1] = out[1, 0] = jets.truncate(self.g12.coeffs, n)
        out[1, 1] = jets.truncate(self.g22.coeffs, n)
        out[2, 2, 0] = 1.0
        return out


@dataclass(frozen=True)
class VectorFieldJet:
    X1: Jet3
    X2: Jet3
    X3: Jet3

    @property
    def order(self) -> int:
        return min(self.X1.order, self.X2.order, self.X3.order)

    def array(self) -> np.ndarray:
        n = self.order
        return np.stack([jets.truncate(x.coeffs, n) for x in (self.X1, self.X2, self.X3)])

    @classmethod
    def from_array(cls, arr: np.ndarray, order: int) -> "VectorFieldJet":
        return cls(*(Jet3(arr[i], order) for i in range(3)))

    def max_abs(self) -> float:
        return max(x.max_abs() for x in (self.X1, self.X2, self.X3))


@dataclass(frozen=True)
class ChristoffelJet:
    """Gamma[j, l, k] = Gamma^j_{lk} (0-based indices) with its jet order."""

    gamma: np.ndarray
    order: int

    def __getitem__(self, idx) -> Jet3:
        j, l, k = idx
        return Jet3(self.gamma[j, l, k], self.order)


class Geometry:
    """Lazily computed tensors of one boundary metric jet."""

    def __init__(self, metric: BoundaryMetricJet):
        self.metric = metric
        self.order = metric.order

    @cached_property
    def lower(self) -> np.ndarray:
        return self.metric.lower()

    @cached_property
    def det(self) -> np.ndarray:
        g, n = self.lower, self.order
        return jets.mul(g[0, 0], g[1, 1], n) - jets.mul(g[0, 1], g[0, 1], n)

    @cached_property
    def upper(self) -> np.ndarray:
        g, n = self.lower, self.order
        inv_det = jets.inv(self.det, n)
        out = np.zeros_like(g)
        out[0, 0] = jets.mul(g[1, 1], inv_det, n)
        out[0, 1] = out[1, 0] = -jets.mul(g[0, 1], inv_det, n)
        out[1, 1] = jets.mul(g[0, 0], inv_det, n)
        out[2, 2, 0] = 1.0
        return out

    @cached_property
    def sqrt_det(self) -> np.ndarray:
        return jets.sqrt(self.det, self.order)

    @cached_property
    def inv_sqrt_det(self) -> np.ndarray:
        return jets.inv(self.sqrt_det, self.order)

    @cached_property
    def christoffel(self) -> np.ndarray:
        """Gamma^j_{lk} = 1/2 g^{jm}(d_l g_km + d_k g_lm - d_m g_lk), order N-1."""
        n = self.order - 1
        d = _grad_array(self.lower, self.order)  # d[l, k, m] = d_l g_km
        bracket = d + d.transpose(1, 0, 2, 3) - d.transpose(1, 2, 0, 3)
        # bracket[l, k, m]; contract m with g^{jm}
        up = jets.truncate(self.upper, n)
        gam = 0.5 * jets.contract("jm,lkm->jlk", up, bracket, n)
        # boundary normal identities hold exactly; enforce against round-off
        gam[2, 2, :] = 0.0
        gam[2, :, 2] = 0.0
        gam[:, 2, 2] = 0.0
        return gam

    @cached_property
    def riemann(self) -> np.ndarray:
        """R[j, k, l, m] = R^j_{klm}, order N-2."""
        gam, n1 = self.christoffel, self.order - 1
        n = n1 - 1
        dg = _grad_array(gam, n1)  # dg[l, j, k, m] = d_l Gamma^j_{km}
        lin = dg.transpose(1, 2, 0, 3, 4) - dg.transpose(1, 2, 3, 0, 4)
        g2 = jets.truncate(gam, n)
        quad = jets.contract("jsl,skm->jklm", g2, g2, n)
        return lin + quad - quad.transpose(0, 1, 3, 2, 4)

    @cached_property
    def ricci(self) -> np.ndarray:
        """R_{km} = sum_j R^j_{kjm}."""
        return np.einsum("jkjmz->kmz", self.riemann)

    @cached_property
    def ricci_mixed(self) -> np.ndarray:
        """R^j_k = sum_m g^{jm} R_{mk}."""
        n = self.order - 2
        return jets.contract("jm,mk->jk", jets.truncate(self.upper, n), self.ricci, n)

    @cached_property
    def log_sqrt_det_grad(self) -> np.ndarray:
        """(1/sqrt|g|) d_k sqrt|g| for k = 1, 2, 3, order N-1."""
        n = self.order - 1
        d = _grad_array(self.sqrt_det, self.order)
        return jets.mul(d, jets.truncate(self.inv_sqrt_det, n), n)

    # ----------------------------------------------------------- operators
    def grad(self, f: np.ndarray, order: int) -> tuple[np.ndarray, int]:
        n = min(order - 1, self.order)
        df = _grad_array(f, order)
        return jets.contract("jk,k->j", jets.truncate(self.upper, n), df, n), n

    def div(self, x: np.ndarray, order: int) -> tuple[np.ndarray, int]:
        n0 = min(order, self.order)
        weighted = jets.mul(jets.truncate(self.sqrt_det, n0), jets.truncate(x, n0), n0)
        total = sum(jets.diff(weighted[j], j, n0) for j in range(3))
        n = n0 - 1
        return jets.mul(jets.truncate(self.inv_sqrt_det, n), total, n), n

    def lower_index(self, x: np.ndarray, order: int) -> tuple[np.ndarray, int]:
        n = min(order, self.order)
        return jets.contract("lm,m->l", jets.truncate(self.lower, n), jets.truncate(x, n), n), n

    def curl(self, x: np.ndarray, order: int) -> tuple[np.ndarray, int]:
        gx, n0 = self.lower_index(x, order)
        d = _grad_array(gx, n0)  # d[k, l] = d_k (gX)_l
        n = n0 - 1
        raw = np.einsum("jkl,klz->jz", EPS, d)
        return jets.mul(jets.truncate(self.inv_sqrt_det, n), raw, n), n

    def laplace_beltrami(self, f: np.ndarray, order: int) -> tuple[np.ndarray, int]:
        gf, n = self.grad(f, order)
        return self.div(gf, n)

    def cross_dual(self, e: np.ndarray, f: np.ndarray, order: int) -> tuple[np.ndarray, int]:
        """sqrt|g| det[[dx_j], E, F] with dx_j = g^{jk} d_k."""
        n = min(order, self.order)
        e, f = jets.truncate(e, n), jets.truncate(f, n)
        flat = np.einsum("jab,az->jbz", EPS, e)
        flat = jets.contract("jb,b->j", flat, f, n)
        raised = jets.contract("kj,j->k", jets.truncate(self.upper, n), flat, n)
        return jets.mul(jets.truncate(self.sqrt_det, n), raised, n), n

    def cross_lowered(self, e: np.ndarray, f: np.ndarray, order: int) -> tuple[np.ndarray, int]:
        """(1/sqrt|g|) det[[d_j], gE, gF]."""
        ge, n = self.lower_index(e, order)
        gf, _ = self.lower_index(f, n)
        flat = np.einsum("jab,az->jbz", EPS, ge)
        flat = jets.contract("jb,b->j", flat, gf, n)
        return jets.mul(jets.truncate(self.inv_sqrt_det, n), flat, n), n


# ---------------------------------------------------------------------------
# functional API on the value types


def inverse_metric(g: BoundaryMetricJet):
    """Return (g^{11}, g^{12}, g^{22}, |g|) as jets."""
    geo = Geometry(g)
    n = geo.order
    up = geo.upper
    return Jet3(up[0, 0], n), Jet3(up[0, 1], n), Jet3(up[1, 1], n), Jet3(geo.det, n)


def christoffel(g: BoundaryMetricJet) -> ChristoffelJet:
    geo = Geometry(g)
    return ChristoffelJet(geo.christoffel, geo.order - 1)


def curvature(g: BoundaryMetricJet, gamma: ChristoffelJet | None = None):
    """Riemann R^j_{klm}, Ricci R_{km} and mixed Ricci R^j_k as jet arrays.

    ``gamma`` is accepted for API symmetry; the tensors are always derived from
    ``g`` so that the two can never disagree.
    """
    geo = Geometry(g)
    return geo.riemann, geo.ricci, geo.ricci_mixed


def grad(g: BoundaryMetricJet, f: Jet3) -> VectorFieldJet:
    arr, n = Geometry(g).grad(f.coeffs, f.order)
    return VectorFieldJet.from_array(arr, n)


def div(g: BoundaryMetricJet, x: VectorFieldJet) -> Jet3:
    arr, n = Geometry(g).div(x.array(), x.order)
    return Jet3(arr, n)


def curl(g: BoundaryMetricJet, x: VectorFieldJet) -> VectorFieldJet:
    arr, n = Geometry(g).curl(x.array(), x.order)
    return VectorFieldJet.from_array(arr, n)


def laplace_beltrami(g: BoundaryMetricJet, f: Jet3) -> Jet3:
    arr, n = Geometry(g).laplace_beltrami(f.coeffs, f.order)
    return Jet3(arr, n)


def cross(g: BoundaryMetricJet, e: VectorFieldJet, f: VectorFieldJet, form: str = "dual") -> VectorFieldJet:
    """Vector product; ``form`` is "dual" (raised cofactor form) or "lowered"."""
    geo = Geometry(g)
    n = min(e.order, f.order)
    op = geo.cross_dual if form == "dual" else geo.cross_lowered
    arr, n = op(e.array(), f.array(), n)
    return VectorFieldJet.from_array(arr, n)


def trace_identity_residual(g: BoundaryMetricJet) -> float:
    """max |(1/sqrt|g|) d_k sqrt|g| - sum_c Gamma^c_{kc}| over k and coefficients."""
    geo = Geometry(g)
    traced = np.einsum("ckcz->kz", geo.christoffel)
    half = 0.5 * jets.contract(
        "ab,kab->k",
        jets.truncate(geo.upper, geo.order - 1),
        _grad_array(geo.lower, geo.order),
        geo.order - 1,
    )
    return float(max(np.abs(traced - geo.log_sqrt_det_grad).max(), np.abs(half - traced).max()))


def curl_curl_identity_residual(g: BoundaryMetricJet, x: VectorFieldJet) -> VectorFieldJet:
    """curl curl X minus the expansion in terms of grad div, Laplacians and curvature."""
    geo = Geometry(g)
    xa, nx = x.array(), x.order
    c1, n1 = geo.curl(xa, nx)
    lhs, n2 = geo.curl(c1, n1)

    dv, nd = geo.div(xa, nx)
    gd, _ = geo.grad(dv, nd)

    n = min(n2, geo.order - 2)
    gam1 = jets.truncate(geo.christoffel, n + 1)
    up = jets.truncate(geo.upper, n + 1)
    dx = _grad_array(jets.truncate(xa, n + 1), n + 1)  # dx[l, k] = d_l X^k
    dgam = _grad_array(gam1, n + 1)  # dgam[l, j, k, m]
    gam = jets.truncate(gam1, n)
    upn = jets.truncate(up, n)
    xn = jets.truncate(xa, n)

    lap = np.stack([geo.laplace_beltrami(xa[j], nx)[0] for j in range(3)])
    gml_gam = jets.contract("ml,jkm->jkl", upn, gam, n)
    term_d = 2.0 * jets.contract("jkl,lk->j", gml_gam, dx, n)
    a_coef = jets.contract("ml,ljkm->jk", upn, dgam, n)
    gg1 = jets.contract("jhl,hkm->jklm", gam, gam, n)
    a_coef = a_coef + jets.contract("ml,jklm->jk", upn, gg1, n)
    gg2 = jets.contract("jkh,hml->jkml", gam, gam, n)
    a_coef = a_coef - jets.contract("ml,jkml->jk", upn, gg2, n)
    a_coef = a_coef - geo.ricci_mixed[..., : jets.n_coeffs(n)]
    term_0 = jets.contract("jk,k->j", a_coef, xn, n)

    rhs = jets.truncate(gd, n) - (jets.truncate(lap, n) + term_d + term_0)
    return VectorFieldJet.from_array(jets.truncate(lhs, n) - rhs, n)


def a_matrix(geo: Geometry) -> tuple[np.ndarray, int]:
    """a_{jk} = g^{ml}(d_l Gamma^j_{km} + Gamma^j_{hl} Gamma^h_{km} - Gamma^j_{kh} Gamma^h_{ml})."""
    n = geo.order - 2
    dgam = _grad_array(geo.christoffel, n + 1)
    gam = jets.truncate(geo.christoffel, n)
    up = jets.truncate(geo.upper, n)
    out = jets.contract("ml,ljkm->jk", up, dgam, n)
    out = out + jets.contract("ml,jklm->jk", up, jets.contract("jhl,hkm->jklm", gam, gam, n), n)
    out = out - jets.contract("ml,jkml->jk", up, jets.contract("jkh,hml->jkml", gam, gam, n), n)
    return out, n


def classical_dyadic_green(omega: float, mu, sigma, x, y) -> np.ndarray:
    """Free-space electric dyadic Green's function [I + grad grad / k^2] g(y - x)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = y - x
    r = float(np.linalg.norm(d))
    if r == 0.0:
        raise CoincidentPoints("Green's function is singular at coincident points")
    k2 = omega**2 * complex(mu) * complex(sigma)
    if k2 == 0:
        raise ValueError("omega^2 mu sigma must be nonzero")
    k = np.sqrt(k2)
    if k.imag < 0:
        k = -k
    g = np.exp(1j * k * r) / (4.0 * np.pi * r)
    g1 = g * (1j * k - 1.0 / r)  # dg/dr
    g2 = g * ((1j * k - 1.0 / r) ** 2 + 1.0 / r**2)  # d2g/dr2
    rhat = d / r
    outer = np.outer(rhat, rhat)
    hess = (g2 - g1 / r) * outer + (g1 / r) * np.eye(3)
    return g * np.eye(3) + hess / k2
