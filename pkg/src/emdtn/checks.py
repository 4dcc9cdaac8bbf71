"""Identity suites shared by the verify command, the tests and the scripts.

Each suite returns a dict of named maximum residuals; callers compare them
against a tolerance.
"""

from __future__ import annotations

import numpy as np

from . import jets
from .dtn import dtn_symbols
from .factor import assemble_b_c, factorization_residual, phi_recursion, q_recursion, q_residual
from .geometry import Geometry, VectorFieldJet, curl_curl_identity_residual, trace_identity_residual
from .scenario import Scenario
from .symalg import SymbolElement


def random_jet(rng: np.random.Generator, order: int, complex_valued: bool = True) -> np.ndarray:
    out = rng.uniform(-1, 1, jets.n_coeffs(order))
    if complex_valued:
        out = out + 1j * rng.uniform(-1, 1, jets.n_coeffs(order))
    return out.astype(complex)


def bianchi_residual(geo: Geometry) -> float:
    """max |R^j_{klm} + R^j_{lmk} + R^j_{mkl}|."""
    r = geo.riemann
    total = r + r.transpose(0, 2, 3, 1, 4) + r.transpose(0, 3, 1, 2, 4)
    return float(np.abs(total).max())


def geometry_residuals(scenario: Scenario, rng: np.random.Generator) -> dict:
    metric = scenario.metric
    geo = Geometry(metric)
    n = scenario.order
    x = np.stack([random_jet(rng, n) for _ in range(3)])
    f = random_jet(rng, n)
    c, nc = geo.curl(x, n)
    dc, _ = geo.div(c, nc)
    gf, ng = geo.grad(f, n)
    cg, _ = geo.curl(gf, ng)
    cc = curl_curl_identity_residual(metric, VectorFieldJet.from_array(x, n))
    return {
        "curl_curl": cc.max_abs(),
        "div_curl": float(np.abs(dc).max()),
        "curl_grad": float(np.abs(cg).max()),
        "trace": trace_identity_residual(metric),
        "bianchi": bianchi_residual(geo),
    }


def factorization_residuals(scenario: Scenario, lowest_phi: int, lowest_q: int) -> dict:
    """Largest graded-slot residual of the factorization and of the parametrix composition."""
    coeffs = assemble_b_c(scenario)
    phi = phi_recursion(coeffs, lowest_phi)
    q = q_recursion(phi, coeffs, lowest_q)
    fac = factorization_residual(coeffs, phi)
    qr = q_residual(q, coeffs, phi)
    return {
        "factorization": max(fac.values()),
        "factorization_top": fac[2],
        "q_composition": max(qr.values()),
    }


def principal_closed_form_symbol(scenario: Scenario, ctx) -> SymbolElement:
    """-xi1 xi2 / (i omega mu sqrt(|g| Q)) as a boundary symbol of degree 1."""
    n = scenario.order
    det = Geometry(scenario.metric).det
    c = jets.mul(jets.restrict_boundary(scenario.mu.coeffs, n), jets.sqrt(jets.restrict_boundary(det, n), n), n)
    c = -jets.inv(c, n) / (1j * scenario.omega)
    p = np.zeros((1, 1, 3, jets.n_coeffs(n)), dtype=complex)
    p[0, 0, 1, 0] = 1.0
    return (SymbolElement.from_jets(ctx, c, n) @ SymbolElement.polynomial(ctx, p, n)).divide_by_weight()


def principal_residual(scenario: Scenario, psi=None) -> float:
    """Coefficient-wise distance between the assembled psi_1^{11} and its closed form."""
    if psi is None:
        psi = dtn_symbols(scenario.with_(depth=1)).psi
    got = psi[1][0, 0]
    want = principal_closed_form_symbol(scenario, got.ctx)
    return (got - want).max_abs()


def identity_report(scenario: Scenario, rng: np.random.Generator | None = None) -> dict:
    """All suites at the scenario's depth."""
    rng = np.random.default_rng(scenario.seed or 0) if rng is None else rng
    lowest = scenario.lowest_degree
    out = geometry_residuals(scenario, rng)
    out.update(factorization_residuals(scenario, min(lowest, 0), min(lowest, 0) - 1))
    out["principal_closed_form"] = principal_residual(scenario)
    return out


def flat_spot_value(omega: float = 1.0) -> complex:
    """psi_1^{11}(xi = (1, 1)) of the flat scenario with mu = sigma = 1."""
    psi = dtn_symbols(Scenario.flat(order=2, depth=1, omega=omega)).psi
    return complex(psi[1].evaluate(np.array([1.0, 1.0]))[0, 0])

