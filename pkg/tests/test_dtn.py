import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emdtn import jets
from emdtn.checks import principal_residual
from emdtn.dtn import BoundaryField, L_from_Lambda, apply_dtn, dtn_symbols, multiplier, principal_closed_form
from emdtn.errors import DepthUnavailable, InputError
from emdtn.scenario import Scenario, random_scenario
from emdtn.symalg import SymbolTable, sym_eval


@pytest.fixture(scope="module")
def flat_symbol():
    return dtn_symbols(Scenario.flat(order=4, depth=3))


@pytest.fixture(scope="module")
def random_symbol():
    return dtn_symbols(random_scenario(21, order=5, depth=4))


def test_flat_principal_spot(flat_symbol):
    psi1 = flat_symbol.psi[1]
    assert abs(sym_eval(psi1, [1.0, 1.0])[0, 0] - 1j / np.sqrt(2)) < 1e-14
    assert sym_eval(psi1, [1.0, 0.0])[0, 0] == 0
    assert sym_eval(psi1, [0.0, 1.0])[0, 0] == 0


def test_flat_top_L_slot(flat_symbol):
    assert sym_eval(flat_symbol.L[1], [1.0, 1.0])[0, 0] == pytest.approx(1 / np.sqrt(2), abs=1e-15)


def test_flat_trace_of_L0_vanishes(flat_symbol):
    xi = np.random.default_rng(0).normal(size=(10, 2))
    vals = flat_symbol.L[0].evaluate(xi)
    assert np.abs(vals[:, 0, 0] + vals[:, 1, 1]).max() < 1e-15


def test_principal_closed_form_random(random_symbol):
    s = random_symbol.coeffs.scenario
    assert principal_residual(s, random_symbol.psi) < 1e-11
    g = random_symbol.coeffs.geometry.lower[:2, :2, 0].real
    xi = np.array([0.7, -1.2])
    want = principal_closed_form(xi, s.omega, s.mu.value.real, g)
    assert sym_eval(random_symbol.psi[1], xi)[0, 0] == pytest.approx(want, rel=1e-13)


def test_lambda_row_mixing(random_symbol):
    s = random_symbol.coeffs.scenario
    g = random_symbol.coeffs.geometry.lower[:, :, 0]
    pre = 1 / (1j * s.omega * s.mu.value * np.sqrt(g[0, 0] * g[1, 1] - g[0, 1] ** 2))
    xi = np.array([0.3, 0.9])
    for d in random_symbol.L.degrees():
        L = sym_eval(random_symbol.L[d], xi)
        lam = sym_eval(random_symbol.Lambda[d], xi)
        assert lam[0, 0] == pytest.approx(pre * (-g[0, 1] * L[0, 0] + g[0, 0] * L[0, 1]), rel=1e-12)


def test_mixing_round_trip(random_symbol):
    back = L_from_Lambda(random_symbol.Lambda, random_symbol.coeffs)
    for d in back.degrees():
        assert (back[d] - random_symbol.L[d]).max_abs() < 1e-11


def test_psi_is_boundary_trace(random_symbol):
    for d in random_symbol.psi.degrees():
        e = random_symbol.psi[d]
        assert e.ctx.is_boundary
        x3 = np.array([k for (_, _, k) in jets.multi_indices(e.order)])
        assert np.abs(e.p0[..., x3 > 0]).max(initial=0) == 0


# ---------------------------------------------------------------- Fourier multiplier


def plane_wave(n, k, vec):
    x1, x2 = BoundaryField.grid(n)
    wave = np.exp(1j * (k[0] * x1 + k[1] * x2))
    return BoundaryField(np.array([vec[0] * wave, vec[1] * wave]))


def test_single_mode(flat_symbol):
    n, k = 32, (3, -2)
    f = plane_wave(n, k, (1.0, 0.0))
    out = apply_dtn(flat_symbol, f, depth=1)
    want = sym_eval(flat_symbol.psi[1], np.array(k, float)) @ np.array([1.0, 0.0])
    wave = f.samples[0]
    assert np.abs(out.samples - want[:, None, None] * wave).max() < 1e-12


def test_zero_mode_conventions(flat_symbol):
    f = BoundaryField(np.ones((2, 8, 8), complex) * np.array([2.0, -1.0])[:, None, None])
    assert np.abs(apply_dtn(flat_symbol, f, 1).samples).max() < 1e-15
    assert np.abs(apply_dtn(flat_symbol, f, 1, zero_mode="pass").samples - f.samples).max() < 1e-15


def test_depth_unavailable(flat_symbol):
    with pytest.raises(DepthUnavailable):
        multiplier(flat_symbol.psi, np.array([[1.0, 0.0]]), depth=5)


def test_norm_bound(random_symbol, rng):
    n = 16
    f = BoundaryField(rng.normal(size=(2, n, n)) + 1j * rng.normal(size=(2, n, n)))
    out = apply_dtn(random_symbol, f, 3)
    k = np.fft.fftfreq(n, 1.0 / n)
    xi = np.stack(np.meshgrid(k, k, indexing="ij"), axis=-1).reshape(-1, 2)
    xi = xi[np.any(xi != 0, axis=1)]
    bound = np.linalg.norm(multiplier(random_symbol.psi, xi, 3), ord=2, axis=(1, 2)).max()
    assert np.linalg.norm(out.samples) <= bound * np.linalg.norm(f.samples) * (1 + 1e-10)


def test_linearity_and_homogeneity_256(random_symbol, rng):
    n = 256
    t0 = time.perf_counter()
    f = BoundaryField(rng.normal(size=(2, n, n)) + 1j * rng.normal(size=(2, n, n)))
    g = BoundaryField(rng.normal(size=(2, n, n)))
    a, b = 0.7 - 0.2j, 1.9
    lhs = apply_dtn(random_symbol, BoundaryField(a * f.samples + b * g.samples), 3).samples
    rhs = a * apply_dtn(random_symbol, f, 3).samples + b * apply_dtn(random_symbol, g, 3).samples
    assert np.abs(lhs - rhs).max() < 1e-10 * np.abs(rhs).max()
    # each homogeneous slot scales like t^d when the mode is scaled by t
    for d in random_symbol.psi.degrees():
        single = SymbolTable("slot", {d: random_symbol.psi[d]})
        k = np.array([5, 3])
        u = apply_dtn(single, plane_wave(n, k, (1.0, 0.5)), 2 - d).samples
        v = apply_dtn(single, plane_wave(n, 4 * k, (1.0, 0.5)), 2 - d).samples
        # the plane waves equal 1 at the grid origin, so the amplitudes sit there
        amp_u, amp_v = u[:, 0, 0], v[:, 0, 0]
        assert np.abs(amp_v - 4.0**d * amp_u).max() < 1e-10 * max(np.abs(amp_v).max(), 1e-300)
    assert time.perf_counter() - t0 < 5.0


def test_field_bytes_round_trip(rng, tmp_path):
    f = BoundaryField(rng.normal(size=(2, 4, 6)) + 1j * rng.normal(size=(2, 4, 6)), (0.25, -1.0), "tangential")
    path = tmp_path / "f.bin"
    f.save(path)
    g = BoundaryField.load(path)
    assert np.array_equal(f.samples, g.samples) and g.base_point == (0.25, -1.0) and g.frame == "tangential"
    with pytest.raises(InputError):
        BoundaryField.from_bytes(b"nope\n")
    with pytest.raises(InputError):
        BoundaryField.from_bytes(f.to_bytes()[:-3])


@settings(max_examples=5)
@given(st.integers(min_value=0, max_value=10**6))
def test_principal_closed_form_property(seed):
    s = random_scenario(seed, order=4, depth=1)
    assert principal_residual(s) < 1e-11
