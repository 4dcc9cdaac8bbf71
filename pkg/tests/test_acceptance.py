"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` (lines go straight to the
terminal) or ``python3 tests/test_acceptance.py``.
"""

import contextlib
import io
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from emdtn.checks import factorization_residuals, flat_spot_value, geometry_residuals, principal_residual
from emdtn.cli import main, read_scenario, read_symbols, scenario_to_text, symbols_to_text, write_scenario
from emdtn.dtn import BoundaryField, apply_dtn, dtn_symbols
from emdtn.geometry import classical_dyadic_green
from emdtn.recon import MeasuredSymbols, invert_trace_form, layer_errors, reconstruct, trace_constants
from emdtn.scenario import Scenario, random_scenario
from emdtn.symalg import SymbolTable, sym_eval

# tolerances and budgets
GEOMETRY_TOL, GEOMETRY_SECONDS = 1e-9, 10.0
FACTOR_TOL, FACTOR_SECONDS = 1e-9, 60.0
Q_TOL = 1e-9
CLOSED_FORM_TOL, SPOT_TOL = 1e-11, 1e-14
ROUNDTRIP_TOL, CONSTANT_TOL, ROUNDTRIP_SECONDS = 1e-7, 1e-10, 300.0
PLANE_WAVE_TOL, GRID_SECONDS = 1e-12, 5.0
GREEN_FD_TOL, RECIPROCITY_TOL = 1e-4, 1e-10

ROUNDTRIP_SEEDS = range(10)
FACTOR_SEEDS = range(25)


def _fmt(x):
    return f"{x:.2e}"


def _factor_scenarios():
    return [random_scenario(s, order=6, depth=5) for s in FACTOR_SEEDS]


def criterion_1():
    t0 = time.perf_counter()
    worst = {}
    for seed in range(100):
        res = geometry_residuals(random_scenario(seed, order=4, depth=1), np.random.default_rng(seed))
        for k, v in res.items():
            worst[k] = max(worst.get(k, 0.0), v)
    dt = time.perf_counter() - t0
    ok = max(worst.values()) < GEOMETRY_TOL and dt < GEOMETRY_SECONDS
    detail = ", ".join(f"{k} {_fmt(v)}" for k, v in worst.items())
    return ok, f"100 scenarios N=4: {detail}; {dt:.1f}s (< {GEOMETRY_SECONDS:.0f}s)"


_FACTOR_CACHE = {}


def _factor_results():
    if not _FACTOR_CACHE:
        t0 = time.perf_counter()
        res = [factorization_residuals(s, -3, -4) for s in _factor_scenarios()]
        _FACTOR_CACHE["res"] = res
        _FACTOR_CACHE["seconds"] = time.perf_counter() - t0
    return _FACTOR_CACHE["res"], _FACTOR_CACHE["seconds"]


def criterion_2():
    res, dt = _factor_results()
    worst = max(r["factorization"] for r in res)
    top = max(r["factorization_top"] for r in res)
    ok = worst < FACTOR_TOL and top == 0.0 and dt < FACTOR_SECONDS
    return ok, f"25 scenarios through phi_-3: slots 2..-2 max {_fmt(worst)}, degree-2 slot {top!r}; {dt:.1f}s"


def criterion_3():
    res, _ = _factor_results()
    worst = max(r["q_composition"] for r in res)
    return worst < Q_TOL, f"25 scenarios through q_-4: max slot {_fmt(worst)}"


def criterion_4():
    worst = max(principal_residual(s) for s in _factor_scenarios())
    spot = abs(flat_spot_value() - 1j / np.sqrt(2))
    ok = worst < CLOSED_FORM_TOL and spot < SPOT_TOL
    return ok, f"closed form max {_fmt(worst)} over 25 scenarios; flat spot value error {_fmt(spot)}"


def criterion_5():
    eye = np.eye(2, dtype=complex)[:, :, None]
    ok = trace_constants(1) == (7, -11, -15) and trace_constants(2) == (7, 1, 9) and trace_constants(5) == (7, 1, 9)
    ok &= 1 / trace_constants(1)[2] == -1 / 15 and 1 / trace_constants(2)[2] == 1 / 9
    H1, h1 = invert_trace_form(np.diag([-15.0, -15.0]).astype(complex)[:, :, None], eye, eye, 1)
    H2, h2 = invert_trace_form(np.diag([8.0, 1.0]).astype(complex)[:, :, None], eye, eye, 2)
    ex1 = np.array_equal(H1[:, :, 0], np.diag([1.0, 1.0]))
    ex2 = np.array_equal(H2[:, :, 0], np.diag([1.0, 0.0]))
    return ok and ex1 and ex2, f"constants {trace_constants(1)} / {trace_constants(2)}, hand examples {ex1}/{ex2}"


def _roundtrip(mode):
    t0 = time.perf_counter()
    worst = 0.0
    solves = []
    for seed in ROUNDTRIP_SEEDS:
        truth = random_scenario(seed, order=6, depth=5)
        known = {"metric": {"mu": truth.mu, "sigma": truth.sigma}, "parameter": {"metric": truth.metric}}[mode]
        state = reconstruct(MeasuredSymbols.from_scenario(truth), mode, max_order=3, **known)
        errs = layer_errors(state, truth)
        if sorted(errs) != [0, 1, 2, 3]:
            return False, f"seed {seed}: orders recovered {sorted(errs)}", [], time.perf_counter() - t0
        worst = max(worst, max(errs.values()))
        solves += state.solves
    return worst < ROUNDTRIP_TOL, f"{len(ROUNDTRIP_SEEDS)} scenarios N=6 depth 5, m=0..3 max rel {_fmt(worst)}", \
        solves, time.perf_counter() - t0


def criterion_6():
    ok, detail, _, dt = _roundtrip("metric")
    const = 0.0
    for g, mu, sigma in (((1.0, 0.0, 1.0), 1.0, 1.0), ((1.7, 0.4, 0.6), 1.3, 0.8 + 0.4j)):
        truth = Scenario.constant(*g, mu=mu, sigma=sigma, order=6, depth=5)
        state = reconstruct(MeasuredSymbols.from_scenario(truth), "metric", mu=truth.mu, sigma=truth.sigma,
                            max_order=3)
        const = max(const, max(layer_errors(state, truth).values()))
    ok = ok and const < CONSTANT_TOL and dt < ROUNDTRIP_SECONDS
    return ok, f"{detail}; constant scenarios {_fmt(const)}; {dt:.1f}s"


def criterion_7():
    ok, detail, solves, dt = _roundtrip("parameter")
    engaged = bool(solves) and all(s["margin"] > s["threshold"] for s in solves)
    low = min((s["margin"] / s["threshold"] for s in solves), default=0.0)
    ok = ok and engaged and dt < ROUNDTRIP_SECONDS
    return ok, f"{detail}; {len(solves)} solves, all above margin: {engaged} (min ratio {low:.3g}); {dt:.1f}s"


def _plane_wave(n, k, vec):
    x1, x2 = BoundaryField.grid(n)
    wave = np.exp(1j * (k[0] * x1 + k[1] * x2))
    return BoundaryField(np.array([vec[0] * wave, vec[1] * wave]))


def criterion_8():
    sym = dtn_symbols(random_scenario(21, order=5, depth=4))
    k, vec = (3, -2), np.array([0.4, 1.0 - 0.5j])
    f = _plane_wave(32, k, vec)
    out = apply_dtn(sym, f, 4).samples
    want = sum(sym_eval(sym.psi[d], np.array(k, float)) for d in sym.psi.degrees()) @ vec
    single = np.abs(out - want[:, None, None] * f.samples[0] / vec[0]).max()

    rng = np.random.default_rng(7)
    n = 256
    t0 = time.perf_counter()
    a = BoundaryField(rng.normal(size=(2, n, n)) + 1j * rng.normal(size=(2, n, n)))
    b = BoundaryField(rng.normal(size=(2, n, n)))
    c1, c2 = 0.7 - 0.2j, 1.9
    lhs = apply_dtn(sym, BoundaryField(c1 * a.samples + c2 * b.samples), 4).samples
    rhs = c1 * apply_dtn(sym, a, 4).samples + c2 * apply_dtn(sym, b, 4).samples
    lin = np.abs(lhs - rhs).max() / np.abs(rhs).max()
    hom = 0.0
    for d in sym.psi.degrees():
        slot = SymbolTable("slot", {d: sym.psi[d]})
        u = apply_dtn(slot, _plane_wave(n, (5, 3), (1.0, 0.5)), 2 - d).samples[:, 0, 0]
        v = apply_dtn(slot, _plane_wave(n, (20, 12), (1.0, 0.5)), 2 - d).samples[:, 0, 0]
        hom = max(hom, np.abs(v - 4.0**d * u).max() / np.abs(v).max())
    dt = time.perf_counter() - t0
    ok = single < PLANE_WAVE_TOL and lin < 1e-10 and hom < 1e-10 and dt < GRID_SECONDS
    return ok, f"plane wave {_fmt(single)}; 256^2 linearity {_fmt(lin)}, homogeneity {_fmt(hom)}; {dt:.2f}s"


def _curl_curl_fd(field, x, h=1e-3):
    e = np.eye(3)
    hess = np.zeros((3, 3, 3), complex)
    for i in range(3):
        for j in range(3):
            hess[i, j] = (field(x + h * e[i] + h * e[j]) - field(x + h * e[i] - h * e[j])
                          - field(x - h * e[i] + h * e[j]) + field(x - h * e[i] - h * e[j])) / (4 * h * h)
    grad_div = np.array([sum(hess[i, j, j] for j in range(3)) for i in range(3)])
    return grad_div - sum(hess[j, j] for j in range(3))


def criterion_9():
    rng = np.random.default_rng(9)
    omega, mu, sigma = 1.0, 1.2, 0.9 + 0.1j
    k2 = omega**2 * mu * sigma
    fd = recip = 0.0
    for _ in range(20):
        y = rng.normal(size=3)
        u = rng.normal(size=3)
        x = y + rng.uniform(1.0, 2.0) * u / np.linalg.norm(u)
        G = classical_dyadic_green(omega, mu, sigma, x, y)
        recip = max(recip, np.abs(G.T - classical_dyadic_green(omega, mu, sigma, y, x)).max())
        for c in range(3):
            col = lambda p: classical_dyadic_green(omega, mu, sigma, p, y)[:, c]  # noqa: E731
            res = _curl_curl_fd(col, x) - k2 * col(x)
            fd = max(fd, np.linalg.norm(res) / np.linalg.norm(k2 * col(x)))
    return fd < GREEN_FD_TOL and recip < RECIPROCITY_TOL, f"20 pairs: relative residual {_fmt(fd)}, " \
        f"reciprocity {_fmt(recip)}"


def criterion_10():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        runs = []
        for name in ("a.json", "b.json"):
            with contextlib.redirect_stdout(io.StringIO()):
                code = main(["symbols", "--seed", "42", "--order", "5", "--depth", "5", "--out", str(tmp / name)])
            runs.append((code, (tmp / name).read_bytes()))
        same = runs[0] == runs[1] and runs[0][0] == 0
        table, omega, order = read_symbols(tmp / "a.json")
        sym_lossless = symbols_to_text(table, omega, order).encode() == runs[0][1]
        s = random_scenario(42, order=5, depth=5)
        write_scenario(tmp / "s.json", s)
        back = read_scenario(tmp / "s.json")
        scen_lossless = scenario_to_text(back) == (tmp / "s.json").read_text() and all(
            np.array_equal(getattr(back.metric, n).coeffs, getattr(s.metric, n).coeffs) for n in ("g11", "g12", "g22")
        ) and np.array_equal(back.mu.coeffs, s.mu.coeffs) and np.array_equal(back.sigma.coeffs, s.sigma.coeffs)
    return same and sym_lossless and scen_lossless, \
        f"symbols byte-identical {same}, symbol file lossless {sym_lossless}, scenario file lossless {scen_lossless}"


CRITERIA = {
    1: ("geometry identities", criterion_1),
    2: ("factorization identity", criterion_2),
    3: ("parametrix composition", criterion_3),
    4: ("principal symbol closed form", criterion_4),
    5: ("trace inversion constants", criterion_5),
    6: ("metric round trip", criterion_6),
    7: ("parameter round trip", criterion_7),
    8: ("Fourier multiplier", criterion_8),
    9: ("Euclidean Green's function", criterion_9),
    10: ("determinism and serialization", criterion_10),
}


def evaluate(n):
    title, fn = CRITERIA[n]
    try:
        ok, detail = fn()
    except Exception as exc:  # a crash is a failed criterion, reported like one
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    return ok, f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d} {title}: {detail}"


@pytest.mark.parametrize("n", sorted(CRITERIA))
def test_criterion(n, capsys):
    ok, line = evaluate(n)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    failed = 0
    for n in sorted(CRITERIA):
        ok, line = evaluate(n)
        print(line, flush=True)
        failed += not ok
    sys.exit(1 if failed else 0)
