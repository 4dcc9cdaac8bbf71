"""Command-line front end plus the scenario and symbol-table file formats.

Both file formats are JSON laid out one coefficient per line so that two
files can be compared with an ordinary text diff.  Floats are written with
``repr`` precision, which makes write -> read -> write byte-identical.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import jets
from .checks import identity_report
from .dtn import BoundaryField, apply_dtn, dtn_symbols
from .errors import (
    DepthUnavailable,
    EmdtnError,
    InputError,
    InsufficientDepth,
    JetOrderExhausted,
    NonPositiveDefinite,
    NonPositiveParameter,
    ScenarioMismatch,
)
from .geometry import BoundaryMetricJet
from .jets import Jet3
from .recon import DEFAULT_TOL, MeasuredSymbols, layer_errors, reconstruct
from .scenario import DEFAULT_DEPTH, DEFAULT_ORDER, Scenario, random_scenario
from .symalg import SymbolContext, SymbolElement, SymbolTable, _n0, _n1

SCENARIO_FORMAT = "emdtn-scenario 1"
SYMBOLS_FORMAT = "emdtn-symbols 1"

DEFAULT_TOLS = {"verify": 1e-9, "reconstruct": DEFAULT_TOL, "roundtrip": 1e-7}

# errors that mean the input itself is unusable
INPUT_ERRORS = (InputError, NonPositiveParameter, NonPositiveDefinite, JetOrderExhausted, DepthUnavailable,
                InsufficientDepth, ScenarioMismatch)


# ---------------------------------------------------------------------------
# compact deterministic JSON


def _dumps(obj, indent: int = 0) -> str:
    """JSON with flat lists on one line and everything else expanded."""
    pad = " " * indent
    inner = " " * (indent + 2)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(k)}: {_dumps(v, indent + 2)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(x, (dict, list, tuple)) for x in obj):
            return json.dumps(list(obj), allow_nan=False)
        items = [f"{inner}{_dumps(x, indent + 2)}" for x in obj]
        return "[\n" + ",\n".join(items) + f"\n{pad}]"
    return json.dumps(obj, allow_nan=False)


def _float(x) -> float:
    out = float(x)
    if not np.isfinite(out):
        raise InputError("non-finite coefficient")
    return out + 0.0  # -0.0 -> 0.0 so files do not depend on the sign of zero


def _jet_terms(coeffs: np.ndarray, order: int) -> list:
    return [
        [i, j, k, _float(c.real), _float(c.imag)]
        for (i, j, k), c in zip(jets.multi_indices(order), np.asarray(coeffs, dtype=complex))
        if c != 0
    ]


def _read_jet(terms, order: int, what: str) -> Jet3:
    if not isinstance(terms, list):
        raise InputError(f"{what}: expected a list of terms")
    out = {}
    for t in terms:
        if not (isinstance(t, list) and len(t) == 5):
            raise InputError(f"{what}: terms are [i, j, k, re, im], got {t!r}")
        key = tuple(t[:3])
        if any(not isinstance(v, int) or v < 0 for v in key):
            raise InputError(f"{what}: bad multi-index {key!r}")
        if sum(key) > order:
            raise InputError(f"{what}: multi-index {key} exceeds order {order}")
        if key in out:
            raise InputError(f"{what}: duplicate multi-index {key}")
        out[key] = complex(_float(t[3]), _float(t[4]))
    return Jet3.from_dict(out, order)


def _load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise InputError(f"{path}: top level must be an object")
    return data


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _require_keys(data: dict, keys, what: str):
    missing = [k for k in keys if k not in data]
    if missing:
        raise InputError(f"{what}: missing {', '.join(missing)}")


def _int(value, what: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise InputError(f"{what} must be an integer")
    return value


# ---------------------------------------------------------------------------
# scenario files


def scenario_to_dict(s: Scenario, extra: dict | None = None) -> dict:
    n = s.order
    out = {
        "format": SCENARIO_FORMAT,
        "omega": _float(s.omega),
        "order": n,
        "depth": s.depth,
        "seed": s.seed,
        "metric": {name: _jet_terms(getattr(s.metric, name).coeffs, n) for name in ("g11", "g12", "g22")},
        "mu": _jet_terms(s.mu.coeffs, n),
        "sigma": _jet_terms(s.sigma.coeffs, n),
    }
    if extra:
        out.update(extra)
    return out


def scenario_to_text(s: Scenario, extra: dict | None = None) -> str:
    return _dumps(scenario_to_dict(s, extra)) + "\n"


def scenario_from_dict(data: dict) -> Scenario:
    """Parse and validate; positivity violations raise NonPositiveParameter / NonPositiveDefinite."""
    if data.get("format") != SCENARIO_FORMAT:
        raise InputError(f"not a scenario file (format {data.get('format')!r})")
    _require_keys(data, ("omega", "order", "depth", "metric", "mu", "sigma"), "scenario")
    order = _int(data["order"], "order")
    depth = _int(data["depth"], "depth")
    if order < 0 or depth < 1:
        raise InputError("order must be >= 0 and depth >= 1")
    seed = data.get("seed")
    if seed is not None:
        seed = _int(seed, "seed")
    metric = data["metric"]
    if not isinstance(metric, dict):
        raise InputError("metric must be an object with g11, g12, g22")
    _require_keys(metric, ("g11", "g12", "g22"), "metric")
    if data["sigma"] is None:
        raise InputError("scenario has no sigma (a partial reconstruction cannot be used as input)")
    g = [_read_jet(metric[k], order, k) for k in ("g11", "g12", "g22")]
    for name, jet in zip(("g11", "g12", "g22"), g):
        if np.any(jet.coeffs.imag != 0):
            raise InputError(f"{name} must be real")
    mu = _read_jet(data["mu"], order, "mu")
    sigma = _read_jet(data["sigma"], order, "sigma")
    try:
        omega = _float(data["omega"])
    except (TypeError, ValueError) as exc:
        raise InputError("omega must be a number") from exc
    return Scenario(omega, BoundaryMetricJet(*g), mu, sigma, order, depth, seed)


def read_scenario(path) -> Scenario:
    return scenario_from_dict(_load_json(path))


def write_scenario(path, s: Scenario, extra: dict | None = None) -> None:
    _write_text(path, scenario_to_text(s, extra))


# ---------------------------------------------------------------------------
# symbol-table files


def _element_terms(e: SymbolElement) -> list:
    out = []
    idx = jets.multi_indices(e.order)
    for w_power, p in ((0, e.p0), (1, e.p1)):
        top = p.shape[2] - 1
        for r, c, a, z in zip(*np.nonzero(p)):
            v = p[r, c, a, z]
            i, j, l = idx[z]
            out.append([int(r), int(c), top - int(a), int(a), w_power, e.k, i, j, l, _float(v.real), _float(v.imag)])
    out.sort(key=lambda t: (t[0], t[1], t[4], t[3], jets.index_map(e.order)[tuple(t[6:9])]))
    return out


def symbols_to_dict(table: SymbolTable, omega: float, order: int) -> dict:
    degrees = table.degrees()
    ctx = table[degrees[0]].ctx
    for d in degrees:
        if table[d].ctx is not ctx and not np.array_equal(table[d].ctx.q, ctx.q):
            raise InputError("all degrees of a table must share one symbol context")
    q = ctx.q
    return {
        "format": SYMBOLS_FORMAT,
        "operator": table.name,
        "omega": _float(omega),
        "order": order,
        "degrees": degrees,
        "context": {
            "order": ctx.order,
            "boundary": bool(ctx.is_boundary),
            "g11u": _jet_terms(q[0], ctx.order),
            "g12u": _jet_terms(0.5 * q[1], ctx.order),
            "g22u": _jet_terms(q[2], ctx.order),
        },
        "entries": [
            {
                "degree": d,
                "k": table[d].k,
                "order": table[d].order,
                "shape": list(table[d].shape),
                "terms": _element_terms(table[d]),
            }
            for d in degrees
        ],
    }


def symbols_to_text(table: SymbolTable, omega: float, order: int) -> str:
    return _dumps(symbols_to_dict(table, omega, order)) + "\n"


def symbols_from_dict(data: dict) -> tuple[SymbolTable, float, int]:
    if data.get("format") != SYMBOLS_FORMAT:
        raise InputError(f"not a symbol-table file (format {data.get('format')!r})")
    _require_keys(data, ("operator", "omega", "order", "degrees", "context", "entries"), "symbol file")
    c = data["context"]
    _require_keys(c, ("order", "boundary", "g11u", "g12u", "g22u"), "symbol context")
    co = _int(c["order"], "context order")
    u = [_read_jet(c[k], co, k).coeffs for k in ("g11u", "g12u", "g22u")]
    ctx = SymbolContext(u[0], u[1], u[2], co)
    if c["boundary"]:
        ctx.is_boundary = True
    entries = {}
    for item in data["entries"]:
        _require_keys(item, ("degree", "k", "order", "shape", "terms"), "symbol entry")
        d, k, order = (_int(item[key], key) for key in ("degree", "k", "order"))
        r, cc = (_int(x, "shape") for x in item["shape"])
        if d in entries:
            raise InputError(f"duplicate degree {d}")
        n0, n1 = _n0(d, k), _n1(d, k)
        pos = jets.index_map(order)
        p = [np.zeros((r, cc, n0, jets.n_coeffs(order)), complex), np.zeros((r, cc, n1, jets.n_coeffs(order)), complex)]
        for t in item["terms"]:
            if not (isinstance(t, list) and len(t) == 11):
                raise InputError(f"degree {d}: terms are [r, c, d1, d2, e, k, i, j, l, re, im], got {t!r}")
            ri, ci, d1, d2, e, tk, i, j, l = (_int(v, "term index") for v in t[:9])
            if tk != k or e not in (0, 1) or not (0 <= ri < r and 0 <= ci < cc):
                raise InputError(f"degree {d}: inconsistent term {t!r}")
            n = (n0, n1)[e]
            if d1 < 0 or d2 < 0 or d1 + d2 != n - 1 or (i, j, l) not in pos:
                raise InputError(f"degree {d}: term {t!r} out of range")
            p[e][ri, ci, d2, pos[(i, j, l)]] = complex(_float(t[9]), _float(t[10]))
        entries[d] = SymbolElement(ctx, d, k, p[0], p[1], order)
    declared = [_int(d, "degree") for d in data["degrees"]]
    if sorted(declared, reverse=True) != sorted(entries, reverse=True):
        raise InputError("declared degrees do not match the entries")
    return SymbolTable(str(data["operator"]), entries), _float(data["omega"]), _int(data["order"], "order")


def read_symbols(path) -> tuple[SymbolTable, float, int]:
    return symbols_from_dict(_load_json(path))


def write_symbols(path, table: SymbolTable, omega: float, order: int) -> None:
    _write_text(path, symbols_to_text(table, omega, order))


# ---------------------------------------------------------------------------
# reports


@dataclass
class Report:
    """Ordered key=value lines; ``failures`` counts lines marked as failing."""

    lines: list = field(default_factory=list)
    failures: int = 0

    def add(self, key: str, value, failed: bool = False):
        if isinstance(value, float):
            value = f"{value:.3e}"
        self.lines.append((key, value))
        if failed:
            self.failures += 1

    def check(self, key: str, value: float, tol: float):
        ok = bool(value <= tol)
        self.add(f"{key}.max_residual", value)
        self.add(f"{key}.status", "pass" if ok else "fail", failed=not ok)

    def text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.lines + [("failures", self.failures)])

    def as_dict(self) -> dict:
        return {"lines": [[k, v] for k, v in self.lines], "failures": self.failures}


def _tolerance(args, command: str) -> float:
    if args.tol is not None:
        return args.tol
    env = os.environ.get("EMDTN_TOL")
    if env:
        try:
            return float(env)
        except ValueError as exc:
            raise InputError(f"EMDTN_TOL={env!r} is not a number") from exc
    return DEFAULT_TOLS[command]


def _scenario_arg(args) -> Scenario:
    """Scenario from --scenario, else a random one from --seed, else the flat one."""
    if args.scenario:
        s = read_scenario(args.scenario)
        changes = {}
        if getattr(args, "order", None) is not None:
            if args.order > s.order:
                raise InputError(f"--order {args.order} exceeds the file's jet order {s.order}")
            changes["order"] = args.order
        if getattr(args, "depth", None) is not None:
            changes["depth"] = args.depth
        return s.with_(**changes) if changes else s
    order = DEFAULT_ORDER if getattr(args, "order", None) is None else args.order
    depth = DEFAULT_DEPTH if getattr(args, "depth", None) is None else args.depth
    if getattr(args, "seed", None) is not None:
        return random_scenario(args.seed, order=order, depth=depth)
    return Scenario.flat(order=order, depth=depth)


# ---------------------------------------------------------------------------
# commands


def cmd_verify(args) -> Report:
    tol = _tolerance(args, "verify")
    s = _scenario_arg(args)
    rep = Report()
    rep.add("order", s.order)
    rep.add("depth", s.depth)
    rep.add("tol", tol)
    for name, value in identity_report(s).items():
        rep.check(name, value, tol)
    return rep


def _frame_table(symbol, frame: str) -> SymbolTable:
    if frame == "rotated":
        return symbol.psi
    if frame == "tangential":
        return symbol.L
    raise InputError(f"unknown frame {frame!r}")


def cmd_symbols(args) -> Report:
    s = _scenario_arg(args)
    table = _frame_table(dtn_symbols(s), args.frame)
    text = symbols_to_text(table, s.omega, s.order)
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    rep = Report()
    rep.add("operator", table.name)
    rep.add("degrees", ",".join(str(d) for d in table.degrees()))
    rep.add("terms", sum(len(_element_terms(table[d])) for d in table.degrees()))
    return rep


def cmd_apply(args) -> Report:
    s = _scenario_arg(args)
    if not args.field:
        raise InputError("apply needs --field PATH")
    f = BoundaryField.load(args.field)
    frame = args.frame or f.frame
    table = _frame_table(dtn_symbols(s), frame)
    out = apply_dtn(table, BoundaryField(f.samples, f.base_point, frame), s.depth, zero_mode=args.zero_mode)
    if args.out:
        out.save(args.out)
    rep = Report()
    rep.add("frame", frame)
    rep.add("shape", "x".join(str(n) for n in f.shape))
    rep.add("input_norm", float(np.linalg.norm(f.samples)))
    rep.add("output_norm", float(np.linalg.norm(out.samples)))
    return rep


def _truncate_normal(coeffs: np.ndarray, order: int, top: int) -> np.ndarray:
    """Drop terms with more than ``top`` normal derivatives."""
    keep = np.array([k <= top for (_, _, k) in jets.multi_indices(order)])
    return np.where(keep, coeffs, 0)


def recovered_file_dict(state, measured: MeasuredSymbols, status: dict) -> dict:
    """Scenario-format dict of the recovered jets; unrecovered normal orders are left out."""
    n = state.order
    top = state.completed
    layers = state.layers()
    metric = state.metric()
    mu, sigma = state.mu(), None
    if state.mode == "metric":
        sigma = state.sigma()
        mu_top = sigma_top = n
    else:
        mu_top = len(layers["mu"]) - 1
        sigma_top = len(layers["sigma"]) - 1
        if sigma_top >= 0:
            sigma = state.sigma()
    metric_top = top if state.mode == "metric" else n
    out = {
        "format": SCENARIO_FORMAT,
        "omega": _float(state.omega),
        "order": n,
        "depth": measured.depth,
        "seed": None,
        "metric": {
            name: _jet_terms(_truncate_normal(getattr(metric, name).coeffs, n, metric_top), n)
            for name in ("g11", "g12", "g22")
        },
        "mu": _jet_terms(_truncate_normal(mu.coeffs, n, mu_top), n),
        "sigma": None if sigma is None else _jet_terms(_truncate_normal(sigma.coeffs, n, sigma_top), n),
        "recovered": status,
    }
    return out


def cmd_reconstruct(args) -> Report:
    tol = _tolerance(args, "reconstruct")
    if not args.symbols:
        raise InputError("reconstruct needs --symbols PATH")
    if not args.scenario:
        raise InputError("reconstruct needs --scenario PATH with the known jets")
    table, omega, order = read_symbols(args.symbols)
    known = read_scenario(args.scenario)
    if known.omega != omega:
        raise ScenarioMismatch(f"symbol file omega {omega!r} differs from the known data's {known.omega!r}")
    if known.order < order:
        raise ScenarioMismatch(f"known data has jet order {known.order}, symbols need {order}")
    known = known.with_(order=order)
    measured = MeasuredSymbols.from_table(table, omega, order)
    kwargs = {"metric": {"mu": known.mu, "sigma": known.sigma},
              "parameter": {"metric": known.metric}}[args.mode]
    if args.mode == "parameter" and args.sigma_boundary:
        kwargs["sigma_boundary"] = known.sigma.restrict_boundary()
    max_order = measured.max_order if args.max_order is None else min(args.max_order, measured.max_order)
    failure = None
    try:
        state = reconstruct(measured, args.mode, tol=tol, jobs=args.jobs, max_order=max_order, **kwargs)
    except EmdtnError as exc:
        state = getattr(exc, "state", None)
        if state is None:
            raise
        failure = f"{type(exc).__name__}: {exc}"

    rep = Report()
    rep.add("mode", args.mode)
    rep.add("depth", measured.depth)
    rep.add("tol", tol)
    layers = state.layers()
    counts = {name: len(v) for name, v in layers.items()}
    for m in range(order + 1):
        if m <= state.completed:
            missing = [name for name, c in counts.items() if c <= m]
            status = "recovered" if not missing else "partial (" + ",".join(missing) + " pending)"
            rep.add(f"order.{m}.status", status)
            rep.add(f"order.{m}.forward_residual", float(state.residuals.get(m, 0.0)))
        elif failure is not None and m == state.completed + 1:
            rep.add(f"order.{m}.status", "failed", failed=True)
        else:
            rep.add(f"order.{m}.status", "unavailable")
    if args.mode == "parameter" and state.sigma_scale is None:
        rep.add("sigma_scale", "unidentified")
    if failure is not None:
        rep.add("failure", failure)
    if args.truth:
        truth = read_scenario(args.truth).with_(order=order)
        for m, err in sorted(layer_errors(state, truth).items()):
            rep.add(f"order.{m}.max_rel_err", err)
    status = {
        "mode": args.mode,
        "completed_order": state.completed,
        "status": "complete" if failure is None else "partial",
        "failure": failure,
        "layers": counts,
    }
    if args.out:
        _write_text(args.out, _dumps(recovered_file_dict(state, measured, status)) + "\n")
    return rep


def cmd_roundtrip(args) -> Report:
    tol = _tolerance(args, "roundtrip")
    seed = 0 if args.seed is None else args.seed
    order = DEFAULT_ORDER if args.order is None else args.order
    depth = DEFAULT_DEPTH if args.depth is None else args.depth
    truth = random_scenario(seed, order=order, depth=depth)
    measured = MeasuredSymbols.from_scenario(truth)
    rep = Report()
    rep.add("seed", seed)
    rep.add("order", order)
    rep.add("depth", depth)
    rep.add("tol", tol)
    for mode in ("metric", "parameter"):
        kwargs = {"metric": {"mu": truth.mu, "sigma": truth.sigma},
                  "parameter": {"metric": truth.metric}}[mode]
        if mode == "parameter" and args.sigma_boundary:
            kwargs["sigma_boundary"] = truth.sigma.restrict_boundary()
        t0 = time.perf_counter()
        try:
            state = reconstruct(measured, mode, jobs=args.jobs, **kwargs)
        except EmdtnError as exc:
            if isinstance(exc, INPUT_ERRORS) or getattr(exc, "state", None) is None:
                raise
            state = exc.state
            rep.add(f"{mode}.failure", f"{type(exc).__name__}: {exc}", failed=True)
        if args.timing:
            rep.add(f"{mode}.seconds", round(time.perf_counter() - t0, 1))
        for m, err in sorted(layer_errors(state, truth).items()):
            rep.add(f"{mode}.order.{m}.max_rel_err", err)
            rep.add(f"{mode}.order.{m}.status", "pass" if err <= tol else "fail", failed=err > tol)
        if mode == "parameter" and state.sigma_scale is None:
            rep.add("parameter.sigma", "unavailable (boundary scale not identified by the symbols)")
    return rep


COMMANDS = {
    "verify": cmd_verify,
    "symbols": cmd_symbols,
    "apply": cmd_apply,
    "reconstruct": cmd_reconstruct,
    "roundtrip": cmd_roundtrip,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", metavar="PATH", help="scenario file")
    common.add_argument("--seed", type=int, metavar="K", help="random scenario seed")
    common.add_argument("--order", type=int, metavar="N", help="jet truncation order")
    common.add_argument("--depth", type=int, metavar="M", help="number of homogeneous symbol terms")
    common.add_argument("--out", metavar="PATH", help="output file")
    common.add_argument("--jobs", type=int, default=1, metavar="J", help="worker processes")
    common.add_argument("--tol", type=float, metavar="X", help="tolerance (overrides EMDTN_TOL)")
    common.add_argument("--json", metavar="PATH", help="also write the report as JSON")

    p = argparse.ArgumentParser(prog="emdtn", description="Electromagnetic DtN symbols and boundary reconstruction.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("verify", parents=[common], help="run the identity suites")
    sp = sub.add_parser("symbols", parents=[common], help="write the symbol table")
    sp.add_argument("--frame", choices=("rotated", "tangential"), default="rotated")
    ap = sub.add_parser("apply", parents=[common], help="apply the DtN multiplier to a boundary field")
    ap.add_argument("--field", metavar="PATH")
    ap.add_argument("--frame", choices=("rotated", "tangential"))
    ap.add_argument("--zero-mode", choices=("zero", "pass"), default="zero")
    rp = sub.add_parser("reconstruct", parents=[common], help="layer-strip a symbol file")
    rp.add_argument("--symbols", metavar="PATH")
    rp.add_argument("--mode", choices=("metric", "parameter"), default="metric")
    rp.add_argument("--sigma-boundary", action="store_true", help="take sigma on the boundary from --scenario")
    rp.add_argument("--max-order", type=int)
    rp.add_argument("--truth", metavar="PATH", help="scenario to compare against")
    tp = sub.add_parser("roundtrip", parents=[common], help="forward then inverse on a random scenario")
    tp.add_argument("--sigma-boundary", action="store_true", help="give parameter mode sigma on the boundary")
    tp.add_argument("--timing", action="store_true", help="report wall time (breaks byte-identical output)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        rep = COMMANDS[args.command](args)
    except INPUT_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except EmdtnError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    out = sys.stderr if args.command == "symbols" and not args.out else sys.stdout
    out.write(rep.text())
    if args.json:
        _write_text(args.json, json.dumps(rep.as_dict(), indent=2, sort_keys=True) + "\n")
    return 0 if rep.failures == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
