"""Symbol of the electromagnetic Dirichlet-to-Neumann map and its Fourier application.

The tangential magnetic trace is (1/(i omega mu)) L E' with E' = (E^1, E^2) and

    L^{jk} = Phi^{jk} - Phi^{j3} Q T_k + sum_a g^{aj} d_a (Q T_k) + sum_a g^{aj} d3 g_{ak},
    T_k    = sigma (d_k + Phi^{3k} + sum_c Gamma^c_{kc}) + d_k sigma.

In the rotated frame p(nu x E) the map is Lambda = (1/(i omega mu sqrt|g|)) L G
with G = [[-g12, -g22], [g11, g12]], and psi is Lambda traced on x3 = 0.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import jets
from .errors import DepthUnavailable, InputError, InsufficientDepth, JetOrderExhausted
from .factor import OperatorCoefficients, assemble_b_c, phi_recursion, q_recursion
from .scenario import Scenario
from .symalg import SymbolElement, SymbolTable, block, compose_slot


@dataclass
class DtnSymbol:
    """L, Lambda and psi tables (2x2 entries per degree) of one scenario."""

    L: SymbolTable
    Lambda: SymbolTable
    psi: SymbolTable
    coeffs: OperatorCoefficients | None = field(default=None, repr=False)
    phi: SymbolTable | None = field(default=None, repr=False)
    q: SymbolTable | None = field(default=None, repr=False)

    @property
    def top_degree(self) -> int:
        return 1

    @property
    def lowest_degree(self) -> int:
        return self.psi.lowest_degree

    def entry(self, name: str, j: int, k: int) -> SymbolTable:
        """Scalar table of one matrix entry (1-based indices)."""
        table = {"L": self.L, "Lambda": self.Lambda, "psi": self.psi}[name]
        return table.map(lambda e: e[j - 1, k - 1], f"{name}{j}{k}")


def _t_tables(coeffs: OperatorCoefficients, phi: SymbolTable) -> list[dict]:
    """Symbols of T_k = sigma (d_k + Phi^{3k} + sum_c Gamma^c_{kc}) + d_k sigma for k = 1, 2."""
    sc = coeffs.scenario
    n = sc.order
    ctx = coeffs.ctx
    sigma = sc.sigma.coeffs
    sig = SymbolElement.from_jets(ctx, sigma, n)
    gsum = coeffs.geometry.log_sqrt_det_grad
    out = []
    for k in range(2):
        t = {d: sig @ e[2, k] for d, e in phi.entries.items()}
        t[1] = t[1] + sig @ (SymbolElement.xi(ctx, k + 1) * 1j)
        zeroth = jets.mul(jets.truncate(sigma, n - 1), gsum[k], n - 1) + jets.diff(sigma, k, n)
        t[0] = t[0] + SymbolElement.from_jets(ctx, zeroth, n - 1)
        out.append(t)
    return out


def assemble_L(phi: SymbolTable, q: SymbolTable, coeffs: OperatorCoefficients, lowest_degree: int) -> SymbolTable:
    """Homogeneous terms L_1, ..., L_lowest as 2x2 symbols."""
    if phi.lowest_degree > lowest_degree or q.lowest_degree > lowest_degree - 2:
        raise InsufficientDepth(
            f"L down to degree {lowest_degree} needs phi to {lowest_degree} and q to {lowest_degree - 2}"
        )
    ctx = coeffs.ctx
    n = coeffs.scenario.order
    geo = coeffs.geometry
    up = geo.upper
    d3g = jets.diff(geo.lower, 2, n)
    g_up = [[SymbolElement.from_jets(ctx, up[a, j], n) for j in range(2)] for a in range(2)]
    xi = [SymbolElement.xi(ctx, a + 1) * 1j for a in range(2)]
    t = _t_tables(coeffs, phi)
    qt = []
    for k in range(2):
        qt.append({d: compose_slot(q.entries, t[k], d) for d in range(0, lowest_degree - 2, -1)})
    out = {}
    for d in range(1, lowest_degree - 1, -1):
        rows = []
        for j in range(2):
            phi_j3 = {e: x[j, 2] for e, x in phi.entries.items()}
            row = []
            for k in range(2):
                term = phi.entries[d][j, k] - compose_slot(phi_j3, qt[k], d)
                for a in range(2):
                    inner = None
                    if d in qt[k]:
                        inner = qt[k][d].dx(a + 1)
                    lifted = xi[a] @ qt[k][d - 1]
                    inner = lifted if inner is None else inner + lifted
                    term = term + g_up[a][j] @ inner
                if d == 0:
                    metric = sum(jets.mul(jets.truncate(up[a, j], n - 1), d3g[a, k], n - 1) for a in range(2))
                    term = term + SymbolElement.from_jets(ctx, metric, n - 1)
                row.append(term)
            rows.append(row)
        out[d] = block(rows).reduce()
    return SymbolTable("L", out)


def mixing_matrix(coeffs: OperatorCoefficients) -> np.ndarray:
    """G = [[-g12, -g22], [g11, g12]] as a (2, 2, J) jet array."""
    g = coeffs.geometry.lower
    return np.array([[-g[0, 1], -g[1, 1]], [g[0, 0], g[0, 1]]])


def _prefactor(coeffs: OperatorCoefficients) -> np.ndarray:
    """1 / (i omega mu sqrt|g|)."""
    sc = coeffs.scenario
    n = sc.order
    denom = 1j * sc.omega * jets.mul(sc.mu.coeffs, coeffs.geometry.sqrt_det, n)
    return jets.inv(denom, n)


def assemble_Lambda_psi(L: SymbolTable, coeffs: OperatorCoefficients) -> DtnSymbol:
    ctx = coeffs.ctx
    n = coeffs.scenario.order
    pre = SymbolElement.from_jets(ctx, _prefactor(coeffs), n)
    G = SymbolElement.from_jets(ctx, mixing_matrix(coeffs), n)
    lam = {d: (pre @ (e @ G)).reduce() for d, e in L.entries.items()}
    psi = {d: e.restrict_boundary() for d, e in lam.items()}
    return DtnSymbol(L, SymbolTable("Lambda", lam), SymbolTable("psi", psi), coeffs)


def L_from_Lambda(Lambda: SymbolTable, coeffs: OperatorCoefficients) -> SymbolTable:
    """Undo the frame change: L = i omega mu sqrt|g| Lambda G^{-1}."""
    ctx = coeffs.ctx
    sc = coeffs.scenario
    n = sc.order
    geo = coeffs.geometry
    g = geo.lower
    inv_det = jets.inv(geo.det, n)
    g_inv = np.array([[g[0, 1], g[1, 1]], [-g[0, 0], -g[0, 1]]])
    g_inv = jets.mul(g_inv, inv_det, n)
    scale = 1j * sc.omega * jets.mul(sc.mu.coeffs, geo.sqrt_det, n)
    back = SymbolElement.from_jets(ctx, scale, n)
    G_inv = SymbolElement.from_jets(ctx, g_inv, n)
    return Lambda.map(lambda e: (back @ (e @ G_inv)).reduce(), "L")


def dtn_symbols(scenario: Scenario, lowest_degree: int | None = None) -> DtnSymbol:
    """Full forward chain: B, C -> phi -> q -> L -> Lambda, psi."""
    lowest = scenario.lowest_degree if lowest_degree is None else lowest_degree
    coeffs = assemble_b_c(scenario)
    # the normal operator needs phi_0 even when only the principal term is wanted
    phi_lowest = min(lowest, 0)
    try:
        phi = phi_recursion(coeffs, phi_lowest)
    except JetOrderExhausted as exc:
        raise JetOrderExhausted(f"phi recursion down to degree {phi_lowest} at jet order {scenario.order}: {exc}") from exc
    try:
        q = q_recursion(phi, coeffs, lowest - 2)
    except JetOrderExhausted as exc:
        raise JetOrderExhausted(f"q recursion down to degree {lowest - 2} at jet order {scenario.order}: {exc}") from exc
    try:
        L = assemble_L(phi, q, coeffs, lowest)
    except JetOrderExhausted as exc:
        raise JetOrderExhausted(f"L assembly down to degree {lowest} at jet order {scenario.order}: {exc}") from exc
    out = assemble_Lambda_psi(L, coeffs)
    out.phi, out.q = phi, q
    return out


def principal_closed_form(xi, omega: float, mu0: float, g: np.ndarray) -> np.ndarray:
    """-xi1 xi2 / (i omega mu sqrt(|g| Q)) at the base point; g is the 2x2 lower block."""
    xi = np.asarray(xi, dtype=float)
    g = np.asarray(g, dtype=float)
    det = g[0, 0] * g[1, 1] - g[0, 1] ** 2
    gi = np.linalg.inv(g)
    q = np.einsum("...a,ab,...b->...", xi, gi, xi)
    return -xi[..., 0] * xi[..., 1] / (1j * omega * mu0 * np.sqrt(det * q))


# ---------------------------------------------------------------------------
# boundary fields and the Fourier multiplier

_MAGIC = "EMDTN-FIELD 1"


@dataclass
class BoundaryField:
    """Two complex component grids on the periodic patch [0, 2 pi)^2."""

    samples: np.ndarray  # (2, n1, n2) complex
    base_point: tuple[float, float] = (0.0, 0.0)
    frame: str = "rotated"

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=complex)
        if s.ndim != 3 or s.shape[0] != 2:
            raise InputError(f"boundary field must have shape (2, n1, n2), got {s.shape}")
        self.samples = s

    @property
    def shape(self) -> tuple[int, int]:
        return self.samples.shape[1:]

    @staticmethod
    def grid(n1: int, n2: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        n2 = n1 if n2 is None else n2
        x1 = 2 * np.pi * np.arange(n1) / n1
        x2 = 2 * np.pi * np.arange(n2) / n2
        return np.meshgrid(x1, x2, indexing="ij")

    def to_bytes(self) -> bytes:
        n1, n2 = self.shape
        header = (
            f"{_MAGIC}\n"
            f"shape 2 {n1} {n2}\n"
            "dtype float64-pairs little-endian\n"
            f"base {self.base_point[0]!r} {self.base_point[1]!r}\n"
            f"frame {self.frame}\n"
            "end\n"
        )
        return header.encode("ascii") + self.samples.astype("<c16").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "BoundaryField":
        buf = io.BytesIO(data)
        first = buf.readline().decode("ascii").strip()
        if first != _MAGIC:
            raise InputError("not a boundary field file")
        meta = {}
        while True:
            line = buf.readline().decode("ascii").strip()
            if not line:
                raise InputError("truncated boundary field header")
            if line == "end":
                break
            key, _, value = line.partition(" ")
            meta[key] = value
        try:
            _, n1, n2 = (int(v) for v in meta["shape"].split())
            base = tuple(float(v) for v in meta.get("base", "0 0").split())
        except (KeyError, ValueError) as exc:
            raise InputError(f"bad boundary field header: {exc}") from exc
        raw = buf.read()
        if len(raw) != 2 * n1 * n2 * 16:
            raise InputError("boundary field payload size does not match its header")
        samples = np.frombuffer(raw, dtype="<c16").reshape(2, n1, n2).astype(complex)
        return cls(samples, base, meta.get("frame", "rotated"))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "BoundaryField":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def multiplier(table: SymbolTable, xi: np.ndarray, depth: int) -> np.ndarray:
    """Sum of the top ``depth`` homogeneous terms at covectors xi (..., 2)."""
    lowest = 2 - depth
    if table.lowest_degree > lowest:
        raise DepthUnavailable(f"depth {depth} needs degree {lowest}, table stops at {table.lowest_degree}")
    return table.evaluate(xi, lowest=lowest)


def apply_dtn(symbol: DtnSymbol | SymbolTable, f: BoundaryField, depth: int, zero_mode: str = "zero") -> BoundaryField:
    """Frozen-coefficient Fourier multiplier on the periodic patch.

    Each nonzero mode is multiplied by sum_d psi_d(x0, xi).  The symbols are
    undefined at xi = 0; ``zero_mode`` selects "zero" (the mean is sent to 0)
    or "pass" (the mean is left unchanged).
    """
    table = symbol.psi if isinstance(symbol, DtnSymbol) else symbol
    n1, n2 = f.shape
    fhat = np.fft.fft2(f.samples, axes=(1, 2))
    k1 = np.fft.fftfreq(n1, 1.0 / n1)
    k2 = np.fft.fftfreq(n2, 1.0 / n2)
    xi = np.stack(np.meshgrid(k1, k2, indexing="ij"), axis=-1).reshape(-1, 2)
    nonzero = np.any(xi != 0, axis=1)
    flat = fhat.reshape(2, -1)
    out = np.zeros_like(flat)
    m = multiplier(table, xi[nonzero], depth)  # (M, 2, 2)
    out[:, nonzero] = np.einsum("mjk,km->jm", m, flat[:, nonzero])
    if zero_mode == "pass":
        out[:, ~nonzero] = flat[:, ~nonzero]
    elif zero_mode != "zero":
        raise ValueError("zero_mode must be 'zero' or 'pass'")
    result = np.fft.ifft2(out.reshape(2, n1, n2), axes=(1, 2))
    return BoundaryField(result, f.base_point, f.frame)
