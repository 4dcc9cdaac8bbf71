"""Layer-stripping reconstruction from DtN symbol samples.

Two modes share the machinery.  Metric mode knows mu and sigma and recovers
the normal derivatives of g^{ab} on the boundary; parameter mode knows the
metric and recovers those of mu and sigma.  Order m is read off the degree
1 - m slot: the forward engine is run on the current state with the order-m
unknowns zeroed, and the difference to the measured slot is linear in them.

All recovered quantities are tangential jets (boundary jets in the dense
storage of :mod:`emdtn.jets`).  A layer of order m carries jet order N - m.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import jets
from .dtn import dtn_symbols
from .errors import (
    DegenerateDesignSet,
    DepthUnavailable,
    DesignSingular,
    ForwardMismatch,
    InconsistentSamples,
    InputError,
    NearDegenerateCovector,
    NonPositiveParameter,
)
from .geometry import BoundaryMetricJet, Geometry
from .jets import Jet3
from .scenario import Scenario
from .symalg import SymbolTable

DEFAULT_TOL = 1e-6
PRINCIPAL_TOL = 1e-8
NEAR_DEGENERATE = 1e-6

# Quadratic forms are identified from these covectors.
FORM_DESIGN = ((1.0, 0.0), (0.0, 1.0), (1.0, 1.0))
# psi_1^{11} carries the factor xi1 xi2, so the principal step needs covectors
# off both axes.
PRINCIPAL_DESIGN = ((1.0, 1.0), (1.0, -1.0), (1.0, 2.0), (2.0, 1.0))
DEFAULT_DESIGN = tuple(dict.fromkeys(FORM_DESIGN + PRINCIPAL_DESIGN))

# K = 7 H + b h g^{-1};  h = c * sum g_ab K^ab
TRACE_CONSTANTS = {1: (7, -11, -15), 2: (7, 1, 9)}


def trace_constants(m: int) -> tuple[int, int, int]:
    """(a, b, d) with K = a H + b h g^{-1} and h = (sum g K) / d."""
    if m < 1:
        raise ValueError("trace kernels start at order 1")
    return TRACE_CONSTANTS[min(m, 2)]


def trace_form(H: np.ndarray, g_lower: np.ndarray, g_upper: np.ndarray, m: int, order: int = 0) -> np.ndarray:
    """Kernel form K^{ab} = a H^{ab} + b h g^{ab}, h = sum g_ab H^ab.

    All arguments are (2, 2, J) jets; plain matrices work with J = 1, order 0.
    """
    a, b, _ = trace_constants(m)
    h = jets.contract("ab,ab->", g_lower, H, order)
    return a * H + b * jets.mul(h, g_upper, order)


def invert_trace_form(K: np.ndarray, g_lower: np.ndarray, g_upper: np.ndarray, m: int,
                      order: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Recover (H, h) from the kernel form K."""
    a, b, d = trace_constants(m)
    s = jets.contract("ab,ab->", g_lower, K, order)
    h = s / d
    H = (K - b * jets.mul(h, g_upper, order)) / a
    return H, h


def avoidance_covector(g_upper0: np.ndarray) -> tuple[tuple[float, float], float]:
    """Unit covector maximizing |g^{11} xi1^2 - g^{22} xi2^2| and that maximum.

    On the unit circle the expression is (g11 - g22)/2 + (g11 + g22)/2 cos(2t),
    so its modulus peaks on an axis.
    """
    g11, g22 = float(np.real(g_upper0[0, 0])), float(np.real(g_upper0[1, 1]))
    if g11 >= g22:
        return (1.0, 0.0), g11
    return (0.0, 1.0), g22


def printed_parameter_matrix(g_lower: np.ndarray, mu: float, sigma: complex, xi) -> np.ndarray:
    """Coefficients of (d3 mu, d3 sigma) in (l_0^{11}, l_0^{22}) at the base point."""
    g = np.asarray(g_lower, dtype=float)
    gi = np.linalg.inv(g)
    det = np.linalg.det(g)
    xi = np.asarray(xi, dtype=float)
    q = xi @ gi @ xi
    rows = []
    for j in range(2):
        o = 1 - j
        sign = 1.0 if j == 0 else -1.0
        mixed = (g[o, 1] * xi[0] * xi[j] - g[o, 0] * xi[1] * xi[j]) * sign
        rows.append([-1.0 / (2 * mu) - mixed / (2 * mu * det * q), (gi[:, j] @ xi) * xi[j] / (sigma * q)])
    return np.array(rows, dtype=complex)


def _solve_jets(K: np.ndarray, D: np.ndarray, order: int, singular=DesignSingular) -> np.ndarray:
    """Solve K u = D over jets in the least-squares sense of the constant terms.

    K is (E, U, J), D is (E, J).  Rows are weighted by the conjugate constant
    part of K, which turns the system square; exact data solve exactly.
    """
    K = jets.truncate(K, order)
    D = jets.truncate(D, order)
    W = K[..., 0].conj().T
    A = np.einsum("ue,eiz->uiz", W, K)
    r = np.einsum("ue,ez->uz", W, D)
    A0 = A[..., 0]
    if np.linalg.cond(A0) > 1e12:
        raise singular(f"linear system is singular (condition {np.linalg.cond(A0):.3g})")
    A0inv = np.linalg.inv(A0)
    rest = A.copy()
    rest[..., 0] = 0.0
    u = np.einsum("ui,iz->uz", A0inv, r)
    for _ in range(order):
        u = np.einsum("ui,iz->uz", A0inv, r - jets.contract("ui,i->u", rest, u, order))
    return u


def _real_part(x: np.ndarray, what: str) -> np.ndarray:
    """Real part of a quantity known to be real; refuse if the data say otherwise."""
    imag = float(np.abs(x.imag).max(initial=0.0))
    if imag > PRINCIPAL_TOL * max(1.0, float(np.abs(x).max(initial=0.0))):
        raise InconsistentSamples(f"{what} came out complex (imaginary part {imag:.3g})")
    return x.real.astype(complex)


def _covector_key(xi) -> tuple[float, float]:
    return (float(xi[0]), float(xi[1]))


@dataclass
class MeasuredSymbols:
    """psi_d(x', xi) as tangential jets at design covectors, per degree d.

    When the full table is attached, covectors outside the stored design are
    evaluated on demand.
    """

    omega: float
    order: int
    lowest_degree: int
    samples: dict = field(default_factory=dict)
    table: SymbolTable | None = field(default=None, repr=False)

    @classmethod
    def from_table(cls, psi: SymbolTable, omega: float, order: int, design=DEFAULT_DESIGN) -> "MeasuredSymbols":
        out = cls(omega, order, psi.lowest_degree, table=psi)
        for d in psi.degrees():
            for xi in design:
                out.sample(d, xi)
        return out

    @classmethod
    def from_scenario(cls, scenario: Scenario, design=DEFAULT_DESIGN) -> "MeasuredSymbols":
        symbol = dtn_symbols(scenario)
        return cls.from_table(symbol.psi, scenario.omega, scenario.order, design)

    @property
    def depth(self) -> int:
        return 2 - self.lowest_degree

    @property
    def max_order(self) -> int:
        """Highest normal-derivative order the samples can resolve."""
        return min(1 - self.lowest_degree, self.order)

    def design(self) -> list[tuple[float, float]]:
        return sorted({xi for _, xi in self.samples})

    def sample(self, degree: int, xi) -> np.ndarray:
        key = (degree, _covector_key(xi))
        if key not in self.samples:
            if self.table is None or degree not in self.table:
                raise InputError(f"no sample for degree {degree} at covector {key[1]}")
            self.samples[key] = self.table[degree].evaluate_jet(key[1])
        return self.samples[key]


@dataclass
class ReconstructionState:
    """Recovered layers so far.  ``completed`` is the highest finished order."""

    mode: str
    omega: float
    order: int
    known_mu: Jet3 | None = None
    known_sigma: Jet3 | None = None
    known_metric: BoundaryMetricJet | None = None
    upper_layers: list = field(default_factory=list)
    det_boundary: np.ndarray | None = None
    mu_layers: list = field(default_factory=list)
    log_sigma_layers: list = field(default_factory=list)
    sigma_scale: complex | None = None
    scale_slope: dict | None = None
    completed: int = -1
    residuals: dict = field(default_factory=dict)
    log: list = field(default_factory=list)
    solves: list = field(default_factory=list)  # one record per 2x2 parameter solve
    jobs: int = 1
    _forward: tuple | None = field(default=None, repr=False)

    # ------------------------------------------------------------ candidates
    def metric(self, extra_upper: np.ndarray | None = None) -> BoundaryMetricJet:
        if self.mode == "parameter":
            return self.known_metric
        layers = list(self.upper_layers)
        if extra_upper is not None:
            layers.append(extra_upper)
        u = jets.stack_layers(layers, self.order)
        n = self.order
        return BoundaryMetricJet.from_upper(Jet3(u[0], n), Jet3(u[1], n), Jet3(u[2], n))

    def mu(self, extra=None) -> Jet3:
        if self.mode == "metric":
            return self.known_mu
        layers = list(self.mu_layers) + ([] if extra is None else [extra])
        return Jet3(jets.stack_layers(layers, self.order), self.order)

    def sigma(self, extra=None, scale=None, boundary_log=None) -> Jet3:
        if self.mode == "metric":
            return self.known_sigma
        layers = list(self.log_sigma_layers)
        if boundary_log is not None:
            layers = [boundary_log] + layers[1:] if layers else [boundary_log]
        if not layers:
            layers = [jets.constant(0.0, self.order)]
        if extra is not None:
            layers.append(extra)
        s = scale if scale is not None else (self.sigma_scale if self.sigma_scale is not None else 1.0)
        ell = jets.stack_layers(layers, self.order)
        return Jet3(s * jets.exp(ell, self.order), self.order)

    def scenario(self, depth: int, **overrides) -> Scenario:
        metric = overrides.get("metric") or self.metric()
        mu = overrides.get("mu") or self.mu()
        sigma = overrides.get("sigma") or self.sigma()
        return Scenario(self.omega, metric, mu, sigma, self.order, depth)

    def forward(self, depth: int) -> SymbolTable:
        """psi of the current state, reusing the last run when deep enough."""
        if self._forward is not None and self._forward[0] >= depth:
            return self._forward[1]
        psi = dtn_symbols(self.scenario(depth)).psi
        self._forward = (depth, psi)
        return psi

    # ------------------------------------------------------------ boundary data
    def boundary_upper(self) -> np.ndarray:
        """g^{ab} on the boundary as a (2, 2, J) jet."""
        if self.mode == "metric":
            u = self.upper_layers[0]
        else:
            geo = Geometry(self.known_metric)
            up = geo.upper
            u = np.array([jets.normal_layer(up[0, 0], self.order, 0), jets.normal_layer(up[0, 1], self.order, 0),
                          jets.normal_layer(up[1, 1], self.order, 0)])
        return np.array([[u[0], u[1]], [u[1], u[2]]])

    def boundary_lower(self) -> np.ndarray:
        u = self.boundary_upper()
        n = self.order
        det = jets.mul(u[0, 0], u[1, 1], n) - jets.mul(u[0, 1], u[0, 1], n)
        inv_det = jets.inv(det, n)
        cof = np.array([[u[1, 1], -u[0, 1]], [-u[0, 1], u[0, 0]]])
        return jets.mul(cof, inv_det, n)

    def boundary_mu(self) -> np.ndarray:
        if self.mode == "metric":
            return jets.normal_layer(self.known_mu.coeffs, self.order, 0)
        return self.mu_layers[0]

    def psi_to_L(self, dpsi: np.ndarray) -> np.ndarray:
        """L = i omega mu sqrt|g| psi G^{-1} with boundary jets, (2, 2, J) in and out."""
        n = dpsi.shape[-1]
        order = _order_of(n)
        low = jets.truncate(self.boundary_lower(), order)
        det = jets.mul(low[0, 0], low[1, 1], order) - jets.mul(low[0, 1], low[0, 1], order)
        scale = 1j * self.omega * jets.mul(jets.truncate(self.boundary_mu(), order), jets.sqrt(det, order), order)
        inv_det = jets.inv(det, order)
        g_inv = np.array([[low[0, 1], low[1, 1]], [-low[0, 0], -low[0, 1]]])
        g_inv = jets.mul(g_inv, inv_det, order)
        return jets.mul(scale, jets.contract("ij,jk->ik", dpsi, g_inv, order), order)

    # ------------------------------------------------------------ outputs
    def sigma_layers(self) -> list:
        if self.mode == "metric":
            return [jets.normal_layer(self.known_sigma.coeffs, self.order, m) for m in range(self.completed + 1)]
        if self.sigma_scale is None:
            return []
        full = self.sigma().coeffs
        return [jets.normal_layer(full, self.order, m) for m in range(len(self.log_sigma_layers))]

    def layers(self) -> dict:
        """Recovered normal-derivative layers by quantity name."""
        if self.mode == "metric":
            return {"g11u": [u[0] for u in self.upper_layers], "g12u": [u[1] for u in self.upper_layers],
                    "g22u": [u[2] for u in self.upper_layers]}
        mu = list(self.mu_layers)
        if self.scale_slope:
            mu = mu[: min(self.scale_slope)]
        return {"mu": mu, "sigma": self.sigma_layers()}

    def recovered_scenario(self, depth: int | None = None) -> Scenario:
        depth = max(self.completed + 1, 1) if depth is None else depth
        return self.scenario(depth)


def _order_of(n: int) -> int:
    order = 0
    while jets.n_coeffs(order) < n:
        order += 1
    if jets.n_coeffs(order) != n:
        raise ValueError(f"{n} is not a jet size")
    return order


def _relative(delta: float, scale: float) -> float:
    return delta / scale if scale > 0 else delta


# ---------------------------------------------------------------------------
# order 0


def recover_principal(measured: MeasuredSymbols, mode: str = "metric", mu: Jet3 | None = None,
                      sigma: Jet3 | None = None, metric: BoundaryMetricJet | None = None,
                      sigma_boundary: Jet3 | None = None, design=PRINCIPAL_DESIGN,
                      jobs: int = 1) -> ReconstructionState:
    """Order-0 step from psi_1^{11} = -xi1 xi2 / (i omega mu sqrt(|g| Q)).

    Metric mode needs mu (and sigma for the later steps) and returns g^{ab}
    and |g| on the boundary; parameter mode needs the metric and returns mu.
    Parameter mode may also be handed sigma on the boundary (only its x3 = 0
    part is read); otherwise sigma on the boundary is recovered at orders 1
    and up.
    """
    n = measured.order
    state = ReconstructionState(mode, measured.omega, n, jobs=jobs)
    usable = [xi for xi in design if xi[0] * xi[1] != 0]
    if mode == "metric":
        if mu is None or sigma is None:
            raise InputError("metric mode needs the mu and sigma jets")
        state.known_mu, state.known_sigma = mu.truncate(n), sigma.truncate(n)
        mono = np.array([[xi[0] ** 2, 2 * xi[0] * xi[1], xi[1] ** 2] for xi in usable])
        if len(usable) < 3 or np.linalg.matrix_rank(mono) < 3:
            raise DegenerateDesignSet("need three covectors off the axes that identify a symmetric form")
        mu0 = jets.normal_layer(state.known_mu.coeffs, n, 0)
        values = []
        for xi in usable:
            p = measured.sample(1, xi)[0, 0]
            r = xi[0] * xi[1] * jets.inv(1j * measured.omega * jets.mul(mu0, p, n), n)
            values.append(jets.mul(r, r, n))
        values = np.array(values)
        form = np.linalg.pinv(mono) @ values  # |g| g^{11}, |g| g^{12}, |g| g^{22}
        resid = np.abs(mono @ form - values).max()
        if _relative(resid, np.abs(values).max()) > PRINCIPAL_TOL:
            raise InconsistentSamples(f"principal samples do not fit a quadratic form (residual {resid:.3g})")
        det = jets.mul(form[0], form[2], n) - jets.mul(form[1], form[1], n)
        state.det_boundary = _real_part(det, "|g|")
        state.upper_layers = [_real_part(jets.mul(form, jets.inv(det, n), n), "g^ab")]
        state.log.append(f"order 0: |g| g^ab fitted at {len(usable)} covectors, residual {resid:.3g}")
    elif mode == "parameter":
        if metric is None:
            raise InputError("parameter mode needs the metric jet")
        state.known_metric = BoundaryMetricJet(*(x.truncate(n) for x in (metric.g11, metric.g12, metric.g22)))
        if not usable:
            raise DegenerateDesignSet("need a covector off the axes")
        up = state.boundary_upper()
        low = state.boundary_lower()
        det = jets.mul(low[0, 0], low[1, 1], n) - jets.mul(low[0, 1], low[0, 1], n)
        state.det_boundary = det
        estimates = []
        for xi in usable:
            q = xi[0] ** 2 * up[0, 0] + 2 * xi[0] * xi[1] * up[0, 1] + xi[1] ** 2 * up[1, 1]
            root = jets.sqrt(jets.mul(det, q, n), n)
            p = measured.sample(1, xi)[0, 0]
            estimates.append(-xi[0] * xi[1] * jets.inv(1j * measured.omega * jets.mul(p, root, n), n))
        estimates = np.array(estimates)
        mu0 = _real_part(estimates.mean(axis=0), "mu")
        spread = np.abs(estimates - mu0).max()
        if _relative(spread, np.abs(mu0).max()) > PRINCIPAL_TOL:
            raise InconsistentSamples(f"mu estimates disagree across covectors (spread {spread:.3g})")
        if not mu0[0].real > 0:
            raise NonPositiveParameter(f"recovered mu(0) = {mu0[0]} is not real positive")
        state.mu_layers = [mu0]
        if sigma_boundary is not None:
            sb = jets.normal_layer(sigma_boundary.truncate(n).coeffs, n, 0)
            if not sb[0].real > 0:
                raise NonPositiveParameter("Re sigma must be positive at the base point")
            state.sigma_scale = complex(sb[0])
            state.log_sigma_layers = [jets.log(sb / sb[0], n)]
        state.log.append(f"order 0: mu from {len(usable)} covectors, spread {spread:.3g}")
    else:
        raise InputError(f"unknown mode {mode!r}")
    state.completed = 0
    state.residuals[0] = _check_forward(state, measured, 0, np.inf)
    return state


# ---------------------------------------------------------------------------
# order m >= 1


def _check_forward(state: ReconstructionState, measured: MeasuredSymbols, m: int, tol: float) -> float:
    """Largest relative mismatch of psi_1 .. psi_{1-m} between state and data."""
    depth = min(m + 2, measured.depth)
    psi = state.forward(depth)
    worst = 0.0
    for d in range(1, -m, -1):
        diff, scale = 0.0, 0.0
        for xi in FORM_DESIGN + PRINCIPAL_DESIGN[:2]:
            meas = measured.sample(d, xi)
            diff = max(diff, float(np.abs(psi[d].evaluate_jet(xi) - meas).max()))
            scale = max(scale, float(np.abs(meas).max()))
        worst = max(worst, _relative(diff, scale))
    if worst > tol:
        raise ForwardMismatch(f"order {m}: forward symbols miss the data by {worst:.3g} (tolerance {tol:.3g})")
    return worst


def _require(state: ReconstructionState, measured: MeasuredSymbols, m: int, mode: str):
    if state.mode != mode:
        raise InputError(f"state is in {state.mode} mode")
    if state.completed != m - 1:
        raise InputError(f"order {m} needs orders up to {m - 1} first (have {state.completed})")
    if m > measured.max_order:
        raise DepthUnavailable(f"order {m} needs psi down to degree {1 - m}; data stop at {measured.lowest_degree}")


def recover_metric_order(state: ReconstructionState, measured: MeasuredSymbols, m: int,
                         tol: float = DEFAULT_TOL, design=FORM_DESIGN) -> ReconstructionState:
    """Add d3^m g^{ab} on the boundary from the trace of the degree 1-m slot of L."""
    _require(state, measured, m, "metric")
    n = state.order - m
    d = 1 - m
    mono = np.array([[xi[0] ** 2, 2 * xi[0] * xi[1], xi[1] ** 2] for xi in design])
    if np.linalg.matrix_rank(mono) < 3:
        raise DesignSingular("design covectors do not identify a symmetric form")
    base = state.forward(m + 1)
    up = jets.truncate(state.boundary_upper(), n)
    values = []
    for xi in design:
        dpsi = jets.truncate(measured.sample(d, xi) - base[d].evaluate_jet(xi), n)
        dL = state.psi_to_L(dpsi)
        trace = dL[0, 0] + dL[1, 1]
        q = xi[0] ** 2 * up[0, 0] + 2 * xi[0] * xi[1] * up[0, 1] + xi[1] ** 2 * up[1, 1]
        two_w = 2 * jets.sqrt(q, n)
        scale = jets.constant(1.0, n)
        for _ in range(m + 1):
            scale = jets.mul(scale, two_w, n)
        values.append(jets.mul(trace, scale, n))
    values = np.array(values)
    k = np.linalg.pinv(mono) @ values
    K = np.array([[k[0], k[1]], [k[1], k[2]]])
    low = jets.truncate(state.boundary_lower(), n)
    H, h = invert_trace_form(K, low, up, m, n)
    state.upper_layers.append(_real_part(np.array([H[0, 0], H[0, 1], H[1, 1]]), f"d3^{m} g^ab"))
    state._forward = None
    state.completed = m
    state.residuals[m] = _check_forward(state, measured, m, tol)
    state.log.append(f"order {m}: h = {complex(h[0]):.6g}, forward residual {state.residuals[m]:.3g}")
    return state


def _unknowns(state: ReconstructionState, m: int) -> list[str]:
    names = ["mu", "log_sigma"]
    if m == 1 and not state.log_sigma_layers:
        names += ["grad_log_sigma_1", "grad_log_sigma_2"]
    return names


def _shift_scale(state: ReconstructionState, t: complex) -> ReconstructionState:
    """Copy of the state with the open sigma scale moved from 1 to 1 + t."""
    if not t:
        return state
    mu = list(state.mu_layers)
    ell = list(state.log_sigma_layers)
    for k, poly in state.scale_slope.items():
        for j, (cm, cl) in enumerate(zip(poly["mu"], poly["log_sigma"]), start=1):
            mu[k] = mu[k] + t**j * cm
            ell[k] = ell[k] + t**j * cl
    return replace(state, mu_layers=mu, log_sigma_layers=ell, _forward=None)


def _power_fit(values: np.ndarray) -> np.ndarray:
    """Coefficients c_1..c_p of c_0 + c_1 t + ... + c_p t^p sampled at t = 0..p."""
    p = len(values) - 1
    V = np.vander(np.arange(p + 1, dtype=float), p + 1, increasing=True)
    return np.tensordot(np.linalg.inv(V), values, axes=1)[1:]


def _probe_scenario(state: ReconstructionState, m: int, name: str | None, t: float = 0.0) -> Scenario:
    """Current state with the order-m unknowns at zero, ``name`` set to one.

    While the sigma scale is open the state carries it at 1; ``t`` moves it to
    1 + t together with the layers that depend on it.
    """
    N = state.order
    state = _shift_scale(state, t)
    zero = jets.constant(0.0, N - m)
    one = jets.constant(1.0, N - m)
    mu_extra = one if name == "mu" else zero
    ell_extra = one if name == "log_sigma" else zero
    boundary_log = None
    if m == 1 and not state.log_sigma_layers:
        boundary_log = jets.constant(0.0, N)
        if name in ("grad_log_sigma_1", "grad_log_sigma_2"):
            boundary_log = Jet3.var(int(name[-1]), N).coeffs
    scale = 1.0 + t if state.sigma_scale is None else None
    sigma = state.sigma(extra=ell_extra, scale=scale, boundary_log=boundary_log)
    return state.scenario(m + 1, mu=state.mu(extra=mu_extra), sigma=sigma)


def _sample_psi(scenario: Scenario, degree: int, design) -> list:
    psi = dtn_symbols(scenario).psi
    return [psi[degree].evaluate_jet(xi) for xi in design]


def _run_all(state: ReconstructionState, scenarios: list, degree: int, covectors: list) -> list:
    if state.jobs > 1 and len(scenarios) > 1:
        with ProcessPoolExecutor(max_workers=state.jobs) as pool:
            n = len(scenarios)
            return list(pool.map(_sample_psi, scenarios, [degree] * n, [covectors] * n))
    return [_sample_psi(sc, degree, covectors) for sc in scenarios]


def _diagonal_rows(state: ReconstructionState, runs: list, n: int) -> np.ndarray:
    """l^{11}, l^{22} of each run stacked over covectors: (runs, 2 * covectors, J)."""
    out = []
    for run in runs:
        rows = []
        for sample in run:
            L = state.psi_to_L(jets.truncate(sample, n))
            rows.extend([L[0, 0], L[1, 1]])
        out.append(rows)
    return np.array(out)


def _close_scale(state: ReconstructionState, t: np.ndarray, tol: float):
    """Fix the open sigma scale at 1 + t and settle the layers that waited on it."""
    drift = float(np.abs(t[1:]).max(initial=0.0))
    s = 1.0 + t[0]
    if drift > tol * abs(s):
        raise InconsistentSamples(f"sigma scale is not constant along the boundary (drift {drift:.3g})")
    if not s.real > 0:
        raise NonPositiveParameter(f"recovered sigma(0) scale {s} has non-positive real part")
    shifted = _shift_scale(state, complex(t[0]))
    state.mu_layers = [_real_part(x, f"d3^{k} mu") if k in state.scale_slope else x
                       for k, x in enumerate(shifted.mu_layers)]
    state.log_sigma_layers = shifted.log_sigma_layers
    state.sigma_scale = complex(s)
    state.scale_slope = None


def recover_parameters_order(state: ReconstructionState, measured: MeasuredSymbols, m: int,
                             tol: float = DEFAULT_TOL, design=FORM_DESIGN) -> ReconstructionState:
    """Add d3^m mu and d3^m sigma on the boundary from l^{11}, l^{22} at degree 1-m.

    The slot of degree 1-m is affine in the order-m unknowns; its coefficients
    come from probe runs of the forward engine.  Sigma enters through
    grad log sigma everywhere except omega^2 mu sigma, which first shows up at
    degree -1.  Hence:

    * order 1 also yields the tangential gradient of log sigma, i.e. sigma on
      the boundary up to a constant factor s;
    * at order 2, s trades off exactly against d3^2 mu and d3^2 log sigma, so
      those layers are kept as affine functions of t = s - 1;
    * order 3 separates t when the scenario has first-order variation; when it
      does not, the order-3 layers wait on t as well and order 4, where s first
      enters quadratically, closes it with t and t^2 as separate unknowns.
    """
    _require(state, measured, m, "parameter")
    n = state.order - m
    d = 1 - m
    up0 = state.boundary_upper()[..., 0]
    star, margin = avoidance_covector(up0)
    if margin <= NEAR_DEGENERATE * float(np.real(up0[0, 0] + up0[1, 1])):
        raise NearDegenerateCovector("no covector clears the degenerate set")
    covectors = [star] + [xi for xi in design if _covector_key(xi) != star]
    names = _unknowns(state, m)
    open_scale = m >= 2 and state.sigma_scale is None
    if open_scale and state.scale_slope is None:
        state.scale_slope = {}
    # the degree 1-m slot and the order-m layers are polynomials of degree m // 2 in t
    shifts = [float(j) for j in range(1, m // 2 + 1)] if open_scale else []
    scenarios = [_probe_scenario(state, m, None)] + [_probe_scenario(state, m, name) for name in names]
    scenarios += [_probe_scenario(state, m, None, t) for t in shifts]
    rows = _diagonal_rows(state, _run_all(state, scenarios, d, covectors), n)
    meas = _diagonal_rows(state, [[measured.sample(d, xi) for xi in covectors]], n)[0]
    base = rows[0]
    K = np.stack([r - base for r in rows[1:1 + len(names)]], axis=1)  # (E, U, J)
    shifted = rows[1 + len(names):]

    star_block = K[:2, :2, 0]
    det = np.linalg.det(star_block)
    size = abs(star_block[0, 0] * star_block[1, 1]) + abs(star_block[0, 1] * star_block[1, 0])
    if abs(det) <= NEAR_DEGENERATE * size:
        raise NearDegenerateCovector(f"order {m}: 2x2 system at {star} has determinant {abs(det):.3g}")
    state.solves.append({"order": m, "covector": star, "margin": margin,
                         "threshold": NEAR_DEGENERATE * float(np.real(up0[0, 0] + up0[1, 1])),
                         "det": abs(det)})

    closing = False
    if open_scale and m >= 3:
        powers = _power_fit(np.concatenate([base[None], shifted]))  # (p, E, J)
        full = np.concatenate([K, np.moveaxis(powers, 0, 1)], axis=1)
        closing = np.linalg.cond(full[..., 0]) < 1e8
    if closing:
        u = _solve_jets(full, meas - base, n)
        t = u[len(names)]
        for j, c in enumerate(u[len(names) + 1:], start=2):
            gap = abs(c[0] - t[0] ** j)
            if gap > tol * max(1.0, abs(t[0]) ** j):
                raise InconsistentSamples(f"scale power {j} disagrees with the linear term ({gap:.3g})")
    else:
        u = _solve_jets(K, meas - base, n)
    values = dict(zip(names, u))

    if "grad_log_sigma_1" in values:
        ell0, mismatch = jets.integrate_gradient(values["grad_log_sigma_1"], values["grad_log_sigma_2"], state.order)
        if mismatch > tol * max(1.0, float(np.abs(u).max())):
            raise InconsistentSamples(f"recovered d log sigma is not a gradient (mismatch {mismatch:.3g})")
        state.log_sigma_layers = [ell0]
    if open_scale and not closing:
        at_shifts = [u] + [_solve_jets(K, meas - r, n) for r in shifted]
        poly = _power_fit(np.array(at_shifts))  # (p, U, J)
        state.scale_slope[m] = {"mu": list(poly[:, 0]), "log_sigma": list(poly[:, 1])}
        state.mu_layers.append(values["mu"])
    else:
        state.mu_layers.append(_real_part(values["mu"], f"d3^{m} mu"))
    state.log_sigma_layers.append(values["log_sigma"])
    if closing:
        _close_scale(state, t, tol)
    state._forward = None
    state.completed = m
    state.residuals[m] = _check_forward(state, measured, m, tol)
    note = ", sigma scale open" if state.scale_slope is not None else ""
    state.log.append(
        f"order {m}: covector {star}, |g11 xi1^2 - g22 xi2^2| = {margin:.6g}, "
        f"|det| = {abs(det):.3g}, forward residual {state.residuals[m]:.3g}{note}"
    )
    return state


def reconstruct(measured: MeasuredSymbols, mode: str, mu: Jet3 | None = None, sigma: Jet3 | None = None,
                metric: BoundaryMetricJet | None = None, sigma_boundary: Jet3 | None = None,
                max_order: int | None = None, tol: float = DEFAULT_TOL, jobs: int = 1) -> ReconstructionState:
    """Run every layer the data support.  On failure the partial state rides on the exception."""
    state = recover_principal(measured, mode, mu=mu, sigma=sigma, metric=metric, sigma_boundary=sigma_boundary,
                              jobs=jobs)
    top = measured.max_order if max_order is None else min(max_order, measured.max_order)
    step = recover_metric_order if mode == "metric" else recover_parameters_order
    for m in range(1, top + 1):
        try:
            step(state, measured, m, tol)
        except Exception as exc:
            exc.state = state
            state.log.append(f"order {m}: failed: {exc}")
            raise
    return state


def true_layers(scenario: Scenario, mode: str, top: int) -> dict:
    """Normal-derivative layers of a scenario, laid out like ReconstructionState.layers()."""
    n = scenario.order
    if mode == "metric":
        up = Geometry(scenario.metric).upper
        return {
            name: [jets.normal_layer(up[i, j], n, m) for m in range(top + 1)]
            for name, (i, j) in (("g11u", (0, 0)), ("g12u", (0, 1)), ("g22u", (1, 1)))
        }
    return {
        "mu": [jets.normal_layer(scenario.mu.coeffs, n, m) for m in range(top + 1)],
        "sigma": [jets.normal_layer(scenario.sigma.coeffs, n, m) for m in range(top + 1)],
    }


def layer_errors(state: ReconstructionState, truth: Scenario) -> dict:
    """Max relative error per order over all recovered quantities (absolute where the truth vanishes)."""
    got = state.layers()
    want = true_layers(truth, state.mode, state.completed)
    out = {}
    for name, layers in got.items():
        for m, layer in enumerate(layers):
            ref = want[name][m]
            scale = float(np.abs(ref).max())
            err = float(np.abs(layer - jets.truncate(ref, _order_of(layer.shape[-1]))).max())
            out[m] = max(out.get(m, 0.0), _relative(err, scale))
    return out
