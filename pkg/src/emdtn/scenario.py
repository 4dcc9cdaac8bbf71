"""Problem instances: frequency, metric jet, permeability and conductivity jets."""

from __future__ import annotations

from dataclasses import dataclass, replace
from math import factorial

import numpy as np

from . import jets
from .errors import NonPositiveDefinite, NonPositiveParameter
from .geometry import BoundaryMetricJet
from .jets import Jet3

DEFAULT_ORDER = 6
DEFAULT_DEPTH = 4


@dataclass(frozen=True)
class Scenario:
    """Complete forward-problem input at one boundary point.

    ``depth`` counts homogeneous symbol terms: depth 1 means psi_1 only,
    depth M means psi_1, psi_0, ..., psi_{2-M}.
    """

    omega: float
    metric: BoundaryMetricJet
    mu: Jet3
    sigma: Jet3
    order: int = DEFAULT_ORDER
    depth: int = DEFAULT_DEPTH
    seed: int | None = None

    def __post_init__(self):
        if not self.omega > 0:
            raise NonPositiveParameter("frequency must be positive")
        mu0 = self.mu.value
        if abs(mu0.imag) > 0 or not mu0.real > 0:
            raise NonPositiveParameter("mu must be real and positive at the base point")
        if not self.sigma.value.real > 0:
            raise NonPositiveParameter("Re sigma must be positive at the base point")
        if self.depth < 1:
            raise ValueError("depth must be at least 1")
        # all jets are held at the scenario order
        n = self.order
        if min(self.metric.order, self.mu.order, self.sigma.order) < n:
            raise ValueError("scenario jets are shorter than the declared order")
        object.__setattr__(self, "metric", BoundaryMetricJet(*(x.truncate(n) for x in
                                                               (self.metric.g11, self.metric.g12, self.metric.g22))))
        object.__setattr__(self, "mu", self.mu.truncate(n))
        object.__setattr__(self, "sigma", self.sigma.truncate(n))

    @property
    def lowest_degree(self) -> int:
        return 2 - self.depth

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)

    @classmethod
    def flat(cls, order: int = DEFAULT_ORDER, depth: int = DEFAULT_DEPTH, omega: float = 1.0,
             mu: complex = 1.0, sigma: complex = 1.0) -> "Scenario":
        return cls(omega, BoundaryMetricJet.flat(order), Jet3.const(mu, order), Jet3.const(sigma, order),
                   order, depth)

    @classmethod
    def constant(cls, g11, g12, g22, mu=1.0, sigma=1.0, omega=1.0, order=DEFAULT_ORDER,
                 depth=DEFAULT_DEPTH) -> "Scenario":
        c = lambda v: Jet3.const(v, order)  # noqa: E731
        return cls(omega, BoundaryMetricJet(c(g11), c(g12), c(g22)), c(mu), c(sigma), order, depth)


def _perturbation(rng: np.random.Generator, order: int, amplitude: float, complex_valued: bool = False):
    idx = jets.multi_indices(order)
    scale = np.array([1.0 / factorial(1 + sum(k)) for k in idx])
    out = rng.uniform(-amplitude, amplitude, len(idx)) * scale
    if complex_valued:
        out = out + 1j * rng.uniform(-amplitude, amplitude, len(idx)) * scale
    return out.astype(complex)


def random_scenario(seed: int, order: int = DEFAULT_ORDER, depth: int = DEFAULT_DEPTH, omega: float = 1.0,
                    amplitude: float = 0.3, complex_sigma: bool = True) -> Scenario:
    """Random analytic-looking scenario near g = I, mu = sigma = 1.

    Coefficient of multi-index k is uniform in [-a, a] divided by (1 + |k|)!.
    Draws violating positivity are rejected and redrawn.
    """
    rng = np.random.default_rng(seed)
    n = jets.n_coeffs(order)
    for _ in range(1000):
        g11 = _perturbation(rng, order, amplitude)
        g12 = _perturbation(rng, order, amplitude)
        g22 = _perturbation(rng, order, amplitude)
        mu = _perturbation(rng, order, amplitude)
        sigma = _perturbation(rng, order, amplitude, complex_sigma)
        g11[0] += 1.0
        g22[0] += 1.0
        mu[0] += 1.0
        sigma[0] += 1.0
        try:
            metric = BoundaryMetricJet(Jet3(g11[:n], order), Jet3(g12[:n], order), Jet3(g22[:n], order))
            return Scenario(omega, metric, Jet3(mu, order), Jet3(sigma, order), order, depth, seed)
        except (NonPositiveDefinite, NonPositiveParameter):
            continue
    raise RuntimeError("could not draw an admissible scenario")
