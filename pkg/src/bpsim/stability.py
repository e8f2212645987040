"""Numerical probes of the queue-stability geometry.

The virtual-rate region (net drain vectors achievable by feasible powers and
routing) is explored through its support function: for a nonnegative queue
vector the maximizing rate allocation is exactly what the max-weight
controller computes.  On top of that sit diagnostic checks: the halfspace
gap behind an interior arrival point, directional excess over a dominant
feasible point, the lagged-optimizer cone, and the negative-drift condition
outside a compact region.  These are numerical audits of the machinery, not
proofs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .model import NetworkModel, Scenario, TrafficSpec
from .phy import link_metrics, random_power_state, uniform_power_state
from .policy import compute_weights, rates_from_power
from .sim import SimTrace, virtual_rates
from .solver import SolverConfig, solve_max_weight


def queue_norm(u: np.ndarray) -> float:
    return float(np.sqrt((u * u).sum()))


@dataclass
class RateRegionOracle:
    """Support-function access to the virtual service rate region.

    Each query maximizes u . rtilde over feasible rate allocations by
    pushing u through the per-link differential weights and solving the
    max-weight power control from a cold start (so equal queries give
    identical answers).
    """

    # Tolerances much below 1e-7 can sit under the floating-point floor of
    # line-searched ascent on some instances; the solver then stalls honestly
    # rather than reaching them.
    model: NetworkModel
    traffic: TrafficSpec
    config: SolverConfig = field(default_factory=lambda: SolverConfig(
        kkt_tolerance=1e-7, max_iterations=2000))
    slot_length: float = 1.0

    def __post_init__(self):
        self._mask = self.traffic.queue_mask(self.model.n)

    def mask(self) -> np.ndarray:
        return self._mask

    def _solved_capacities(self, link_weights: np.ndarray) -> np.ndarray:
        state, _ = solve_max_weight(
            self.model, link_weights, uniform_power_state(self.model), self.config)
        metrics = link_metrics(self.model, state)
        return np.maximum(metrics.capacity, 0.0) * self.slot_length

    def support(self, u: np.ndarray) -> tuple[float, np.ndarray]:
        """Support value and a maximizing virtual-rate vector for u >= 0."""
        u = np.where(self._mask, u, 0.0)
        if np.any(u < 0):
            raise ConfigError("support queries require a nonnegative queue vector")
        w = compute_weights(u, self.traffic, self.model)
        if not np.any(w.weight > 0):
            return 0.0, np.zeros_like(u)
        state, diag = solve_max_weight(
            self.model, w.weight, uniform_power_state(self.model), self.config)
        metrics = link_metrics(self.model, state)
        rates = rates_from_power(metrics, w, self.slot_length)
        rt = virtual_rates(rates.rate, rates.commodity, self.traffic, self.model)
        return float((u * rt).sum()), rt

    def sample_rates(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """(count, n, K) random feasible virtual-rate vectors.

        Random feasible powers, each link routed to a random commodity at a
        random fraction of its capacity.  The load fractions mix near-idle,
        uniform and near-full so corners of the region get covered.
        """
        n, nk = self.model.n, self.traffic.n_commodities
        out = np.zeros((count, n, nk))
        for s in range(count):
            st = random_power_state(self.model, rng)
            metrics = link_metrics(self.model, st)
            cap = np.maximum(metrics.capacity, 0.0) * self.slot_length
            shape = rng.choice([4.0, 1.0, 0.25], size=self.model.n_links)
            frac = rng.random(self.model.n_links) ** shape
            com = rng.integers(0, nk, size=self.model.n_links)
            out[s] = virtual_rates(cap * frac, com, self.traffic, self.model)
        return out

    def _best_routing_value(self, delta: np.ndarray, cap: np.ndarray) -> float:
        """max of delta . rtilde over routings given fixed link capacities.

        Each link independently picks the commodity with the largest
        differential of delta across it and idles when all are negative, so
        the maximum is exact and linear in the capacities.
        """
        d = np.where(self._mask, delta, 0.0)
        diff = d[self.model.src] - d[self.model.dst]
        w = np.maximum(diff.max(axis=1), 0.0)
        return float((w * cap).sum())

    def directional_excess(self, delta: np.ndarray, abar: np.ndarray,
                           rng: np.random.Generator | None = None,
                           samples: int = 64) -> float:
        """Largest advance of the region over ``abar`` along unit ``delta``.

        Certified lower bound: for each candidate power configuration (the
        max-weight solve for the positive part of delta, plus random ones)
        the best routing for the direction is evaluated in closed form.
        Exact routing-wise; the power search is sampled, so for sign-mixed
        directions the true value may still be larger.  The zero direction
        returns 0 by convention.
        """
        delta = np.where(self._mask, delta, 0.0)
        nrm = queue_norm(delta)
        if nrm == 0:
            return 0.0
        delta = delta / nrm
        offset = float((delta * abar).sum())
        best = 0.0      # abar is feasible: excess at least zero
        plus = np.maximum(delta, 0.0)
        if np.any(plus > 0):
            w = compute_weights(plus, self.traffic, self.model)
            if np.any(w.weight > 0):
                cap = self._solved_capacities(w.weight)
                best = max(best, self._best_routing_value(delta, cap) - offset)
        # directions with negative parts profit from asking dominated links
        # to idle entirely; a full-power configuration covers that corner
        cap_full = np.maximum(
            link_metrics(self.model, uniform_power_state(self.model)).capacity,
            0.0) * self.slot_length
        best = max(best, self._best_routing_value(delta, cap_full) - offset)
        if rng is not None and samples > 0:
            for _ in range(samples):
                st = random_power_state(self.model, rng)
                cap = np.maximum(link_metrics(self.model, st).capacity,
                                 0.0) * self.slot_length
                best = max(best, self._best_routing_value(delta, cap) - offset)
        return best

    def cone_contains(self, abar: np.ndarray, eps: float, u_now: np.ndarray,
                      u_prev: np.ndarray,
                      rng: np.random.Generator | None = None,
                      samples: int = 64) -> bool:
        """Whether u_prev lies in the lagged-optimizer cone around u_now.

        Membership radius along a direction is eps*||u_now|| over twice the
        directional excess; a zero-excess direction admits any distance.
        """
        diff = np.where(self._mask, u_prev - u_now, 0.0)
        dist = queue_norm(diff)
        if dist == 0:
            return True
        d = self.directional_excess(diff, abar, rng=rng, samples=samples)
        if d <= 0:
            return True
        return dist <= eps * queue_norm(u_now) / (2.0 * d)


def halfspace_margin(oracle: RateRegionOracle, a: np.ndarray, eps: float,
                     u: np.ndarray, y: np.ndarray) -> float:
    """Slack in u.(a - y) <= -(eps/2)||u|| for y beyond the halfspace at a + eps/2.

    Nonnegative margin means the inequality holds.  Caller guarantees y is
    feasible and satisfies u.y >= u.(a + eps/2).
    """
    mask = oracle.mask()
    u = np.where(mask, u, 0.0)
    lhs = float((u * (np.where(mask, a, 0.0) - y)).sum())
    return -(eps / 2.0) * queue_norm(u) - lhs


def estimate_epsilon(oracle: RateRegionOracle, a: np.ndarray,
                     rng: np.random.Generator, samples: int = 1000) -> float:
    """Largest eps with support(u) >= u.(a + eps) on sampled directions.

    The support is positively homogeneous, so each sampled nonnegative
    direction yields the exact cutoff (support(u) - u.a) / |u|_1; the
    estimate is the minimum over the sample.
    """
    mask = oracle.mask()
    a = np.where(mask, a, 0.0)
    best = np.inf
    for _ in range(samples):
        u = np.where(mask, rng.random(a.shape), 0.0)
        l1 = u.sum()
        if l1 <= 0:
            continue
        val, _ = oracle.support(u)
        best = min(best, (val - float((u * a).sum())) / l1)
    if not np.isfinite(best):
        raise ConfigError("no usable directions sampled")
    return max(0.0, best)


def omega_threshold(eps: float, eps0: float, lam: float, alpha: float) -> float:
    """Lyapunov level above which the negative-drift condition is asserted."""
    if min(eps, eps0, lam, alpha) <= 0:
        raise ConfigError("eps, eps0, lambda and alpha must be positive")
    omega1 = (1.0 + alpha * alpha) * (eps0 + lam) ** 2 / (eps * eps)
    c = np.sqrt(2.0 * lam) / alpha
    s = (c + np.sqrt(c * c + 4.0 * (lam + eps0))) / 2.0
    omega2 = (1.0 + 1.0 / (alpha * alpha)) * s * s
    return float(max(omega1, omega2))


@dataclass
class DriftCheckRow:
    slot: int
    lyapunov: float
    lhs: float
    violation: bool


@dataclass
class DriftCheckReport:
    omega: float
    alpha: float
    eps: float
    eps0: float
    lam: float
    checked: list[DriftCheckRow]

    @property
    def violations(self) -> int:
        return sum(r.violation for r in self.checked)

    def to_csv(self) -> str:
        lines = ["slot,V,omega,lhs,violation"]
        for r in self.checked:
            lines.append(
                f"{r.slot},{r.lyapunov!r},{self.omega!r},{r.lhs!r},{int(r.violation)}")
        return "\n".join(lines) + "\n"


def check_drift_condition(oracle: RateRegionOracle, a: np.ndarray, eps: float,
                          lam: float, eps0: float, trace: SimTrace,
                          rng: np.random.Generator,
                          direction_samples: int = 32,
                          interior_margin: float = 1e-9) -> DriftCheckReport:
    """Audit the negative-drift condition over a recorded trace.

    For every slot whose Lyapunov value exceeds the compact-region level,
    evaluates 2 u_t.(a - R*(u_{t-1})) - ||u_t - u_{t-1}||^2 + lam and flags
    values above -eps0.  The arrival point must be verifiably interior:
    sampled support values must exceed u.a with positive margin.
    """
    mask = oracle.mask()
    a = np.where(mask, a, 0.0)
    dominant = None
    worst = np.inf
    for _ in range(max(8, direction_samples // 4)):
        u = np.where(mask, rng.random(a.shape), 0.0)
        val, rt = oracle.support(u)
        margin = val - float((u * a).sum())
        worst = min(worst, margin / max(u.sum(), 1e-300))
        if dominant is None:
            dominant = rt
    if not (worst > interior_margin):
        raise ConfigError(
            f"arrival point not verifiably interior (margin {worst:.3e})")

    max_d = 0.0
    for _ in range(direction_samples):
        delta = np.where(mask, rng.random(a.shape), 0.0)
        max_d = max(max_d, oracle.directional_excess(delta, dominant, rng, samples=0))
    if max_d <= 0:
        raise ConfigError("sampled directional excess vanished; cannot size the cone")
    alpha = min(1.0, eps / (2.0 * max_d))
    omega = omega_threshold(eps, eps0, lam, alpha)

    flat = trace.queue_vectors()
    rows: list[DriftCheckRow] = []
    for t in range(1, trace.slots + 1):
        v = float(trace.lyapunov[t])
        if v <= omega:
            continue
        u_t = flat[t].reshape(a.shape)
        u_prev = flat[t - 1].reshape(a.shape)
        _, rstar = oracle.support(u_prev)
        lhs = (2.0 * float((u_t * (a - rstar)).sum())
               - float(((flat[t] - flat[t - 1]) ** 2).sum()) + lam)
        rows.append(DriftCheckRow(slot=t, lyapunov=v, lhs=lhs,
                                  violation=bool(lhs > -eps0)))
    return DriftCheckReport(omega=omega, alpha=alpha, eps=eps, eps0=eps0,
                            lam=lam, checked=rows)


def lambda_from_trace(traffic: TrafficSpec, trace: SimTrace) -> float:
    """Uniform bound 2(|b| + ||RT||^2) over the realized trace."""
    second = float(traffic.second_moments().sum())
    vr = trace.vr_actual.reshape(trace.slots, -1)
    return 2.0 * (second + float((vr * vr).sum(axis=1).max(initial=0.0)))


def oracle_for(scenario: Scenario, config: SolverConfig | None = None) -> RateRegionOracle:
    if config is None:
        return RateRegionOracle(scenario.model, scenario.traffic)
    return RateRegionOracle(scenario.model, scenario.traffic, config)
