"""Second-stage profit oracle, sample estimators and the relaxation bound."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _flow
from .instance import FlexNetwork, Instance, SampleSet
from .simplex import solve_transport_reference

ENGINES = ("flow", "reference")


@dataclass(frozen=True)
class FlowSolution:
    flow: np.ndarray
    objective: float
    duals_supply: np.ndarray
    duals_demand: np.ndarray
    duals_arc_bound: np.ndarray


@dataclass(frozen=True)
class EstimatorConfig:
    omega: int
    variance_reduction: bool = False

    def __post_init__(self):
        if self.omega < 1:
            raise ValueError("omega must be >= 1")


def as_matrix(network) -> np.ndarray:
    """Float copy of a network (binary FlexNetwork or fractional array)."""
    if isinstance(network, FlexNetwork):
        return network.arcs.astype(float)
    return np.ascontiguousarray(network, dtype=float)


def arc_bounds(capacities, demand) -> np.ndarray:
    """Tight big-M values min(c_i, d_j)."""
    return np.minimum.outer(np.asarray(capacities, dtype=float), np.asarray(demand, dtype=float))


def _demand_vector(instance: Instance, demand) -> np.ndarray:
    d = np.ascontiguousarray(demand, dtype=float)
    if d.shape != (instance.n,):
        raise ValueError(f"demand must have length {instance.n}, got shape {d.shape}")
    if np.any(d < 0):
        raise ValueError("demand must be nonnegative")
    return d


def _check_network(instance: Instance, F: np.ndarray) -> None:
    if F.shape != instance.shape:
        raise ValueError(f"network must have shape {instance.shape}, got {F.shape}")


def solve_profit(instance: Instance, demand, network, engine: str = "flow") -> FlowSolution:
    """Optimal allocation for one demand realization restricted to ``network``."""
    if engine == "reference":
        return solve_profit_reference(instance, demand, network)
    if engine != "flow":
        raise ValueError(f"unknown engine {engine!r}; expected one of {ENGINES}")
    d = _demand_vector(instance, demand)
    F = as_matrix(network)
    _check_network(instance, F)
    p = np.ascontiguousarray(instance.unit_profit)
    c = np.ascontiguousarray(instance.capacities)
    cap = arc_bounds(c, d) * F
    f = np.empty(instance.shape)
    obj = _flow.solve_flow(p, c, d, cap, f)
    u, v, y = _flow.flow_duals(p, c, d, cap, f)
    return FlowSolution(f, float(obj), u, v, y)


def solve_profit_reference(instance: Instance, demand, network) -> FlowSolution:
    d = _demand_vector(instance, demand)
    F = as_matrix(network)
    _check_network(instance, F)
    cap = arc_bounds(instance.capacities, d) * F
    f, obj, u, v, y = solve_transport_reference(instance.unit_profit, instance.capacities, d, cap)
    return FlowSolution(f, float(obj), u, v, y)


def full_flex_profit(instance: Instance, demand, engine: str = "flow") -> float:
    return solve_profit(instance, demand, np.ones(instance.shape), engine).objective


def _demands(samples, omega: int | None = None) -> np.ndarray:
    D = samples.demands if isinstance(samples, SampleSet) else np.atleast_2d(np.asarray(samples, dtype=float))
    if omega is not None:
        if omega > D.shape[0]:
            raise ValueError(f"need {omega} samples, set holds only {D.shape[0]}")
        D = D[:omega]
    return np.ascontiguousarray(D)


def profits(instance: Instance, samples, network, omega: int | None = None, engine: str = "flow") -> np.ndarray:
    """Vector of P(d^w, F) over the first ``omega`` samples."""
    D = _demands(samples, omega)
    F = as_matrix(network)
    _check_network(instance, F)
    if engine == "reference":
        return np.array([solve_profit_reference(instance, d, F).objective for d in D])
    if engine != "flow":
        raise ValueError(f"unknown engine {engine!r}; expected one of {ENGINES}")
    return _flow.batch_profits(
        np.ascontiguousarray(instance.unit_profit), np.ascontiguousarray(instance.capacities), D, F
    )


def profit_table(instance: Instance, samples, networks, omega: int | None = None) -> np.ndarray:
    """Profits for a stack of networks, shape (networks, samples)."""
    D = _demands(samples, omega)
    Fs = np.ascontiguousarray(np.asarray(networks, dtype=float).reshape(-1, instance.m, instance.n))
    return _flow.batch_profits_many(
        np.ascontiguousarray(instance.unit_profit), np.ascontiguousarray(instance.capacities), D, Fs
    )


def estimate_expected_profit(
    instance: Instance, network, samples, config: EstimatorConfig, engine: str = "flow"
) -> float:
    """Sample-average profit; with variance reduction, relative to the full network."""
    vals = profits(instance, samples, network, config.omega, engine)
    if config.variance_reduction:
        vals = vals - profits(instance, samples, np.ones(instance.shape), config.omega, engine)
    return float(np.mean(vals))


def installation_cost(instance: Instance, network) -> float:
    return float(np.sum(instance.arc_cost * as_matrix(network)))


def fdp_objective_estimate(instance: Instance, network, samples, omega: int | None = None, engine: str = "flow") -> float:
    """Sample estimate of expected profit minus installation cost."""
    if omega is None:
        omega = len(_demands(samples))
    est = estimate_expected_profit(instance, network, samples, EstimatorConfig(omega), engine)
    return est - installation_cost(instance, network)


def profit_subgradient(instance: Instance, demand, fractional_network) -> np.ndarray:
    """Supergradient of F -> P(d, F*M) at a point of [0, 1]^{m x n}."""
    F = as_matrix(fractional_network)
    if np.any(F < 0) or np.any(F > 1):
        raise ValueError("fractional network entries must lie in [0, 1]")
    sol = solve_profit(instance, demand, F)
    return arc_bounds(instance.capacities, demand) * sol.duals_arc_bound


def relaxation_oracle(instance: Instance, D: np.ndarray, F: np.ndarray) -> tuple[float, np.ndarray]:
    """Value and supergradient of mean_w P(d^w, F*M^w) - I.F."""
    vals, g = _flow.batch_supergradient(
        np.ascontiguousarray(instance.unit_profit), np.ascontiguousarray(instance.capacities), D, F
    )
    return float(vals.mean() - np.sum(instance.arc_cost * F)), g - instance.arc_cost


def lp_upper_bound(
    instance: Instance,
    samples,
    omega: int,
    max_iters: int = 5000,
    window: int = 50,
    rel_tol: float = 1e-6,
    return_certificate: bool = False,
):
    """Relaxation of the design problem without integrality or the arc budget.

    Projected supergradient ascent over the unit box, starting from the full
    network.  Steps are ``g / (||g||_inf * (1 + k))``.  The returned value is
    the best relaxed objective visited; with ``return_certificate`` a second
    number is returned, the smallest first-order overestimate
    ``h(F) + sum max(g (1 - F), -g F)`` seen, which bounds the relaxation
    from above regardless of convergence.
    """
    if omega < 1:
        raise ValueError("omega must be >= 1")
    D = _demands(samples, omega)
    F = np.ones(instance.shape)
    best = -np.inf
    cert = np.inf
    history = []
    for k in range(max_iters):
        val, g = relaxation_oracle(instance, D, F)
        best = max(best, val)
        cert = min(cert, val + float(np.sum(np.maximum(g * (1.0 - F), -g * F))))
        history.append(best)
        if best >= cert - 1e-12 * max(1.0, abs(best)):
            break
        if k >= window and best - history[-window - 1] <= rel_tol * max(1.0, abs(best)):
            break
        scale = float(np.max(np.abs(g)))
        if scale == 0.0:
            break
        F = np.clip(F + g / (scale * (1.0 + k)), 0.0, 1.0)
    if return_certificate:
        return best, cert
    return best
