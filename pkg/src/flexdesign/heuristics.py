"""Benchmark heuristics: greedy arc addition and the SP-relaxation heuristic."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .instance import FlexNetwork, Instance
from .oracle import _demands, profit_table, profits, relaxation_oracle

log = logging.getLogger(__name__)

DEFAULT_OMEGA = 1000


@dataclass
class HeuristicTrace:
    networks: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    added_arcs: list = field(default_factory=list)
    relaxation_values: list = field(default_factory=list)

    def record(self, F: np.ndarray, score: float, arc: tuple[int, int]) -> None:
        self.networks.append(FlexNetwork(F.copy()))
        self.scores.append(float(score))
        self.added_arcs.append(arc)

    def to_dict(self) -> dict:
        out = {
            "added_arcs": [list(a) for a in self.added_arcs],
            "scores": self.scores,
            "networks": [net.arc_list() for net in self.networks],
        }
        if self.relaxation_values:
            out["relaxation_values"] = self.relaxation_values
        return out


def _first_best(values: np.ndarray, tol: float) -> int:
    """Lowest index whose value is within ``tol`` of the maximum."""
    return int(np.flatnonzero(values >= values.max() - tol)[0])


def greedy(instance: Instance, samples, omega: int = DEFAULT_OMEGA) -> tuple[FlexNetwork, HeuristicTrace]:
    """Add the arc with the largest estimated objective gain until the budget or no gain.

    All candidate evaluations share the first ``omega`` samples.
    """
    D = _demands(samples, omega)
    m, n = instance.shape
    cost = instance.arc_cost.ravel()
    F = np.zeros((m, n))
    base = 0.0
    score = 0.0
    trace = HeuristicTrace()
    while int(F.sum()) < instance.budget:
        absent = np.flatnonzero(F.ravel() == 0)
        cands = np.repeat(F.ravel()[None, :], absent.size, axis=0)
        cands[np.arange(absent.size), absent] = 1.0
        means = profit_table(instance, D, cands.reshape(-1, m, n)).mean(axis=1)
        gains = means - base - cost[absent]
        tol = 1e-9 * max(1.0, abs(base))
        k = _first_best(gains, tol)
        if gains[k] <= tol:
            break
        idx = int(absent[k])
        i, j = divmod(idx, n)
        F[i, j] = 1.0
        base = float(means[k])
        score += float(gains[k])
        trace.record(F, score, (i, j))
        log.debug("greedy: added %s, score %.6g", (i, j), score)
    return FlexNetwork(F.astype(np.int8)), trace


def project_capped_box(x: np.ndarray, lower: np.ndarray, cap: float, iters: int = 100) -> np.ndarray:
    """Euclidean projection onto ``{lower <= F <= 1, sum F <= cap}``.

    Uses the threshold form ``clip(x - tau, lower, 1)`` with ``tau`` found by
    bisection; requires ``sum(lower) <= cap``.
    """
    y = np.clip(x, lower, 1.0)
    if y.sum() <= cap:
        return y
    lo, hi = 0.0, float(np.max(x - lower))
    for _ in range(iters):
        tau = 0.5 * (lo + hi)
        if np.clip(x - tau, lower, 1.0).sum() > cap:
            lo = tau
        else:
            hi = tau
    return np.clip(x - hi, lower, 1.0)


def solve_sp_relaxation(
    instance: Instance,
    D: np.ndarray,
    lower: np.ndarray,
    start: np.ndarray | None = None,
    max_iters: int = 2000,
    window: int = 100,
    rel_tol: float = 1e-5,
) -> tuple[np.ndarray, float]:
    """Continuous relaxation with pinned arcs, by projected supergradient ascent.

    Returns the best iterate and its objective.
    """
    K = float(instance.budget)
    if start is None:
        free = lower == 0
        fill = (K - lower.sum()) / max(1, int(free.sum()))
        start = np.where(free, min(1.0, fill), lower)
    F = project_capped_box(start, lower, K)
    best_F, best = F, -np.inf
    history = []
    for k in range(max_iters):
        val, g = relaxation_oracle(instance, D, F)
        if val > best:
            best, best_F = val, F
        history.append(best)
        if k >= window and best - history[-window - 1] <= rel_tol * max(1.0, abs(best)):
            break
        scale = float(np.max(np.abs(g)))
        if scale == 0.0:
            break
        F = project_capped_box(F + g / (scale * (1.0 + k)), lower, K)
    return best_F, best


def sp_heuristic(
    instance: Instance, samples, omega: int = DEFAULT_OMEGA, max_iters: int = 2000
) -> tuple[FlexNetwork, HeuristicTrace]:
    """Each round, solve the relaxation pinned to the current arcs and add the
    absent arc with the largest fractional value."""
    D = _demands(samples, omega)
    m, n = instance.shape
    L = np.zeros((m, n))
    trace = HeuristicTrace()
    warm = None
    for _ in range(instance.budget):
        Ffrac, relax_val = solve_sp_relaxation(instance, D, L, start=warm, max_iters=max_iters)
        absent = np.flatnonzero(L.ravel() == 0)
        k = _first_best(Ffrac.ravel()[absent], 1e-9)
        i, j = divmod(int(absent[k]), n)
        L[i, j] = 1.0
        warm = np.maximum(Ffrac, L)
        score = float(profits(instance, D, L).mean() - np.sum(instance.arc_cost * L))
        trace.record(L, score, (i, j))
        trace.relaxation_values.append(relax_val)
        log.debug("sp: added %s, relaxation %.6g, score %.6g", (i, j), relax_val, score)
    return FlexNetwork(L.astype(np.int8)), trace
