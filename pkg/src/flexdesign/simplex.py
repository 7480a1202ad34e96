"""Dense tableau simplex used as an independent reference for the flow solver.

Solves ``max p.x s.t. A x <= b, x >= 0`` with ``b >= 0`` so the slack basis
is feasible and no phase one is needed.  Bland's rule prevents cycling.
"""

from __future__ import annotations

import numpy as np


class SimplexError(RuntimeError):
    pass


def simplex_max(obj, A, b, tol=1e-11, max_pivots=10_000):
    """Return ``(x, value, duals)`` for the row constraints."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    obj = np.asarray(obj, dtype=float)
    rows, cols = A.shape
    if np.any(b < 0):
        raise SimplexError("right-hand side must be nonnegative")
    T = np.zeros((rows + 1, cols + rows + 1))
    T[:rows, :cols] = A
    T[:rows, cols : cols + rows] = np.eye(rows)
    T[:rows, -1] = b
    T[-1, :cols] = -obj
    basis = list(range(cols, cols + rows))
    for _ in range(max_pivots):
        reduced = T[-1, :-1]
        entering = np.flatnonzero(reduced < -tol)
        if entering.size == 0:
            break
        e = int(entering[0])
        col = T[:rows, e]
        pos = col > tol
        if not np.any(pos):
            raise SimplexError("unbounded")
        ratios = np.full(rows, np.inf)
        ratios[pos] = T[:rows, -1][pos] / col[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + tol * max(1.0, abs(best)))
        leave = min(ties, key=lambda r: basis[r])
        T[leave] /= T[leave, e]
        for r in range(rows + 1):
            if r != leave and T[r, e] != 0.0:
                T[r] -= T[r, e] * T[leave]
        basis[leave] = e
    else:
        raise SimplexError("pivot limit reached")
    x = np.zeros(cols + rows)
    for r, var in enumerate(basis):
        x[var] = T[r, -1]
    duals = T[-1, cols : cols + rows].copy()
    return x[:cols], float(T[-1, -1]), duals


def solve_transport_reference(p, c, d, cap):
    """Dense LP for the allocation problem; returns (flow, objective, u, v, y)."""
    p = np.asarray(p, dtype=float)
    m, n = p.shape
    A_supply = np.kron(np.eye(m), np.ones((1, n)))
    A_demand = np.kron(np.ones((1, m)), np.eye(n))
    A = np.vstack([A_supply, A_demand, np.eye(m * n)])
    b = np.concatenate([c, d, np.asarray(cap, dtype=float).ravel()])
    x, val, duals = simplex_max(p.ravel(), A, b)
    u = duals[:m]
    v = duals[m : m + n]
    y = duals[m + n :].reshape(m, n)
    return x.reshape(m, n), val, u, v, y
