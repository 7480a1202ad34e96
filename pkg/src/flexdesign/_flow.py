"""Compiled kernels for the bipartite allocation LP.

The second-stage LP is a transportation problem with free disposal:

    max  sum p_ij f_ij
    s.t. sum_j f_ij <= c_i,  sum_i f_ij <= d_j,  0 <= f_ij <= cap_ij

It is solved as a min-cost flow on s -> resources -> demands -> t with
a primal-dual successive-shortest-path scheme: Dijkstra on reduced costs
(dense O(N^2) scan) sets the potentials, then depth-first search saturates
every zero-reduced-cost path before the next search.
Augmentation stops as soon as the cheapest s-t path has nonnegative cost.

Node layout used throughout: 0..m-1 resources, m..m+n-1 demands,
m+n source, m+n+1 sink.
"""

import numpy as np
from numba import njit

INF = np.inf


@njit(cache=True)
def _tolerance(c, d):
    scale = 1.0
    for x in c:
        if x > scale:
            scale = x
    for x in d:
        if x > scale:
            scale = x
    return 1e-12 * scale


@njit(cache=True)
def solve_flow(p, c, d, cap, f):
    """Solve one LP in place; ``f`` (m x n) receives the optimal flow. Returns the objective."""
    m, n = p.shape
    N = m + n + 2
    s = m + n
    t = m + n + 1
    eps = _tolerance(c, d)
    pot = np.zeros(N)
    dist = np.empty(N)
    done = np.empty(N, dtype=np.bool_)
    pred = np.empty(N, dtype=np.int64)
    stack = np.empty(N, dtype=np.int64)
    sflow = np.zeros(m)
    tflow = np.zeros(n)
    pmax = 1.0
    for i in range(m):
        for j in range(n):
            f[i, j] = 0.0
            if abs(p[i, j]) > pmax:
                pmax = abs(p[i, j])
    ctol = 1e-11 * pmax

    # feasible initial potentials: only forward arcs exist, the graph is a DAG
    ptmin = 0.0
    for j in range(n):
        best = 0.0
        for i in range(m):
            if cap[i, j] > eps and -p[i, j] < best:
                best = -p[i, j]
        pot[m + j] = best
        if best < ptmin:
            ptmin = best
    pot[t] = ptmin

    max_aug = 4 * (m * n + m + n) + 16
    for _ in range(max_aug):
        for v in range(N):
            dist[v] = INF
            done[v] = False
            pred[v] = -1
        dist[s] = 0.0
        while True:
            u = -1
            du = INF
            for v in range(N):
                if not done[v] and dist[v] < du:
                    du = dist[v]
                    u = v
            if u == -1:
                break
            done[u] = True
            if u == t:
                break
            if u == s:
                for i in range(m):
                    if sflow[i] < c[i] - eps and not done[i]:
                        w = pot[s] - pot[i]
                        if w < 0.0:
                            w = 0.0
                        if du + w < dist[i]:
                            dist[i] = du + w
                            pred[i] = s
            elif u < m:
                i = u
                for j in range(n):
                    v = m + j
                    if not done[v] and f[i, j] < cap[i, j] - eps:
                        w = -p[i, j] + pot[i] - pot[v]
                        if w < 0.0:
                            w = 0.0
                        if du + w < dist[v]:
                            dist[v] = du + w
                            pred[v] = i
            else:
                j = u - m
                for i in range(m):
                    if not done[i] and f[i, j] > eps:
                        w = p[i, j] + pot[u] - pot[i]
                        if w < 0.0:
                            w = 0.0
                        if du + w < dist[i]:
                            dist[i] = du + w
                            pred[i] = u
                if not done[t] and tflow[j] < d[j] - eps:
                    w = pot[u] - pot[t]
                    if w < 0.0:
                        w = 0.0
                    if du + w < dist[t]:
                        dist[t] = du + w
                        pred[t] = u
        if dist[t] == INF:
            break
        path_cost = dist[t] + pot[t] - pot[s]
        if path_cost >= -1e-12:
            break
        dt = dist[t]
        for v in range(N):
            if dist[v] < dt:
                pot[v] += dist[v]
            else:
                pot[v] += dt
        # augment along every zero-reduced-cost path before the next search
        while True:
            for v in range(N):
                done[v] = False
                pred[v] = -1
            stack[0] = s
            top = 1
            done[s] = True
            while top > 0 and not done[t]:
                top -= 1
                u = stack[top]
                if u == s:
                    for i in range(m):
                        if not done[i] and sflow[i] < c[i] - eps and abs(pot[s] - pot[i]) <= ctol:
                            done[i] = True
                            pred[i] = s
                            stack[top] = i
                            top += 1
                elif u < m:
                    for j in range(n):
                        v = m + j
                        if not done[v] and f[u, j] < cap[u, j] - eps and abs(-p[u, j] + pot[u] - pot[v]) <= ctol:
                            done[v] = True
                            pred[v] = u
                            stack[top] = v
                            top += 1
                else:
                    j = u - m
                    if tflow[j] < d[j] - eps and abs(pot[u] - pot[t]) <= ctol:
                        done[t] = True
                        pred[t] = u
                        break
                    for i in range(m):
                        if not done[i] and f[i, j] > eps and abs(p[i, j] + pot[u] - pot[i]) <= ctol:
                            done[i] = True
                            pred[i] = u
                            stack[top] = i
                            top += 1
            if not done[t]:
                break
            delta = INF
            v = t
            while v != s:
                u = pred[v]
                if v == t:
                    r = d[u - m] - tflow[u - m]
                elif u == s:
                    r = c[v] - sflow[v]
                elif u < m:
                    r = cap[u, v - m] - f[u, v - m]
                else:
                    r = f[v, u - m]
                if r < delta:
                    delta = r
                v = u
            v = t
            while v != s:
                u = pred[v]
                if v == t:
                    tflow[u - m] += delta
                elif u == s:
                    sflow[v] += delta
                elif u < m:
                    f[u, v - m] += delta
                else:
                    f[v, u - m] -= delta
                v = u

    obj = 0.0
    for i in range(m):
        for j in range(n):
            obj += p[i, j] * f[i, j]
    return obj


@njit(cache=True)
def flow_duals(p, c, d, cap, f):
    """Optimal LP duals for a solved flow ``f``.

    Node potentials are computed by Bellman-Ford on the residual graph of the
    circulation that closes the network with a zero-cost t -> s disposal arc;
    duals then follow from reduced costs.  Returns (u, v, y).
    """
    m, n = p.shape
    N = m + n + 2
    s = m + n
    t = m + n + 1
    eps = _tolerance(c, d)
    pot = np.zeros(N)
    total = 0.0
    for i in range(m):
        for j in range(n):
            total += f[i, j]
    sflow = np.zeros(m)
    tflow = np.zeros(n)
    for i in range(m):
        for j in range(n):
            sflow[i] += f[i, j]
            tflow[j] += f[i, j]
    for _ in range(N + 1):
        changed = False
        # s <-> resources
        for i in range(m):
            if sflow[i] < c[i] - eps and pot[s] < pot[i] - 1e-13:
                pot[i] = pot[s]
                changed = True
            if sflow[i] > eps and pot[i] < pot[s] - 1e-13:
                pot[s] = pot[i]
                changed = True
        for i in range(m):
            for j in range(n):
                v = m + j
                if f[i, j] < cap[i, j] - eps and pot[i] - p[i, j] < pot[v] - 1e-13:
                    pot[v] = pot[i] - p[i, j]
                    changed = True
                if f[i, j] > eps and pot[v] + p[i, j] < pot[i] - 1e-13:
                    pot[i] = pot[v] + p[i, j]
                    changed = True
        for j in range(n):
            v = m + j
            if tflow[j] < d[j] - eps and pot[v] < pot[t] - 1e-13:
                pot[t] = pot[v]
                changed = True
            if tflow[j] > eps and pot[t] < pot[v] - 1e-13:
                pot[v] = pot[t]
                changed = True
        # disposal arc t -> s, and its reverse while flow circulates
        if pot[t] < pot[s] - 1e-13:
            pot[s] = pot[t]
            changed = True
        if total > eps and pot[s] < pot[t] - 1e-13:
            pot[t] = pot[s]
            changed = True
        if not changed:
            break
    u = np.empty(m)
    vv = np.empty(n)
    y = np.empty((m, n))
    for i in range(m):
        u[i] = max(0.0, pot[i] - pot[s])
    for j in range(n):
        vv[j] = max(0.0, pot[t] - pot[m + j])
    for i in range(m):
        for j in range(n):
            y[i, j] = max(0.0, p[i, j] - pot[i] + pot[m + j])
    return u, vv, y


@njit(cache=True)
def _bounds(c, dvec, F, cap):
    m, n = cap.shape
    for i in range(m):
        for j in range(n):
            cap[i, j] = min(c[i], dvec[j]) * F[i, j]


@njit(cache=True)
def batch_profits(p, c, D, F):
    """P(d, F) for every row of ``D``; ``F`` may be fractional (bounds scale by F)."""
    m, n = p.shape
    omega = D.shape[0]
    out = np.empty(omega)
    cap = np.empty((m, n))
    f = np.empty((m, n))
    for w in range(omega):
        _bounds(c, D[w], F, cap)
        out[w] = solve_flow(p, c, D[w], cap, f)
    return out


@njit(cache=True)
def batch_profits_many(p, c, D, Fs):
    """Profit matrix of shape (networks, samples)."""
    B = Fs.shape[0]
    out = np.empty((B, D.shape[0]))
    for b in range(B):
        out[b] = batch_profits(p, c, D, Fs[b])
    return out


@njit(cache=True)
def batch_supergradient(p, c, D, F):
    """Per-sample profits and the sample-mean supergradient M*y wrt ``F``."""
    m, n = p.shape
    omega = D.shape[0]
    vals = np.empty(omega)
    g = np.zeros((m, n))
    cap = np.empty((m, n))
    f = np.empty((m, n))
    for w in range(omega):
        _bounds(c, D[w], F, cap)
        vals[w] = solve_flow(p, c, D[w], cap, f)
        u, v, y = flow_duals(p, c, D[w], cap, f)
        for i in range(m):
            for j in range(n):
                g[i, j] += min(c[i], D[w, j]) * y[i, j]
    for i in range(m):
        for j in range(n):
            g[i, j] /= omega
    return vals, g


@njit(cache=True)
def paired_profits(p, c, Ds, Fs):
    """Profits of network ``Fs[b]`` on its own sample block ``Ds[b]``; shape (B, omega)."""
    B = Fs.shape[0]
    out = np.empty((B, Ds.shape[1]))
    for b in range(B):
        out[b] = batch_profits(p, c, Ds[b], Fs[b])
    return out
