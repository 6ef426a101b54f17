"""Exact discrete optimal transport.

The solver is a primal network simplex on the bipartite transportation graph.
It starts from an artificial basis in which every node hangs off an extra
root through a high-cost arc. By default entering arcs come from block-search
pricing, and the leaving arc is chosen so the spanning tree stays strongly
feasible, which prevents cycling on degenerate instances. The "bland" mode
picks the smallest-index entering and leaving arcs instead, and also takes
over if a default solve runs past a generous pivot cap. The pivoting kernel is
compiled with numba.
"""

import itertools

import numba
import numpy as np

from deepjdot.errors import (
    InvalidInputError,
    InvalidMeasureError,
    ShapeError,
    UnsupportedInstanceError,
)

MASS_TOL = 1e-6
BRUTE_FORCE_MAX_N = 8


class DiscreteMeasure:
    """Probability weights over a finite support.

    Weights whose total drifts from 1 by at most ``MASS_TOL`` are
    renormalized; larger deviations are rejected. Zero weights are kept.
    """

    __slots__ = ("_weights",)

    def __init__(self, weights):
        w = np.array(weights, dtype=np.float64).reshape(-1)
        if w.size == 0:
            raise InvalidMeasureError("measure has empty support")
        if not np.all(np.isfinite(w)):
            raise InvalidMeasureError("measure weights must be finite")
        if np.any(w < 0):
            raise InvalidMeasureError("measure weights must be nonnegative")
        total = w.sum()
        if abs(total - 1.0) > MASS_TOL:
            raise InvalidMeasureError(f"measure weights sum to {total!r}, expected 1")
        w = w / total
        w.flags.writeable = False
        self._weights = w

    @classmethod
    def uniform(cls, n):
        if n < 1:
            raise InvalidMeasureError("support size must be positive")
        return cls(np.full(n, 1.0 / n))

    @property
    def weights(self):
        return self._weights

    @property
    def n(self):
        return self._weights.size

    def is_uniform(self, tol=1e-12):
        return bool(np.all(np.abs(self._weights - 1.0 / self.n) <= tol))

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"DiscreteMeasure(n={self.n})"


def as_measure(mu):
    if isinstance(mu, DiscreteMeasure):
        return mu
    return DiscreteMeasure(mu)


def _check_cost(cost, n1, n2):
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape != (n1, n2):
        raise ShapeError(f"cost has shape {c.shape}, expected ({n1}, {n2})")
    if not np.all(np.isfinite(c)):
        raise InvalidInputError("cost matrix contains NaN or infinite entries")
    if np.any(c < 0):
        raise InvalidInputError("cost matrix entries must be nonnegative")
    return np.ascontiguousarray(c)


# Arc layout: 0..n1*n2-1 are the real arcs source i -> sink j (row-major);
# then one artificial arc per source (source -> root) and per sink
# (root -> sink, or sink -> root when the sink has zero mass). Node layout:
# sources 0..n1-1, sinks n1..n1+n2-1, artificial root n1+n2.

PIVOT_BLOCK = 0
PIVOT_BLAND = 1


@numba.njit(cache=True)
def _build_tree(n_nodes, root, basis, arc_src, arc_dst, cost, parent, pred, depth, order, pot, deg, start, fill, adj):
    # Rebuild parent/depth/BFS order and potentials (pot[dst] = pot[src] + cost).
    n_tree = n_nodes - 1
    for x in range(n_nodes):
        deg[x] = 0
    for t in range(n_tree):
        e = basis[t]
        deg[arc_src[e]] += 1
        deg[arc_dst[e]] += 1
    start[0] = 0
    for x in range(n_nodes):
        start[x + 1] = start[x] + deg[x]
        fill[x] = start[x]
    for t in range(n_tree):
        e = basis[t]
        s = arc_src[e]
        d = arc_dst[e]
        adj[fill[s]] = e
        fill[s] += 1
        adj[fill[d]] = e
        fill[d] += 1
    for x in range(n_nodes):
        depth[x] = -1
    depth[root] = 0
    pot[root] = 0.0
    parent[root] = -1
    pred[root] = -1
    order[0] = root
    head = 0
    tail = 1
    while head < tail:
        x = order[head]
        head += 1
        for p in range(start[x], start[x + 1]):
            e = adj[p]
            s = arc_src[e]
            d = arc_dst[e]
            y = d if s == x else s
            if depth[y] >= 0:
                continue
            depth[y] = depth[x] + 1
            parent[y] = x
            pred[y] = e
            if y == d:
                pot[y] = pot[x] + cost[e]
            else:
                pot[y] = pot[x] - cost[e]
            order[tail] = y
            tail += 1


@numba.njit(cache=True)
def _unlink(x, parent, first_child, next_sib, prev_sib):
    p = parent[x]
    if prev_sib[x] >= 0:
        next_sib[prev_sib[x]] = next_sib[x]
    else:
        first_child[p] = next_sib[x]
    if next_sib[x] >= 0:
        prev_sib[next_sib[x]] = prev_sib[x]
    next_sib[x] = -1
    prev_sib[x] = -1


@numba.njit(cache=True)
def _link(x, p, parent, first_child, next_sib, prev_sib):
    parent[x] = p
    prev_sib[x] = -1
    next_sib[x] = first_child[p]
    if first_child[p] >= 0:
        prev_sib[first_child[p]] = x
    first_child[p] = x


@numba.njit(cache=True)
def _network_simplex(c, a, b, tol, rule, soft_cap, hard_cap):
    n1 = a.size
    n2 = b.size
    n_real = n1 * n2
    n_nodes = n1 + n2 + 1
    root = n1 + n2
    n_arcs = n_real + n1 + n2

    arc_src = np.empty(n_arcs, dtype=np.int64)
    arc_dst = np.empty(n_arcs, dtype=np.int64)
    cost = np.empty(n_arcs, dtype=np.float64)
    flow = np.zeros(n_arcs, dtype=np.float64)
    cmax = 0.0
    for i in range(n1):
        for j in range(n2):
            e = i * n2 + j
            arc_src[e] = i
            arc_dst[e] = n1 + j
            cost[e] = c[i, j]
            if c[i, j] > cmax:
                cmax = c[i, j]
    art_cost = (cmax + 1.0) * (n1 + n2)
    basis = np.empty(n_nodes - 1, dtype=np.int64)
    for i in range(n1):
        e = n_real + i
        arc_src[e] = i
        arc_dst[e] = root
        cost[e] = art_cost
        flow[e] = a[i]
        basis[i] = e
    for j in range(n2):
        e = n_real + n1 + j
        if b[j] > 0.0:
            arc_src[e] = root
            arc_dst[e] = n1 + j
        else:
            arc_src[e] = n1 + j
            arc_dst[e] = root
        cost[e] = art_cost
        flow[e] = b[j]
        basis[n1 + j] = e

    parent = np.empty(n_nodes, dtype=np.int64)
    pred = np.empty(n_nodes, dtype=np.int64)
    depth = np.empty(n_nodes, dtype=np.int64)
    order = np.empty(n_nodes, dtype=np.int64)
    pot = np.empty(n_nodes, dtype=np.float64)
    deg = np.empty(n_nodes, dtype=np.int64)
    start = np.empty(n_nodes + 1, dtype=np.int64)
    fill = np.empty(n_nodes, dtype=np.int64)
    adj = np.empty(2 * (n_nodes - 1), dtype=np.int64)
    slot = np.full(n_arcs, -1, dtype=np.int64)
    for t in range(n_nodes - 1):
        slot[basis[t]] = t

    block = max(int(np.sqrt(n_arcs)), 10)
    pos = 0
    pivots = 0
    _build_tree(n_nodes, root, basis, arc_src, arc_dst, cost, parent, pred, depth, order, pot, deg, start, fill, adj)
    first_child = np.full(n_nodes, -1, dtype=np.int64)
    next_sib = np.full(n_nodes, -1, dtype=np.int64)
    prev_sib = np.full(n_nodes, -1, dtype=np.int64)
    for p in range(1, n_nodes):
        x = order[p]
        _link(x, parent[x], parent, first_child, next_sib, prev_sib)
    stack = np.empty(n_nodes, dtype=np.int64)

    while True:

        enter = -1
        if rule == PIVOT_BLAND:
            # Smallest arc index with negative reduced cost.
            for e in range(n_arcs):
                if slot[e] < 0 and cost[e] + pot[arc_src[e]] - pot[arc_dst[e]] < -tol:
                    enter = e
                    break
        else:
            # Block search: most negative reduced cost within a block of
            # arcs, resuming where the previous search stopped.
            best = -tol
            scanned = 0
            in_block = 0
            e = pos
            while scanned < n_arcs:
                if slot[e] < 0:
                    r = cost[e] + pot[arc_src[e]] - pot[arc_dst[e]]
                    if r < best:
                        best = r
                        enter = e
                e += 1
                if e == n_arcs:
                    e = 0
                scanned += 1
                in_block += 1
                if in_block == block:
                    if enter >= 0:
                        break
                    in_block = 0
            pos = e
        if enter < 0:
            break
        pivots += 1
        if pivots > hard_cap:
            return flow, -1
        if pivots > soft_cap:
            rule = PIVOT_BLAND

        # Flow is pushed first -> second along the entering arc and returns
        # second -> join -> first through the tree.
        first = arc_src[enter]
        second = arc_dst[enter]
        x = first
        y = second
        while x != y:
            if depth[x] >= depth[y]:
                x = parent[x]
            else:
                y = parent[y]
        join = x

        delta = np.inf
        u_out = -1
        if rule == PIVOT_BLAND:
            for u in (first, second):
                w = u
                while w != join:
                    e = pred[w]
                    toward_parent = arc_src[e] == w
                    if toward_parent == (u == first):
                        if flow[e] < delta:
                            delta = flow[e]
                    w = parent[w]
            leave_id = n_arcs
            for u in (first, second):
                w = u
                while w != join:
                    e = pred[w]
                    toward_parent = arc_src[e] == w
                    if toward_parent == (u == first) and flow[e] <= delta and e < leave_id:
                        leave_id = e
                        u_out = w
                    w = parent[w]
        else:
            # Strongly feasible rule: the last blocking arc met when walking
            # the cycle from the join node in the direction of flow.
            w = first
            while w != join:
                e = pred[w]
                if arc_src[e] == w and flow[e] < delta:
                    delta = flow[e]
                    u_out = w
                w = parent[w]
            w = second
            while w != join:
                e = pred[w]
                if arc_dst[e] == w and flow[e] <= delta:
                    delta = flow[e]
                    u_out = w
                w = parent[w]

        w = first
        while w != join:
            e = pred[w]
            if arc_src[e] == w:
                flow[e] = max(flow[e] - delta, 0.0)
            else:
                flow[e] += delta
            w = parent[w]
        w = second
        while w != join:
            e = pred[w]
            if arc_dst[e] == w:
                flow[e] = max(flow[e] - delta, 0.0)
            else:
                flow[e] += delta
            w = parent[w]
        leave = pred[u_out]
        flow[enter] = delta
        flow[leave] = 0.0
        t = slot[leave]
        basis[t] = enter
        slot[enter] = t
        slot[leave] = -1

        # The subtree under u_out is cut off and re-hung from the entering
        # arc; only its parents, depths and potentials change.
        on_first = False
        w = first
        while w != join:
            if w == u_out:
                on_first = True
                break
            w = parent[w]
        r_in = cost[enter] + pot[first] - pot[second]
        if on_first:
            q = first
            p_out = second
            sigma = -r_in
        else:
            q = second
            p_out = first
            sigma = r_in
        _unlink(u_out, parent, first_child, next_sib, prev_sib)
        w = q
        prev_node = -1
        prev_arc = enter
        while True:
            up = parent[w]
            up_arc = pred[w]
            if w != u_out:
                _unlink(w, parent, first_child, next_sib, prev_sib)
            if prev_node < 0:
                _link(w, p_out, parent, first_child, next_sib, prev_sib)
            else:
                _link(w, prev_node, parent, first_child, next_sib, prev_sib)
            pred[w] = prev_arc
            if w == u_out:
                break
            prev_node = w
            prev_arc = up_arc
            w = up
        top = 0
        stack[0] = q
        while top >= 0:
            x = stack[top]
            top -= 1
            depth[x] = depth[parent[x]] + 1
            pot[x] += sigma
            ch = first_child[x]
            while ch >= 0:
                top += 1
                stack[top] = ch
                ch = next_sib[ch]

    # Recompute tree flows from the node supplies by leaf elimination so the
    # marginals hold to rounding regardless of accumulated pivot error.
    _build_tree(n_nodes, root, basis, arc_src, arc_dst, cost, parent, pred, depth, order, pot, deg, start, fill, adj)
    excess = np.zeros(n_nodes, dtype=np.float64)
    for i in range(n1):
        excess[i] = a[i]
    for j in range(n2):
        excess[n1 + j] = -b[j]
    for e in range(n_arcs):
        if slot[e] < 0:
            flow[e] = 0.0
    for p in range(n_nodes - 1, 0, -1):
        x = order[p]
        e = pred[x]
        if arc_src[e] == x:
            flow[e] = excess[x]
        else:
            flow[e] = -excess[x]
        excess[parent[x]] += excess[x]
    return flow, pivots


_RULES = {"block": PIVOT_BLOCK, "bland": PIVOT_BLAND}


def solve_exact_ot(cost, mu, nu, pivot_rule="block"):
    """Return an optimal coupling for ``min <gamma, cost>`` with marginals ``mu``, ``nu``.

    ``mu`` and ``nu`` may be :class:`DiscreteMeasure` instances or weight
    vectors. The result is a basic solution: at most ``n1 + n2 - 1``
    nonzero entries, all entries nonnegative.

    ``pivot_rule`` is ``"block"`` (block-search pricing on a strongly
    feasible tree, the fast default) or ``"bland"`` (smallest-index entering
    and leaving arcs).
    """
    mu = as_measure(mu)
    nu = as_measure(nu)
    c = _check_cost(cost, mu.n, nu.n)
    if pivot_rule not in _RULES:
        raise ValueError(f"unknown pivot rule {pivot_rule!r}")
    scale = float(c.max())
    tol = 1e-12 * max(scale, 1e-300)
    size = mu.n * nu.n + mu.n + nu.n
    soft_cap = 50 * size
    hard_cap = soft_cap + 1000 * size
    flow, pivots = _network_simplex(
        c, mu.weights, nu.weights, tol, _RULES[pivot_rule], soft_cap, hard_cap
    )
    if pivots < 0:
        raise RuntimeError("network simplex exceeded its pivot budget")
    gamma = flow[: mu.n * nu.n].reshape(mu.n, nu.n)
    return np.maximum(gamma, 0.0)


def transport_cost(gamma, cost):
    """Frobenius inner product of a coupling and a cost matrix."""
    g = np.asarray(gamma, dtype=np.float64)
    c = np.asarray(cost, dtype=np.float64)
    if g.shape != c.shape or g.ndim != 2:
        raise ShapeError(f"coupling shape {g.shape} does not match cost shape {c.shape}")
    return float(np.sum(g * c))


def marginal_violation(gamma, mu, nu):
    """Largest row-sum and column-sum deviations from the two marginals."""
    mu = as_measure(mu)
    nu = as_measure(nu)
    g = np.asarray(gamma, dtype=np.float64)
    if g.shape != (mu.n, nu.n):
        raise ShapeError(f"coupling shape {g.shape}, expected ({mu.n}, {nu.n})")
    rows = float(np.max(np.abs(g.sum(axis=1) - mu.weights)))
    cols = float(np.max(np.abs(g.sum(axis=0) - nu.weights)))
    return rows, cols


def brute_force_ot(cost, mu, nu):
    """Exact optimum by enumerating permutations (uniform, square, n <= 8 only).

    The vertices of the uniform-marginal transport polytope are scaled
    permutation matrices, so the minimum over permutations is the optimum.
    """
    mu = as_measure(mu)
    nu = as_measure(nu)
    if mu.n != nu.n:
        raise UnsupportedInstanceError("brute force needs equal support sizes")
    if mu.n > BRUTE_FORCE_MAX_N:
        raise UnsupportedInstanceError(f"brute force limited to n <= {BRUTE_FORCE_MAX_N}")
    if not (mu.is_uniform() and nu.is_uniform()):
        raise UnsupportedInstanceError("brute force needs uniform marginals")
    c = _check_cost(cost, mu.n, nu.n)
    n = mu.n
    rows = np.arange(n)
    best = np.inf
    for perm in itertools.permutations(range(n)):
        total = c[rows, perm].sum()
        if total < best:
            best = total
    return float(best / n)
