"""Independent reference implementations used as test oracles."""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np


def _popcounts(m):
    masks = np.arange(1 << m, dtype=np.int64)
    counts = np.zeros(len(masks), dtype=np.int64)
    for b in range(m):
        counts += (masks >> b) & 1
    return masks, counts


def enumerate_selection(costs, neighbor_sets, exclusivity, target, bounds=(6, 12), _cache=None):
    """Exhaustive optimum over all index sets of exactly ``target`` edges.

    Feasibility is evaluated on bitmasks for every subset of that size at
    once; exact rational sums decide among the near-optimal survivors, ties
    go to the lexicographically smallest index tuple. Returns
    ``(objective, indices)`` or None when infeasible.
    """
    m = len(costs)
    lo, hi = bounds
    if target == 0:
        return 0.0, ()
    if target > m:
        return None
    masks, counts = _cache if _cache is not None else _popcounts(m)
    masks = masks[counts == target]
    bits = ((masks[:, None] >> np.arange(m)) & 1).astype(bool)
    ok = np.ones(len(masks), dtype=bool)
    for e in range(m):
        nb = np.zeros(m, dtype=bool)
        nb[list(neighbor_sets[e])] = True
        deg = bits[:, nb].sum(axis=1)
        ok &= ~bits[:, e] | ((deg >= lo) & (deg <= hi))
    for a, b in exclusivity:
        ok &= ~(bits[:, a] & bits[:, b])
    if not ok.any():
        return None
    approx = bits[ok] @ np.asarray(costs, dtype=float)
    near = np.flatnonzero(approx <= approx.min() + 1e-6 * max(1.0, abs(approx.min())))
    exact = [Fraction(c) for c in costs]
    best = None
    for k in near:
        combo = tuple(np.flatnonzero(bits[ok][k]).tolist())
        key = (sum(exact[e] for e in combo), combo)
        if best is None or key < best:
            best = key
    return math.fsum(costs[e] for e in best[1]), best[1]


def enumerate_with_relaxation(costs, neighbor_sets, exclusivity, n_e, floor_fraction=0.5):
    """Largest feasible target from ``n_e`` down to the floor, with its optimum."""
    cache = _popcounts(len(costs))
    for target in range(n_e, math.floor(floor_fraction * n_e) - 1, -1):
        res = enumerate_selection(costs, neighbor_sets, exclusivity, target, _cache=cache)
        if res is not None:
            return target, res
    return None


def brute_force_distance_transform(mask):
    """Euclidean distance from every pixel to the nearest True pixel, O(N^2)."""
    mask = np.asarray(mask, dtype=bool)
    on = np.argwhere(mask)
    out = np.zeros(mask.shape)
    for r in range(mask.shape[0]):
        for c in range(mask.shape[1]):
            d = np.sqrt(((on - (r, c)) ** 2).sum(axis=1))
            out[r, c] = d.min()
    return out


def enumerate_min_energy(unary, pair, edges):
    """Product-space minimisation: unary[s][i], pair[k][i, j] for edges[k] = (s, t)."""
    sizes = [len(u) for u in unary]
    best = None
    for combo in itertools.product(*[range(s) for s in sizes]):
        e = sum(unary[s][combo[s]] for s in range(len(sizes)))
        e += sum(pair[k][combo[s], combo[t]] for k, (s, t) in enumerate(edges))
        if best is None or e < best[0]:
            best = (e, combo)
    return best


def oracle_normal(context, point):
    """Field normal made orthogonal to the curve tangent, recomputed from raw samples."""
    f = context.normals
    w = np.exp(-np.sum((f.positions - point) ** 2, axis=1) / (2 * f.smoothing_radius**2))
    n = (w[:, None] * f.normals).sum(axis=0)
    n /= np.linalg.norm(n)
    c = context.curve
    t = (point - c.origin) @ c.axis
    der = c.coeffs @ np.array([0.0, 1.0, 2 * t, 3 * t * t])
    tan = der / np.linalg.norm(der)
    n = n - (n @ tan) * tan
    return n / np.linalg.norm(n)


def oracle_mrf1_binary(s, t, length_e, params, context):
    p = s[:3] - t[:3]
    L = np.sqrt(p @ p)
    n = oracle_normal(context, 0.5 * (s[:3] + t[:3]))
    terms = [
        params.theta1 * (L - s[3] * length_e / params.d_reference) ** 2,
        params.theta2 * (p @ n) ** 2,
        params.theta3 * np.exp(params.d_min - L) ** 2 if L < params.d_min else 0.0,
        params.theta4 * (L - length_e) ** 2,
    ]
    return sum(terms)


def oracle_mrf1_total(X, topo, params, context):
    F = context.feasibility_points
    total = sum(min(np.sqrt(((x[:3] - F) ** 2).sum(axis=1))) for x in X)
    for e in topo.all_edges:
        total += oracle_mrf1_binary(X[e.i], X[e.j], e.length, params, context)
        total += oracle_mrf1_binary(X[e.j], X[e.i], e.length, params, context)
    return total
