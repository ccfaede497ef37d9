"""Max-product particle belief propagation with slice-sampled particle sets.

Energies are minimised, so "max-product" is run in its min-sum form:
messages carry the smallest achievable energy of the sender's side.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from tapetrack.mrf.energies import EnergyModel, MRFParams
from tapetrack.mrf.sampling import ParticleSet, augment_particles, slice_sample_batch, substream

logger = logging.getLogger(__name__)


@dataclass
class PBPResult:
    states: np.ndarray
    energy: float
    energy_trace: list[float] = field(default_factory=list)
    iterations: int = 0


# ---------------------------------------------------------------------------
# Fixed particle sets
# ---------------------------------------------------------------------------


def _adjacency(n_nodes: int, edges: np.ndarray) -> list[list[tuple[int, int, bool]]]:
    """Per node: (edge index, other node, node is the edge's first end)."""
    adj: list[list[tuple[int, int, bool]]] = [[] for _ in range(n_nodes)]
    for k, (s, t) in enumerate(edges):
        adj[s].append((k, int(t), True))
        adj[t].append((k, int(s), False))
    return adj


def max_product(
    unary_tables: Sequence[np.ndarray],
    pair_tables: Sequence[np.ndarray],
    edges,
    sweeps: int | None = None,
) -> np.ndarray:
    """Particle index per node minimising unary + pairwise table energy.

    ``pair_tables[k][a, b]`` is the energy of edge ``k = (s, t)`` with node
    ``s`` on particle ``a`` and ``t`` on particle ``b``. Messages are
    updated synchronously for ``sweeps`` rounds (default: node count, which
    is enough for convergence on forests), then decoded by walking each
    connected component breadth-first from its lowest node and fixing every
    node given its already decoded parent. On forests this recovers an
    exact minimiser.
    """
    unary = [np.asarray(u, dtype=float) for u in unary_tables]
    n = len(unary)
    edges = np.asarray(edges, dtype=int).reshape(-1, 2)
    pairs = [np.asarray(p, dtype=float) for p in pair_tables]
    if sweeps is None:
        sweeps = max(n, 1)
    adj = _adjacency(n, edges)

    # msg[(k, forward)] : message along edge k; forward means s -> t
    msg = {}
    for k, (s, t) in enumerate(edges):
        msg[(k, True)] = np.zeros(len(unary[t]))
        msg[(k, False)] = np.zeros(len(unary[s]))

    def incoming(node, skip_edge=None):
        total = unary[node].copy()
        for k, other, is_s in adj[node]:
            if k == skip_edge:
                continue
            # message arriving at node: forward when node is t
            total += msg[(k, not is_s)]
        return total

    for _ in range(sweeps):
        new = {}
        for k, (s, t) in enumerate(edges):
            hs = incoming(s, k)
            m = np.min(hs[:, None] + pairs[k], axis=0)
            new[(k, True)] = m - m.min()
            ht = incoming(t, k)
            m = np.min(pairs[k] + ht[None, :], axis=1)
            new[(k, False)] = m - m.min()
        msg = new

    labels = np.full(n, -1, dtype=int)
    for root in range(n):
        if labels[root] >= 0:
            continue
        labels[root] = int(np.argmin(incoming(root)))
        queue = deque([root])
        while queue:
            node = queue.popleft()
            for k, child, is_s in adj[node]:
                if labels[child] >= 0:
                    continue
                local = incoming(child, k)
                if is_s:  # node is s, child is t
                    local = local + pairs[k][labels[node], :]
                else:
                    local = local + pairs[k][:, labels[node]]
                labels[child] = int(np.argmin(local))
                queue.append(child)
    return labels


def table_energy(unary_tables, pair_tables, edges, labels) -> float:
    edges = np.asarray(edges, dtype=int).reshape(-1, 2)
    total = sum(float(u[l]) for u, l in zip(unary_tables, labels))
    for k, (s, t) in enumerate(edges):
        total += float(pair_tables[k][labels[s], labels[t]])
    return total


# ---------------------------------------------------------------------------
# Resampled particle belief propagation
# ---------------------------------------------------------------------------


class _LocalEnergy:
    """Energy of one node's neighbourhood with all neighbours held at ``anchor``."""

    def __init__(self, model: EnergyModel, anchor: np.ndarray):
        self.model = model
        self.anchor = anchor
        n = model.n_nodes
        edges = model.edges
        node = np.concatenate([edges[:, 0], edges[:, 1]]) if len(edges) else np.zeros(0, int)
        other = np.concatenate([edges[:, 1], edges[:, 0]]) if len(edges) else np.zeros(0, int)
        eidx = np.concatenate([np.arange(len(edges))] * 2) if len(edges) else np.zeros(0, int)
        first = np.concatenate([np.ones(len(edges), bool), np.zeros(len(edges), bool)])
        order = np.argsort(node, kind="stable")
        self.other, self.eidx, self.first = other[order], eidx[order], first[order]
        self.degree = np.bincount(node, minlength=n)
        self.offset = np.concatenate([[0], np.cumsum(self.degree)[:-1]])
        self.anchor_f = model.features(anchor)

    def __call__(self, rows: np.ndarray, states: np.ndarray) -> np.ndarray:
        model = self.model
        rows = np.asarray(rows, dtype=int)
        f = model.features(states)
        energy = np.asarray(model.unary_f(rows, states, f), dtype=float).copy()
        counts = self.degree[rows]
        total = int(counts.sum())
        if total:
            owner = np.repeat(np.arange(len(rows)), counts)
            base = np.repeat(self.offset[rows] - np.concatenate([[0], np.cumsum(counts)[:-1]]), counts)
            inc = base + np.arange(total)
            mine = states[owner]
            other = self.other[inc]
            theirs = self.anchor[other]
            first = self.first[inc]
            xs = np.where(first[:, None], mine, theirs)
            xt = np.where(first[:, None], theirs, mine)
            if f is None:
                fs = ft = None
            else:
                f_mine, f_theirs = f[owner], self.anchor_f[other]
                fs = np.where(first, f_mine, f_theirs)
                ft = np.where(first, f_theirs, f_mine)
            pair = model.pair_f(self.eidx[inc], xs, xt, fs, ft)
            energy += np.bincount(owner, weights=pair, minlength=len(rows))
        energy[~model.valid(states)] = np.inf
        return energy


def _tables(model: EnergyModel, particles: list[np.ndarray]):
    feats = [model.features(p) for p in particles]
    unary = [
        np.asarray(model.unary_f(np.full(len(p), i), p, f), dtype=float)
        for i, (p, f) in enumerate(zip(particles, feats))
    ]
    if not len(model.edges):
        return unary, []
    idx, xs, xt, fs, ft, shapes = [], [], [], [], [], []
    for k, (s, t) in enumerate(model.edges):
        ps, pt = particles[s], particles[t]
        a, b = np.meshgrid(np.arange(len(ps)), np.arange(len(pt)), indexing="ij")
        a, b = a.ravel(), b.ravel()
        xs.append(ps[a])
        xt.append(pt[b])
        if feats[s] is not None:
            fs.append(feats[s][a])
            ft.append(feats[t][b])
        idx.append(np.full(a.size, k))
        shapes.append((len(ps), len(pt)))
    flat = model.pair_f(
        np.concatenate(idx),
        np.concatenate(xs),
        np.concatenate(xt),
        np.concatenate(fs) if fs else None,
        np.concatenate(ft) if ft else None,
    )
    pairs, pos = [], 0
    for shape in shapes:
        size = shape[0] * shape[1]
        pairs.append(flat[pos : pos + size].reshape(shape))
        pos += size
    return unary, pairs


def run_pbp(
    model: EnergyModel,
    initial: np.ndarray,
    params: MRFParams,
    iterations: int,
    stream: int | Sequence[int] = 0,
    widths: Sequence[float] | None = None,
) -> PBPResult:
    """Minimise ``model``'s energy starting from ``initial`` node states.

    Each iteration draws ``particle_count`` slice samples per node from
    ``chains_per_node`` short chains started at the best configuration so
    far (neighbours held fixed), adds the
    neighbours' positions and the nearest feasibility points, runs min-sum
    belief propagation on those particle tables and keeps the decoded
    configuration if it lowers the total energy. ``energy_trace`` holds the
    running best after every iteration. ``stream`` (an integer or a tuple
    of integers) separates the random streams of different fields and
    frames sharing one seed.
    """
    best = np.array(initial, dtype=float)
    n, dim = best.shape
    if n != model.n_nodes:
        raise ValueError(f"initial state has {n} nodes, model has {model.n_nodes}")
    best_energy = model.total(best)
    if widths is None:
        widths = np.full(dim, params.slice_width)
    temperature = params.temperature
    keys = tuple(np.atleast_1d(stream).astype(int).tolist())
    chains = max(1, min(params.chains_per_node, params.particle_count))
    sweeps = -(-params.particle_count // chains)
    adj = _adjacency(n, model.edges)
    context = getattr(model, "context", None)
    trace: list[float] = []
    stall = 0
    it = 0
    for it in range(iterations):
        local = _LocalEnergy(model, best)
        # chain (node, replica) sits in row node * chains + replica
        gens = [substream(params.rng_seed, *keys, node, it, r) for node in range(n) for r in range(chains)]
        samples = slice_sample_batch(
            np.repeat(best, chains, axis=0),
            lambda rows, x: -local(rows // chains, x) / temperature,
            widths,
            params.slice_max_steps,
            gens,
            sweeps,
        )
        particles = []
        for node in range(n):
            drawn = samples[:, node * chains : (node + 1) * chains, :].reshape(-1, dim)
            base = ParticleSet(node, np.vstack([best[node][None, :], drawn[: params.particle_count]]))
            neighbours = [best[other] for _, other, _ in adj[node]]
            aug = augment_particles(base, neighbours, context, params.knn_k, current=best[node])
            p = aug.particles
            particles.append(p[model.valid(p)])
        unary, pairs = _tables(model, particles)
        labels = max_product(unary, pairs, model.edges, params.bp_sweeps)
        candidate = np.array([particles[i][labels[i]] for i in range(n)])
        energy = model.total(candidate)
        improvement = best_energy - energy
        if energy < best_energy:
            best, best_energy = candidate, energy
        trace.append(best_energy)
        stall = stall + 1 if improvement < params.tolerance else 0
        if stall >= params.patience:
            break
    logger.debug("pbp stream %s: %d iterations, energy %.6g", stream, it + 1, best_energy)
    return PBPResult(best, float(best_energy), trace, len(trace))
