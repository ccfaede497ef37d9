"""Univariate slice sampling and particle-set augmentation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

MAX_SHRINK = 60


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for a (seed, node, iteration, ...) counter tuple."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, keys)])))


def slice_sample(
    current: float,
    log_density: Callable[[float], float],
    width: float,
    max_steps: int,
    rng: np.random.Generator,
) -> float:
    """One step-out / shrinkage slice-sampling update of a scalar."""
    if width <= 0:
        return current
    log_y = log_density(current) + np.log(rng.random())
    left = current - width * rng.random()
    right = left + width
    steps_left = int(max_steps * rng.random())
    steps_right = max_steps - 1 - steps_left
    while steps_left > 0 and log_density(left) > log_y:
        left -= width
        steps_left -= 1
    while steps_right > 0 and log_density(right) > log_y:
        right += width
        steps_right -= 1
    for _ in range(MAX_SHRINK):
        proposal = left + (right - left) * rng.random()
        if log_density(proposal) > log_y:
            return proposal
        if proposal < current:
            left = proposal
        else:
            right = proposal
    return current


class _UniformStreams:
    """Per-row uniform streams consumed independently by each row."""

    def __init__(self, generators: Sequence[np.random.Generator], block: int = 256):
        self.generators = list(generators)
        self.block = block
        self.buffer = np.stack([g.random(block) for g in self.generators])
        self.ptr = np.zeros(len(self.generators), dtype=np.int64)

    def draw(self, rows: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        if len(rows) and np.any(self.ptr[rows] >= self.block):
            for r in rows[self.ptr[rows] >= self.block]:
                self.buffer[r] = self.generators[r].random(self.block)
                self.ptr[r] = 0
        out = self.buffer[rows, self.ptr[rows]]
        self.ptr[rows] += 1
        return out


def slice_sample_batch(
    current: np.ndarray,
    log_density: Callable[[np.ndarray], np.ndarray],
    widths: np.ndarray,
    max_steps: int,
    generators: Sequence[np.random.Generator],
    sweeps: int,
) -> np.ndarray:
    """Coordinate-wise slice sampling of ``N`` independent chains at once.

    ``log_density(rows, states)`` returns the log density of chain
    ``rows[k]`` at ``states[k]``. Each chain draws its randomness from its
    own generator, so the result does not depend on batching. Returns the
    chain states after each full sweep, shape ``(sweeps, N, D)``.
    """
    x = np.array(current, dtype=float)
    n, dim = x.shape
    widths = np.broadcast_to(np.asarray(widths, dtype=float), (dim,))
    streams = _UniformStreams(generators)
    rows_all = np.arange(n)
    out = np.empty((sweeps, n, dim))
    logp = log_density(rows_all, x)
    for sweep in range(sweeps):
        for d in range(dim):
            w = widths[d]
            if w <= 0:
                continue
            log_y = logp + np.log(streams.draw(rows_all))
            left = x[:, d] - w * streams.draw(rows_all)
            right = left + w
            steps_left = (max_steps * streams.draw(rows_all)).astype(int)
            steps_right = max_steps - 1 - steps_left

            def eval_at(rows, values):
                trial = x[rows].copy()
                trial[:, d] = values
                return log_density(rows, trial)

            active = rows_all[steps_left > 0]
            while len(active):
                grow = eval_at(active, left[active]) > log_y[active]
                active = active[grow]
                left[active] -= w
                steps_left[active] -= 1
                active = active[steps_left[active] > 0]
            active = rows_all[steps_right > 0]
            while len(active):
                grow = eval_at(active, right[active]) > log_y[active]
                active = active[grow]
                right[active] += w
                steps_right[active] -= 1
                active = active[steps_right[active] > 0]

            pending = rows_all.copy()
            new_vals = x[:, d].copy()
            new_logp = logp.copy()
            for _ in range(MAX_SHRINK):
                if not len(pending):
                    break
                prop = left[pending] + (right[pending] - left[pending]) * streams.draw(pending)
                lp = eval_at(pending, prop)
                accept = lp > log_y[pending]
                acc_rows = pending[accept]
                new_vals[acc_rows] = prop[accept]
                new_logp[acc_rows] = lp[accept]
                rej = pending[~accept]
                below = prop[~accept] < x[rej, d]
                left[rej[below]] = prop[~accept][below]
                right[rej[~below]] = prop[~accept][~below]
                pending = rej
            x[:, d] = new_vals
            logp = new_logp
        out[sweep] = x
    return out


@dataclass
class ParticleSet:
    node_id: int
    particles: np.ndarray  # (P, D)

    def __post_init__(self):
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        if len(self.particles) == 0:
            raise ValueError("particle set must not be empty")

    def __len__(self):
        return len(self.particles)


def deduplicate(states: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Drop states within ``tol`` (max-norm) of any earlier state, keeping order."""
    states = np.atleast_2d(states)
    diff = np.max(np.abs(states[:, None, :] - states[None, :, :]), axis=-1)
    dup = np.any(np.tril(diff <= tol, k=-1), axis=1)
    return states[~dup]


def augment_particles(
    base: ParticleSet,
    neighbor_states: Sequence[np.ndarray],
    context,
    k: int,
    current: np.ndarray | None = None,
) -> ParticleSet:
    """Union of the sampled set, neighbour positions and the k nearest feasibility points.

    Neighbour positions and feasibility points replace only the position
    part of ``current``; extra state components (MRF1's ``d``) are kept.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    base_p = base.particles
    dim = base_p.shape[1]
    current = base_p[0] if current is None else np.asarray(current, dtype=float)

    def with_position(pos):
        s = current.copy()
        s[:3] = np.asarray(pos, dtype=float)[:3]
        return s

    extra = [with_position(n) for n in neighbor_states]
    if k > 0 and context is not None and len(context.feasibility_points):
        extra += [with_position(p) for p in context.knn(current[:3], k)]
    if extra:
        merged = np.vstack([base_p, np.array(extra).reshape(-1, dim)])
    else:
        merged = base_p
    return ParticleSet(base.node_id, deduplicate(merged))
