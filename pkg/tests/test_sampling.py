import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from helpers import straight_context

from tapetrack.mrf.sampling import (
    ParticleSet,
    augment_particles,
    deduplicate,
    slice_sample,
    slice_sample_batch,
    substream,
)


def uniform_log_density(x):
    return 0.0 if 0.0 <= x <= 1.0 else -np.inf


def gaussian_log_density(x):
    return -0.5 * x * x


def run_chain(log_density, n, width, seed, start=0.5):
    rng = substream(seed, 0)
    x, out = start, []
    for _ in range(n):
        x = slice_sample(x, log_density, width, 8, rng)
        out.append(x)
    return np.array(out)


def test_uniform_target_ks():
    draws = run_chain(uniform_log_density, 4000, 0.5, 1)[::2]
    assert stats.kstest(draws, "uniform").statistic < 0.05


def test_gaussian_target_mean_and_spread():
    draws = run_chain(gaussian_log_density, 10_000, 2.0, 2, start=0.0)
    assert abs(draws.mean()) < 0.05
    assert abs(draws.std() - 1.0) < 0.05


def test_zero_width_keeps_state():
    assert slice_sample(0.3, gaussian_log_density, 0.0, 8, substream(0)) == 0.3


def test_samples_stay_in_support():
    draws = run_chain(uniform_log_density, 500, 5.0, 3)
    assert np.all((draws >= 0) & (draws <= 1))


def test_substreams_are_reproducible_and_distinct():
    assert np.array_equal(substream(4, 1, 2).random(5), substream(4, 1, 2).random(5))
    assert not np.array_equal(substream(4, 1, 2).random(5), substream(4, 2, 1).random(5))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(1, 5))
def test_batch_matches_scalar_chains(seed, n_chains, sweeps):
    starts = np.linspace(-1, 1, n_chains)[:, None]
    batch = slice_sample_batch(
        starts,
        lambda rows, x: -0.5 * x[:, 0] ** 2,
        [1.5],
        8,
        [substream(seed, r) for r in range(n_chains)],
        sweeps,
    )
    for r in range(n_chains):
        rng = substream(seed, r)
        x = starts[r, 0]
        for s in range(sweeps):
            x = slice_sample(x, gaussian_log_density, 1.5, 8, rng)
            assert batch[s, r, 0] == pytest.approx(x, abs=1e-12)


def test_batch_is_independent_of_other_chains():
    dens = lambda rows, x: -0.5 * np.sum(x**2, axis=1)
    gens = lambda: [substream(9, r) for r in range(4)]
    full = slice_sample_batch(np.zeros((4, 2)), dens, [1.0, 1.0], 8, gens(), 3)
    alone = slice_sample_batch(np.zeros((1, 2)), dens, [1.0, 1.0], 8, [substream(9, 2)], 3)
    assert np.array_equal(full[:, 2], alone[:, 0])


# --- augmentation -------------------------------------------------------------


def test_augmented_count_and_members():
    rng = np.random.default_rng(0)
    base = ParticleSet(0, rng.normal(size=(20, 4)))
    F = rng.normal(size=(40, 3)) * 30
    ctx = straight_context(F)
    neighbours = [rng.normal(size=4) * 10 for _ in range(4)]
    current = base.particles[0]
    aug = augment_particles(base, neighbours, ctx, 3, current=current)
    assert len(aug) == 27
    nearest = F[np.argsort(np.linalg.norm(F - current[:3], axis=1))[:3]]
    got = aug.particles[-3:]
    assert np.allclose(got[:, :3], nearest)
    assert np.all(got[:, 3] == current[3])
    for n, row in zip(neighbours, aug.particles[20:24]):
        assert np.allclose(row[:3], n[:3]) and row[3] == current[3]


def test_no_neighbours_and_k_zero_is_identity():
    base = ParticleSet(1, np.arange(12.0).reshape(3, 4))
    aug = augment_particles(base, [], straight_context(), 0)
    assert np.array_equal(aug.particles, base.particles)


def test_negative_k():
    with pytest.raises(ValueError):
        augment_particles(ParticleSet(0, np.zeros((1, 3))), [], None, -1)


def test_empty_particle_set():
    with pytest.raises(ValueError):
        ParticleSet(0, np.zeros((0, 3)))


def test_deduplicate_keeps_first_occurrence():
    s = np.array([[0.0, 0], [1, 1], [0, 0], [1, 1 + 1e-12], [2, 2]])
    assert np.array_equal(deduplicate(s), [[0, 0], [1, 1], [2, 2]])
