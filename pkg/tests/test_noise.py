import numpy as np
import pytest

from mvsde import ConfigurationError, NoiseSpec, brownian_increments, standard_normals
from mvsde.noise import _philox_words, increment_matrix, initial_normals


@pytest.fixture(scope="module")
def big_increments():
    # 10^6 independent streams, M=4 steps over T=1, so each increment has
    # variance 1/4.  Shared by the moment and correlation tests below.
    ids = np.arange(10**6, dtype=np.uint64)
    return increment_matrix(20240, ids, 4, 1.0)


class TestPhiloxCore:
    def test_matches_numpy_philox(self):
        # numpy's Philox bit generator is the independent oracle.  It
        # pre-increments its counter, so its counter c compares against our
        # blocks starting at c+1.
        cases = [(123456789, 42, 7, 9), (0, 1, 1, 4), (2**64 - 1, 2**63, 2**62, 6)]
        for seed, stream, start, n in cases:
            mine = _philox_words(seed, np.array([stream], dtype=np.uint64), n, start)[0]
            key = np.array([seed, stream], dtype=np.uint64)
            counter = np.array([start - 1, 0, 0, 0], dtype=np.uint64)
            ref = np.random.Philox(key=key, counter=counter).random_raw(n)
            assert np.array_equal(mine, ref)

    def test_matches_numpy_philox_at_counter_zero(self):
        # Block 0 corresponds to numpy's fully wrapped counter.
        m = 2**64 - 1
        mine = _philox_words(7, np.array([9], dtype=np.uint64), 8, 0)[0]
        ref = np.random.Philox(
            key=np.array([7, 9], dtype=np.uint64),
            counter=np.array([m, m, m, m], dtype=np.uint64),
        ).random_raw(8)
        assert np.array_equal(mine, ref)

    def test_rows_match_single_stream_calls(self):
        ids = np.array([3, 11, 4], dtype=np.uint64)
        mat = increment_matrix(99, ids, 6, 2.0)
        for row, stream in enumerate(ids):
            single = brownian_increments(NoiseSpec(99, int(stream), 6, 2.0))
            assert np.array_equal(mat[row], single)


class TestDeterminism:
    def test_identical_specs_identical_output(self):
        spec = NoiseSpec(seed=42, particle_id=7, steps=16, horizon=1.0)
        assert np.array_equal(brownian_increments(spec), brownian_increments(spec))

    def test_distinct_particles_distinct_streams(self):
        a = brownian_increments(NoiseSpec(1, 0, 8, 1.0))
        b = brownian_increments(NoiseSpec(1, 1, 8, 1.0))
        assert not np.array_equal(a, b)

    def test_initial_draws_disjoint_from_increments(self):
        ids = np.arange(64, dtype=np.uint64)
        init = initial_normals(5, ids)
        first = increment_matrix(5, ids, 1, 1.0)[:, 0]
        assert not np.allclose(init, first)

    def test_spec_validation(self):
        with pytest.raises(ConfigurationError):
            NoiseSpec(seed=-1, particle_id=0, steps=1, horizon=1.0)
        with pytest.raises(ConfigurationError):
            NoiseSpec(seed=0, particle_id=0, steps=0, horizon=1.0)
        with pytest.raises(ConfigurationError):
            NoiseSpec(seed=0, particle_id=0, steps=1, horizon=0.0)


class TestMoments:
    def test_increment_variance(self, big_increments):
        # Var = T/M = 0.25; Monte Carlo check at the stated scale.
        var = big_increments[:, 0].var()
        assert var == pytest.approx(0.25, abs=0.002)

    def test_lag_one_autocorrelation(self, big_increments):
        x = big_increments[:, 0]
        y = big_increments[:, 1]
        rho = np.corrcoef(x, y)[0, 1]
        assert abs(rho) < 0.005

    def test_sum_variance_is_horizon(self, big_increments):
        # Sum of the M increments is W_T, variance T = 1.  Standard error of
        # the sample variance is about T * sqrt(2/n).
        totals = big_increments.sum(axis=1)
        tol = 3.0 * np.sqrt(2.0 / totals.size)
        assert totals.var() == pytest.approx(1.0, abs=tol)

    def test_seed_change_decorrelates(self):
        n = 10**5
        ids = np.arange(n, dtype=np.uint64)
        a = increment_matrix(1, ids, 1, 1.0)[:, 0]
        b = increment_matrix(2, ids, 1, 1.0)[:, 0]
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.01

    def test_particle_shift_decorrelates(self):
        n = 10**5
        a = increment_matrix(3, np.arange(n, dtype=np.uint64), 1, 1.0)[:, 0]
        b = increment_matrix(3, np.arange(1, n + 1, dtype=np.uint64), 1, 1.0)[:, 0]
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.01


class TestStandardNormals:
    def test_length_and_determinism(self):
        z = standard_normals(10, 3, 5)
        assert z.shape == (5,)
        assert np.array_equal(z, standard_normals(10, 3, 5))
        assert standard_normals(10, 3, 0).shape == (0,)

    def test_rejects_negative_count(self):
        with pytest.raises(ConfigurationError):
            standard_normals(10, 3, -1)
