import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pompad import prng
from pompad.errors import DegenerateFilterError
from pompad.resample import offparam_indices, systematic_resample


class TestSystematicExamples:
    def test_equal_weights_hand_case(self):
        # weights (.5, .5), u=0.6 -> grid (0.3, 0.8) -> indices (0, 1)
        idx = systematic_resample(np.log([0.5, 0.5]), 0.6)
        assert idx.tolist() == [0, 1]

    def test_point_mass(self):
        for u in (0.0, 0.31, 0.99):
            idx = systematic_resample(np.log([1.0, 1e-300, 1e-300]), u)
            assert idx.tolist() == [0, 0, 0]

    def test_three_weights_hand_case(self):
        # cumsum (0.1, 0.3, 1.0); grid (1/6, 1/2, 5/6) -> (1, 2, 2)
        idx = systematic_resample(np.log([0.1, 0.2, 0.7]), 0.5)
        assert idx.tolist() == [1, 2, 2]

    def test_all_minus_inf_degenerate(self):
        with pytest.raises(DegenerateFilterError):
            systematic_resample(np.full(4, -np.inf), 0.5)

    def test_inf_weights_allowed_partially(self):
        idx = systematic_resample(np.array([-np.inf, 0.0]), 0.2)
        assert idx.tolist() == [1, 1]


class TestCountProperty:
    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(min_value=-30.0, max_value=30.0), min_size=2, max_size=40),
           st.floats(min_value=0.0, max_value=0.999999))
    def test_counts_within_one_of_expected(self, lw, u):
        lw = np.array(lw)
        idx = systematic_resample(lw, u)
        J = lw.size
        w = np.exp(lw - np.max(lw))
        w = w / w.sum()
        counts = np.bincount(idx, minlength=J)
        assert np.all(np.abs(counts - J * w) < 1.0 + 1e-9)
        assert np.all(np.diff(idx) >= 0)  # nondecreasing by construction

    def test_determinism(self):
        lw = np.log([0.3, 0.3, 0.4])
        a = systematic_resample(lw, 0.77)
        b = systematic_resample(lw, 0.77)
        assert np.array_equal(a, b)


def test_unbiasedness_monte_carlo():
    """Average copy counts over many offsets converge to J*w within 3 SEs."""
    w = np.array([0.1, 0.25, 0.65])
    lw = np.log(w)
    n = 10_000
    key = prng.StreamKey(3, 1, np.arange(n), prng.Purpose.RESAMPLE)
    us = prng.uniform(key, 0)
    counts = np.zeros((n, 3))
    for i, u in enumerate(us):
        counts[i] = np.bincount(systematic_resample(lw, u), minlength=3)
    mean_frac = counts.mean(axis=0) / 3
    se = counts.std(axis=0, ddof=1) / 3 / np.sqrt(n)
    assert np.all(np.abs(mean_frac - w) <= 3 * np.maximum(se, 1e-12))


class TestOffparamIndices:
    def test_equal_densities_identity_permutation(self):
        key = prng.StreamKey(0, 1, 0, prng.Purpose.RESAMPLE)
        idx = offparam_indices(np.ones(8), key)
        assert sorted(idx.tolist()) == list(range(8))
        assert np.bincount(idx, minlength=8).max() == 1

    def test_point_mass_density(self):
        key = prng.StreamKey(5, 2, 0, prng.Purpose.RESAMPLE)
        idx = offparam_indices(np.array([1.0, 0.0]), key)
        assert idx.tolist() == [0, 0]

    def test_deterministic_in_key(self):
        key = prng.StreamKey(9, 3, 0, prng.Purpose.RESAMPLE)
        g = np.array([0.2, 0.5, 0.3])
        assert np.array_equal(offparam_indices(g, key), offparam_indices(g, key))
