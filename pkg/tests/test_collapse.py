import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from collapse_probe.collapse import (
    Branch,
    BranchState,
    CollapseModel,
    DetectorSpec,
    collapse_probability,
    environment_count,
    environment_counts,
    sample_branch,
    sample_branches,
    stage_threshold,
)
from collapse_probe.errors import InvalidConfig


class TestBranchState:
    def test_default_is_always_detect(self):
        assert BranchState() == BranchState(0.0, 1.0, 0.0)

    @pytest.mark.parametrize("probs", [(0.5, 0.5, 0.1), (-0.1, 1.0, 0.1), (0.2, 0.2, 0.2), (1.1, 0.0, -0.1)])
    def test_invalid(self, probs):
        with pytest.raises(InvalidConfig):
            BranchState(*probs)


class TestDetectorSpec:
    def test_plate_needs_grain_count(self):
        with pytest.raises(InvalidConfig, match="grain_env_count"):
            DetectorSpec("plate")

    @pytest.mark.parametrize("g,k", [(0.5, 3), (2.0, -1), (None, 3), (2.0, None), (2.0, 1.5)])
    def test_pmt_invariants(self, g, k):
        with pytest.raises(InvalidConfig):
            DetectorSpec("pmt", gain_g=g, stages=k)

    def test_cold_atom_count_positive(self):
        with pytest.raises(InvalidConfig):
            DetectorSpec.cold_atom(0)


class TestEnvironmentCount:
    @pytest.mark.parametrize(
        "spec,branch,expected",
        [
            (DetectorSpec.pmt(3, 5), Branch.DETECT, 243.0),
            (DetectorSpec.pmt(2, 0), Branch.DETECT, 1.0),
            (DetectorSpec.cold_atom(1), Branch.DETECT, 1.0),
            (DetectorSpec.cold_atom(40), Branch.DETECT, 40.0),
            (DetectorSpec.plate(10**6), Branch.DETECT, 1e6),
            (DetectorSpec.sink(), Branch.DETECT, 0.0),
            (DetectorSpec.sink(), Branch.FAIL, 0.0),
            (DetectorSpec.pmt(3, 5), Branch.FAIL, 1.0),
            (DetectorSpec.plate(50), Branch.FAIL, 1.0),
            (DetectorSpec.cold_atom(7), Branch.FAIL, 1.0),
        ],
    )
    def test_table(self, spec, branch, expected):
        assert environment_count(spec, branch) == expected

    @pytest.mark.parametrize(
        "spec", [DetectorSpec.sink(), DetectorSpec.cold_atom(3), DetectorSpec.plate(9), DetectorSpec.pmt(4, 6)]
    )
    def test_miss_is_zero(self, spec):
        assert environment_count(spec, Branch.MISS) == 0.0

    def test_vectorized_matches_scalar(self):
        spec = DetectorSpec.pmt(3, 4)
        codes = np.array([0, 1, 2, 1, 0], dtype=np.int8)
        assert environment_counts(spec, codes).tolist() == [environment_count(spec, Branch(c)) for c in codes]

    @given(st.floats(1.0, 10.0), st.integers(0, 20))
    def test_monotone_in_stages(self, g, k):
        assert environment_count(DetectorSpec.pmt(g, k + 1), Branch.DETECT) >= environment_count(
            DetectorSpec.pmt(g, k), Branch.DETECT
        )


class TestCollapseProbability:
    def test_hard_threshold(self):
        model = CollapseModel(100)
        assert collapse_probability(243, model) == 1.0
        assert collapse_probability(81, model) == 0.0
        assert collapse_probability(100, model) == 1.0

    @pytest.mark.parametrize("sigma", [0.01, 0.5, 3.0])
    def test_soft_midpoint(self, sigma):
        assert collapse_probability(100.0, CollapseModel(100, sigma)) == pytest.approx(0.5, abs=1e-15)

    def test_soft_zero_count_is_finite(self):
        p = collapse_probability(0.0, CollapseModel(10, 1.0))
        assert 0.0 <= p < 1e-5

    @pytest.mark.parametrize("nc,s", [(0.5, 0.0), (10, -1.0), (math.nan, 0.0)])
    def test_model_invariants(self, nc, s):
        with pytest.raises(InvalidConfig):
            CollapseModel(nc, s)

    @given(
        st.floats(0.0, 1e12),
        st.floats(0.0, 1e12),
        st.floats(1.0, 1e9),
        st.floats(0.0, 5.0),
    )
    def test_monotone(self, c1, c2, nc, s):
        lo, hi = sorted((c1, c2))
        model = CollapseModel(nc, s)
        p_lo, p_hi = collapse_probability(lo, model), collapse_probability(hi, model)
        assert 0.0 <= p_lo <= p_hi <= 1.0


class TestStageThreshold:
    @given(st.integers(2, 10), st.integers(1, 10**9))
    def test_matches_brute_force(self, g, nc):
        k = 0
        while g**k < nc:
            k += 1
        assert stage_threshold(g, nc) == k
        model = CollapseModel(nc)
        first = next(j for j in range(64) if collapse_probability(environment_count(DetectorSpec.pmt(g, j), Branch.DETECT), model) == 1.0)
        assert first == k

    def test_example(self):
        assert stage_threshold(3, 100) == 5
        assert stage_threshold(3, 243) == 5
        assert stage_threshold(3, 244) == 6

    def test_needs_gain_above_one(self):
        with pytest.raises(InvalidConfig):
            stage_threshold(1.0, 10)


class TestSampleBranch:
    @pytest.mark.parametrize("probs,expected", [((1, 0, 0), Branch.MISS), ((0, 1, 0), Branch.DETECT), ((0, 0, 1), Branch.FAIL)])
    def test_degenerate(self, probs, expected):
        codes = sample_branches(BranchState(*probs), np.random.default_rng(0), 10_000)
        assert np.all(codes == expected)
        assert sample_branch(BranchState(*probs), np.random.default_rng(1)) is expected

    def test_frequencies(self):
        state = BranchState(0.1, 0.85, 0.05)
        codes = sample_branches(state, np.random.default_rng(2024), 10**6)
        freq = np.bincount(codes, minlength=3) / codes.size
        assert np.allclose(freq, state.probabilities, atol=0.002)

    def test_deterministic(self):
        state = BranchState(0.3, 0.3, 0.4)
        a = sample_branches(state, np.random.default_rng(9), 1000)
        b = sample_branches(state, np.random.default_rng(9), 1000)
        assert np.array_equal(a, b)

    @given(st.floats(0.0, 1.0), st.integers(0, 2**31))
    def test_no_fail_without_fail_probability(self, p_miss, seed):
        state = BranchState(p_miss, 1.0 - p_miss, 0.0)
        codes = sample_branches(state, np.random.default_rng(seed), 2000)
        assert not np.any(codes == Branch.FAIL)
