import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collapse_probe.analysis import (
    DEFAULT_LLR_THRESHOLD,
    BinnedLikelihood,
    Decision,
    UnbinnedLikelihood,
    classify,
    classify_binned,
    fit_visibility,
    fit_visibility_binned,
    golden_section_max,
    min_samples,
    stage_sweep,
)
from collapse_probe.collapse import CollapseModel
from collapse_probe.errors import InvalidConfig, OutOfRangeSample, TooFewSamples
from collapse_probe.optics import OpticalConfig, PatternKind, ScreenConfig, normalize_pdf


@pytest.fixture(scope="module")
def draw(cfg, screen):
    cache = {}

    def _draw(v, n, seed):
        if v not in cache:
            cache[v] = normalize_pdf(PatternKind.family(v), cfg, screen)
        return cache[v].sample(np.random.default_rng(seed), n)

    return _draw


class TestGoldenSection:
    @given(st.floats(0.0, 1.0))
    def test_parabola(self, peak):
        x, fx = golden_section_max(lambda v: -((v - peak) ** 2), 0.0, 1.0, tol=1e-7)
        assert x == pytest.approx(peak, abs=1e-6)

    def test_against_dense_grid(self, cfg, screen, draw):
        like = UnbinnedLikelihood(draw(0.6, 5_000, 1), cfg, screen)
        grid = np.linspace(0, 1, 20_001)
        brute = grid[np.argmax([like(v) for v in grid])]
        assert fit_visibility(draw(0.6, 5_000, 1), cfg, screen).v_hat == pytest.approx(brute, abs=1e-4)


class TestLikelihood:
    def test_normalizers_make_density(self, cfg, screen):
        like = UnbinnedLikelihood(np.zeros(100), cfg, screen)
        pdf = normalize_pdf(PatternKind.family(0.4), cfg, screen)
        # at x = 0 the model density is 1.4 / (Z0 + 0.4 Z1)
        assert 1.4 / (like.z0 + 0.4 * like.z1) == pytest.approx(float(pdf.pdf(0.0)), rel=1e-6)

    def test_binned_and_unbinned_agree_on_ratio(self, cfg, screen, draw):
        x = draw(1 / 3, 50_000, 2)
        a = UnbinnedLikelihood(x, cfg, screen)
        b = BinnedLikelihood(screen.histogram(x), cfg, screen)
        # both favour the truth over the alternatives
        assert a(1 / 3) > a(1.0) and b(1 / 3) > b(1.0)
        assert a(1 / 3) > a(0.0) and b(1 / 3) > b(0.0)


class TestFitVisibility:
    @pytest.mark.parametrize("v,tol", [(0.0, 0.02), (1 / 3, 0.02), (1.0, 0.02), (0.2, 0.03), (0.6, 0.03), (0.9, 0.03)])
    def test_consistency_across_family(self, cfg, screen, draw, v, tol):
        fit = fit_visibility(draw(v, 10**6, 31), cfg, screen)
        assert abs(fit.v_hat - v) < tol
        assert 0.0 <= fit.ci_low <= fit.v_hat <= fit.ci_high <= 1.0

    def test_interference_sample(self, cfg, screen, draw):
        assert fit_visibility(draw(1.0, 10**6, 5), cfg, screen).v_hat == pytest.approx(1.0, abs=0.01)

    def test_envelope_sample_sits_at_boundary(self, cfg, screen, draw):
        fit = fit_visibility(draw(0.0, 10**6, 6), cfg, screen)
        assert 0.0 <= fit.v_hat <= 0.01
        assert fit.ci_low == 0.0

    def test_interval_covers_truth(self, cfg, screen, draw):
        covered = sum(
            f.ci_low <= 0.5 <= f.ci_high for f in (fit_visibility(draw(0.5, 2_000, s), cfg, screen) for s in range(40))
        )
        # nominal 95%; 40 trials leave room for Monte Carlo scatter
        assert covered >= 34

    def test_binned_fit_close_to_unbinned(self, cfg, screen, draw):
        x = draw(1 / 3, 10**5, 7)
        unbinned = fit_visibility(x, cfg, screen)
        binned = fit_visibility_binned(screen.histogram(x), cfg, screen)
        assert binned.method == "binned"
        assert binned.v_hat == pytest.approx(unbinned.v_hat, abs=0.02)

    def test_too_few(self, cfg, screen):
        with pytest.raises(TooFewSamples):
            fit_visibility(np.zeros(99), cfg, screen)

    def test_out_of_range(self, cfg, screen):
        x = np.zeros(200)
        x[17] = 1.01 * screen.x_max
        with pytest.raises(OutOfRangeSample):
            fit_visibility(x, cfg, screen)

    def test_nan_is_out_of_range(self, cfg, screen):
        x = np.zeros(200)
        x[0] = np.nan
        with pytest.raises(OutOfRangeSample):
            fit_visibility(x, cfg, screen)

    def test_scale_invariance(self, cfg, draw):
        s = 3.7
        scaled = OpticalConfig(cfg.slit_width_a * s, cfg.slit_separation_d * s, cfg.wavelength, cfg.focal_length_f0 * s)
        x = draw(0.6, 20_000, 8)
        screen = ScreenConfig.default_for(cfg)
        a = fit_visibility(x, cfg, screen)
        b = fit_visibility(x, scaled, screen)
        assert b.v_hat == pytest.approx(a.v_hat, abs=1e-9)

    def test_serializes(self, cfg, screen, draw):
        d = fit_visibility(draw(0.6, 1_000, 9), cfg, screen).to_dict()
        assert set(d) >= {"v_hat", "log_likelihood", "n_samples", "ci_low", "ci_high"}
        json.dumps(d)


class TestClassify:
    def test_sign_of_expected_llr(self, cfg, screen, draw):
        for v, sign in ((1 / 3, 1), (1.0, -1)):
            x = draw(v, 10**6, 12)
            like = UnbinnedLikelihood(x, cfg, screen)
            assert sign * (like(1 / 3) - like(1.0)) / x.size > 0

    @pytest.mark.parametrize("v,decision", [(1 / 3, Decision.COLLAPSED), (1.0, Decision.INTACT)])
    def test_power_at_1e4(self, cfg, screen, draw, v, decision):
        hits = sum(classify(draw(v, 10**4, 1000 + s), cfg, screen).decision is decision for s in range(200))
        assert hits >= 198

    @pytest.mark.parametrize("v", [1 / 3, 1.0])
    def test_ten_samples_mostly_inconclusive(self, cfg, screen, draw, v):
        hits = sum(classify(draw(v, 10, 5000 + s), cfg, screen).decision is Decision.INCONCLUSIVE for s in range(200))
        assert hits > 100

    def test_threshold_semantics(self, cfg, screen, draw):
        res = classify(draw(1 / 3, 500, 3), cfg, screen)
        assert res.threshold_used == DEFAULT_LLR_THRESHOLD == math.log(100)
        big = classify(draw(1 / 3, 500, 3), cfg, screen, llr_threshold=1e9)
        assert big.decision is Decision.INCONCLUSIVE
        assert big.log_likelihood_ratio == res.log_likelihood_ratio

    def test_binned(self, cfg, screen, draw):
        assert classify_binned(screen.histogram(draw(1 / 3, 10**4, 4)), cfg, screen).decision is Decision.COLLAPSED
        assert classify_binned(screen.histogram(draw(1.0, 10**4, 4)), cfg, screen).decision is Decision.INTACT

    def test_rejects_negative_threshold(self, cfg, screen):
        with pytest.raises(InvalidConfig):
            classify(np.zeros(5), cfg, screen, llr_threshold=-1)

    def test_rejects_empty(self, cfg, screen):
        with pytest.raises(TooFewSamples):
            classify(np.zeros(0), cfg, screen)


class TestMinSamples:
    def test_regression_anchor(self, cfg, screen):
        # frozen from the first run: seed 0, default trial count, 20/100/810nm/0.5m optics
        assert min_samples(1.0, 1 / 3, 0.01, cfg, screen) == 90

    def test_stricter_error_needs_more(self, cfg, screen):
        assert min_samples(1.0, 1 / 3, 0.001, cfg, screen) >= min_samples(1.0, 1 / 3, 0.05, cfg, screen)

    def test_result_meets_target(self, cfg, screen, draw):
        n = min_samples(1 / 3, 1.0, 0.05, cfg, screen, seed=3)
        threshold = math.log(0.95 / 0.05)
        wrong = sum(
            not (classify(draw(1 / 3, n, 70_000 + s), cfg, screen, threshold).decision is Decision.COLLAPSED)
            for s in range(400)
        )
        # independent seeds; allow 3 standard errors above the target rate
        assert wrong / 400 <= 0.05 + 3 * math.sqrt(0.05 * 0.95 / 400)

    @pytest.mark.parametrize(
        "args", [(1.0, 1.0, 0.01), (1.0, 0.5, 0.0), (1.0, 0.5, 0.5), (1.2, 0.5, 0.1), (0.3, -0.1, 0.1)]
    )
    def test_preconditions(self, cfg, screen, args):
        with pytest.raises(InvalidConfig):
            min_samples(*args, cfg, screen)


class TestStageSweep:
    def test_recovers_threshold(self, cfg, screen):
        res = stage_sweep(3, range(1, 7), CollapseModel(100), 10**5, 1, cfg, screen)
        assert [r.environment_count for r in res.records] == [3, 9, 27, 81, 243, 729]
        assert res.inferred_stage_threshold == 5
        assert res.inferred_nc_bracket == (81.0, 243.0)
        assert [r.decision for r in res.records] == [Decision.INTACT] * 4 + [Decision.COLLAPSED] * 2
        assert res.is_monotone
        json.dumps(res.to_dict())

    def test_floor_threshold(self, cfg, screen):
        res = stage_sweep(2, range(2, 5), CollapseModel(1), 20_000, 2, cfg, screen)
        assert all(r.decision is Decision.COLLAPSED for r in res.records)
        assert res.inferred_stage_threshold == 2

    def test_unreachable(self, cfg, screen):
        res = stage_sweep(3, range(1, 7), CollapseModel(1e9), 20_000, 3, cfg, screen)
        assert res.inferred_stage_threshold is None and res.inferred_nc_bracket is None
        assert res.to_dict()["inferred_stage_threshold"] is None

    def test_invalid(self, cfg, screen):
        with pytest.raises(InvalidConfig):
            stage_sweep(1.0, range(1, 3), CollapseModel(10), 1000, 0, cfg, screen)
        with pytest.raises(InvalidConfig):
            stage_sweep(3.0, range(0), CollapseModel(10), 1000, 0, cfg, screen)

    @settings(max_examples=6, deadline=None)
    @given(st.integers(2, 4), st.integers(2, 200), st.integers(0, 10**6))
    def test_monotone_for_hard_thresholds(self, g, nc, seed):
        cfg = OpticalConfig(20e-6, 100e-6, 810e-9, 0.5)
        res = stage_sweep(g, range(0, 9), CollapseModel(nc), 5_000, seed, cfg, ScreenConfig.default_for(cfg))
        assert res.is_monotone


def test_llr_finite_with_sample_on_envelope_null(cfg, screen, draw):
    x = draw(1 / 3, 500, 77)
    x[0] = cfg.envelope_null
    res = classify(x, cfg, screen)
    assert math.isfinite(res.log_likelihood_ratio)
    # an exact fringe null rules out V = 1 outright
    x[1] = cfg.fringe_null
    assert classify(x, cfg, screen).log_likelihood_ratio == math.inf
