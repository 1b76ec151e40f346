import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from c3dm.schedules import (NoiseVariant, ScheduleSpec, alpha_bar, denoise_point_estimate, inference_grid, noise,
                            noise_with_drift, noise_without_drift, renoise)

SPEC = ScheduleSpec()
VARIANTS = list(NoiseVariant)


def test_alpha_bar_endpoints_are_clamped():
    assert alpha_bar(SPEC, 0.0) == pytest.approx(1 - 1e-4)
    assert alpha_bar(SPEC, 1.0) == pytest.approx(1e-4)


def test_alpha_bar_linear_midpoint():
    assert alpha_bar(SPEC, 0.25) == pytest.approx(0.75)


def test_cos2_family_is_monotone():
    spec = ScheduleSpec(family="cos2")
    ab = alpha_bar(spec, np.linspace(0, 1, 101))
    assert np.all(np.diff(ab) <= 0)
    assert alpha_bar(spec, 0.5) == pytest.approx(0.5)


@pytest.mark.parametrize("t", [-0.1, 1.1, float("nan")])
def test_alpha_bar_rejects_out_of_range(t):
    with pytest.raises(ValueError):
        alpha_bar(SPEC, t)


@pytest.mark.parametrize("kw", [{"family": "sigmoid"}, {"horizon_T": 0.0}, {"alpha_min": 0.5, "alpha_max": 0.4}])
def test_schedule_spec_validation(kw):
    with pytest.raises(ValueError):
        ScheduleSpec(**kw)


def test_drift_and_no_drift_closed_forms():
    a = np.array([0.3, -0.2, 0.1])
    eps = np.array([1.0, 2.0, -1.0])
    ab = alpha_bar(SPEC, 0.64)
    np.testing.assert_allclose(noise_with_drift(a, 0.64, eps, SPEC), math.sqrt(ab) * a + math.sqrt(1 - ab) * eps)
    np.testing.assert_allclose(noise_without_drift(a, 0.64, eps, SPEC), a + math.sqrt(1 - ab) * eps)


def test_shape_mismatch_is_an_error():
    with pytest.raises(ValueError):
        noise(np.zeros(3), 0.5, np.zeros(2), SPEC, "drift")


def test_per_sample_times_broadcast():
    a = np.zeros((4, 3))
    eps = np.ones((4, 3))
    t = np.array([0.0, 0.25, 0.5, 1.0])
    out = noise_without_drift(a, t, eps, SPEC)
    np.testing.assert_allclose(out[:, 0], np.sqrt(1 - alpha_bar(SPEC, t)))


@settings(max_examples=200, deadline=None)
@given(t=st.floats(0.0, 1.0), variant=st.sampled_from(VARIANTS),
       a=st.lists(st.floats(-1, 1), min_size=3, max_size=3), e=st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_true_noise_recovers_clean_action(t, variant, a, e):
    a, e = np.array(a), np.array(e)
    a_t = noise(a, t, e, SPEC, variant)
    np.testing.assert_allclose(denoise_point_estimate(a_t, e, t, SPEC, variant), a, atol=1e-9)


def test_renoise_is_noise_at_previous_time():
    a, e = np.array([0.1, 0.2, 0.3]), np.array([0.5, -0.5, 0.0])
    for v in VARIANTS:
        np.testing.assert_array_equal(renoise(a, 0.3, e, SPEC, v), noise(a, 0.3, e, SPEC, v))


@pytest.mark.parametrize("n", [1, 2, 5, 10])
def test_inference_grid(n):
    ts, prevs = inference_grid(SPEC, n)
    assert len(ts) == n and ts[0] == 1.0 and prevs[-1] == 0.0
    assert ts[1:] == prevs[:-1]


def test_inference_grid_rejects_zero_steps():
    with pytest.raises(ValueError):
        inference_grid(SPEC, 0)


def _ks_two_sample(x, y):
    """Two-sample Kolmogorov-Smirnov statistic."""
    x, y = np.sort(x), np.sort(y)
    grid = np.concatenate([x, y])
    return float(np.max(np.abs(np.searchsorted(x, grid, "right") / len(x) - np.searchsorted(y, grid, "right") / len(y))))


@pytest.mark.parametrize("variant", VARIANTS)
def test_renoise_after_exact_denoise_matches_direct_noising(variant):
    rng = np.random.default_rng(0)
    n, t = 100_000, 0.45
    a = np.full(n, 0.3)
    e1, e2, e3 = rng.standard_normal((3, n))
    a_t = noise(a, 0.8, e1, SPEC, variant)
    a0 = denoise_point_estimate(a_t, e1, 0.8, SPEC, variant)
    via = renoise(a0, t, e2, SPEC, variant)
    direct = noise(a, t, e3, SPEC, variant)
    assert _ks_two_sample(via, direct) < 0.02


def test_two_incremental_drift_steps_equal_one_aggregated_step():
    rng = np.random.default_rng(1)
    n, a = 100_000, 0.7
    a1, a2 = 0.8, 0.6
    x1 = math.sqrt(a1) * a + math.sqrt(1 - a1) * rng.standard_normal(n)
    x2 = math.sqrt(a2) * x1 + math.sqrt(1 - a2) * rng.standard_normal(n)
    ab = a1 * a2
    assert x2.mean() == pytest.approx(math.sqrt(ab) * a, rel=0.02)
    assert x2.var() == pytest.approx(1 - ab, rel=0.02)


def test_drift_limit_forgets_the_action():
    rng = np.random.default_rng(2)
    x = noise_with_drift(np.full(100_000, 0.9), 1.0, rng.standard_normal(100_000), SPEC)
    assert abs(x.mean()) < 0.01
    assert x.var() == pytest.approx(1 - 1e-4, rel=0.02)


def test_spec_examples():
    a = np.array([0.4, -0.2])
    t75 = 0.25
    np.testing.assert_allclose(noise_without_drift(a, t75, np.ones(2), SPEC), [0.9, 0.3])
    np.testing.assert_allclose(noise_with_drift(np.zeros(2), t75, np.array([1.0, -2.0]), SPEC), [0.5, -1.0])
    np.testing.assert_array_equal(noise_without_drift(a, 0.7, np.zeros(2), SPEC), a)
    np.testing.assert_allclose(denoise_point_estimate(a, np.zeros(2), t75, SPEC, "drift"), a / math.sqrt(0.75))
    np.testing.assert_array_equal(renoise(a, 0.3, np.zeros(2), SPEC, "no_drift"), a)
