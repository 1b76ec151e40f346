import math

import numpy as np
import pytest

from c3dm.fddp import (CHAIN_LAYOUT, DivergenceError, IdealPolicy, InferConfig, TrainConfig, _lr_at, augment_dataset,
                       chain_action, frame_inv_sigma, infer, make_training_example, run_fddp_per_subaction, train)
from c3dm.geometry import DESK_LAYOUT, ActionVec, Window, renormalize_action
from c3dm.nn import ModelConfig
from c3dm.scene import TaskConfig, camera_for, make_demo, render, success
from c3dm.schedules import NoiseVariant, ScheduleSpec, alpha_bar, noise

SPEC = ScheduleSpec()


def ideal_policy(demo, mode, variant):
    full = Window.full(camera_for(demo.scene))
    targets = [renormalize_action(chain_action(demo.action, c), full).values for c in range(2)]
    return IdealPolicy(targets, SPEC, variant, zoom=mode == "zoom")


@pytest.mark.parametrize("mode", ["baseline", "mask", "zoom"])
@pytest.mark.parametrize("variant", list(NoiseVariant))
@pytest.mark.parametrize("n_steps", [1, 5, 10])
def test_ideal_denoiser_recovers_the_oracle(task, mode, variant, n_steps):
    demo = make_demo(task, 7)
    cfg = InferConfig(mode=mode, variant=variant, n_steps=n_steps, seed=3)
    a, traces = run_fddp_per_subaction(demo.scene, ideal_policy(demo, mode, variant), cfg, DESK_LAYOUT)
    np.testing.assert_allclose(a.values, demo.action.values, atol=1e-6)
    assert [len(t) for t in traces] == [n_steps, n_steps]


def test_zoom_windows_shrink_and_contain_fixation(task):
    demo = make_demo(task, 2)
    cfg = InferConfig(mode="zoom", n_steps=10)
    _, traces = run_fddp_per_subaction(demo.scene, ideal_policy(demo, "zoom", "no_drift"), cfg, DESK_LAYOUT)
    for tr in traces:
        areas = [s.window.area for s in tr.steps]
        assert areas[0] == pytest.approx(64 * 64)
        assert all(b <= a + 1e-9 for a, b in zip(areas, areas[1:]))
        for prev, cur in zip(tr.steps, tr.steps[1:]):
            assert cur.window.contains(prev.fixation)
            assert cur.window.inside_image()


def test_baseline_keeps_full_window(task):
    demo = make_demo(task, 2)
    _, traces = run_fddp_per_subaction(demo.scene, ideal_policy(demo, "baseline", "drift"),
                                       InferConfig(mode="baseline", variant="drift"), DESK_LAYOUT)
    full = Window.full(camera_for(demo.scene))
    assert all(s.window.same_as(full) for s in traces[0].steps)


def test_inference_is_seeded(task):
    demo = make_demo(task, 2)
    pol = ideal_policy(demo, "zoom", "no_drift")
    cfg = InferConfig(mode="zoom", n_steps=3)
    a1, t1 = run_fddp_per_subaction(demo.scene, pol, cfg, DESK_LAYOUT)
    a2, t2 = run_fddp_per_subaction(demo.scene, pol, cfg, DESK_LAYOUT)
    assert np.array_equal(t1[0].steps[0].a_t, t2[0].steps[0].a_t)
    other = run_fddp_per_subaction(demo.scene, pol, InferConfig(mode="zoom", n_steps=3, seed=1), DESK_LAYOUT)[1]
    assert not np.array_equal(t1[0].steps[0].a_t, other[0].steps[0].a_t)


def test_baseline_and_mask_accept_a_bare_image(task):
    demo = make_demo(task, 4)
    img = render(demo.scene)
    for mode in ("baseline", "mask"):
        a, _ = run_fddp_per_subaction(img, ideal_policy(demo, mode, "no_drift"), InferConfig(mode=mode),
                                      DESK_LAYOUT)
        assert success(demo.scene, a)
    with pytest.raises(ValueError):
        infer(img, ideal_policy(demo, "zoom", "no_drift"), InferConfig(mode="zoom"), np.random.default_rng(0))


def test_non_finite_estimate_raises_divergence(task):
    class NaNPolicy:
        def encode(self, image):
            return None

        def eps(self, *args, **kw):
            return np.full(3, np.nan)

    demo = make_demo(task, 0)
    with pytest.raises(DivergenceError):
        infer(demo.scene, NaNPolicy(), InferConfig(mode="zoom"), np.random.default_rng(0))


@pytest.mark.parametrize("mode", ["baseline", "mask", "zoom"])
def test_training_example_noise_is_consistent(task, mode):
    demo = make_demo(task, 5)
    cfg = TrainConfig(mode=mode, jitter=True)
    rng = np.random.default_rng(0)
    eps = np.array([0.3, -0.4, 0.1])
    img, a_in, e, w = make_training_example(demo, 0.4, eps, cfg, rng, chain=1)
    full = Window.full(camera_for(demo.scene))
    clean = renormalize_action(chain_action(demo.action, 1), full).values
    expected = noise(clean, 0.4, eps, SPEC, cfg.variant)
    if mode == "zoom":
        expected = renormalize_action(ActionVec(expected, CHAIN_LAYOUT, full), w).values
    np.testing.assert_allclose(a_in, expected, atol=1e-12)
    assert img.shape == (64, 64, 3) and np.array_equal(e, eps)
    p = (np.asarray(demo.scene.goal.position) + 0.5) * 64
    assert w.contains(p)


def test_frame_inv_sigma_scales_positions_only():
    cam = camera_for(make_demo(TaskConfig(), 0).scene)
    w = Window(np.array([32.0, 32.0]), np.array([8.0, 16.0]), cam)
    c = frame_inv_sigma(CHAIN_LAYOUT, 0.5, SPEC, w)
    s = 1 / math.sqrt(1 - alpha_bar(SPEC, 0.5))
    np.testing.assert_allclose(c, [s * 0.25, s * 0.5, s])
    np.testing.assert_allclose(frame_inv_sigma(CHAIN_LAYOUT, 0.5, SPEC), [s] * 3)


def test_augmentation_quadruples(task):
    demos = [make_demo(task, i) for i in range(3)]
    assert len(augment_dataset(demos, True)) == 12
    assert len(augment_dataset(demos, False)) == 3


def test_lr_schedule():
    cfg = TrainConfig(lr=1.0, warmup_steps=10)
    assert _lr_at(cfg, 0, 100) == pytest.approx(0.1, rel=0.01)
    assert _lr_at(cfg, 99, 100) == pytest.approx(0.0, abs=1e-12)
    assert _lr_at(cfg, 0, 100, warm_up=False) == pytest.approx(1.0)
    assert _lr_at(TrainConfig(lr=1.0, lr_decay="constant", warmup_steps=0), 50, 100) == 1.0


@pytest.mark.parametrize("kw", [{"mode": "crop"}, {"K": 0}, {"lr_decay": "step"}, {"batch_size": 0}])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_infer_config_validation():
    with pytest.raises(ValueError):
        InferConfig(n_steps=0)
    with pytest.raises(ValueError):
        InferConfig(mode="crop")


def test_short_training_is_deterministic_and_reduces_loss(task):
    demos = [make_demo(task, i) for i in range(2)]
    mcfg = ModelConfig(channels=(4, 4, 4, 4), enc_hidden=16, embed_dim=16, den_hidden=32, ctx_hidden=16)
    cfg = TrainConfig(mode="baseline", epochs=40, K=8, lr=3e-3, rotation_augment=False, warmup_steps=5)
    r1 = train(demos, cfg, mcfg)
    r2 = train(demos, cfg, mcfg)
    assert r1.loss_curve == r2.loss_curve
    assert np.mean(r1.loss_curve[-5:]) < np.mean(r1.loss_curve[:5])
    assert r1.adam.step == 40


def test_empty_dataset_is_rejected():
    with pytest.raises(ValueError):
        train([], TrainConfig())


def test_chain_order_does_not_matter(task):
    demo = make_demo(task, 3)
    pol = ideal_policy(demo, "zoom", "no_drift")
    cfg = InferConfig(mode="zoom", n_steps=4)
    rngs = lambda: [np.random.default_rng([1, c]) for c in range(2)]  # noqa: E731
    a, _ = run_fddp_per_subaction(demo.scene, pol, cfg, DESK_LAYOUT, rngs())
    r = rngs()
    place, _ = infer(demo.scene, pol, cfg, r[1], 1, CHAIN_LAYOUT)
    pick, _ = infer(demo.scene, pol, cfg, r[0], 0, CHAIN_LAYOUT)
    np.testing.assert_array_equal(a.values, np.concatenate([pick.values, place.values]))


def test_joint_chain_is_runnable_and_traced(task):
    demo = make_demo(task, 3)
    full = Window.full(camera_for(demo.scene))
    pol = IdealPolicy([renormalize_action(demo.action, full).values], SPEC, "no_drift", zoom=True)
    a, traces = run_fddp_per_subaction(demo.scene, pol, InferConfig(mode="zoom", joint_chain=True, n_steps=5),
                                       DESK_LAYOUT)
    assert len(traces) == 1 and len(traces[0]) == 5
    np.testing.assert_allclose(a.values, demo.action.values, atol=1e-6)


def test_zoom_example_near_t0_centres_the_action(task):
    demo = make_demo(task, 6)
    cfg = TrainConfig(mode="zoom", jitter=False)
    _, a_in, _, w = make_training_example(demo, 1e-6, np.zeros(3), cfg, np.random.default_rng(0))
    assert np.all(np.abs(a_in[:2]) < 0.05)


def test_baseline_example_at_T_is_unconstrained(task):
    demo = make_demo(task, 6)
    img, _, _, w = make_training_example(demo, 1.0, np.ones(3), TrainConfig(mode="baseline"),
                                         np.random.default_rng(0))
    np.testing.assert_array_equal(img, render(demo.scene))
    assert w.same_as(Window.full(camera_for(demo.scene)))


def test_fixation_never_comes_from_the_noisy_action(task):
    demo = make_demo(task, 1)
    cfg = TrainConfig(mode="mask")
    rng = np.random.default_rng(0)
    p = (np.asarray(demo.scene.target.position) + 0.5) * 64
    for _ in range(1000):
        t = float(rng.uniform(0, 1))
        _, _, _, w = make_training_example(demo, t, 5 * rng.standard_normal(3), cfg, rng)
        assert w.contains(p)


def test_zoom_training_covers_more_contexts_than_demos(task):
    demos = [make_demo(task, i) for i in range(3)]
    cfg = TrainConfig(mode="zoom")
    rng = np.random.default_rng(0)
    seen = set()
    for _ in range(2):
        for d in demos:
            t = float(rng.uniform(0, 1))
            _, a_in, _, w = make_training_example(d, t, rng.standard_normal(3), cfg, rng)
            seen.add((tuple(np.round(w.center, 9)), tuple(np.round(w.half_extent, 9)), tuple(np.round(a_in, 9))))
    assert len(seen) > len(demos)


def test_zoom_inference_feeds_window_frame_actions(task):
    """The fed action equals the latent re-expressed in the step's window."""
    demo = make_demo(task, 8)
    _, traces = run_fddp_per_subaction(demo.scene, ideal_policy(demo, "zoom", "no_drift"),
                                       InferConfig(mode="zoom", n_steps=6), DESK_LAYOUT)
    full = Window.full(camera_for(demo.scene))
    for st in traces[1].steps:
        global_m = ActionVec(st.a_t, CHAIN_LAYOUT, full)
        np.testing.assert_allclose(st.a_in, renormalize_action(global_m, st.window).values, atol=1e-12)
