"""Training and fixation-while-denoising inference for constrained-context policies.

Actions are diffused in the *normalised table frame* (the full-image window,
where the table spans ``[-1, 1]^2``). In ``zoom`` mode the noisy action handed
to the denoiser is re-expressed in the current window's frame, while the
predicted noise always stays in the normalised table frame. ``mask`` mode
keeps the table frame and blanks pixels outside the window; ``baseline``
never constrains the context.

By default pick and place are inferred by two independent chains, each with
its own fixation point, sharing one network that is told which chain it
serves through a one-hot input.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .geometry import (
    ActionVec,
    SubAction,
    Window,
    constrain_window,
    fixation_point,
    mask_context,
    renormalize_action,
    unnormalize_action,
    zoom_context,
)
from .scene import Demo, SceneSpec, camera_for, render, rotate_demo
from .schedules import (
    NoiseVariant,
    ScheduleSpec,
    alpha_bar,
    denoise_point_estimate,
    inference_grid,
    noise,
    renoise,
)

log = logging.getLogger(__name__)

__all__ = [
    "MODES",
    "TrainConfig",
    "InferConfig",
    "StepRecord",
    "DenoiseTrace",
    "DivergenceError",
    "ModelPolicy",
    "IdealPolicy",
    "chain_layout",
    "chain_action",
    "make_training_example",
    "augment_dataset",
    "train",
    "infer",
    "run_fddp_per_subaction",
]

MODES = ("baseline", "mask", "zoom")
CHAIN_LAYOUT = (SubAction("chain", 0, 1, 2),)


class DivergenceError(RuntimeError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class TrainConfig:
    K: int = 1
    batch_size: int = 30
    epochs: int = 300
    lr: float = 1e-3
    schedule: ScheduleSpec = ScheduleSpec()
    variant: NoiseVariant = NoiseVariant.NO_DRIFT
    mode: str = "zoom"
    f_min: float = 0.2
    rotation_augment: bool = True
    joint_chain: bool = False
    jitter: bool = True
    lr_decay: str = "cosine"
    grad_clip: float | None = 1.0
    warmup_steps: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.lr_decay not in ("constant", "cosine"):
            raise ValueError("lr_decay must be 'constant' or 'cosine'")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        object.__setattr__(self, "variant", NoiseVariant(self.variant))


@dataclass(frozen=True)
class InferConfig:
    n_steps: int = 10
    act_bounds: tuple[tuple[float, float], ...] = ((-1.0, 1.0), (-1.0, 1.0), (-math.pi / 4, math.pi / 4))
    mode: str = "zoom"
    variant: NoiseVariant = NoiseVariant.NO_DRIFT
    schedule: ScheduleSpec = ScheduleSpec()
    f_min: float = 0.2
    joint_chain: bool = False
    latent_clamp: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        object.__setattr__(self, "variant", NoiseVariant(self.variant))

    def bounds_for(self, dim: int) -> np.ndarray:
        b = np.asarray(self.act_bounds, dtype=np.float64)
        reps = -(-dim // len(b))
        return np.tile(b, (reps, 1))[:dim]


def chain_layout(joint: bool, full_layout) -> tuple[SubAction, ...]:
    return tuple(full_layout) if joint else CHAIN_LAYOUT


def chain_action(a: ActionVec, chain: int, joint: bool = False) -> ActionVec:
    """The slice of ``a`` a given chain denoises (whole action for a joint chain)."""
    if joint:
        return a
    s = a.layout[chain]
    return ActionVec(a.values[list(s.slots)], CHAIN_LAYOUT, a.frame)


def n_chains(layout, joint: bool) -> int:
    return 1 if joint else len(layout)


def augment_dataset(demos, rotation_augment: bool):
    if not rotation_augment:
        return list(demos)
    return [rotate_demo(d, k) for d in demos for k in range(4)]


def _constrain(mode, scene, base_img, w, size):
    if mode == "baseline":
        return base_img
    if mode == "mask":
        return mask_context(base_img, w, scene.table_color)
    return zoom_context(scene, w, size, size)


def make_training_example(demo: Demo, t: float, eps, cfg: TrainConfig, rng, chain: int = 0,
                          base_image=None):
    """One ``(constrained image, noisy action fed to the net, eps target)`` triple.

    Returns the window as a fourth element so callers can inspect it.
    """
    scene = demo.scene
    cam = camera_for(scene)
    full = Window.full(cam)
    gt = chain_action(demo.action, chain, cfg.joint_chain)
    a_norm = renormalize_action(gt, full)
    eps = np.asarray(eps, dtype=np.float64)
    a_noisy = noise(a_norm.values, t, eps, cfg.schedule, cfg.variant)

    if cfg.mode == "baseline":
        w = full
    else:
        p = fixation_point(gt, 0, cam)
        w = constrain_window(p, t, cfg.schedule, cfg.f_min, cam, rng if cfg.jitter else None)
    if base_image is None and cfg.mode != "zoom":
        base_image = render(scene)
    img = _constrain(cfg.mode, scene, base_image, w, scene.image_size)
    if cfg.mode == "zoom":
        a_in = renormalize_action(ActionVec(a_noisy, gt.layout, full), w).values
    else:
        a_in = a_noisy
    return img, a_in, eps, w


def frame_inv_sigma(layout, t, schedule: ScheduleSpec, window: Window | None = None) -> np.ndarray:
    """Reciprocal noise std per slot, measured in the frame the denoiser sees.

    Positions re-expressed in a zoom window are stretched by the inverse window
    fraction, so their noise shrinks relative to the window; yaw is never scaled.
    """
    sigma = math.sqrt(1.0 - alpha_bar(schedule, t))
    dim = sum(len(s.slots) for s in layout)
    c = np.full(dim, 1.0 / sigma)
    if window is not None:
        frac = window.real_half / Window.full(window.parent).real_half
        for s in layout:
            c[s.x] *= frac[0]
            c[s.y] *= frac[1]
    return c


def _model_config_for(demo: Demo, cfg: TrainConfig, model_cfg: nn.ModelConfig | None) -> nn.ModelConfig:
    dim = demo.action.dim if cfg.joint_chain else len(demo.action.layout[0].slots)
    chains = n_chains(demo.action.layout, cfg.joint_chain)
    base = model_cfg or nn.ModelConfig()
    return replace(base, image_size=demo.scene.image_size, action_dim=dim, n_chains=chains)


def _clip_global_norm(grads, limit: float) -> float:
    """Rescale ``grads`` in place so their joint L2 norm is at most ``limit``."""
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if norm > limit:
        for g in grads.values():
            g *= limit / norm
    return norm


def _lr_at(cfg: TrainConfig, step: int, total: int, warm_up: bool = True) -> float:
    """Linear warm-up over ``warmup_steps``, then constant or cosine decay to zero."""
    warm = min(1.0, (step + 1) / cfg.warmup_steps) if warm_up and cfg.warmup_steps > 0 else 1.0
    if cfg.lr_decay == "constant" or total <= 1:
        return cfg.lr * warm
    return warm * 0.5 * cfg.lr * (1.0 + math.cos(math.pi * step / (total - 1)))


@dataclass
class TrainResult:
    params: nn.ParamSet
    loss_curve: list[float]
    step_losses: list[float]
    adam: nn.AdamState


def train(dataset, cfg: TrainConfig, model_cfg: nn.ModelConfig | None = None, params=None,
          adam: nn.AdamState | None = None, progress=None) -> TrainResult:
    """Adam on the noise-prediction loss over constrained contexts.

    Each step draws ``batch_size`` demos; for every demo, sample ``K`` times and
    chain, ``t ~ U(0, T)`` and ``eps ~ N(0, I)`` are drawn and the constrained
    example is built around the ground-truth fixation point.
    """
    demos = list(dataset)
    if not demos:
        raise ValueError("dataset is empty")
    demos = augment_dataset(demos, cfg.rotation_augment)
    mcfg = _model_config_for(demos[0], cfg, model_cfg)
    if params is None:
        params = nn.init_params(mcfg, cfg.seed)
    if adam is None:
        adam = nn.AdamState(lr=cfg.lr)
    # a resumed run skips the warm-up and draws fresh batches
    resumed_at = adam.step
    rng = np.random.default_rng(cfg.seed if resumed_at == 0 else [cfg.seed, resumed_at])
    chains = n_chains(demos[0].action.layout, cfg.joint_chain)
    base_images = None if cfg.mode == "zoom" else [render(d.scene) for d in demos]
    T = cfg.schedule.horizon_T
    bs = min(cfg.batch_size, len(demos))

    total_steps = cfg.epochs * (-(-len(demos) // bs))
    step_in_run = 0

    loss_curve, step_losses = [], []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(demos))
        epoch_losses = []
        for start in range(0, len(order), bs):
            idx = order[start:start + bs]
            imgs, acts, epss, ts, chs, img_index, sig = [], [], [], [], [], [], []
            for i in idx:
                demo = demos[i]
                for _ in range(cfg.K):
                    for c in range(chains):
                        t = float(rng.uniform(0.0, T))
                        eps = rng.standard_normal(mcfg.action_dim)
                        base = None if base_images is None else base_images[i]
                        img, a_in, e, w = make_training_example(demo, t, eps, cfg, rng, c, base)
                        layout = chain_layout(cfg.joint_chain, demo.action.layout)
                        sig.append(frame_inv_sigma(layout, t, cfg.schedule, w if cfg.mode == "zoom" else None))
                        if cfg.mode == "baseline":
                            # context is the same image for every sample of this demo
                            if not imgs or imgs[-1] is not img:
                                imgs.append(img)
                            img_index.append(len(imgs) - 1)
                        else:
                            imgs.append(img)
                            img_index.append(len(imgs) - 1)
                        acts.append(a_in)
                        epss.append(e)
                        ts.append(t)
                        chs.append(c)
            loss, grads = nn.loss_and_grads(params, np.stack(imgs), np.stack(acts), np.stack(epss),
                                            np.array(ts), np.array(chs), np.array(img_index),
                                            np.stack(sig))
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, step {adam.step}")
            if cfg.grad_clip is not None:
                _clip_global_norm(grads, cfg.grad_clip)
            adam.lr = _lr_at(cfg, step_in_run, total_steps, resumed_at == 0)
            nn.adam_step(params, grads, adam)
            step_in_run += 1
            epoch_losses.append(loss)
            step_losses.append(loss)
        loss_curve.append(float(np.mean(epoch_losses)))
        if progress is not None:
            progress(epoch, loss_curve[-1])
    return TrainResult(params, loss_curve, step_losses, adam)


class ModelPolicy:
    """Noise predictor backed by trained encoder/denoiser weights."""

    def __init__(self, params: nn.ParamSet):
        self.params = params

    def encode(self, image):
        return nn.encoder_forward(self.params, image)

    def eps(self, emb, a_in, t, chain, window, inv_sigma=None):
        return nn.denoiser_forward(self.params, emb, a_in, t, chain, inv_sigma)


class IdealPolicy:
    """Analytic noise predictor that knows the target action.

    ``targets`` holds, per chain, the clean action in the normalised table frame.
    The fed action is mapped back from ``window``'s frame when zooming.
    """

    def __init__(self, targets, schedule: ScheduleSpec, variant: NoiseVariant, zoom: bool):
        self.targets = [np.asarray(v, dtype=np.float64) for v in targets]
        self.schedule = schedule
        self.variant = NoiseVariant(variant)
        self.zoom = zoom
        self.full = None

    def encode(self, image):
        return None

    def eps(self, emb, a_in, t, chain, window, inv_sigma=None):
        a = np.asarray(a_in, dtype=np.float64)
        if self.zoom:
            full = Window.full(window.parent)
            a = renormalize_action(ActionVec(a, _layout_for(a.shape[0]), window), full).values
        ab = alpha_bar(self.schedule, t)
        target = self.targets[chain]
        if self.variant is NoiseVariant.DRIFT:
            target = math.sqrt(ab) * target
        return (a - target) / math.sqrt(1.0 - ab)


def _layout_for(dim):
    if dim == 3:
        return CHAIN_LAYOUT
    return tuple(SubAction(f"s{i}", 3 * i, 3 * i + 1, 3 * i + 2) for i in range(dim // 3))


@dataclass
class StepRecord:
    t: float
    window: Window
    a_t: np.ndarray
    a_in: np.ndarray
    eps_hat: np.ndarray
    a0_hat: np.ndarray
    fixation: np.ndarray


@dataclass
class DenoiseTrace:
    chain: int
    steps: list[StepRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.steps)


def infer(obs, policy, cfg: InferConfig, rng, chain: int = 0, layout=CHAIN_LAYOUT):
    """Denoise one chain from a uniform draw; returns ``(action in metres, trace)``.

    ``obs`` is a :class:`SceneSpec` (required for zoom) or an ``(h, w, 3)``
    base image for baseline/mask modes.
    """
    if isinstance(obs, SceneSpec):
        scene = obs
        base = render(scene)
        background = scene.table_color
        cam = camera_for(scene)
    else:
        if cfg.mode == "zoom":
            raise ValueError("zoom inference needs the SceneSpec to re-render windows")
        scene = None
        base = np.asarray(obs)
        h, w = base.shape[:2]
        from .geometry import CameraTransform

        cam = CameraTransform.for_table((-0.5, -0.5, 0.5, 0.5), h, w)
        background = tuple(np.median(base.reshape(-1, 3), axis=0))
    full = Window.full(cam)
    size = cam.image_h
    dim = sum(len(s.slots) for s in layout)
    bounds = cfg.bounds_for(dim)
    a_t = rng.uniform(bounds[:, 0], bounds[:, 1])
    xs = [s.x for s in layout]
    ys = [s.y for s in layout]
    lo_c = cfg.latent_clamp * bounds[:, 0]
    hi_c = cfg.latent_clamp * bounds[:, 1]

    ts, prevs = inference_grid(cfg.schedule, cfg.n_steps)
    window = full
    cached = None
    trace = DenoiseTrace(chain)
    a0 = a_t
    for k, (t, t_prev) in enumerate(zip(ts, prevs)):
        if cfg.mode == "baseline":
            if cached is None:
                cached = policy.encode(base)
            emb = cached
            a_in = a_t
        elif cfg.mode == "mask":
            emb = policy.encode(mask_context(base, window, background))
            a_in = a_t
        else:
            emb = policy.encode(zoom_context(scene, window, size, size))
            a_in = renormalize_action(ActionVec(a_t, layout, full), window).values
        c = frame_inv_sigma(layout, t, cfg.schedule, window if cfg.mode == "zoom" else None)
        eps_hat = np.asarray(policy.eps(emb, a_in, t, chain, window, c), dtype=np.float64)
        a0 = denoise_point_estimate(a_t, eps_hat, t, cfg.schedule, cfg.variant)
        if not np.all(np.isfinite(a0)):
            raise DivergenceError(f"non-finite action at t={t}", trace)
        fix_norm = np.clip(a0, lo_c, hi_c)
        fix_m = unnormalize_action(ActionVec(fix_norm, layout, full), full)
        p = np.clip(fixation_point(fix_m, 0, cam), 0.0, cam.size)
        trace.steps.append(StepRecord(t, window, a_t.copy(), np.asarray(a_in).copy(), eps_hat, a0.copy(), p))
        if k == cfg.n_steps - 1:
            break
        a_t = renoise(a0, t_prev, rng.standard_normal(dim), cfg.schedule, cfg.variant)
        if cfg.mode != "baseline":
            window = constrain_window(p, t_prev, cfg.schedule, cfg.f_min, cam, None)
    out = unnormalize_action(ActionVec(a0, layout, full), full)
    return out, trace


def run_fddp_per_subaction(obs, policy, cfg: InferConfig, full_layout, rngs=None):
    """Infer every sub-action (or one joint chain) and concatenate in layout order."""
    if cfg.joint_chain:
        rng = rngs[0] if rngs else np.random.default_rng(cfg.seed)
        a, tr = infer(obs, policy, cfg, rng, 0, tuple(full_layout))
        return ActionVec(a.values, tuple(full_layout), None), [tr]
    if rngs is None:
        ss = np.random.SeedSequence(cfg.seed)
        rngs = [np.random.default_rng(s) for s in ss.spawn(len(full_layout))]
    vals = np.zeros(sum(len(s.slots) for s in full_layout))
    traces = []
    for c, sub in enumerate(full_layout):
        a, tr = infer(obs, policy, cfg, rngs[c], c, CHAIN_LAYOUT)
        vals[list(sub.slots)] = a.values
        traces.append(tr)
    return ActionVec(vals, tuple(full_layout), None), traces
