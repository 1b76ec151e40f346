"""Training, evaluation and the ablation matrices.

Every evaluation of a given experiment seed uses the same scenes and the same
per-episode random streams, so cells that differ in one factor (steps, mode,
variant, distractor set) are paired comparisons.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import nn
from ..fddp import InferConfig, ModelPolicy, TrainConfig, run_fddp_per_subaction, train
from ..geometry import DESK_LAYOUT, ActionVec
from ..schedules import NoiseVariant
from ..scene import SceneSpec, action_errors, oracle_action, success, swap_distractors
from .config import ExperimentConfig
from .data import build_demos, eval_scenes
from .metrics import MetricsRow, summarize
from .viz import write_traces

ABLATIONS = ("timesteps", "demos", "drift", "ood")
TIMESTEP_GRID = (1, 2, 5, 10)
DEMO_GRID = (5, 10, 30, 100)
DRIFT_MODES = ("mask", "zoom")
OOD_MODES = ("baseline", "zoom")

_OOD_STREAM = 3


def episode_rngs(seed: int, episode: int, n_chains: int = 2) -> list[np.random.Generator]:
    return [np.random.default_rng([seed, episode, c]) for c in range(n_chains)]


def ood_scene(scene: SceneSpec, cfg: ExperimentConfig, seed: int, episode: int) -> SceneSpec:
    """Same layout as ``scene`` with every distractor replaced by an unseen shape and colour."""
    return swap_distractors(scene, cfg.task, int(np.random.SeedSequence([_OOD_STREAM, seed, episode])
                                                 .generate_state(1, dtype=np.uint32)[0]))


# ---------------------------------------------------------------------------
# actors: callables (scene, infer_cfg, episode, rngs) -> (ActionVec, traces)


class ModelActor:
    def __init__(self, params: nn.ParamSet):
        self.policy = ModelPolicy(params)

    def __call__(self, scene, icfg: InferConfig, episode: int, rngs):
        return run_fddp_per_subaction(scene, self.policy, icfg, DESK_LAYOUT, rngs)


class OracleActor:
    """Returns the ground-truth action; any success shortfall is a harness bug."""

    def __call__(self, scene, icfg, episode, rngs):
        return oracle_action(scene), []


class RandomActor:
    """Uniform pick and place positions over the table, uniform yaw within the action bounds."""

    def __call__(self, scene, icfg, episode, rngs):
        xmin, ymin, xmax, ymax = scene.table_bounds
        vals = []
        for rng in rngs:
            lo, hi = icfg.act_bounds[2]
            vals += [rng.uniform(xmin, xmax), rng.uniform(ymin, ymax), rng.uniform(lo, hi)]
        return ActionVec(np.array(vals), DESK_LAYOUT, None), []


# ---------------------------------------------------------------------------


def train_config_for(cfg: ExperimentConfig, seed: int, mode: str | None = None,
                     variant: NoiseVariant | None = None) -> TrainConfig:
    return replace(cfg.train, seed=seed, mode=mode or cfg.mode, variant=variant or cfg.variant)


def train_policy(cfg: ExperimentConfig, seed: int, mode: str | None = None, variant=None,
                 n_demos: int | None = None, params=None, adam=None, progress=None):
    """Fit one model on the seed's demos; returns the :class:`TrainResult`."""
    demos = build_demos(cfg.task, seed, n_demos or cfg.n_demos)
    return train(demos, train_config_for(cfg, seed, mode, variant), cfg.model, params, adam, progress)


@dataclass
class ModelCache:
    """Trained weights keyed by ``(mode, variant, n_demos, seed)``; optionally mirrored to disk."""

    cfg: ExperimentConfig
    weights_dir: Path | None = None
    log: object = None
    _store: dict = field(default_factory=dict)

    def get(self, mode: str, variant, n_demos: int, seed: int) -> nn.ParamSet:
        variant = NoiseVariant(variant)
        key = (mode, variant.value, n_demos, seed)
        if key not in self._store:
            path = None
            if self.weights_dir is not None:
                path = Path(self.weights_dir) / f"{mode}_{variant.value}_n{n_demos}_s{seed}.c3w"
            if path is not None and path.exists():
                self._store[key] = nn.load_params(path)
            else:
                t0 = time.perf_counter()
                res = train_policy(self.cfg, seed, mode, variant, n_demos)
                if self.log is not None:
                    self.log(f"trained {key} in {time.perf_counter() - t0:.1f}s, "
                             f"final loss {res.loss_curve[-1]:.4g}")
                self._store[key] = res.params
                if path is not None:
                    path.parent.mkdir(parents=True, exist_ok=True)
                    nn.save_params(res.params, path)
        return self._store[key]


def evaluate(actor, cfg: ExperimentConfig, seed: int, experiment: str, *, mode: str | None = None,
             variant=None, n_steps: int | None = None, n_demos: int | None = None, ood: bool = False,
             trace_dir=None) -> MetricsRow:
    """Run ``cfg.n_eval_episodes`` episodes and aggregate them into one metrics row.

    Errors are the mean pick and place position errors in metres.
    """
    mode = mode or cfg.mode
    variant = NoiseVariant(variant or cfg.variant)
    icfg = replace(cfg.infer, mode=mode, variant=variant, n_steps=n_steps or cfg.infer.n_steps, seed=seed)
    scenes = eval_scenes(cfg.task, seed, cfg.n_eval_episodes)
    t0 = time.perf_counter()
    hits, picks, places = 0, [], []
    for ep, scene in enumerate(scenes):
        if ood:
            scene = ood_scene(scene, cfg, seed, ep)
        a, traces = actor(scene, icfg, ep, episode_rngs(seed, ep, len(DESK_LAYOUT)))
        hits += success(scene, a, cfg.task.tol_pos, cfg.task.tol_yaw, cfg.task.check_yaw)
        pe, qe, _ = action_errors(scene, a)
        picks.append(pe)
        places.append(qe)
        if trace_dir is not None and traces:
            write_traces(trace_dir, ep, scene, traces)
    wall = time.perf_counter() - t0
    return MetricsRow(experiment, seed, mode, variant.value, n_demos or cfg.n_demos, icfg.n_steps,
                      hits / len(scenes), float(np.mean(picks)), float(np.mean(places)), wall)


# ---------------------------------------------------------------------------
# ablation matrices


def _cells(which: str, cfg: ExperimentConfig):
    """Yield ``(experiment id, mode, variant, n_demos, n_steps, ood)`` for one matrix."""
    v = cfg.variant
    if which == "timesteps":
        for k in TIMESTEP_GRID:
            yield f"timesteps:{cfg.mode}:n{k}", cfg.mode, v, cfg.n_demos, k, False
    elif which == "demos":
        for n in DEMO_GRID:
            yield f"demos:{cfg.mode}:n{n}", cfg.mode, v, n, cfg.infer.n_steps, False
    elif which == "drift":
        for mode in DRIFT_MODES:
            for var in (NoiseVariant.NO_DRIFT, NoiseVariant.DRIFT):
                yield f"drift:{mode}:{var.value}", mode, var, cfg.n_demos, cfg.infer.n_steps, False
    elif which == "ood":
        for mode in OOD_MODES:
            for unseen in (False, True):
                tag = "unseen" if unseen else "seen"
                yield f"ood:{mode}:{tag}", mode, v, cfg.n_demos, cfg.infer.n_steps, unseen
    else:
        raise ValueError(f"unknown ablation {which!r}; choose from {ABLATIONS}")


def run_ablation(which: str, cfg: ExperimentConfig, cache: ModelCache | None = None, log=None,
                 on_row=None) -> list[MetricsRow]:
    """Per-seed rows for every cell, followed by one median summary row per cell."""
    cells = list(_cells(which, cfg))
    cache = cache or ModelCache(cfg, log=log)
    rows = []
    for seed in cfg.seeds:
        for exp, mode, variant, n_demos, n_steps, ood in cells:
            params = cache.get(mode, variant, n_demos, seed)
            row = evaluate(ModelActor(params), cfg, seed, exp, mode=mode, variant=variant,
                           n_steps=n_steps, n_demos=n_demos, ood=ood)
            rows.append(row)
            if on_row is not None:
                on_row(row)
            if log is not None:
                log(f"{exp} seed={seed} success={row.success_rate:.3f}")
    return rows + summarize(rows)
