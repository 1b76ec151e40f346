"""Experiment configuration: one JSON file plus a handful of flag overrides.

The JSON layout mirrors the dataclasses::

    {
      "mode": "zoom", "variant": "no_drift", "n_steps": 10,
      "n_demos": 30, "n_eval_episodes": 50, "n_seeds": 3, "seed": 0,
      "output_dir": "runs",
      "task":  {...TaskConfig fields...},
      "train": {...TrainConfig fields, minus mode/variant...},
      "infer": {...InferConfig fields, minus mode/variant/n_steps...},
      "model": {...ModelConfig fields...}
    }

``mode`` and ``variant`` live at the top level because training and
inference must agree on them. Unknown keys are rejected.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..fddp import MODES, InferConfig, TrainConfig
from ..nn import ModelConfig
from ..schedules import NoiseVariant, ScheduleSpec
from ..scene import TaskConfig


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


_TOP_KEYS = {"mode", "variant", "n_steps", "n_demos", "n_eval_episodes", "n_seeds", "seed", "output_dir",
             "task", "train", "infer", "model", "schedule"}


@dataclass(frozen=True)
class ExperimentConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    infer: InferConfig = field(default_factory=InferConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    n_demos: int = 30
    n_eval_episodes: int = 50
    n_seeds: int = 3
    seed: int = 0
    output_dir: str = "runs"

    def __post_init__(self):
        if self.n_eval_episodes < 1:
            raise ConfigError("n_eval_episodes must be >= 1")
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be >= 1")
        if self.n_demos < 1:
            raise ConfigError("n_demos must be >= 1")
        if self.train.mode != self.infer.mode or self.train.variant != self.infer.variant:
            raise ConfigError("train and infer must use the same mode and variant")
        if self.train.schedule != self.infer.schedule:
            raise ConfigError("train and infer must use the same schedule")

    @property
    def mode(self) -> str:
        return self.train.mode

    @property
    def variant(self) -> NoiseVariant:
        return self.train.variant

    @property
    def seeds(self) -> list[int]:
        return [self.seed + k for k in range(self.n_seeds)]

    def with_overrides(self, seed=None, mode=None, n_steps=None, n_demos=None, out=None,
                       variant=None, n_eval_episodes=None, n_seeds=None, epochs=None) -> "ExperimentConfig":
        """Flag values win over file values; ``None`` leaves a field alone."""
        try:
            train, infer = self.train, self.infer
            if mode is not None:
                train, infer = replace(train, mode=mode), replace(infer, mode=mode)
            if variant is not None:
                train, infer = replace(train, variant=variant), replace(infer, variant=variant)
            if n_steps is not None:
                infer = replace(infer, n_steps=n_steps)
            if seed is not None:
                train, infer = replace(train, seed=seed), replace(infer, seed=seed)
            if epochs is not None:
                train = replace(train, epochs=epochs)
            top = {}
            if seed is not None:
                top["seed"] = seed
            if n_demos is not None:
                top["n_demos"] = n_demos
            if out is not None:
                top["output_dir"] = str(out)
            if n_eval_episodes is not None:
                top["n_eval_episodes"] = n_eval_episodes
            if n_seeds is not None:
                top["n_seeds"] = n_seeds
            return replace(self, train=train, infer=infer, **top)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        train = asdict(self.train)
        infer = asdict(self.infer)
        for d in (train, infer):
            d.pop("mode")
            d.pop("variant")
            d.pop("schedule")
        n_steps = infer.pop("n_steps")
        sched = asdict(self.train.schedule)
        return {
            "mode": self.mode,
            "variant": self.variant.value,
            "n_steps": n_steps,
            "n_demos": self.n_demos,
            "n_eval_episodes": self.n_eval_episodes,
            "n_seeds": self.n_seeds,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "schedule": sched,
            "task": self.task.to_dict(),
            "train": train,
            "infer": {**infer, "act_bounds": [list(b) for b in self.infer.act_bounds]},
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            mode = d.get("mode", "zoom")
            if mode not in MODES:
                raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
            variant = NoiseVariant(d.get("variant", "no_drift"))
            sched = ScheduleSpec(**d.get("schedule", {}))
            train_d = _checked(d.get("train", {}), TrainConfig, "train", {"mode", "variant", "schedule"})
            infer_d = _checked(d.get("infer", {}), InferConfig, "infer", {"mode", "variant", "schedule", "n_steps"})
            if "act_bounds" in infer_d:
                infer_d["act_bounds"] = tuple(tuple(float(x) for x in b) for b in infer_d["act_bounds"])
            seed = int(d.get("seed", 0))
            train_d.setdefault("seed", seed)
            infer_d.setdefault("seed", seed)
            train = TrainConfig(mode=mode, variant=variant, schedule=sched, **train_d)
            infer = InferConfig(mode=mode, variant=variant, schedule=sched,
                                n_steps=int(d.get("n_steps", 10)), **infer_d)
            task = TaskConfig.from_dict(_checked(d.get("task", {}), TaskConfig, "task"))
            model = ModelConfig.from_dict(_checked(d.get("model", {}), ModelConfig, "model"))
            return cls(task=task, train=train, infer=infer, model=model,
                       n_demos=int(d.get("n_demos", 30)),
                       n_eval_episodes=int(d.get("n_eval_episodes", 50)),
                       n_seeds=int(d.get("n_seeds", 3)), seed=seed,
                       output_dir=str(d.get("output_dir", "runs")))
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _checked(d, klass, section, forbidden=()):
    if not isinstance(d, dict):
        raise ConfigError(f"'{section}' must be a JSON object")
    allowed = {f.name for f in fields(klass)} - set(forbidden)
    bad = set(d) - allowed
    if bad:
        raise ConfigError(f"unknown or misplaced keys in '{section}': {sorted(bad)}")
    return dict(d)


def load_config(path) -> ExperimentConfig:
    """Read a JSON config; a missing path is an I/O error, bad content a config error."""
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(raw)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
