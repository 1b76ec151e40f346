"""Seed streams and on-disk datasets of oracle demonstrations.

A dataset directory holds one JSON file per episode plus ``manifest.json``,
which lists the task config, the scene seeds and the file names. Images are
never stored; they are rendered from the scene on demand.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..geometry import DESK_LAYOUT, ActionVec
from ..scene import Demo, TaskConfig, make_demo, sample_scene, scene_from_dict, scene_to_dict

MANIFEST = "manifest.json"
FORMAT = "c3dm-dataset/1"

_DEMO_STREAM = 1
_EVAL_STREAM = 2


def _stream_seed(seed: int, stream: int, index: int) -> int:
    return int(np.random.SeedSequence([stream, seed, index]).generate_state(1, dtype=np.uint32)[0])


def demo_seeds(seed: int, n: int) -> list[int]:
    """Scene seeds for the first ``n`` training demos of an experiment seed."""
    return [_stream_seed(seed, _DEMO_STREAM, i) for i in range(n)]


def eval_seeds(seed: int, n: int) -> list[int]:
    """Scene seeds for evaluation episodes; disjoint stream from the demo seeds."""
    return [_stream_seed(seed, _EVAL_STREAM, i) for i in range(n)]


def build_demos(task: TaskConfig, seed: int, n: int) -> list[Demo]:
    return [make_demo(task, s) for s in demo_seeds(seed, n)]


def eval_scenes(task: TaskConfig, seed: int, n: int):
    return [sample_scene(task, s) for s in eval_seeds(seed, n)]


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_dataset(out_dir, task: TaskConfig, seed: int, n: int) -> Path:
    """Write ``n`` episodes and the manifest; output bytes depend only on (task, seed, n)."""
    out = Path(out_dir)
    (out / "episodes").mkdir(parents=True, exist_ok=True)
    files = []
    for i, s in enumerate(demo_seeds(seed, n)):
        demo = make_demo(task, s)
        name = f"episodes/ep_{i:05d}.json"
        (out / name).write_text(_dump({"scene": scene_to_dict(demo.scene),
                                       "action": [float(v) for v in demo.action.values]}))
        files.append(name)
    manifest = {"format": FORMAT, "task": task.to_dict(), "seed": seed, "n_episodes": n,
                "scene_seeds": demo_seeds(seed, n), "episodes": files}
    (out / MANIFEST).write_text(_dump(manifest))
    return out / MANIFEST


def read_dataset(path) -> tuple[TaskConfig, list[Demo]]:
    """Load a dataset directory (or its manifest path)."""
    path = Path(path)
    root = path.parent if path.name == MANIFEST else path
    manifest = json.loads((root / MANIFEST).read_text())
    if manifest.get("format") != FORMAT:
        raise ValueError(f"unsupported dataset format {manifest.get('format')!r}")
    task = TaskConfig.from_dict(manifest["task"])
    demos = []
    for name in manifest["episodes"]:
        ep = json.loads((root / name).read_text())
        demos.append(Demo(scene_from_dict(ep["scene"]), ActionVec(np.array(ep["action"], dtype=np.float64),
                                                                  DESK_LAYOUT, None)))
    return task, demos
