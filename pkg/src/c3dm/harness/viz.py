"""Trace images: the scene with the current window and fixation point drawn on top."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..geometry import Window
from ..scene import render, write_ppm

WINDOW_RGB = (1.0, 1.0, 0.0)
FIX_RGB = (1.0, 1.0, 1.0)
ESTIMATE_RGB = (0.0, 0.0, 0.0)


def trace_frame(scene, step, scale: int = 4) -> np.ndarray:
    """Full-view render upscaled by ``scale`` with the step's window outline and fixation cross."""
    size = scene.image_size * scale
    img = render(scene, None, size, size).copy()
    w: Window = step.window
    lo = np.floor(np.asarray(w.lo) * scale).astype(int)
    hi = np.ceil(np.asarray(w.hi) * scale).astype(int) - 1
    lo = np.clip(lo, 0, size - 1)
    hi = np.clip(hi, 0, size - 1)
    (u0, v0), (u1, v1) = lo, hi
    img[v0, u0:u1 + 1] = WINDOW_RGB
    img[v1, u0:u1 + 1] = WINDOW_RGB
    img[v0:v1 + 1, u0] = WINDOW_RGB
    img[v0:v1 + 1, u1] = WINDOW_RGB
    u, v = np.clip(np.floor(np.asarray(step.fixation) * scale).astype(int), 0, size - 1)
    arm = max(scale, 2)
    img[v, max(u - arm, 0):u + arm + 1] = FIX_RGB
    img[max(v - arm, 0):v + arm + 1, u] = FIX_RGB
    return img


def trace_name(episode: int, sub: int, k: int) -> str:
    return f"ep{episode}_sub{sub}_t{k}.ppm"


def write_traces(out_dir, episode: int, scene, traces, scale: int = 4) -> list[Path]:
    """One PPM per (sub-action, step); returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for sub, tr in enumerate(traces):
        for k, step in enumerate(tr.steps):
            p = out / trace_name(episode, sub, k)
            write_ppm(p, trace_frame(scene, step, scale))
            paths.append(p)
    return paths
