"""Metrics rows, their fixed CSV schemas, and median summaries."""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, fields

import numpy as np

METRICS_HEADER = ("experiment", "seed", "mode", "variant", "n_demos", "n_steps",
                  "success_rate", "pick_err_m", "place_err_m", "wall_s")
LOSS_HEADER = ("epoch", "loss")

#: ``seed`` value marking a per-cell median-over-seeds summary row
SUMMARY_SEED = -1


@dataclass(frozen=True)
class MetricsRow:
    experiment: str
    seed: int
    mode: str
    variant: str
    n_demos: int
    n_steps: int
    success_rate: float
    pick_err_m: float
    place_err_m: float
    wall_s: float

    def __post_init__(self):
        if not 0.0 <= self.success_rate <= 1.0:
            raise ValueError(f"success_rate {self.success_rate} outside [0, 1]")

    @property
    def is_summary(self) -> bool:
        return self.seed == SUMMARY_SEED


def _fmt(v):
    # repr of a float is the shortest string that parses back to the same double
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_metrics(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow([_fmt(v) for v in astuple(r)])


def read_metrics(path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = tuple(next(rd))
        if header != METRICS_HEADER:
            raise ValueError(f"unexpected metrics header {header}")
        out = []
        for rec in rd:
            out.append(MetricsRow(*(_parse(f.name, raw) for f, raw in zip(fields(MetricsRow), rec))))
        return out


_INT_FIELDS = {"seed", "n_demos", "n_steps"}
_STR_FIELDS = {"experiment", "mode", "variant"}


def _parse(name, raw):
    if name in _STR_FIELDS:
        return raw
    if name in _INT_FIELDS:
        return int(raw)
    return float(raw)


def write_loss_csv(path, losses, start_epoch: int = 0) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOSS_HEADER)
        for i, v in enumerate(losses):
            w.writerow([start_epoch + i, repr(float(v))])


def read_loss_csv(path) -> list[tuple[int, float]]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        if tuple(next(rd)) != LOSS_HEADER:
            raise ValueError("unexpected loss.csv header")
        return [(int(e), float(v)) for e, v in rd]


def summarize(rows) -> list[MetricsRow]:
    """One median-over-seeds row per experiment cell, in first-appearance order."""
    cells: dict[tuple, list[MetricsRow]] = {}
    for r in rows:
        if r.is_summary:
            continue
        key = (r.experiment, r.mode, r.variant, r.n_demos, r.n_steps)
        cells.setdefault(key, []).append(r)
    out = []
    for (exp, mode, variant, n_demos, n_steps), rs in cells.items():
        med = lambda attr: float(np.median([getattr(r, attr) for r in rs]))  # noqa: E731
        out.append(MetricsRow(exp, SUMMARY_SEED, mode, variant, n_demos, n_steps,
                              med("success_rate"), med("pick_err_m"), med("place_err_m"), med("wall_s")))
    return out


def summary_lookup(rows) -> dict[str, MetricsRow]:
    return {r.experiment: r for r in rows if r.is_summary}


def disk_table_overlap(center, radius: float, bounds, n: int = 20001) -> float:
    """Area of a disk intersected with an axis-aligned rectangle, by trapezoid quadrature."""
    cx, cy = center
    xmin, ymin, xmax, ymax = bounds
    lo, hi = max(cx - radius, xmin), min(cx + radius, xmax)
    if hi <= lo:
        return 0.0
    x = np.linspace(lo, hi, n)
    half = np.sqrt(np.clip(radius ** 2 - (x - cx) ** 2, 0.0, None))
    h = np.clip(np.minimum(cy + half, ymax) - np.maximum(cy - half, ymin), 0.0, None)
    return float(np.trapezoid(h, x))


def random_hit_probability(scene, tol_pos: float) -> float:
    """Chance that uniform pick and place draws over the table both land within ``tol_pos``."""
    xmin, ymin, xmax, ymax = scene.table_bounds
    area = (xmax - xmin) * (ymax - ymin)
    p = 1.0
    for obj in (scene.target, scene.goal):
        p *= disk_table_overlap(obj.position, tol_pos, scene.table_bounds) / area
    return p


def binomial_band(p: float, n: int, k: float = 3.0) -> tuple[float, float]:
    s = k * math.sqrt(max(p * (1.0 - p), 0.0) / n)
    return p - s, p + s
