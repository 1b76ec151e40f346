"""Desk-scale place-red-in-green task: scene sampling, rendering and scoring.

The table is viewed by an orthographic top-down camera. Rendering is flat
shaded with centre-of-pixel sampling, so any window of the table can be
re-rendered exactly at any resolution (this is how zooming is realised).
"""

from __future__ import annotations

import colorsys
import json
import math
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import (
    DESK_LAYOUT,
    ActionVec,
    CameraTransform,
    Window,
    unnormalize_action,
    wrap_angle,
)

__all__ = [
    "TaskConfig",
    "ObjectSpec",
    "SceneSpec",
    "Demo",
    "sample_scene",
    "render",
    "render_highres_zoom",
    "camera_for",
    "oracle_action",
    "success",
    "action_errors",
    "swap_distractors",
    "rotate_demo",
    "make_demo",
    "scene_to_dict",
    "scene_from_dict",
    "write_ppm",
    "read_ppm",
    "hue_deg",
]

SHAPES = ("square_block", "disk_bowl", "bar", "ell")
ROLES = ("pick_target", "place_goal", "distractor")

RED = (0.8, 0.2, 0.2)
GREEN = (0.2, 0.75, 0.25)
TABLE_GRAY = (0.5, 0.5, 0.5)
TRAIN_PALETTE = ((0.2, 0.35, 0.8), (0.8, 0.75, 0.2), (0.55, 0.25, 0.8))
UNSEEN_PALETTE = ((0.2, 0.72, 0.78), (0.8, 0.3, 0.6), (0.82, 0.5, 0.18))


def hue_deg(rgb) -> float:
    return 360.0 * colorsys.rgb_to_hsv(*rgb)[0]


def _hue_dist(h1, h2):
    d = abs(h1 - h2) % 360.0
    return min(d, 360.0 - d)


@dataclass(frozen=True)
class TaskConfig:
    table_bounds: tuple[float, float, float, float] = (-0.5, -0.5, 0.5, 0.5)
    table_color: tuple[float, float, float] = TABLE_GRAY
    image_size: int = 64
    n_distractors: int = 3
    target_half: float = 0.03
    goal_half: float = 0.05
    distractor_half: float = 0.03
    margin: float = 1.5
    palette: tuple = TRAIN_PALETTE
    unseen_palette: tuple = UNSEEN_PALETTE
    unseen_shapes: tuple[str, ...] = ("bar", "ell")
    target_yaw_range: float = math.pi / 4
    tol_pos: float = 0.04
    tol_yaw: float = math.radians(15.0)
    check_yaw: bool = False
    pixel_noise: float = 0.0
    max_retries: int = 1000

    def __post_init__(self):
        if self.n_distractors < 0:
            raise ValueError("n_distractors must be >= 0")
        reserved = (hue_deg(RED), hue_deg(GREEN))
        for c in tuple(self.palette) + tuple(self.unseen_palette):
            if any(_hue_dist(hue_deg(c), r) < 15.0 for r in reserved):
                raise ValueError(f"palette colour {c} collides with target/goal hue")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TaskConfig":
        d = dict(d)
        for k in ("table_bounds", "table_color"):
            if k in d:
                d[k] = tuple(d[k])
        for k in ("palette", "unseen_palette"):
            if k in d:
                d[k] = tuple(tuple(c) for c in d[k])
        if "unseen_shapes" in d:
            d["unseen_shapes"] = tuple(d["unseen_shapes"])
        return cls(**d)


@dataclass(frozen=True)
class ObjectSpec:
    shape: str
    half_size: float
    position: tuple[float, float]
    yaw: float
    color: tuple[float, float, float]
    role: str

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")

    @property
    def radius(self) -> float:
        """Radius of a disk enclosing the footprint."""
        return self.half_size if self.shape == "disk_bowl" else self.half_size * math.sqrt(2.0)


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple[ObjectSpec, ...]
    table_bounds: tuple[float, float, float, float] = (-0.5, -0.5, 0.5, 0.5)
    table_color: tuple[float, float, float] = TABLE_GRAY
    seed: int = 0
    image_size: int = 64

    def by_role(self, role: str) -> list[ObjectSpec]:
        return [o for o in self.objects if o.role == role]

    @property
    def target(self) -> ObjectSpec:
        (o,) = self.by_role("pick_target")
        return o

    @property
    def goal(self) -> ObjectSpec:
        (o,) = self.by_role("place_goal")
        return o


@dataclass(frozen=True)
class Demo:
    scene: SceneSpec
    action: ActionVec


def camera_for(scene: SceneSpec, image_h: int | None = None, image_w: int | None = None) -> CameraTransform:
    h = image_h or scene.image_size
    w = image_w or scene.image_size
    return CameraTransform.for_table(scene.table_bounds, h, w)


def _place_ok(pos, radius, placed, margin):
    for q, r in placed:
        if math.hypot(pos[0] - q[0], pos[1] - q[1]) < margin * (radius + r):
            return False
    return True


def sample_scene(cfg: TaskConfig, seed: int) -> SceneSpec:
    """Rejection-sample a scene; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    xmin, ymin, xmax, ymax = cfg.table_bounds
    specs = [
        ("square_block", cfg.target_half, RED, "pick_target"),
        ("disk_bowl", cfg.goal_half, GREEN, "place_goal"),
    ]
    for _ in range(cfg.n_distractors):
        color = tuple(cfg.palette[rng.integers(len(cfg.palette))])
        specs.append(("square_block", cfg.distractor_half, color, "distractor"))

    for _ in range(cfg.max_retries):
        placed, objects = [], []
        for shape, half, color, role in specs:
            probe = ObjectSpec(shape, half, (0.0, 0.0), 0.0, color, role)
            r = probe.radius
            pos = None
            for _ in range(200):
                cand = (float(rng.uniform(xmin + r, xmax - r)), float(rng.uniform(ymin + r, ymax - r)))
                if _place_ok(cand, r, placed, cfg.margin):
                    pos = cand
                    break
            if pos is None:
                break
            if shape == "disk_bowl":
                yaw = 0.0
            elif role == "pick_target":
                yaw = float(rng.uniform(-cfg.target_yaw_range, cfg.target_yaw_range))
            else:
                yaw = float(rng.uniform(-math.pi / 4, math.pi / 4))
            placed.append((pos, r))
            objects.append(ObjectSpec(shape, half, pos, yaw, color, role))
        if len(objects) == len(specs):
            return SceneSpec(tuple(objects), tuple(cfg.table_bounds), tuple(cfg.table_color), seed, cfg.image_size)
    raise RuntimeError(f"could not place {len(specs)} objects after {cfg.max_retries} retries")


def _inside(obj: ObjectSpec, x, y):
    """Boolean mask of real points (x, y) covered by ``obj``."""
    dx = x - obj.position[0]
    dy = y - obj.position[1]
    h = obj.half_size
    if obj.shape == "disk_bowl":
        return dx * dx + dy * dy <= h * h
    c, s = math.cos(obj.yaw), math.sin(obj.yaw)
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    if obj.shape == "square_block":
        return (np.abs(lx) <= h) & (np.abs(ly) <= h)
    if obj.shape == "bar":
        return (np.abs(lx) <= h) & (np.abs(ly) <= 0.4 * h)
    # ell: two arms along the bottom and left edges of the square footprint
    arm = 0.3 * h
    in_sq = (np.abs(lx) <= h) & (np.abs(ly) <= h)
    return in_sq & ((ly <= -h + 2 * arm + 1e-12) | (lx <= -h + 2 * arm + 1e-12))


def render(scene: SceneSpec, window: Window | None = None, out_h: int | None = None,
           out_w: int | None = None, noise_sigma: float = 0.0, rng=None) -> np.ndarray:
    """Rasterise ``scene`` (optionally restricted to ``window``) to an ``(h, w, 3)`` array."""
    out_h = out_h or scene.image_size
    out_w = out_w or scene.image_size
    if window is None:
        window = Window.full(camera_for(scene))
    cam = window.parent
    # output pixel centres in parent pixel coordinates, then in metres
    u = window.lo[0] + (np.arange(out_w) + 0.5) * (2.0 * window.half_extent[0] / out_w)
    v = window.lo[1] + (np.arange(out_h) + 0.5) * (2.0 * window.half_extent[1] / out_h)
    xr = (u - cam.offset[0]) / cam.scale[0]
    yr = (v - cam.offset[1]) / cam.scale[1]

    img = np.empty((out_h, out_w, 3), dtype=np.float64)
    img[:] = scene.table_color
    for obj in scene.objects:
        r = obj.radius
        cols = np.nonzero(np.abs(xr - obj.position[0]) <= r)[0]
        rows = np.nonzero(np.abs(yr - obj.position[1]) <= r)[0]
        if cols.size == 0 or rows.size == 0:
            continue
        c0, c1 = cols[0], cols[-1] + 1
        r0, r1 = rows[0], rows[-1] + 1
        X, Y = np.meshgrid(xr[c0:c1], yr[r0:r1])
        m = _inside(obj, X, Y)
        img[r0:r1, c0:c1][m] = obj.color
    if noise_sigma > 0:
        rng = rng if rng is not None else np.random.default_rng(scene.seed)
        img = np.clip(img + rng.normal(0.0, noise_sigma, img.shape), 0.0, 1.0)
    return img


def render_highres_zoom(scene: SceneSpec, window: Window, out_h: int, out_w: int, factor: int = 8) -> np.ndarray:
    """Zoom by bilinear resampling of a cached ``factor``-times high-res render."""
    cam = window.parent
    H, W = cam.image_h * factor, cam.image_w * factor
    hi = render(scene, Window.full(CameraTransform.for_table(scene.table_bounds, H, W)), H, W)
    # sample points in high-res pixel units (pixel centres at k + 0.5)
    u = (window.lo[0] + (np.arange(out_w) + 0.5) * (2.0 * window.half_extent[0] / out_w)) * factor - 0.5
    v = (window.lo[1] + (np.arange(out_h) + 0.5) * (2.0 * window.half_extent[1] / out_h)) * factor - 0.5
    u = np.clip(u, 0, W - 1)
    v = np.clip(v, 0, H - 1)
    u0 = np.minimum(np.floor(u).astype(int), W - 2)
    v0 = np.minimum(np.floor(v).astype(int), H - 2)
    fu = (u - u0)[None, :, None]
    fv = (v - v0)[:, None, None]
    a = hi[v0][:, u0]
    b = hi[v0][:, u0 + 1]
    c = hi[v0 + 1][:, u0]
    d = hi[v0 + 1][:, u0 + 1]
    return (1 - fv) * ((1 - fu) * a + fu * b) + fv * ((1 - fu) * c + fu * d)


def canonical_block_yaw(yaw: float) -> float:
    """Square blocks look the same every quarter turn; map yaw into [-pi/4, pi/4)."""
    q = math.pi / 2
    return (yaw + math.pi / 4) % q - math.pi / 4


def oracle_action(scene: SceneSpec) -> ActionVec:
    tgt, goal = scene.target, scene.goal
    vals = [tgt.position[0], tgt.position[1], tgt.yaw, goal.position[0], goal.position[1], 0.0]
    return ActionVec(np.array(vals), DESK_LAYOUT, None)


def action_errors(scene: SceneSpec, a: ActionVec) -> tuple[float, float, float]:
    """(pick position error, place position error, pick yaw error) in metres/radians."""
    if a.frame is not None:
        a = unnormalize_action(a, a.frame)
    tgt, goal = scene.target, scene.goal
    pick_err = float(np.hypot(*(a.pos(0) - np.asarray(tgt.position))))
    place_err = float(np.hypot(*(a.pos(1) - np.asarray(goal.position))))
    yaw_slot = a.layout[0].yaw
    yaw_err = 0.0
    if yaw_slot is not None:
        d = canonical_block_yaw(a.values[yaw_slot] - tgt.yaw)
        yaw_err = abs(d)
    return pick_err, place_err, yaw_err


def success(scene: SceneSpec, a: ActionVec, tol_pos: float = 0.04, tol_yaw: float = math.radians(15.0),
            check_yaw: bool = False) -> bool:
    """Closed-ball success test on pick and place positions (and optionally yaw)."""
    pick_err, place_err, yaw_err = action_errors(scene, a)
    ok = pick_err <= tol_pos and place_err <= tol_pos
    if check_yaw:
        ok = ok and yaw_err <= tol_yaw
    return bool(ok)


def swap_distractors(scene: SceneSpec, unseen_cfg: TaskConfig, seed: int) -> SceneSpec:
    """Replace every distractor, in place, by an unseen shape in an unseen colour."""
    rng = np.random.default_rng(seed)
    objs = []
    for o in scene.objects:
        if o.role == "distractor":
            shape = unseen_cfg.unseen_shapes[rng.integers(len(unseen_cfg.unseen_shapes))]
            color = tuple(unseen_cfg.unseen_palette[rng.integers(len(unseen_cfg.unseen_palette))])
            o = replace(o, shape=shape, color=color)
        objs.append(o)
    return replace(scene, objects=tuple(objs))


def _rotate_xy(x, y, k):
    for _ in range(k % 4):
        x, y = -y, x
    return x, y


def rotate_demo(demo: Demo, k: int) -> Demo:
    """Rotate scene and action by ``k`` quarter turns about the table centre."""
    k %= 4
    if k == 0:
        return demo
    xmin, ymin, xmax, ymax = demo.scene.table_bounds
    cx, cy = (xmin + xmax) / 2, (ymin + ymax) / 2
    objs = []
    for o in demo.scene.objects:
        x, y = _rotate_xy(o.position[0] - cx, o.position[1] - cy, k)
        yaw = o.yaw + k * math.pi / 2
        yaw = canonical_block_yaw(yaw) if o.shape == "square_block" else float(wrap_angle(yaw))
        if o.shape == "disk_bowl":
            yaw = 0.0
        objs.append(replace(o, position=(x + cx, y + cy), yaw=yaw))
    scene = replace(demo.scene, objects=tuple(objs))
    return Demo(scene, oracle_action(scene))


def make_demo(cfg: TaskConfig, seed: int) -> Demo:
    scene = sample_scene(cfg, seed)
    return Demo(scene, oracle_action(scene))


def scene_to_dict(scene: SceneSpec) -> dict:
    return {
        "objects": [asdict(o) for o in scene.objects],
        "table_bounds": list(scene.table_bounds),
        "table_color": list(scene.table_color),
        "seed": scene.seed,
        "image_size": scene.image_size,
    }


def scene_from_dict(d: dict) -> SceneSpec:
    objs = tuple(
        ObjectSpec(o["shape"], float(o["half_size"]), tuple(o["position"]), float(o["yaw"]),
                   tuple(o["color"]), o["role"])
        for o in d["objects"]
    )
    return SceneSpec(objs, tuple(d["table_bounds"]), tuple(d["table_color"]), int(d["seed"]),
                     int(d.get("image_size", 64)))


def write_ppm(path, img: np.ndarray) -> None:
    """Write an ``(h, w, 3)`` float image in [0, 1] as binary PPM (P6, maxval 255)."""
    data = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise ValueError("not a binary PPM")
    w, h, maxval = (int(g) for g in m.groups())
    data = np.frombuffer(raw[m.end(): m.end() + w * h * 3], dtype=np.uint8).reshape(h, w, 3)
    return data.astype(np.float64) / maxval
