"""Camera transforms, fixation windows and action re-normalisation.

Pixel coordinates are continuous ``(u, v)`` pairs: ``u`` runs along image
columns, ``v`` along rows, and pixel ``(row i, col j)`` has its centre at
``(j + 0.5, i + 0.5)``. Real coordinates are metres on the table plane.

A :class:`Window` is an axis-aligned rectangle in the pixel space of a parent
:class:`CameraTransform`. Actions expressed relative to a window live in a
normalised frame where the window's real-plane rectangle spans ``[-1, 1]^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .schedules import ScheduleSpec

__all__ = [
    "SubAction",
    "DESK_LAYOUT",
    "ActionVec",
    "CameraTransform",
    "Window",
    "real_to_img",
    "img_to_real",
    "fixation_point",
    "constrain_window",
    "mask_context",
    "zoom_context",
    "renormalize_action",
    "unnormalize_action",
    "wrap_angle",
]


def wrap_angle(x):
    """Wrap angles into (-pi, pi]."""
    y = np.mod(np.asarray(x, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    y = np.where(y == -np.pi, np.pi, y)
    return float(y) if y.ndim == 0 else y


@dataclass(frozen=True)
class SubAction:
    name: str
    x: int
    y: int
    yaw: int | None = None

    @property
    def slots(self) -> tuple[int, ...]:
        return (self.x, self.y) if self.yaw is None else (self.x, self.y, self.yaw)


DESK_LAYOUT = (SubAction("pick", 0, 1, 2), SubAction("place", 3, 4, 5))


@dataclass(frozen=True)
class CameraTransform:
    scale: tuple[float, float]
    offset: tuple[float, float]
    image_h: int
    image_w: int

    def __post_init__(self):
        if self.scale[0] == 0 or self.scale[1] == 0:
            raise ValueError("camera scale must be non-zero")
        if self.image_h < 1 or self.image_w < 1:
            raise ValueError("image size must be positive")

    @classmethod
    def for_table(cls, bounds, image_h: int, image_w: int) -> "CameraTransform":
        """Camera mapping ``bounds = (xmin, ymin, xmax, ymax)`` onto the whole image."""
        xmin, ymin, xmax, ymax = bounds
        sx = image_w / (xmax - xmin)
        sy = image_h / (ymax - ymin)
        return cls((sx, sy), (-xmin * sx, -ymin * sy), image_h, image_w)

    @property
    def size(self) -> np.ndarray:
        return np.array([self.image_w, self.image_h], dtype=np.float64)


def real_to_img(T: CameraTransform, xy):
    xy = np.asarray(xy, dtype=np.float64)
    return xy * np.asarray(T.scale) + np.asarray(T.offset)


def img_to_real(T: CameraTransform, pixel):
    pixel = np.asarray(pixel, dtype=np.float64)
    return (pixel - np.asarray(T.offset)) / np.asarray(T.scale)


@dataclass(frozen=True, eq=False)
class Window:
    center: np.ndarray
    half_extent: np.ndarray
    parent: CameraTransform

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).copy())
        object.__setattr__(self, "half_extent", np.asarray(self.half_extent, dtype=np.float64).copy())
        if np.any(self.half_extent <= 0):
            raise ValueError("window half-extent must be positive")

    @classmethod
    def full(cls, parent: CameraTransform) -> "Window":
        size = parent.size
        return cls(size / 2.0, size / 2.0, parent)

    @property
    def lo(self) -> np.ndarray:
        return self.center - self.half_extent

    @property
    def hi(self) -> np.ndarray:
        return self.center + self.half_extent

    @property
    def area(self) -> float:
        return float(4.0 * self.half_extent[0] * self.half_extent[1])

    def contains(self, p, tol: float = 1e-9) -> bool:
        p = np.asarray(p, dtype=np.float64)
        return bool(np.all(p >= self.lo - tol) and np.all(p <= self.hi + tol))

    def inside_image(self, tol: float = 1e-9) -> bool:
        return bool(np.all(self.lo >= -tol) and np.all(self.hi <= self.parent.size + tol))

    @property
    def real_center(self) -> np.ndarray:
        return img_to_real(self.parent, self.center)

    @property
    def real_half(self) -> np.ndarray:
        return self.half_extent / np.abs(np.asarray(self.parent.scale))

    def local_transform(self, out_h: int, out_w: int) -> CameraTransform:
        """Real metres -> pixels of an ``out_h x out_w`` image of this window."""
        k = np.array([out_w, out_h], dtype=np.float64) / (2.0 * self.half_extent)
        scale = np.asarray(self.parent.scale) * k
        offset = (np.asarray(self.parent.offset) - self.lo) * k
        return CameraTransform(tuple(scale), tuple(offset), out_h, out_w)

    def normalized_transform(self, out_h: int, out_w: int) -> CameraTransform:
        """Window-normalised coordinates -> pixels of an ``out_h x out_w`` image."""
        half_px = np.array([out_w, out_h], dtype=np.float64) / 2.0
        sign = np.sign(np.asarray(self.parent.scale))
        return CameraTransform(tuple(sign * half_px), tuple(half_px), out_h, out_w)

    def same_as(self, other: "Window") -> bool:
        return (
            self.parent == other.parent
            and np.array_equal(self.center, other.center)
            and np.array_equal(self.half_extent, other.half_extent)
        )


@dataclass(frozen=True, eq=False)
class ActionVec:
    """Flat action vector; ``frame`` is ``None`` for global metres or a Window."""

    values: np.ndarray
    layout: tuple[SubAction, ...] = DESK_LAYOUT
    frame: Window | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64).copy()
        object.__setattr__(self, "values", vals)
        n = sum(len(s.slots) for s in self.layout)
        if vals.shape != (n,):
            raise ValueError(f"action has shape {vals.shape}, layout needs ({n},)")

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def pos(self, sub_action: int) -> np.ndarray:
        if not 0 <= sub_action < len(self.layout):
            raise IndexError(f"sub-action index {sub_action} out of range")
        s = self.layout[sub_action]
        return self.values[[s.x, s.y]]

    def with_values(self, values) -> "ActionVec":
        return replace(self, values=values)


def _position_slots(layout):
    xs = np.array([s.x for s in layout], dtype=int)
    ys = np.array([s.y for s in layout], dtype=int)
    return xs, ys


def renormalize_action(a: ActionVec, w: Window) -> ActionVec:
    """Express ``a`` in the normalised frame of window ``w``.

    ``a`` may be in global metres or in the frame of another window over the same
    parent camera. Yaw slots pass through unchanged.
    """
    if a.frame is not None:
        a = unnormalize_action(a, a.frame)
    xs, ys = _position_slots(a.layout)
    c, h = w.real_center, w.real_half
    v = a.values.copy()
    v[xs] = (v[xs] - c[0]) / h[0]
    v[ys] = (v[ys] - c[1]) / h[1]
    return ActionVec(v, a.layout, w)


def unnormalize_action(a: ActionVec, w: Window) -> ActionVec:
    """Inverse of :func:`renormalize_action`: back to global metres."""
    xs, ys = _position_slots(a.layout)
    c, h = w.real_center, w.real_half
    v = a.values.copy()
    v[xs] = v[xs] * h[0] + c[0]
    v[ys] = v[ys] * h[1] + c[1]
    return ActionVec(v, a.layout, None)


def fixation_point(a: ActionVec, sub_action: int, T: CameraTransform) -> np.ndarray:
    return real_to_img(T, a.pos(sub_action))


def window_fraction(t: float, spec: ScheduleSpec, f_min: float) -> float:
    return max(float(t) / spec.horizon_T, f_min)


def constrain_window(p, t, spec: ScheduleSpec, f_min: float, T: CameraTransform, rng=None) -> Window:
    """Window of side ``max(t/T, f_min)`` of the image around fixation ``p``.

    With an ``rng`` the centre is jittered uniformly over all offsets that keep
    ``p`` strictly inside; without one the window is centred on ``p``. The window
    is then translated (never shrunk) to lie inside the image.
    """
    p = np.asarray(p, dtype=np.float64)
    size = T.size
    if p.shape != (2,) or not np.all(np.isfinite(p)):
        raise ValueError(f"bad fixation point {p!r}")
    if np.any(p < 0) or np.any(p > size):
        raise ValueError(f"fixation point {p} outside image {tuple(size)}")
    f = window_fraction(t, spec, f_min)
    half = np.maximum(f * size / 2.0, 1.0)
    half = np.minimum(half, size / 2.0)
    center = p.copy()
    if rng is not None:
        center = center + rng.uniform(-half, half)
    center = np.clip(center, half, size - half)
    return Window(center, half, T)


def _pixel_centers_inside(shape_hw, w: Window):
    h, wd = shape_hw
    u = np.arange(wd) + 0.5
    v = np.arange(h) + 0.5
    in_u = (u >= w.lo[0]) & (u <= w.hi[0])
    in_v = (v >= w.lo[1]) & (v <= w.hi[1])
    return in_v[:, None] & in_u[None, :]


def mask_context(O: np.ndarray, w: Window, background) -> np.ndarray:
    """Set pixels whose centres fall outside ``w`` to ``background``."""
    inside = _pixel_centers_inside(O.shape[:2], w)
    out = O.copy()
    out[~inside] = np.asarray(background, dtype=O.dtype)
    return out


def zoom_context(scene, w: Window, out_h: int, out_w: int) -> np.ndarray:
    """Re-render ``scene`` restricted to ``w`` at ``out_h x out_w``."""
    from .scene import render

    if np.any(w.half_extent <= 0):
        raise ValueError("degenerate window")
    return render(scene, w, out_h, out_w)
