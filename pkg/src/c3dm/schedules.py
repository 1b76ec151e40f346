"""Noise schedules and the two action noising processes.

Time runs over ``[0, T]``; ``alpha_bar(t)`` is the aggregated signal coefficient.
The *drift* process is the usual DDPM forward kernel
``sqrt(ab) * a + sqrt(1 - ab) * eps``; the *no-drift* process only diffuses,
``a + sqrt(1 - ab) * eps``, so noisy actions stay centred on the clean one.

Every function accepts scalar or array ``t``. Arrays of actions are broadcast
against ``t`` along the leading axis, which is what the trainer relies on when
noising a whole minibatch in one call.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ScheduleSpec",
    "NoiseVariant",
    "alpha_bar",
    "noise_with_drift",
    "noise_without_drift",
    "noise",
    "denoise_point_estimate",
    "renoise",
    "inference_grid",
]


class NoiseVariant(str, enum.Enum):
    DRIFT = "drift"
    NO_DRIFT = "no_drift"


@dataclass(frozen=True)
class ScheduleSpec:
    family: str = "linear"
    horizon_T: float = 1.0
    alpha_max: float = 1.0 - 1e-4
    alpha_min: float = 1e-4

    def __post_init__(self):
        if self.family not in ("linear", "cos2"):
            raise ValueError(f"unknown schedule family {self.family!r}")
        if not self.horizon_T > 0:
            raise ValueError("horizon_T must be positive")
        if not 0.0 < self.alpha_min < self.alpha_max < 1.0:
            raise ValueError("need 0 < alpha_min < alpha_max < 1")


def alpha_bar(spec: ScheduleSpec, t):
    """Clamped aggregated signal coefficient at time ``t`` (scalar or array)."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0.0) or np.any(t_arr > spec.horizon_T) or np.any(np.isnan(t_arr)):
        raise ValueError(f"t must lie in [0, {spec.horizon_T}], got {t!r}")
    s = t_arr / spec.horizon_T
    if spec.family == "linear":
        ab = 1.0 - s
    else:
        ab = np.cos(0.5 * math.pi * s) ** 2
    ab = np.clip(ab, spec.alpha_min, spec.alpha_max)
    return float(ab) if ab.ndim == 0 else ab


def _coeffs(spec, t, ndim):
    ab = np.asarray(alpha_bar(spec, t), dtype=np.float64)
    # scalar t broadcasts as-is; per-sample t gets trailing singleton axes
    if ab.ndim:
        ab = ab.reshape(ab.shape + (1,) * (ndim - ab.ndim))
    return np.sqrt(ab), np.sqrt(1.0 - ab)


def _check_shapes(a, b, what="eps"):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: action {a.shape} vs {what} {b.shape}")
    return a, b


def noise_with_drift(a, t, eps, spec: ScheduleSpec):
    a, eps = _check_shapes(a, eps)
    sa, sn = _coeffs(spec, t, a.ndim)
    return sa * a + sn * eps


def noise_without_drift(a, t, eps, spec: ScheduleSpec):
    a, eps = _check_shapes(a, eps)
    _, sn = _coeffs(spec, t, a.ndim)
    return a + sn * eps


def noise(a, t, eps, spec: ScheduleSpec, variant: NoiseVariant):
    if NoiseVariant(variant) is NoiseVariant.DRIFT:
        return noise_with_drift(a, t, eps, spec)
    return noise_without_drift(a, t, eps, spec)


def denoise_point_estimate(a_t, eps_hat, t, spec: ScheduleSpec, variant: NoiseVariant):
    """Point estimate of the clean action given predicted noise.

    For the drift process this is the usual ``(a_t - sqrt(1-ab) eps) / sqrt(ab)``;
    the DDPM posterior mean at ``t-1`` is that estimate scaled by
    ``sqrt(ab_{t-1})``, which is exactly what :func:`renoise` applies.
    """
    a_t, eps_hat = _check_shapes(a_t, eps_hat, "eps_hat")
    sa, sn = _coeffs(spec, t, a_t.ndim)
    est = a_t - sn * eps_hat
    if NoiseVariant(variant) is NoiseVariant.DRIFT:
        est = est / sa
    return est


def renoise(a0_hat, t_prev, eps, spec: ScheduleSpec, variant: NoiseVariant):
    """Sample the next latent from a clean-action estimate at ``t_prev``."""
    return noise(a0_hat, t_prev, eps, spec, variant)


def inference_grid(spec: ScheduleSpec, n_steps: int):
    """Descending times ``T, ..., T/n`` and their successors ``..., 0``."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    T = spec.horizon_T
    ts = [T * (n_steps - k) / n_steps for k in range(n_steps)]
    prevs = [T * (n_steps - k - 1) / n_steps for k in range(n_steps)]
    return ts, prevs
