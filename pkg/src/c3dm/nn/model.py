"""Observation encoder, noise-prediction denoiser and the training loss.

The encoder is a four-layer strided conv net (3x3, stride 2) followed by a
two-layer MLP. The denoiser is a four-layer MLP with residual skips that reads
``[embedding ; noisy-action features ; timestep features ; chain one-hot]``.

The noise target ``(a_noisy - a) / sigma`` grows like ``1/sigma`` at small t, which
a bounded MLP cannot follow. The output therefore has two parts. A gated term
``c * (a_noisy + offset(embedding, t, chain))``, where ``c`` is the reciprocal
noise scale, carries that growth. A damped MLP residual handles the rest. The
output is still a noise estimate trained on the plain noise MSE.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Var

__all__ = [
    "ModelConfig",
    "ParamSet",
    "init_params",
    "timestep_features",
    "encoder_forward",
    "denoiser_forward",
    "loss_and_grads",
    "count_params",
]


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 64
    channels: tuple[int, ...] = (8, 16, 32, 32)
    enc_hidden: int = 64
    embed_dim: int = 64
    action_dim: int = 3
    n_chains: int = 2
    temb_dim: int = 64
    use_t: bool = True
    den_hidden: int = 128
    ctx_hidden: int = 64
    residual_gain: float = 0.1
    pool: str = "keypoints"

    def __post_init__(self):
        if len(self.channels) != 4:
            raise ValueError("encoder uses exactly four conv layers")
        if self.image_size % 16:
            raise ValueError("image_size must be divisible by 16")
        if self.temb_dim % 2:
            raise ValueError("temb_dim must be even")
        if self.pool not in ("flatten", "keypoints"):
            raise ValueError("pool must be 'flatten' or 'keypoints'")

    @property
    def strides(self) -> tuple[int, ...]:
        # keypoint pooling keeps the last map at 1/4 resolution for finer soft-argmax
        return (2, 2, 1, 1) if self.pool == "keypoints" else (2, 2, 2, 2)

    @property
    def flat_dim(self) -> int:
        if self.pool == "keypoints":
            return 2 * self.channels[-1]
        return (self.image_size // 16) ** 2 * self.channels[-1]

    @property
    def den_in(self) -> int:
        return self.embed_dim + (self.temb_dim if self.use_t else 0) + self.n_chains + self.skip_in

    @property
    def ctx_in(self) -> int:
        return self.embed_dim + (1 if self.use_t else 0) + self.n_chains

    @property
    def skip_in(self) -> int:
        return 3 * self.action_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "channels" in d:
            d["channels"] = tuple(d["channels"])
        return cls(**d)


class ParamSet(dict):
    """Ordered name -> array map with the config it was built for."""

    def __init__(self, tensors=(), config: ModelConfig | None = None, seed: int | None = None):
        super().__init__(tensors)
        self.config = config
        self.seed = seed

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self.items()}, self.config, self.seed)

    def astype(self, dtype) -> "ParamSet":
        return ParamSet({k: v.astype(dtype) for k, v in self.items()}, self.config, self.seed)


def _shapes(cfg: ModelConfig):
    shapes = []
    cin = 3
    for i, cout in enumerate(cfg.channels):
        shapes.append((f"enc.conv{i}.w", (3, 3, cin, cout), 9 * cin))
        shapes.append((f"enc.conv{i}.b", (cout,), None))
        cin = cout
    shapes += [
        ("enc.fc0.w", (cfg.flat_dim, cfg.enc_hidden), cfg.flat_dim),
        ("enc.fc0.b", (cfg.enc_hidden,), None),
        ("enc.fc1.w", (cfg.enc_hidden, cfg.embed_dim), cfg.enc_hidden),
        ("enc.fc1.b", (cfg.embed_dim,), None),
        ("den.fc0.w", (cfg.den_in, cfg.den_hidden), cfg.den_in),
        ("den.fc0.b", (cfg.den_hidden,), None),
        ("den.fc1.w", (cfg.den_hidden, cfg.den_hidden), cfg.den_hidden),
        ("den.fc1.b", (cfg.den_hidden,), None),
        ("den.fc2.w", (cfg.den_hidden, cfg.den_hidden), cfg.den_hidden),
        ("den.fc2.b", (cfg.den_hidden,), None),
        ("den.out.w", (cfg.den_hidden, cfg.action_dim), None),
        ("den.out.b", (cfg.action_dim,), None),
        ("den.ctx.w", (cfg.ctx_in, cfg.ctx_hidden), cfg.ctx_in),
        ("den.ctx.b", (cfg.ctx_hidden,), None),
        ("den.gate.w", (cfg.ctx_hidden, cfg.action_dim), None),
        ("den.gate.b", (cfg.action_dim,), None),
    ]
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ParamSet:
    """He-style uniform fan-in initialisation, zero biases."""
    rng = np.random.default_rng(seed)
    params = ParamSet(config=cfg, seed=seed)
    for name, shape, fan_in in _shapes(cfg):
        if fan_in is None:
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            bound = math.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return params


def count_params(params: ParamSet) -> int:
    return int(sum(v.size for v in params.values()))


def timestep_features(t, dim: int) -> np.ndarray:
    """Sinusoidal features of ``t`` in [0, 1]; geometric frequencies 1..50 (smooth near t=0, where samples are rare)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(np.linspace(0.0, math.log(50.0), half))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _vars(params: ParamSet, prefix: str, trainable: bool):
    return {k: Var(v, requires_grad=trainable) for k, v in params.items() if k.startswith(prefix)}


def _encode(p, images: Var, cfg: ModelConfig) -> Var:
    # centre pixels on mid-gray so the flat table contributes ~0 and objects carry the signal
    h = Var(images.data * 2.0 - 1.0)
    for i, stride in enumerate(cfg.strides):
        h = ag.conv2d(h, p[f"enc.conv{i}.w"], p[f"enc.conv{i}.b"], stride=stride)
        if i < 3 or cfg.pool == "flatten":
            h = ag.relu(h)
    if cfg.pool == "keypoints":
        h = ag.spatial_softmax(h)
    else:
        h = ag.reshape(h, (h.data.shape[0], -1))
    h = ag.relu(ag.linear(h, p["enc.fc0.w"], p["enc.fc0.b"]))
    # linear output: a ReLU here can switch off every embedding unit for good
    return ag.linear(h, p["enc.fc1.w"], p["enc.fc1.b"])


def _denoise_inputs(cfg: ModelConfig, a_noisy, t, chain, dtype, inv_sigma=None):
    """MLP input ``[tanh(a*c) ; a ; 1/c ; temb ; one-hot]``, offset-branch input
    ``[t ; one-hot]``, the raw action and ``c``.

    ``c`` is the reciprocal noise scale of each action slot in the frame the
    action is expressed in (1 when not supplied); scalar, ``(d,)`` or ``(n, d)``.
    """
    n, d = a_noisy.shape
    if inv_sigma is None:
        c = np.ones((n, d))
    else:
        c = np.broadcast_to(np.asarray(inv_sigma, dtype=np.float64), (n, d))
    # the MLP sees bounded features; the unbounded scale only enters the gated head
    parts = [np.concatenate([np.tanh(a_noisy * c), a_noisy, 1.0 / c], axis=1).astype(dtype)]
    tt = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    if cfg.use_t:
        parts.append(timestep_features(tt, cfg.temb_dim).astype(dtype))
    onehot = np.zeros((n, cfg.n_chains), dtype=dtype)
    if cfg.n_chains:
        ch = np.broadcast_to(np.asarray(0 if chain is None else chain, dtype=int), (n,))
        onehot[np.arange(n), ch] = 1.0
    parts.append(onehot)
    # the offset branch gets raw t (smooth near 0) rather than the sinusoidal features
    ctx = [tt[:, None].astype(dtype)] if cfg.use_t else []
    ctx = np.concatenate(ctx + [onehot], axis=1)
    return np.concatenate(parts, axis=1), ctx, a_noisy.astype(dtype), c.astype(dtype)


def _denoise(p, cfg: ModelConfig, emb: Var, extra) -> Var:
    extra, ctx_in, a_in, c = extra
    x = ag.concat([emb, Var(extra)], axis=1)
    h1 = ag.relu(ag.linear(x, p["den.fc0.w"], p["den.fc0.b"]))
    h2 = ag.add(ag.relu(ag.linear(h1, p["den.fc1.w"], p["den.fc1.b"])), h1)
    h3 = ag.add(ag.relu(ag.linear(h2, p["den.fc2.w"], p["den.fc2.b"])), h2)
    out = ag.linear(h3, p["den.out.w"], p["den.out.b"])
    # noise-scale-gated head c * (a + G g + b), where g sees only the
    # context (embedding, t, chain): the unbounded 1/sigma growth of the target at
    # small t is carried by c, the MLP above only learns bounded residuals
    ctx = ag.concat([emb, Var(ctx_in)], axis=1)
    g = ag.relu(ag.linear(ctx, p["den.ctx.w"], p["den.ctx.b"]))
    offset = ag.linear(g, p["den.gate.w"], p["den.gate.b"])
    # a small gain on the residual lets the offset branch absorb the context term first
    out = ag.scale(out, np.asarray(cfg.residual_gain, dtype=c.dtype))
    return ag.add(out, ag.scale(ag.add(Var(a_in), offset), c))


def _check_images(cfg: ModelConfig, images: np.ndarray) -> np.ndarray:
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    s = cfg.image_size
    if images.shape[1:] != (s, s, 3):
        raise ValueError(f"encoder expects images of shape ({s}, {s}, 3), got {images.shape[1:]}")
    return images


def encoder_forward(params: ParamSet, O) -> np.ndarray:
    """Embedding(s) for one ``(h, w, 3)`` image or a batch ``(n, h, w, 3)``."""
    cfg = params.config
    single = np.ndim(O) == 3
    images = _check_images(cfg, O)
    dtype = params["enc.fc0.w"].dtype
    emb = _encode(_vars(params, "enc.", False), Var(images.astype(dtype)), cfg).data
    return emb[0] if single else emb


def denoiser_forward(params: ParamSet, o, a_noisy, t, chain=None, inv_sigma=None) -> np.ndarray:
    """Noise estimate for embedding(s) ``o`` and noisy action(s) at time ``t``."""
    cfg = params.config
    single = np.ndim(a_noisy) == 1
    o = np.atleast_2d(o)
    a = np.atleast_2d(np.asarray(a_noisy, dtype=np.float64))
    if a.shape[1] != cfg.action_dim or o.shape[1] != cfg.embed_dim:
        raise ValueError(
            f"denoiser expects action dim {cfg.action_dim} and embedding dim {cfg.embed_dim}, "
            f"got {a.shape[1]} and {o.shape[1]}"
        )
    if o.shape[0] != a.shape[0]:
        o = np.broadcast_to(o, (a.shape[0], o.shape[1]))
    dtype = params["den.fc0.w"].dtype
    extra = _denoise_inputs(cfg, a, t, chain, dtype, inv_sigma)
    out = _denoise(_vars(params, "den.", False), cfg, Var(o.astype(dtype)), extra).data
    return out[0] if single else out


def loss_and_grads(params: ParamSet, images, a_noisy, eps, t, chain=None, image_index=None, inv_sigma=None):
    """Mean over the batch of ``||eps_hat - eps||^2`` and its parameter gradients.

    ``image_index`` lets several rows share one image: row ``i`` is conditioned on
    ``images[image_index[i]]`` and each distinct image is encoded once.
    """
    cfg = params.config
    images = _check_images(cfg, images)
    n = images.shape[0] if image_index is None else len(image_index)
    if n == 0:
        raise ValueError("empty batch")
    a = np.asarray(a_noisy, dtype=np.float64).reshape(n, cfg.action_dim)
    eps = np.asarray(eps, dtype=np.float64).reshape(n, cfg.action_dim)
    dtype = params["enc.fc0.w"].dtype
    p = {k: Var(v, requires_grad=True) for k, v in params.items()}
    emb = _encode(p, Var(images.astype(dtype)), cfg)
    if image_index is not None:
        emb = ag.take(emb, image_index)
    pred = _denoise(p, cfg, emb, _denoise_inputs(cfg, a, t, chain, dtype, inv_sigma))
    loss = ag.squared_error_mean(pred, eps.astype(dtype))
    loss.backward()
    grads = ParamSet({k: (v.grad if v.grad is not None else np.zeros_like(v.data)) for k, v in p.items()},
                     cfg, params.seed)
    return float(loss.data), grads
