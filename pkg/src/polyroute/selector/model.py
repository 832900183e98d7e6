"""Configuration-score regressor: backbone adapter, input assembly and conv head.

Shapes used throughout::

    task_raw     (B, e)          frozen backbone output per task
    config_raw   (e, *grid)      frozen backbone output per configuration cell
    X            (B, 2e, *grid)  adapted task embedding broadcast || config embedding
    y_hat        (B, *grid)      predicted score per configuration, in (0, 1)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from polyroute.errors import ArchitectureError
from polyroute.selector.convnd import conv_backward, conv_forward, gather_matrix

ACTIVATIONS = ("relu", "sigmoid", "identity")
DEFAULT_CHANNELS = (64, 16)
DEFAULT_KERNEL = 3


@dataclass
class ConvLayer:
    kernel: np.ndarray
    bias: np.ndarray
    activation: str

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ArchitectureError(f"unknown activation {self.activation!r}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ArchitectureError("bias length must equal output channels")


@dataclass
class HeadParams:
    """Conv stack plus an optional linear adapter ``A x + a`` on backbone outputs."""

    layers: list[ConvLayer]
    adapter_w: Optional[np.ndarray] = None
    adapter_b: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.layers:
            raise ArchitectureError("head needs at least one layer")
        if self.layers[-1].kernel.shape[0] != 1:
            raise ArchitectureError("last layer must output a single channel")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.kernel.shape[0] != nxt.kernel.shape[1]:
                raise ArchitectureError("channel chain is broken")
        if self.in_channels % 2:
            raise ArchitectureError("input channels must be 2e")
        if self.adapter_w is not None and self.adapter_w.shape != (self.e, self.e):
            raise ArchitectureError("adapter must be e x e")

    @property
    def in_channels(self) -> int:
        return self.layers[0].kernel.shape[1]

    @property
    def e(self) -> int:
        return self.in_channels // 2

    @property
    def rank(self) -> int:
        return self.layers[0].kernel.ndim - 2

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"layer{i}.kernel"] = layer.kernel
            out[f"layer{i}.bias"] = layer.bias
        if self.adapter_w is not None:
            out["adapter.w"] = self.adapter_w
            out["adapter.b"] = self.adapter_b
        return out

    def manifest(self) -> dict:
        return {
            "e": self.e,
            "rank": self.rank,
            "layers": [
                {"c_out": l.kernel.shape[0], "c_in": l.kernel.shape[1], "kernel": list(l.kernel.shape[2:]),
                 "activation": l.activation}
                for l in self.layers
            ],
            "adapter": self.adapter_w is not None,
        }

    @classmethod
    def from_arrays(cls, manifest: dict, arrays: dict) -> "HeadParams":
        layers = [
            ConvLayer(np.array(arrays[f"layer{i}.kernel"]), np.array(arrays[f"layer{i}.bias"]), spec["activation"])
            for i, spec in enumerate(manifest["layers"])
        ]
        if manifest.get("adapter"):
            return cls(layers, np.array(arrays["adapter.w"]), np.array(arrays["adapter.b"]))
        return cls(layers)

    def copy(self) -> "HeadParams":
        return HeadParams.from_arrays(self.manifest(), {k: v.copy() for k, v in self.arrays().items()})


def init_head(e: int, rank: int = 3, channels: Sequence[int] = DEFAULT_CHANNELS, kernel: int = DEFAULT_KERNEL,
              rng: Optional[np.random.Generator] = None, adapter: bool = True) -> HeadParams:
    """He-initialised conv stack ``2e -> channels... -> 1``; ReLU inside, sigmoid out."""
    if e < 1 or rank < 1:
        raise ArchitectureError("need e >= 1 and rank >= 1")
    if kernel % 2 == 0:
        raise ArchitectureError("kernel size must be odd to preserve the grid")
    rng = rng if rng is not None else np.random.default_rng(0)
    chain = [2 * e, *channels, 1]
    layers = []
    for i, (c_in, c_out) in enumerate(zip(chain, chain[1:])):
        fan_in = c_in * kernel ** rank
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in) + (kernel,) * rank)
        last = i == len(chain) - 2
        layers.append(ConvLayer(w, np.zeros(c_out), "sigmoid" if last else "relu"))
    if adapter:
        return HeadParams(layers, np.eye(e), np.zeros(e))
    return HeadParams(layers)


def _act(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    return z


def _act_grad(z, h, kind):
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    if kind == "sigmoid":
        return h * (1.0 - h)
    return np.ones_like(z)


def build_input(task_emb: np.ndarray, config_embs: np.ndarray) -> np.ndarray:
    """Broadcast the task embedding over the grid and stack it on the config embeddings.

    Accepts a single task ``(e,)`` -> ``(2e, *grid)`` or a batch ``(B, e)`` ->
    ``(B, 2e, *grid)``.
    """
    task_emb = np.asarray(task_emb, dtype=float)
    config_embs = np.asarray(config_embs, dtype=float)
    e, grid = config_embs.shape[0], config_embs.shape[1:]
    if task_emb.shape[-1] != e:
        raise ArchitectureError(f"task embedding size {task_emb.shape[-1]} != config embedding size {e}")
    single = task_emb.ndim == 1
    t = task_emb[None] if single else task_emb
    b = t.shape[0]
    x = np.empty((b, 2 * e) + grid)
    x[:, :e] = t.reshape((b, e) + (1,) * len(grid))
    x[:, e:] = config_embs[None]
    return x[0] if single else x


def head_forward(params: HeadParams, x: np.ndarray, keep: bool = False):
    """Run the conv stack on assembled input ``(B, 2e, *grid)`` -> ``(B, *grid)``."""
    if x.ndim != params.rank + 2:
        raise ArchitectureError(f"input rank {x.ndim - 2} does not match head rank {params.rank}")
    if x.shape[1] != params.in_channels:
        raise ArchitectureError(f"input has {x.shape[1]} channels, head expects {params.in_channels}")
    tape = []
    h = x
    for layer in params.layers:
        z, cols = conv_forward(h, layer.kernel, layer.bias)
        out = _act(z, layer.activation)
        if keep:
            tape.append((h.shape, cols, z, out))
        h = out
    y = h[:, 0]
    return (y, tape) if keep else y


def head_backward(params: HeadParams, tape, dy: np.ndarray, need_dx: bool = True):
    grads = {}
    dh = dy[:, None]
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        x_shape, cols, z, out = tape[i]
        dz = dh * _act_grad(z, out, layer.activation)
        dx, dw, db = conv_backward(dz, cols, x_shape, layer.kernel, need_dx=need_dx or i > 0)
        grads[f"layer{i}.kernel"] = dw
        grads[f"layer{i}.bias"] = db
        dh = dx
    return grads, dh


@dataclass
class ForwardCache:
    task_raw: np.ndarray
    config_raw: np.ndarray
    task_emb: np.ndarray
    config_emb: np.ndarray
    first: tuple = ()
    tape: list = field(default_factory=list)


def adapt(params: HeadParams, task_raw: np.ndarray, config_raw: np.ndarray):
    if params.adapter_w is None:
        return task_raw, config_raw
    e = params.e
    t = task_raw @ params.adapter_w.T + params.adapter_b
    c = (params.adapter_w @ config_raw.reshape(e, -1) + params.adapter_b[:, None]).reshape(config_raw.shape)
    return t, c


def _first_layer(layer: ConvLayer, t: np.ndarray, c: np.ndarray):
    """First convolution without materialising the broadcast input.

    The task half of the input is constant over the grid, so its response is
    ``t @ V`` where ``V`` sums each kernel tap over the in-bounds offsets.  The
    config half is shared by the whole batch and is convolved once.
    """
    e, grid = c.shape[0], c.shape[1:]
    n = math.prod(grid)
    w = layer.kernel
    o = w.shape[0]
    g = gather_matrix(tuple(grid), tuple(w.shape[2:]))
    k = g.shape[0] // n
    valid = g.reshape(k, n, n).sum(axis=2)
    v = w[:, :e].reshape(o, e, k) @ valid
    cols_c = (c.reshape(e, n) @ g.T).reshape(e * k, n)
    u = w[:, e:].reshape(o, e * k) @ cols_c
    b = t.shape[0]
    z = (t @ v.transpose(1, 0, 2).reshape(e, o * n)).reshape(b, o, n) + u + layer.bias[:, None]
    return z.reshape((b, o) + grid), (valid, v, cols_c, g)


def _first_layer_backward(layer: ConvLayer, saved, t: np.ndarray, dz: np.ndarray):
    valid, v, cols_c, g = saved
    b, o = dz.shape[:2]
    e = t.shape[1]
    n = valid.shape[1]
    k = valid.shape[0]
    dz = dz.reshape(b, o, n)
    dw_t = np.tensordot(t, dz @ valid.T, axes=(0, 0)).transpose(1, 0, 2)
    dzs = dz.sum(axis=0)
    dw_c = (dzs @ cols_c.T).reshape(o, e, k)
    dw = np.concatenate([dw_t, dw_c], axis=1).reshape(layer.kernel.shape)
    db = dzs.sum(axis=1)
    dt = dz.reshape(b, o * n) @ v.transpose(0, 2, 1).reshape(o * n, e)
    dc = (layer.kernel[:, e:].reshape(o, e * k).T @ dzs).reshape(e, k * n) @ g
    return dw, db, dt, dc


def predict(params: HeadParams, task_raw: np.ndarray, config_raw: np.ndarray, keep: bool = False):
    """Full pipeline from frozen backbone outputs to scores ``(B, *grid)``.

    Numerically equal to ``head_forward(params, build_input(*adapt(...)))``.
    """
    task_raw = np.atleast_2d(np.asarray(task_raw, dtype=float))
    config_raw = np.asarray(config_raw, dtype=float)
    if task_raw.shape[1] != params.e or config_raw.shape[0] != params.e:
        raise ArchitectureError(f"backbone size mismatch: head expects e={params.e}")
    if config_raw.ndim - 1 != params.rank:
        raise ArchitectureError(f"grid rank {config_raw.ndim - 1} != head rank {params.rank}")
    t, c = adapt(params, task_raw, config_raw)
    first = params.layers[0]
    z0, saved = _first_layer(first, t, c)
    h0 = _act(z0, first.activation)
    cache = ForwardCache(task_raw, config_raw, t, c, (saved, z0, h0))
    h = h0
    for layer in params.layers[1:]:
        z, cols = conv_forward(h, layer.kernel, layer.bias)
        out = _act(z, layer.activation)
        if keep:
            cache.tape.append((h.shape, cols, z, out))
        h = out
    y = h[:, 0]
    return (y, cache) if keep else y


def predict_backward(params: HeadParams, cache: ForwardCache, dy: np.ndarray) -> dict[str, np.ndarray]:
    grads = {}
    dh = dy[:, None]
    for i in range(len(params.layers) - 1, 0, -1):
        layer = params.layers[i]
        x_shape, cols, z, out = cache.tape[i - 1]
        dz = dh * _act_grad(z, out, layer.activation)
        dh, grads[f"layer{i}.kernel"], grads[f"layer{i}.bias"] = conv_backward(dz, cols, x_shape, layer.kernel)
    first = params.layers[0]
    saved, z0, h0 = cache.first
    dz0 = dh * _act_grad(z0, h0, first.activation)
    grads["layer0.kernel"], grads["layer0.bias"], dt, dc = _first_layer_backward(first, saved, cache.task_emb, dz0)
    if params.adapter_w is not None:
        e = params.e
        c_raw = cache.config_raw.reshape(e, -1)
        grads["adapter.w"] = dt.T @ cache.task_raw + dc @ c_raw.T
        grads["adapter.b"] = dt.sum(axis=0) + dc.sum(axis=1)
    return grads


# ---------------------------------------------------------------- losses


def _mask_like(y_hat, mask):
    if mask is None:
        return np.ones(y_hat.shape, dtype=bool)
    return np.broadcast_to(np.asarray(mask, dtype=bool), y_hat.shape)


def mse_dense(y_hat: np.ndarray, y: np.ndarray, applicable=None) -> tuple[float, np.ndarray]:
    """Mean squared error over applicable cells and its gradient w.r.t. ``y_hat``."""
    m = _mask_like(y_hat, applicable)
    count = m.sum()
    if count == 0:
        return 0.0, np.zeros_like(y_hat)
    r = np.where(m, y_hat - y, 0.0)
    return float((r ** 2).sum() / count), 2.0 * r / count


def selection_mask(shape, selected) -> np.ndarray:
    """One-hot tensor marking the selected cell (``selected`` is a multi- or linear index)."""
    m = np.zeros(shape)
    if isinstance(selected, (int, np.integer)):
        selected = np.unravel_index(int(selected), shape)
    m[tuple(selected)] = 1.0
    return m


def mse_sparse(y_hat: np.ndarray, masks: np.ndarray, y_selected: np.ndarray) -> tuple[float, np.ndarray]:
    """Squared error of the selected cell per sample, averaged over the batch.

    ``masks`` is one-hot per sample, so the gradient is zero on every other cell.
    """
    if masks.shape != y_hat.shape:
        raise ArchitectureError("mask and prediction shapes differ")
    b = y_hat.shape[0]
    target = masks * np.asarray(y_selected, dtype=float).reshape((b,) + (1,) * (masks.ndim - 1))
    r = masks * y_hat - target
    return float((r ** 2).sum() / b), 2.0 * masks * r / b
