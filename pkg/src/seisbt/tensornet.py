"""A small fixed-architecture CNN with hand-written reverse-mode gradients.

The encoder is a five-weight-layer VGG-style stack::

    conv3x3(16) relu maxpool2 -> conv3x3(32) relu maxpool2 ->
    conv3x3(64) relu maxpool2 -> conv3x3(128) relu global-avg-pool -> affine(128 -> 28)

The projector is ``affine(28 -> 512)`` followed by batch normalization, and the
classifier head is ``affine(d -> 128) relu affine(128 -> K)``.

Everything is float64. Activations are kept channels-last internally; the
public input layout is ``(B, 3, F, T)``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, NumericError, ShapeError, UsageError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class Architecture:
    input_shape: tuple[int, int, int] = (3, 65, 28)
    conv_channels: tuple[int, ...] = (16, 32, 64, 128)
    embedding_dim: int = 28
    projection_dim: int = 512
    head_hidden: int = 128
    n_classes: int = 2
    head_input_dim: int | None = None

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.conv_channels = tuple(int(v) for v in self.conv_channels)
        if len(self.input_shape) != 3:
            raise ConfigError("input_shape", "must be (C, F, T)")
        if not self.conv_channels:
            raise ConfigError("conv_channels", "need at least one conv stage")
        if self.embedding_dim < 1 or self.projection_dim < 1:
            raise ConfigError("embedding_dim", "dimensions must be positive")
        if self.n_classes < 2:
            raise ConfigError("n_classes", "need at least 2 classes")
        _, h, w = self.input_shape
        for _ in self.conv_channels[:-1]:
            h, w = h // 2, w // 2
        if h < 1 or w < 1:
            raise ConfigError("input_shape", "too small for the number of pooling stages")

    @property
    def head_in(self) -> int:
        return self.head_input_dim or self.embedding_dim

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(**d)


# ---------------------------------------------------------------- layer kernels

def conv3x3_forward(x, w, b):
    """Same-padded 3x3 convolution. ``x`` is (B, H, W, C), ``w`` is (O, C, 3, 3)."""
    B, H, W, C = x.shape
    O = w.shape[0]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = sliding_window_view(xp, (3, 3), axis=(1, 2)).reshape(B * H * W, C * 9)
    wm = w.reshape(O, C * 9).T
    out = (cols @ wm + b).reshape(B, H, W, O)
    return out, (cols, wm, x.shape)


def conv3x3_backward(dout, cache, need_dx=True):
    cols, wm, (B, H, W, C) = cache
    O = wm.shape[1]
    d2 = dout.reshape(-1, O)
    dw = (cols.T @ d2).T.reshape(O, C, 3, 3)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ wm.T).reshape(B, H, W, C, 3, 3)
    dxp = np.zeros((B, H + 2, W + 2, C))
    for i in range(3):
        for j in range(3):
            dxp[:, i:i + H, j:j + W, :] += dcols[..., i, j]
    return dxp[:, 1:-1, 1:-1, :], dw, db


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def maxpool2_forward(x):
    """2x2 stride-2 max pool; odd trailing rows/columns are dropped."""
    B, H, W, C = x.shape
    H2, W2 = H // 2, W // 2
    win = x[:, : 2 * H2, : 2 * W2, :].reshape(B, H2, 2, W2, 2, C)
    win = win.transpose(0, 1, 3, 5, 2, 4).reshape(B, H2, W2, C, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape)


def maxpool2_backward(dout, cache):
    idx, (B, H, W, C) = cache
    H2, W2 = H // 2, W // 2
    dwin = np.zeros((B, H2, W2, C, 4))
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
    dwin = dwin.reshape(B, H2, W2, C, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(B, 2 * H2, 2 * W2, C)
    dx = np.zeros((B, H, W, C))
    dx[:, : 2 * H2, : 2 * W2, :] = dwin
    return dx


def gap_forward(x):
    return x.mean(axis=(1, 2)), x.shape


def gap_backward(dout, shape):
    B, H, W, C = shape
    return np.broadcast_to(dout[:, None, None, :] / (H * W), shape).copy()


def affine_forward(x, w, b):
    return x @ w + b, x


def affine_backward(dout, x, w):
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train: bool):
    """Batch normalization over axis 0. Updates running stats in place when training."""
    if train:
        n = x.shape[0]
        if n < 2:
            raise UsageError("batch normalization in train mode needs batch size >= 2")
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        running_mean *= 1.0 - BN_MOMENTUM
        running_mean += BN_MOMENTUM * mu
        running_var *= 1.0 - BN_MOMENTUM
        running_var += BN_MOMENTUM * var * n / (n - 1)
    else:
        mu, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mu) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, gamma, train)


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, train = cache
    dgamma = (dout * xhat).sum(axis=0)
    dbeta = dout.sum(axis=0)
    dxhat = dout * gamma
    if train:
        n = dout.shape[0]
        dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    else:
        dx = dxhat * inv_std
    return dx, dgamma, dbeta


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels, weights=None):
    """Mean (optionally weighted) cross-entropy and its gradient w.r.t. the logits."""
    labels = np.asarray(labels, dtype=int)
    n = logits.shape[0]
    p = softmax(logits)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    total = w.sum()
    loss = float(-(w * np.log(p[np.arange(n), labels] + 1e-300)).sum() / total)
    d = p.copy()
    d[np.arange(n), labels] -= 1.0
    d *= (w / total)[:, None]
    return loss, d


# ---------------------------------------------------------------- network

ENCODER, PROJECTOR, CLASSIFIER = "encoder", "projector", "classifier"


@dataclass
class Cache:
    part: str
    layers: list = field(default_factory=list)


class Network:
    """Parameter container for encoder, projector and classifier head."""

    def __init__(self, arch: Architecture, params: dict | None = None,
                 buffers: dict | None = None):
        self.arch = arch
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        if params is not None:
            self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
            self.buffers = {k: np.array(v, dtype=np.float64) for k, v in (buffers or {}).items()}
            self._check_shapes()

    # layout -------------------------------------------------------------
    def shapes(self) -> dict[str, tuple]:
        a = self.arch
        shapes: dict[str, tuple] = {}
        c_in = a.input_shape[0]
        for i, c in enumerate(a.conv_channels):
            shapes[f"conv{i}.w"] = (c, c_in, 3, 3)
            shapes[f"conv{i}.b"] = (c,)
            c_in = c
        shapes["embed.w"] = (c_in, a.embedding_dim)
        shapes["embed.b"] = (a.embedding_dim,)
        shapes["proj.w"] = (a.embedding_dim, a.projection_dim)
        shapes["proj.b"] = (a.projection_dim,)
        shapes["proj_bn.gamma"] = (a.projection_dim,)
        shapes["proj_bn.beta"] = (a.projection_dim,)
        shapes["head1.w"] = (a.head_in, a.head_hidden)
        shapes["head1.b"] = (a.head_hidden,)
        shapes["head2.w"] = (a.head_hidden, a.n_classes)
        shapes["head2.b"] = (a.n_classes,)
        return shapes

    def buffer_shapes(self) -> dict[str, tuple]:
        d = self.arch.projection_dim
        return {"proj_bn.running_mean": (d,), "proj_bn.running_var": (d,)}

    def _check_shapes(self):
        expected = self.shapes()
        if set(expected) != set(self.params):
            raise ShapeError("params", f"parameter names differ: "
                                       f"{sorted(set(expected) ^ set(self.params))}")
        for k, s in expected.items():
            if self.params[k].shape != s:
                raise ShapeError(k, f"expected {s}, got {self.params[k].shape}")
        for k, s in self.buffer_shapes().items():
            if k not in self.buffers:
                self.buffers[k] = np.zeros(s) if "mean" in k else np.ones(s)
            elif self.buffers[k].shape != s:
                raise ShapeError(k, f"expected {s}, got {self.buffers[k].shape}")

    @classmethod
    def init(cls, arch: Architecture, seed: int = 0) -> "Network":
        """He-style fan-in initialization, zero biases, unit BN scale."""
        rng = np.random.default_rng(seed)
        net = cls(arch)
        for name, shape in net.shapes().items():
            if name.endswith(".b") or name.endswith(".beta"):
                net.params[name] = np.zeros(shape)
            elif name.endswith(".gamma"):
                net.params[name] = np.ones(shape)
            else:
                fan_in = int(np.prod(shape[1:])) if name.startswith("conv") else shape[0]
                net.params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        for name, shape in net.buffer_shapes().items():
            net.buffers[name] = np.zeros(shape) if "mean" in name else np.ones(shape)
        return net

    def copy(self) -> "Network":
        return Network(dataclasses.replace(self.arch),
                       {k: v.copy() for k, v in self.params.items()},
                       {k: v.copy() for k, v in self.buffers.items()})

    def n_params(self, prefix: tuple[str, ...] | None = None) -> int:
        return int(sum(v.size for k, v in self.params.items()
                       if prefix is None or k.startswith(prefix)))

    def part_names(self, part: str) -> list[str]:
        prefixes = {ENCODER: ("conv", "embed."), PROJECTOR: ("proj",),
                    CLASSIFIER: ("head",)}[part]
        return [k for k in self.params if k.startswith(prefixes)]


def _finite(x, layer):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite activation in layer {layer!r}")
    return x


def forward_encoder(net: Network, batch: np.ndarray, mode: str = "train"):
    """(B, C, F, T) spectrograms -> (B, embedding_dim) embeddings, plus a cache."""
    a = net.arch
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[1:] != a.input_shape:
        raise ShapeError("conv0", f"expected (B, {', '.join(map(str, a.input_shape))}), "
                                  f"got {batch.shape}")
    cache = Cache(ENCODER)
    x = batch.transpose(0, 2, 3, 1)
    n_conv = len(a.conv_channels)
    for i in range(n_conv):
        x, c_conv = conv3x3_forward(x, net.params[f"conv{i}.w"], net.params[f"conv{i}.b"])
        x, c_relu = relu_forward(x)
        if i < n_conv - 1:
            x, c_pool = maxpool2_forward(x)
            cache.layers.append(("conv", i, c_conv, c_relu, ("max", c_pool)))
        else:
            x, c_pool = gap_forward(x)
            cache.layers.append(("conv", i, c_conv, c_relu, ("gap", c_pool)))
        _finite(x, f"conv{i}")
    emb, c_aff = affine_forward(x, net.params["embed.w"], net.params["embed.b"])
    cache.layers.append(("embed", c_aff))
    return _finite(emb, "embed"), cache


def forward_projector(net: Network, emb: np.ndarray, mode: str = "train"):
    """Embeddings -> projections (affine then batch norm)."""
    if emb.ndim != 2 or emb.shape[1] != net.arch.embedding_dim:
        raise ShapeError("proj", f"expected (B, {net.arch.embedding_dim}), got {emb.shape}")
    cache = Cache(PROJECTOR)
    h, c_aff = affine_forward(emb, net.params["proj.w"], net.params["proj.b"])
    z, c_bn = batchnorm_forward(h, net.params["proj_bn.gamma"], net.params["proj_bn.beta"],
                                net.buffers["proj_bn.running_mean"],
                                net.buffers["proj_bn.running_var"], train=(mode == "train"))
    cache.layers = [c_aff, c_bn]
    return _finite(z, "proj_bn"), cache


def forward_classifier(net: Network, feats: np.ndarray):
    """Features (B, d) -> (logits, softmax probabilities, cache)."""
    if feats.ndim != 2 or feats.shape[1] != net.arch.head_in:
        raise ShapeError("head1", f"expected (B, {net.arch.head_in}), got {feats.shape}")
    h, c1 = affine_forward(feats, net.params["head1.w"], net.params["head1.b"])
    h, cr = relu_forward(h)
    logits, c2 = affine_forward(h, net.params["head2.w"], net.params["head2.b"])
    _finite(logits, "head2")
    return logits, softmax(logits), Cache(CLASSIFIER, [c1, cr, c2])


def backward(net: Network, grad: np.ndarray, cache: Cache | None, need_input_grad: bool = True):
    """Reverse pass through one network part.

    Returns ``(param_grads, input_grad)``; ``input_grad`` is ``None`` for the encoder
    unless ``need_input_grad`` (then in the public (B, C, F, T) layout).
    """
    if cache is None or not cache.layers:
        raise UsageError("backward called without a forward cache")
    p = net.params
    grads: dict[str, np.ndarray] = {}
    if cache.part == CLASSIFIER:
        c1, cr, c2 = cache.layers
        d, grads["head2.w"], grads["head2.b"] = affine_backward(grad, c2, p["head2.w"])
        d = relu_backward(d, cr)
        d, grads["head1.w"], grads["head1.b"] = affine_backward(d, c1, p["head1.w"])
        return grads, d
    if cache.part == PROJECTOR:
        c_aff, c_bn = cache.layers
        d, grads["proj_bn.gamma"], grads["proj_bn.beta"] = batchnorm_backward(grad, c_bn)
        d, grads["proj.w"], grads["proj.b"] = affine_backward(d, c_aff, p["proj.w"])
        return grads, d
    if cache.part == ENCODER:
        layers = cache.layers
        d, grads["embed.w"], grads["embed.b"] = affine_backward(grad, layers[-1][1], p["embed.w"])
        for _, i, c_conv, c_relu, (kind, c_pool) in reversed(layers[:-1]):
            d = gap_backward(d, c_pool) if kind == "gap" else maxpool2_backward(d, c_pool)
            d = relu_backward(d, c_relu)
            need_dx = i > 0 or need_input_grad
            d, grads[f"conv{i}.w"], grads[f"conv{i}.b"] = conv3x3_backward(d, c_conv, need_dx)
        return grads, (d.transpose(0, 3, 1, 2) if d is not None else None)
    raise UsageError(f"unknown cache part {cache.part!r}")


def embed(net: Network, batch: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Eval-mode encoder outputs, processed in fixed-size chunks."""
    out = [forward_encoder(net, batch[i:i + chunk], "eval")[0]
           for i in range(0, batch.shape[0], chunk)]
    if not out:
        return np.zeros((0, net.arch.embedding_dim))
    return np.concatenate(out)


# ---------------------------------------------------------------- gradient checking

def grad_check(loss_fn, params: dict[str, np.ndarray], analytic: dict[str, np.ndarray],
               eps: float = 1e-4, n_coords: int = 100, rng=None, floor: float = 1e-3,
               names=None) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_fn()`` must evaluate the loss from the current contents of ``params``;
    coordinates are perturbed in place and restored. At least ``n_coords``
    coordinates are sampled, spread across the parameter blocks.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    rng = np.random.default_rng(rng)
    names = list(names or analytic)
    per_block = max(1, -(-n_coords // len(names)))
    worst = 0.0
    for name in names:
        theta = params[name]
        flat = theta.reshape(-1)
        k = min(flat.size, per_block)
        for idx in rng.choice(flat.size, size=k, replace=False):
            old = flat[idx]
            flat[idx] = old + eps
            f_plus = loss_fn()
            flat[idx] = old - eps
            f_minus = loss_fn()
            flat[idx] = old
            numeric = (f_plus - f_minus) / (2 * eps)
            a = analytic[name].reshape(-1)[idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst
