"""Reverse-mode autodiff, a small 1D-CNN encoder stack, Adam, and EMA updates.

Everything runs on float64 numpy arrays. A ``Tensor`` records its parents and
a backward closure; ``Tensor.backward()`` topologically sorts the tape and
accumulates gradients. The network here is deliberately tiny: conv blocks
with ReLU, global average pooling over time, and two-layer MLP heads.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "concat",
    "conv1d",
    "dense",
    "global_avg_pool",
    "l2_normalize",
    "bce_with_logits",
    "EncoderConfig",
    "ModelParams",
    "init_encoder_params",
    "init_head_params",
    "forward_encoder",
    "forward_projection",
    "forward_predictor",
    "forward_head",
    "AdamState",
    "adam_step",
    "ema_update",
    "save_checkpoint",
    "load_checkpoint",
    "DEFAULT_ENCODER",
]


def _as_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite values in tensor data")
    return a


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """An n-d array carrying a value, a gradient slot, and tape links."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in _parents
        )
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _ensure_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # ---- graph traversal -------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        topo, seen = [], set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        self._ensure_grad()
        self.grad = np.ones_like(self.data)
        for t in reversed(topo):
            if t._backward is not None:
                t._backward(t.grad)

    # ---- elementwise arithmetic -----------------------------------------

    @staticmethod
    def _lift(x):
        return x if isinstance(x, Tensor) else Tensor(x)

    def __add__(self, other):
        other = Tensor._lift(other)

        def bwd(g):
            self._accum(_unbroadcast(g, self.data.shape))
            other._accum(_unbroadcast(g, other.data.shape))

        return Tensor(self.data + other.data, _parents=(self, other), _backward=bwd)

    __radd__ = __add__

    def __neg__(self):
        def bwd(g):
            self._accum(-g)

        return Tensor(-self.data, _parents=(self,), _backward=bwd)

    def __sub__(self, other):
        return self + (-Tensor._lift(other))

    def __rsub__(self, other):
        return Tensor._lift(other) + (-self)

    def __mul__(self, other):
        other = Tensor._lift(other)

        def bwd(g):
            self._accum(_unbroadcast(g * other.data, self.data.shape))
            other._accum(_unbroadcast(g * self.data, other.data.shape))

        return Tensor(self.data * other.data, _parents=(self, other), _backward=bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other)

        def bwd(g):
            self._accum(_unbroadcast(g / other.data, self.data.shape))
            other._accum(
                _unbroadcast(-g * self.data / other.data**2, other.data.shape)
            )

        return Tensor(self.data / other.data, _parents=(self, other), _backward=bwd)

    def __rtruediv__(self, other):
        return Tensor._lift(other) / self

    def _accum(self, g):
        if self.requires_grad or self._parents:
            self._ensure_grad()
            self.grad += g

    # ---- shape ops -------------------------------------------------------

    @property
    def T(self):
        def bwd(g):
            self._accum(g.T)

        return Tensor(self.data.T, _parents=(self,), _backward=bwd)

    def reshape(self, *shape):
        orig = self.data.shape

        def bwd(g):
            self._accum(g.reshape(orig))

        return Tensor(self.data.reshape(*shape), _parents=(self,), _backward=bwd)

    # ---- reductions and nonlinearities ----------------------------------

    def sum(self, axis=None, keepdims=False):
        def bwd(g):
            if axis is None:
                self._accum(np.broadcast_to(g, self.data.shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                self._accum(np.broadcast_to(gg, self.data.shape).copy())

        return Tensor(
            self.data.sum(axis=axis, keepdims=keepdims),
            _parents=(self,),
            _backward=bwd,
        )

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def exp(self):
        out_data = np.exp(self.data)

        def bwd(g):
            self._accum(g * out_data)

        return Tensor(out_data, _parents=(self,), _backward=bwd)

    def log(self):
        def bwd(g):
            self._accum(g / self.data)

        return Tensor(np.log(self.data), _parents=(self,), _backward=bwd)

    def relu(self):
        mask = self.data > 0  # subgradient at 0 is 0

        def bwd(g):
            self._accum(g * mask)

        return Tensor(self.data * mask, _parents=(self,), _backward=bwd)

    def matmul(self, other):
        other = Tensor._lift(other)

        def bwd(g):
            self._accum(g @ other.data.T)
            other._accum(self.data.T @ g)

        return Tensor(self.data @ other.data, _parents=(self, other), _backward=bwd)

    __matmul__ = matmul


def concat(tensors, axis=0) -> Tensor:
    tensors = [Tensor._lift(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            t._accum(g[tuple(sl)])

    return Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        _parents=tuple(tensors),
        _backward=bwd,
    )


def conv1d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """1-D convolution with 'same'-style zero padding of k//2 per side.

    x: (B, C_in, L); w: (C_out, C_in, k); b: (C_out,).
    Output length is floor((L + 2*(k//2) - k) / stride) + 1.
    """
    B, c_in, L = x.data.shape
    c_out, c_in_w, k = w.data.shape
    if c_in_w != c_in:
        raise ValueError(f"conv1d channel mismatch: {c_in_w} != {c_in}")
    pad = k // 2
    out_len = (L + 2 * pad - k) // stride + 1
    xp = np.zeros((B, c_in, L + 2 * pad))
    xp[:, :, pad : pad + L] = x.data

    out = np.zeros((B, c_out, out_len))
    for j in range(k):
        xs = xp[:, :, j : j + stride * out_len : stride]
        out += np.einsum("bil,oi->bol", xs, w.data[:, :, j])
    out += b.data[None, :, None]

    def bwd(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        for j in range(k):
            xs = xp[:, :, j : j + stride * out_len : stride]
            gw[:, :, j] = np.einsum("bol,bil->oi", g, xs)
            gxp[:, :, j : j + stride * out_len : stride] += np.einsum(
                "bol,oi->bil", g, w.data[:, :, j]
            )
        x._accum(gxp[:, :, pad : pad + L])
        w._accum(gw)
        b._accum(g.sum(axis=(0, 2)))

    return Tensor(out, _parents=(x, w, b), _backward=bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the trailing (time) axis: (B, C, L) -> (B, C)."""
    return x.mean(axis=2)


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return x.matmul(w) + b


def l2_normalize(x: Tensor, axis: int = -1, return_flag: bool = False):
    """Normalize slices along `axis` to unit L2 norm; zero slices stay zero.

    With return_flag=True also returns whether any zero-norm slice occurred.
    """
    x = Tensor._lift(x)
    norm = np.sqrt(np.sum(x.data**2, axis=axis, keepdims=True))
    zero = norm == 0.0
    safe = np.where(zero, 1.0, norm)
    out_data = x.data / safe

    def bwd(g):
        dot = np.sum(g * out_data, axis=axis, keepdims=True)
        gx = (g - out_data * dot) / safe
        x._accum(np.where(zero, 0.0, gx))

    out = Tensor(out_data, _parents=(x,), _backward=bwd)
    if return_flag:
        return out, bool(zero.any())
    return out


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy over all elements, numerically stable."""
    t = np.asarray(targets, dtype=np.float64)
    z = logits.data
    loss = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    n = z.size

    def bwd(g):
        sig = 1.0 / (1.0 + np.exp(-z))
        logits._accum(g * (sig - t) / n)

    return Tensor(loss.mean(), _parents=(logits,), _backward=bwd)


# ---------------------------------------------------------------------------
# model definition


@dataclass
class EncoderConfig:
    """Architecture of the 1D-CNN encoder plus projection/prediction heads."""

    n_leads: int = 1
    conv_blocks: tuple = ((16, 7, 2), (32, 7, 2), (64, 7, 2))
    embedding_dim: int = 64
    projection_dim: int = 32
    prediction_hidden: int = 32

    def __post_init__(self):
        if not (self.embedding_dim >= self.projection_dim >= 2):
            raise ValueError("need embedding_dim >= projection_dim >= 2")
        for _, k, _ in self.conv_blocks:
            if k % 2 != 1:
                raise ValueError("kernel sizes must be odd")


DEFAULT_ENCODER = EncoderConfig()


class ModelParams:
    """Ordered, named parameter tensors for one network."""

    def __init__(self, params: "OrderedDict[str, Tensor]"):
        if len(set(params)) != len(params):
            raise ValueError("duplicate parameter names")
        self.params = OrderedDict(params)

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return list(self.params)

    def tensors(self):
        return list(self.params.values())

    def architecture(self):
        return [(n, t.data.shape) for n, t in self.params.items()]

    def copy(self) -> "ModelParams":
        return ModelParams(
            OrderedDict(
                (n, Tensor(t.data.copy(), requires_grad=t.requires_grad))
                for n, t in self.params.items()
            )
        )

    def zero_grads(self):
        for t in self.params.values():
            t.zero_grad()

    def subset(self, prefix) -> "ModelParams":
        return ModelParams(
            OrderedDict(
                (n, t) for n, t in self.params.items() if n.startswith(prefix)
            )
        )

    def merged_with(self, other: "ModelParams") -> "ModelParams":
        merged = OrderedDict(self.params)
        merged.update(other.params)
        return ModelParams(merged)

    def checksum(self) -> float:
        return float(sum(np.sum(np.abs(t.data)) for t in self.params.values()))


def _uniform_init(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def init_encoder_params(cfg: EncoderConfig, seed: int) -> ModelParams:
    """Seeded fan-in uniform init of encoder + projection + predictor weights."""
    rng = np.random.default_rng(seed)
    p = OrderedDict()
    c_in = cfg.n_leads
    for i, (c_out, k, _stride) in enumerate(cfg.conv_blocks):
        fan = c_in * k
        p[f"conv{i}.weight"] = _uniform_init(rng, (c_out, c_in, k), fan)
        p[f"conv{i}.bias"] = _uniform_init(rng, (c_out,), fan)
        c_in = c_out
    p["embed.weight"] = _uniform_init(rng, (c_in, cfg.embedding_dim), c_in)
    p["embed.bias"] = _uniform_init(rng, (cfg.embedding_dim,), c_in)
    d_e, d_p, d_h = cfg.embedding_dim, cfg.projection_dim, cfg.prediction_hidden
    p["proj.fc1.weight"] = _uniform_init(rng, (d_e, d_h), d_e)
    p["proj.fc1.bias"] = _uniform_init(rng, (d_h,), d_e)
    p["proj.fc2.weight"] = _uniform_init(rng, (d_h, d_p), d_h)
    p["proj.fc2.bias"] = _uniform_init(rng, (d_p,), d_h)
    p["pred.fc1.weight"] = _uniform_init(rng, (d_p, d_h), d_p)
    p["pred.fc1.bias"] = _uniform_init(rng, (d_h,), d_p)
    p["pred.fc2.weight"] = _uniform_init(rng, (d_h, d_p), d_h)
    p["pred.fc2.bias"] = _uniform_init(rng, (d_p,), d_h)
    return ModelParams(p)


def init_head_params(cfg: EncoderConfig, n_classes: int, seed: int) -> ModelParams:
    rng = np.random.default_rng(seed)
    return ModelParams(
        OrderedDict(
            [
                ("head.weight", _uniform_init(rng, (cfg.embedding_dim, n_classes), cfg.embedding_dim)),
                ("head.bias", _uniform_init(rng, (n_classes,), cfg.embedding_dim)),
            ]
        )
    )


def forward_encoder(params: ModelParams, cfg: EncoderConfig, batch) -> Tensor:
    """Conv blocks -> ReLU, global average pool over time, dense embedding."""
    x = Tensor._lift(batch)
    if x.data.ndim != 3 or x.data.shape[1] != cfg.n_leads:
        raise ValueError(
            f"expected batch of shape (B, {cfg.n_leads}, L), got {x.data.shape}"
        )
    for i, (_c_out, _k, stride) in enumerate(cfg.conv_blocks):
        x = conv1d(x, params[f"conv{i}.weight"], params[f"conv{i}.bias"], stride)
        x = x.relu()
    h = global_avg_pool(x)
    return dense(h, params["embed.weight"], params["embed.bias"])


def forward_projection(params: ModelParams, h: Tensor) -> Tensor:
    z = dense(h, params["proj.fc1.weight"], params["proj.fc1.bias"]).relu()
    return dense(z, params["proj.fc2.weight"], params["proj.fc2.bias"])


def forward_predictor(params: ModelParams, z: Tensor) -> Tensor:
    q = dense(z, params["pred.fc1.weight"], params["pred.fc1.bias"]).relu()
    return dense(q, params["pred.fc2.weight"], params["pred.fc2.bias"])


def forward_head(params: ModelParams, h: Tensor) -> Tensor:
    """Classification logits; apply a sigmoid downstream for probabilities."""
    return dense(h, params["head.weight"], params["head.bias"])


# ---------------------------------------------------------------------------
# optimization


@dataclass
class AdamState:
    """Adam with decoupled weight decay (AdamW-style)."""

    lr: float = 5e-4
    weight_decay: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: ModelParams) -> None:
    """One update over all params; grads are zeroed after application."""
    state.step += 1
    t = state.step
    for name, p in params.params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        m_hat = state.m[name] / (1 - state.beta1**t)
        v_hat = state.v[name] / (1 - state.beta2**t)
        p.data = p.data - state.lr * (
            m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * p.data
        )
        p.zero_grad()


def ema_update(target: ModelParams, online: ModelParams, decay: float) -> None:
    """target <- decay * target + (1 - decay) * online, in place."""
    if not 0.0 <= decay <= 1.0:
        raise ValueError("decay must lie in [0, 1]")
    if target.architecture() != online.architecture():
        raise ValueError("architecture mismatch between target and online params")
    for name in target.params:
        t, o = target[name], online[name]
        t.data = decay * t.data + (1.0 - decay) * o.data


# ---------------------------------------------------------------------------
# checkpointing

_CKPT_MAGIC = b"CKPT"
_CKPT_VERSION = 1


def save_checkpoint(path, params: ModelParams, adam: AdamState | None = None):
    """Binary checkpoint: magic, version, named f32 parameter table.

    Layout: "CKPT", u32 version, u32 n_params, then per parameter
    (u16 name_len, name utf-8, u32 ndim, u32 dims..., f32 data C-order),
    then u8 has_optimizer and, if set, u64 step + f64 lr/wd + m/v tables.
    """

    def write_table(f, items):
        for name, arr in items:
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(np.ascontiguousarray(arr, dtype=np.float32).tobytes())

    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<I", _CKPT_VERSION))
        f.write(struct.pack("<I", len(params.params)))
        write_table(f, [(n, t.data) for n, t in params.params.items()])
        if adam is None:
            f.write(struct.pack("<B", 0))
        else:
            f.write(struct.pack("<B", 1))
            f.write(struct.pack("<Q", adam.step))
            f.write(struct.pack("<dd", adam.lr, adam.weight_decay))
            f.write(struct.pack("<I", len(adam.m)))
            write_table(f, sorted(adam.m.items()))
            write_table(f, sorted(adam.v.items()))


def load_checkpoint(path):
    """Returns (ModelParams, AdamState | None)."""

    def read_table(f, count):
        out = OrderedDict()
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(ndim))
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(4 * n), dtype=np.float32).reshape(shape)
            out[name] = data.astype(np.float64)
        return out

    with open(path, "rb") as f:
        if f.read(4) != _CKPT_MAGIC:
            raise ValueError("not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", f.read(4))
        if version != _CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (n_params,) = struct.unpack("<I", f.read(4))
        table = read_table(f, n_params)
        params = ModelParams(
            OrderedDict((n, Tensor(a, requires_grad=True)) for n, a in table.items())
        )
        (has_opt,) = struct.unpack("<B", f.read(1))
        adam = None
        if has_opt:
            (step,) = struct.unpack("<Q", f.read(8))
            lr, wd = struct.unpack("<dd", f.read(16))
            (n_opt,) = struct.unpack("<I", f.read(4))
            m = read_table(f, n_opt)
            v = read_table(f, n_opt)
            adam = AdamState(lr=lr, weight_decay=wd, step=step, m=dict(m), v=dict(v))
        return params, adam
