"""Small dense-network toolkit with hand-written reverse-mode gradients.

Everything runs in float64. Trainable parameters of a network live in one
flat buffer (:class:`ParameterSet`) so the optimizer updates them with a
handful of vector operations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NonFiniteGradientError",
    "dense_forward",
    "dense_backward",
    "relu",
    "relu_backward",
    "adaptive_relu",
    "adaptive_relu_backward",
    "mse",
    "mse_backward",
    "dropout",
    "AdamState",
    "adam_step",
    "ParameterSet",
    "HeadedNetwork",
]


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, path: str):
        self.path = path
        super().__init__(f"non-finite gradient for parameter '{path}'")


# ------------------------------------------------------------------ primitives


def dense_forward(W, b, X):
    """Affine map of a batch: ``X @ W.T + b`` with ``W`` shaped (out, in)."""
    if X.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ValueError(f"shape mismatch: X {X.shape}, W {W.shape}, b {b.shape}")
    return X @ W.T + b


def dense_backward(W, X, dZ, dW_out=None, need_dX: bool = True):
    """Returns (dW, db, dX) for ``Z = X @ W.T + b``.

    ``dW_out`` receives dW in place when given; ``need_dX=False`` skips the
    input gradient (returned as None)."""
    dW = np.matmul(dZ.T, X, out=dW_out)
    return dW, dZ.sum(axis=0), (dZ @ W if need_dX else None)


def relu(z):
    return np.maximum(z, 0.0)


def relu_backward(z, dout):
    return dout * (z > 0)


def adaptive_relu(z, alpha):
    """``max(0, alpha * z)`` with a trainable scalar ``alpha``."""
    return np.maximum(alpha * z, 0.0)


def adaptive_relu_backward(z, alpha, dout):
    """Returns (dz, dalpha). The subgradient at ``alpha * z == 0`` is zero."""
    on = (alpha * z) > 0
    return dout * alpha * on, float(np.sum(dout * z * on))


def mse(pred, target) -> float:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    d = pred - target
    return float(np.mean(d * d))


def mse_backward(pred, target):
    return 2.0 * (pred - target) / pred.size


def dropout(x, rate: float, training: bool, rng: np.random.Generator | None = None):
    """Inverted dropout. Returns (output, mask); mask is None when inactive."""
    if not training or rate == 0.0:
        return x, None
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


# ------------------------------------------------------------------ optimizer


@dataclass
class AdamState:
    size: int
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)

    def scratch(self) -> tuple[np.ndarray, np.ndarray]:
        # work buffers reused across steps; not part of the saved state
        buf = getattr(self, "_scratch", None)
        if buf is None or buf[0].shape != self.m.shape:
            buf = (np.empty_like(self.m), np.empty_like(self.m))
            self._scratch = buf
        return buf

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "t": self.t,
            "m": self.m.tolist(),
            "v": self.v.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdamState":
        m = np.array(d["m"], dtype=float)
        return cls(len(m), d["lr"], d["weight_decay"], d["beta1"], d["beta2"], d["eps"], d["t"], m, np.array(d["v"], dtype=float))


def _make_fused_adam():
    """Single-pass Adam update compiled with numba when available.

    Performs exactly the elementwise operations of the numpy path below, in
    the same order, so both give identical bits; it only avoids the dozen
    full-buffer passes that dominate large models.
    """
    try:
        import numba
    except ImportError:  # pragma: no cover - numpy path is used instead
        return None

    @numba.njit(cache=True, nogil=True)
    def kernel(p, g, m, v, decay, b1, b2, c1, c2, lr, eps):
        for i in range(p.shape[0]):
            p[i] *= decay
            gi = g[i]
            m[i] = m[i] * b1 + gi * (1.0 - b1)
            v[i] = v[i] * b2 + (gi * gi) * (1.0 - b2)
            den = np.sqrt(v[i] / c2) + eps
            p[i] -= ((m[i] / c1) / den) * lr

    return kernel


_fused_adam = _make_fused_adam()


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, names=None) -> np.ndarray:
    """One bias-corrected Adam update, in place on ``params``.

    Weight decay is decoupled: ``params *= 1 - lr * weight_decay`` first.
    ``names`` (optional) maps a flat index to a parameter path for errors.
    """
    # cheap screen first; the sum is non-finite whenever any entry is
    if not np.isfinite(np.sum(grads)):
        bad = np.flatnonzero(~np.isfinite(grads))
        if len(bad):
            raise NonFiniteGradientError(names(int(bad[0])) if names else f"[{int(bad[0])}]")
    state.t += 1
    decay = 1.0 - state.lr * state.weight_decay
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    if _fused_adam is not None:
        _fused_adam(params, grads, state.m, state.v, decay, state.beta1, state.beta2, c1, c2, state.lr, state.eps)
        return params
    b1, b2 = state.beta1, state.beta2
    a, b = state.scratch()
    params *= decay
    state.m *= b1
    np.multiply(grads, 1.0 - b1, out=a)
    state.m += a
    state.v *= b2
    np.multiply(grads, grads, out=a)
    a *= 1.0 - b2
    state.v += a
    # step = (m_hat / (sqrt(v_hat) + eps)) * lr, same order as the fused kernel
    np.divide(state.v, c2, out=a)
    np.sqrt(a, out=a)
    a += state.eps
    np.divide(state.m, c1, out=b)
    b /= a
    b *= state.lr
    params -= b
    return params


# ------------------------------------------------------------------ parameters


class ParameterSet:
    """Named parameter arrays that are views into one flat buffer."""

    def __init__(self, shapes: list[tuple[str, tuple[int, ...]]]):
        self.names = [name for name, _ in shapes]
        self._slices = {}
        offset = 0
        for name, shape in shapes:
            size = int(np.prod(shape)) if shape else 1
            self._slices[name] = (offset, offset + size, tuple(shape))
            offset += size
        self.data = np.zeros(offset)
        self.grad = np.zeros(offset)
        self._views = {n: self._view(self.data, n) for n in self.names}
        self._gviews = {n: self._view(self.grad, n) for n in self.names}

    def _view(self, buf, name):
        lo, hi, shape = self._slices[name]
        return buf[lo:hi].reshape(shape)

    @property
    def size(self) -> int:
        return self.data.size

    def __getitem__(self, name):
        return self._views[name]

    def grad_of(self, name):
        return self._gviews[name]

    def shape_of(self, name):
        return self._slices[name][2]

    def path_of(self, flat_index: int) -> str:
        for name, (lo, hi, _) in self._slices.items():
            if lo <= flat_index < hi:
                return name
        raise IndexError(flat_index)


# ------------------------------------------------------------------ networks


class HeadedNetwork:
    """Shared trunk followed by one or more heads whose outputs are concatenated.

    Each hidden layer is ``dense -> activation -> dropout``; each head ends
    in a linear output layer. ``trunk_activation``/``head_activation`` are
    ``"relu"`` or ``"adaptive"`` (one trainable alpha per layer, init 1.0).
    Inputs are standardized with ``x_mean``/``x_std`` before the first layer.

    A plain MLP is one head with no hidden layers after the trunk, a linear
    regressor has neither trunk nor head layers.
    """

    def __init__(
        self,
        n_in: int,
        trunk_widths,
        head_widths,
        head_outputs,
        trunk_activation: str = "relu",
        head_activation: str = "relu",
        dropout: float = 0.0,
        seed: int = 0,
    ):
        for act in (trunk_activation, head_activation):
            if act not in ("relu", "adaptive"):
                raise ValueError(f"unknown activation {act!r}")
        self.n_in = n_in
        self.trunk_widths = [int(w) for w in trunk_widths]
        self.head_widths = [int(w) for w in head_widths]
        self.head_outputs = [int(k) for k in head_outputs]
        self.trunk_activation = trunk_activation
        self.head_activation = head_activation
        self.dropout = float(dropout)
        self.seed = seed
        self.x_mean = np.zeros(n_in)
        self.x_std = np.ones(n_in)

        shapes = []
        width = n_in
        self._trunk = []
        for k, w in enumerate(self.trunk_widths):
            shapes += [(f"trunk.{k}.W", (w, width)), (f"trunk.{k}.b", (w,))]
            if trunk_activation == "adaptive":
                shapes.append((f"trunk.{k}.alpha", ()))
            self._trunk.append(f"trunk.{k}")
            width = w
        trunk_out = width
        self._heads = []
        for h, n_out in enumerate(self.head_outputs):
            width = trunk_out
            layers = []
            for k, w in enumerate(self.head_widths):
                shapes += [(f"head{h}.{k}.W", (w, width)), (f"head{h}.{k}.b", (w,))]
                if head_activation == "adaptive":
                    shapes.append((f"head{h}.{k}.alpha", ()))
                layers.append(f"head{h}.{k}")
                width = w
            shapes += [(f"head{h}.out.W", (n_out, width)), (f"head{h}.out.b", (n_out,))]
            self._heads.append((layers, f"head{h}.out"))
        self.params = ParameterSet(shapes)
        self._init_params(np.random.default_rng(seed))

    @property
    def n_out(self) -> int:
        return sum(self.head_outputs)

    def _init_params(self, rng):
        # He-uniform for hidden layers. Linear outputs start at zero so an
        # untrained model returns its output bias (the label mean), not O(1)
        # noise on top of labels that vary by a few 1e-3.
        for name in self.params.names:
            arr = self.params[name]
            if name.endswith(".W") and ".out." not in name:
                lim = np.sqrt(6.0 / arr.shape[1])
                arr[...] = rng.uniform(-lim, lim, arr.shape)
            elif name.endswith(".alpha"):
                arr[...] = 1.0

    def set_input_stats(self, mean, std):
        self.x_mean = np.asarray(mean, dtype=float).copy()
        self.x_std = np.asarray(std, dtype=float).copy()

    def set_output_bias(self, values):
        """Set the output biases of all heads from one vector of length ``n_out``."""
        start = 0
        for h, n_out in enumerate(self.head_outputs):
            self.params[f"head{h}.out.b"][...] = values[start : start + n_out]
            start += n_out

    def alphas(self) -> dict[str, float]:
        return {n[: -len(".alpha")]: float(self.params[n]) for n in self.params.names if n.endswith(".alpha")}

    # -------------------------------------------------------------- passes

    def _hidden(self, name, act, h, training, rng, cache):
        P = self.params
        z = dense_forward(P[f"{name}.W"], P[f"{name}.b"], h)
        if act == "adaptive":
            a = adaptive_relu(z, P[f"{name}.alpha"])
        else:
            a = relu(z)
        out, mask = dropout(a, self.dropout, training, rng)
        cache.append((name, act, h, z, mask))
        return out

    def forward(self, x, training: bool = False, rng=None):
        """Returns (output, cache). ``x`` holds raw (unstandardized) features."""
        h = (x - self.x_mean) / self.x_std
        cache = {"trunk": [], "heads": []}
        for name in self._trunk:
            h = self._hidden(name, self.trunk_activation, h, training, rng, cache["trunk"])
        outs = []
        for layers, out_name in self._heads:
            hc = []
            g = h
            for name in layers:
                g = self._hidden(name, self.head_activation, g, training, rng, hc)
            P = self.params
            outs.append(dense_forward(P[f"{out_name}.W"], P[f"{out_name}.b"], g))
            cache["heads"].append((hc, out_name, g))
        out = outs[0] if len(outs) == 1 else np.concatenate(outs, axis=1)
        return out, cache

    def _hidden_backward(self, entry, dout, need_dX: bool = True):
        name, act, h_in, z, mask = entry
        P = self.params
        if mask is not None:
            dout = dout * mask
        if act == "adaptive":
            dz, dalpha = adaptive_relu_backward(z, P[f"{name}.alpha"], dout)
            P.grad_of(f"{name}.alpha")[...] = dalpha
        else:
            dz = relu_backward(z, dout)
        _, db, dh = dense_backward(P[f"{name}.W"], h_in, dz, P.grad_of(f"{name}.W"), need_dX)
        P.grad_of(f"{name}.b")[...] = db
        return dh

    def backward(self, cache, dout):
        """Fill ``self.params.grad`` with d(loss)/d(params) given d(loss)/d(output)."""
        P = self.params
        dtrunk = None
        start = 0
        for (hc, out_name, g), n_out in zip(cache["heads"], self.head_outputs):
            d = dout[:, start : start + n_out]
            start += n_out
            _, db, dg = dense_backward(P[f"{out_name}.W"], g, d, P.grad_of(f"{out_name}.W"))
            P.grad_of(f"{out_name}.b")[...] = db
            for k, entry in enumerate(reversed(hc)):
                # the first layer of a trunk-less head needs no input gradient
                last = k == len(hc) - 1 and not cache["trunk"]
                dg = self._hidden_backward(entry, dg, need_dX=not last)
            dtrunk = dg if dtrunk is None else dtrunk + dg
        for k, entry in enumerate(reversed(cache["trunk"])):
            dtrunk = self._hidden_backward(entry, dtrunk, need_dX=k < len(cache["trunk"]) - 1)
        return dtrunk

    def predict(self, x) -> np.ndarray:
        return self.forward(np.asarray(x, dtype=float), training=False)[0]

    # -------------------------------------------------------------- state

    def architecture(self) -> dict:
        return {
            "n_in": self.n_in,
            "trunk_widths": self.trunk_widths,
            "head_widths": self.head_widths,
            "head_outputs": self.head_outputs,
            "trunk_activation": self.trunk_activation,
            "head_activation": self.head_activation,
            "dropout": self.dropout,
            "seed": self.seed,
        }

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture(),
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "params": {
                n: {"shape": list(self.params.shape_of(n)), "values": np.ravel(self.params[n]).tolist()}
                for n in self.params.names
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HeadedNetwork":
        net = cls(**d["architecture"])
        net.set_input_stats(d["x_mean"], d["x_std"])
        for name, entry in d["params"].items():
            if list(net.params.shape_of(name)) != entry["shape"]:
                raise ValueError(f"shape mismatch for {name}")
            net.params[name][...] = np.reshape(entry["values"], entry["shape"])
        return net

    def copy(self) -> "HeadedNetwork":
        other = HeadedNetwork(**self.architecture())
        other.set_input_stats(self.x_mean, self.x_std)
        other.params.data[...] = self.params.data
        return other
