"""Minimal dense-tensor engine with reverse-mode differentiation.

Supplies exactly the layers the classifier needs: strided 2D convolution,
LeakyReLU, a single-layer LSTM (built from primitives, so backward-through-
time falls out of the tape), dense, inverted dropout, stabilized softmax
cross-entropy, an AdamW step with decoupled weight decay, and a central
finite-difference gradient checker.

Training runs in float32 by default; gradient-check suites build in float64
for finite-difference headroom.
"""

from __future__ import annotations

import numpy as np

from .errors import BadLabel, ShapeMismatch


class Tensor:
    """Dense n-d array participating in a reverse-mode tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward_fn

    @property
    def shape(self):
        return self.data.shape

    def backward(self):
        if self.data.size != 1:
            raise ShapeMismatch("backward() requires a scalar")
        order = []
        seen = set()

        def visit(node):
            if id(node) in seen:
                return
            seen.add(id(node))
            for p in node._parents:
                visit(p)
            order.append(node)

        visit(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if node._parents:
                # intermediate: its gradient and closure (which may hold
                # large buffers such as convolution patches) are spent
                node.grad = None
                node._parents = ()
                node._backward = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g


def _unbroadcast(g, shape):
    """Reduce a gradient back to a broadcast operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    out._backward = backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    out._backward = backward
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(s, parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * s * (1.0 - s))

    out._backward = backward
    return out


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    out = Tensor(t, parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * (1.0 - t * t))

    out._backward = backward
    return out


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    """max(x, slope*x) with subgradient 1 at 0."""
    # for 0 < slope < 1 the elementwise max equals the piecewise definition
    out = Tensor(np.maximum(x.data, x.data * slope), parents=(x,))

    def backward(g):
        if x.requires_grad:
            slope_t = np.asarray(slope, x.data.dtype)
            one = np.asarray(1.0, x.data.dtype)
            x._accumulate(g * np.where(x.data >= 0, one, slope_t))

    out._backward = backward
    return out


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape), parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.reshape(x.shape))

    out._backward = backward
    return out


def concat(tensors, axis: int) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 parents=tuple(tensors))
    offsets = np.cumsum([0] + [t.data.shape[axis] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    out._backward = backward
    return out


def stack(tensors, axis: int) -> Tensor:
    out = Tensor(np.stack([t.data for t in tensors], axis=axis),
                 parents=tuple(tensors))

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(np.take(g, i, axis=axis))

    out._backward = backward
    return out


def select(x: Tensor, index: int, axis: int) -> Tensor:
    """x[..., index, ...] along one axis, dropping that axis."""
    out = Tensor(np.take(x.data, index, axis=axis), parents=(x,))

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            idx = [slice(None)] * x.data.ndim
            idx[axis] = index
            full[tuple(idx)] = g
            x._accumulate(full)

    out._backward = backward
    return out


def _normalize_padding(padding):
    """Accept int pairs or ((before, after), (before, after)) per spatial axis."""
    ph, pw = padding
    if np.isscalar(ph):
        ph = (int(ph), int(ph))
    if np.isscalar(pw):
        pw = (int(pw), int(pw))
    return tuple(ph), tuple(pw)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride=(1, 1),
           padding=(0, 0)) -> Tensor:
    """Cross-correlation of (N,C,H,W) with (O,C,kh,kw) kernels."""
    sh, sw = stride
    (pt, pb), (pl, pr) = _normalize_padding(padding)
    n, c, h, w_ = x.data.shape
    o, cw, kh, kw = weight.data.shape
    if cw != c:
        raise ShapeMismatch(f"conv2d channels: input {c}, weight {cw}")
    if bias.data.shape != (o,):
        raise ShapeMismatch(f"conv2d bias shape {bias.data.shape}, expected ({o},)")
    hp, wp = h + pt + pb, w_ + pl + pr
    if hp < kh or wp < kw:
        raise ShapeMismatch("kernel larger than padded input")
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1

    def im2col(data):
        xp = np.pad(data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw),
                                                           axis=(2, 3))
        windows = windows[:, :, ::sh, ::sw]          # N,C,Ho,Wo,kh,kw
        return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo,
                                                           c * kh * kw)

    wmat = weight.data.reshape(o, c * kh * kw)
    y = (im2col(x.data) @ wmat.T + bias.data).reshape(n, ho, wo, o)
    out = Tensor(y.transpose(0, 3, 1, 2), parents=(x, weight, bias))

    def backward(g):
        # the patch matrix is rebuilt here rather than captured at forward
        # time: it is kernel-size times larger than the input, and keeping
        # one per convolution would dominate peak memory
        gm = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        if bias.requires_grad:
            bias._accumulate(gm.sum(axis=0))
        if weight.requires_grad:
            weight._accumulate((gm.T @ im2col(x.data)).reshape(weight.data.shape))
        if x.requires_grad:
            gcols = (gm @ wmat).reshape(n, ho, wo, c, kh, kw)
            gxp = np.zeros((n, c, hp, wp), x.data.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += \
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            x._accumulate(gxp[:, :, pt:pt + h, pl:pl + w_])

    out._backward = backward
    return out


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map of (N,I) by (O,I) weights."""
    if x.data.shape[-1] != weight.data.shape[1]:
        raise ShapeMismatch(f"dense {x.shape} with weight {weight.shape}")
    return add(matmul(x, transpose(weight)), bias)


def transpose(x: Tensor) -> Tensor:
    out = Tensor(x.data.T, parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.T)

    out._backward = backward
    return out


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = Tensor(x.data.transpose(axes), parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.transpose(inverse))

    out._backward = backward
    return out


def dropout(x: Tensor, rate: float, train: bool,
            rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: identity in eval mode, rescaled mask in train mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    if not train or rate == 0.0:
        return x
    if rng is None:
        rng = np.random.default_rng()
    mask = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return mul(x, Tensor(mask))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, class_ids: np.ndarray) -> Tensor:
    """Mean negative log-softmax of the true class, max-subtraction stabilized."""
    class_ids = np.asarray(class_ids)
    n, k = logits.data.shape
    if class_ids.shape != (n,):
        raise ShapeMismatch(f"labels shape {class_ids.shape}, logits {logits.shape}")
    if np.any((class_ids < 0) | (class_ids >= k)):
        raise BadLabel(f"class ids must be in [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsumexp - z[np.arange(n), class_ids]))
    out = Tensor(np.array(loss, dtype=logits.data.dtype), parents=(logits,))

    def backward(g):
        if logits.requires_grad:
            p = softmax(logits.data)
            p[np.arange(n), class_ids] -= 1.0
            logits._accumulate(g * p / n)

    out._backward = backward
    return out


class Parameter:
    """A named trainable tensor with AdamW moment buffers."""

    def __init__(self, name: str, data: np.ndarray):
        self.name = name
        self.tensor = Tensor(data, requires_grad=True)
        self.m = np.zeros_like(data)
        self.v = np.zeros_like(data)

    @property
    def data(self):
        return self.tensor.data

    @data.setter
    def data(self, value):
        self.tensor.data = value


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class AdamW:
    """Adam with decoupled weight decay and bias-corrected moments."""

    def __init__(self, params: list[Parameter], lr: float = 6e-5,
                 beta1: float = 0.90, beta2: float = 0.95,
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p in self.params:
            g = p.tensor.grad
            if g is None:
                g = np.zeros_like(p.data)
            p.m = self.beta1 * p.m + (1.0 - self.beta1) * g
            p.v = self.beta2 * p.v + (1.0 - self.beta2) * g * g
            m_hat = p.m / bc1
            v_hat = p.v / bc2
            p.data = p.data - self.lr * (
                m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p.data
            )

    def zero_grad(self):
        for p in self.params:
            p.tensor.grad = None


class LstmParams:
    """Single-layer LSTM weights in gate order (i, f, g, o), two bias vectors."""

    def __init__(self, name: str, input_size: int, hidden_size: int,
                 rng: np.random.Generator, dtype=np.float32):
        h = hidden_size
        self.input_size = input_size
        self.hidden_size = h
        self.w_ih = Parameter(f"{name}.w_ih",
                              uniform_init(rng, (4 * h, input_size), input_size, dtype))
        self.w_hh = Parameter(f"{name}.w_hh",
                              uniform_init(rng, (4 * h, h), h, dtype))
        self.b_ih = Parameter(f"{name}.b_ih", np.zeros(4 * h, dtype))
        self.b_hh = Parameter(f"{name}.b_hh", np.zeros(4 * h, dtype))

    def parameters(self) -> list[Parameter]:
        return [self.w_ih, self.w_hh, self.b_ih, self.b_hh]


def lstm(x: Tensor, params: LstmParams) -> tuple[Tensor, Tensor, Tensor]:
    """Run a single-layer LSTM over (N, T, I); returns (outputs, h_T, c_T).

    Built from tape primitives, so backward-through-time needs no special
    handling.
    """
    n, t_len, i_size = x.data.shape
    if i_size != params.input_size:
        raise ShapeMismatch(f"lstm input size {i_size}, expected {params.input_size}")
    h_size = params.hidden_size
    dtype = x.data.dtype
    h = Tensor(np.zeros((n, h_size), dtype))
    c = Tensor(np.zeros((n, h_size), dtype))
    w_ih_t = transpose(params.w_ih.tensor)
    w_hh_t = transpose(params.w_hh.tensor)
    outputs = []
    for t in range(t_len):
        x_t = select(x, t, axis=1)
        gates = add(add(matmul(x_t, w_ih_t), params.b_ih.tensor),
                    add(matmul(h, w_hh_t), params.b_hh.tensor))
        i_g = sigmoid(_slice_cols(gates, 0, h_size))
        f_g = sigmoid(_slice_cols(gates, h_size, 2 * h_size))
        g_g = tanh(_slice_cols(gates, 2 * h_size, 3 * h_size))
        o_g = sigmoid(_slice_cols(gates, 3 * h_size, 4 * h_size))
        c = add(mul(f_g, c), mul(i_g, g_g))
        h = mul(o_g, tanh(c))
        outputs.append(h)
    return stack(outputs, axis=1), h, c


def _slice_cols(x: Tensor, lo: int, hi: int) -> Tensor:
    out = Tensor(x.data[:, lo:hi], parents=(x,))

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[:, lo:hi] = g
            x._accumulate(full)

    out._backward = backward
    return out


def grad_check(f, x: Tensor, h: float = 1e-4, coords=None) -> float:
    """Max relative error between reverse-mode and central finite differences.

    ``coords`` optionally restricts the check to a subset of flat indices of
    ``x`` (finite differences cost two evaluations per coordinate).
    """
    x.requires_grad = True
    out = f(x)
    out.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    if coords is None:
        coords = range(flat.size)
    max_err = 0.0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(f(x).data.reshape(()))
        flat[i] = orig - h
        f_minus = float(f(x).data.reshape(()))
        flat[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        a = float(analytic.reshape(-1)[i])
        denom = max(abs(a), abs(numeric), 1e-12)
        max_err = max(max_err, abs(a - numeric) / denom)
    return max_err
