"""Minimal reverse-mode differentiation core on float64 numpy arrays.

Only the handful of operations the estimator needs are implemented:
matmul, broadcasting add/mul, concat, relu, leaky_relu, sigmoid, tanh,
row-wise softmax, transpose, row repeat/tile, and an MSE loss. Each op
records a backward closure; ``backward`` walks the tape in reverse
topological order. Everything is deliberately single-threaded and
deterministic.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjps")

    def __init__(self, data, requires_grad: bool = False, parents=(), vjps=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._vjps = vjps

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> Tensor:
    """Uniform +-sqrt(6 / (fan_in + fan_out)) init."""
    if len(shape) == 1:
        fan_in, fan_out = shape[0], shape[0]
    else:
        fan_in, fan_out = shape[0], shape[1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _shape_check(a: Tensor, b: Tensor, op: str, exact: bool) -> None:
    if exact and a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to the parent's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out_data = a.data + b.data
    except ValueError:
        raise ValueError(f"add: shapes {a.data.shape} and {b.data.shape} "
                         "are not broadcast-compatible") from None
    return Tensor(out_data, parents=(a, b),
                  vjps=(lambda g: _unbroadcast(g, a.data.shape),
                        lambda g: _unbroadcast(g, b.data.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out_data = a.data * b.data
    except ValueError:
        raise ValueError(f"mul: shapes {a.data.shape} and {b.data.shape} "
                         "are not broadcast-compatible") from None
    return Tensor(out_data, parents=(a, b),
                  vjps=(lambda g: _unbroadcast(g * b.data, a.data.shape),
                        lambda g: _unbroadcast(g * a.data, b.data.shape)))


def scale(a: Tensor, k: float) -> Tensor:
    return mul(a, constant(np.float64(k)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: shapes {a.data.shape} and {b.data.shape} "
                         "do not align")
    return Tensor(a.data @ b.data, parents=(a, b),
                  vjps=(lambda g: g @ b.data.T,
                        lambda g: a.data.T @ g))


def transpose(a: Tensor) -> Tensor:
    return Tensor(a.data.T, parents=(a,), vjps=(lambda g: g.T,))


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def make_vjp(k):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(offsets[k], offsets[k + 1])
        sl = tuple(sl)
        return lambda g: g[sl]

    return Tensor(out, parents=tuple(tensors),
                  vjps=tuple(make_vjp(k) for k in range(len(tensors))))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor(np.where(mask, a.data, 0.0), parents=(a,),
                  vjps=(lambda g: g * mask,))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    mask = a.data > 0
    return Tensor(np.where(mask, a.data, slope * a.data), parents=(a,),
                  vjps=(lambda g: g * np.where(mask, 1.0, slope),))


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))
    return Tensor(y, parents=(a,), vjps=(lambda g: g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return Tensor(y, parents=(a,), vjps=(lambda g: g * (1.0 - y * y),))


def softmax_rowwise(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return y * (g - dot)

    return Tensor(y, parents=(a,), vjps=(vjp,))


def repeat_rows(a: Tensor, k: int) -> Tensor:
    """Each row repeated k times in place: [r0, r0, .., r1, r1, ..]."""
    n = a.data.shape[0]
    return Tensor(np.repeat(a.data, k, axis=0), parents=(a,),
                  vjps=(lambda g: g.reshape(n, k, *a.data.shape[1:]).sum(axis=1),))


def tile_rows(a: Tensor, k: int) -> Tensor:
    """The whole row block repeated k times: [r0..rn, r0..rn, ..]."""
    n = a.data.shape[0]
    reps = (k,) + (1,) * (a.data.ndim - 1)
    return Tensor(np.tile(a.data, reps), parents=(a,),
                  vjps=(lambda g: g.reshape(k, n, *a.data.shape[1:]).sum(axis=0),))


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    _shape_check(pred, target, "mse_loss", exact=True)
    diff = pred.data - target.data
    n = pred.data.size
    return Tensor(np.mean(diff * diff), parents=(pred, target),
                  vjps=(lambda g: g * 2.0 * diff / n,
                        lambda g: g * -2.0 * diff / n))


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(x) into .grad of every reachable tensor."""
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node.grad is None:
            continue
        for parent, vjp in zip(node._parents, node._vjps):
            if not parent.requires_grad:
                continue
            g = vjp(node.grad)
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += g


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------

class AdamW:
    """Adam with decoupled weight decay (w <- w - lr*wd*w before the
    bias-corrected moment update)."""

    def __init__(self, params, lr: float = 0.002, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * self.weight_decay * p.data
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def steplr(lr0: float, step_size: int, gamma: float, epoch: int) -> float:
    """Staircase decay: lr0 * gamma ** floor(epoch / step_size)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return lr0 * gamma ** (epoch // step_size)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(closure, params, eps: float = 1e-6) -> float:
    """Max relative error between backprop and central finite differences.

    ``closure`` rebuilds the scalar loss from the current parameter values;
    every entry of every parameter is perturbed. The error denominator is
    floored at 1 so near-zero entries, where finite-difference roundoff
    dominates, are compared absolutely.
    """
    params = list(params)
    zero_grads(params)
    loss = closure()
    backward(loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                for p in params]
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = closure().item()
            flat[i] = orig - eps
            f_minus = closure().item()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(fd) + abs(gflat[i]), 1.0)
            worst = max(worst, abs(fd - gflat[i]) / denom)
    return worst


# ---------------------------------------------------------------------------
# checkpoint serialization: text header + flat float arrays, exact
# round-trip via repr/float
# ---------------------------------------------------------------------------

def save_arrays(path, header: dict[str, str], arrays: list[tuple[str, np.ndarray]]) -> None:
    with open(path, "w") as fh:
        fh.write("# checkpoint\n")
        for key in sorted(header):
            fh.write(f"meta {key} {header[key]}\n")
        for name, arr in arrays:
            shape = ",".join(str(s) for s in arr.shape)
            fh.write(f"array {name} {shape}\n")
            fh.write(" ".join(repr(float(v)) for v in arr.reshape(-1)) + "\n")


def load_arrays(path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    header: dict[str, str] = {}
    arrays: dict[str, np.ndarray] = {}
    with open(path) as fh:
        lines = iter(fh.read().splitlines())
    for line in lines:
        if not line or line.startswith("#"):
            continue
        kind, rest = line.split(" ", 1)
        if kind == "meta":
            key, value = rest.split(" ", 1)
            header[key] = value
        elif kind == "array":
            name, shape_s = rest.rsplit(" ", 1)
            shape = tuple(int(s) for s in shape_s.split(",") if s)
            values = next(lines)
            arr = np.array([float(v) for v in values.split()], dtype=np.float64)
            arrays[name] = arr.reshape(shape)
        else:
            raise ValueError(f"unknown checkpoint record {kind!r}")
    return header, arrays
