"""Reverse-mode automatic differentiation on dense numpy arrays.

The design is a recorded tape: every op that touches a tensor with
requires_grad appends one node to the active Graph, so append order is
already a topological order and backward() is a single reverse sweep
that visits each node exactly once. Gradients flow through a scratch
dict during the sweep and are flushed into ``Tensor.grad`` only on
leaves (tensors no node produced), so repeated backward calls
accumulate, matching the contract that grads add up until zeroed.

Storage is row-major float64 by default; float32 exists for snapshot
compatibility testing and flows through every op unchanged. There is
no broadcasting beyond scalar-with-tensor: shape rules are strict and
violations name the op and both shapes.

Thread-safety: recording is process-global and single-threaded by
design. Once training is done and no Graph is active, tensors are
read-only values and may be shared freely across reader threads.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, NumericError, ShapeError, ValidationError

DEFAULT_DTYPE = np.float64
_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """A dense array plus an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        if isinstance(data, Tensor):
            raise ValidationError("Tensor: wrap raw arrays, not other Tensors")
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, rg={self.requires_grad})"

    # Sugar for the common binary ops. Everything routes through the
    # module-level functions so recording stays in one place.
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


_graph_stack: list["Graph"] = []


class Graph:
    """Append-only tape of executed ops.

    Use as a context manager around the forward pass, then call
    ``backward(loss)``. Nodes are (output tensor, backward closure)
    pairs; the closure returns (parent, contribution) pairs for the
    sweep to accumulate.
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, object]] = []

    def __enter__(self) -> "Graph":
        _graph_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _graph_stack.pop()
        assert popped is self, "Graph contexts must nest"

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss)=1 and sweep the tape in reverse."""
        if loss.data.shape != ():
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
        if not loss.requires_grad:
            raise ValidationError("backward: loss does not depend on any requires_grad tensor")
        pending: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
        holders: dict[int, Tensor] = {id(loss): loss}
        for out, back in reversed(self.nodes):
            g = pending.pop(id(out), None)
            if g is None:
                continue
            holders.pop(id(out), None)
            for parent, contrib in back(g):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                prior = pending.get(key)
                # Rebind instead of += : contributions may alias the
                # upstream array and must never be mutated in place.
                pending[key] = contrib if prior is None else prior + contrib
                holders[key] = parent
        for key, g in pending.items():
            leaf = holders[key]
            leaf.grad = np.array(g, copy=True) if leaf.grad is None else leaf.grad + g


def _active() -> Graph | None:
    return _graph_stack[-1] if _graph_stack else None


def _record(out: Tensor, back) -> None:
    graph = _active()
    if graph is not None and out.requires_grad:
        graph.nodes.append((out, back))


def _needs_grad(*tensors: Tensor) -> bool:
    if _active() is None:
        return False
    return any(t.requires_grad for t in tensors)


def _check_finite(op: str, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"{op}: produced a non-finite value")


# ---------------------------------------------------------------------------
# Primitive ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out_data = a.data @ b.data
    _check_finite("matmul", out_data)
    out = Tensor(out_data, requires_grad=_needs_grad(a, b))

    def back(g):
        return [(a, g @ b.data.T), (b, a.data.T @ g)]

    _record(out, back)
    return out


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
        out = Tensor(a.data + b.data, requires_grad=_needs_grad(a, b))

        def back(g):
            return [(a, g), (b, g)]

    elif isinstance(b, (int, float)):
        out = Tensor(a.data + b, requires_grad=_needs_grad(a))

        def back(g):
            return [(a, g)]

    else:
        raise ShapeError(f"add: second operand must be Tensor or scalar, got {type(b).__name__}")
    _record(out, back)
    return out


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; scalar second operand behaves like scale."""
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")
        out = Tensor(a.data * b.data, requires_grad=_needs_grad(a, b))

        def back(g):
            return [(a, g * b.data), (b, g * a.data)]

    elif isinstance(b, (int, float)):
        out = Tensor(a.data * b, requires_grad=_needs_grad(a))

        def back(g):
            return [(a, g * b)]

    else:
        raise ShapeError(f"mul: second operand must be Tensor or scalar, got {type(b).__name__}")
    _record(out, back)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    if not isinstance(c, (int, float)):
        raise ShapeError(f"scale: factor must be a scalar, got {type(c).__name__}")
    out = Tensor(a.data * c, requires_grad=_needs_grad(a))

    def back(g):
        return [(a, g * c)]

    _record(out, back)
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), requires_grad=_needs_grad(a))

    def back(g):
        return [(a, g * (a.data > 0))]

    _record(out, back)
    return out


def log(a: Tensor) -> Tensor:
    if not (a.data > 0).all():
        raise DomainError("log: input must be strictly positive")
    out = Tensor(np.log(a.data), requires_grad=_needs_grad(a))

    def back(g):
        return [(a, g / a.data)]

    _record(out, back)
    return out


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out_data = np.exp(a.data)
    _check_finite("exp", out_data)
    out = Tensor(out_data, requires_grad=_needs_grad(a))

    def back(g):
        return [(a, g * out_data)]

    _record(out, back)
    return out


def softmax(a: Tensor, axis: int) -> Tensor:
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / np.sum(e, axis=axis, keepdims=True)
    out = Tensor(s, requires_grad=_needs_grad(a))

    def back(g):
        inner = np.sum(g * s, axis=axis, keepdims=True)
        return [(a, s * (g - inner))]

    _record(out, back)
    return out


def concat(parts: list[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ShapeError("concat: needs at least one tensor")
    ref = parts[0].shape
    for p in parts[1:]:
        if len(p.shape) != len(ref) or any(
            p.shape[i] != ref[i] for i in range(len(ref)) if i != axis
        ):
            raise ShapeError(f"concat: shape mismatch {ref} vs {p.shape} on axis {axis}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis), requires_grad=_needs_grad(*parts))
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def back(g):
        return list(zip(parts, np.split(g, bounds, axis=axis)))

    _record(out, back)
    return out


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}")
    out = Tensor(a.data.reshape(shape), requires_grad=_needs_grad(a))

    def back(g):
        return [(a, g.reshape(a.shape))]

    _record(out, back)
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expects a 2-d tensor, got shape {a.shape}")
    out = Tensor(a.data.T.copy(), requires_grad=_needs_grad(a))

    def back(g):
        return [(a, g.T)]

    _record(out, back)
    return out


def _reduce(a: Tensor, axis: int | None, kind: str) -> Tensor:
    data = a.data
    if axis is not None and not (-data.ndim <= axis < data.ndim):
        raise ShapeError(f"reduce_{kind}: axis {axis} out of range for shape {a.shape}")
    if kind == "sum":
        out_data = data.sum(axis=axis, keepdims=axis is not None)
    elif kind == "mean":
        out_data = data.mean(axis=axis, keepdims=axis is not None)
    elif kind == "max":
        out_data = data.max(axis=axis, keepdims=axis is not None)
    elif kind == "min":
        out_data = data.min(axis=axis, keepdims=axis is not None)
    else:  # pragma: no cover
        raise ValidationError(f"reduce: unknown kind {kind!r}")
    out = Tensor(out_data, requires_grad=_needs_grad(a))

    if kind in ("sum", "mean"):
        n = data.size if axis is None else data.shape[axis]
        factor = 1.0 if kind == "sum" else 1.0 / n

        def back(g):
            return [(a, np.broadcast_to(g * factor, data.shape))]

    else:
        # Ties route the whole gradient to the first extremum, matching
        # numpy argmax/argmin order; documented, deterministic.
        def back(g):
            mask = np.zeros_like(data)
            if axis is None:
                flat = data.argmax() if kind == "max" else data.argmin()
                mask.flat[flat] = 1.0
                return [(a, mask * g)]
            idx = data.argmax(axis=axis) if kind == "max" else data.argmin(axis=axis)
            np.put_along_axis(mask, np.expand_dims(idx, axis), 1.0, axis=axis)
            return [(a, mask * np.broadcast_to(g, mask.shape))]

    _record(out, back)
    return out


def reduce_sum(a: Tensor, axis: int | None = None) -> Tensor:
    return _reduce(a, axis, "sum")


def reduce_mean(a: Tensor, axis: int | None = None) -> Tensor:
    return _reduce(a, axis, "mean")


def reduce_max(a: Tensor, axis: int | None = None) -> Tensor:
    return _reduce(a, axis, "max")


def reduce_min(a: Tensor, axis: int | None = None) -> Tensor:
    return _reduce(a, axis, "min")


def gather(a: Tensor, rows) -> Tensor:
    idx = np.asarray(rows, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError(f"gather: rows must be a flat index list, got shape {idx.shape}")
    n = a.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValidationError(f"gather: row index out of range for first axis of size {n}")
    out = Tensor(a.data[idx], requires_grad=_needs_grad(a))

    def back(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return [(a, ga)]

    _record(out, back)
    return out


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Sum over rows of -log softmax(logits)[row, target].

    One row per predicted position; the scalar result is the negative
    log probability of the whole target sequence.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be 2-d, got shape {logits.shape}")
    t = np.asarray(targets, dtype=np.intp).reshape(-1)
    n, v = logits.shape
    if t.shape[0] != n:
        raise ShapeError(f"cross_entropy: {n} logit rows vs {t.shape[0]} targets")
    if t.size and (t.min() < 0 or t.max() >= v):
        raise ValidationError(f"cross_entropy: target index out of range for vocab {v}")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    loss = float((lse - z[np.arange(n), t]).sum())
    _check_finite("cross_entropy", np.asarray(loss))
    out = Tensor(np.asarray(loss, dtype=z.dtype), requires_grad=_needs_grad(logits))

    def back(g):
        sm = np.exp(z - lse[:, None])
        sm[np.arange(n), t] -= 1.0
        return [(logits, sm * g)]

    _record(out, back)
    return out


def kl_divergence(p_logits: Tensor, q_logits: Tensor) -> Tensor:
    """Mean over rows of KL(softmax(p) || softmax(q)), in nats.

    Computed from log-probabilities so rows with underflowing
    probabilities stay finite. Differentiable in both operands.
    """
    if p_logits.shape != q_logits.shape or p_logits.data.ndim != 2:
        raise ShapeError(
            f"kl_divergence: expects matching 2-d shapes, got {p_logits.shape} vs {q_logits.shape}"
        )
    n = p_logits.shape[0]

    def log_softmax(z):
        m = z.max(axis=1, keepdims=True)
        return z - (m + np.log(np.exp(z - m).sum(axis=1, keepdims=True)))

    lp = log_softmax(p_logits.data)
    lq = log_softmax(q_logits.data)
    p = np.exp(lp)
    per_row = (p * (lp - lq)).sum(axis=1)
    _check_finite("kl_divergence", per_row)
    out = Tensor(np.asarray(per_row.mean(), dtype=lp.dtype), requires_grad=_needs_grad(p_logits, q_logits))

    def back(g):
        q = np.exp(lq)
        gq = (q - p) * (g / n)
        gp = p * ((lp - lq) - per_row[:, None]) * (g / n)
        return [(p_logits, gp), (q_logits, gq)]

    _record(out, back)
    return out


# ---------------------------------------------------------------------------
# Optimization


class Adam:
    """Adam with bias correction over a fixed parameter list.

    lr_scales, when given, multiplies the step size per parameter; the
    moment estimates are unaffected.
    """

    def __init__(
        self,
        params: list[Tensor],
        lr: float,
        betas=(0.9, 0.999),
        eps: float = 1e-8,
        lr_scales: list[float] | None = None,
    ):
        self.params = list(params)
        if not self.params:
            raise ValidationError("Adam: empty parameter list")
        if lr_scales is not None and len(lr_scales) != len(self.params):
            raise ValidationError("Adam: lr_scales length must match params")
        self.lr = lr
        self.lr_scales = list(lr_scales) if lr_scales is not None else [1.0] * len(self.params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ValidationError(f"Adam: parameter {p.name or i} has no gradient")
            g = p.grad
            self._m[i] = b1 * self._m[i] + (1 - b1) * g
            self._v[i] = b2 * self._v[i] + (1 - b2) * g * g
            m_hat = self._m[i] / (1 - b1**self.t)
            v_hat = self._v[i] / (1 - b2**self.t)
            p.data = p.data - self.lr * self.lr_scales[i] * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def clip_global_norm(params: list[Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm.

    Returns the pre-clip norm. Parameters without gradients raise, the
    same contract Adam enforces.
    """
    total = 0.0
    for p in params:
        if p.grad is None:
            raise ValidationError(f"clip_global_norm: parameter {p.name!r} has no gradient")
        total += float((p.grad * p.grad).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for p in params:
            p.grad = p.grad * factor
    return norm


def uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
