"""Dense float64 tensors with reverse-mode automatic differentiation

An operation whose inputs include a tensor that requires a gradient records a node:
its inputs and a closure mapping the output adjoint to input adjoints.  ``backward``
collects the nodes reachable from a scalar loss into a :class:`Tape` (topological
order) and walks it in reverse, summing adjoints into ``.grad`` of leaf tensors.

Recording is controlled per thread by :class:`no_grad`, so independent graphs can be
built and differentiated from different threads.
"""
import threading

import numpy as np

from editlab.errors import DimensionError, ContractError, EmptyLossError

_grad_state = threading.local()

GELU_C = np.sqrt(2.0 / np.pi)
LAYER_NORM_EPS = 1e-5


def is_grad_enabled():
    return getattr(_grad_state, "enabled", True)


class no_grad:
    """context manager disabling graph recording in the current thread"""

    def __enter__(self):
        self._prev = is_grad_enabled()
        _grad_state.enabled = False
        return self

    def __exit__(self, *exc):
        _grad_state.enabled = self._prev
        return False


class Tensor:
    """n-dimensional float64 array, optionally tracked for gradients

    Parameters
    ----------
    data: array_like
        values, copied into a float64 array
    requires_grad: bool, default False
        accumulate gradients into ``.grad`` during ``backward``
    """

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self):
        return self._backward is None

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data.copy()

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, op={self._op})"


class Parameter(Tensor):
    """trainable leaf tensor with a unique dotted id, e.g. ``layer.3.attn.wq``

    ``state`` holds optimizer moments when :func:`adam_step` is used without an explicit
    state dict.
    """

    def __init__(self, name, data):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.state = {}

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.shape})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward_fn, op):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out._parents = ()
    out._backward = None
    out._op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


class Tape:
    """ordered record of the primitive operations that produced ``output``

    ``nodes`` lists the non-leaf tensors in topological order, every node after all of
    its inputs.
    """

    def __init__(self, output):
        self.output = output
        self.nodes = []
        visited = set()
        stack = [(output, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                self.nodes.append(t)
                continue
            if id(t) in visited or t._backward is None:
                continue
            visited.add(id(t))
            stack.append((t, True))
            for p in t._parents:
                if p._backward is not None and id(p) not in visited:
                    stack.append((p, False))

    def __len__(self):
        return len(self.nodes)


def backward(loss):
    """reverse pass from a scalar, accumulating into ``.grad`` of leaves that require it

    Contributions to each leaf are summed within the pass and added to any existing
    ``.grad`` once, so two calls without zeroing give exactly twice the gradient.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward on a tensor that does not require gradients")

    seed = np.ones_like(loss.data)
    if loss.is_leaf:
        _accumulate_leaf({id(loss): (loss, seed)})
        return

    tape = Tape(loss)
    adjoints = {id(loss): seed}
    leaf_adjoints = {}
    for node in reversed(tape.nodes):
        g = adjoints.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.is_leaf:
                if id(parent) in leaf_adjoints:
                    leaf_adjoints[id(parent)] = (parent, leaf_adjoints[id(parent)][1] + pg)
                else:
                    leaf_adjoints[id(parent)] = (parent, pg)
            elif id(parent) in adjoints:
                adjoints[id(parent)] = adjoints[id(parent)] + pg
            else:
                adjoints[id(parent)] = pg
    _accumulate_leaf(leaf_adjoints)


def _accumulate_leaf(leaf_adjoints):
    for leaf, g in leaf_adjoints.values():
        g = np.reshape(g, leaf.data.shape)
        if leaf.grad is None:
            leaf.grad = np.array(g, dtype=np.float64)
        else:
            leaf.grad = leaf.grad + g


def zero_grads(params):
    for p in params:
        p.grad = None


# ----------------------------------------------------------------------------------
# primitive operations


def _check_same_shape(op, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b):
    """elementwise sum of equal shapes, or ``[m, n] + [n]`` bias-add over rows"""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim == 2 and b.data.ndim == 1:
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"add: bias of shape {b.shape} does not match rows of {a.shape}")
        return _result(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)), "add_bias")
    _check_same_shape("add", a, b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape("sub", a, b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    """elementwise product of equal shapes"""
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape("mul", a, b)
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a, c):
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return _result(a.data @ b.data, (a, b),
                   lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def transpose(a):
    if a.data.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {a.shape}")
    return _result(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def sum_all(a):
    shape = a.shape
    return _result(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),), "sum_all")


def mean(a):
    n = a.data.size
    shape = a.shape
    return _result(np.array(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),), "mean")


def square_sum(a):
    """sum of squared elements, the squared Frobenius norm"""
    return _result(np.array(np.sum(a.data * a.data)), (a,), lambda g: (2.0 * float(g) * a.data,), "square_sum")


def gelu(a):
    """tanh approximation of the Gaussian error linear unit"""
    x = a.data
    inner = GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def _bw(g):
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
        return (g * d,)

    return _result(out, (a,), _bw, "gelu")


def causal_mask(n):
    """boolean ``[n, n]`` mask, True where column <= row"""
    return np.tril(np.ones((n, n), dtype=bool))


def softmax_rows(a, mask=None):
    """row-wise softmax, optionally restricted to True entries of a boolean mask

    Masked entries get probability zero and receive no gradient.  Every row must keep
    at least one entry.
    """
    x = a.data
    if x.ndim != 2:
        raise DimensionError(f"softmax_rows needs a matrix, got shape {a.shape}")
    if mask is None:
        shifted = x - x.max(axis=1, keepdims=True)
        e = np.exp(shifted)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise DimensionError(f"softmax_rows: mask shape {mask.shape} vs {x.shape}")
        if not mask.any(axis=1).all():
            raise ContractError("softmax_rows: a row has every entry masked")
        row_max = np.where(mask, x, -np.inf).max(axis=1, keepdims=True)
        e = np.where(mask, np.exp(np.where(mask, x - row_max, 0.0)), 0.0)
    p = e / e.sum(axis=1, keepdims=True)

    def _bw(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _result(p, (a,), _bw, "softmax_rows")


def layer_norm(x, gain, bias, eps=LAYER_NORM_EPS):
    """normalize each row to zero mean, unit variance, then scale by gain and shift by bias"""
    if x.data.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise DimensionError(f"layer_norm: x {x.shape}, gain {gain.shape}, bias {bias.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    inv_std = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv_std
    out = xhat * gain.data + bias.data

    def _bw(g):
        dxhat = g * gain.data
        dx = inv_std * (dxhat - dxhat.mean(axis=1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return (dx, (g * xhat).sum(axis=0), g.sum(axis=0))

    return _result(out, (x, gain, bias), _bw, "layer_norm")


def take_rows(table, indices):
    """gather rows of a ``[V, d]`` table, the embedding lookup"""
    idx = np.asarray(list(indices), dtype=np.int64)
    if table.data.ndim != 2:
        raise DimensionError(f"take_rows needs a matrix, got shape {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ContractError(f"take_rows: index out of range [0, {table.shape[0]})")
    shape = table.shape

    def _bw(g):
        gt = np.zeros(shape)
        np.add.at(gt, idx, g)
        return (gt,)

    return _result(table.data[idx], (table,), _bw, "take_rows")


def slice_cols(a, start, stop):
    if a.data.ndim != 2 or not 0 <= start < stop <= a.shape[1]:
        raise DimensionError(f"slice_cols: [{start}:{stop}] out of range for {a.shape}")
    shape = a.shape

    def _bw(g):
        ga = np.zeros(shape)
        ga[:, start:stop] = g
        return (ga,)

    return _result(a.data[:, start:stop].copy(), (a,), _bw, "slice_cols")


def concat_cols(tensors):
    tensors = list(tensors)
    rows = {t.shape[0] for t in tensors}
    if len(rows) != 1 or any(t.data.ndim != 2 for t in tensors):
        raise DimensionError(f"concat_cols: incompatible shapes {[t.shape for t in tensors]}")
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def _bw(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return _result(np.concatenate([t.data for t in tensors], axis=1), tensors, _bw, "concat_cols")


def diag(v):
    """square matrix with v on the diagonal"""
    if v.data.ndim != 1:
        raise DimensionError(f"diag needs a vector, got shape {v.shape}")
    return _result(np.diag(v.data), (v,), lambda g: (np.diag(g).copy(),), "diag")


def replace_rows(a, rows, values):
    """copy of ``a`` with the listed rows replaced by the rows of ``values``"""
    rows = np.asarray(list(rows), dtype=np.int64)
    if len(set(rows.tolist())) != len(rows):
        raise ContractError("replace_rows: duplicate row indices")
    if values.data.ndim != 2 or values.shape != (len(rows), a.shape[1]):
        raise DimensionError(f"replace_rows: values {values.shape} for {len(rows)} rows of {a.shape}")
    out = a.data.copy()
    out[rows] = values.data

    def _bw(g):
        ga = g.copy()
        ga[rows] = 0.0
        return (ga, g[rows])

    return _result(out, (a, values), _bw, "replace_rows")


def cross_entropy(logits, targets, mask=None):
    """mean negative log likelihood of targets over positions where mask is True

    Parameters
    ----------
    logits: Tensor [T, V]
    targets: sequence(int) length T
    mask: sequence(bool) length T, default all True

    Returns
    -------
    loss: scalar Tensor
    """
    x = logits.data
    if x.ndim != 2:
        raise DimensionError(f"cross_entropy needs [T, V] logits, got {logits.shape}")
    T, V = x.shape
    targets = np.asarray(list(targets), dtype=np.int64)
    mask = np.ones(T, dtype=bool) if mask is None else np.asarray(list(mask), dtype=bool)
    if targets.shape != (T,) or mask.shape != (T,):
        raise DimensionError(f"cross_entropy: {T} positions, {targets.shape} targets, {mask.shape} mask")
    n = int(mask.sum())
    if n == 0:
        raise EmptyLossError("cross_entropy over an all-false mask")
    if targets[mask].min() < 0 or targets[mask].max() >= V:
        raise ContractError(f"cross_entropy: target index out of range [0, {V})")

    shifted = x - x.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    rows = np.nonzero(mask)[0]
    nll = logz[rows] - shifted[rows, targets[rows]]
    loss = np.array(nll.sum() / n)

    def _bw(g):
        p = np.exp(shifted - logz[:, None])
        p[rows, targets[rows]] -= 1.0
        p[~mask] = 0.0
        return (p * (float(g) / n),)

    return _result(loss, (logits,), _bw, "cross_entropy")


# ----------------------------------------------------------------------------------
# optimization


def adam_step(params, lr, betas=(0.9, 0.999), eps=1e-8, max_update=None, state=None):
    """one Adam update of every parameter that has a gradient

    Parameters
    ----------
    params: iterable(Parameter)
        parameters to update in place
    lr: float
        learning rate
    betas: (float, float), default (0.9, 0.999)
        decay of first and second moment estimates
    eps: float, default 1e-8
        denominator stabilizer
    max_update: float, default None
        clip each element's step to [-max_update, max_update] (an L-infinity budget)
    state: dict, default None
        moments keyed by parameter name, otherwise each parameter's own ``state``
    """
    b1, b2 = betas
    for p in params:
        if p.grad is None:
            continue
        st = p.state if state is None else state.setdefault(p.name, {})
        t = st.get("t", 0) + 1
        g = p.grad
        m = b1 * st["m"] + (1.0 - b1) * g if "m" in st else (1.0 - b1) * g
        v = b2 * st["v"] + (1.0 - b2) * g * g if "v" in st else (1.0 - b2) * g * g
        st["t"], st["m"], st["v"] = t, m, v

        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        step = lr * m_hat / (np.sqrt(v_hat) + eps)
        if max_update is not None:
            step = np.clip(step, -max_update, max_update)
        p.data -= step


class Adam:
    """Adam optimizer owning its moment state

    Parameters
    ----------
    params: list(Parameter)
    lr: float
    betas: (float, float), default (0.9, 0.999)
    eps: float, default 1e-8
    max_update: float, default None
        per-step L-infinity clip on each element's update
    """

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, max_update=None):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ContractError("Adam: duplicate parameter names")
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.max_update = max_update
        self.state = {}

    def step(self):
        adam_step(self.params, self.lr, self.betas, self.eps, max_update=self.max_update, state=self.state)

    def zero_grad(self):
        zero_grads(self.params)
