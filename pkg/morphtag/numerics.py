"""Dense float64 tensors with hand-written gradients.

Every operation is a :class:`Function` with an explicit ``forward`` and
``backward``. Calling ``Function.apply`` records the inputs on the output
tensor, and ``Tensor.backward`` walks those records in reverse
topological order, *adding* gradients into leaf tensors so that
parameters shared by several heads compose correctly.
"""
import contextlib
import logging
import threading

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import logsumexp

from .exceptions import DimensionError, InputError, LoadError, NumericalError

logger = logging.getLogger(__name__)

DTYPE = np.float64

_state = threading.local()


def is_grad_enabled():
    return getattr(_state, 'grad_enabled', True)


@contextlib.contextmanager
def no_grad():
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    __slots__ = ('data', 'grad', 'requires_grad', 'ctx')

    def __init__(self, data, requires_grad=False):
        self.data = np.ascontiguousarray(np.array(data, dtype=DTYPE))
        self.grad = None
        self.requires_grad = requires_grad
        self.ctx = None

    @property
    def shape(self):
        return self.data.shape

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self):
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __float__(self):
        return self.item()

    def numpy(self):
        return self.data.copy()

    def zero_grad(self):
        self.grad = None

    def accumulate(self, grad):
        grad = np.asarray(grad, dtype=DTYPE)
        if grad.shape != self.data.shape:
            raise DimensionError(
                f"gradient shape {grad.shape} does not match tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(
                    f"backward() without a seed gradient needs a scalar, got {self.shape}")
            grad = np.ones_like(self.data)
        pending = {id(self): np.asarray(grad, dtype=DTYPE)}
        for node in reversed(_topological_order(self)):
            node_grad = pending.pop(id(node), None)
            if node_grad is None:
                continue
            if node.ctx is None:
                if node.requires_grad:
                    node.accumulate(node_grad)
                continue
            ctx = node.ctx
            input_grads = ctx.function.backward(ctx, node_grad)
            for parent, parent_grad in zip(ctx.inputs, input_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = parent_grad if key not in pending else pending[key] + parent_grad


def _topological_order(root):
    # iterative post-order; sentence graphs are deeper than the recursion limit
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node.ctx is not None:
            for parent in node.ctx.inputs:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


class Context:
    def __init__(self, function, inputs):
        self.function = function
        self.inputs = inputs
        self.saved = ()

    def save_for_backward(self, *arrays):
        self.saved = arrays


class Function:
    """An operation with an analytic gradient.

    Subclasses implement ``forward(ctx, *arrays, **options)`` returning a
    numpy array and ``backward(ctx, grad)`` returning one gradient (or
    ``None``) per tensor input.
    """

    @staticmethod
    def forward(ctx, *arrays, **options):
        raise NotImplementedError

    @staticmethod
    def backward(ctx, grad):
        raise NotImplementedError

    @classmethod
    def apply_with_context(cls, *inputs, **options):
        tensors = [as_tensor(x) for x in inputs]
        ctx = Context(cls, tensors)
        out = np.asarray(cls.forward(ctx, *(t.data for t in tensors), **options), dtype=DTYPE)
        if not np.all(np.isfinite(out)):
            raise NumericalError(cls.__name__)
        result = Tensor(out)
        if is_grad_enabled() and any(t.requires_grad for t in tensors):
            result.requires_grad = True
            result.ctx = ctx
        return result, ctx

    @classmethod
    def apply(cls, *inputs, **options):
        return cls.apply_with_context(*inputs, **options)[0]


# =====================================================
# Elementwise and shape operations
# =====================================================

class Add(Function):
    @staticmethod
    def forward(ctx, a, b):
        if a.shape != b.shape:
            raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")
        return a + b

    @staticmethod
    def backward(ctx, grad):
        return grad, grad


class AddN(Function):
    @staticmethod
    def forward(ctx, *arrays):
        shapes = {a.shape for a in arrays}
        if len(shapes) != 1:
            raise DimensionError(f"add_n: mixed shapes {sorted(shapes)}")
        return np.sum(arrays, axis=0)

    @staticmethod
    def backward(ctx, grad):
        return tuple(grad for _ in ctx.inputs)


class Scale(Function):
    @staticmethod
    def forward(ctx, x, factor=1.0):
        ctx.factor = factor
        return x * factor

    @staticmethod
    def backward(ctx, grad):
        return (grad * ctx.factor,)


class Tanh(Function):
    @staticmethod
    def forward(ctx, x):
        y = np.tanh(x)
        ctx.save_for_backward(y)
        return y

    @staticmethod
    def backward(ctx, grad):
        (y,) = ctx.saved
        return (grad * (1.0 - y * y),)


class Relu(Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x > 0)
        return np.maximum(x, 0.0)

    @staticmethod
    def backward(ctx, grad):
        (mask,) = ctx.saved
        return (grad * mask,)


def softmax_array(u):
    shifted = u - np.max(u)
    e = np.exp(shifted)
    return e / e.sum()


class Softmax(Function):
    @staticmethod
    def forward(ctx, u):
        if u.ndim != 1 or u.shape[0] == 0:
            raise DimensionError(f"softmax needs a non-empty vector, got shape {u.shape}")
        s = softmax_array(u)
        ctx.save_for_backward(s)
        return s

    @staticmethod
    def backward(ctx, grad):
        (s,) = ctx.saved
        return (s * (grad - np.dot(s, grad)),)


class Concat(Function):
    @staticmethod
    def forward(ctx, *vectors):
        if any(v.ndim != 1 for v in vectors):
            raise DimensionError("concat joins vectors only")
        ctx.sizes = [v.shape[0] for v in vectors]
        return np.concatenate(vectors)

    @staticmethod
    def backward(ctx, grad):
        bounds = np.cumsum([0] + ctx.sizes)
        return tuple(grad[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))


class Stack(Function):
    @staticmethod
    def forward(ctx, *vectors):
        shapes = {v.shape for v in vectors}
        if len(shapes) != 1:
            raise DimensionError(f"stack: mixed shapes {sorted(shapes)}")
        return np.stack(vectors)

    @staticmethod
    def backward(ctx, grad):
        return tuple(grad[i] for i in range(grad.shape[0]))


class Slice(Function):
    @staticmethod
    def forward(ctx, x, start=0, stop=None):
        ctx.shape, ctx.start, ctx.stop = x.shape, start, stop
        return x[start:stop]

    @staticmethod
    def backward(ctx, grad):
        full = np.zeros(ctx.shape, dtype=DTYPE)
        full[ctx.start:ctx.stop] = grad
        return (full,)


class Gather(Function):
    """Row lookup; the gradient scatters back with repeated rows summed."""

    @staticmethod
    def forward(ctx, table, indices=()):
        indices = np.asarray(indices, dtype=np.intp)
        if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
            raise DimensionError(
                f"gather: index out of range for table with {table.shape[0]} rows")
        ctx.shape, ctx.indices = table.shape, indices
        return table[indices]

    @staticmethod
    def backward(ctx, grad):
        full = np.zeros(ctx.shape, dtype=DTYPE)
        np.add.at(full, ctx.indices, grad)
        return (full,)


class Sum(Function):
    @staticmethod
    def forward(ctx, x):
        ctx.shape = x.shape
        return np.sum(x)

    @staticmethod
    def backward(ctx, grad):
        return (np.full(ctx.shape, float(grad), dtype=DTYPE),)


# =====================================================
# Linear algebra
# =====================================================

class MatMul(Function):
    @staticmethod
    def forward(ctx, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
        ctx.save_for_backward(a, b)
        return a @ b

    @staticmethod
    def backward(ctx, grad):
        a, b = ctx.saved
        return grad @ b.T, a.T @ grad


class Linear(Function):
    """``x @ W.T + b`` for a vector or a row-stacked matrix ``x``."""

    @staticmethod
    def forward(ctx, x, weight, bias):
        if x.shape[-1] != weight.shape[1] or bias.shape != (weight.shape[0],):
            raise DimensionError(
                f"linear: input {x.shape}, weight {weight.shape}, bias {bias.shape}")
        ctx.save_for_backward(x, weight)
        return x @ weight.T + bias

    @staticmethod
    def backward(ctx, grad):
        x, weight = ctx.saved
        if x.ndim == 1:
            return weight.T @ grad, np.outer(grad, x), grad
        return grad @ weight, grad.T @ x, grad.sum(axis=0)


class Conv1dValid(Function):
    """Valid-mode 1-d convolution of an ``l x d`` input with a ``j x d x c`` kernel."""

    @staticmethod
    def forward(ctx, inputs, kernel, bias):
        length, dim = inputs.shape
        width, kernel_dim, channels = kernel.shape
        if kernel_dim != dim or bias.shape != (channels,):
            raise DimensionError(
                f"conv1d: input {inputs.shape}, kernel {kernel.shape}, bias {bias.shape}")
        if length < width:
            raise InputError(f"conv1d: input length {length} shorter than kernel width {width}")
        windows = sliding_window_view(inputs, (width, dim)).reshape(length - width + 1, width * dim)
        ctx.save_for_backward(windows, kernel)
        ctx.length = length
        return windows @ kernel.reshape(width * dim, channels) + bias

    @staticmethod
    def backward(ctx, grad):
        windows, kernel = ctx.saved
        width, dim, channels = kernel.shape
        positions = grad.shape[0]
        d_kernel = (windows.T @ grad).reshape(width, dim, channels)
        d_inputs = np.zeros((ctx.length, dim), dtype=DTYPE)
        for t in range(width):
            d_inputs[t:t + positions] += grad @ kernel[t].T
        return d_inputs, d_kernel, grad.sum(axis=0)


# =====================================================
# Losses
# =====================================================

class SoftmaxCrossEntropy(Function):
    @staticmethod
    def forward(ctx, logits, target=0):
        if not 0 <= target < logits.shape[0]:
            raise InputError(f"target {target} outside {logits.shape[0]} classes")
        ctx.probs = softmax_array(logits)
        ctx.target = target
        return logsumexp(logits) - logits[target]

    @staticmethod
    def backward(ctx, grad):
        d = ctx.probs.copy()
        d[ctx.target] -= 1.0
        return (d * grad,)


class SquaredL2(Function):
    @staticmethod
    def forward(ctx, *weights):
        ctx.save_for_backward(*weights)
        return sum(float(np.sum(w * w)) for w in weights)

    @staticmethod
    def backward(ctx, grad):
        return tuple(2.0 * w * grad for w in ctx.saved)


# =====================================================
# Functional wrappers
# =====================================================

def matmul(a, b):
    return MatMul.apply(a, b)


def add(a, b):
    return Add.apply(a, b)


def add_n(tensors):
    tensors = list(tensors)
    if len(tensors) == 1:
        return tensors[0]
    return AddN.apply(*tensors)


def scale(x, factor):
    return Scale.apply(x, factor=float(factor))


def tanh(x):
    return Tanh.apply(x)


def relu(x):
    return Relu.apply(x)


def softmax(u):
    return Softmax.apply(u)


def concat(vectors):
    vectors = list(vectors)
    if len(vectors) == 1:
        return vectors[0]
    return Concat.apply(*vectors)


def stack(vectors):
    return Stack.apply(*vectors)


def slice_vector(x, start, stop):
    return Slice.apply(x, start=start, stop=stop)


def gather(table, indices):
    return Gather.apply(table, indices=tuple(int(i) for i in indices))


def linear(x, weight, bias):
    return Linear.apply(x, weight, bias)


def conv1d_valid(inputs, kernel, bias):
    return Conv1dValid.apply(inputs, kernel, bias)


def total(x):
    return Sum.apply(x)


def softmax_cross_entropy(logits, target):
    return SoftmaxCrossEntropy.apply(logits, target=int(target))


def squared_l2(weights):
    weights = list(weights)
    if not weights:
        return Tensor(0.0)
    return SquaredL2.apply(*weights)


# =====================================================
# Finite-difference verification
# =====================================================

def grad_check(op, inputs, epsilon=1e-5):
    """Compare analytic gradients of ``sum(op(*inputs))`` with central differences.

    Returns the largest ``|analytic - numeric| / max(1, |analytic|, |numeric|)``
    over every entry of every input.
    """
    if not 0 < epsilon <= 1e-2:
        raise InputError(f"epsilon must lie in (0, 1e-2], got {epsilon}")
    name = getattr(op, '__name__', type(op).__name__)
    inputs = [as_tensor(x) for x in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None

    out = op(*inputs)
    if not np.all(np.isfinite(out.data)):
        raise NumericalError(name)
    out.backward(np.ones_like(out.data))

    def reduced():
        value = float(np.sum(op(*inputs).data))
        if not np.isfinite(value):
            raise NumericalError(name, 'non-finite value under perturbation')
        return value

    worst = 0.0
    with no_grad():
        for t in inputs:
            analytic = t.grad.reshape(-1) if t.grad is not None else np.zeros(t.data.size)
            flat = t.data.reshape(-1)
            for idx in range(flat.size):
                original = flat[idx]
                flat[idx] = original + epsilon
                plus = reduced()
                flat[idx] = original - epsilon
                minus = reduced()
                flat[idx] = original
                numeric = (plus - minus) / (2.0 * epsilon)
                a = analytic[idx]
                worst = max(worst, abs(a - numeric) / max(1.0, abs(a), abs(numeric)))
    return worst


# =====================================================
# Parameters and modules
# =====================================================

class Parameter:
    """A named, trainable tensor tagged with its unfreeze group."""

    __slots__ = ('name', 'tensor', 'group')

    def __init__(self, name, tensor, group):
        self.name = name
        self.tensor = tensor
        self.group = group

    @property
    def trainable(self):
        return self.tensor.requires_grad

    @trainable.setter
    def trainable(self, flag):
        self.tensor.requires_grad = bool(flag)
        if not flag:
            self.tensor.grad = None

    @property
    def value(self):
        return self.tensor.data

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.tensor.shape}, group={self.group!r})"


class Module:
    """Registry of parameters and child modules with dotted names."""

    def __init__(self):
        self._parameters = {}
        self._modules = {}

    def add_parameter(self, name, value, group):
        param = Parameter(name, Tensor(value, requires_grad=True), group)
        self._parameters[name] = param
        return param.tensor

    def add_module(self, name, module):
        self._modules[name] = module
        return module

    def named_parameters(self, prefix=''):
        for name, param in self._parameters.items():
            yield prefix + name, param
        for name, module in self._modules.items():
            yield from module.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [param for _, param in self.named_parameters()]

    def assign_names(self, prefix=''):
        for full_name, param in self.named_parameters(prefix):
            param.name = full_name

    def zero_grad(self):
        for param in self.parameters():
            param.tensor.grad = None

    def state_dict(self):
        return {name: param.value.copy() for name, param in self.named_parameters()}

    def load_state_dict(self, state, prefix='', strict=True):
        own = dict(self.named_parameters(prefix))
        if strict:
            missing = sorted(set(own) - set(state))
            if missing:
                raise LoadError(f"checkpoint lacks parameters: {', '.join(missing)}")
        mismatched = []
        for name, param in own.items():
            if name not in state:
                continue
            value = np.asarray(state[name], dtype=DTYPE)
            if value.shape != param.value.shape:
                mismatched.append(f"{name}: checkpoint {value.shape} vs model {param.value.shape}")
                continue
            param.tensor.data[...] = value
        if mismatched:
            raise LoadError('shape mismatch: ' + '; '.join(mismatched))


def uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


def glorot(rng, shape):
    fan_in, fan_out = shape[-1], shape[0]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)
