"""
Copyright (C) 2024 The mrfrecon authors
This project uses an MIT style license - see README.md for details.

This file contains the Tensor class and the differentiable operations the
reconstruction networks are built from. Every operation records the tensors
it was computed from and a closure mapping the gradient of its output to
the gradients of its inputs; Tensor.backward replays that tape in reverse.
"""
# I M P O R T S ###############################################################

import numpy as np

from mrfrecon.exceptions import ValidationError

# C L A S S E S ###############################################################


class Tensor(object):
    """
    A real multidimensional array that may take part in reverse-mode
    differentiation. Leaf tensors created with requires_grad=True accumulate
    gradients in their grad attribute until zero_grad is called.
    """
    # Makes numpy defer to the reflected operators below
    __array_priority__ = 100

    def __init__(self, values, requires_grad=False, parents=(), backward=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = parents
        self._backward = backward

    def __repr__(self):
        return "Tensor(shape={}, requires_grad={})".format(self.shape, self.requires_grad)

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    def is_leaf(self):
        return self._backward is None

    def zero_grad(self):
        self.grad = None

    def detach(self):
        """
        Returns a tensor sharing these values but cut from the tape.
        """
        return Tensor(self.values)

    def item(self):
        if self.values.size != 1:
            raise ValidationError("item() needs a single element tensor, got shape {}".format(self.shape))
        return float(self.values.reshape(-1)[0])

    def backward(self, grad=None):
        """
        Propagates gradients from this tensor back to every leaf tensor
        that requires them.

        :param grad: the gradient of the final scalar with respect to this
            tensor; defaults to 1 for single element tensors
        """
        if not self.requires_grad:
            raise ValidationError("backward() called on a tensor that does not require grad")
        if grad is None:
            if self.values.size != 1:
                raise ValidationError("backward() without a gradient needs a scalar tensor")
            grad = np.ones_like(self.values)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.shape:
            raise ValidationError("gradient shape {} does not match tensor shape {}".format(grad.shape, self.shape))

        pending = {id(self): grad}
        for node in reversed(_topological_order(self)):
            node_grad = pending.pop(id(node), None)
            if node_grad is None:
                continue
            if node.is_leaf():
                node.grad = np.array(node_grad) if node.grad is None else node.grad + node_grad
                continue
            for parent, parent_grad in zip(node._parents, node._backward(node_grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pending[key] + parent_grad if key in pending else parent_grad

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

# F U N C T I O N S ###########################################################


def _topological_order(root):
    """
    Returns the tensors reachable from root that require gradients, each
    listed after all of its parents.
    """
    order = []
    visited = set()
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def as_tensor(value):
    """
    Wraps plain numbers and arrays as constant tensors.
    """
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(values, parents, backward):
    """
    Creates the output of an operation, recording it on the tape only when
    one of its inputs requires gradients.
    """
    if any(parent.requires_grad for parent in parents):
        return Tensor(values, requires_grad=True, parents=tuple(parents), backward=backward)
    return Tensor(values)


def _unbroadcast(grad, shape):
    """
    Sums a gradient over the axes numpy broadcasting expanded, so it matches
    the shape of the original operand.
    """
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)
    return _make(a.values + b.values, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        return _unbroadcast(grad, a.shape), _unbroadcast(-grad, b.shape)
    return _make(a.values - b.values, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        return _unbroadcast(grad * b.values, a.shape), _unbroadcast(grad * a.values, b.shape)
    return _make(a.values * b.values, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    values = a.values / b.values

    def backward(grad):
        return (
            _unbroadcast(grad / b.values, a.shape),
            _unbroadcast(-grad * values / b.values, b.shape),
        )
    return _make(values, (a, b), backward)


def power(a, exponent):
    """
    Raises a tensor to a constant exponent.
    """
    a = as_tensor(a)
    exponent = float(exponent)

    def backward(grad):
        return (grad * exponent * a.values ** (exponent - 1),)
    return _make(a.values ** exponent, (a,), backward)


def absolute(a):
    a = as_tensor(a)

    def backward(grad):
        return (grad * np.sign(a.values),)
    return _make(np.abs(a.values), (a,), backward)


def tensor_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def backward(grad):
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, a.shape),)
    return _make(np.sum(a.values, axis=axis, keepdims=keepdims), (a,), backward)


def tensor_mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tensor_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)

    def backward(grad):
        return (grad.reshape(a.shape),)
    return _make(a.values.reshape(shape), (a,), backward)


def transpose(a, axes=None):
    a = as_tensor(a)
    inverse = None if axes is None else np.argsort(axes)

    def backward(grad):
        return (np.transpose(grad, inverse),)
    return _make(np.transpose(a.values, axes), (a,), backward)


def getitem(a, key):
    """
    Indexes a tensor with basic numpy indexing (integers and slices).
    """
    a = as_tensor(a)

    def backward(grad):
        full = np.zeros_like(a.values)
        np.add.at(full, key, grad)
        return (full,)
    return _make(a.values[key], (a,), backward)


def pad2d(a, padding):
    """
    Zero pads the last two axes of a tensor.

    :param padding: ((top, bottom), (left, right))
    """
    a = as_tensor(a)
    (top, bottom), (left, right) = padding
    widths = [(0, 0)] * (a.ndim - 2) + [(top, bottom), (left, right)]
    height, width = a.shape[-2:]

    def backward(grad):
        return (grad[..., top:top + height, left:left + width],)
    return _make(np.pad(a.values, widths), (a,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(tensor) for tensor in tensors]
    sizes = [tensor.shape[axis] for tensor in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(grad):
        return tuple(np.split(grad, splits, axis=axis))
    return _make(np.concatenate([tensor.values for tensor in tensors], axis=axis), tensors, backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValidationError("cannot multiply shapes {} and {}".format(a.shape, b.shape))

    def backward(grad):
        return grad @ b.values.T, a.values.T @ grad
    return _make(a.values @ b.values, (a, b), backward)


def linear(x, weight, bias=None):
    """
    Computes x @ weight.T + bias for a batch of row vectors.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValidationError("linear layer expects input width {}, got shape {}".format(
            weight.shape[1] if weight.ndim == 2 else "?", x.shape))
    values = x.values @ weight.values.T
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        values = values + bias.values
        parents.append(bias)

    def backward(grad):
        grads = [grad @ weight.values, grad.T @ x.values]
        if bias is not None:
            grads.append(grad.sum(axis=0))
        return tuple(grads)
    return _make(values, parents, backward)


def relu(a):
    a = as_tensor(a)
    active = a.values > 0

    def backward(grad):
        return (grad * active,)
    return _make(np.where(active, a.values, 0.0), (a,), backward)


def leaky_relu(a, negative_slope=0.01):
    a = as_tensor(a)
    slope = np.where(a.values > 0, 1.0, negative_slope)

    def backward(grad):
        return (grad * slope,)
    return _make(a.values * slope, (a,), backward)


def sigmoid(a, scale=1.0):
    """
    A logistic sigmoid whose output range is stretched to (0, scale).
    """
    a = as_tensor(a)
    unit = 0.5 * (1.0 + np.tanh(0.5 * a.values))

    def backward(grad):
        return (grad * scale * unit * (1.0 - unit),)
    return _make(scale * unit, (a,), backward)


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """
    Two dimensional cross-correlation of an (N, C, H, W) input with an
    (O, C, kh, kw) kernel. The kernel is applied one tap at a time, each tap
    being a single matrix product over the channel axis.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ValidationError("conv2d cannot combine input {} with kernel {}".format(x.shape, weight.shape))
    batch, _, height, width = x.shape
    n_out, _, kernel_h, kernel_w = weight.shape
    padded = np.pad(x.values, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_h = (height + 2 * padding - kernel_h) // stride + 1
    out_w = (width + 2 * padding - kernel_w) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ValidationError("conv2d kernel {} larger than padded input {}".format(weight.shape, x.shape))

    def window(i, j):
        return (
            slice(None), slice(None),
            slice(i, i + stride * (out_h - 1) + 1, stride),
            slice(j, j + stride * (out_w - 1) + 1, stride),
        )

    values = np.zeros((batch, n_out, out_h, out_w))
    for i in range(kernel_h):
        for j in range(kernel_w):
            tap = np.tensordot(weight.values[:, :, i, j], padded[window(i, j)], axes=([1], [1]))
            values += tap.transpose(1, 0, 2, 3)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        values += bias.values.reshape(1, n_out, 1, 1)
        parents.append(bias)

    def backward(grad):
        grad_padded = np.zeros_like(padded)
        grad_weight = np.zeros_like(weight.values)
        for i in range(kernel_h):
            for j in range(kernel_w):
                region = window(i, j)
                grad_weight[:, :, i, j] = np.tensordot(grad, padded[region], axes=([0, 2, 3], [0, 2, 3]))
                grad_padded[region] += np.tensordot(grad, weight.values[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
        grads = [grad_padded[:, :, padding:padding + height, padding:padding + width], grad_weight]
        if bias is not None:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return tuple(grads)
    return _make(values, parents, backward)


def max_pool2d(x, kernel=2):
    """
    Non-overlapping max pooling over kernel x kernel windows. The spatial
    dimensions must be multiples of the kernel.
    """
    x = as_tensor(x)
    batch, channels, height, width = x.shape
    if height % kernel or width % kernel:
        raise ValidationError("max_pool2d needs spatial dims divisible by {}, got {}".format(kernel, x.shape))
    out_h, out_w = height // kernel, width // kernel
    windows = x.values.reshape(batch, channels, out_h, kernel, out_w, kernel)
    windows = windows.transpose(0, 1, 2, 4, 3, 5).reshape(batch, channels, out_h, out_w, kernel * kernel)
    winner = np.argmax(windows, axis=-1)[..., None]
    values = np.take_along_axis(windows, winner, axis=-1)[..., 0]

    def backward(grad):
        spread = np.zeros_like(windows)
        np.put_along_axis(spread, winner, grad[..., None], axis=-1)
        spread = spread.reshape(batch, channels, out_h, out_w, kernel, kernel).transpose(0, 1, 2, 4, 3, 5)
        return (spread.reshape(batch, channels, height, width),)
    return _make(values, (x,), backward)


def upsample_nearest2d(x, scale=2):
    x = as_tensor(x)
    batch, channels, height, width = x.shape

    def backward(grad):
        return (grad.reshape(batch, channels, height, scale, width, scale).sum(axis=(3, 5)),)
    return _make(x.values.repeat(scale, axis=2).repeat(scale, axis=3), (x,), backward)


def instance_norm2d(x, eps=1e-5):
    """
    Normalizes every channel of every sample to zero mean and unit variance
    over its spatial positions.
    """
    x = as_tensor(x)
    centred = x.values - x.values.mean(axis=(2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt((centred ** 2).mean(axis=(2, 3), keepdims=True) + eps)
    values = centred * inv_std

    def backward(grad):
        mean_grad = grad.mean(axis=(2, 3), keepdims=True)
        mean_proj = (grad * values).mean(axis=(2, 3), keepdims=True)
        return (inv_std * (grad - mean_grad - values * mean_proj),)
    return _make(values, (x,), backward)


def apply_linear(x, forward, adjoint):
    """
    Embeds a fixed real-linear map in the tape. The adjoint must be the
    transpose of forward with respect to the real inner product.

    :param x: the input tensor
    :param forward: function mapping an input array to an output array
    :param adjoint: function mapping an output-shaped array back to the input shape
    """
    x = as_tensor(x)

    def backward(grad):
        return (np.asarray(adjoint(grad), dtype=np.float64).reshape(x.shape),)
    return _make(np.asarray(forward(x.values), dtype=np.float64), (x,), backward)


def mse_loss(prediction, target, reduction="mean"):
    """
    Squared error between two tensors, averaged ("mean") or summed ("sum").
    """
    prediction, target = as_tensor(prediction), as_tensor(target)
    if prediction.shape != target.shape:
        raise ValidationError("mse_loss shapes differ: {} vs {}".format(prediction.shape, target.shape))
    residual = prediction.values - target.values
    scale = 1.0 / residual.size if reduction == "mean" else 1.0

    def backward(grad):
        step = 2.0 * scale * grad * residual
        return step, -step
    return _make(scale * np.sum(residual ** 2), (prediction, target), backward)


def mae_loss(prediction, target, reduction="mean"):
    """
    Absolute error between two tensors, averaged ("mean") or summed ("sum").
    """
    prediction, target = as_tensor(prediction), as_tensor(target)
    if prediction.shape != target.shape:
        raise ValidationError("mae_loss shapes differ: {} vs {}".format(prediction.shape, target.shape))
    residual = prediction.values - target.values
    scale = 1.0 / residual.size if reduction == "mean" else 1.0

    def backward(grad):
        step = scale * grad * np.sign(residual)
        return step, -step
    return _make(scale * np.sum(np.abs(residual)), (prediction, target), backward)


def numerical_gradient(function, tensor, step=1e-4):
    """
    Estimates d function() / d tensor by central finite differences,
    perturbing the tensor's values in place one element at a time.

    :param function: a callable without arguments returning a scalar Tensor or number
    :param tensor: the tensor to differentiate with respect to
    :param step: the finite difference step
    :return: an array shaped like the tensor
    """
    tensor.values = np.ascontiguousarray(tensor.values)
    flat = tensor.values.reshape(-1)
    estimate = np.zeros(flat.size)
    for index in range(flat.size):
        original = flat[index]
        flat[index] = original + step
        upper = _scalar(function())
        flat[index] = original - step
        lower = _scalar(function())
        flat[index] = original
        estimate[index] = (upper - lower) / (2.0 * step)
    return estimate.reshape(tensor.shape)


def gradient_error(analytic, numeric):
    """
    Largest absolute difference between two gradients, relative to the
    largest gradient entry.
    """
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def _scalar(value):
    return value.item() if isinstance(value, Tensor) else float(value)

# E N D   O F   F I L E #######################################################
