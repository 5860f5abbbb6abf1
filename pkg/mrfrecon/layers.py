"""
Copyright (C) 2024 The mrfrecon authors
This project uses an MIT style license - see README.md for details.

This file contains the network building blocks: a Module base class that
tracks parameters and sub-modules, the layers the U-Net and the Bloch
autoencoder are made of, and checkpoint persistence.
"""
# I M P O R T S ###############################################################

import numpy as np

from mrfrecon.container import MODEL_MAGIC, read_container, write_container
from mrfrecon.exceptions import ValidationError
from mrfrecon.tensor import (
    Tensor, conv2d, instance_norm2d, leaky_relu, linear, max_pool2d, relu,
    sigmoid, upsample_nearest2d
)

# C L A S S E S ###############################################################


class Module(object):
    """
    Base class of every layer and network. Tensor attributes are registered
    as parameters and Module attributes as sub-modules, in assignment order.
    """
    def __init__(self):
        object.__setattr__(self, "_parameters", dict())
        object.__setattr__(self, "_modules", dict())

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args):
        return self.forward(*args)

    def forward(self, *args):
        raise NotImplementedError

    def named_parameters(self, prefix=""):
        """
        Yields (dotted name, parameter) pairs of this module and all of its
        sub-modules.
        """
        for name, parameter in self._parameters.items():
            yield prefix + name, parameter
        for name, module in self._modules.items():
            for item in module.named_parameters(prefix + name + "."):
                yield item

    def parameters(self):
        return [parameter for _, parameter in self.named_parameters()]

    def zero_grad(self):
        for parameter in self.parameters():
            parameter.zero_grad()

    def freeze(self):
        """
        Stops gradients from being computed for every parameter.
        """
        for parameter in self.parameters():
            parameter.requires_grad = False
            parameter.grad = None
        return self

    def state_dict(self):
        return {name: parameter.values.copy() for name, parameter in self.named_parameters()}

    def load_state_dict(self, state):
        """
        Copies parameter values from a mapping produced by state_dict.
        """
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            raise ValidationError("state does not match module: missing {} unexpected {}".format(missing, unexpected))
        for name, parameter in own.items():
            values = np.asarray(state[name], dtype=np.float64)
            if values.shape != parameter.shape:
                raise ValidationError("parameter [{}] has shape {}, state has {}".format(
                    name, parameter.shape, values.shape))
            parameter.values = values.copy()


class Sequential(Module):
    """
    Chains layers, registering each under its position.
    """
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)
        for index, layer in enumerate(layers):
            setattr(self, str(index), layer)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


class Linear(Module):
    def __init__(self, in_features, out_features, rng):
        super().__init__()
        self.weight = kaiming_uniform((out_features, in_features), in_features, rng)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    def forward(self, x):
        return linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, rng, stride=1, padding=0):
        super().__init__()
        fan_in = in_channels * kernel_size * kernel_size
        self.stride = stride
        self.padding = padding
        self.weight = kaiming_uniform((out_channels, in_channels, kernel_size, kernel_size), fan_in, rng)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True)

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class InstanceNorm2d(Module):
    def __init__(self, eps=1e-5):
        super().__init__()
        self.eps = eps

    def forward(self, x):
        return instance_norm2d(x, self.eps)


class ReLU(Module):
    def forward(self, x):
        return relu(x)


class LeakyReLU(Module):
    def __init__(self, negative_slope=0.2):
        super().__init__()
        self.negative_slope = negative_slope

    def forward(self, x):
        return leaky_relu(x, self.negative_slope)


class ScaledSigmoid(Module):
    """
    A sigmoid with output range (0, scale).
    """
    def __init__(self, scale=1.0):
        super().__init__()
        self.scale = scale

    def forward(self, x):
        return sigmoid(x, self.scale)


class MaxPool2d(Module):
    def __init__(self, kernel=2):
        super().__init__()
        self.kernel = kernel

    def forward(self, x):
        return max_pool2d(x, self.kernel)


class Upsample(Module):
    def __init__(self, scale=2):
        super().__init__()
        self.scale = scale

    def forward(self, x):
        return upsample_nearest2d(x, self.scale)

# F U N C T I O N S ###########################################################


def kaiming_uniform(shape, fan_in, rng):
    """
    Draws initial weights uniformly from +/- sqrt(6 / fan_in), the He
    initialization for layers followed by rectifiers.
    """
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def save_checkpoint(filename, modules, step=0):
    """
    Writes the parameters of named modules to an MRFM container. Sections
    are named "<module>.<parameter>".

    :param filename: the name of the file to write
    :param modules: a mapping of module name to Module
    :param step: the training step the parameters belong to
    """
    sections = dict()
    for prefix, module in modules.items():
        for name, values in module.state_dict().items():
            sections["{}.{}".format(prefix, name)] = values
    write_container(filename, MODEL_MAGIC, (step, len(sections)), sections)


def load_checkpoint(filename, modules):
    """
    Loads parameters written by save_checkpoint into the named modules.

    :param filename: the name of the file to read
    :param modules: a mapping of module name to Module, built with the same shapes
    :return: the training step stored in the checkpoint
    """
    container = read_container(filename, MODEL_MAGIC)
    for prefix, module in modules.items():
        start = prefix + "."
        state = {name[len(start):]: values for name, values in container.sections.items() if name.startswith(start)}
        module.load_state_dict(state)
    return container.dims[0]

# E N D   O F   F I L E #######################################################
