"""
Copyright (C) 2024 The mrfrecon authors
This project uses an MIT style license - see README.md for details.

This file contains the ADAM optimizer.
"""
# I M P O R T S ###############################################################

import numpy as np

from mrfrecon.exceptions import DivergenceError, ValidationError

# C L A S S E S ###############################################################


class AdamState(object):
    """
    The hyper-parameters and running moment estimates of an ADAM optimizer.
    Moment arrays are created lazily on the first step.
    """
    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, epsilon=1e-8):
        if lr <= 0:
            raise ValidationError("learning rate must be positive, got {}".format(lr))
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValidationError("ADAM betas must lie in [0, 1)")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step = 0
        self.first = None
        self.second = None


class Adam(object):
    """
    Applies adam_step to the gradients accumulated in a list of tensors.
    """
    def __init__(self, parameters, lr=1e-4, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.parameters = list(parameters)
        self.state = AdamState(lr, beta1, beta2, epsilon)

    def zero_grad(self):
        for parameter in self.parameters:
            parameter.zero_grad()

    def step(self):
        grads = [
            np.zeros_like(parameter.values) if parameter.grad is None else parameter.grad
            for parameter in self.parameters
        ]
        adam_step([parameter.values for parameter in self.parameters], grads, self.state)

# F U N C T I O N S ###########################################################


def adam_step(params, grads, state):
    """
    Performs one bias-corrected ADAM update of the parameter arrays, in
    place.

    :param params: a list of float arrays to update
    :param grads: the gradients, one per parameter array
    :param state: the AdamState, updated in place
    :return: the state
    """
    if len(params) != len(grads):
        raise ValidationError("got {} parameters but {} gradients".format(len(params), len(grads)))
    for index, grad in enumerate(grads):
        if not np.all(np.isfinite(grad)):
            raise DivergenceError("non-finite gradient for parameter {} ({} bad entries)".format(
                index, int(np.sum(~np.isfinite(grad)))))
    if state.first is None:
        state.first = [np.zeros_like(param) for param in params]
        state.second = [np.zeros_like(param) for param in params]

    state.step += 1
    first_correction = 1.0 - state.beta1 ** state.step
    second_correction = 1.0 - state.beta2 ** state.step
    for param, grad, first, second in zip(params, grads, state.first, state.second):
        first *= state.beta1
        first += (1.0 - state.beta1) * grad
        second *= state.beta2
        second += (1.0 - state.beta2) * grad ** 2
        param -= state.lr * (first / first_correction) / (np.sqrt(second / second_correction) + state.epsilon)
    return state

# E N D   O F   F I L E #######################################################
