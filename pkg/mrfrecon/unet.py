"""
Copyright (C) 2024 The mrfrecon authors
This project uses an MIT style license - see README.md for details.

This file contains the U-Net that de-aliases the back-projected TSMI.
"""
# I M P O R T S ###############################################################

from dataclasses import dataclass

import numpy as np

from mrfrecon.exceptions import ValidationError
from mrfrecon.layers import Conv2d, InstanceNorm2d, LeakyReLU, MaxPool2d, Module, Sequential, Upsample
from mrfrecon.tensor import concat, pad2d

# C L A S S E S ###############################################################


@dataclass(frozen=True)
class UnetConfig:
    levels: int = 4
    base_channels: int = 32
    negative_slope: float = 0.2
    residual: bool = False

    def validate(self):
        if self.levels < 0 or self.base_channels < 1:
            raise ValidationError("U-Net needs levels >= 0 and base_channels >= 1, got {} and {}".format(
                self.levels, self.base_channels))
        if not 0 <= self.negative_slope < 1:
            raise ValidationError("negative slope must lie in [0, 1), got {}".format(self.negative_slope))
        return self


def double_conv(in_channels, out_channels, slope, rng):
    """
    Two 3x3 convolutions, each followed by instance normalization and a
    leaky rectifier.
    """
    return Sequential(
        Conv2d(in_channels, out_channels, 3, rng, padding=1),
        InstanceNorm2d(),
        LeakyReLU(slope),
        Conv2d(out_channels, out_channels, 3, rng, padding=1),
        InstanceNorm2d(),
        LeakyReLU(slope),
    )


class Unet(Module):
    """
    An encoder-decoder with a skip connection at every level. Each encoder
    level doubles the channel count and halves the image with max pooling;
    each decoder level upsamples, convolves and concatenates the matching
    encoder features. Inputs are zero padded to a multiple of 2 ** levels
    and the output is cropped back.
    """
    def __init__(self, channels, config, rng):
        super().__init__()
        config.validate()
        self.channels = channels
        self.config = config
        self.pool = MaxPool2d(2)
        widths = [config.base_channels * 2 ** level for level in range(config.levels + 1)]

        incoming = channels
        for level in range(config.levels):
            setattr(self, "down{}".format(level), double_conv(incoming, widths[level], config.negative_slope, rng))
            incoming = widths[level]
        self.bottom = double_conv(incoming, widths[config.levels], config.negative_slope, rng)
        for level in reversed(range(config.levels)):
            setattr(self, "up{}".format(level), Sequential(
                Upsample(2),
                Conv2d(widths[level + 1], widths[level], 3, rng, padding=1),
            ))
            setattr(self, "merge{}".format(level), double_conv(
                2 * widths[level], widths[level], config.negative_slope, rng))
        self.head = Conv2d(widths[0], channels, 1, rng)

    def forward(self, x):
        _, channels, height, width = x.shape
        if channels != self.channels:
            raise ValidationError("U-Net expects {} channels, got {}".format(self.channels, channels))
        multiple = 2 ** self.config.levels
        pad_h = -height % multiple
        pad_w = -width % multiple
        padding = ((pad_h // 2, pad_h - pad_h // 2), (pad_w // 2, pad_w - pad_w // 2))
        features = pad2d(x, padding) if pad_h or pad_w else x

        skips = []
        for level in range(self.config.levels):
            features = getattr(self, "down{}".format(level))(features)
            skips.append(features)
            features = self.pool(features)
        features = self.bottom(features)
        for level in reversed(range(self.config.levels)):
            features = getattr(self, "up{}".format(level))(features)
            features = concat([skips[level], features], axis=1)
            features = getattr(self, "merge{}".format(level))(features)
        out = self.head(features)

        top, left = padding[0][0], padding[1][0]
        if pad_h or pad_w:
            out = out[:, :, top:top + height, left:left + width]
        return out + x if self.config.residual else out


def count_parameters(module):
    return int(sum(np.prod(parameter.shape) for parameter in module.parameters()))

# E N D   O F   F I L E #######################################################
