"""
Copyright (C) 2024 The mrfrecon authors
This project uses an MIT style license - see README.md for details.

This file contains the non-uniform FFT: the image is deapodized, zero padded
onto an oversampled grid and transformed with an FFT, then Kaiser-Bessel
interpolation evaluates the spectrum at arbitrary k-space coordinates. The
interpolation weights are stored once as a sparse matrix, so the adjoint is
simply its transpose followed by the inverse of every other step.
"""
# I M P O R T S ###############################################################

import numpy as np
import scipy.fft
import scipy.sparse

from scipy.special import i0

from mrfrecon.exceptions import ValidationError

# C O N S T A N T S ###########################################################

OVERSAMPLING = 2.0
KERNEL_WIDTH = 6

# C L A S S E S ###############################################################


class NufftOperator(object):
    """
    A planned 2D NUFFT for a fixed image shape and a fixed set of k-space
    coordinates. Coordinates are in cycles per pixel, within [-0.5, 0.5);
    column 0 is kx (along image columns) and column 1 is ky (along rows).
    Pixel (row, col) sits at the centred position (col - W//2, row - H//2).
    """
    def __init__(self, shape, coords, oversampling=OVERSAMPLING, kernel_width=KERNEL_WIDTH):
        height, width = (int(size) for size in shape)
        if height < 1 or width < 1:
            raise ValidationError("image shape must be positive, got {}".format(shape))
        coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
        if np.any(coords < -0.5) or np.any(coords >= 0.5):
            raise ValidationError("k-space coordinates must lie in [-0.5, 0.5)")
        if oversampling < 1 or kernel_width < 1:
            raise ValidationError("oversampling and kernel width must be at least 1")

        self.shape = (height, width)
        self.grid_shape = (int(np.ceil(oversampling * height)), int(np.ceil(oversampling * width)))
        self.n_samples = coords.shape[0]
        self.kernel_width = kernel_width
        self.beta = kaiser_bessel_beta(kernel_width, oversampling)

        rows = deapodization(height, self.grid_shape[0], kernel_width, self.beta)
        cols = deapodization(width, self.grid_shape[1], kernel_width, self.beta)
        self._scale = 1.0 / np.outer(rows, cols)
        self._interp = self._plan(coords)
        self._interp_adjoint = self._interp.T.tocsr()

    def _plan(self, coords):
        """
        Builds the sparse matrix holding the kernel weights between every
        sample and its kernel_width x kernel_width nearest grid points.
        """
        grid_h, grid_w = self.grid_shape
        width = self.kernel_width
        offsets = np.arange(width)

        def axis_weights(positions, size):
            first = np.floor(positions - width / 2.0).astype(np.int64) + 1
            points = first[:, None] + offsets[None, :]
            weights = kaiser_bessel(positions[:, None] - points, width, self.beta)
            return points % size, weights

        row_index, row_weight = axis_weights(coords[:, 1] * grid_h, grid_h)
        col_index, col_weight = axis_weights(coords[:, 0] * grid_w, grid_w)

        columns = row_index[:, :, None] * grid_w + col_index[:, None, :]
        values = row_weight[:, :, None] * col_weight[:, None, :]
        samples = np.repeat(np.arange(self.n_samples), width * width)
        return scipy.sparse.csr_matrix(
            (values.ravel(), (samples, columns.ravel())),
            shape=(self.n_samples, grid_h * grid_w),
        )

    def _check_image(self, image):
        image = np.asarray(image, dtype=np.complex128)
        if image.shape[:2] != self.shape or image.ndim not in (2, 3):
            raise ValidationError("expected image of shape {}, got {}".format(self.shape, image.shape))
        return image

    def forward(self, image):
        """
        Evaluates the Fourier transform of one or several images at the
        planned coordinates.

        :param image: complex array (H, W) or (H, W, C)
        :return: complex array (M,) or (M, C)
        """
        image = self._check_image(image)
        single = image.ndim == 2
        if single:
            image = image[..., None]
        height, width = self.shape
        grid_h, grid_w = self.grid_shape

        grid = np.zeros((grid_h, grid_w, image.shape[2]), dtype=np.complex128)
        grid[:height, :width] = image * self._scale[..., None]
        grid = np.roll(grid, (-(height // 2), -(width // 2)), axis=(0, 1))
        spectrum = scipy.fft.fft2(grid, axes=(0, 1))
        samples = self._interp @ spectrum.reshape(grid_h * grid_w, -1)
        return samples[:, 0] if single else samples

    def adjoint(self, samples):
        """
        Applies the exact adjoint of forward.

        :param samples: complex array (M,) or (M, C)
        :return: complex array (H, W) or (H, W, C)
        """
        samples = np.asarray(samples, dtype=np.complex128)
        if samples.shape[0] != self.n_samples or samples.ndim not in (1, 2):
            raise ValidationError("expected {} samples, got shape {}".format(self.n_samples, samples.shape))
        single = samples.ndim == 1
        if single:
            samples = samples[:, None]
        height, width = self.shape
        grid_h, grid_w = self.grid_shape

        spectrum = (self._interp_adjoint @ samples).reshape(grid_h, grid_w, -1)
        grid = scipy.fft.ifft2(spectrum, axes=(0, 1), norm="forward")
        grid = np.roll(grid, (height // 2, width // 2), axis=(0, 1))
        image = grid[:height, :width] * self._scale[..., None]
        return image[..., 0] if single else image

# F U N C T I O N S ###########################################################


def kaiser_bessel_beta(kernel_width, oversampling):
    """
    Returns the Kaiser-Bessel shape parameter that puts the first aliased
    sidelobe at the edge of the image for the given width and oversampling.
    """
    return np.pi * np.sqrt(
        (kernel_width / oversampling) ** 2 * (oversampling - 0.5) ** 2 - 0.8
    )


def kaiser_bessel(distance, kernel_width, beta):
    """
    Evaluates the Kaiser-Bessel kernel at distances measured in grid points.
    The kernel vanishes for |distance| >= kernel_width / 2.
    """
    distance = np.asarray(distance, dtype=np.float64)
    argument = 1.0 - (2.0 * distance / kernel_width) ** 2
    values = np.zeros_like(distance)
    inside = argument > 0
    values[inside] = i0(beta * np.sqrt(argument[inside])) / kernel_width
    return values


def kaiser_bessel_transform(frequency, kernel_width, beta):
    """
    Evaluates the continuous Fourier transform of kaiser_bessel at the given
    frequencies, in cycles per grid point.
    """
    frequency = np.asarray(frequency, dtype=np.float64)
    argument = np.sqrt(beta ** 2 - (np.pi * kernel_width * frequency) ** 2 + 0j)
    values = np.ones_like(argument)
    nonzero = argument != 0
    values[nonzero] = np.sinh(argument[nonzero]) / argument[nonzero]
    return values.real


def deapodization(size, grid_size, kernel_width, beta):
    """
    Returns the kernel transform at every centred pixel index of one image
    axis. Dividing the image by it undoes the apodization that gridding
    introduces.
    """
    positions = np.arange(size) - size // 2
    return kaiser_bessel_transform(positions / float(grid_size), kernel_width, beta)


def nufft_forward(image, coords):
    """
    Evaluates the 2D DFT of an image at non-uniform k-space coordinates.

    :param image: complex array (H, W)
    :param coords: real array (M, 2) of (kx, ky) in cycles per pixel
    :return: complex array (M,)
    """
    image = np.asarray(image)
    return NufftOperator(image.shape[:2], coords).forward(image)


def nufft_adjoint(samples, coords, shape):
    """
    Applies the adjoint of nufft_forward.

    :param samples: complex array (M,)
    :param coords: real array (M, 2) of (kx, ky) in cycles per pixel
    :param shape: the (H, W) image shape
    :return: complex array (H, W)
    """
    return NufftOperator(shape, coords).adjoint(samples)


def direct_dft(image, coords):
    """
    Evaluates the same transform as nufft_forward by explicit summation.
    Only practical for small images; used as a reference.
    """
    image = np.asarray(image, dtype=np.complex128)
    height, width = image.shape
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    cols = np.arange(width) - width // 2
    rows = np.arange(height) - height // 2
    phase_x = np.exp(-2j * np.pi * np.outer(coords[:, 0], cols))
    phase_y = np.exp(-2j * np.pi * np.outer(coords[:, 1], rows))
    return np.einsum("mr,rc,mc->m", phase_y, image, phase_x)

# E N D   O F   F I L E #######################################################
