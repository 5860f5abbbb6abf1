"""
Copyright (C) 2024 The mrfrecon authors
This project uses an MIT style license - see README.md for details.

This file contains the acquisition model: spiral trajectories, coil
sensitivity maps, the subspace forward operator A mapping a time series of
magnetization images (TSMI) to multi-coil k-space and its adjoint, and
k-space simulation from quantitative maps.
"""
# I M P O R T S ###############################################################

import logging

from collections import namedtuple

import numpy as np

from mrfrecon.container import KSPACE_MAGIC, TRAJECTORY_MAGIC, read_container, require_sections, write_container
from mrfrecon.epg import check_relaxation, epg_fisp_batch
from mrfrecon.exceptions import ValidationError
from mrfrecon.nufft import NufftOperator

# C O N S T A N T S ###########################################################

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))

# Width of the Gaussian coil profiles relative to the larger image side
COIL_PROFILE_WIDTH = 0.4

logger = logging.getLogger(__name__)

Trajectory = namedtuple('Trajectory', ['coords', 'dcf'])

KSpaceData = namedtuple('KSpaceData', ['samples'])

# C L A S S E S ###############################################################


class CoilMaps(namedtuple('CoilMaps', ['maps', 'height', 'width'])):
    """
    Complex sensitivities of c receive coils, one row of N pixels per coil.
    """
    __slots__ = ()

    @property
    def n_coils(self):
        return self.maps.shape[0]

    def images(self):
        return self.maps.reshape(self.n_coils, self.height, self.width)


class Tsmi(namedtuple('Tsmi', ['data', 'height', 'width'])):
    """
    A time series of magnetization images in the K-dimensional subspace:
    one row of K complex coefficients per pixel, pixels in row-major order.

    Networks see a TSMI as a real (1, 2K, H, W) array whose first K channels
    are the real parts and last K channels the imaginary parts.
    """
    __slots__ = ()

    def __new__(cls, data, height, width):
        data = np.asarray(data, dtype=np.complex128)
        if data.ndim != 2 or data.shape[0] != height * width:
            raise ValidationError("TSMI data of shape {} does not fit a {}x{} image".format(
                data.shape, height, width))
        return super().__new__(cls, data, int(height), int(width))

    @property
    def n_channels(self):
        return self.data.shape[1]

    def images(self):
        """
        Returns the TSMI as a complex (H, W, K) array.
        """
        return self.data.reshape(self.height, self.width, self.n_channels)

    def norm(self):
        return float(np.linalg.norm(self.data))

    def to_real(self):
        """
        Returns the pixel vectors as a real (N, 2K) array.
        """
        return np.concatenate([self.data.real, self.data.imag], axis=1)

    def to_channels(self):
        """
        Returns the TSMI as a real (1, 2K, H, W) array.
        """
        return self.to_real().T.reshape(1, 2 * self.n_channels, self.height, self.width)

    @classmethod
    def from_real(cls, array, height, width):
        array = np.asarray(array, dtype=np.float64)
        k = array.shape[1] // 2
        return cls(array[:, :k] + 1j * array[:, k:], height, width)

    @classmethod
    def from_channels(cls, array):
        array = np.asarray(array, dtype=np.float64)
        _, channels, height, width = array.shape
        return cls.from_real(array.reshape(channels, height * width).T, height, width)


class AcquisitionOperator(object):
    """
    The forward operator A for a fixed trajectory, coil set and temporal
    basis. One NUFFT plan covering the coordinates of all L frames is shared
    by every coil and every subspace channel.
    """
    def __init__(self, traj, coils, basis):
        n_frames, n_samples, _ = traj.coords.shape
        if basis.n_timeframes != n_frames:
            raise ValidationError("basis has {} timeframes, trajectory has {}".format(
                basis.n_timeframes, n_frames))
        self.traj = traj
        self.coils = coils
        self.v = basis.v
        self.n_frames = n_frames
        self.n_samples = n_samples
        self.nufft = NufftOperator((coils.height, coils.width), traj.coords.reshape(-1, 2))

    @property
    def data_shape(self):
        return self.coils.n_coils, self.n_frames, self.n_samples

    def _check_tsmi(self, x):
        if (x.height, x.width) != (self.coils.height, self.coils.width) or x.n_channels != self.v.shape[1]:
            raise ValidationError("TSMI {}x{}x{} does not match operator {}x{}x{}".format(
                x.height, x.width, x.n_channels, self.coils.height, self.coils.width, self.v.shape[1]))

    def forward(self, x):
        """
        Maps a TSMI to k-space: for every coil, the coil-weighted channel
        images are transformed once and each frame's samples are combined
        with the conjugate basis row of that frame.

        :param x: the Tsmi to transform
        :return: KSpaceData of shape (c, L, M)
        """
        self._check_tsmi(x)
        images = x.images()
        samples = np.empty(self.data_shape, dtype=np.complex128)
        for index, coil in enumerate(self.coils.images()):
            spectra = self.nufft.forward(images * coil[..., None])
            spectra = spectra.reshape(self.n_frames, self.n_samples, -1)
            samples[index] = np.einsum("lmk,lk->lm", spectra, self.v.conj())
        return KSpaceData(samples)

    def adjoint(self, y):
        """
        Applies the exact adjoint of forward.

        :param y: KSpaceData of shape (c, L, M)
        :return: a Tsmi
        """
        if y.samples.shape != self.data_shape:
            raise ValidationError("expected k-space of shape {}, got {}".format(self.data_shape, y.samples.shape))
        k = self.v.shape[1]
        images = np.zeros((self.coils.height, self.coils.width, k), dtype=np.complex128)
        for index, coil in enumerate(self.coils.images()):
            weighted = y.samples[index][:, :, None] * self.v[:, None, :]
            images += np.conj(coil)[..., None] * self.nufft.adjoint(weighted.reshape(-1, k))
        return Tsmi(images.reshape(-1, k), self.coils.height, self.coils.width)

    def back_projection(self, y, preconditioned=False):
        """
        Returns (||y|| / ||A A^H y||) A^H y. When preconditioned, the
        density compensation weights are applied to y before A^H.
        """
        if not np.any(y.samples):
            raise ValidationError("cannot back-project zero k-space data")
        data = y.samples * self.traj.dcf[None] if preconditioned else y.samples
        projection = self.adjoint(KSpaceData(data))
        denominator = np.linalg.norm(self.forward(projection).samples)
        if denominator == 0:
            raise ValidationError("A A^H y vanishes, the operator or data is degenerate")
        scale = np.linalg.norm(y.samples) / denominator
        return Tsmi(projection.data * scale, projection.height, projection.width)

# F U N C T I O N S ###########################################################


def make_spiral_trajectory(height, width, n_timeframes, samples_per_frame, density_exponent=2.0, rotations=None):
    """
    Builds one variable-density Archimedean spiral arm and rotates it by
    the golden angle from frame to frame. Along the arm, the radius grows as
    s ** density_exponent for s in [0, 1), reaching at most 0.5 cycles per
    pixel. The density compensation weights are the radius times the local
    arc spacing, normalized to mean 1.

    :param height: the image height in pixels
    :param width: the image width in pixels
    :param n_timeframes: the number of frames L
    :param samples_per_frame: the number of samples M per frame
    :param density_exponent: the variable density exponent, at least 1
    :param rotations: the number of turns of the arm, by default height // 8
    :return: a Trajectory with coords (L, M, 2) and dcf (L, M)
    """
    if samples_per_frame < 1 or n_timeframes < 1:
        raise ValidationError("expected L >= 1 and M >= 1, got L={} M={}".format(n_timeframes, samples_per_frame))
    if density_exponent < 1:
        raise ValidationError("density exponent must be at least 1, got {}".format(density_exponent))
    if rotations is None:
        rotations = max(1, max(height, width) // 8)
    if int(rotations) != rotations or rotations < 1:
        raise ValidationError("rotations must be a positive integer, got {}".format(rotations))

    step = 1.0 / samples_per_frame
    arc = np.arange(samples_per_frame) * step
    radius = 0.5 * arc ** density_exponent
    angle = 2 * np.pi * rotations * arc

    if samples_per_frame == 1:
        dcf = np.ones(1)
    else:
        middle = arc + step / 2
        middle_radius = 0.5 * middle ** density_exponent
        radial_speed = 0.5 * density_exponent * middle ** (density_exponent - 1)
        angular_speed = 2 * np.pi * rotations * middle_radius
        dcf = middle_radius * np.hypot(radial_speed, angular_speed) * step
        dcf = dcf / dcf.mean()

    frame_angles = GOLDEN_ANGLE * np.arange(n_timeframes)
    total = angle[None, :] + frame_angles[:, None]
    coords = np.stack([radius * np.cos(total), radius * np.sin(total)], axis=-1)
    # Round-off must not push a sample onto +0.5
    coords = np.clip(coords, -0.5, np.nextafter(0.5, 0))
    return Trajectory(coords, np.tile(dcf, (n_timeframes, 1)))


def make_coil_maps(height, width, n_coils=1):
    """
    Builds smooth Gaussian coil profiles centred around the image, each with
    its own constant phase, normalized so their sum of squares is 1.

    :param height: the image height in pixels
    :param width: the image width in pixels
    :param n_coils: the number of coils c
    :return: CoilMaps
    """
    if n_coils < 1:
        raise ValidationError("expected at least one coil, got {}".format(n_coils))
    if n_coils == 1:
        return CoilMaps(np.ones((1, height * width), dtype=np.complex128), height, width)

    rows, cols = np.meshgrid(np.arange(height) - height / 2.0, np.arange(width) - width / 2.0, indexing="ij")
    sigma = COIL_PROFILE_WIDTH * max(height, width)
    placement = 2 * np.pi * np.arange(n_coils) / n_coils
    maps = []
    for angle in placement:
        centre_row = 0.5 * height * np.sin(angle)
        centre_col = 0.5 * width * np.cos(angle)
        distance = (rows - centre_row) ** 2 + (cols - centre_col) ** 2
        maps.append(np.exp(-distance / (2 * sigma ** 2)) * np.exp(1j * angle))
    maps = np.array(maps).reshape(n_coils, -1)
    maps /= np.sqrt(np.sum(np.abs(maps) ** 2, axis=0, keepdims=True))
    return CoilMaps(maps, height, width)


def forward_A(x, traj, coils, basis):
    """
    Applies the acquisition operator A to a TSMI.
    """
    return AcquisitionOperator(traj, coils, basis).forward(x)


def adjoint_A(y, traj, coils, basis):
    """
    Applies the adjoint A^H of the acquisition operator to k-space data.
    """
    return AcquisitionOperator(traj, coils, basis).adjoint(y)


def scaled_back_projection(y, traj, coils, basis, preconditioned=False):
    """
    Computes the initial TSMI x0 = (||y|| / ||A A^H y||) A^H y, so that
    ||A x0|| = ||y||.
    """
    return AcquisitionOperator(traj, coils, basis).back_projection(y, preconditioned)


def ground_truth_tsmi(qmaps, seq, basis, height, width):
    """
    Builds the TSMI of quantitative maps: every pixel is PD times the
    compressed fingerprint of its (T1, T2). Each distinct (T1, T2) pair is
    simulated once and pixels with zero PD are left empty.

    :param qmaps: TissueParams of per-pixel arrays
    :param seq: the SequenceParams to simulate
    :param basis: the SvdBasis to compress with
    :param height: the image height
    :param width: the image width
    :return: a Tsmi
    """
    t1 = np.asarray(qmaps.t1_ms, dtype=np.float64).ravel()
    t2 = np.asarray(qmaps.t2_ms, dtype=np.float64).ravel()
    pd = np.asarray(qmaps.pd, dtype=np.complex128).ravel()
    if not t1.size == t2.size == pd.size == height * width:
        raise ValidationError("maps do not match a {}x{} image".format(height, width))
    if basis.n_timeframes != seq.n_timeframes:
        raise ValidationError("basis has {} timeframes, sequence has {}".format(
            basis.n_timeframes, seq.n_timeframes))
    if not np.all(np.isfinite(pd)):
        raise ValidationError("PD values must be finite")

    data = np.zeros((height * width, basis.k), dtype=np.complex128)
    active = pd != 0
    if np.any(active):
        check_relaxation(t1[active], t2[active])
        pairs, inverse = np.unique(np.stack([t1[active], t2[active]], axis=1), axis=0, return_inverse=True)
        logger.debug("simulating %d distinct tissues", pairs.shape[0])
        compressed = epg_fisp_batch(pairs[:, 0], pairs[:, 1], seq) @ basis.v
        data[active] = pd[active, None] * compressed[inverse.ravel()]
    return Tsmi(data, height, width)


def add_complex_noise(samples, snr_db, rng):
    """
    Adds i.i.d. circular complex Gaussian noise so that the expected ratio
    of signal norm to noise norm is snr_db decibels.

    :param samples: the complex noiseless samples
    :param snr_db: the target SNR in dB, positive or infinite
    :param rng: a numpy Generator
    :return: a noisy copy of samples
    """
    if not snr_db > 0:
        raise ValidationError("SNR must be positive or infinite, got {}".format(snr_db))
    samples = np.asarray(samples, dtype=np.complex128)
    if np.isinf(snr_db):
        return samples.copy()
    sigma = np.linalg.norm(samples) / (10 ** (snr_db / 20.0) * np.sqrt(samples.size))
    noise = rng.standard_normal(samples.shape) + 1j * rng.standard_normal(samples.shape)
    return samples + (sigma / np.sqrt(2.0)) * noise


def simulate_kspace(qmaps, seq, traj, coils, basis, snr_db, rng_seed):
    """
    Simulates the measured k-space of quantitative maps.

    :param qmaps: TissueParams of per-pixel arrays
    :param seq: the SequenceParams to simulate
    :param traj: the Trajectory
    :param coils: the CoilMaps
    :param basis: the SvdBasis
    :param snr_db: the SNR in dB, or inf for noiseless data
    :param rng_seed: the seed of the noise generator
    :return: KSpaceData
    """
    if not snr_db > 0:
        raise ValidationError("SNR must be positive or infinite, got {}".format(snr_db))
    x = ground_truth_tsmi(qmaps, seq, basis, coils.height, coils.width)
    clean = AcquisitionOperator(traj, coils, basis).forward(x)
    rng = np.random.default_rng(rng_seed)
    return KSpaceData(add_complex_noise(clean.samples, snr_db, rng))


def save_trajectory(filename, traj):
    n_frames, n_samples, _ = traj.coords.shape
    write_container(filename, TRAJECTORY_MAGIC, (n_frames, n_samples), dict(coords=traj.coords, dcf=traj.dcf))


def load_trajectory(filename):
    container = read_container(filename, TRAJECTORY_MAGIC)
    require_sections(container, ["coords", "dcf"])
    return Trajectory(container.sections["coords"], container.sections["dcf"])


def save_kspace(filename, y, coils):
    """
    Writes k-space data together with the coil maps it was acquired with.
    """
    sections = dict(
        samples=y.samples,
        coil_maps=coils.maps,
        image_shape=np.array([coils.height, coils.width], dtype=np.float64),
    )
    write_container(filename, KSPACE_MAGIC, y.samples.shape, sections)


def load_kspace(filename):
    """
    Reads k-space data written by save_kspace.

    :return: a tuple (KSpaceData, CoilMaps)
    """
    container = read_container(filename, KSPACE_MAGIC)
    require_sections(container, ["samples", "coil_maps", "image_shape"])
    height, width = (int(size) for size in container.sections["image_shape"])
    coils = CoilMaps(container.sections["coil_maps"].astype(np.complex128), height, width)
    return KSpaceData(container.sections["samples"].astype(np.complex128)), coils

# E N D   O F   F I L E #######################################################
