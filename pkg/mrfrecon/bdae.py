"""
Copyright (C) 2024 The mrfrecon authors
This project uses an MIT style license - see README.md for details.

This file contains the Bloch denoising autoencoder: an encoder MLP mapping
normalized pixel fingerprints to (T1, T2), a decoder MLP mapping (T1, T2)
back to compressed fingerprints, their supervised pretraining on the
dictionary, and the projection of a TSMI onto Bloch-consistent
fingerprints with an analytically solved proton density.
"""
# I M P O R T S ###############################################################

import logging

from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from tqdm import tqdm

from mrfrecon.acquisition import Tsmi
from mrfrecon.epg import TissueParams
from mrfrecon.exceptions import DivergenceError, ValidationError
from mrfrecon.layers import Linear, Module, ReLU, ScaledSigmoid, Sequential
from mrfrecon.optim import Adam
from mrfrecon.tensor import Tensor, concat, mae_loss, mse_loss

# C O N S T A N T S ###########################################################

# Network inputs and outputs carry T1 / T1_SCALE and T2 / T2_SCALE
T1_SCALE = 3000.0
T2_SCALE = 300.0

# The encoder output range, in scaled units
ENCODER_RANGE = 1.5

HIDDEN_WIDTH = 300

# Guards norms of all-zero vectors
TINY = 1e-30

logger = logging.getLogger(__name__)

AtomReport = namedtuple('AtomReport', [
    't1_ms', 't2_ms', 't1_estimate', 't2_estimate', 't1_error_pct', 't2_error_pct', 'decoder_error'
])

# C L A S S E S ###############################################################


@dataclass(frozen=True)
class AugmentationConfig:
    noise_sigma: float = 0.01
    random_phase: bool = True

    def validate(self):
        if self.noise_sigma < 0:
            raise ValidationError("noise sigma must not be negative, got {}".format(self.noise_sigma))
        return self


class EncoderNet(Module):
    """
    Maps an l2-normalized pixel (2K reals) to scaled (T1, T2). The output
    layer is a sigmoid stretched to (0, ENCODER_RANGE).
    """
    def __init__(self, n_channels, rng, hidden=HIDDEN_WIDTH):
        super().__init__()
        self.n_channels = n_channels
        self.layers = Sequential(
            Linear(2 * n_channels, hidden, rng),
            ReLU(),
            Linear(hidden, hidden, rng),
            ReLU(),
            Linear(hidden, 2, rng),
            ScaledSigmoid(ENCODER_RANGE),
        )

    def forward(self, pixels):
        return self.layers(pixels)


class DecoderNet(Module):
    """
    Maps scaled (T1, T2) to the 2K reals of the compressed fingerprint with
    unit proton density.
    """
    def __init__(self, n_channels, rng, hidden=HIDDEN_WIDTH):
        super().__init__()
        self.n_channels = n_channels
        self.layers = Sequential(
            Linear(2, hidden, rng),
            ReLU(),
            Linear(hidden, hidden, rng),
            ReLU(),
            Linear(hidden, 2 * n_channels, rng),
        )

    def forward(self, params):
        return self.layers(params)

# F U N C T I O N S ###########################################################


def to_real(pixels):
    """
    Converts complex (P, K) pixel vectors to real (P, 2K): real parts first.
    """
    return np.concatenate([pixels.real, pixels.imag], axis=1)


def to_complex(pixels):
    k = pixels.shape[1] // 2
    return pixels[:, :k] + 1j * pixels[:, k:]


def scale_labels(t1_ms, t2_ms):
    return np.stack([np.asarray(t1_ms) / T1_SCALE, np.asarray(t2_ms) / T2_SCALE], axis=1)


def normalize_rows(pixels):
    """
    Scales every row of a real tensor to unit l2 norm; zero rows stay zero.
    """
    norm = ((pixels * pixels).sum(axis=1, keepdims=True) + TINY) ** 0.5
    return pixels / norm


def bdae_loss(encoder, decoder, inputs, labels, clean, lambda_e=0.1, t2_weight=10.0):
    """
    The supervised pretraining loss of one batch:

        mean|T1 - T1'| + t2_weight * mean|T2 - T2'| + lambda_e * mean ||x - x'||^2

    :param inputs: real (B, 2K) tensor of augmented pixels, not yet normalized
    :param labels: (B, 2) array of scaled (T1, T2)
    :param clean: real (B, 2K) array of the noiseless compressed atoms
    :return: a scalar Tensor
    """
    params = encoder(normalize_rows(inputs))
    fingerprints = decoder(params)
    return (
        mae_loss(params[:, 0], labels[:, 0])
        + t2_weight * mae_loss(params[:, 1], labels[:, 1])
        + lambda_e * mse_loss(fingerprints, clean, reduction="sum") * (1.0 / clean.shape[0])
    )


def pretrain_bdae(cdict, epochs=1000, aug=AugmentationConfig(), seed=0, lr=1e-3, batch_size=64,
                  lambda_e=0.1, t2_weight=10.0, history=None, progress=False):
    """
    Trains the encoder and decoder jointly on dictionary atoms. Every epoch
    draws a fresh random phasor and complex Gaussian noise for each atom,
    and every batch takes one ADAM step on bdae_loss.

    :param cdict: the CompressedDictionary to learn
    :param epochs: the number of passes over the dictionary
    :param aug: the AugmentationConfig
    :param seed: seeds weight initialization, data order and augmentation
    :param lr: the ADAM learning rate
    :param batch_size: atoms per step; 0 trains on the full dictionary each step
    :param lambda_e: the weight of the fingerprint term
    :param t2_weight: the weight of the T2 term
    :param history: if given, a list receiving the mean loss of every epoch
    :param progress: whether to show a progress bar
    :return: a tuple (EncoderNet, DecoderNet), both frozen
    """
    aug.validate()
    atoms = np.asarray(cdict.atoms_k, dtype=np.complex128)
    norms = np.linalg.norm(atoms, axis=1)
    usable = norms > 0
    if not np.any(usable):
        raise ValidationError("cannot pretrain on a dictionary without non-zero atoms")
    if epochs < 0 or batch_size < 0:
        raise ValidationError("epochs and batch size must not be negative")

    atoms, norms = atoms[usable], norms[usable]
    labels = scale_labels(cdict.grid.t1_ms[usable], cdict.grid.t2_ms[usable])
    clean = to_real(atoms)
    unit = atoms / norms[:, None]
    size, k = atoms.shape

    rng = np.random.default_rng(seed)
    encoder = EncoderNet(k, rng)
    decoder = DecoderNet(k, rng)
    optimizer = Adam(encoder.parameters() + decoder.parameters(), lr=lr)
    batch = batch_size or size

    for epoch in tqdm(range(epochs), desc="pretrain", disable=not progress):
        phase = rng.uniform(0, 2 * np.pi, size) if aug.random_phase else np.zeros(size)
        noise = rng.standard_normal((size, k)) + 1j * rng.standard_normal((size, k))
        noisy = unit * np.exp(1j * phase)[:, None] + (aug.noise_sigma / np.sqrt(2.0)) * noise
        inputs = to_real(noisy)
        order = rng.permutation(size)
        losses = []
        for start in range(0, size, batch):
            index = order[start:start + batch]
            loss = bdae_loss(encoder, decoder, Tensor(inputs[index]), labels[index], clean[index],
                             lambda_e, t2_weight)
            if not np.isfinite(loss.item()):
                raise DivergenceError("pretraining loss became non-finite", iteration=epoch)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        if history is not None:
            history.append(float(np.mean(losses)))
        if epoch % 100 == 0:
            logger.debug("pretraining epoch %d loss %.6g", epoch, np.mean(losses))

    return encoder.freeze(), decoder.freeze()


def encode(encoder, tsmi):
    """
    Estimates T1 and T2 for every pixel. Zero pixels map to (0, 0).

    :param encoder: the EncoderNet
    :param tsmi: the Tsmi to encode
    :return: a tuple of (N,) arrays (t1_ms, t2_ms)
    """
    if tsmi.n_channels != encoder.n_channels:
        raise ValidationError("encoder expects {} channels, TSMI has {}".format(
            encoder.n_channels, tsmi.n_channels))
    pixels = tsmi.to_real()
    norms = np.linalg.norm(pixels, axis=1)
    active = norms > 0
    t1 = np.zeros(pixels.shape[0])
    t2 = np.zeros(pixels.shape[0])
    if np.any(active):
        params = encoder(Tensor(pixels[active] / norms[active, None])).values
        t1[active] = params[:, 0] * T1_SCALE
        t2[active] = params[:, 1] * T2_SCALE
    return t1, t2


def decode(decoder, t1_ms, t2_ms, height=None, width=None):
    """
    Computes the unit-PD compressed fingerprint of every (T1, T2) pair.

    :param decoder: the DecoderNet
    :param t1_ms: (N,) array of T1 values
    :param t2_ms: (N,) array of T2 values
    :param height: the image height of the returned Tsmi, by default N
    :param width: the image width of the returned Tsmi, by default 1
    :return: a Tsmi
    """
    t1 = np.atleast_1d(np.asarray(t1_ms, dtype=np.float64))
    t2 = np.atleast_1d(np.asarray(t2_ms, dtype=np.float64))
    if t1.shape != t2.shape or t1.ndim != 1:
        raise ValidationError("T1 and T2 maps must be 1D arrays of equal length")
    fingerprints = decoder(Tensor(scale_labels(t1, t2))).values
    if height is None:
        height, width = t1.size, 1
    return Tsmi(to_complex(fingerprints), height, width)


def analytic_pd(x_hat, d_hat):
    """
    Solves min |x_p - PD_p d_p|^2 for every pixel: PD_p = d_p^H x_p / |d_p|^2,
    or 0 where d_p vanishes.

    :param x_hat: the Tsmi to explain
    :param d_hat: the Tsmi of unit-PD fingerprints
    :return: a complex (N,) array
    """
    if x_hat.data.shape != d_hat.data.shape:
        raise ValidationError("TSMI shapes differ: {} vs {}".format(x_hat.data.shape, d_hat.data.shape))
    numerator = np.sum(np.conj(d_hat.data) * x_hat.data, axis=1)
    denominator = np.sum(np.abs(d_hat.data) ** 2, axis=1)
    pd = np.zeros(numerator.shape, dtype=np.complex128)
    np.divide(numerator, denominator, out=pd, where=denominator > 0)
    return pd


def bloch_project(encoder, decoder, x_hat):
    """
    Projects a TSMI onto Bloch-consistent fingerprints: encode to (T1, T2),
    decode, and scale each decoded fingerprint by its analytic PD.

    :param encoder: the EncoderNet
    :param decoder: the DecoderNet
    :param x_hat: the Tsmi to project
    :return: a tuple (Tsmi x_B, TissueParams of the maps)
    """
    t1, t2 = encode(encoder, x_hat)
    d_hat = decode(decoder, t1, t2, x_hat.height, x_hat.width)
    pd = analytic_pd(x_hat, d_hat)
    empty = ~np.any(x_hat.data != 0, axis=1)
    pd[empty] = 0.0
    x_b = Tsmi(pd[:, None] * d_hat.data, x_hat.height, x_hat.width)
    return x_b, TissueParams(t1, t2, pd)


def bloch_consistent(encoder, decoder, pixels):
    """
    The differentiable counterpart of bloch_project on real (P, 2K) pixel
    tensors. Gradients flow into whichever network parameters and pixels
    require them.

    :return: a tuple (x_B tensor (P, 2K), scaled (T1, T2) tensor (P, 2))
    """
    k = pixels.shape[1] // 2
    params = encoder(normalize_rows(pixels))
    d_hat = decoder(params)
    d_real, d_imag = d_hat[:, :k], d_hat[:, k:]
    x_real, x_imag = pixels[:, :k], pixels[:, k:]
    energy = (d_hat * d_hat).sum(axis=1, keepdims=True) + TINY
    pd_real = (d_real * x_real + d_imag * x_imag).sum(axis=1, keepdims=True) / energy
    pd_imag = (d_real * x_imag - d_imag * x_real).sum(axis=1, keepdims=True) / energy
    x_b = concat([pd_real * d_real - pd_imag * d_imag, pd_real * d_imag + pd_imag * d_real], axis=1)
    return x_b, params


def bloch_residual(encoder, decoder, pixels):
    """
    Returns the squared distance between pixels and their Bloch-consistent
    projection, together with the projection and the scaled (T1, T2).
    """
    x_b, params = bloch_consistent(encoder, decoder, pixels)
    difference = pixels - x_b
    return (difference * difference).sum(), x_b, params


def evaluate_bdae(encoder, decoder, cdict):
    """
    Runs the networks on every noiseless dictionary atom.

    :return: a list of AtomReport, one per atom with non-zero norm
    """
    atoms = cdict.atoms_k
    usable = np.linalg.norm(atoms, axis=1) > 0
    grid_t1 = cdict.grid.t1_ms[usable]
    grid_t2 = cdict.grid.t2_ms[usable]
    x = Tsmi(atoms[usable], int(np.sum(usable)), 1)
    t1, t2 = encode(encoder, x)
    decoded = decode(decoder, grid_t1, grid_t2).data
    errors = np.linalg.norm(decoded - x.data, axis=1) / np.linalg.norm(x.data, axis=1)
    return [
        AtomReport(*values) for values in zip(
            grid_t1, grid_t2, t1, t2,
            100 * np.abs(t1 - grid_t1) / grid_t1,
            100 * np.abs(t2 - grid_t2) / grid_t2,
            errors,
        )
    ]

# E N D   O F   F I L E #######################################################
