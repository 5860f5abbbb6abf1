"""
Copyright (C) 2024 The mrfrecon authors
This project uses an MIT style license - see README.md for details.

This file contains the reconstruction loops. Both deep image prior modes
feed the fixed back-projection x0 to an untrained U-Net and optimize its
weights per acquisition:

  - bardip: the loss couples k-space consistency with the distance to the
    Bloch-consistent projection of the network output, made by the frozen
    pretrained autoencoder.
  - dipmrf: the U-Net sees the k-space loss only, while a fresh encoder is
    trained alongside it against the frozen decoder.

The match mode is the non-learned baseline: dictionary matching of x0.
"""
# I M P O R T S ###############################################################

import csv
import logging
import os

from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from tqdm import tqdm

from mrfrecon.acquisition import AcquisitionOperator, KSpaceData, Tsmi
from mrfrecon.bdae import EncoderNet, bloch_project, bloch_residual
from mrfrecon.dictionary import dict_match
from mrfrecon.exceptions import DivergenceError, ValidationError
from mrfrecon.layers import save_checkpoint
from mrfrecon.metrics import evaluate_maps
from mrfrecon.optim import Adam
from mrfrecon.tensor import Tensor, apply_linear, mse_loss
from mrfrecon.unet import Unet, UnetConfig

# C O N S T A N T S ###########################################################

MODES = ("bardip", "dipmrf", "match")

LOG_COLUMNS = ("iter", "loss_k", "loss_tsmi", "mape_t1", "mape_t2", "psnr_pd", "loss_total", "loss_k_norm")

CHECKPOINT_NAME = "checkpoint.mrfm"

logger = logging.getLogger(__name__)

LogRow = namedtuple('LogRow', LOG_COLUMNS)

ReconResult = namedtuple('ReconResult', ['qmaps', 'tsmi', 'log'])

# C L A S S E S ###############################################################


@dataclass(frozen=True)
class ReconConfig:
    mode: str = "bardip"
    lam: float = 1e-5
    lr: float = 1e-4
    iterations: int = 30000
    log_every: int = 100
    seed: int = 0
    detach_target: bool = True
    train_encoder: bool = True
    encoder_lr: float = 1e-4
    preconditioned: bool = False
    progress: bool = False

    def validate(self):
        if self.mode not in MODES:
            raise ValidationError("mode must be one of {}, got [{}]".format(MODES, self.mode))
        if self.lam < 0:
            raise ValidationError("lambda must not be negative, got {}".format(self.lam))
        if self.iterations < 1 or self.log_every < 1:
            raise ValidationError("iterations and log_every must be at least 1")
        if self.lr <= 0 or self.encoder_lr <= 0:
            raise ValidationError("learning rates must be positive")
        return self


class IterationLog(object):
    """
    The rows logged during a reconstruction. When a filename is given, the
    CSV header is written immediately and every row is appended as soon as
    it is logged, so a run that aborts keeps its partial log.
    """
    def __init__(self, filename=None):
        self.rows = []
        self.filename = filename
        if filename is not None:
            with open(filename, "w", newline="") as outfile:
                csv.writer(outfile).writerow(LOG_COLUMNS)

    def __len__(self):
        return len(self.rows)

    def append(self, row):
        if self.rows and row.iter <= self.rows[-1].iter:
            raise ValidationError("log iterations must increase, got {} after {}".format(row.iter, self.rows[-1].iter))
        self.rows.append(row)
        if self.filename is not None:
            with open(self.filename, "a", newline="") as outfile:
                csv.writer(outfile).writerow(format_row(row))

    def column(self, name):
        return np.array([np.nan if getattr(row, name) is None else getattr(row, name) for row in self.rows])

    def write_csv(self, filename):
        with open(filename, "w", newline="") as outfile:
            writer = csv.writer(outfile)
            writer.writerow(LOG_COLUMNS)
            for row in self.rows:
                writer.writerow(format_row(row))


class KspaceLoss(object):
    """
    The density compensated data consistency ||sqrt(DCF) (y - A x)||^2 as a
    differentiable function of the (1, 2K, H, W) channel form of x.
    """
    def __init__(self, operator, y):
        self.operator = operator
        self.weights = np.sqrt(operator.traj.dcf)[None]
        weighted = self.weights * y.samples
        self.target = np.stack([weighted.real, weighted.imag])
        self.norm = float(np.sum(self.target ** 2))

    def _forward(self, channels):
        samples = self.operator.forward(Tsmi.from_channels(channels)).samples * self.weights
        return np.stack([samples.real, samples.imag])

    def _adjoint(self, grad):
        samples = (grad[0] + 1j * grad[1]) * self.weights
        return self.operator.adjoint(KSpaceData(samples)).to_channels()

    def __call__(self, channels):
        predicted = apply_linear(channels, self._forward, self._adjoint)
        return mse_loss(predicted, self.target, reduction="sum")

# F U N C T I O N S ###########################################################


def format_row(row):
    return ["" if value is None else repr(value) for value in row]


def read_log(filename):
    """
    Reads a CSV written by IterationLog.

    :return: an IterationLog without a backing file
    """
    log = IterationLog()
    with open(filename, newline="") as infile:
        reader = csv.reader(infile)
        header = next(reader, None)
        if tuple(header or ()) != LOG_COLUMNS:
            raise ValidationError("[{}] is not an iteration log".format(filename))
        for fields in reader:
            values = [None if field == "" else float(field) for field in fields]
            values[0] = int(values[0])
            log.append(LogRow(*values))
    return log


def coupled_loss(x_hat, x_b, y, traj, coils, basis, lam):
    """
    Evaluates ||sqrt(DCF) (y - A x_hat)||^2 + lam ||x_hat - x_b||^2.
    """
    operator = AcquisitionOperator(traj, coils, basis)
    residual = np.sqrt(traj.dcf)[None] * (y.samples - operator.forward(x_hat).samples)
    consistency = float(np.sum(np.abs(residual) ** 2))
    return consistency + lam * float(np.sum(np.abs(x_hat.data - x_b.data) ** 2))


def _reference(truth, truth_mask):
    """
    Pairs the true maps with the pixels the logged metrics are computed
    over; by default every pixel with a nonzero true proton density.
    """
    if truth is None:
        return None
    if truth_mask is None:
        return truth, np.abs(np.asarray(truth.pd)) > 0
    return truth, np.asarray(truth_mask, dtype=bool)


def _truth_metrics(maps, reference):
    if reference is None:
        return None, None, None
    truth, mask = reference
    report = evaluate_maps(maps, truth, mask)
    return report.mape_t1, report.mape_t2, report.psnr_pd


def _log_row(log, iteration, loss_k, loss_tsmi, loss_total, norm, maps, reference):
    mape_t1, mape_t2, psnr_pd = _truth_metrics(maps, reference)
    row = LogRow(iteration, loss_k, loss_tsmi, mape_t1, mape_t2, psnr_pd, loss_total, loss_k / norm if norm else None)
    log.append(row)
    logger.info("iteration %d loss_k %.6g loss_tsmi %.6g", iteration, loss_k, loss_tsmi)
    return row


def _prepare(y, traj, coils, basis, cfg):
    operator = AcquisitionOperator(traj, coils, basis)
    x0 = operator.back_projection(y, cfg.preconditioned)
    return operator, x0, KspaceLoss(operator, y)


def _check_finite(iteration, checkpoint, *losses):
    if not np.all(np.isfinite(losses)):
        raise DivergenceError("loss became non-finite at iteration {}".format(iteration), iteration, checkpoint)


def _backward(optimizer, loss, iteration, checkpoint):
    """
    Back-propagates a loss into the optimizer's parameters without updating
    them, turning a non-finite loss or gradient into a DivergenceError.
    """
    _check_finite(iteration, checkpoint, loss.item())
    optimizer.zero_grad()
    loss.backward()
    for parameter in optimizer.parameters:
        if parameter.grad is not None and not np.all(np.isfinite(parameter.grad)):
            raise DivergenceError("non-finite gradient at iteration {}".format(iteration), iteration, checkpoint)


def reconstruct_bardip(y, traj, coils, basis, encoder, decoder, cfg, truth=None, truth_mask=None,
                       unet_config=UnetConfig(), log_path=None, checkpoint_dir=None):
    """
    Reconstructs quantitative maps with the Bloch-consistent deep image
    prior. Every iteration evaluates x = Unet(x0), projects it with the
    frozen autoencoder and takes an ADAM step on the U-Net weights against
    the coupled loss. Unless cfg.detach_target is False the projection is
    treated as a constant target.

    :param y: the measured KSpaceData
    :param traj: the Trajectory
    :param coils: the CoilMaps
    :param basis: the SvdBasis
    :param encoder: the pretrained, frozen EncoderNet
    :param decoder: the pretrained, frozen DecoderNet
    :param cfg: the ReconConfig
    :param truth: optional TissueParams of the true maps, used for logging
    :param truth_mask: optional boolean mask of the pixels the logged metrics
        cover; defaults to the pixels with nonzero true proton density
    :param unet_config: the UnetConfig
    :param log_path: if given, the CSV file the log is streamed to
    :param checkpoint_dir: if given, the directory receiving U-Net checkpoints
    :return: a ReconResult (qmaps, final TSMI, IterationLog)
    """
    cfg.validate()
    reference = _reference(truth, truth_mask)
    operator, x0, kspace = _prepare(y, traj, coils, basis, cfg)
    x0_channels = Tensor(x0.to_channels())
    rng = np.random.default_rng(cfg.seed)
    unet = Unet(2 * basis.k, unet_config, rng)
    optimizer = Adam(unet.parameters(), lr=cfg.lr)
    log = IterationLog(log_path)
    checkpoint = None

    for iteration in tqdm(range(cfg.iterations), desc="bardip", disable=not cfg.progress):
        x_hat = unet(x0_channels)
        tsmi = Tsmi.from_channels(x_hat.values)
        x_b, maps = bloch_project(encoder, decoder, tsmi)
        loss_k = kspace(x_hat)
        if cfg.detach_target:
            difference = x_hat - Tensor(x_b.to_channels())
            loss_tsmi = (difference * difference).sum()
        else:
            pixels = x_hat.reshape(x_hat.shape[1], -1).transpose()
            loss_tsmi, _, _ = bloch_residual(encoder, decoder, pixels)
        loss = loss_k + cfg.lam * loss_tsmi
        _check_finite(iteration, checkpoint, loss_k.item(), loss_tsmi.item())
        _backward(optimizer, loss, iteration, checkpoint)

        if iteration % cfg.log_every == 0:
            _log_row(log, iteration, loss_k.item(), loss_tsmi.item(), loss.item(), kspace.norm, maps, reference)
            if checkpoint_dir is not None:
                checkpoint = os.path.join(checkpoint_dir, CHECKPOINT_NAME)
                save_checkpoint(checkpoint, dict(unet=unet), iteration)
        optimizer.step()

    x_hat = unet(x0_channels)
    tsmi = Tsmi.from_channels(x_hat.values)
    x_b, maps = bloch_project(encoder, decoder, tsmi)
    loss_k = kspace(x_hat).item()
    loss_tsmi = float(np.sum(np.abs(tsmi.data - x_b.data) ** 2))
    _check_finite(cfg.iterations, checkpoint, loss_k, loss_tsmi)
    _log_row(log, cfg.iterations, loss_k, loss_tsmi, loss_k + cfg.lam * loss_tsmi, kspace.norm, maps, reference)
    return ReconResult(maps, tsmi, log)


def reconstruct_dipmrf(y, traj, coils, basis, decoder, cfg, truth=None, truth_mask=None,
                       unet_config=UnetConfig(), log_path=None, checkpoint_dir=None):
    """
    Reconstructs quantitative maps with the plain deep image prior: the
    U-Net is optimized against the k-space loss alone. In parallel a freshly
    initialized encoder is trained, with its own ADAM optimizer, to make the
    Bloch-consistent projection through the frozen decoder match the U-Net
    output. The maps come from that encoder.

    Arguments are those of reconstruct_bardip, without the encoder.
    """
    cfg.validate()
    reference = _reference(truth, truth_mask)
    operator, x0, kspace = _prepare(y, traj, coils, basis, cfg)
    x0_channels = Tensor(x0.to_channels())
    rng = np.random.default_rng(cfg.seed)
    unet = Unet(2 * basis.k, unet_config, rng)
    encoder = EncoderNet(basis.k, rng)
    optimizer = Adam(unet.parameters(), lr=cfg.lr)
    encoder_optimizer = Adam(encoder.parameters(), lr=cfg.encoder_lr)
    log = IterationLog(log_path)
    checkpoint = None

    for iteration in tqdm(range(cfg.iterations), desc="dipmrf", disable=not cfg.progress):
        x_hat = unet(x0_channels)
        tsmi = Tsmi.from_channels(x_hat.values)
        loss_k = kspace(x_hat)
        loss_e, _, _ = bloch_residual(encoder, decoder, Tensor(tsmi.to_real()))
        _check_finite(iteration, checkpoint, loss_k.item(), loss_e.item())
        _backward(optimizer, loss_k, iteration, checkpoint)
        if cfg.train_encoder:
            _backward(encoder_optimizer, loss_e, iteration, checkpoint)

        if iteration % cfg.log_every == 0:
            _, maps = bloch_project(encoder, decoder, tsmi)
            _log_row(log, iteration, loss_k.item(), loss_e.item(), loss_k.item(), kspace.norm, maps, reference)
            if checkpoint_dir is not None:
                checkpoint = os.path.join(checkpoint_dir, CHECKPOINT_NAME)
                save_checkpoint(checkpoint, dict(unet=unet, encoder=encoder), iteration)
        optimizer.step()
        if cfg.train_encoder:
            encoder_optimizer.step()

    x_hat = unet(x0_channels)
    tsmi = Tsmi.from_channels(x_hat.values)
    x_b, maps = bloch_project(encoder, decoder, tsmi)
    loss_k = kspace(x_hat).item()
    loss_tsmi = float(np.sum(np.abs(tsmi.data - x_b.data) ** 2))
    _check_finite(cfg.iterations, checkpoint, loss_k, loss_tsmi)
    _log_row(log, cfg.iterations, loss_k, loss_tsmi, loss_k, kspace.norm, maps, reference)
    return ReconResult(maps, tsmi, log)


def reconstruct_match(y, traj, coils, basis, cdict, cfg, truth=None, truth_mask=None, log_path=None):
    """
    Matches the back-projection x0 against the dictionary, pixel by pixel.
    The log holds a single row describing x0.
    """
    cfg.validate()
    reference = _reference(truth, truth_mask)
    _, x0, kspace = _prepare(y, traj, coils, basis, cfg)
    maps, indices = dict_match(x0, cdict, return_index=True)
    matched = np.where(indices[:, None] >= 0, maps.pd[:, None] * cdict.atoms_k[indices], 0.0)
    loss_k = kspace(Tensor(x0.to_channels())).item()
    loss_tsmi = float(np.sum(np.abs(x0.data - matched) ** 2))
    log = IterationLog(log_path)
    _check_finite(0, None, loss_k, loss_tsmi)
    _log_row(log, 0, loss_k, loss_tsmi, loss_k + cfg.lam * loss_tsmi, kspace.norm, maps, reference)
    return ReconResult(maps, x0, log)

# E N D   O F   F I L E #######################################################
