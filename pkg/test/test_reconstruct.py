"""
Copyright (C) 2024 The mrfrecon authors
This project uses an MIT style license - see README.md for details.
"""
# I M P O R T S ###############################################################

import os
import shutil
import tempfile
import unittest

import numpy as np

from mrfrecon.acquisition import (
    AcquisitionOperator, KSpaceData, Tsmi, ground_truth_tsmi, make_coil_maps, make_spiral_trajectory
)
from mrfrecon.bdae import DecoderNet, EncoderNet, bloch_project, bloch_residual
from mrfrecon.dictionary import SvdBasis, build_dictionary, compress, compute_svd_basis
from mrfrecon.epg import TissueParams, default_fisp_schedule
from mrfrecon.exceptions import DivergenceError, ValidationError
from mrfrecon.reconstruct import (
    CHECKPOINT_NAME, IterationLog, KspaceLoss, LogRow, ReconConfig, coupled_loss, read_log,
    reconstruct_bardip, reconstruct_dipmrf, reconstruct_match
)
from mrfrecon.tensor import Tensor, gradient_error, numerical_gradient
from mrfrecon.unet import Unet, UnetConfig

# C O N S T A N T S ###########################################################

SIZE = 8

TINY_UNET = UnetConfig(levels=1, base_channels=2)

# C L A S S E S ###############################################################


class SmallProblem(unittest.TestCase):
    """
    Builds an 8x8 acquisition with a two-channel subspace and two tissues.
    """
    def setUp(self):
        """
        Common setup routines needed for all unit tests.
        """
        self.directory = tempfile.mkdtemp()
        seq = default_fisp_schedule(12)
        dictionary = build_dictionary(np.arange(400.0, 2001.0, 400.0), np.arange(40.0, 201.0, 40.0), seq)
        self.basis = compute_svd_basis(dictionary, 2)
        self.cdict = compress(dictionary, self.basis)
        self.traj = make_spiral_trajectory(SIZE, SIZE, 12, 24)
        self.coils = make_coil_maps(SIZE, SIZE, 1)
        left = np.arange(SIZE * SIZE) % SIZE < SIZE // 2
        self.truth = TissueParams(
            np.where(left, 800.0, 2000.0),
            np.where(left, 80.0, 200.0),
            np.full(SIZE * SIZE, 0.8 * np.exp(0.3j)),
        )
        self.x = ground_truth_tsmi(self.truth, seq, self.basis, SIZE, SIZE)
        self.operator = AcquisitionOperator(self.traj, self.coils, self.basis)
        self.y = self.operator.forward(self.x)
        rng = np.random.default_rng(5)
        self.encoder = EncoderNet(2, rng, hidden=8).freeze()
        self.decoder = DecoderNet(2, rng, hidden=8).freeze()

    def tearDown(self):
        shutil.rmtree(self.directory)

    def path(self, name):
        return os.path.join(self.directory, name)


class TestReconConfig(unittest.TestCase):
    """
    A test class for reconstruction settings.
    """
    def test_defaults_are_valid(self):
        self.assertEqual("bardip", ReconConfig().validate().mode)

    def test_invalid_settings_raise(self):
        for settings in (dict(mode="sense"), dict(lam=-1.0), dict(iterations=0), dict(lr=0.0), dict(log_every=0)):
            with self.assertRaises(ValidationError):
                ReconConfig(**settings).validate()


class TestIterationLog(unittest.TestCase):
    """
    A test class for the streamed iteration log.
    """
    def setUp(self):
        self.directory = tempfile.mkdtemp()
        self.filename = os.path.join(self.directory, "log.csv")

    def tearDown(self):
        shutil.rmtree(self.directory)

    def test_rows_are_streamed_as_they_are_logged(self):
        log = IterationLog(self.filename)
        self.assertEqual(0, len(read_log(self.filename)))
        log.append(LogRow(0, 2.5, 0.5, None, None, None, 2.5, 0.25))
        self.assertEqual(1, len(read_log(self.filename)))

    def test_read_back_keeps_values_and_gaps(self):
        log = IterationLog(self.filename)
        log.append(LogRow(0, 2.5, 0.5, 10.0, 20.0, 30.0, 2.5, 0.25))
        log.append(LogRow(10, 0.1, 0.2, None, None, None, 0.1, None))
        loaded = read_log(self.filename)
        self.assertEqual(log.rows, loaded.rows)
        np.testing.assert_array_equal([10.0, np.nan], loaded.column("mape_t1"))

    def test_iterations_must_increase(self):
        log = IterationLog()
        log.append(LogRow(5, 1.0, 0.0, None, None, None, 1.0, None))
        with self.assertRaises(ValidationError):
            log.append(LogRow(5, 1.0, 0.0, None, None, None, 1.0, None))

    def test_foreign_csv_raises(self):
        with open(self.filename, "w") as outfile:
            outfile.write("slice,snr_db\n0,inf\n")
        with self.assertRaises(ValidationError):
            read_log(self.filename)


class TestLosses(SmallProblem):
    """
    A test class for the k-space and coupled losses.
    """
    def test_kspace_loss_vanishes_on_the_truth(self):
        loss = KspaceLoss(self.operator, self.y)
        self.assertLess(loss(Tensor(self.x.to_channels())).item(), 1e-20 * loss.norm)

    def test_kspace_loss_matches_coupled_loss(self):
        rng = np.random.default_rng(1)
        x_hat = Tsmi(self.x.data + 0.1 * rng.standard_normal(self.x.data.shape), SIZE, SIZE)
        x_b = Tsmi(rng.standard_normal(self.x.data.shape), SIZE, SIZE)
        kspace = KspaceLoss(self.operator, self.y)(Tensor(x_hat.to_channels())).item()
        self.assertAlmostEqual(1.0, coupled_loss(x_hat, x_b, self.y, self.traj, self.coils, self.basis, 0.0) / kspace)
        distance = np.sum(np.abs(x_hat.data - x_b.data) ** 2)
        coupled = coupled_loss(x_hat, x_b, self.y, self.traj, self.coils, self.basis, 0.5)
        self.assertAlmostEqual(1.0, coupled / (kspace + 0.5 * distance))

    def test_kspace_gradient(self):
        loss = KspaceLoss(self.operator, self.y)
        channels = Tensor(np.random.default_rng(2).standard_normal((1, 4, SIZE, SIZE)), requires_grad=True)

        def objective():
            return loss(channels)

        objective().backward()
        numeric = numerical_gradient(objective, channels)
        self.assertLess(gradient_error(channels.grad, numeric), 1e-4)

    def test_coupled_gradient_through_the_projection(self):
        loss = KspaceLoss(self.operator, self.y)
        channels = Tensor(np.random.default_rng(3).standard_normal((1, 4, SIZE, SIZE)), requires_grad=True)

        def objective():
            pixels = channels.reshape(4, -1).transpose()
            return loss(channels) + 0.5 * bloch_residual(self.encoder, self.decoder, pixels)[0]

        objective().backward()
        numeric = numerical_gradient(objective, channels, step=1e-6)
        self.assertLess(gradient_error(channels.grad, numeric), 1e-4)


class TestCoupledLossGradient(unittest.TestCase):
    """
    A test class for the gradient of the coupled loss with respect to the
    U-Net weights, on a single frame of four samples.
    """
    def setUp(self):
        rng = np.random.default_rng(17)
        self.traj = make_spiral_trajectory(SIZE, SIZE, 1, 4)
        self.coils = make_coil_maps(SIZE, SIZE, 1)
        self.basis = SvdBasis(np.array([[0.6, 0.8j]]), np.ones(2), 2.0)
        self.y = KSpaceData(rng.standard_normal((1, 1, 4)) + 1j * rng.standard_normal((1, 1, 4)))
        self.unet = Unet(4, TINY_UNET, rng)
        self.x0 = Tensor(rng.standard_normal((1, 4, SIZE, SIZE)))
        encoder = EncoderNet(2, rng, hidden=8).freeze()
        decoder = DecoderNet(2, rng, hidden=8).freeze()
        self.x_b, _ = bloch_project(encoder, decoder, Tsmi.from_channels(self.unet(self.x0).values))
        self.kspace = KspaceLoss(AcquisitionOperator(self.traj, self.coils, self.basis), self.y)

    def objective(self):
        x_hat = self.unet(self.x0)
        difference = x_hat - Tensor(self.x_b.to_channels())
        return self.kspace(x_hat) + 0.5 * (difference * difference).sum()

    def test_value_matches_coupled_loss(self):
        x_hat = Tsmi.from_channels(self.unet(self.x0).values)
        expected = coupled_loss(x_hat, self.x_b, self.y, self.traj, self.coils, self.basis, 0.5)
        self.assertAlmostEqual(1.0, self.objective().item() / expected, places=10)

    def test_gradient_with_respect_to_unet_weights(self):
        self.objective().backward()
        checked = [self.unet.head.weight, self.unet.head.bias, getattr(self.unet, "down0").layers[0].weight,
                   self.unet.bottom.layers[3].weight]
        for tensor in checked:
            numeric = numerical_gradient(self.objective, tensor, step=1e-6)
            self.assertLess(gradient_error(tensor.grad, numeric), 1e-4)


class TestReconstruction(SmallProblem):
    """
    A test class for short runs of every reconstruction mode.
    """
    def config(self, **settings):
        values = dict(iterations=3, log_every=1, lr=1e-3, encoder_lr=1e-3, lam=1e-2)
        values.update(settings)
        return ReconConfig(**values)

    def check_log(self, log, iterations):
        self.assertEqual(list(range(iterations + 1)), [row.iter for row in log.rows])
        self.assertTrue(all(np.isfinite(row.mape_t1) for row in log.rows))

    def test_bardip(self):
        log_path = self.path("log.csv")
        result = reconstruct_bardip(self.y, self.traj, self.coils, self.basis, self.encoder, self.decoder,
                                    self.config(), truth=self.truth, unet_config=TINY_UNET,
                                    log_path=log_path, checkpoint_dir=self.directory)
        self.check_log(result.log, 3)
        for row in result.log.rows:
            self.assertAlmostEqual(row.loss_k + 1e-2 * row.loss_tsmi, row.loss_total, places=9)
        self.assertEqual(result.log.rows, read_log(log_path).rows)
        self.assertEqual(SIZE * SIZE, result.qmaps.t1_ms.size)
        self.assertEqual((SIZE, SIZE, 2), (result.tsmi.height, result.tsmi.width, result.tsmi.n_channels))
        self.assertTrue(os.path.exists(self.path(CHECKPOINT_NAME)))

    def test_bardip_with_attached_target(self):
        result = reconstruct_bardip(self.y, self.traj, self.coils, self.basis, self.encoder, self.decoder,
                                    self.config(detach_target=False, log_every=2), unet_config=TINY_UNET)
        self.assertEqual([0, 2, 3], [row.iter for row in result.log.rows])
        self.assertIsNone(result.log.rows[0].mape_t1)

    def test_same_seed_gives_same_maps(self):
        first = reconstruct_bardip(self.y, self.traj, self.coils, self.basis, self.encoder, self.decoder,
                                   self.config(seed=9), unet_config=TINY_UNET)
        second = reconstruct_bardip(self.y, self.traj, self.coils, self.basis, self.encoder, self.decoder,
                                    self.config(seed=9), unet_config=TINY_UNET)
        np.testing.assert_array_equal(first.tsmi.data, second.tsmi.data)

    def test_dipmrf(self):
        result = reconstruct_dipmrf(self.y, self.traj, self.coils, self.basis, self.decoder, self.config(),
                                    truth=self.truth, unet_config=TINY_UNET, checkpoint_dir=self.directory)
        self.check_log(result.log, 3)
        for row in result.log.rows:
            self.assertEqual(row.loss_k, row.loss_total)
        self.assertTrue(os.path.exists(self.path(CHECKPOINT_NAME)))

    def test_match_logs_one_row(self):
        log_path = self.path("log.csv")
        result = reconstruct_match(self.y, self.traj, self.coils, self.basis, self.cdict, self.config(),
                                   truth=self.truth, log_path=log_path)
        self.assertEqual([0], [row.iter for row in read_log(log_path).rows])
        self.assertTrue(set(np.unique(result.qmaps.t1_ms)) <= set(self.cdict.grid.t1_ms))

    def test_non_finite_data_raises_divergence(self):
        log_path = self.path("log.csv")
        samples = self.y.samples.copy()
        samples[0, 0, 0] = np.nan
        with self.assertRaises(DivergenceError) as context:
            reconstruct_bardip(KSpaceData(samples), self.traj, self.coils, self.basis, self.encoder,
                               self.decoder, self.config(), unet_config=TINY_UNET, log_path=log_path)
        self.assertEqual(0, context.exception.iteration)
        self.check_finite_rows(read_log(log_path))

    def test_non_finite_data_stops_dipmrf_before_logging(self):
        log_path = self.path("log.csv")
        samples = self.y.samples.copy()
        samples[0, 0, 0] = np.nan
        with self.assertRaises(DivergenceError) as context:
            reconstruct_dipmrf(KSpaceData(samples), self.traj, self.coils, self.basis, self.decoder,
                               self.config(), unet_config=TINY_UNET, log_path=log_path)
        self.assertEqual(0, context.exception.iteration)
        self.assertEqual(0, len(read_log(log_path)))

    def check_finite_rows(self, log):
        for row in log.rows:
            self.assertTrue(all(np.isfinite(value) for value in row if value is not None))

# E N D   O F   F I L E #######################################################
