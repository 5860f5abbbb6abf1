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

from mrfrecon.config import DictionaryConfig
from mrfrecon.epg import (
    DEFAULT_TE_MS, DEFAULT_TI_MS, DEFAULT_TR_MS, SequenceParams, default_fisp_schedule,
    epg_fisp, epg_fisp_batch, isochromat_fisp, read_schedule, write_schedule
)
from mrfrecon.exceptions import ValidationError
from mrfrecon.experiment import grid_values

# C O N S T A N T S ###########################################################

SLOW = bool(os.environ.get("MRF_SLOW_TESTS"))

# F U N C T I O N S ###########################################################


def relative_error(estimate, reference):
    return np.linalg.norm(estimate - reference) / np.linalg.norm(reference)


def dictionary_grid(config):
    t1, t2 = np.meshgrid(grid_values(config.t1_min, config.t1_max, config.t1_step),
                         grid_values(config.t2_min, config.t2_max, config.t2_step), indexing="ij")
    keep = t2 <= t1
    return t1[keep], t2[keep]

# C L A S S E S ###############################################################


class TestDefaultSchedule(unittest.TestCase):
    """
    A test class for the default flip angle train.
    """
    def test_full_length_schedule(self):
        seq = default_fisp_schedule(1000)
        self.assertEqual(1000, seq.n_timeframes)
        self.assertEqual(DEFAULT_TR_MS, seq.tr_ms)
        self.assertEqual(DEFAULT_TE_MS, seq.te_ms)
        self.assertEqual(DEFAULT_TI_MS, seq.ti_ms)
        self.assertTrue(seq.inversion)

    def test_single_timeframe_is_valid(self):
        seq = default_fisp_schedule(1)
        self.assertEqual(1, seq.n_timeframes)
        self.assertIs(seq, seq.validate())

    def test_shorter_schedule_is_a_prefix(self):
        short = default_fisp_schedule(200)
        full = default_fisp_schedule(1000)
        np.testing.assert_array_equal(short.flip_angles_deg, full.flip_angles_deg[:200])

    def test_angles_stay_in_range(self):
        angles = default_fisp_schedule(1000).flip_angles_deg
        self.assertTrue(np.all(angles >= 0))
        self.assertTrue(np.all(angles <= 90))

    def test_zero_length_raises(self):
        with self.assertRaises(ValidationError):
            default_fisp_schedule(0)


class TestSequenceParams(unittest.TestCase):
    """
    A test class for the SequenceParams validation.
    """
    def test_te_must_be_below_tr(self):
        with self.assertRaises(ValidationError):
            SequenceParams([10.0], 10.0, 12.0, 0.0).validate()

    def test_te_must_be_positive(self):
        with self.assertRaises(ValidationError):
            SequenceParams([10.0], 10.0, 0.0, 0.0).validate()

    def test_negative_ti_raises(self):
        with self.assertRaises(ValidationError):
            SequenceParams([10.0], 10.0, 2.0, -1.0).validate()

    def test_flip_angle_out_of_range_raises(self):
        with self.assertRaises(ValidationError):
            SequenceParams([10.0, 190.0], 10.0, 2.0, 0.0).validate()

    def test_truncated_keeps_timings(self):
        seq = default_fisp_schedule(50).truncated(10)
        self.assertEqual(10, seq.n_timeframes)
        self.assertEqual(DEFAULT_TE_MS, seq.te_ms)


class TestEpgFisp(unittest.TestCase):
    """
    A test class for the extended phase graph simulator.
    """
    def test_zero_flip_angles_give_zero_signal(self):
        seq = SequenceParams(np.zeros(20), 10.0, 2.0, 18.0)
        np.testing.assert_array_equal(np.zeros(20), epg_fisp(1000.0, 100.0, seq))

    def test_single_pulse_decays_with_t2(self):
        seq = SequenceParams([90.0], 10.0, 2.0, 0.0, inversion=False)
        signal = epg_fisp(1000.0, 100.0, seq)
        self.assertAlmostEqual(np.exp(-2.0 / 100.0), abs(signal[0]), places=12)
        self.assertAlmostEqual(0.0, signal[0].imag, places=12)

    def test_inversion_flips_initial_magnetization(self):
        seq = SequenceParams([90.0], 10.0, 2.0, 18.0)
        expected = (1.0 - 2.0 * np.exp(-18.0 / 1000.0)) * np.exp(-2.0 / 100.0)
        self.assertAlmostEqual(expected, epg_fisp(1000.0, 100.0, seq)[0].real, places=12)

    def test_matches_isochromat_simulation(self):
        seq = default_fisp_schedule(200)
        epg = epg_fisp(1000.0, 100.0, seq)
        isochromat = isochromat_fisp(1000.0, 100.0, seq, n_spins=400)
        self.assertLess(relative_error(epg, isochromat), 1e-3)

    def test_matches_isochromat_on_a_grid(self):
        seq = default_fisp_schedule(100)
        for t1 in (300.0, 800.0, 1500.0, 2500.0, 4000.0):
            for t2 in (20.0, 60.0, 120.0, 250.0, 300.0, 2000.0):
                if t2 > t1:
                    continue
                epg = epg_fisp(t1, t2, seq)
                isochromat = isochromat_fisp(t1, t2, seq, n_spins=400)
                self.assertLess(relative_error(epg, isochromat), 1e-3, msg="T1={} T2={}".format(t1, t2))

    def test_magnitude_never_exceeds_one_on_the_dictionary_grid(self):
        t1, t2 = dictionary_grid(DictionaryConfig())
        signal = epg_fisp_batch(t1, t2, default_fisp_schedule(200))
        self.assertTrue(np.all(np.isfinite(signal)))
        self.assertLessEqual(np.max(np.abs(signal)), 1.0)

    def test_longer_t2_gives_a_stronger_echo_after_a_high_flip_pulse(self):
        seq = SequenceParams([5.0, 5.0, 5.0, 5.0, 80.0], 10.0, 1.908, 18.0)
        echoes = [abs(epg_fisp(1000.0, t2, seq)[-1]) for t2 in (20.0, 50.0, 100.0, 200.0, 500.0)]
        self.assertTrue(np.all(np.diff(echoes) > 0), msg=str(echoes))

    def test_matches_isochromat_at_full_length_on_a_coarse_grid(self):
        seq = default_fisp_schedule(200)
        t1, t2 = dictionary_grid(DictionaryConfig(t1_step=700.0, t2_step=70.0))
        for t1_ms, t2_ms in zip(t1, t2):
            error = relative_error(epg_fisp(t1_ms, t2_ms, seq), isochromat_fisp(t1_ms, t2_ms, seq, n_spins=400))
            self.assertLess(error, 1e-3, msg="T1={} T2={}".format(t1_ms, t2_ms))

    @unittest.skipUnless(SLOW, "set MRF_SLOW_TESTS to compare the whole dictionary grid")
    def test_matches_isochromat_on_the_whole_dictionary_grid(self):
        seq = default_fisp_schedule(200)
        t1, t2 = dictionary_grid(DictionaryConfig())
        epg = epg_fisp_batch(t1, t2, seq)
        for index, (t1_ms, t2_ms) in enumerate(zip(t1, t2)):
            error = relative_error(epg[index], isochromat_fisp(t1_ms, t2_ms, seq, n_spins=400))
            self.assertLess(error, 1e-3, msg="T1={} T2={}".format(t1_ms, t2_ms))

    def test_batch_matches_single_simulations(self):
        seq = default_fisp_schedule(60)
        t1 = np.array([500.0, 1000.0, 2000.0])
        t2 = np.array([50.0, 100.0, 200.0])
        batch = epg_fisp_batch(t1, t2, seq)
        self.assertEqual((3, 60), batch.shape)
        for index in range(3):
            np.testing.assert_allclose(batch[index], epg_fisp(t1[index], t2[index], seq), atol=1e-14)

    def test_non_positive_relaxation_raises(self):
        seq = default_fisp_schedule(10)
        with self.assertRaises(ValidationError):
            epg_fisp(0.0, 100.0, seq)
        with self.assertRaises(ValidationError):
            epg_fisp(1000.0, -5.0, seq)

    def test_non_finite_relaxation_raises(self):
        with self.assertRaises(ValidationError):
            epg_fisp(np.nan, 100.0, default_fisp_schedule(10))

    def test_mismatched_lengths_raise(self):
        with self.assertRaises(ValidationError):
            epg_fisp_batch([1000.0, 800.0], [100.0], default_fisp_schedule(10))


class TestIsochromatFisp(unittest.TestCase):
    """
    A test class for the brute force isochromat simulator.
    """
    def test_zero_flip_angles_give_zero_signal(self):
        seq = SequenceParams(np.zeros(15), 10.0, 2.0, 18.0)
        np.testing.assert_allclose(np.zeros(15), isochromat_fisp(1000.0, 100.0, seq, n_spins=50), atol=1e-15)

    def test_single_spin_single_pulse(self):
        seq = SequenceParams([90.0], 10.0, 2.0, 0.0, inversion=False)
        signal = isochromat_fisp(1000.0, 100.0, seq, n_spins=1)
        self.assertAlmostEqual(np.exp(-2.0 / 100.0), abs(signal[0]), places=12)

    def test_zero_spins_raise(self):
        with self.assertRaises(ValidationError):
            isochromat_fisp(1000.0, 100.0, default_fisp_schedule(5), n_spins=0)


class TestScheduleFile(unittest.TestCase):
    """
    A test class for reading and writing schedule CSV files.
    """
    def setUp(self):
        self.directory = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.directory)

    def test_write_then_read_keeps_sequence(self):
        filename = os.path.join(self.directory, "schedule.csv")
        seq = default_fisp_schedule(30)
        write_schedule(filename, seq)
        loaded = read_schedule(filename)
        np.testing.assert_array_equal(seq.flip_angles_deg, loaded.flip_angles_deg)
        self.assertEqual((seq.tr_ms, seq.te_ms, seq.ti_ms), (loaded.tr_ms, loaded.te_ms, loaded.ti_ms))

    def test_header_carries_timings(self):
        filename = os.path.join(self.directory, "schedule.csv")
        write_schedule(filename, default_fisp_schedule(3))
        with open(filename) as infile:
            self.assertEqual("# tr_ms,te_ms,ti_ms,10.0,1.908,18.0", infile.readline().strip())

    def test_bad_header_raises(self):
        filename = os.path.join(self.directory, "bad.csv")
        with open(filename, "w") as outfile:
            outfile.write("10\n20\n")
        with self.assertRaises(ValidationError):
            read_schedule(filename)

# E N D   O F   F I L E #######################################################
