"""
Copyright (C) 2024 The mrfrecon authors
This project uses an MIT style license - see README.md for details.
"""
# I M P O R T S ###############################################################

import dataclasses
import os
import shutil
import tempfile
import unittest

from mrfrecon.config import ExperimentConfig, apply_overrides, load_config
from mrfrecon.exceptions import ConfigError

# C L A S S E S ###############################################################


class TestLoadConfig(unittest.TestCase):
    """
    A test class for reading experiment configurations.
    """
    def setUp(self):
        """
        Common setup routines needed for all unit tests.
        """
        self.directory = tempfile.mkdtemp()
        self.filename = os.path.join(self.directory, "experiment.toml")

    def tearDown(self):
        shutil.rmtree(self.directory)

    def write(self, text):
        with open(self.filename, "w") as outfile:
            outfile.write(text)
        return self.filename

    def test_defaults(self):
        config = load_config()
        self.assertEqual(ExperimentConfig(), config)
        self.assertEqual(200, config.sequence.n_timeframes)
        self.assertEqual((35.0, 40.0), config.acquisition.snr_db)
        self.assertEqual(1e-5, config.recon.lam)

    def test_sections_override_defaults(self):
        config = load_config(self.write(
            "[sequence]\nn_timeframes = 50\n"
            "[acquisition]\nsnr_db = [20, inf]\nseed = 7\n"
            "[recon]\nmode = \"dipmrf\"\niterations = 10\nlog_every = 5\n"
            "[unet]\nlevels = 2\n"
        ))
        self.assertEqual(50, config.sequence.n_timeframes)
        self.assertEqual((20.0, float("inf")), config.acquisition.snr_db)
        self.assertEqual(7, config.root_seed)
        self.assertEqual("dipmrf", config.recon.mode)
        self.assertEqual(2, config.unet.levels)
        self.assertEqual(1000, config.bdae.epochs)

    def test_shipped_desk_config(self):
        filename = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "config", "desk.toml")
        config = load_config(filename)
        runs = os.path.normpath(os.path.join(os.path.dirname(filename), "..", "runs", "desk"))
        self.assertEqual(runs, os.path.normpath(config.output.directory))
        self.assertEqual(dataclasses.replace(ExperimentConfig(), output=config.output), config)

    def test_lambda_key(self):
        config = load_config(self.write("[recon]\nlambda = 0.001\n"))
        self.assertEqual(0.001, config.recon.lam)

    def test_integers_are_accepted_as_numbers(self):
        config = load_config(self.write("[sequence]\ntr_ms = 12\n"))
        self.assertIsInstance(config.sequence.tr_ms, float)

    def test_single_snr_value(self):
        self.assertEqual((30.0,), load_config(self.write("[acquisition]\nsnr_db = 30\n")).acquisition.snr_db)

    def test_paths_are_relative_to_the_file(self):
        with open(os.path.join(self.directory, "fisp.csv"), "w") as outfile:
            outfile.write("# tr_ms,te_ms,ti_ms,10.0,1.908,18.0\n")
        config = load_config(self.write("[sequence]\nschedule_path = \"fisp.csv\"\n[output]\ndirectory = \"runs\"\n"))
        self.assertEqual(os.path.join(self.directory, "fisp.csv"), config.sequence.schedule_path)
        self.assertEqual(os.path.join(self.directory, "runs"), config.output.directory)

    def test_missing_schedule_raises(self):
        with self.assertRaises(ConfigError):
            load_config(self.write("[sequence]\nschedule_path = \"missing.csv\"\n"))

    def test_unknown_section_raises(self):
        with self.assertRaises(ConfigError):
            load_config(self.write("[network]\nwidth = 3\n"))

    def test_unknown_key_raises(self):
        with self.assertRaises(ConfigError):
            load_config(self.write("[recon]\nmomentum = 0.9\n"))

    def test_wrong_types_raise(self):
        for text in ("[sequence]\nn_timeframes = 2.5\n", "[output]\nprevious = 1\n", "[output]\npreviews = 1\n",
                     "[recon]\nmode = 3\n", "[acquisition]\nsnr_db = []\n", "[bdae]\nepochs = true\n"):
            with self.assertRaises(ConfigError):
                load_config(self.write(text))

    def test_out_of_range_values_raise(self):
        for text in ("[sequence]\nte_ms = 20.0\n", "[dictionary]\nsvd_rank = 0\n", "[phantom]\nheight = 16\n",
                     "[acquisition]\nsnr_db = [-3]\n", "[recon]\nmode = \"sense\"\n", "[unet]\nlevels = -1\n"):
            with self.assertRaises(ConfigError):
                load_config(self.write(text))

    def test_unparseable_file_raises(self):
        with self.assertRaises(ConfigError):
            load_config(self.write("[sequence\n"))

    def test_missing_file_raises(self):
        with self.assertRaises(ConfigError):
            load_config(os.path.join(self.directory, "absent.toml"))


class TestOverrides(unittest.TestCase):
    """
    A test class for command line overrides.
    """
    def test_no_overrides_keep_the_config(self):
        config = load_config()
        self.assertEqual(config, apply_overrides(config))

    def test_overrides(self):
        config = apply_overrides(load_config(), mode="match", iterations=20, snr=25, seed=3, out="elsewhere",
                                 progress=True)
        self.assertEqual("match", config.recon.mode)
        self.assertEqual(20, config.recon.iterations)
        self.assertEqual(20, config.recon.log_every)
        self.assertEqual((25.0,), config.acquisition.snr_db)
        self.assertEqual(3, config.root_seed)
        self.assertEqual("elsewhere", config.output.directory)
        self.assertTrue(config.recon.progress)

    def test_invalid_override_raises(self):
        with self.assertRaises(ConfigError):
            apply_overrides(load_config(), iterations=0)

# E N D   O F   F I L E #######################################################
