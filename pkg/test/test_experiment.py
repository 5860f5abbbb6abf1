"""
Copyright (C) 2024 The mrfrecon authors
This project uses an MIT style license - see README.md for details.
"""
# I M P O R T S ###############################################################

import hashlib
import json
import os
import shutil
import tempfile
import unittest

from mrfrecon.config import ExperimentConfig, OutputConfig, SequenceConfig
from mrfrecon.epg import write_schedule, default_fisp_schedule
from mrfrecon.exceptions import (
    ConfigError, ContainerError, DivergenceError, MissingArtifactError, ReconstructionError
)
from mrfrecon.experiment import (
    EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_FAILURE, EXIT_MISSING_ARTIFACT, MANIFEST_NAME, Manifest, RunLayout,
    build_sequence, derive_seed, exit_code, grid_values, run_command, sha256_file, snr_label
)

# C L A S S E S ###############################################################


class TestSeeds(unittest.TestCase):
    """
    A test class for seed derivation and labels.
    """
    def test_seed_is_the_leading_bytes_of_the_label_hash(self):
        digest = hashlib.sha256(b"7|noise|0|inf").digest()
        self.assertEqual(int.from_bytes(digest[:4], "little"), derive_seed(7, "noise", 0, "inf"))

    def test_labels_give_independent_seeds(self):
        seeds = {derive_seed(0, "phantom", 0), derive_seed(0, "phantom", 1), derive_seed(1, "phantom", 0)}
        self.assertEqual(3, len(seeds))
        self.assertTrue(all(0 <= seed < 2 ** 32 for seed in seeds))

    def test_snr_labels(self):
        self.assertEqual("inf", snr_label(float("inf")))
        self.assertEqual("35", snr_label(35.0))
        self.assertEqual("22.5", snr_label(22.5))

    def test_grid_values_include_the_upper_bound(self):
        self.assertEqual([100.0, 200.0, 300.0], list(grid_values(100.0, 300.0, 100.0)))


class TestSequence(unittest.TestCase):
    """
    A test class for the experiment sequence.
    """
    def setUp(self):
        self.directory = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.directory)

    def test_default_schedule_uses_configured_timings(self):
        config = ExperimentConfig(sequence=SequenceConfig(n_timeframes=20, tr_ms=12.0, te_ms=2.0, ti_ms=20.0))
        seq = build_sequence(config)
        self.assertEqual(20, seq.n_timeframes)
        self.assertEqual((12.0, 2.0, 20.0), (seq.tr_ms, seq.te_ms, seq.ti_ms))

    def test_schedule_file_is_truncated(self):
        filename = os.path.join(self.directory, "fisp.csv")
        write_schedule(filename, default_fisp_schedule(30))
        seq = build_sequence(ExperimentConfig(sequence=SequenceConfig(n_timeframes=10, schedule_path=filename)))
        self.assertEqual(10, seq.n_timeframes)

    def test_short_schedule_file_raises(self):
        filename = os.path.join(self.directory, "fisp.csv")
        write_schedule(filename, default_fisp_schedule(5))
        with self.assertRaises(ConfigError):
            build_sequence(ExperimentConfig(sequence=SequenceConfig(n_timeframes=10, schedule_path=filename)))


class TestManifest(unittest.TestCase):
    """
    A test class for the run manifest.
    """
    def setUp(self):
        """
        Common setup routines needed for all unit tests.
        """
        self.directory = tempfile.mkdtemp()
        self.layout = RunLayout(self.directory)
        self.config = ExperimentConfig(output=OutputConfig(directory=self.directory))
        self.output = self.layout.path("grid.csv")
        self.source = self.layout.path("schedule.csv")
        for filename in (self.output, self.source):
            with open(filename, "w") as outfile:
                outfile.write("t1_ms,t2_ms\n")
        Manifest.load(self.layout).record("simulate", self.config, dict(phantom_s0=5), [self.output], [self.source])

    def tearDown(self):
        shutil.rmtree(self.directory)

    def test_record_writes_hashes_and_seeds(self):
        with open(self.layout.path(MANIFEST_NAME)) as infile:
            data = json.load(infile)
        stage = data["stages"]["simulate"]
        self.assertEqual(dict(phantom_s0=5), stage["seeds"])
        self.assertEqual(dict([("grid.csv", sha256_file(self.output))]), stage["outputs"])
        self.assertEqual(["schedule.csv"], list(stage["inputs"]))
        self.assertEqual(0, data["root_seed"])

    def test_verify_accepts_unchanged_artifacts(self):
        Manifest.load(self.layout).verify("simulate", [self.output])

    def test_missing_stage_raises(self):
        with self.assertRaises(MissingArtifactError):
            Manifest.load(self.layout).verify("pretrain")

    def test_unrecorded_output_raises(self):
        with self.assertRaises(MissingArtifactError):
            Manifest.load(self.layout).verify("simulate", [self.layout.path("dictionary.mrfd")])

    def test_changed_output_raises(self):
        with open(self.output, "a") as outfile:
            outfile.write("100,10\n")
        with self.assertRaises(MissingArtifactError):
            Manifest.load(self.layout).verify("simulate")

    def test_deleted_input_raises(self):
        os.remove(self.source)
        with self.assertRaises(MissingArtifactError):
            Manifest.load(self.layout).verify("simulate")

    def test_unreadable_manifest_raises(self):
        with open(self.layout.path(MANIFEST_NAME), "w") as outfile:
            outfile.write("{")
        with self.assertRaises(MissingArtifactError):
            Manifest.load(self.layout)

    def test_absent_manifest_is_empty(self):
        self.assertEqual(dict(stages=dict()), Manifest.load(RunLayout(os.path.join(self.directory, "new"))).data)


class TestCommands(unittest.TestCase):
    """
    A test class for command dispatch and exit codes.
    """
    def setUp(self):
        self.directory = tempfile.mkdtemp()
        self.config = ExperimentConfig(output=OutputConfig(directory=self.directory))

    def tearDown(self):
        shutil.rmtree(self.directory)

    def test_exit_codes(self):
        self.assertEqual(EXIT_CONFIG, exit_code(ConfigError("bad")))
        self.assertEqual(EXIT_DIVERGENCE, exit_code(DivergenceError("nan", 3)))
        self.assertEqual(EXIT_MISSING_ARTIFACT, exit_code(MissingArtifactError("gone")))
        self.assertEqual(EXIT_FAILURE, exit_code(ContainerError("corrupt")))
        self.assertEqual(EXIT_FAILURE, exit_code(ReconstructionError("other")))
        self.assertEqual(EXIT_FAILURE, exit_code(NotADirectoryError("not a directory")))

    def test_unknown_command_raises(self):
        with self.assertRaises(ConfigError):
            run_command("train", self.config)

    def test_stages_need_their_predecessors(self):
        for command in ("pretrain", "reconstruct", "evaluate"):
            with self.assertRaises(MissingArtifactError):
                run_command(command, self.config)

    def test_unknown_mode_raises(self):
        with self.assertRaises(ConfigError):
            run_command("reconstruct", self.config, mode="sense")

# E N D   O F   F I L E #######################################################
