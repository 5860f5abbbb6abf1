"""
Copyright (C) 2024 The mrfrecon authors
This project uses an MIT style license - see README.md for details.

This file contains the experiment stages driven by the command line:
simulate, pretrain, reconstruct and evaluate. Every stage writes its
artifacts below the output directory and records their hashes, the seeds
it used and the hashes of the artifacts it consumed in manifest.json, so
that a later stage can refuse to run on stale inputs.
"""
# I M P O R T S ###############################################################

import csv
import dataclasses
import hashlib
import json
import logging
import math
import os

from collections import namedtuple
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from mrfrecon.acquisition import load_kspace, load_trajectory, make_coil_maps, make_spiral_trajectory, \
    save_kspace, save_trajectory, simulate_kspace
from mrfrecon.bdae import DecoderNet, EncoderNet, evaluate_bdae, pretrain_bdae
from mrfrecon.dictionary import build_dictionary, compress, compute_svd_basis, load_dictionary, \
    save_dictionary, write_grid_csv
from mrfrecon.epg import SequenceParams, default_fisp_schedule, read_schedule, write_schedule
from mrfrecon.exceptions import ConfigError, ContainerError, DivergenceError, MissingArtifactError, \
    ReconstructionError
from mrfrecon.layers import load_checkpoint, save_checkpoint
from mrfrecon.metrics import evaluate_maps, mean_report, metric_mask
from mrfrecon.phantom import Phantom, load_maps, make_brain_phantom, save_maps, write_previews
from mrfrecon.reconstruct import MODES, read_log, reconstruct_bardip, reconstruct_dipmrf, reconstruct_match

# C O N S T A N T S ###########################################################

MANIFEST_NAME = "manifest.json"

COMMANDS = ("simulate", "pretrain", "reconstruct", "evaluate", "all")

EXIT_SUCCESS = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_MISSING_ARTIFACT = 4

BDAE_REPORT_COLUMNS = (
    "t1_ms", "t2_ms", "t1_estimate", "t2_estimate", "t1_error_pct", "t2_error_pct", "decoder_error"
)

METRICS_COLUMNS = ("slice", "snr_db", "mape_t1", "mape_t2", "psnr_pd", "n_pixels")

CONVERGENCE_COLUMNS = ("iter", "mape_t1", "mape_t2", "psnr_pd")

logger = logging.getLogger(__name__)

ReconTask = namedtuple('ReconTask', ['config', 'mode', 'slice_index', 'snr_db'])

# C L A S S E S ###############################################################


class RunLayout(object):
    """
    The file names of every artifact below an output directory.
    """
    def __init__(self, directory):
        self.directory = directory

    def path(self, *parts):
        return os.path.join(self.directory, *parts)

    def relative(self, path):
        return os.path.relpath(path, self.directory).replace(os.sep, "/")

    @property
    def schedule(self):
        return self.path("schedule.csv")

    @property
    def grid(self):
        return self.path("grid.csv")

    @property
    def dictionary(self):
        return self.path("dictionary.mrfd")

    @property
    def trajectory(self):
        return self.path("trajectory.mrft")

    @property
    def bdae(self):
        return self.path("bdae.mrfm")

    @property
    def bdae_report(self):
        return self.path("bdae_eval.csv")

    @property
    def bdae_history(self):
        return self.path("bdae_history.csv")

    @property
    def previews(self):
        return self.path("previews")

    def phantom(self, slice_index):
        return self.path("phantom_s{}.mrfq".format(slice_index))

    def kspace(self, slice_index, snr_db):
        return self.path("kspace_s{}_snr{}.mrfk".format(slice_index, snr_label(snr_db)))

    def recon_root(self, mode):
        return self.path("recon", mode)

    def recon_dir(self, mode, slice_index, snr_db):
        return self.path("recon", mode, "s{}_snr{}".format(slice_index, snr_label(snr_db)))

    def log(self, mode, slice_index, snr_db):
        return os.path.join(self.recon_dir(mode, slice_index, snr_db), "log.csv")

    def maps(self, mode, slice_index, snr_db):
        return os.path.join(self.recon_dir(mode, slice_index, snr_db), "maps.mrfq")

    def metrics(self, mode):
        return self.path("metrics_{}.csv".format(mode))

    def convergence(self, mode, snr_db):
        return self.path("convergence_{}_snr{}.csv".format(mode, snr_label(snr_db)))


class Manifest(object):
    """
    The record of every stage run in an output directory: the seeds it
    used, and the sha256 of the files it wrote and of the files it read.
    """
    def __init__(self, layout, data=None):
        self.layout = layout
        self.data = data if data is not None else dict(stages=dict())

    @classmethod
    def load(cls, layout):
        filename = layout.path(MANIFEST_NAME)
        if not os.path.isfile(filename):
            return cls(layout)
        with open(filename) as infile:
            try:
                return cls(layout, json.load(infile))
            except ValueError as error:
                raise MissingArtifactError("manifest [{}] is unreadable: {}".format(filename, error))

    def save(self):
        with open(self.layout.path(MANIFEST_NAME), "w") as outfile:
            outfile.write(json.dumps(self.data, indent=2, sort_keys=True))
            outfile.write("\n")

    def _hashes(self, paths):
        return {self.layout.relative(path): sha256_file(path) for path in paths}

    def record(self, stage, config, seeds, outputs, inputs=()):
        self.data["root_seed"] = config.root_seed
        self.data["stages"][stage] = dict(
            config_sha256=config_digest(config),
            seeds=seeds,
            outputs=self._hashes(outputs),
            inputs=self._hashes(inputs),
        )
        self.save()

    def verify(self, stage, required=()):
        """
        Checks that a stage ran and that everything it wrote and read is
        still on disk, unchanged.

        :param stage: the name of the stage
        :param required: paths that must be among the stage's outputs
        """
        entry = self.data["stages"].get(stage)
        if entry is None:
            raise MissingArtifactError("stage [{}] has not been run in [{}]".format(stage, self.layout.directory))
        for path in required:
            if self.layout.relative(path) not in entry["outputs"]:
                raise MissingArtifactError("stage [{}] did not produce [{}]".format(stage, path))
        for name, digest in sorted(list(entry["outputs"].items()) + list(entry["inputs"].items())):
            path = self.layout.path(name)
            if not os.path.isfile(path):
                raise MissingArtifactError("artifact [{}] of stage [{}] is missing".format(name, stage))
            if sha256_file(path) != digest:
                raise MissingArtifactError("artifact [{}] changed since stage [{}] ran".format(name, stage))

# F U N C T I O N S ###########################################################


def snr_label(snr_db):
    return "inf" if math.isinf(snr_db) else "{:g}".format(snr_db)


def derive_seed(root_seed, *labels):
    """
    Derives a 32 bit seed from the root seed and a stage label, by hashing.
    """
    text = "|".join(str(part) for part in (root_seed,) + labels)
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:4], "little")


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as infile:
        for block in iter(lambda: infile.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def config_digest(config):
    payload = json.dumps(config.as_dict(), sort_keys=True, default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def build_sequence(config):
    """
    Returns the sequence of the experiment: the schedule file when one is
    configured, otherwise the default train with the configured timings.
    """
    settings = config.sequence
    if settings.schedule_path:
        seq = read_schedule(settings.schedule_path)
        if seq.n_timeframes < settings.n_timeframes:
            raise ConfigError("schedule [{}] has {} pulses, {} requested".format(
                settings.schedule_path, seq.n_timeframes, settings.n_timeframes))
        return seq.truncated(settings.n_timeframes)
    default = default_fisp_schedule(settings.n_timeframes)
    return SequenceParams(default.flip_angles_deg, settings.tr_ms, settings.te_ms, settings.ti_ms).validate()


def grid_values(low, high, step):
    return np.arange(low, high + step / 2.0, step)


def _slices_and_snrs(config):
    return [
        (slice_index, snr_db)
        for slice_index in range(config.phantom.n_slices)
        for snr_db in config.acquisition.snr_db
    ]


def cmd_simulate(config):
    """
    Builds the dictionary, basis, trajectory, phantoms and simulated
    k-space of every slice and SNR.
    """
    layout = RunLayout(config.output.directory)
    os.makedirs(layout.directory, exist_ok=True)
    manifest = Manifest.load(layout)
    root = config.root_seed
    settings = config.dictionary

    seq = build_sequence(config)
    dictionary = build_dictionary(
        grid_values(settings.t1_min, settings.t1_max, settings.t1_step),
        grid_values(settings.t2_min, settings.t2_max, settings.t2_step),
        seq, progress=config.recon.progress,
    )
    basis = compute_svd_basis(dictionary, settings.svd_rank)
    write_schedule(layout.schedule, seq)
    write_grid_csv(layout.grid, dictionary.grid)
    save_dictionary(layout.dictionary, dictionary, basis)

    height, width = config.phantom.height, config.phantom.width
    traj = make_spiral_trajectory(
        height, width, seq.n_timeframes, config.trajectory.samples_per_frame,
        config.trajectory.density_exponent, config.trajectory.rotations,
    )
    save_trajectory(layout.trajectory, traj)
    coils = make_coil_maps(height, width, config.acquisition.n_coils)

    outputs = [layout.schedule, layout.grid, layout.dictionary, layout.trajectory]
    seeds = dict()
    for slice_index in range(config.phantom.n_slices):
        phantom_seed = derive_seed(root, "phantom", slice_index)
        seeds["phantom_s{}".format(slice_index)] = phantom_seed
        phantom = make_brain_phantom(height, width, phantom_seed)
        save_maps(layout.phantom(slice_index), phantom)
        outputs.append(layout.phantom(slice_index))
        for snr_db in config.acquisition.snr_db:
            noise_seed = derive_seed(root, "noise", slice_index, snr_label(snr_db))
            seeds["noise_s{}_snr{}".format(slice_index, snr_label(snr_db))] = noise_seed
            y = simulate_kspace(phantom.qmaps, seq, traj, coils, basis, snr_db, noise_seed)
            save_kspace(layout.kspace(slice_index, snr_db), y, coils)
            outputs.append(layout.kspace(slice_index, snr_db))
            logger.info("simulated slice %d at SNR %s dB", slice_index, snr_label(snr_db))

    manifest.record("simulate", config, seeds, outputs)
    return outputs


def load_bdae(filename, n_channels):
    """
    Rebuilds the frozen encoder and decoder stored by cmd_pretrain.
    """
    rng = np.random.default_rng(0)
    encoder = EncoderNet(n_channels, rng)
    decoder = DecoderNet(n_channels, rng)
    load_checkpoint(filename, dict(encoder=encoder, decoder=decoder))
    return encoder.freeze(), decoder.freeze()


def _load_basis(layout):
    dictionary, basis = load_dictionary(layout.dictionary)
    if basis is None:
        raise MissingArtifactError("dictionary [{}] carries no SVD basis".format(layout.dictionary))
    return dictionary, basis


def _metric_mask(config, phantom):
    return metric_mask(phantom.qmaps, phantom.mask, config.dictionary.t1_max, config.dictionary.t2_max)


def cmd_pretrain(config):
    """
    Pretrains the autoencoder on the compressed dictionary and writes the
    checkpoint, the per-atom evaluation and the loss history.

    :return: a dict with the T1 and T2 MAPE over the noiseless atoms
    """
    layout = RunLayout(config.output.directory)
    manifest = Manifest.load(layout)
    manifest.verify("simulate", [layout.dictionary])
    dictionary, basis = _load_basis(layout)
    cdict = compress(dictionary, basis)

    settings = config.bdae
    seed = derive_seed(config.root_seed, "pretrain")
    history = []
    encoder, decoder = pretrain_bdae(
        cdict, epochs=settings.epochs, aug=settings.augmentation(), seed=seed, lr=settings.lr,
        batch_size=settings.batch_size, lambda_e=settings.lambda_e, t2_weight=settings.t2_weight,
        history=history, progress=config.recon.progress,
    )
    save_checkpoint(layout.bdae, dict(encoder=encoder, decoder=decoder), settings.epochs)

    reports = evaluate_bdae(encoder, decoder, cdict)
    with open(layout.bdae_report, "w", newline="") as outfile:
        writer = csv.writer(outfile)
        writer.writerow(BDAE_REPORT_COLUMNS)
        for report in reports:
            writer.writerow([repr(float(value)) for value in report])
    with open(layout.bdae_history, "w", newline="") as outfile:
        writer = csv.writer(outfile)
        writer.writerow(("epoch", "loss"))
        for epoch, loss in enumerate(history):
            writer.writerow((epoch, repr(loss)))

    summary = dict(
        mape_t1=float(np.mean([report.t1_error_pct for report in reports])),
        mape_t2=float(np.mean([report.t2_error_pct for report in reports])),
    )
    logger.info("encoder MAPE on noiseless atoms: T1 %.3f%% T2 %.3f%%", summary["mape_t1"], summary["mape_t2"])
    manifest.record("pretrain", config, dict(pretrain=seed),
                    [layout.bdae, layout.bdae_report, layout.bdae_history], [layout.dictionary])
    return summary


def run_recon_task(task):
    """
    Reconstructs one slice at one SNR. Runs in a worker process when jobs
    are parallel, so it loads all of its inputs itself.

    :return: a tuple (seed, list of files written)
    """
    config, mode = task.config, task.mode
    layout = RunLayout(config.output.directory)
    _, basis = _load_basis(layout)
    traj = load_trajectory(layout.trajectory)
    y, coils = load_kspace(layout.kspace(task.slice_index, task.snr_db))
    phantom = load_maps(layout.phantom(task.slice_index))

    seed = derive_seed(config.root_seed, "reconstruct", mode, task.slice_index, snr_label(task.snr_db))
    cfg = dataclasses.replace(config.recon, mode=mode, seed=seed)
    directory = layout.recon_dir(mode, task.slice_index, task.snr_db)
    os.makedirs(directory, exist_ok=True)
    log_path = layout.log(mode, task.slice_index, task.snr_db)
    logger.info("reconstructing slice %d at SNR %s dB with %s", task.slice_index, snr_label(task.snr_db), mode)

    truth_mask = _metric_mask(config, phantom)
    if mode == "match":
        dictionary, _ = _load_basis(layout)
        result = reconstruct_match(y, traj, coils, basis, compress(dictionary, basis), cfg, truth=phantom.qmaps,
                                   truth_mask=truth_mask, log_path=log_path)
    elif mode == "bardip":
        encoder, decoder = load_bdae(layout.bdae, basis.k)
        result = reconstruct_bardip(y, traj, coils, basis, encoder, decoder, cfg, truth=phantom.qmaps,
                                    truth_mask=truth_mask, unet_config=config.unet, log_path=log_path,
                                    checkpoint_dir=directory)
    else:
        _, decoder = load_bdae(layout.bdae, basis.k)
        result = reconstruct_dipmrf(y, traj, coils, basis, decoder, cfg, truth=phantom.qmaps,
                                    truth_mask=truth_mask, unet_config=config.unet, log_path=log_path,
                                    checkpoint_dir=directory)

    maps_path = layout.maps(mode, task.slice_index, task.snr_db)
    save_maps(maps_path, Phantom(result.qmaps, phantom.mask, None, phantom.height, phantom.width))
    final = result.log.rows[-1]
    logger.info("final MAPE T1 %.3f%% T2 %.3f%% PSNR %.2f dB", final.mape_t1, final.mape_t2, final.psnr_pd)
    return seed, [log_path, maps_path]


def cmd_reconstruct(config, mode=None, jobs=1):
    """
    Reconstructs every slice and SNR with one mode, optionally in parallel
    worker processes writing to disjoint directories.
    """
    mode = mode or config.recon.mode
    if mode not in MODES:
        raise ConfigError("unknown mode [{}]".format(mode))
    layout = RunLayout(config.output.directory)
    manifest = Manifest.load(layout)
    jobs_list = _slices_and_snrs(config)
    inputs = [layout.dictionary, layout.trajectory] + [
        path for slice_index, snr_db in jobs_list
        for path in (layout.phantom(slice_index), layout.kspace(slice_index, snr_db))
    ]
    manifest.verify("simulate", inputs)
    if mode != "match":
        manifest.verify("pretrain", [layout.bdae])
        inputs.append(layout.bdae)

    tasks = [ReconTask(config, mode, slice_index, snr_db) for slice_index, snr_db in jobs_list]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_recon_task, tasks))
    else:
        results = [run_recon_task(task) for task in tasks]

    seeds = {
        "s{}_snr{}".format(task.slice_index, snr_label(task.snr_db)): seed
        for task, (seed, _) in zip(tasks, results)
    }
    outputs = [path for _, paths in results for path in paths]
    manifest.record("reconstruct_" + mode, config, seeds, outputs, inputs)
    return outputs


def _write_convergence(filename, logs):
    """
    Averages the metric columns of logs sharing the same iterations.
    """
    iterations = [row.iter for row in logs[0].rows]
    if any([row.iter for row in log.rows] != iterations for log in logs):
        raise ReconstructionError("logs of [{}] do not share their iterations".format(filename))
    columns = {
        name: np.mean([log.column(name) for log in logs], axis=0)
        for name in CONVERGENCE_COLUMNS[1:]
    }
    with open(filename, "w", newline="") as outfile:
        writer = csv.writer(outfile)
        writer.writerow(CONVERGENCE_COLUMNS)
        for index, iteration in enumerate(iterations):
            writer.writerow([iteration] + [repr(float(columns[name][index])) for name in CONVERGENCE_COLUMNS[1:]])


def cmd_evaluate(config, mode=None):
    """
    Compares the reconstructed maps of one mode (or of every mode with
    results) to the phantoms. Writes metrics_<mode>.csv with one row per
    slice and SNR plus one mean row per SNR, convergence_<mode>_snr<snr>.csv
    from the iteration logs, and PNG previews.

    :return: a dict mapping mode to its list of (slice, snr, MetricsReport)
    """
    layout = RunLayout(config.output.directory)
    modes = [mode] if mode else [name for name in MODES if os.path.isdir(layout.recon_root(name))]
    if not modes:
        raise MissingArtifactError("no reconstructions found in [{}]".format(layout.directory))
    pairs = _slices_and_snrs(config)
    manifest = Manifest.load(layout)
    manifest.verify("simulate", [layout.phantom(slice_index) for slice_index in range(config.phantom.n_slices)])
    for name in modes:
        manifest.verify("reconstruct_" + name, [
            path for slice_index, snr_db in pairs
            for path in (layout.maps(name, slice_index, snr_db), layout.log(name, slice_index, snr_db))
        ])
    if config.output.previews:
        os.makedirs(layout.previews, exist_ok=True)

    results = dict()
    for name in modes:
        rows = []
        for slice_index, snr_db in pairs:
            maps_path = layout.maps(name, slice_index, snr_db)
            try:
                estimate = load_maps(maps_path)
                truth = load_maps(layout.phantom(slice_index))
            except ContainerError as error:
                raise MissingArtifactError(error.value)
            report = evaluate_maps(estimate.qmaps, truth.qmaps, _metric_mask(config, truth))
            rows.append((slice_index, snr_db, report))
            if config.output.previews:
                prefix = os.path.join(layout.previews, "{}_s{}_snr{}".format(name, slice_index, snr_label(snr_db)))
                write_previews(prefix, Phantom(estimate.qmaps, truth.mask, None, truth.height, truth.width))
                write_previews(os.path.join(layout.previews, "truth_s{}".format(slice_index)), truth)

        with open(layout.metrics(name), "w", newline="") as outfile:
            writer = csv.writer(outfile)
            writer.writerow(METRICS_COLUMNS)
            for slice_index, snr_db, report in rows:
                writer.writerow([slice_index, snr_label(snr_db)] + _report_fields(report))
            for snr_db in config.acquisition.snr_db:
                mean = mean_report([report for _, snr, report in rows if snr == snr_db])
                writer.writerow(["mean", snr_label(snr_db)] + _report_fields(mean))

        for snr_db in config.acquisition.snr_db:
            logs = [
                read_log(layout.log(name, slice_index, snr_db))
                for slice_index in range(config.phantom.n_slices)
                if os.path.isfile(layout.log(name, slice_index, snr_db))
            ]
            if logs:
                _write_convergence(layout.convergence(name, snr_db), logs)
        results[name] = rows
        logger.info("evaluated %s over %d reconstructions", name, len(rows))
    return results


def _report_fields(report):
    return [repr(float(report.mape_t1)), repr(float(report.mape_t2)), repr(float(report.psnr_pd)), report.n_pixels]


def cmd_all(config, mode=None, jobs=1):
    """
    Runs every stage. Without a mode, all reconstruction modes are run.
    """
    modes = [mode] if mode else list(MODES)
    cmd_simulate(config)
    if any(name != "match" for name in modes):
        cmd_pretrain(config)
    for name in modes:
        cmd_reconstruct(config, name, jobs)
    return cmd_evaluate(config, mode)


def run_command(command, config, mode=None, jobs=1):
    """
    Dispatches a command line subcommand.
    """
    if command == "simulate":
        return cmd_simulate(config)
    if command == "pretrain":
        return cmd_pretrain(config)
    if command == "reconstruct":
        return cmd_reconstruct(config, mode, jobs)
    if command == "evaluate":
        return cmd_evaluate(config, mode)
    if command == "all":
        return cmd_all(config, mode, jobs)
    raise ConfigError("unknown command [{}]".format(command))


def exit_code(error):
    """
    Returns the process exit code reporting an error. I/O errors (OSError)
    and every other error share EXIT_FAILURE.
    """
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, DivergenceError):
        return EXIT_DIVERGENCE
    if isinstance(error, MissingArtifactError):
        return EXIT_MISSING_ARTIFACT
    return EXIT_FAILURE

# E N D   O F   F I L E #######################################################
