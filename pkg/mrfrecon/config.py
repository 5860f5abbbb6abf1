"""
Copyright (C) 2024 The mrfrecon authors
This project uses an MIT style license - see README.md for details.

This file contains the experiment configuration: one dataclass per TOML
section, the loader that validates a configuration file, and the command
line overrides.
"""
# I M P O R T S ###############################################################

import dataclasses
import os

from dataclasses import dataclass, field

try:
    import tomllib
except ImportError:
    import tomli as tomllib

from mrfrecon.bdae import AugmentationConfig
from mrfrecon.exceptions import ConfigError, ReconstructionError
from mrfrecon.reconstruct import MODES, ReconConfig
from mrfrecon.unet import UnetConfig

# C L A S S E S ###############################################################


@dataclass(frozen=True)
class SequenceConfig:
    n_timeframes: int = 200
    tr_ms: float = 10.0
    te_ms: float = 1.908
    ti_ms: float = 18.0
    schedule_path: str = ""


@dataclass(frozen=True)
class DictionaryConfig:
    t1_min: float = 100.0
    t1_max: float = 3000.0
    t1_step: float = 100.0
    t2_min: float = 10.0
    t2_max: float = 300.0
    t2_step: float = 10.0
    svd_rank: int = 5


@dataclass(frozen=True)
class TrajectoryConfig:
    samples_per_frame: int = 600
    density_exponent: float = 2.0
    rotations: int = 8


@dataclass(frozen=True)
class AcquisitionConfig:
    n_coils: int = 1
    snr_db: tuple = (35.0, 40.0)
    seed: int = 0


@dataclass(frozen=True)
class PhantomConfig:
    height: int = 64
    width: int = 64
    n_slices: int = 1


@dataclass(frozen=True)
class BdaeConfig:
    epochs: int = 1000
    noise_sigma: float = 0.01
    lambda_e: float = 0.1
    t2_weight: float = 10.0
    lr: float = 1e-3
    batch_size: int = 64

    def augmentation(self):
        return AugmentationConfig(noise_sigma=self.noise_sigma)


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "runs/desk"
    previews: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    sequence: SequenceConfig = field(default_factory=SequenceConfig)
    dictionary: DictionaryConfig = field(default_factory=DictionaryConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    bdae: BdaeConfig = field(default_factory=BdaeConfig)
    unet: UnetConfig = field(default_factory=UnetConfig)
    recon: ReconConfig = field(default_factory=ReconConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def root_seed(self):
        return self.acquisition.seed

    def as_dict(self):
        return dataclasses.asdict(self)

# F U N C T I O N S ###########################################################


def _build_section(name, cls, values):
    """
    Creates a section dataclass from a TOML table, rejecting unknown keys
    and values of the wrong type.
    """
    if not isinstance(values, dict):
        raise ConfigError("[{}] must be a table".format(name))
    values = dict(values)
    if name == "recon" and "lambda" in values:
        values["lam"] = values.pop("lambda")
    known = {item.name: item for item in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError("unknown keys in [{}]: {}".format(name, ", ".join(unknown)))
    converted = dict()
    for key, value in values.items():
        default = getattr(cls(), key)
        converted[key] = _convert(name, key, value, default)
    return cls(**converted)


def _convert(section, key, value, default):
    label = "{}.{}".format(section, key)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError("{} must be true or false".format(label))
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError("{} must be an integer".format(label))
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("{} must be a number".format(label))
        return float(value)
    if isinstance(default, tuple):
        values = value if isinstance(value, list) else [value]
        if not values or any(isinstance(item, bool) or not isinstance(item, (int, float)) for item in values):
            raise ConfigError("{} must be a non-empty list of numbers".format(label))
        return tuple(float(item) for item in values)
    if not isinstance(value, str):
        raise ConfigError("{} must be a string".format(label))
    return value


def validate_config(config):
    """
    Checks every value against its documented range.

    :param config: the ExperimentConfig
    :return: the config
    """
    checks = [
        (config.sequence.n_timeframes >= 1, "sequence.n_timeframes must be at least 1"),
        (0 < config.sequence.te_ms < config.sequence.tr_ms, "sequence needs 0 < te_ms < tr_ms"),
        (config.sequence.ti_ms >= 0, "sequence.ti_ms must not be negative"),
        (0 < config.dictionary.t1_min <= config.dictionary.t1_max, "dictionary needs 0 < t1_min <= t1_max"),
        (0 < config.dictionary.t2_min <= config.dictionary.t2_max, "dictionary needs 0 < t2_min <= t2_max"),
        (config.dictionary.t1_step > 0 and config.dictionary.t2_step > 0, "dictionary steps must be positive"),
        (1 <= config.dictionary.svd_rank <= config.sequence.n_timeframes,
         "dictionary.svd_rank must lie in [1, n_timeframes]"),
        (config.trajectory.samples_per_frame >= 1, "trajectory.samples_per_frame must be at least 1"),
        (config.trajectory.density_exponent >= 1, "trajectory.density_exponent must be at least 1"),
        (config.trajectory.rotations >= 1, "trajectory.rotations must be at least 1"),
        (config.acquisition.n_coils >= 1, "acquisition.n_coils must be at least 1"),
        (all(snr > 0 for snr in config.acquisition.snr_db), "acquisition.snr_db values must be positive"),
        (config.acquisition.seed >= 0, "acquisition.seed must not be negative"),
        (config.phantom.height >= 32 and config.phantom.width >= 32, "phantom must be at least 32x32"),
        (config.phantom.n_slices >= 1, "phantom.n_slices must be at least 1"),
        (config.bdae.epochs >= 0, "bdae.epochs must not be negative"),
        (config.bdae.noise_sigma >= 0, "bdae.noise_sigma must not be negative"),
        (config.bdae.lambda_e >= 0 and config.bdae.t2_weight >= 0, "bdae loss weights must not be negative"),
        (config.bdae.lr > 0, "bdae.lr must be positive"),
        (config.bdae.batch_size >= 0, "bdae.batch_size must not be negative"),
        (config.recon.mode in MODES, "recon.mode must be one of {}".format(", ".join(MODES))),
    ]
    for passed, message in checks:
        if not passed:
            raise ConfigError(message)
    try:
        config.unet.validate()
        config.recon.validate()
    except ReconstructionError as error:
        raise ConfigError(error.value)
    if config.sequence.schedule_path and not os.path.isfile(config.sequence.schedule_path):
        raise ConfigError("schedule file [{}] does not exist".format(config.sequence.schedule_path))
    return config


SECTIONS = {item.name: item.default_factory for item in dataclasses.fields(ExperimentConfig)}


def load_config(filename=None):
    """
    Loads and validates an experiment configuration. Missing sections and
    keys take their defaults; paths are resolved relative to the file.

    :param filename: the TOML file to read, or None for the defaults
    :return: an ExperimentConfig
    """
    if filename is None:
        return validate_config(ExperimentConfig())
    try:
        with open(filename, "rb") as infile:
            document = tomllib.load(infile)
    except OSError as error:
        raise ConfigError("could not read config [{}]: {}".format(filename, error.strerror))
    except tomllib.TOMLDecodeError as error:
        raise ConfigError("could not parse config [{}]: {}".format(filename, error))

    unknown = sorted(set(document) - set(SECTIONS))
    if unknown:
        raise ConfigError("unknown sections: {}".format(", ".join(unknown)))
    sections = {name: _build_section(name, SECTIONS[name], document.get(name, {})) for name in SECTIONS}

    base = os.path.dirname(os.path.abspath(filename))
    sequence = sections["sequence"]
    if sequence.schedule_path and not os.path.isabs(sequence.schedule_path):
        sections["sequence"] = dataclasses.replace(
            sequence, schedule_path=os.path.join(base, sequence.schedule_path))
    output = sections["output"]
    if not os.path.isabs(output.directory):
        sections["output"] = dataclasses.replace(output, directory=os.path.join(base, output.directory))
    return validate_config(ExperimentConfig(**sections))


def apply_overrides(config, mode=None, iterations=None, snr=None, seed=None, out=None, progress=None):
    """
    Returns a copy of config with the command line flags applied.
    """
    recon = config.recon
    if mode is not None:
        recon = dataclasses.replace(recon, mode=mode)
    if progress is not None:
        recon = dataclasses.replace(recon, progress=progress)
    if iterations is not None:
        recon = dataclasses.replace(recon, iterations=iterations, log_every=min(recon.log_every, iterations))
    acquisition = config.acquisition
    if snr is not None:
        acquisition = dataclasses.replace(acquisition, snr_db=(float(snr),))
    if seed is not None:
        acquisition = dataclasses.replace(acquisition, seed=seed)
    output = config.output
    if out is not None:
        output = dataclasses.replace(output, directory=out)
    return validate_config(dataclasses.replace(
        config, recon=recon, acquisition=acquisition, output=output))

# E N D   O F   F I L E #######################################################
