"""
Copyright (C) 2024 The mrfrecon authors
This project uses an MIT style license - see README.md for details.

This file contains Exceptions for the MRF reconstruction engine.
"""
# C L A S S E S ###############################################################


class ReconstructionError(Exception):
    """
    Base class for every error raised by the reconstruction engine. Like the
    other errors here, it carries a single value describing what went wrong.
    """
    def __init__(self, value):
        super().__init__(value)
        self.value = value

    def __str__(self):
        return repr(self.value)


class ValidationError(ReconstructionError):
    """
    Validation errors occur when an operation receives parameters that are
    out of range or arrays whose dimensions do not agree with each other.
    """
    pass


class SimulationDivergedError(ReconstructionError):
    """
    Raised when a Bloch simulation produces a non-finite state. This usually
    means the tissue or sequence parameters were invalid.
    """
    pass


class DivergenceError(ReconstructionError):
    """
    Raised when a training loss or gradient becomes non-finite. The iteration
    where it happened and the last good checkpoint (if any) are kept so that
    the caller can report them.
    """
    def __init__(self, value, iteration=None, checkpoint=None):
        super().__init__(value)
        self.iteration = iteration
        self.checkpoint = checkpoint


class ContainerError(ReconstructionError):
    """
    Container errors occur when a binary artifact cannot be decoded, for
    example because of a wrong magic, an unknown version or truncated data.
    """
    pass


class ConfigError(ReconstructionError):
    """
    Config errors occur when the experiment configuration file cannot be
    parsed, or when one of its values is outside its documented range.
    """
    pass


class MissingArtifactError(ReconstructionError):
    """
    Raised when a stage needs an artifact that an earlier stage should have
    produced, or when the artifact no longer matches its manifest hash.
    """
    pass

# E N D   O F   F I L E #######################################################
