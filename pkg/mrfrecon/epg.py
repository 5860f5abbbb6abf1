"""
Copyright (C) 2024 The mrfrecon authors
This project uses an MIT style license - see README.md for details.

This file contains the extended phase graph (EPG) simulator that produces
FISP fingerprints, plus the brute-force isochromat simulator used to
validate it.
"""
# I M P O R T S ###############################################################

import logging

from collections import namedtuple

import numpy as np

from mrfrecon.exceptions import SimulationDivergedError, ValidationError

# C O N S T A N T S ###########################################################

DEFAULT_TR_MS = 10.0
DEFAULT_TE_MS = 1.908
DEFAULT_TI_MS = 18.0

# Sinusoidal lobes of the default flip angle train
LOBE_LENGTH = 250
LOBE_PEAKS_DEG = (60.0, 70.0, 35.0, 55.0)
BASE_FLIP_DEG = 5.0

# Below this many spins the isochromat model aliases dephased states
MIN_ACCURATE_SPINS = 100

logger = logging.getLogger(__name__)

TissueParams = namedtuple('TissueParams', ['t1_ms', 't2_ms', 'pd'])

# C L A S S E S ###############################################################


class SequenceParams(namedtuple('SequenceParams', [
        'flip_angles_deg', 'tr_ms', 'te_ms', 'ti_ms', 'inversion'])):
    """
    The timing and flip angle train of an inversion-prepared FISP sequence.
    When inversion is False the first pulse sees equilibrium magnetization.
    """
    __slots__ = ()

    def __new__(cls, flip_angles_deg, tr_ms, te_ms, ti_ms, inversion=True):
        angles = np.atleast_1d(np.asarray(flip_angles_deg, dtype=np.float64))
        return super().__new__(
            cls, angles, float(tr_ms), float(te_ms), float(ti_ms), bool(inversion)
        )

    @property
    def n_timeframes(self):
        return self.flip_angles_deg.shape[0]

    def validate(self):
        """
        Checks the sequence invariants.

        :return: the sequence itself, so calls can be chained
        """
        if self.flip_angles_deg.ndim != 1 or self.n_timeframes < 1:
            raise ValidationError("sequence needs at least one flip angle")
        if not np.all(np.isfinite(self.flip_angles_deg)):
            raise ValidationError("flip angles must be finite")
        if np.any(self.flip_angles_deg < 0) or np.any(self.flip_angles_deg > 180):
            raise ValidationError("flip angles must lie in [0, 180] degrees")
        if not 0 < self.te_ms < self.tr_ms:
            raise ValidationError(
                "expected 0 < te_ms < tr_ms, but got te_ms={} tr_ms={}".format(
                    self.te_ms, self.tr_ms
                )
            )
        if self.ti_ms < 0:
            raise ValidationError("ti_ms must not be negative, got {}".format(self.ti_ms))
        return self

    def truncated(self, n_timeframes):
        """
        Returns the same sequence keeping only its first n_timeframes pulses.

        :param n_timeframes: the number of pulses to keep
        :return: a new SequenceParams
        """
        return SequenceParams(
            self.flip_angles_deg[:n_timeframes], self.tr_ms, self.te_ms,
            self.ti_ms, self.inversion
        )

# F U N C T I O N S ###########################################################


def check_relaxation(t1_ms, t2_ms):
    """
    Converts relaxation times to matching 1D float arrays and checks that
    they are finite and positive.

    :param t1_ms: scalar or array of T1 values in ms
    :param t2_ms: scalar or array of T2 values in ms
    :return: a tuple of 1D arrays (t1, t2)
    """
    t1 = np.atleast_1d(np.asarray(t1_ms, dtype=np.float64)).ravel()
    t2 = np.atleast_1d(np.asarray(t2_ms, dtype=np.float64)).ravel()
    if t1.shape != t2.shape:
        raise ValidationError("got {} T1 values but {} T2 values".format(t1.size, t2.size))
    for name, values in (("T1", t1), ("T2", t2)):
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise ValidationError("{} values must be finite and positive".format(name))
    return t1, t2


def default_fisp_schedule(n_timeframes):
    """
    Builds the default flip angle train: consecutive half-sine lobes of
    LOBE_LENGTH pulses with different peak angles, on top of a small base
    angle. The train for a shorter L is a prefix of the train for a longer L.

    :param n_timeframes: the number of pulses L
    :return: a SequenceParams with the default TR/TE/TI timings
    """
    if int(n_timeframes) != n_timeframes or n_timeframes < 1:
        raise ValidationError("expected L >= 1, but got {}".format(n_timeframes))
    frames = np.arange(int(n_timeframes))
    peaks = np.asarray(LOBE_PEAKS_DEG)[(frames // LOBE_LENGTH) % len(LOBE_PEAKS_DEG)]
    phase = np.pi * (frames % LOBE_LENGTH) / LOBE_LENGTH
    angles = BASE_FLIP_DEG + (peaks - BASE_FLIP_DEG) * np.sin(phase)
    return SequenceParams(angles, DEFAULT_TR_MS, DEFAULT_TE_MS, DEFAULT_TI_MS)


def _rotate(f_plus, f_minus, z, alpha):
    """
    Applies an RF pulse of angle alpha about the y axis to every EPG state.
    """
    cos_half = np.cos(alpha / 2) ** 2
    sin_half = np.sin(alpha / 2) ** 2
    sin_alpha = np.sin(alpha)
    new_plus = cos_half * f_plus - sin_half * f_minus + sin_alpha * z
    new_minus = -sin_half * f_plus + cos_half * f_minus + sin_alpha * z
    new_z = -0.5 * sin_alpha * (f_plus + f_minus) + np.cos(alpha) * z
    return new_plus, new_minus, new_z


def _dephase(f_plus, f_minus):
    """
    Shifts the transverse states by one dephasing order. The highest F+
    order falls off the end of the state vector.
    """
    new_plus = np.empty_like(f_plus)
    new_minus = np.empty_like(f_minus)
    new_plus[:, 1:] = f_plus[:, :-1]
    new_minus[:, :-1] = f_minus[:, 1:]
    new_minus[:, -1] = 0
    new_plus[:, 0] = np.conj(new_minus[:, 0])
    return new_plus, new_minus


def epg_fisp_batch(t1_ms, t2_ms, seq):
    """
    Simulates the FISP fingerprints of many (T1, T2) pairs at once. The
    magnetization is (optionally) inverted and left to recover for TI, then
    every timeframe applies the RF pulse, reads F0 at TE, relaxes over TR
    and dephases by one order.

    :param t1_ms: array of T1 values in ms
    :param t2_ms: array of T2 values in ms, same length as t1_ms
    :param seq: the SequenceParams to simulate
    :return: a complex array of shape (D, L)
    """
    seq.validate()
    t1, t2 = check_relaxation(t1_ms, t2_ms)
    n_frames = seq.n_timeframes
    n_states = n_frames + 1
    count = t1.shape[0]

    f_plus = np.zeros((count, n_states), dtype=np.complex128)
    f_minus = np.zeros((count, n_states), dtype=np.complex128)
    z = np.zeros((count, n_states), dtype=np.complex128)
    z[:, 0] = 1.0 - 2.0 * np.exp(-seq.ti_ms / t1) if seq.inversion else 1.0

    e1 = np.exp(-seq.tr_ms / t1)[:, None]
    e2 = np.exp(-seq.tr_ms / t2)[:, None]
    echo = np.exp(-seq.te_ms / t2)
    recovery = 1.0 - e1[:, 0]

    signal = np.empty((count, n_frames), dtype=np.complex128)
    for frame, alpha in enumerate(np.deg2rad(seq.flip_angles_deg)):
        f_plus, f_minus, z = _rotate(f_plus, f_minus, z, alpha)
        signal[:, frame] = f_plus[:, 0] * echo
        f_plus *= e2
        f_minus *= e2
        z *= e1
        z[:, 0] += recovery
        f_plus, f_minus = _dephase(f_plus, f_minus)

    if not np.all(np.isfinite(signal)):
        raise SimulationDivergedError("EPG simulation produced a non-finite state")
    return signal


def epg_fisp(t1_ms, t2_ms, seq):
    """
    Simulates the fingerprint of a single tissue.

    :param t1_ms: the T1 relaxation time in ms
    :param t2_ms: the T2 relaxation time in ms
    :param seq: the SequenceParams to simulate
    :return: a complex array of length L
    """
    return epg_fisp_batch([t1_ms], [t2_ms], seq)[0]


def isochromat_fisp(t1_ms, t2_ms, seq, n_spins=400):
    """
    Simulates the same FISP experiment as epg_fisp by brute force: n_spins
    magnetization vectors whose dephasing angles evenly span one cycle per
    TR, each rotated and relaxed with explicit 3x3 Bloch matrices.

    :param t1_ms: the T1 relaxation time in ms
    :param t2_ms: the T2 relaxation time in ms
    :param seq: the SequenceParams to simulate
    :param n_spins: the number of isochromats
    :return: a complex array of length L holding the mean transverse signal
    """
    seq.validate()
    (t1,), (t2,) = check_relaxation(t1_ms, t2_ms)
    if int(n_spins) != n_spins or n_spins < 1:
        raise ValidationError("expected n_spins >= 1, but got {}".format(n_spins))
    n_spins = int(n_spins)
    if n_spins < MIN_ACCURATE_SPINS:
        logger.warning("isochromat simulation with %d spins aliases dephased states", n_spins)

    magnetization = np.zeros((n_spins, 3))
    magnetization[:, 2] = 1.0 - 2.0 * np.exp(-seq.ti_ms / t1) if seq.inversion else 1.0

    e1 = np.exp(-seq.tr_ms / t1)
    e2 = np.exp(-seq.tr_ms / t2)
    echo = np.exp(-seq.te_ms / t2)
    relaxation = np.diag([e2, e2, e1])
    recovery = np.array([0.0, 0.0, 1.0 - e1])

    angles = 2 * np.pi * np.arange(n_spins) / n_spins
    dephasing = np.zeros((n_spins, 3, 3))
    dephasing[:, 0, 0] = np.cos(angles)
    dephasing[:, 0, 1] = -np.sin(angles)
    dephasing[:, 1, 0] = np.sin(angles)
    dephasing[:, 1, 1] = np.cos(angles)
    dephasing[:, 2, 2] = 1.0

    signal = np.empty(seq.n_timeframes, dtype=np.complex128)
    for frame, alpha in enumerate(np.deg2rad(seq.flip_angles_deg)):
        rotation = np.array([
            [np.cos(alpha), 0.0, np.sin(alpha)],
            [0.0, 1.0, 0.0],
            [-np.sin(alpha), 0.0, np.cos(alpha)],
        ])
        magnetization = magnetization @ rotation.T
        transverse = magnetization[:, 0] + 1j * magnetization[:, 1]
        signal[frame] = transverse.mean() * echo
        magnetization = magnetization @ relaxation.T + recovery
        magnetization = np.einsum("nij,nj->ni", dephasing, magnetization)

    if not np.all(np.isfinite(signal)):
        raise SimulationDivergedError("isochromat simulation produced a non-finite state")
    return signal


def write_schedule(filename, seq):
    """
    Writes a sequence as CSV: a header line carrying the timings, followed
    by one flip angle in degrees per line.

    :param filename: the name of the file to write
    :param seq: the SequenceParams to save
    """
    header = "tr_ms,te_ms,ti_ms,{!r},{!r},{!r}".format(seq.tr_ms, seq.te_ms, seq.ti_ms)
    np.savetxt(filename, seq.flip_angles_deg, fmt="%.17g", header=header, comments="# ")


def read_schedule(filename):
    """
    Reads a sequence written by write_schedule.

    :param filename: the name of the file to read
    :return: the SequenceParams stored in the file
    """
    with open(filename) as infile:
        header = infile.readline()
    fields = [field.strip() for field in header.lstrip("#").split(",")]
    if not header.startswith("#") or len(fields) != 6 or fields[:3] != ["tr_ms", "te_ms", "ti_ms"]:
        raise ValidationError("could not parse schedule header [{}]".format(header.strip()))
    try:
        tr_ms, te_ms, ti_ms = (float(value) for value in fields[3:])
        angles = np.loadtxt(filename, comments="#", ndmin=1, dtype=np.float64)
    except ValueError as error:
        raise ValidationError("could not parse schedule [{}]: {}".format(filename, error))
    return SequenceParams(angles, tr_ms, te_ms, ti_ms).validate()

# E N D   O F   F I L E #######################################################
