"""
Copyright (C) 2024 The mrfrecon authors
This project uses an MIT style license - see README.md for details.

This file contains the fingerprint dictionary, its SVD subspace
compression and nearest-atom template matching.
"""
# I M P O R T S ###############################################################

import logging

from collections import namedtuple

import numpy as np

from tqdm import tqdm

from mrfrecon.container import DICTIONARY_MAGIC, read_container, require_sections, write_container
from mrfrecon.epg import SequenceParams, TissueParams, epg_fisp_batch
from mrfrecon.exceptions import ValidationError

# C O N S T A N T S ###########################################################

# Number of atoms simulated per EPG batch
SIMULATION_CHUNK = 256

# Number of pixels correlated against the dictionary at once
MATCH_CHUNK = 4096

logger = logging.getLogger(__name__)

# C L A S S E S ###############################################################


class Dictionary(namedtuple('Dictionary', ['grid', 'atoms', 'seq'])):
    """
    Simulated fingerprints, one row of atoms per (T1, T2) grid entry. The
    grid is a TissueParams of 1D arrays with unit PD.
    """
    __slots__ = ()

    @property
    def size(self):
        return self.atoms.shape[0]

    @property
    def n_timeframes(self):
        return self.atoms.shape[1]


class SvdBasis(namedtuple('SvdBasis', ['v', 'singular_values', 'total_energy'])):
    """
    The L x K matrix whose orthonormal columns span the temporal subspace.
    """
    __slots__ = ()

    @property
    def k(self):
        return self.v.shape[1]

    @property
    def n_timeframes(self):
        return self.v.shape[0]

    def captured_energy(self):
        """
        Returns the fraction of the dictionary energy that the K retained
        singular values account for.
        """
        if self.total_energy <= 0:
            return 0.0
        return float(np.sum(self.singular_values ** 2) / self.total_energy)


CompressedDictionary = namedtuple('CompressedDictionary', ['atoms_k', 'basis', 'grid'])

# F U N C T I O N S ###########################################################


def _check_grid(values, name):
    grid = np.atleast_1d(np.asarray(values, dtype=np.float64))
    if grid.ndim != 1 or grid.size == 0:
        raise ValidationError("{} grid must be a non-empty 1D array".format(name))
    if not np.all(np.isfinite(grid)) or np.any(grid <= 0):
        raise ValidationError("{} grid values must be finite and positive".format(name))
    if np.any(np.diff(grid) <= 0):
        raise ValidationError("{} grid must be strictly increasing".format(name))
    return grid


def build_dictionary(t1_grid, t2_grid, seq, progress=False):
    """
    Simulates one fingerprint per (T1, T2) pair of the cartesian grid,
    skipping pairs with T2 > T1. Entries are ordered T1-major.

    :param t1_grid: increasing T1 values in ms
    :param t2_grid: increasing T2 values in ms
    :param seq: the SequenceParams to simulate
    :param progress: whether to show a progress bar
    :return: a Dictionary
    """
    seq.validate()
    t1_grid = _check_grid(t1_grid, "T1")
    t2_grid = _check_grid(t2_grid, "T2")
    t1, t2 = np.meshgrid(t1_grid, t2_grid, indexing="ij")
    keep = t2 <= t1
    t1, t2 = t1[keep], t2[keep]
    if t1.size == 0:
        raise ValidationError("no (T1, T2) pair satisfies T2 <= T1")

    atoms = np.empty((t1.size, seq.n_timeframes), dtype=np.complex128)
    starts = range(0, t1.size, SIMULATION_CHUNK)
    for start in tqdm(starts, desc="dictionary", disable=not progress):
        stop = start + SIMULATION_CHUNK
        atoms[start:stop] = epg_fisp_batch(t1[start:stop], t2[start:stop], seq)
    logger.info("simulated %d atoms of length %d", t1.size, seq.n_timeframes)
    grid = TissueParams(t1, t2, np.ones(t1.size, dtype=np.complex128))
    return Dictionary(grid, atoms, seq)


def compute_svd_basis(dictionary, k, normalize=True):
    """
    Computes the rank-K temporal subspace of a dictionary. Each basis
    column is rotated so that its largest magnitude entry is real and
    positive, which makes the basis deterministic.

    :param dictionary: the Dictionary to decompose
    :param k: the subspace rank, 1 <= k <= min(D, L)
    :param normalize: whether atoms are scaled to unit norm first
    :return: an SvdBasis
    """
    atoms = dictionary.atoms
    size, n_timeframes = atoms.shape
    if int(k) != k or not 1 <= k <= min(size, n_timeframes):
        raise ValidationError("expected 1 <= K <= {}, but got {}".format(min(size, n_timeframes), k))
    k = int(k)
    if normalize:
        norms = np.linalg.norm(atoms, axis=1, keepdims=True)
        atoms = np.divide(atoms, norms, out=np.zeros_like(atoms), where=norms > 0)

    _, singular_values, vh = np.linalg.svd(atoms, full_matrices=False)
    v = vh[:k].conj().T
    pivots = v[np.argmax(np.abs(v), axis=0), np.arange(k)]
    magnitude = np.abs(pivots)
    rotation = np.ones(k, dtype=np.complex128)
    np.divide(np.conj(pivots), magnitude, out=rotation, where=magnitude > 0)
    basis = SvdBasis(v * rotation, singular_values[:k].copy(), float(np.sum(singular_values ** 2)))
    logger.info("rank %d basis captures %.6f of the dictionary energy", k, basis.captured_energy())
    return basis


def _check_basis(basis, n_timeframes):
    if basis.n_timeframes != n_timeframes:
        raise ValidationError("basis has {} timeframes, atoms have {}".format(basis.n_timeframes, n_timeframes))


def compress(dictionary, basis):
    """
    Projects every atom onto the subspace.

    :param dictionary: the Dictionary to compress
    :param basis: an SvdBasis with the same number of timeframes
    :return: a CompressedDictionary
    """
    _check_basis(basis, dictionary.n_timeframes)
    return CompressedDictionary(dictionary.atoms @ basis.v, basis, dictionary.grid)


def expand(atoms_k, basis):
    """
    Maps subspace coefficients back to timeframes.

    :param atoms_k: complex array (..., K)
    :param basis: the SvdBasis the coefficients refer to
    :return: complex array (..., L)
    """
    atoms_k = np.asarray(atoms_k)
    if atoms_k.shape[-1] != basis.k:
        raise ValidationError("expected {} coefficients, got {}".format(basis.k, atoms_k.shape[-1]))
    return atoms_k @ basis.v.conj().T


def dict_match(tsmi, cdict, chunk=MATCH_CHUNK, return_index=False):
    """
    Matches every pixel of a TSMI to the atom with the largest normalized
    correlation. Ties go to the lowest atom index. Zero pixels map to
    (0, 0, 0) and zero atoms are never selected.

    :param tsmi: a Tsmi, or a complex (N, K) array of pixel vectors
    :param cdict: the CompressedDictionary to match against
    :param chunk: the number of pixels processed per batch
    :param return_index: also return the matched atom indices (-1 for zero pixels)
    :return: a TissueParams of (N,) arrays, or a tuple (TissueParams, indices)
    """
    pixels = np.asarray(getattr(tsmi, "data", tsmi), dtype=np.complex128)
    atoms = cdict.atoms_k
    if pixels.ndim != 2 or pixels.shape[1] != atoms.shape[1]:
        raise ValidationError("pixels of shape {} do not match {} channels".format(pixels.shape, atoms.shape[1]))
    norms = np.linalg.norm(atoms, axis=1)
    inverse_norms = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)

    count = pixels.shape[0]
    t1 = np.zeros(count)
    t2 = np.zeros(count)
    pd = np.zeros(count, dtype=np.complex128)
    indices = np.zeros(count, dtype=np.int64)
    for start in range(0, count, chunk):
        block = pixels[start:start + chunk]
        inner = block @ atoms.conj().T
        best = np.argmax(np.abs(inner) * inverse_norms, axis=1)
        rows = np.arange(block.shape[0])
        indices[start:start + chunk] = best
        t1[start:start + chunk] = cdict.grid.t1_ms[best]
        t2[start:start + chunk] = cdict.grid.t2_ms[best]
        pd[start:start + chunk] = inner[rows, best] * inverse_norms[best] ** 2

    empty = ~np.any(pixels != 0, axis=1)
    t1[empty] = 0.0
    t2[empty] = 0.0
    pd[empty] = 0.0
    indices[empty] = -1
    maps = TissueParams(t1, t2, pd)
    return (maps, indices) if return_index else maps


def save_dictionary(filename, dictionary, basis=None):
    """
    Writes a dictionary, and optionally its basis, to an MRFD container.
    """
    seq = dictionary.seq
    sections = dict(
        t1_ms=dictionary.grid.t1_ms,
        t2_ms=dictionary.grid.t2_ms,
        atoms=dictionary.atoms,
        flip_angles_deg=seq.flip_angles_deg,
        timing=np.array([seq.tr_ms, seq.te_ms, seq.ti_ms, float(seq.inversion)]),
    )
    k = 0
    if basis is not None:
        k = basis.k
        sections.update(
            basis_v=basis.v,
            singular_values=basis.singular_values,
            total_energy=np.array([basis.total_energy]),
        )
    write_container(filename, DICTIONARY_MAGIC, (dictionary.size, dictionary.n_timeframes, k), sections)


def load_dictionary(filename):
    """
    Reads a dictionary written by save_dictionary.

    :return: a tuple (Dictionary, SvdBasis or None)
    """
    container = read_container(filename, DICTIONARY_MAGIC)
    require_sections(container, ["t1_ms", "t2_ms", "atoms", "flip_angles_deg", "timing"])
    sections = container.sections
    tr_ms, te_ms, ti_ms, inversion = sections["timing"]
    seq = SequenceParams(sections["flip_angles_deg"], tr_ms, te_ms, ti_ms, inversion > 0)
    size = sections["t1_ms"].shape[0]
    grid = TissueParams(sections["t1_ms"], sections["t2_ms"], np.ones(size, dtype=np.complex128))
    dictionary = Dictionary(grid, sections["atoms"].astype(np.complex128), seq)
    basis = None
    if "basis_v" in sections:
        basis = SvdBasis(
            sections["basis_v"].astype(np.complex128),
            sections["singular_values"],
            float(sections["total_energy"][0]),
        )
    return dictionary, basis


def write_grid_csv(filename, grid):
    """
    Writes the (T1, T2) entries of a dictionary grid as CSV.
    """
    table = np.column_stack([grid.t1_ms, grid.t2_ms])
    np.savetxt(filename, table, fmt="%.17g", delimiter=",", header="t1_ms,t2_ms", comments="")

# E N D   O F   F I L E #######################################################
