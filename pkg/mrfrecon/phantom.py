"""
Copyright (C) 2024 The mrfrecon authors
This project uses an MIT style license - see README.md for details.

This file contains the synthetic brain phantom used as ground truth, and
the persistence and preview rendering of quantitative maps.
"""
# I M P O R T S ###############################################################

from collections import namedtuple

import numpy as np

from matplotlib import image as mpimage
from scipy.ndimage import gaussian_filter

from mrfrecon.container import MAPS_MAGIC, read_container, require_sections, write_container
from mrfrecon.epg import TissueParams
from mrfrecon.exceptions import ValidationError

# C O N S T A N T S ###########################################################

MIN_SIZE = 32

BACKGROUND = 0
CSF = 1
GRAY_MATTER = 2
WHITE_MATTER = 3

# Label -> (T1 ms, T2 ms, PD magnitude)
TISSUES = {
    CSF: (4000.0, 2000.0, 1.0),
    GRAY_MATTER: (1300.0, 110.0, 0.8),
    WHITE_MATTER: (800.0, 70.0, 0.65),
}

# Painted in order, later ellipses overwrite earlier ones. Each entry is
# (label, centre x, centre y, semi-axis x, semi-axis y) in units of the
# half field of view.
LAYERS = (
    (CSF, 0.0, 0.0, 0.74, 0.90),
    (GRAY_MATTER, 0.0, 0.0, 0.68, 0.84),
    (WHITE_MATTER, 0.0, 0.02, 0.54, 0.70),
    (GRAY_MATTER, -0.22, 0.0, 0.10, 0.16),
    (GRAY_MATTER, 0.22, 0.0, 0.10, 0.16),
    (CSF, -0.08, -0.05, 0.05, 0.24),
    (CSF, 0.08, -0.05, 0.05, 0.24),
)

# Relative jitter of the ellipse axes between seeds
AXIS_JITTER = 0.04

PREVIEW_WINDOWS = {
    "t1": (0.0, 3000.0),
    "t2": (0.0, 300.0),
}

Ellipse = namedtuple('Ellipse', ['label', 'cx', 'cy', 'ax', 'ay'])

Phantom = namedtuple('Phantom', ['qmaps', 'mask', 'labels', 'height', 'width'])

# F U N C T I O N S ###########################################################


def phantom_ellipses(seed):
    """
    Returns the ellipses of the phantom for a seed: the fixed layers with
    their axes jittered by up to AXIS_JITTER.
    """
    rng = np.random.default_rng(seed)
    factors = 1.0 + AXIS_JITTER * rng.uniform(-1, 1, size=(len(LAYERS), 2))
    return [
        Ellipse(label, cx, cy, ax * fx, ay * fy)
        for (label, cx, cy, ax, ay), (fx, fy) in zip(LAYERS, factors)
    ]


def paint_labels(height, width, ellipses):
    """
    Rasterizes ellipses into an integer label image; a pixel belongs to an
    ellipse when its centre lies inside it.
    """
    y = (np.arange(height) + 0.5) / height * 2.0 - 1.0
    x = (np.arange(width) + 0.5) / width * 2.0 - 1.0
    yy, xx = np.meshgrid(y, x, indexing="ij")
    labels = np.full((height, width), BACKGROUND, dtype=np.int64)
    for ellipse in ellipses:
        inside = ((xx - ellipse.cx) / ellipse.ax) ** 2 + ((yy - ellipse.cy) / ellipse.ay) ** 2 <= 1.0
        labels[inside] = ellipse.label
    return labels


def make_brain_phantom(height, width, seed):
    """
    Builds a layered-ellipse brain phantom. T1 and T2 are piecewise
    constant per tissue class; the PD magnitude is the smoothed class PD,
    multiplied by a smooth random phase field.

    :param height: the image height, at least 32
    :param width: the image width, at least 32
    :param seed: makes the geometry jitter and the phase field reproducible
    :return: a Phantom with flattened (N,) maps
    """
    if height < MIN_SIZE or width < MIN_SIZE:
        raise ValidationError("phantom needs at least {0}x{0} pixels, got {1}x{2}".format(MIN_SIZE, height, width))
    labels = paint_labels(height, width, phantom_ellipses(seed))
    mask = labels != BACKGROUND

    t1 = np.zeros((height, width))
    t2 = np.zeros((height, width))
    magnitude = np.zeros((height, width))
    for label, (t1_ms, t2_ms, pd) in TISSUES.items():
        region = labels == label
        t1[region] = t1_ms
        t2[region] = t2_ms
        magnitude[region] = pd
    magnitude = gaussian_filter(magnitude, sigma=1.0) * mask

    rng = np.random.default_rng([seed, 1])
    field = gaussian_filter(rng.standard_normal((height, width)), sigma=max(height, width) / 8.0, mode="wrap")
    field -= field.mean()
    peak = np.max(np.abs(field))
    phase = field * (np.pi / 4) / peak if peak > 0 else field
    pd = magnitude * np.exp(1j * phase)

    qmaps = TissueParams(t1.ravel(), t2.ravel(), pd.ravel())
    return Phantom(qmaps, mask.ravel(), labels.ravel(), height, width)


def save_maps(filename, phantom):
    """
    Writes maps to an MRFQ container with channels T1, T2, |PD|, PD phase
    and mask (plus the tissue labels when present).
    """
    qmaps = phantom.qmaps
    pd = np.asarray(qmaps.pd, dtype=np.complex128)
    sections = dict(
        t1_ms=np.asarray(qmaps.t1_ms, dtype=np.float64),
        t2_ms=np.asarray(qmaps.t2_ms, dtype=np.float64),
        pd_magnitude=np.abs(pd),
        pd_phase=np.angle(pd),
        mask=np.asarray(phantom.mask, dtype=np.float64),
    )
    if phantom.labels is not None:
        sections["labels"] = np.asarray(phantom.labels, dtype=np.float64)
    write_container(filename, MAPS_MAGIC, (phantom.height, phantom.width), sections)


def load_maps(filename):
    """
    Reads maps written by save_maps.

    :return: a Phantom
    """
    container = read_container(filename, MAPS_MAGIC)
    require_sections(container, ["t1_ms", "t2_ms", "pd_magnitude", "pd_phase", "mask"])
    sections = container.sections
    height, width = (int(size) for size in container.dims)
    pd = sections["pd_magnitude"] * np.exp(1j * sections["pd_phase"])
    labels = sections["labels"].astype(np.int64) if "labels" in sections else None
    qmaps = TissueParams(sections["t1_ms"], sections["t2_ms"], pd)
    return Phantom(qmaps, sections["mask"] > 0, labels, height, width)


def write_previews(prefix, phantom):
    """
    Writes grayscale PNG previews <prefix>_t1.png, <prefix>_t2.png and
    <prefix>_pd.png. T1 and T2 use fixed windows; |PD| is scaled to its
    maximum. Pixels outside the mask are black.

    :return: the list of files written
    """
    shape = (phantom.height, phantom.width)
    mask = np.asarray(phantom.mask, dtype=bool).reshape(shape)
    magnitude = np.abs(np.asarray(phantom.qmaps.pd)).reshape(shape)
    images = [
        ("t1", np.asarray(phantom.qmaps.t1_ms).reshape(shape)) + PREVIEW_WINDOWS["t1"],
        ("t2", np.asarray(phantom.qmaps.t2_ms).reshape(shape)) + PREVIEW_WINDOWS["t2"],
        ("pd", magnitude, 0.0, max(float(magnitude[mask].max()) if np.any(mask) else 0.0, 1e-12)),
    ]
    written = []
    for name, values, low, high in images:
        filename = "{}_{}.png".format(prefix, name)
        mpimage.imsave(filename, np.where(mask, values, low), vmin=low, vmax=high, cmap="gray")
        written.append(filename)
    return written

# E N D   O F   F I L E #######################################################
