"""
Copyright (C) 2024 The mrfrecon authors
This project uses an MIT style license - see README.md for details.

This file contains the map quality metrics: MAPE for T1 and T2 and PSNR
for the proton density, all computed over a foreground mask. Tissue whose
true T1 or T2 lies beyond the dictionary grid is left out of the mask.
"""
# I M P O R T S ###############################################################

from collections import namedtuple

import numpy as np

from mrfrecon.exceptions import ValidationError

# C O N S T A N T S ###########################################################

# Reported instead of +inf when the estimate equals the truth
PSNR_CAP_DB = 99.0

MetricsReport = namedtuple('MetricsReport', ['mape_t1', 'mape_t2', 'psnr_pd', 'n_pixels'])

# F U N C T I O N S ###########################################################


def _masked(estimate, truth, mask):
    estimate = np.asarray(estimate).ravel()
    truth = np.asarray(truth).ravel()
    mask = np.asarray(mask, dtype=bool).ravel()
    if not estimate.shape == truth.shape == mask.shape:
        raise ValidationError("estimate, truth and mask sizes differ: {} {} {}".format(
            estimate.size, truth.size, mask.size))
    if not np.any(mask):
        raise ValidationError("the mask selects no pixels")
    return estimate[mask], truth[mask]


def mape(estimate, truth, mask):
    """
    Mean absolute percentage error over the masked pixels.

    :param estimate: the estimated values
    :param truth: the true values, positive on the mask
    :param mask: boolean foreground mask
    :return: the error in percent
    """
    estimate, truth = _masked(estimate, truth, mask)
    if np.any(truth == 0):
        raise ValidationError("MAPE is undefined where the truth is zero")
    return float(100.0 * np.mean(np.abs(estimate - truth) / np.abs(truth)))


def psnr(estimate, truth, mask, cap=PSNR_CAP_DB):
    """
    Peak signal to noise ratio of magnitudes over the masked pixels. Both
    maps are first divided by their mean masked magnitude, so any global
    complex scale of the estimate is ignored.

    :param estimate: the estimated (complex) values
    :param truth: the true (complex) values
    :param mask: boolean foreground mask
    :param cap: the value reported for a perfect estimate
    :return: the PSNR in dB
    """
    estimate, truth = _masked(estimate, truth, mask)
    truth = np.abs(truth)
    estimate = np.abs(estimate)
    if not np.any(truth):
        raise ValidationError("PSNR is undefined for an all-zero truth")
    truth = truth / truth.mean()
    if estimate.mean() > 0:
        estimate = estimate / estimate.mean()
    rmse = np.sqrt(np.mean((estimate - truth) ** 2))
    if rmse == 0:
        return float(cap)
    return float(min(20.0 * np.log10(truth.max() / rmse), cap))


def metric_mask(truth, mask, t1_max, t2_max):
    """
    Restricts a foreground mask to the pixels whose true T1 and T2 lie
    within the dictionary grid. Neither matching nor the encoder can reach
    values beyond the grid, so such tissue (the phantom's CSF) is left out
    of every metric.

    :param truth: TissueParams of the true maps
    :param mask: boolean foreground mask
    :param t1_max: the largest T1 of the grid, in ms
    :param t2_max: the largest T2 of the grid, in ms
    :return: a boolean mask
    """
    mask = np.asarray(mask, dtype=bool).ravel()
    t1 = np.asarray(truth.t1_ms).ravel()
    t2 = np.asarray(truth.t2_ms).ravel()
    return mask & (t1 <= t1_max) & (t2 <= t2_max)


def evaluate_maps(estimate, truth, mask):
    """
    Computes the full report comparing estimated maps to the truth.

    :param estimate: TissueParams of estimated maps
    :param truth: TissueParams of true maps
    :param mask: boolean foreground mask
    :return: a MetricsReport
    """
    return MetricsReport(
        mape(estimate.t1_ms, truth.t1_ms, mask),
        mape(estimate.t2_ms, truth.t2_ms, mask),
        psnr(estimate.pd, truth.pd, mask),
        int(np.sum(mask)),
    )


def mean_report(reports):
    """
    Averages reports field by field; the pixel counts are summed.
    """
    if not reports:
        raise ValidationError("cannot average an empty list of reports")
    return MetricsReport(
        float(np.mean([report.mape_t1 for report in reports])),
        float(np.mean([report.mape_t2 for report in reports])),
        float(np.mean([report.psnr_pd for report in reports])),
        int(sum(report.n_pixels for report in reports)),
    )

# E N D   O F   F I L E #######################################################
