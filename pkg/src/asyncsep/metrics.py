"""Separation quality metrics."""

from __future__ import annotations

import math

import numpy as np

from .dsp import SampledSignal

__all__ = ["sdr"]


def sdr(reference: SampledSignal, estimate: SampledSignal) -> float:
    """Signal-to-distortion ratio in dB.

    10 * log10 of reference energy over error energy, summed over all
    samples and channels.  Returns +inf when the estimate is exact;
    raises ValueError for an all-zero reference (the ratio is undefined).
    """
    ref = reference.samples
    est = estimate.samples
    if ref.shape != est.shape:
        raise ValueError(
            f"reference {ref.shape} and estimate {est.shape} shapes differ")
    ref_energy = float(np.sum(ref ** 2))
    if ref_energy == 0.0:
        raise ValueError("SDR undefined for an all-zero reference")
    err_energy = float(np.sum((est - ref) ** 2))
    if err_energy == 0.0:
        return math.inf
    return 10.0 * math.log10(ref_energy / err_energy)
