"""Per-array time-varying multichannel Wiener filtering.

Four filter variants share one per-tile kernel:

  static-local     time-invariant powers (long-term spectra), each array
                   filtered with its own microphones only
  static-pooled    time-invariant powers on the channel-concatenated
                   merged array (only meaningful when clocks are shared)
  tv-local         per-tile powers from each array's own classifier
  tv-distributed   per-tile powers from the joint classifier over all
                   arrays (the proposed operating mode)

Every variant produces one image per (array, source) plus an auxiliary
noise image that absorbs the diagonal loading, so the images of a tile
always sum to the observed mixture coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import _kernels
from .classifier import PowerEstimate, classify, source_power_estimates
from .dsp import SpectrogramTensor
from .errors import NumericalError
from .model import (
    NOISE_ID,
    SpatialModel,
    StateSpectrumModel,
    pooled_tensor,
    regularized_sum,
)

__all__ = [
    "MODES",
    "SeparationResult",
    "mwf_apply",
    "separate",
    "filter_array",
]

MODES = ("static-local", "static-pooled", "tv-local", "tv-distributed")


@dataclass
class SeparationResult:
    """STFT-domain source-image estimates per (array id, source id).

    The noise image is stored under the reserved source id "noise" and is
    auxiliary: evaluation only scores directional sources.
    """

    images: dict[tuple[str, str], SpectrogramTensor]
    mode: str
    metadata: dict = field(default_factory=dict)


def mwf_apply(x: np.ndarray, spatial: SpatialModel, array_id: str, f: int,
              powers, noise_power: float) -> np.ndarray:
    """Reference single-tile filter: all source images from one observation.

    x: (C,) mixture coefficients at one tile; powers: (K,) directional
    source powers.  Returns (K+1, C) image estimates, noise last.  One
    Cholesky factorization is shared by all K+1 filters.
    """
    x = np.asarray(x, dtype=np.complex128)
    if not np.isfinite(x).all():
        raise NumericalError("non-finite tile observation")
    powers = np.asarray(powers, dtype=np.float64)
    cov = spatial.covariances[array_id]
    C = cov.shape[2]
    S = regularized_sum(spatial, powers, array_id, f, noise_power=noise_power)
    L = np.linalg.cholesky(S)
    y = scipy.linalg.cho_solve((L, True), x)
    out = np.empty((len(powers) + 1, C), dtype=np.complex128)
    for k in range(len(powers)):
        out[k] = powers[k] * (cov[k, f] @ y)
    # the noise filter keeps the diagonal loading so the images sum to x
    trace = float(np.einsum("k,k->", powers,
                            np.einsum("kcc->k", cov[:, f]).real)) + noise_power
    out[-1] = (noise_power / C + _kernels.ridge_scale(trace)) * y
    return out


def filter_array(obs: SpectrogramTensor, spatial: SpatialModel,
                 array_id: str, powers: PowerEstimate,
                 states: StateSpectrumModel) -> np.ndarray:
    """Filter one array's full tensor given per-tile powers.

    Depends on other arrays only through `powers`.  Returns
    (K+1, N, F, C) complex with the noise image last.
    """
    sigma2 = powers.sigma2
    return _kernels.mwf_filter(obs.coeffs, spatial.covariances[array_id],
                               sigma2[:, :, :-1], states.noise_spectrum)


def _static_powers(states: StateSpectrumModel, n_frames: int) -> PowerEstimate:
    """Time-invariant powers: the long-term average spectrum of each source."""
    K, F = states.ltas.shape
    sigma2 = np.empty((n_frames, F, K + 1))
    sigma2[:, :, :K] = states.ltas.T[None, :, :]
    sigma2[:, :, K] = states.noise_spectrum[None, :]
    return PowerEstimate(sigma2, states.source_ids + [NOISE_ID])


def _consistency(est: np.ndarray, coeffs: np.ndarray) -> float:
    """Worst per-tile relative deviation of the image sum from the mixture."""
    diff = est.sum(axis=0) - coeffs
    num = np.sqrt((diff.real ** 2 + diff.imag ** 2).sum(axis=-1))
    den = np.sqrt((coeffs.real ** 2 + coeffs.imag ** 2).sum(axis=-1))
    rel = num / (den + 1e-300)
    rel[den == 0.0] = 0.0
    return float(rel.max())


def _result_images(est: np.ndarray, template: SpectrogramTensor,
                   array_id: str, source_ids: list[str],
                   images: dict) -> None:
    for k, sid in enumerate(source_ids + [NOISE_ID]):
        images[(array_id, sid)] = SpectrogramTensor(
            est[k], template.window, template.rate_hz, template.n_samples)


def separate(observations: dict[str, SpectrogramTensor],
             spatial: SpatialModel, states: StateSpectrumModel,
             mode: str = "tv-distributed") -> SeparationResult:
    """Estimate all source images for every array under one filter variant."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    array_ids = sorted(m for m in observations if m != SpatialModel.POOLED)
    if not array_ids:
        raise ValueError("no observations given")

    images: dict[tuple[str, str], SpectrogramTensor] = {}
    consistency: dict[str, float] = {}

    if mode == "static-pooled":
        if SpatialModel.POOLED not in spatial.covariances:
            raise ValueError(
                "static-pooled requires a model trained with include_pooled")
        order = spatial.pooled_order
        merged = pooled_tensor(observations, order)
        pooled_obs = {SpatialModel.POOLED: merged}
        powers = _static_powers(states, merged.n_frames)
        est = filter_array(merged, spatial, SpatialModel.POOLED, powers, states)
        consistency[SpatialModel.POOLED] = _consistency(est, merged.coeffs)
        offset = 0
        for m in order:
            c = spatial.channels(m)
            _result_images(est[:, :, :, offset:offset + c], observations[m],
                           m, spatial.source_ids, images)
            offset += c
    else:
        if mode == "tv-distributed":
            gamma = classify(observations, spatial, states, array_ids)
            shared = source_power_estimates(gamma, states)
        for m in array_ids:
            obs = observations[m]
            if mode == "static-local":
                powers = _static_powers(states, obs.n_frames)
            elif mode == "tv-local":
                local = classify(observations, spatial, states, [m])
                powers = source_power_estimates(local, states)
            else:
                powers = shared
            est = filter_array(obs, spatial, m, powers, states)
            consistency[m] = _consistency(est, obs.coeffs)
            _result_images(est, obs, m, spatial.source_ids, images)

    return SeparationResult(images, mode,
                            metadata={"consistency_rel_max": consistency})
