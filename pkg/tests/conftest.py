"""Shared fixtures and independent measurement oracles for the test suite."""

import numpy as np
import pytest

from asyncsep.dsp import SpectrogramTensor, WindowSpec
from asyncsep.model import SpatialModel, StateSpectrumModel


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def correlation_peak_lag(sig, ref, max_lag, band=0.35, oversample=16):
    """Subsample lag of the cross-correlation peak between sig and ref.

    FFT cross-correlation, bandlimited to `band` of Nyquist, evaluated on
    an oversampled lag grid with a parabolic refinement of the peak.
    Positive lag means `sig` is delayed relative to `ref`.
    """
    n = len(sig) + len(ref) - 1
    nfft = 1 << int(np.ceil(np.log2(n)))
    X = np.fft.rfft(sig, nfft)
    Y = np.fft.rfft(ref, nfft)
    C = X * np.conj(Y)
    k = np.arange(len(C))
    C[k > band * (len(C) - 1)] = 0.0
    up = np.fft.irfft(C, nfft * oversample) * oversample
    lags = np.fft.fftfreq(nfft * oversample, 1.0 / nfft)
    keep = np.abs(lags) <= max_lag
    idx = np.flatnonzero(keep)
    j = idx[np.argmax(up[idx])]
    step = lags[1] - lags[0]
    c0, cm, cp = up[j], up[j - 1], up[j + 1]
    denom = cm - 2.0 * c0 + cp
    delta = 0.5 * (cm - cp) / denom if denom != 0 else 0.0
    return lags[j] + delta * step


def bandlimited_noise(rng, n, frac_nyquist):
    """White noise lowpassed to a fraction of Nyquist, unit peak."""
    w = rng.standard_normal(n)
    W = np.fft.rfft(w)
    f = np.fft.rfftfreq(n)  # cycles/sample, Nyquist at 0.5
    W[f > 0.5 * frac_nyquist] = 0.0
    x = np.fft.irfft(W, n)
    return x / np.abs(x).max()


def rand_unit_psd(rng, n_ch):
    """Random Hermitian PSD matrix with unit trace."""
    A = rng.standard_normal((n_ch, n_ch)) + 1j * rng.standard_normal((n_ch, n_ch))
    S = A @ A.conj().T
    return S / np.trace(S).real


def make_synthetic_models(rng, arrays=("a0", "a1", "a2"), n_ch=2, n_src=3,
                          window=None, noise_power=0.01):
    """Hand-built model pair with flat spectra and random spatial signatures."""
    if window is None:
        window = WindowSpec(512, 128)
    F = window.length // 2 + 1
    source_ids = [f"s{k}" for k in range(n_src)]
    cov = {}
    for m in arrays:
        per = [np.broadcast_to(rand_unit_psd(rng, n_ch), (F, n_ch, n_ch)).copy()
               for _ in range(n_src)]
        cov[m] = np.stack(per)
    spatial = SpatialModel(cov, source_ids)
    lt = np.ones((n_src, F))
    states = StateSpectrumModel(source_ids, lt, 10.0 * lt, lt / 10.0,
                                np.full(F, noise_power))
    spatial.noise_floor = {m: states.noise_spectrum.copy() for m in arrays}
    return spatial, states, window


def make_planted_tiles(rng, spatial, states, window, n_frames=48, rate=16000.0):
    """Observations drawn tile-by-tile from a planted dominant-source state.

    Every tile's state is sampled uniformly over the directional states and
    the observation is drawn from exactly that state's model distribution,
    so the scene is W-disjoint by construction.  Returns (observations,
    planted state indices, top-quartile-energy mask).
    """
    from asyncsep.classifier import state_factors

    F = window.length // 2 + 1
    K = len(states.source_ids)
    planted = rng.integers(0, K, size=(n_frames, F))
    obs = {}
    for m in spatial.array_ids():
        C = spatial.channels(m)
        L, _ = state_factors(spatial, states, m)
        z = (rng.standard_normal((n_frames, F, C))
             + 1j * rng.standard_normal((n_frames, F, C))) / np.sqrt(2.0)
        Lsel = L[planted, np.arange(F)[None, :]]
        x = np.einsum("nfcd,nfd->nfc", Lsel, z)
        obs[m] = SpectrogramTensor(x, window, rate, None)
    energy = sum((o.coeffs.real ** 2 + o.coeffs.imag ** 2).sum(axis=2)
                 for o in obs.values())
    top = energy >= np.quantile(energy, 0.75)
    return obs, planted, top
