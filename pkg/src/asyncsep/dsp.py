"""Time-frequency analysis/synthesis and fractional-delay resampling.

Conventions used throughout the package:
  * time-domain signals are float64 arrays of shape (num_samples, num_channels)
  * STFT tensors are complex128 arrays of shape (num_frames, num_bins, num_channels)
  * the one-sided spectrum keeps bins 0..length//2 inclusive
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SampledSignal",
    "WindowSpec",
    "SpectrogramTensor",
    "stft",
    "istft",
    "lagrange_resample",
    "fractional_delay",
    "long_term_average_spectrum",
]


def _as_2d(samples) -> np.ndarray:
    """Coerce samples to a (num_samples, num_channels) float64 array."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"samples must be 1-D or 2-D, got ndim={arr.ndim}")
    return arr


@dataclass
class SampledSignal:
    """Uniformly sampled multichannel signal at a nominal rate.

    samples: (num_samples, num_channels) float64
    rate_hz: nominal sample rate in Hz
    """

    samples: np.ndarray
    rate_hz: float

    def __post_init__(self):
        self.samples = _as_2d(self.samples)
        if not self.rate_hz > 0:
            raise ValueError(f"rate_hz must be positive, got {self.rate_hz}")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def channels(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.rate_hz


@dataclass(frozen=True)
class WindowSpec:
    """Analysis/synthesis window configuration.

    The hop must divide the length and the squared window must satisfy the
    constant-overlap-add property at that hop, which is what weighted
    overlap-add synthesis relies on.  The periodic von Hann window meets
    both for overlap factors of 4 (75% overlap, the validated default).
    """

    length: int = 4096
    hop: int = 1024
    shape: str = "hann"

    def __post_init__(self):
        if self.length <= 0 or self.hop <= 0:
            raise ValueError("window length and hop must be positive")
        if self.length % self.hop != 0:
            raise ValueError(
                f"hop ({self.hop}) must divide window length ({self.length})")
        if self.shape != "hann":
            raise ValueError(f"unsupported window shape: {self.shape!r}")
        dev = self.cola_deviation()
        if dev > 1e-8:
            raise ValueError(
                f"window/hop is not COLA-compliant for weighted overlap-add "
                f"(relative deviation {dev:.2e}); use an overlap factor >= 3")

    @classmethod
    def from_overlap(cls, length: int, overlap: float, shape: str = "hann") -> "WindowSpec":
        hop = int(round(length * (1.0 - overlap)))
        return cls(length=length, hop=hop, shape=shape)

    def window(self) -> np.ndarray:
        # periodic von Hann; the symmetric variant breaks the overlap-add sum
        n = np.arange(self.length)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.length)

    def overlap_sum(self) -> np.ndarray:
        """Sum of squared windows over one hop period of an infinite tiling."""
        w2 = self.window() ** 2
        return w2.reshape(self.length // self.hop, self.hop).sum(axis=0)

    def cola_deviation(self) -> float:
        s = self.overlap_sum()
        mean = s.mean()
        if mean <= 0:
            return np.inf
        return float(np.abs(s - mean).max() / mean)


@dataclass
class SpectrogramTensor:
    """One-sided STFT coefficients indexed (frame, frequency bin, channel).

    n_samples records the original signal extent so synthesis can restore
    the exact length after the analysis padding is stripped.
    """

    coeffs: np.ndarray
    window: WindowSpec
    rate_hz: float
    n_samples: int | None = field(default=None)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if self.coeffs.ndim != 3:
            raise ValueError("coeffs must be (frames, bins, channels)")
        expected = self.window.length // 2 + 1
        if self.coeffs.shape[1] != expected:
            raise ValueError(
                f"bin count {self.coeffs.shape[1]} inconsistent with window "
                f"length {self.window.length} (expected {expected})")

    @property
    def n_frames(self) -> int:
        return self.coeffs.shape[0]

    @property
    def n_bins(self) -> int:
        return self.coeffs.shape[1]

    @property
    def channels(self) -> int:
        return self.coeffs.shape[2]


def frame_count(n_samples: int, window: WindowSpec) -> int:
    """Number of full frames for an n_samples signal (no padding)."""
    if n_samples < window.length:
        return 0
    return (n_samples - window.length) // window.hop + 1


def _analysis_padding(n_samples: int, window: WindowSpec) -> tuple[int, int]:
    """Zero-padding (left, right) so every input sample gets full window
    coverage and the last frame lands exactly on the padded tail."""
    left = window.length
    core = n_samples + left + window.length
    rem = (core - window.length) % window.hop
    right = window.length + (window.hop - rem) % window.hop
    return left, right


def stft(signal: SampledSignal, window: WindowSpec) -> SpectrogramTensor:
    """Short-time Fourier transform with one window length of edge padding.

    Parameters
    ----------
    signal : SampledSignal
        Input of at least one window length.
    window : WindowSpec
        COLA-compliant analysis window.

    Returns
    -------
    SpectrogramTensor with coeffs of shape (frames, length//2 + 1, channels).
    """
    x = signal.samples
    if x.shape[0] < window.length:
        raise ValueError(
            f"signal ({x.shape[0]} samples) shorter than one frame "
            f"({window.length} samples)")
    left, right = _analysis_padding(x.shape[0], window)
    padded = np.pad(x, ((left, right), (0, 0)))
    n_frames = frame_count(padded.shape[0], window)
    win = window.window()

    n_bins = window.length // 2 + 1
    coeffs = np.empty((n_frames, n_bins, x.shape[1]), dtype=np.complex128)
    for c in range(x.shape[1]):
        frames = np.lib.stride_tricks.sliding_window_view(
            padded[:, c], window.length)[::window.hop]
        coeffs[:, :, c] = np.fft.rfft(frames * win, axis=1)
    return SpectrogramTensor(coeffs, window, signal.rate_hz, x.shape[0])


def istft(spec: SpectrogramTensor, length: int | None = None) -> SampledSignal:
    """Weighted overlap-add synthesis, inverse of :func:`stft`.

    Uses the analysis window again for synthesis and divides by the summed
    squared window, so an unmodified tensor reconstructs the original
    samples to machine precision on the analyzed extent.
    """
    window = spec.window
    dev = window.cola_deviation()
    if dev > 1e-8:
        raise ValueError(f"window/hop not COLA-compliant (deviation {dev:.2e})")

    n_frames, n_bins, n_ch = spec.coeffs.shape
    total = (n_frames - 1) * window.hop + window.length
    win = window.window()

    out = np.zeros((total, n_ch))
    denom = np.zeros(total)
    frames = np.fft.irfft(spec.coeffs, n=window.length, axis=1)  # (N, L, C)
    frames *= win[None, :, None]
    for t in range(n_frames):
        start = t * window.hop
        out[start:start + window.length] += frames[t]
        denom[start:start + window.length] += win ** 2
    good = denom > 1e-12
    out[good] /= denom[good, None]

    # strip the analysis padding
    left = window.length
    if length is None:
        length = spec.n_samples
    if length is None:
        length = max(total - 2 * window.length, 0)
    out = out[left:left + length]
    if out.shape[0] < length:
        out = np.pad(out, ((0, length - out.shape[0]), (0, 0)))
    return SampledSignal(out, spec.rate_hz)


def _interpolate_at(x: np.ndarray, pos: np.ndarray, order: int) -> np.ndarray:
    """Evaluate x at continuous positions by local Lagrange interpolation.

    x: (n, channels); pos: (m,) positions in samples.  Positions outside
    the input read zeros.  Uses order+1 support points around each position.
    """
    base = np.floor(pos).astype(np.int64)
    start = base - (order - 1) // 2
    t = pos - start  # interpolation abscissa relative to the stencil start

    lo = int(start.min())
    hi = int(start.max()) + order
    pad_left = max(-lo, 0) + 1
    pad_right = max(hi - (x.shape[0] - 1), 0) + 1
    padded = np.pad(x, ((pad_left, pad_right), (0, 0)))

    out = np.zeros((pos.shape[0], x.shape[1]))
    for j in range(order + 1):
        w = np.ones(pos.shape[0])
        for l in range(order + 1):
            if l == j:
                continue
            w *= (t - l) / (j - l)
        out += w[:, None] * padded[start + j + pad_left]
    return out


def lagrange_resample(signal: SampledSignal, rate_offset_hz: float,
                      order: int = 4) -> SampledSignal:
    """Resample by a small clock-rate offset using local Lagrange interpolation.

    Output sample tau takes the value of the input at continuous position
    tau * rate / (rate + rate_offset_hz).  Output length equals input
    length; positions past the input tail read zeros.

    Parameters
    ----------
    rate_offset_hz : deviation of the actual clock from the nominal rate.
    order : polynomial order (order+1 support points per output sample).
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if abs(rate_offset_hz) >= signal.rate_hz:
        raise ValueError(
            f"|rate_offset_hz| ({abs(rate_offset_hz)}) must be below the "
            f"sample rate ({signal.rate_hz})")

    x = signal.samples
    n = x.shape[0]
    if n == 0:
        return SampledSignal(x.copy(), signal.rate_hz)
    ratio = signal.rate_hz / (signal.rate_hz + rate_offset_hz)
    pos = np.arange(n, dtype=np.float64) * ratio
    return SampledSignal(_interpolate_at(x, pos, order), signal.rate_hz)


def fractional_delay(samples: np.ndarray, delay: float, order: int = 4) -> np.ndarray:
    """Delay a mono signal by a (possibly fractional) number of samples.

    Same Lagrange interpolator as :func:`lagrange_resample`; output length
    equals input length, the head reads zeros.
    """
    if delay < 0:
        raise ValueError(f"delay must be nonnegative, got {delay}")
    x = np.asarray(samples, dtype=np.float64)
    squeeze = x.ndim == 1
    x = _as_2d(x)
    if delay == 0.0:
        out = x.copy()
    else:
        pos = np.arange(x.shape[0], dtype=np.float64) - delay
        out = _interpolate_at(x, pos, order)
        # the interpolator sees pre-signal positions as zeros already, but
        # keep the strictly causal region exactly zero
        out[:int(np.floor(delay))] = 0.0
    return out[:, 0] if squeeze else out


def long_term_average_spectrum(spec: SpectrogramTensor) -> np.ndarray:
    """Mean of |coefficient|^2 over frames and channels, per frequency bin."""
    if spec.n_frames < 1:
        raise ValueError("spectrogram has no frames")
    power = spec.coeffs.real ** 2 + spec.coeffs.imag ** 2
    return power.mean(axis=(0, 2))
