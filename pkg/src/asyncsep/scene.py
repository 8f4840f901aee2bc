"""Synthetic asynchronous multi-array scenes with ground-truth source images.

A scene is a declarative description of sources, arrays and their coupling
(per-channel gain, fractional delay and optional echo taps), plus per-array
sample-clock offsets.  Synthesis renders every source image exactly, mixes
them with seeded white noise, and finally resamples each array by its own
clock offset, so the ground-truth images stay on the nominal clock.

Scene files are YAML::

    version: 1
    rate_hz: 16000
    duration_s: 15.0
    noise_level: 0.003          # white-noise standard deviation per channel
    arrays:
      - {id: a1, channels: 2, sro_hz: 0.3}
    sources:
      - id: s1
        signal: {type: speech_noise, level: 0.1, activity: 0.45}
        coupling:
          a1:                   # one entry per channel of the array
            - {delay: 0.0, gain: 1.0,
               echoes: [{delay: 310.4, gain: 0.30}]}
            - {delay: 4.2, gain: 0.95}

Signal descriptors: ``wav`` (path, mixed down to mono, rate must match),
``white`` (level), ``tone`` (freq_hz, level), ``impulse`` (position,
amplitude), ``speech_noise`` (level, activity, band_hz, tilt_hz,
modulation_hz).  Delays are in samples and may be fractional; echo delays
are absolute, not relative to the direct path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .audio import read_wav
from .dsp import SampledSignal, fractional_delay, lagrange_resample
from .errors import ConfigError

__all__ = [
    "EchoTap",
    "ChannelCoupling",
    "SourceSpec",
    "ArraySpec",
    "SceneSpec",
    "SourceImageSet",
    "MultichannelRecording",
    "load_scene",
    "scene_from_dict",
    "scene_to_dict",
    "synthesize_scene",
    "apply_sro",
    "mix_images",
]


@dataclass
class EchoTap:
    delay: float
    gain: float


@dataclass
class ChannelCoupling:
    delay: float
    gain: float
    echoes: list[EchoTap] = field(default_factory=list)


@dataclass
class SourceSpec:
    id: str
    signal: dict
    coupling: dict[str, list[ChannelCoupling]]


@dataclass
class ArraySpec:
    id: str
    channels: int
    sro_hz: float = 0.0


@dataclass
class SceneSpec:
    rate_hz: float
    duration_s: float
    sources: list[SourceSpec]
    arrays: list[ArraySpec]
    noise_level: float = 0.0

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ConfigError("duration_s must be positive")
        if self.rate_hz <= 0:
            raise ConfigError("rate_hz must be positive")
        if self.noise_level < 0:
            raise ConfigError("noise_level must be nonnegative")
        ids = [a.id for a in self.arrays]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate array ids")
        sids = [s.id for s in self.sources]
        if len(set(sids)) != len(sids):
            raise ConfigError("duplicate source ids")
        for src in self.sources:
            for arr in self.arrays:
                taps = src.coupling.get(arr.id)
                if taps is None:
                    raise ConfigError(
                        f"source {src.id!r} has no coupling for array {arr.id!r}")
                if len(taps) != arr.channels:
                    raise ConfigError(
                        f"source {src.id!r} / array {arr.id!r}: "
                        f"{len(taps)} channel couplings, expected {arr.channels}")
                for tap in taps:
                    if tap.delay < 0 or any(e.delay < 0 for e in tap.echoes):
                        raise ConfigError(
                            f"source {src.id!r}: delays must be nonnegative")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.rate_hz))

    def array(self, array_id: str) -> ArraySpec:
        for a in self.arrays:
            if a.id == array_id:
                return a
        raise KeyError(array_id)


@dataclass
class SourceImageSet:
    """Ground-truth per-(array, source) images on the nominal clock."""

    images: dict[tuple[str, str], SampledSignal]

    def __post_init__(self):
        by_array: dict[str, tuple[int, float]] = {}
        for (m, _), sig in self.images.items():
            key = (sig.n_samples, sig.rate_hz)
            if m in by_array and by_array[m] != key:
                raise ValueError(f"images of array {m!r} differ in length or rate")
            by_array[m] = key

    def arrays(self) -> list[str]:
        return sorted({m for (m, _) in self.images})

    def sources_for(self, array_id: str) -> list[str]:
        return [k for (m, k) in self.images if m == array_id]


@dataclass
class MultichannelRecording:
    """One device's recording; sro_hz is the clock offset baked into it."""

    signal: SampledSignal
    array_id: str
    sro_hz: float = 0.0


# ---------------------------------------------------------------------------
# scene file handling
# ---------------------------------------------------------------------------

def _coupling_from_dict(obj, where: str) -> ChannelCoupling:
    if not isinstance(obj, dict) or "delay" not in obj or "gain" not in obj:
        raise ConfigError(f"{where}: channel coupling needs 'delay' and 'gain'")
    echoes = []
    for e in obj.get("echoes", []) or []:
        if not isinstance(e, dict) or "delay" not in e or "gain" not in e:
            raise ConfigError(f"{where}: echo taps need 'delay' and 'gain'")
        echoes.append(EchoTap(float(e["delay"]), float(e["gain"])))
    return ChannelCoupling(float(obj["delay"]), float(obj["gain"]), echoes)


def scene_from_dict(data: dict, base_dir: Path | None = None) -> SceneSpec:
    """Build a validated SceneSpec from parsed YAML/JSON data."""
    if not isinstance(data, dict):
        raise ConfigError("scene config must be a mapping")
    version = data.get("version", 1)
    if version != 1:
        raise ConfigError(f"unsupported scene config version: {version}")
    try:
        arrays = [ArraySpec(str(a["id"]), int(a["channels"]),
                            float(a.get("sro_hz", 0.0)))
                  for a in data["arrays"]]
        raw_sources = data["sources"]
        rate = float(data["rate_hz"])
        duration = float(data["duration_s"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"scene config missing or malformed field: {exc}") from exc

    sources = []
    for s in raw_sources:
        if "id" not in s or "signal" not in s or "coupling" not in s:
            raise ConfigError("each source needs 'id', 'signal' and 'coupling'")
        signal = dict(s["signal"])
        if signal.get("type") == "wav" and base_dir is not None:
            p = Path(signal.get("path", ""))
            if not p.is_absolute():
                signal["path"] = str(base_dir / p)
        coupling = {}
        for aid, taps in s["coupling"].items():
            coupling[str(aid)] = [
                _coupling_from_dict(t, f"source {s['id']!r}/array {aid!r}")
                for t in taps]
        sources.append(SourceSpec(str(s["id"]), signal, coupling))
    return SceneSpec(rate_hz=rate, duration_s=duration, sources=sources,
                     arrays=arrays, noise_level=float(data.get("noise_level", 0.0)))


def load_scene(path) -> SceneSpec:
    """Load and validate a YAML scene file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"scene file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse scene file {path}: {exc}") from exc
    return scene_from_dict(data, base_dir=path.parent)


def scene_to_dict(spec: SceneSpec) -> dict:
    return {
        "version": 1,
        "rate_hz": spec.rate_hz,
        "duration_s": spec.duration_s,
        "noise_level": spec.noise_level,
        "arrays": [{"id": a.id, "channels": a.channels, "sro_hz": a.sro_hz}
                   for a in spec.arrays],
        "sources": [{
            "id": s.id,
            "signal": dict(s.signal),
            "coupling": {
                aid: [{"delay": t.delay, "gain": t.gain,
                       "echoes": [{"delay": e.delay, "gain": e.gain}
                                  for e in t.echoes]}
                      for t in taps]
                for aid, taps in s.coupling.items()},
        } for s in spec.sources],
    }


# ---------------------------------------------------------------------------
# source signal rendering
# ---------------------------------------------------------------------------

def _bandlimited_noise(n: int, rate: float, cutoff_hz: float,
                       rng: np.random.Generator) -> np.ndarray:
    w = rng.standard_normal(n)
    W = np.fft.rfft(w)
    f = np.fft.rfftfreq(n, 1.0 / rate)
    W[f > cutoff_hz] = 0.0
    return np.fft.irfft(W, n)


def _render_speech_noise(n: int, rate: float, rng: np.random.Generator,
                         params: dict) -> np.ndarray:
    """Speech-like test source: tilted bandpass noise under a sparse,
    syllabic-rate envelope with genuine silent gaps."""
    band = params.get("band_hz", [120.0, 7200.0])
    tilt = float(params.get("tilt_hz", 500.0))
    mod = float(params.get("modulation_hz", 3.0))
    activity = float(params.get("activity", 0.5))
    level = float(params.get("level", 0.1))
    if not 0.0 < activity <= 1.0:
        raise ConfigError("speech_noise activity must be in (0, 1]")

    w = rng.standard_normal(n)
    W = np.fft.rfft(w)
    f = np.fft.rfftfreq(n, 1.0 / rate)
    shape = 1.0 / np.sqrt(1.0 + (f / tilt) ** 2)
    shape[(f < band[0]) | (f > band[1])] = 0.0
    carrier = np.fft.irfft(W * shape, n)
    carrier /= max(np.sqrt(np.mean(carrier ** 2)), 1e-30)

    raw = _bandlimited_noise(n, rate, mod, rng)
    thr = np.quantile(raw, 1.0 - activity)
    env = np.maximum(raw - thr, 0.0)
    peak = env.max()
    if peak > 0:
        env /= peak
    sig = carrier * env
    active = env > 0
    if active.any():
        r = np.sqrt(np.mean(sig[active] ** 2))
        if r > 0:
            sig *= level / r
    return sig


def render_source_signal(descriptor: dict, n: int, rate: float,
                         rng: np.random.Generator) -> np.ndarray:
    """Render one mono source signal of n samples from its descriptor."""
    if not isinstance(descriptor, dict) or "type" not in descriptor:
        raise ConfigError("source signal descriptor needs a 'type' field")
    kind = descriptor["type"]
    if kind == "wav":
        sig = read_wav(descriptor.get("path", ""), expected_rate=rate)
        mono = sig.samples.mean(axis=1)
        out = np.zeros(n)
        m = min(n, mono.shape[0])
        out[:m] = mono[:m]
        return out
    if kind == "white":
        return float(descriptor.get("level", 0.1)) * rng.standard_normal(n)
    if kind == "tone":
        freq = float(descriptor.get("freq_hz", 440.0))
        level = float(descriptor.get("level", 0.1))
        t = np.arange(n) / rate
        return level * np.sin(2.0 * np.pi * freq * t)
    if kind == "impulse":
        pos = int(descriptor.get("position", 0))
        if not 0 <= pos < n:
            raise ConfigError(f"impulse position {pos} outside signal")
        out = np.zeros(n)
        out[pos] = float(descriptor.get("amplitude", 1.0))
        return out
    if kind == "speech_noise":
        return _render_speech_noise(n, rate, rng, descriptor)
    raise ConfigError(f"unknown source signal type: {kind!r}")


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------

def _child_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence([seed, *key]).generate_state(1)[0])


def _image_for(source_sig: np.ndarray, taps: list[ChannelCoupling],
               rate: float, order: int) -> SampledSignal:
    n = source_sig.shape[0]
    out = np.zeros((n, len(taps)))
    for c, tap in enumerate(taps):
        y = tap.gain * fractional_delay(source_sig, tap.delay, order=order)
        for echo in tap.echoes:
            y += echo.gain * fractional_delay(source_sig, echo.delay, order=order)
        out[:, c] = y
    return SampledSignal(out, rate)


def mix_images(images: SourceImageSet, array_id: str, noise_level: float,
               seed: int) -> MultichannelRecording:
    """Sum one array's source images and add seeded white Gaussian noise."""
    keys = [(m, k) for (m, k) in images.images if m == array_id]
    if not keys:
        raise ValueError(f"no images for array {array_id!r}")
    first = images.images[keys[0]]
    total = np.zeros_like(first.samples)
    for key in keys:
        total = total + images.images[key].samples
    if noise_level > 0:
        rng = np.random.default_rng(seed)
        total = total + noise_level * rng.standard_normal(total.shape)
    return MultichannelRecording(SampledSignal(total, first.rate_hz), array_id)


def apply_sro(recording: MultichannelRecording, sro_hz: float,
              order: int = 4) -> MultichannelRecording:
    """Resample all channels of a device by its single clock offset."""
    if sro_hz == 0.0:
        return MultichannelRecording(
            SampledSignal(recording.signal.samples.copy(),
                          recording.signal.rate_hz),
            recording.array_id, recording.sro_hz)
    resampled = lagrange_resample(recording.signal, sro_hz, order=order)
    return MultichannelRecording(resampled, recording.array_id,
                                 recording.sro_hz + sro_hz)


def synthesize_scene(spec: SceneSpec, seed: int, delay_order: int = 4,
                     ) -> tuple[SourceImageSet, dict[str, MultichannelRecording]]:
    """Render ground-truth images and per-device recordings for a scene.

    Returns images on the nominal clock and recordings with each array's
    sro_hz applied after mixing (one clock per device).  Deterministic
    given (spec, seed).
    """
    n = spec.n_samples
    signals = {}
    for idx, src in enumerate(spec.sources):
        rng = np.random.default_rng([seed, 101, idx])
        signals[src.id] = render_source_signal(src.signal, n, spec.rate_hz, rng)

    images = {}
    for src in spec.sources:
        for arr in spec.arrays:
            images[(arr.id, src.id)] = _image_for(
                signals[src.id], src.coupling[arr.id], spec.rate_hz, delay_order)
    image_set = SourceImageSet(images)

    recordings = {}
    for a_idx, arr in enumerate(spec.arrays):
        if spec.sources:
            rec = mix_images(image_set, arr.id, spec.noise_level,
                             _child_seed(seed, 202, a_idx))
        else:
            base = np.zeros((n, arr.channels))
            if spec.noise_level > 0:
                rng = np.random.default_rng(_child_seed(seed, 202, a_idx))
                base += spec.noise_level * rng.standard_normal(base.shape)
            rec = MultichannelRecording(SampledSignal(base, spec.rate_hz), arr.id)
        recordings[arr.id] = apply_sro(rec, arr.sro_hz, order=delay_order)
    return image_set, recordings
