"""Acoustic frontend: MFCC and log mel filterbank features, regression
deltas, per-utterance CMVN, and tandem concatenation with external features.

Fixed conventions (documented so tests can pin exact values):

* 25 ms Hamming window, 10 ms shift; frame count floor((N - window)/hop) + 1.
* Pre-emphasis y[0] = (1 - a) x[0], y[t] = x[t] - a x[t-1] on the whole signal.
* Mel scale 2595 log10(1 + f/700); triangular filters linear in mel,
  spanning 0 .. sample_rate/2.
* DCT-II with orthonormal scaling; cepstra 1..num_cepstra (c0 dropped).
* Energy = log of raw per-frame energy, floored at 1e-10, appended after
  the cepstra.
* Delta edges replicate the boundary frames, so T never changes.
* Dither is off by default; when enabled it uses a fixed-seed generator so
  pipelines stay reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.fft

from .errors import FrameCountMismatchError, UtteranceTooShortError
from .io import Waveform

ENERGY_FLOOR = 1e-10
CMVN_VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class FeatureMatrix:
    """T x D grid of finite values plus bookkeeping."""

    frames: np.ndarray
    frame_shift: float = 0.01
    kind: str = "EXTERNAL"  # MFCC | FBANK | EXTERNAL | TANDEM

    def __post_init__(self):
        frames = np.atleast_2d(np.asarray(self.frames, dtype=np.float64))
        if frames.shape[0] < 1:
            raise ValueError("feature matrix needs at least one frame")
        if not np.all(np.isfinite(frames)):
            raise ValueError("feature matrix contains non-finite values")
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class FrontendConfig:
    num_filters: int = 40
    num_cepstra: int = 19
    include_energy: bool = True
    delta_window: int = 2
    frame_length_s: float = 0.025
    frame_shift_s: float = 0.010
    preemphasis: float = 0.97
    dither: float = 0.0

    def __post_init__(self):
        if self.num_cepstra >= self.num_filters:
            raise ValueError("num_cepstra must be smaller than num_filters")
        if self.frame_shift_s > self.frame_length_s:
            raise ValueError("frame shift must not exceed frame length")


def _coerce(features, kind: str = "EXTERNAL") -> FeatureMatrix:
    if isinstance(features, FeatureMatrix):
        return features
    return FeatureMatrix(frames=features, kind=kind)


def _frame_signal(samples: np.ndarray, window: int, hop: int) -> np.ndarray:
    n = len(samples)
    if n < window:
        raise UtteranceTooShortError(
            f"utterance has {n} samples, window needs {window}"
        )
    num_frames = (n - window) // hop + 1
    idx = np.arange(window)[None, :] + hop * np.arange(num_frames)[:, None]
    return samples[idx]


def mel_from_hz(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def hz_from_mel(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filter_centers(num_filters: int, sample_rate: int) -> np.ndarray:
    """Center frequencies (Hz) of the triangular filters."""
    edges = np.linspace(0.0, mel_from_hz(sample_rate / 2.0), num_filters + 2)
    return hz_from_mel(edges[1:-1])


def _mel_filterbank(num_filters: int, nfft: int, sample_rate: int) -> np.ndarray:
    """(num_filters, nfft//2 + 1) triangular weights, linear in mel."""
    mel_edges = np.linspace(0.0, mel_from_hz(sample_rate / 2.0), num_filters + 2)
    bin_mels = mel_from_hz(np.arange(nfft // 2 + 1) * sample_rate / nfft)
    lower = mel_edges[:-2][:, None]
    center = mel_edges[1:-1][:, None]
    upper = mel_edges[2:][:, None]
    up = (bin_mels[None, :] - lower) / (center - lower)
    down = (upper - bin_mels[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(up, down))


def _log_mel_energies(waveform: Waveform, config: FrontendConfig):
    """Shared MFCC/FBank front half: framing, window, power spectrum, mel."""
    sr = waveform.sample_rate
    window = int(round(config.frame_length_s * sr))
    hop = int(round(config.frame_shift_s * sr))
    samples = np.asarray(waveform.samples, dtype=np.float64)
    if config.dither > 0:
        rng = np.random.default_rng(12345)
        samples = samples + config.dither * rng.standard_normal(len(samples))

    raw_frames = _frame_signal(samples, window, hop)
    log_energy = np.log(np.maximum(np.sum(raw_frames**2, axis=1), ENERGY_FLOOR))

    emphasized = np.empty_like(samples)
    emphasized[0] = (1.0 - config.preemphasis) * samples[0]
    emphasized[1:] = samples[1:] - config.preemphasis * samples[:-1]
    frames = _frame_signal(emphasized, window, hop) * np.hamming(window)

    nfft = 1
    while nfft < window:
        nfft *= 2
    power = np.abs(np.fft.rfft(frames, n=nfft, axis=1)) ** 2
    fbank = _mel_filterbank(config.num_filters, nfft, sr)
    log_mel = np.log(np.maximum(power @ fbank.T, ENERGY_FLOOR))
    return log_mel, log_energy


def compute_mfcc(waveform: Waveform, config: FrontendConfig = FrontendConfig()) -> FeatureMatrix:
    """Static cepstra (c1..c{num_cepstra}) plus optional log-energy."""
    log_mel, log_energy = _log_mel_energies(waveform, config)
    cepstra = scipy.fft.dct(log_mel, type=2, norm="ortho", axis=1)
    static = cepstra[:, 1 : config.num_cepstra + 1]
    if config.include_energy:
        static = np.hstack([static, log_energy[:, None]])
    return FeatureMatrix(frames=static, frame_shift=config.frame_shift_s, kind="MFCC")


def compute_fbank(waveform: Waveform, config: FrontendConfig = FrontendConfig()) -> FeatureMatrix:
    """Log mel filterbank energies; same framing as MFCC, no DCT."""
    log_mel, _ = _log_mel_energies(waveform, config)
    return FeatureMatrix(frames=log_mel, frame_shift=config.frame_shift_s, kind="FBANK")


def _delta(frames: np.ndarray, window: int) -> np.ndarray:
    """Regression delta with boundary-frame replication."""
    t = frames.shape[0]
    denom = 2.0 * sum(n * n for n in range(1, window + 1))
    out = np.zeros_like(frames)
    for n in range(1, window + 1):
        fwd = np.clip(np.arange(t) + n, 0, t - 1)
        back = np.clip(np.arange(t) - n, 0, t - 1)
        out += n * (frames[fwd] - frames[back])
    return out / denom


def append_deltas(features, window: int = 2) -> FeatureMatrix:
    """Append delta and delta-delta streams; output dim = 3x input dim."""
    if window < 1:
        raise ValueError("delta window must be >= 1")
    fm = _coerce(features)
    d1 = _delta(fm.frames, window)
    d2 = _delta(d1, window)
    return FeatureMatrix(
        frames=np.hstack([fm.frames, d1, d2]),
        frame_shift=fm.frame_shift,
        kind=fm.kind,
    )


def apply_cmvn(features) -> FeatureMatrix:
    """Per-utterance mean/variance normalization.

    Dimensions whose variance falls below the floor are zeroed after mean
    subtraction; a single-frame utterance gets mean-only normalization.
    """
    fm = _coerce(features)
    centered = fm.frames - fm.frames.mean(axis=0)
    if fm.num_frames < 2:
        return replace(fm, frames=centered)
    var = fm.frames.var(axis=0)
    floored = var < CMVN_VARIANCE_FLOOR
    scale = np.where(floored, 0.0, 1.0 / np.sqrt(np.where(floored, 1.0, var)))
    return replace(fm, frames=centered * scale)


def tandem_concat(base, external) -> FeatureMatrix:
    """Frame-wise concatenation of a base stream with external features."""
    base = _coerce(base)
    external = _coerce(external)
    if base.num_frames != external.num_frames:
        raise FrameCountMismatchError(
            f"base has {base.num_frames} frames, external has {external.num_frames}"
        )
    frames = np.hstack([base.frames, external.frames])
    return FeatureMatrix(frames=frames, frame_shift=base.frame_shift, kind="TANDEM")
