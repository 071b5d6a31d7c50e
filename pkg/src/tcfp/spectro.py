"""Magnitude STFT feeding the chroma filter bank."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .audio_io import AudioSignal
from .errors import SignalTooShort

DEFAULT_WINDOW_S = 0.1
DEFAULT_OVERLAP = 0.75


@dataclass(frozen=True)
class Spectrogram:
    mags: np.ndarray = field(repr=False)  # (F, T) magnitudes
    frame_hop_s: float
    bin_hz: float
    window_len_s: float
    sample_rate: int
    window_len: int  # samples
    hop: int  # samples

    @property
    def n_frames(self) -> int:
        return self.mags.shape[1]

    def frame_times(self) -> np.ndarray:
        """Centre time (seconds) of every frame."""
        return (np.arange(self.n_frames) * self.hop + self.window_len / 2.0) / self.sample_rate


def hann_window(n: int) -> np.ndarray:
    # symmetric Hann without the zero endpoints
    return np.hanning(n + 2)[1:-1]


def frame_geometry(sample_rate: int, window_len_s: float, overlap_fraction: float) -> tuple[int, int]:
    # round half up: 882 * 0.25 = 220.5 -> 221
    n = int(math.floor(window_len_s * sample_rate + 0.5))
    hop = int(math.floor(n * (1.0 - overlap_fraction) + 0.5))
    return n, max(hop, 1)


def stft_magnitude(
    sig: AudioSignal,
    window_len_s: float = DEFAULT_WINDOW_S,
    overlap_fraction: float = DEFAULT_OVERLAP,
    zero_pad: int = 1,
) -> Spectrogram:
    """Hann-weighted one-sided STFT magnitudes.

    Frame ``k`` covers samples ``[k*hop, k*hop + N)``; a trailing partial
    window is dropped. ``zero_pad > 1`` evaluates the DFT on a grid
    ``zero_pad`` times finer than ``fs/N`` (same window, same resolution).
    """
    if not 0.0 <= overlap_fraction < 1.0:
        raise ValueError("overlap_fraction must lie in [0, 1)")
    fs = sig.sample_rate
    n, hop = frame_geometry(fs, window_len_s, overlap_fraction)
    if n < 2:
        raise ValueError("window shorter than two samples")
    x = sig.samples
    if len(x) < n:
        raise SignalTooShort(f"signal has {len(x)} samples, window needs {n}")

    n_frames = (len(x) - n) // hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(x, n)[::hop][:n_frames]
    window = hann_window(n)
    n_fft = n * int(zero_pad)
    mags = np.abs(np.fft.rfft(frames * window, n=n_fft, axis=1)).T
    return Spectrogram(
        mags=np.ascontiguousarray(mags),
        frame_hop_s=hop / fs,
        bin_hz=fs / n_fft,
        window_len_s=n / fs,
        sample_rate=fs,
        window_len=n,
        hop=hop,
    )
