"""Chroma^n filter bank and the time-chroma image.

Pitch ``i`` sits at ``f0 * 2**(i/m)``. Pitches ``n`` octaves apart
(``i`` and ``i + n*m``) are folded into the same chroma bin, so the image
has ``B = n*m`` rows and is circular along the chroma axis: a pitch shift
of ``d`` steps is a circular roll of the rows by ``d``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import sparse

from .audio_io import AudioSignal
from .errors import SignalTooShort
from .spectro import DEFAULT_OVERLAP, DEFAULT_WINDOW_S, Spectrogram, frame_geometry, hann_window

DEFAULT_ZERO_PAD = 16

FLAT_HALF_WIDTH = 0.25  # pitch steps
ROLLOFF_END = 0.75  # pitch steps; 0.5 at the midpoint between pitches
BIN_SUBSAMPLES = 16  # quadrature points per spectrogram bin


@dataclass(frozen=True)
class ChromaParams:
    m: int = 72  # pitches per octave
    n: int = 4  # octaves per chroma^n period
    f0: float = 80.0
    fs: int = 8820

    def __post_init__(self):
        if self.m < 1 or self.n < 1 or self.m * self.n < 2:
            raise ValueError("need m >= 1, n >= 1 and n*m >= 2")
        if self.f0 <= 0:
            raise ValueError("f0 must be positive")
        if 2.0 ** self.n * self.f0 >= self.fs / 2.0:
            raise ValueError("fs/2 must exceed 2**n * f0 so one full period is representable")

    @property
    def n_bins(self) -> int:
        return self.n * self.m

    @property
    def n_pitches(self) -> int:
        # largest i with f0 * 2**(i/m) <= fs/2
        return int(np.floor(self.m * np.log2(self.fs / 2.0 / self.f0) + 1e-9)) + 1

    def pitch_freq(self, i) -> np.ndarray:
        return self.f0 * 2.0 ** (np.asarray(i, dtype=np.float64) / self.m)


def filter_response(x) -> np.ndarray:
    """Flat-top raised-cosine response at distance ``x`` pitch steps from centre.

    Weight 1 within a quarter step, cosine rolloff reaching 0.5 half-way to
    the neighbouring pitch and 0 at three quarters of a step, so responses of
    adjacent pitches sum to exactly one.
    """
    ax = np.abs(np.asarray(x, dtype=np.float64))
    x_roll = np.clip(ax, FLAT_HALF_WIDTH, ROLLOFF_END) - FLAT_HALF_WIDTH
    ramp = 0.5 * (1.0 + np.cos(np.pi * x_roll / (ROLLOFF_END - FLAT_HALF_WIDTH)))
    return np.where(ax <= FLAT_HALF_WIDTH, 1.0, np.where(ax < ROLLOFF_END, ramp, 0.0))


@dataclass(frozen=True)
class PitchFilterBank:
    weights: sparse.csr_matrix = field(repr=False)  # (n_pitches, n_spec_bins)
    params: ChromaParams
    bin_hz: float

    @property
    def n_pitches(self) -> int:
        return self.weights.shape[0]

    def pitch_freq(self, i):
        return self.params.pitch_freq(i)


def build_filter_bank(params: ChromaParams, spec_bin_hz: float, n_spec_bins: int | None = None) -> PitchFilterBank:
    """One flat-top filter per pitch, averaged over each spectrogram bin's extent.

    A bin's weight for pitch ``i`` is the mean filter response over the bin's
    frequency interval (``BIN_SUBSAMPLES`` midpoints), so a pitch narrower
    than a bin still gets its fractional share and the weights of all
    pitches in any bin sum to at most one.
    """
    if spec_bin_hz <= 0:
        raise ValueError("spec_bin_hz must be positive")
    if n_spec_bins is None:
        n_spec_bins = int(np.floor(params.fs / 2.0 / spec_bin_hz)) + 1
    n_p = params.n_pitches
    offsets = ((np.arange(BIN_SUBSAMPLES) + 0.5) / BIN_SUBSAMPLES - 0.5) * spec_bin_hz
    sub_f = np.arange(n_spec_bins)[:, None] * spec_bin_hz + offsets[None, :]

    # sub-bin positions in pitch steps; frequencies below f0 (half a step of slack) get nothing
    steps = np.full(sub_f.shape, -np.inf)
    valid = sub_f >= params.f0 * 2.0 ** (-0.5 / params.m)
    steps[valid] = params.m * np.log2(sub_f[valid] / params.f0)
    lo_step, hi_step = steps[:, 0], steps[:, -1]

    rows, cols, vals = [], [], []
    for i in range(n_p):
        lo = np.searchsorted(hi_step, i - ROLLOFF_END, side="right")
        hi = np.searchsorted(lo_step, i + ROLLOFF_END, side="left")
        if hi <= lo:
            continue
        w = filter_response(steps[lo:hi] - i).mean(axis=1)
        keep = w > 0
        rows.extend([i] * int(keep.sum()))
        cols.extend(np.arange(lo, hi)[keep].tolist())
        vals.extend(w[keep].tolist())

    mat = sparse.csr_matrix((vals, (rows, cols)), shape=(n_p, n_spec_bins))
    return PitchFilterBank(weights=mat, params=params, bin_hz=spec_bin_hz)


@dataclass(frozen=True)
class TimeChromaImage:
    values: np.ndarray = field(repr=False)  # (B, T)
    frame_hop_s: float
    params: ChromaParams
    t0_s: float = 0.0  # centre time of frame 0

    @property
    def n_bins(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    def frame_time(self, t_frame):
        return self.t0_s + np.asarray(t_frame, dtype=np.float64) * self.frame_hop_s

    def with_values(self, values: np.ndarray) -> "TimeChromaImage":
        return TimeChromaImage(values, self.frame_hop_s, self.params, self.t0_s)


def fold_pitches(pitch_energy: np.ndarray, n_bins: int) -> np.ndarray:
    """Sum rows ``b, b+B, b+2B, ...`` into row ``b``."""
    n_p, n_t = pitch_energy.shape
    n_periods = -(-n_p // n_bins)
    padded = np.zeros((n_periods * n_bins, n_t))
    padded[:n_p] = pitch_energy
    return padded.reshape(n_periods, n_bins, n_t).sum(axis=0)


def compute_time_chroma(
    sgram: Spectrogram,
    params: ChromaParams = ChromaParams(),
    bank: PitchFilterBank | None = None,
) -> TimeChromaImage:
    if sgram.sample_rate != params.fs:
        raise ValueError(f"spectrogram at {sgram.sample_rate} Hz, params expect {params.fs} Hz")
    if bank is None:
        bank = build_filter_bank(params, sgram.bin_hz, sgram.mags.shape[0])
    energy = sgram.mags ** 2
    pitch_energy = bank.weights @ energy
    values = fold_pitches(np.asarray(pitch_energy), params.n_bins)
    t0 = sgram.window_len / 2.0 / sgram.sample_rate
    return TimeChromaImage(values, sgram.frame_hop_s, params, t0)


def circular_shift(img: TimeChromaImage, delta_bins: int) -> TimeChromaImage:
    """Pitch shift by ``delta_bins`` steps: values'[b] = values[b - delta]."""
    return img.with_values(np.roll(img.values, int(delta_bins), axis=0))


def column_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-column cosine similarity; all-zero column pairs count as 1."""
    na = np.linalg.norm(a, axis=0)
    nb = np.linalg.norm(b, axis=0)
    den = na * nb
    num = np.sum(a * b, axis=0)
    out = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return np.where((na == 0) & (nb == 0), 1.0, out)


@lru_cache(maxsize=16)
def _cached_bank(params: ChromaParams, bin_hz: float, n_spec_bins: int) -> PitchFilterBank:
    return build_filter_bank(params, bin_hz, n_spec_bins)


def time_chroma(
    sig: AudioSignal,
    params: ChromaParams = ChromaParams(),
    window_len_s: float = DEFAULT_WINDOW_S,
    overlap_fraction: float = DEFAULT_OVERLAP,
    zero_pad: int = DEFAULT_ZERO_PAD,
    chunk_frames: int = 512,
) -> TimeChromaImage:
    """Audio at ``params.fs`` straight to its time-chroma image.

    Same result as ``compute_time_chroma(stft_magnitude(...))`` but the
    (large, zero-padded) spectrogram is only ever held one chunk at a time.
    """
    if sig.sample_rate != params.fs:
        raise ValueError(f"signal at {sig.sample_rate} Hz, params expect {params.fs} Hz")
    n, hop = frame_geometry(sig.sample_rate, window_len_s, overlap_fraction)
    if len(sig.samples) < n:
        raise SignalTooShort(f"signal has {len(sig.samples)} samples, window needs {n}")
    n_fft = n * zero_pad
    bank = _cached_bank(params, sig.sample_rate / n_fft, n_fft // 2 + 1)
    n_frames = (len(sig.samples) - n) // hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(sig.samples, n)[::hop][:n_frames]
    window = hann_window(n)
    out = np.empty((params.n_bins, n_frames))
    wt = bank.weights.T.tocsr()
    for start in range(0, n_frames, chunk_frames):
        chunk = frames[start:start + chunk_frames] * window
        energy = np.abs(np.fft.rfft(chunk, n=n_fft, axis=1)) ** 2
        pitch_energy = np.asarray(energy @ wt).T
        out[:, start:start + chunk_frames] = fold_pitches(pitch_energy, params.n_bins)
    return TimeChromaImage(out, hop / sig.sample_rate, params, n / 2.0 / sig.sample_rate)
