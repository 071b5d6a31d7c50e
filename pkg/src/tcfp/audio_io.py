"""WAV decoding/encoding and band-limited resampling.

Only uncompressed RIFF/WAVE is handled: integer PCM (8/16/24/32 bit) and
IEEE float (32/64 bit). Everything downstream works on mono float64 at the
canonical rate (8820 Hz by default).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd

import numpy as np
from scipy import signal as sps

from .errors import MalformedHeader, UnsupportedEncoding

CANONICAL_RATE = 8820

_FORMAT_PCM = 1
_FORMAT_FLOAT = 3
_FORMAT_EXTENSIBLE = 0xFFFE

# resampler design
TAPS_PER_PHASE = 32
CUTOFF_FRACTION = 0.45
KAISER_BETA = 6.0


@dataclass(frozen=True)
class AudioSignal:
    """Mono sample buffer with its sample rate."""

    samples: np.ndarray = field(repr=False)
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioSignal must be mono (1-D)")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioSignal samples must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


def _parse_fmt(body: bytes):
    if len(body) < 16:
        raise MalformedHeader("fmt chunk shorter than 16 bytes")
    tag, channels, rate, _byte_rate, block_align, bits = struct.unpack("<HHIIHH", body[:16])
    if tag == _FORMAT_EXTENSIBLE:
        if len(body) < 40:
            raise MalformedHeader("truncated WAVE_FORMAT_EXTENSIBLE fmt chunk")
        # first two bytes of the sub-format GUID carry the real format tag
        tag = struct.unpack("<H", body[24:26])[0]
    return tag, channels, rate, block_align, bits


def load_wav(path) -> AudioSignal:
    """Read a PCM/float WAV file and downmix to mono by channel averaging.

    Integer samples are divided by the largest magnitude of their type
    (e.g. 32768 for 16-bit), so the negative full-scale value maps to -1.
    """
    # OSError propagates as the IoError case
    with open(path, "rb") as fh:
        data = fh.read()

    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedHeader(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        size = struct.unpack("<I", data[pos + 4:pos + 8])[0]
        body = data[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < size:
                raise MalformedHeader(f"{path}: truncated fmt chunk")
            fmt = _parse_fmt(body)
        elif cid == b"data":
            payload = body  # tolerate a data chunk cut short by a writer
            if fmt is not None:
                break
        pos += 8 + size + (size & 1)

    if fmt is None:
        raise MalformedHeader(f"{path}: missing fmt chunk")
    if payload is None:
        raise MalformedHeader(f"{path}: missing data chunk")

    tag, channels, rate, block_align, bits = fmt
    if channels not in (1, 2):
        raise UnsupportedEncoding(f"{path}: {channels} channels (only mono/stereo)")
    if rate <= 0:
        raise MalformedHeader(f"{path}: sample rate {rate}")
    width = bits // 8
    if bits % 8 or block_align != width * channels:
        raise MalformedHeader(f"{path}: inconsistent block alignment")

    n_frames = len(payload) // block_align
    raw = payload[:n_frames * block_align]

    if tag == _FORMAT_PCM:
        if bits == 8:
            x = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
        elif bits == 16:
            x = np.frombuffer(raw, dtype="<i2") / 32768.0
        elif bits == 24:
            b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
            v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
            v = np.where(v >= 1 << 23, v - (1 << 24), v)
            x = v / float(1 << 23)
        elif bits == 32:
            x = np.frombuffer(raw, dtype="<i4") / float(1 << 31)
        else:
            raise UnsupportedEncoding(f"{path}: {bits}-bit integer PCM")
    elif tag == _FORMAT_FLOAT:
        if bits == 32:
            x = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        elif bits == 64:
            x = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        else:
            raise UnsupportedEncoding(f"{path}: {bits}-bit float")
    else:
        raise UnsupportedEncoding(f"{path}: format tag {tag:#x} is not PCM")

    x = np.asarray(x, dtype=np.float64).reshape(n_frames, channels)
    return AudioSignal(x.mean(axis=1), rate)


def write_wav(path, sig: AudioSignal, bits: int = 16) -> None:
    """Write a mono WAV. ``bits`` is 8/16/24 (integer PCM) or 32 (float)."""
    x = np.clip(np.asarray(sig.samples, dtype=np.float64), -1.0, 1.0)
    if bits == 8:
        raw = np.clip(np.round(x * 128.0) + 128, 0, 255).astype(np.uint8).tobytes()
        tag = _FORMAT_PCM
    elif bits == 16:
        raw = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2").tobytes()
        tag = _FORMAT_PCM
    elif bits == 24:
        v = np.clip(np.round(x * (1 << 23)), -(1 << 23), (1 << 23) - 1).astype(np.int64)
        v = np.where(v < 0, v + (1 << 24), v).astype(np.uint32)
        raw = np.stack([v & 0xFF, (v >> 8) & 0xFF, (v >> 16) & 0xFF], axis=1).astype(np.uint8).tobytes()
        tag = _FORMAT_PCM
    elif bits == 32:
        raw = x.astype("<f4").tobytes()
        tag = _FORMAT_FLOAT
    else:
        raise UnsupportedEncoding(f"cannot write {bits}-bit WAV")

    width = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, sig.sample_rate, sig.sample_rate * width, width, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(raw)) + raw
    if len(raw) & 1:
        body += b"\x00"
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", len(body)) + body)
    os.replace(tmp, path)


def _lowpass_kernel(up: int, down: int) -> np.ndarray:
    # resample_poly applies the interpolation gain `up` itself
    factor = max(up, down)
    numtaps = TAPS_PER_PHASE * factor + 1
    cutoff = 2.0 * CUTOFF_FRACTION / factor  # in units of the upsampled Nyquist
    return sps.firwin(numtaps, cutoff, window=("kaiser", KAISER_BETA))


def resample_ratio(x: np.ndarray, up: int, down: int) -> np.ndarray:
    """Polyphase windowed-sinc rate change by the rational factor up/down."""
    if up == down:
        return np.array(x, dtype=np.float64)
    g = gcd(up, down)
    up, down = up // g, down // g
    h = _lowpass_kernel(up, down)
    y = sps.resample_poly(np.asarray(x, dtype=np.float64), up, down, window=h)
    # resample_poly returns ceil(len * up / down); keep the rounded length
    n_out = int(round(len(x) * up / down))
    if len(y) < n_out:
        y = np.pad(y, (0, n_out - len(y)))
    return y[:n_out]


def resample(sig: AudioSignal, target_rate: int = CANONICAL_RATE) -> AudioSignal:
    if int(target_rate) != target_rate or target_rate <= 0:
        raise ValueError(f"target_rate must be a positive integer, got {target_rate}")
    target_rate = int(target_rate)
    if target_rate == sig.sample_rate:
        return sig
    y = resample_ratio(sig.samples, target_rate, sig.sample_rate)
    return AudioSignal(y, target_rate)


def change_speed(sig: AudioSignal, factor: float, max_denominator: int = 1000) -> AudioSignal:
    """Play ``sig`` back ``factor`` times faster (duration / factor, pitch * factor)."""
    ratio = Fraction(factor).limit_denominator(max_denominator)
    if ratio <= 0:
        raise ValueError("speed factor must be positive")
    y = resample_ratio(sig.samples, ratio.denominator, ratio.numerator)
    return AudioSignal(y, sig.sample_rate)


def load_canonical(path, rate: int = CANONICAL_RATE) -> AudioSignal:
    return resample(load_wav(path), rate)
