"""Synthetic songs with known ground truth, and the attacks applied to them.

Pitch and tempo attacks re-render the score rather than process audio, so
the attacked signal is exactly the original with every pitch index moved
(or every time stretched) and carries no DSP artifacts. Speed change and
noise work on any :class:`AudioSignal`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .audio_io import AudioSignal, change_speed
from .errors import OutOfBand, SilentSignal
from .timechroma import ChromaParams

MIN_PITCH_STEP = 48  # ~127 Hz at the defaults; leaves room for pitch/speed attacks
MAX_PITCH_STEP = 192  # ~508 Hz
EDGE_FADE_S = 0.01


@dataclass(frozen=True)
class Note:
    pitch: int  # pitch index, frequency f0 * 2**(pitch/m)
    onset: float  # s
    duration: float  # s
    amplitude: float
    harmonics: int
    phases: tuple = ()


@dataclass(frozen=True)
class SyntheticScore:
    notes: tuple
    seed: int
    length_s: float
    params: ChromaParams = ChromaParams()
    gain: float = 1.0

    def pitch_shifted(self, delta_p: int) -> "SyntheticScore":
        notes = tuple(replace(nt, pitch=nt.pitch + int(delta_p)) for nt in self.notes)
        return replace(self, notes=notes)

    def time_scaled(self, tempo: float) -> "SyntheticScore":
        """Tempo multiplied by ``tempo``: all times divided by it."""
        notes = tuple(replace(nt, onset=nt.onset / tempo, duration=nt.duration / tempo) for nt in self.notes)
        return replace(self, notes=notes, length_s=self.length_s / tempo)


def _check_band(score: SyntheticScore) -> None:
    p = score.params
    for nt in score.notes:
        f = p.pitch_freq(nt.pitch)
        if nt.pitch < 0 or f * nt.harmonics >= p.fs / 2.0:
            raise OutOfBand(f"note at pitch {nt.pitch} ({f:.1f} Hz x{nt.harmonics}) leaves [f0, fs/2)")


def render(score: SyntheticScore) -> AudioSignal:
    """Additive synthesis; every note has a sin^2 (raised-cosine) envelope."""
    _check_band(score)
    fs = score.params.fs
    n_total = int(round(score.length_s * fs))
    out = np.zeros(n_total)
    for nt in score.notes:
        start = int(math.ceil(nt.onset * fs))
        stop = min(int(math.floor((nt.onset + nt.duration) * fs)), n_total)
        if stop <= start:
            continue
        t = np.arange(start, stop) / fs
        env = np.sin(np.pi * (t - nt.onset) / nt.duration) ** 2
        f = float(score.params.pitch_freq(nt.pitch))
        tone = np.zeros_like(t)
        for k in range(1, nt.harmonics + 1):
            phase = nt.phases[k - 1] if nt.phases else 0.0
            tone += np.sin(2 * np.pi * k * f * (t - nt.onset) + phase) / k
        out[start:stop] += nt.amplitude * env * tone
    return AudioSignal(out * score.gain, fs)


def generate_song(
    seed: int,
    length_s: float = 60.0,
    params: ChromaParams = ChromaParams(),
    notes_per_s: tuple[float, float] = (2.0, 6.0),
) -> tuple[SyntheticScore, AudioSignal]:
    """Random score of harmonic notes, deterministic in ``seed``."""
    if length_s < 10:
        raise ValueError("length_s must be at least 10 s")
    rng = np.random.default_rng(seed)
    rate = rng.uniform(*notes_per_s)
    lo = int(round(MIN_PITCH_STEP * params.m / 72))
    hi = int(round(MAX_PITCH_STEP * params.m / 72))
    notes = []
    t = rng.exponential(1.0 / rate) if rate > 0 else math.inf
    while t < length_s - 0.2:
        dur = min(rng.uniform(0.3, 1.5), length_s - t)
        h = int(rng.integers(3, 7))
        notes.append(Note(
            pitch=int(rng.integers(lo, hi + 1)),
            onset=float(t),
            duration=float(dur),
            amplitude=float(rng.uniform(0.3, 1.0)),
            harmonics=h,
            phases=tuple(float(x) for x in rng.uniform(0, 2 * np.pi, h)),
        ))
        t += rng.exponential(1.0 / rate)
    score = SyntheticScore(tuple(notes), seed, float(length_s), params)
    raw = render(score)
    peak = float(np.max(np.abs(raw.samples))) if len(notes) else 0.0
    score = replace(score, gain=0.9 / peak if peak > 0 else 1.0)
    return score, render(score)


def attack_pitch_shift(score: SyntheticScore, delta_p: int) -> AudioSignal:
    return render(score.pitch_shifted(delta_p))


def attack_tempo(score: SyntheticScore, factor: float) -> AudioSignal:
    """Tempo sped up by ``factor``: onsets and durations divided by it."""
    if factor <= 0:
        raise ValueError("tempo factor must be positive")
    return render(score.time_scaled(factor))


def attack_speed(sig: AudioSignal, factor: float) -> AudioSignal:
    """Playback-rate change: duration / factor, every frequency * factor."""
    if factor <= 0:
        raise ValueError("speed factor must be positive")
    if factor == 1:
        return sig
    return change_speed(sig, factor)


def attack_noise(sig: AudioSignal, snr_db: float, seed: int = 0) -> AudioSignal:
    """Additive white Gaussian noise scaled to hit ``snr_db`` exactly."""
    if math.isinf(snr_db) and snr_db > 0:
        return sig
    p_sig = float(np.mean(sig.samples ** 2))
    if p_sig == 0:
        raise SilentSignal("SNR is undefined for a silent signal")
    noise = np.random.default_rng(seed).standard_normal(len(sig.samples))
    noise *= math.sqrt(p_sig / 10 ** (snr_db / 10) / np.mean(noise ** 2))
    return AudioSignal(sig.samples + noise, sig.sample_rate)


def pitch_steps_for_speed(factor: float, m: int = 72) -> int:
    return int(round(math.log2(factor) * m))


# -- mash-ups ----------------------------------------------------------------


@dataclass(frozen=True)
class Snippet:
    signal: AudioSignal = field(repr=False)
    song_id: int
    db_start: float
    db_end: float
    a: float = 1.0  # query time = a * db time + b within the snippet
    dp: int = 0
    gap_s: float = 0.0  # silence inserted before this snippet


@dataclass(frozen=True)
class GroundTruth:
    song_id: int
    query_start: float
    query_end: float
    db_start: float
    db_end: float
    a: float
    b: float
    dp: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=False)

    @classmethod
    def from_json(cls, line: str) -> "GroundTruth":
        return cls(**json.loads(line))


def _fade(x: np.ndarray, fs: int) -> np.ndarray:
    n = min(int(EDGE_FADE_S * fs), len(x) // 2)
    if n == 0:
        return x
    ramp = np.sin(0.5 * np.pi * (np.arange(n) + 0.5) / n) ** 2
    x = x.copy()
    x[:n] *= ramp
    x[-n:] *= ramp[::-1]
    return x


def mashup(snippets: list) -> tuple[AudioSignal, list]:
    """Concatenate snippets (with optional leading gaps) and record ground truth."""
    if not snippets:
        raise ValueError("mashup needs at least one snippet")
    fs = snippets[0].signal.sample_rate
    parts = []
    truth = []
    pos = 0
    for sn in snippets:
        if sn.signal.sample_rate != fs:
            raise ValueError("all snippets must share a sample rate")
        gap = int(round(sn.gap_s * fs))
        if gap:
            parts.append(np.zeros(gap))
            pos += gap
        parts.append(_fade(np.asarray(sn.signal.samples), fs))
        q0 = pos / fs
        q1 = (pos + len(sn.signal.samples)) / fs
        truth.append(GroundTruth(sn.song_id, q0, q1, sn.db_start, sn.db_end,
                                 sn.a, q0 - sn.a * sn.db_start, sn.dp))
        pos += len(sn.signal.samples)
    return AudioSignal(np.concatenate(parts), fs), truth


@dataclass(frozen=True)
class Attack:
    kind: str = "none"  # none | tempo | pitch | speed | noise
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "tempo", "pitch", "speed", "noise"):
            raise ValueError(f"unknown attack kind {self.kind!r}")

    @property
    def label(self) -> str:
        return self.kind if self.kind == "none" else f"{self.kind}={self.value:g}"

    @classmethod
    def parse(cls, text: str) -> "Attack":
        """``tempo=1.2``, ``pitch=-12``, ``speed=0.9``, ``noise=40`` or ``none``."""
        text = text.strip()
        if text == "none":
            return cls()
        kind, _, val = text.partition("=")
        return cls(kind.strip(), float(val))


def attacked_mashup(
    scores: list,
    attack: Attack,
    n_snippets: int = 10,
    snippet_len: tuple[float, float] = (10.0, 20.0),
    seed: int = 0,
    gap_s: float = 0.0,
) -> tuple[AudioSignal, list]:
    """Mash up random snippets of distinct songs, then apply ``attack``.

    Tempo and pitch are applied per snippet at the score level (equivalent to
    attacking the whole mash-up); speed and noise act on the mixed signal.
    """
    rng = np.random.default_rng(seed)
    m = scores[0].params.m
    ids = rng.permutation(len(scores))[:n_snippets] if n_snippets <= len(scores) \
        else rng.integers(0, len(scores), n_snippets)
    tempo = attack.value if attack.kind == "tempo" else 1.0
    dp = int(round(attack.value)) if attack.kind == "pitch" else 0

    snippets = []
    rendered: dict = {}
    for sid in ids:
        sid = int(sid)
        score = scores[sid]
        length = float(rng.uniform(*snippet_len))
        t0 = float(rng.uniform(0.0, score.length_s - length))
        if sid not in rendered:
            s = score
            if dp:
                s = s.pitch_shifted(dp)
            if tempo != 1.0:
                s = s.time_scaled(tempo)
            rendered[sid] = render(s)
        sig = rendered[sid]
        fs = sig.sample_rate
        i0 = int(round(t0 / tempo * fs))
        i1 = int(round((t0 + length) / tempo * fs))
        piece = AudioSignal(sig.samples[i0:i1], fs)
        snippets.append(Snippet(piece, sid, i0 * tempo / fs, i1 * tempo / fs,
                                a=1.0 / tempo, dp=dp, gap_s=gap_s))

    query, truth = mashup(snippets)
    if attack.kind == "speed":
        s = attack.value
        query = attack_speed(query, s)
        shift = pitch_steps_for_speed(s, m)
        truth = [replace(g, query_start=g.query_start / s, query_end=g.query_end / s,
                         a=g.a / s, b=g.b / s, dp=g.dp + shift) for g in truth]
    elif attack.kind == "noise":
        query = attack_noise(query, attack.value, seed=seed + 1)
    return query, truth
