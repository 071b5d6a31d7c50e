"""Audio in, fingerprints out, with every knob taken from a :class:`Config`."""

from __future__ import annotations

from .audio_io import AudioSignal, load_wav, resample
from .config import Config
from .features import PatternDictionary, build_dictionary, extract_fingerprints
from .identify import detect
from .index import FingerprintDB
from .timechroma import TimeChromaImage, time_chroma


def image_of(sig: AudioSignal, cfg: Config = Config()) -> TimeChromaImage:
    sig = resample(sig, cfg.fs)
    return time_chroma(sig, cfg.chroma, cfg.window_len_s, cfg.overlap, cfg.zero_pad)


def image_of_file(path, cfg: Config = Config()) -> TimeChromaImage:
    return image_of(load_wav(path), cfg)


def dictionary_from(images: list, cfg: Config = Config()) -> PatternDictionary:
    return build_dictionary(images, cfg.c, cfg.w_t, cfg.w_p, cfg.seed, cfg.q, cfg.r)


def fingerprints_of(img: TimeChromaImage, dictionary: PatternDictionary,
                    cfg: Config = Config(), song_id: int = -1) -> list:
    return extract_fingerprints(img, dictionary, cfg.scan, song_id)


def build_db(images: list, dictionary: PatternDictionary, cfg: Config = Config(),
             titles=None) -> FingerprintDB:
    db = FingerprintDB(dictionary.q, dictionary.r, cfg.m, cfg.n)
    for sid, img in enumerate(images):
        title = titles[sid] if titles else f"song{sid:03d}"
        duration = img.n_frames * img.frame_hop_s
        db.add_song(sid, fingerprints_of(img, dictionary, cfg, sid), title, duration)
    return db


def query(db: FingerprintDB, sig: AudioSignal, dictionary: PatternDictionary,
          cfg: Config = Config()) -> list:
    sig = resample(sig, cfg.fs)
    if sig.duration < cfg.window_len_s or not (sig.samples != 0).any():
        return []
    fps = fingerprints_of(image_of(sig, cfg), dictionary, cfg)
    return detect(db, fps, cfg.detect, query_len=sig.duration)
