"""Time-chroma fingerprints for detecting pitch-shifted and tempo-changed audio copies."""

from .attacks import Attack, GroundTruth, attack_noise, attack_pitch_shift, attack_speed, attack_tempo, generate_song
from .audio_io import AudioSignal, load_wav, resample, write_wav
from .config import Config
from .errors import ConfigError, DataError, TcfpError
from .features import (FeaturePoint, Fingerprint, PatternDictionary, build_dictionary, detect_features,
                       extract_fingerprints, find_local_maxima, load_dictionary, patch_descriptor,
                       save_dictionary)
from .identify import Detection, Interval, MatchedFeature, detect, localize, vote_windows
from .index import FingerprintDB, MatchPair
from .spectro import Spectrogram, stft_magnitude
from .timechroma import ChromaParams, TimeChromaImage, circular_shift, compute_time_chroma, time_chroma

__version__ = "0.1.0"

__all__ = [
    "Attack",
    "AudioSignal",
    "ChromaParams",
    "Config",
    "ConfigError",
    "DataError",
    "Detection",
    "FeaturePoint",
    "Fingerprint",
    "FingerprintDB",
    "GroundTruth",
    "Interval",
    "MatchPair",
    "MatchedFeature",
    "PatternDictionary",
    "Spectrogram",
    "TcfpError",
    "TimeChromaImage",
    "attack_noise",
    "attack_pitch_shift",
    "attack_speed",
    "attack_tempo",
    "build_dictionary",
    "circular_shift",
    "compute_time_chroma",
    "detect",
    "detect_features",
    "extract_fingerprints",
    "find_local_maxima",
    "generate_song",
    "load_dictionary",
    "load_wav",
    "localize",
    "patch_descriptor",
    "resample",
    "save_dictionary",
    "stft_magnitude",
    "time_chroma",
    "vote_windows",
    "write_wav",
]
