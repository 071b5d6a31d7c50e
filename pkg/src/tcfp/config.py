"""Every tunable in one flat record, read from ``key = value`` text.

Lines starting with ``#`` are comments. Unknown keys and values that do
not parse as the field's type are errors, so a typo never silently falls
back to a default.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields

from .errors import ConfigError
from .features import ScanConfig
from .identify import DetectConfig, LocalizeConfig
from .timechroma import ChromaParams

CONFIG_ENV = "TCFP_CONFIG"


@dataclass(frozen=True)
class Config:
    # signal and image
    fs: int = 8820
    window_len_s: float = 0.1
    overlap: float = 0.75
    zero_pad: int = 16
    m: int = 72
    n: int = 4
    f0: float = 80.0
    # dictionary and features
    c: int = 10
    w_t: float = 2.0
    w_p: int = 72
    scale_min: float = 1.0
    scale_max: float = 4.0
    num_scales: int = 30
    q: int = 12
    r: int = 12
    max_candidates_per_s: float = 20.0
    keep_boundary: bool = True
    # matching
    alpha: float = 0.6
    theta_max: float = 0.4
    match_mode: str = "db"
    # voting and localization
    delta: float = 10.0
    r_frac: float = 0.7
    a_bin_octaves: float = 1.0 / 48
    a_sigma_bins: float = 1.0
    delta_a_frac: float = 2.0 ** (1.0 / 12) - 1.0
    b_bin_s: float = 0.5
    b_sigma_bins: float = 1.0
    delta_b: float = 2.0
    min_support: int = 5
    seed: int = 0

    def __post_init__(self):
        try:
            self.chroma
            self.scan
            self.detect
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not 0 <= self.overlap < 1:
            raise ConfigError("overlap must lie in [0, 1)")
        if self.window_len_s <= 0 or self.zero_pad < 1:
            raise ConfigError("window_len_s must be positive and zero_pad >= 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.match_mode not in ("db", "literal"):
            raise ConfigError("match_mode must be 'db' or 'literal'")
        if not self.r_frac > 0.5:
            raise ConfigError("r_frac must exceed 0.5")
        if self.c < 1 or self.w_t <= 0 or self.w_p < 2:
            raise ConfigError("need c >= 1, w_t > 0 and w_p >= 2")

    @property
    def chroma(self) -> ChromaParams:
        return ChromaParams(self.m, self.n, self.f0, self.fs)

    @property
    def scan(self) -> ScanConfig:
        return ScanConfig((self.scale_min, self.scale_max), self.num_scales,
                          self.max_candidates_per_s, self.keep_boundary)

    @property
    def detect(self) -> DetectConfig:
        loc = LocalizeConfig(
            a_bin_octaves=self.a_bin_octaves, a_sigma_bins=self.a_sigma_bins,
            delta_a_frac=self.delta_a_frac, b_bin_s=self.b_bin_s,
            b_sigma_bins=self.b_sigma_bins, delta_b=self.delta_b,
            min_support=self.min_support, n_bins=self.m * self.n)
        return DetectConfig(self.alpha, self.theta_max, self.match_mode, self.delta, self.r_frac, loc)

    def replace(self, **changes) -> "Config":
        unknown = set(changes) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return dataclasses.replace(self, **changes)

    def dumps(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(name: str, kind, text: str):
    text = text.strip()
    try:
        if kind in (bool, "bool"):
            low = text.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {text!r}") from exc


def parse_overrides(items) -> dict:
    """``["key=value", ...]`` into typed keyword arguments for :class:`Config`."""
    types = {f.name: f.type for f in fields(Config)}
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"expected key = value, got {item!r}")
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _parse(key, types[key], value)
    return out


def loads(text: str, base: Config | None = None) -> Config:
    lines = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line)
    return (base or Config()).replace(**parse_overrides(lines))


def load(path) -> Config:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def dump(cfg: Config, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(cfg.dumps())


def resolve(path=None, overrides=()) -> Config:
    """Config from ``path`` (or the file named by ``$TCFP_CONFIG``) plus overrides."""
    path = path or os.environ.get(CONFIG_ENV)
    cfg = load(path) if path else Config()
    return cfg.replace(**parse_overrides(overrides))
