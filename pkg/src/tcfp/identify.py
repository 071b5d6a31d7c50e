"""From match pairs to song-level detections.

Voting slides a window over the query and labels it with a song when that
song owns a large enough share of the window's matches. Each run of
same-song windows is then localized: histogram peaks of the scale ratio
and of the time offset prune outliers, a least-squares line
``t_q = a * t_db + b`` is fitted to the survivors, and the pitch shift is
the mode of their chroma offsets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .errors import InsufficientSupport
from .index import DEFAULT_ALPHA, DEFAULT_THETA_MAX, MODE_DB, FingerprintDB

DEFAULT_DELTA = 10.0  # s
DEFAULT_R_FRAC = 0.7
VOTE_HOP = 1.0  # s
MIN_WINDOW_MATCHES = 3


@dataclass(frozen=True)
class MatchedFeature:
    song_id: int
    a_hat: float  # query scale / db scale
    dp_hat: int  # (b_query - b_db) mod B
    t_q: float
    t_db: float
    scale_q: float = 0.0  # s, query patch width


@dataclass(frozen=True)
class Interval:
    song_id: int
    t_start: float
    duration: float

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("interval duration must be positive")

    @property
    def t_end(self) -> float:
        return self.t_start + self.duration


@dataclass(frozen=True)
class Detection:
    song_id: int
    query_start: float
    query_end: float
    a: float
    b: float
    dp: int  # in [0, B)
    support: int
    n_bins: int = 288

    @property
    def db_start(self) -> float:
        return (self.query_start - self.b) / self.a

    @property
    def db_end(self) -> float:
        return (self.query_end - self.b) / self.a

    @property
    def dp_signed(self) -> int:
        """``dp`` mapped to (-B/2, B/2]."""
        return self.dp - self.n_bins if self.dp > self.n_bins // 2 else self.dp

    def record(self) -> dict:
        """Report fields in their stable order."""
        return {
            "song_id": self.song_id,
            "query_start": round(self.query_start, 4),
            "query_end": round(self.query_end, 4),
            "db_start": round(self.db_start, 4),
            "db_end": round(self.db_end, 4),
            "a": round(self.a, 6),
            "b": round(self.b, 4),
            "dp": self.dp_signed,
            "support": self.support,
        }


@dataclass(frozen=True)
class LocalizeConfig:
    a_bin_octaves: float = 1.0 / 48
    a_range: tuple = (0.5, 2.0)
    a_sigma_bins: float = 1.0
    delta_a_frac: float = 2.0 ** (1.0 / 12) - 1.0  # delta_a = a_peak * this
    b_bin_s: float = 0.5
    b_sigma_bins: float = 1.0
    delta_b: float = 2.0  # s
    min_support: int = 5
    n_bins: int = 288

    def __post_init__(self):
        if self.a_bin_octaves <= 0 or self.b_bin_s <= 0:
            raise ValueError("histogram bin widths must be positive")
        if not 0 < self.a_range[0] < self.a_range[1]:
            raise ValueError("a_range must satisfy 0 < lo < hi")
        if self.delta_a_frac <= 0 or self.delta_b <= 0:
            raise ValueError("pruning half-widths must be positive")
        if self.min_support < 2:
            raise ValueError("min_support must be at least 2 for a line fit")


def matched_features(pairs: list, n_bins: int) -> list:
    """Turn index match pairs into (song, a_hat, dp_hat, t_q, t_db) records."""
    out = []
    for p in pairs:
        q, d = p.query_fp.point, p.db_fp.point
        out.append(MatchedFeature(
            song_id=int(p.db_fp.song_id),
            a_hat=q.scale / d.scale,
            dp_hat=int((q.b - d.b) % n_bins),
            t_q=q.t,
            t_db=d.t,
            scale_q=q.scale,
        ))
    return out


def _window_starts(query_len: float, delta: float, hop: float) -> np.ndarray:
    last = max(query_len - delta, 0.0)
    starts = np.arange(0.0, last + 1e-9, hop)
    if starts[-1] < last - 1e-9:
        starts = np.append(starts, last)  # make the tail of the query reachable
    return starts


def vote_windows(matches: list, query_len: float, delta: float = DEFAULT_DELTA,
                 r_frac: float = DEFAULT_R_FRAC, hop: float = VOTE_HOP,
                 min_matches: int = MIN_WINDOW_MATCHES) -> list:
    """Label sliding windows by majority song and merge same-song runs."""
    if not r_frac > 0.5:
        raise ValueError("r_frac must exceed 0.5")
    if delta <= 0 or hop <= 0:
        raise ValueError("delta and hop must be positive")
    if query_len <= 0 or not matches:
        return []
    t = np.array([m.t_q for m in matches])
    song = np.array([m.song_id for m in matches])
    order = np.argsort(t, kind="stable")
    t, song = t[order], song[order]

    labels = []
    starts = _window_starts(query_len, delta, hop)
    for s in starts:
        lo, hi = np.searchsorted(t, s, "left"), np.searchsorted(t, s + delta, "right")
        label = -1
        if hi - lo >= min_matches:
            ids, counts = np.unique(song[lo:hi], return_counts=True)
            k = int(np.argmax(counts))
            if counts[k] >= r_frac * (hi - lo):
                label = int(ids[k])
        labels.append(label)

    out = []
    k = 0
    while k < len(labels):
        if labels[k] < 0:
            k += 1
            continue
        j = k
        while j + 1 < len(labels) and labels[j + 1] == labels[k]:
            j += 1
        t0 = float(starts[k])
        t1 = min(float(starts[j]) + delta, query_len)
        out.append(Interval(labels[k], t0, t1 - t0))
        k = j + 1
    return out


def _smoothed_peak(values: np.ndarray, edges: np.ndarray, sigma: float) -> float:
    hist, _ = np.histogram(values, bins=edges)
    smooth = gaussian_filter1d(hist.astype(np.float64), sigma, mode="constant") if sigma > 0 else hist
    k = int(np.argmax(smooth))
    return 0.5 * (edges[k] + edges[k + 1])


def fit_line(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Closed-form least squares for ``y = a*x + b``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx <= 0:
        raise InsufficientSupport("all surviving features share one database time")
    a = float(np.sum((x - xm) * (y - ym)) / sxx)
    return a, float(ym - a * xm)


def mode_smallest(values) -> int:
    """Most frequent value; ties go to the smallest."""
    vals, counts = np.unique(np.asarray(values, dtype=np.int64), return_counts=True)
    return int(vals[np.argmax(counts)])  # unique() sorts, argmax takes the first


def localize(interval: Interval, matches: list, cfg: LocalizeConfig = LocalizeConfig(),
             return_stages: bool = False):
    """Estimate (a, b, dp) and the copied query span inside one voted interval.

    With ``return_stages`` the survivor index sets after song filtering,
    scale pruning and offset pruning are returned as well.
    """
    idx0 = [i for i, m in enumerate(matches)
            if m.song_id == interval.song_id and interval.t_start <= m.t_q <= interval.t_end]
    if len(idx0) < cfg.min_support:
        raise InsufficientSupport(f"{len(idx0)} matches for song {interval.song_id}")
    a_hat = np.array([matches[i].a_hat for i in idx0])
    t_q = np.array([matches[i].t_q for i in idx0])
    t_db = np.array([matches[i].t_db for i in idx0])
    dp_hat = np.array([matches[i].dp_hat for i in idx0])

    # scale ratio: log-spaced histogram, smoothed peak, multiplicative window
    lo, hi = np.log2(cfg.a_range[0]), np.log2(cfg.a_range[1])
    n_a = int(round((hi - lo) / cfg.a_bin_octaves))
    a_peak = 2.0 ** _smoothed_peak(np.log2(a_hat), np.linspace(lo, hi, n_a + 1), cfg.a_sigma_bins)
    keep_a = np.abs(a_hat - a_peak) < a_peak * cfg.delta_a_frac

    # offset: centred coordinates keep the peak sharp when a_peak is slightly off
    sel = np.flatnonzero(keep_a)
    if len(sel) < cfg.min_support:
        raise InsufficientSupport(f"{len(sel)} features agree on the scale ratio")
    tq_c, tdb_c = t_q[sel].mean(), t_db[sel].mean()
    b_hat = (t_q - tq_c) - a_peak * (t_db - tdb_c)
    w = cfg.b_bin_s
    b_lo = math.floor(b_hat[sel].min() / w) * w
    b_hi = math.floor(b_hat[sel].max() / w) * w + w
    edges = np.arange(b_lo, b_hi + 0.5 * w, w)
    b_peak = _smoothed_peak(b_hat[sel], edges, cfg.b_sigma_bins)
    keep_b = keep_a & (np.abs(b_hat - b_peak) < cfg.delta_b)

    sel = np.flatnonzero(keep_b)
    if len(sel) < cfg.min_support:
        raise InsufficientSupport(f"{len(sel)} features survive pruning (need {cfg.min_support})")
    a, b = fit_line(t_db[sel], t_q[sel])
    if a <= 0:
        raise InsufficientSupport("fitted tempo factor is not positive")
    dp = mode_smallest(dp_hat[sel])

    resid = np.abs(t_q[sel] - a * t_db[sel] - b)
    compat = sel[resid < cfg.delta_b]
    # an end feature's patch reaches half its width past its centre
    half = np.array([matches[i].scale_q for i in idx0]) / 2.0
    first, last = compat[np.argmin(t_q[compat])], compat[np.argmax(t_q[compat])]
    start = max(float(t_q[first] - half[first]), interval.t_start)
    end = min(float(t_q[last] + half[last]), interval.t_end)
    det = Detection(interval.song_id, start, end, a, b, dp, len(sel), cfg.n_bins)
    if return_stages:
        idx0 = np.asarray(idx0)
        return det, (set(idx0.tolist()), set(idx0[keep_a].tolist()), set(idx0[keep_b].tolist()))
    return det


@dataclass(frozen=True)
class DetectConfig:
    alpha: float = DEFAULT_ALPHA
    theta_max: float = DEFAULT_THETA_MAX
    mode: str = MODE_DB
    delta: float = DEFAULT_DELTA
    r_frac: float = DEFAULT_R_FRAC
    localize: LocalizeConfig = LocalizeConfig()


def detect(db: FingerprintDB, query_fps: list, cfg: DetectConfig = DetectConfig(),
           query_len: float | None = None) -> list:
    """Match, vote, localize; detections sorted by query start time."""
    if len(db) == 0 or not query_fps:
        return []
    pairs = db.match(query_fps, cfg.alpha, cfg.theta_max, cfg.mode)
    feats = matched_features(pairs, cfg.localize.n_bins)
    if query_len is None:
        query_len = max((f.point.t + f.point.scale / 2 for f in query_fps), default=0.0)
    out = []
    for iv in vote_windows(feats, query_len, cfg.delta, cfg.r_frac):
        try:
            out.append(localize(iv, feats, cfg.localize))
        except InsufficientSupport:
            continue
    out.sort(key=lambda d: (d.query_start, d.song_id))
    return out
