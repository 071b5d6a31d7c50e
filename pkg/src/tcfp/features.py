"""Feature points and DCT fingerprints on the time-chroma image.

Candidates are strict local maxima. Around each one, patches of a fixed
chroma height and geometrically spaced time widths are compared with a
small dictionary of typical patterns; a candidate whose best pattern is the
same at more than half of the widths becomes a feature point with that
pattern as its type and the best-matching width as its scale. Because a
tempo change stretches the image in time, the scale follows the tempo,
and because a pitch shift rolls the image along chroma, nothing but the
chroma coordinate changes.

Descriptors are the low-frequency ``q x r`` block of the orthonormal 2-D
DCT-II of a patch (``u`` along chroma, ``v`` along time) without its DC
term. The flattened block is centred and scaled to unit length. Two such
vectors are compared by their dot product (their Pearson correlation).
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.fft import dctn

from .errors import DegeneratePatch, FormatVersionMismatch, InsufficientPatches
from .timechroma import TimeChromaImage

DEFAULT_Q = 12
DEFAULT_R = 12
DEFAULT_C = 10
DEFAULT_WT = 2.0
DEFAULT_SCALE_RANGE = (1.0, 4.0)
DEFAULT_NUM_SCALES = 30
MAX_CANDIDATES_PER_S = 20
NOISE_FLOOR_REL = 1e-6
_DEGENERATE_REL = 1e-10
_CHUNK = 256


@dataclass(frozen=True)
class CandidatePoint:
    t_frame: int
    b: int


@dataclass(frozen=True)
class FeaturePoint:
    t: float  # s, patch centre
    b: int  # chroma bin
    scale: float  # s, patch width
    ptype: int
    t_frame: int = -1
    boundary: bool = False  # best width sat at an end of the scan range


@dataclass(frozen=True)
class Fingerprint:
    desc: np.ndarray = field(repr=False)
    point: FeaturePoint
    song_id: int = -1


@dataclass(frozen=True)
class ScanConfig:
    scale_range: tuple = DEFAULT_SCALE_RANGE
    num_scales: int = DEFAULT_NUM_SCALES
    max_candidates_per_s: float | None = MAX_CANDIDATES_PER_S
    keep_boundary: bool = True

    def __post_init__(self):
        lo, hi = self.scale_range
        if not 0 < lo < hi:
            raise ValueError("scale range must satisfy 0 < min < max")
        if self.num_scales < 2:
            raise ValueError("need at least two scales")


@dataclass(frozen=True)
class PatternDictionary:
    patterns: np.ndarray = field(repr=False)  # (c, q*r - 1)
    q: int = DEFAULT_Q
    r: int = DEFAULT_R
    m: int = 72
    n: int = 4
    w_t: float = DEFAULT_WT
    w_p: int = 72
    cluster_sizes: tuple = ()

    @property
    def c(self) -> int:
        return self.patterns.shape[0]


# -- candidates and patches ---------------------------------------------------


def _strict_maxima_mask(v: np.ndarray) -> np.ndarray:
    # chroma wraps, time does not
    padded = np.pad(v, ((0, 0), (1, 1)), constant_values=-np.inf)
    mask = np.ones(v.shape, dtype=bool)
    for db in (-1, 0, 1):
        rolled = np.roll(padded, db, axis=0)
        for dt in (-1, 0, 1):
            if db == 0 and dt == 0:
                continue
            mask &= v > rolled[:, 1 + dt:1 + dt + v.shape[1]]
    return mask


def find_local_maxima(
    img: TimeChromaImage,
    max_per_second: float | None = MAX_CANDIDATES_PER_S,
    noise_floor_rel: float = NOISE_FLOOR_REL,
) -> list:
    """Strict 8-neighbour maxima above the noise floor, strongest first per second.

    At most ``max_per_second`` candidates are kept in each one-second slice
    of the image (equal values ordered by ``(t, b)``). Output is sorted by
    ``(t_frame, b)``.
    """
    v = img.values
    if v.shape[0] < 3 or v.shape[1] < 3:
        raise ValueError("image must be at least 3x3")
    peak = float(v.max()) if v.size else 0.0
    if peak <= 0:
        return []
    mask = _strict_maxima_mask(v) & (v > noise_floor_rel * peak)
    bs, ts = np.nonzero(mask)
    if max_per_second is not None and len(ts):
        vals = v[bs, ts]
        sec = np.floor(img.frame_time(ts)).astype(np.int64)
        # within each second: descending value, then ascending (t, b)
        order = np.lexsort((bs, ts, -vals, sec))
        sec_sorted = sec[order]
        first = np.searchsorted(sec_sorted, sec_sorted, side="left")
        rank = np.arange(len(order)) - first
        keep = order[rank < max_per_second]
        bs, ts = bs[keep], ts[keep]
    order = np.lexsort((bs, ts))
    return [CandidatePoint(int(t), int(b)) for t, b in zip(ts[order], bs[order])]


def half_width_frames(width_s: float, frame_hop_s: float) -> int:
    return max(int(round(width_s / (2.0 * frame_hop_s))), 1)


def _row_index(b, height: int, n_bins: int) -> np.ndarray:
    return (np.asarray(b)[..., None] - height // 2 + np.arange(height)) % n_bins


def extract_patch(img: TimeChromaImage, center, width_s: float, height_bins: int) -> np.ndarray:
    """``height_bins x (2h+1)`` patch around ``center = (t_frame, b)``.

    Rows wrap around the chroma axis; frames outside the image are zero.
    """
    t_frame, b = center
    if width_s <= 0:
        raise ValueError("width_s must be positive")
    if height_bins > img.n_bins:
        raise ValueError("patch taller than the image")
    h = half_width_frames(width_s, img.frame_hop_s)
    rows = _row_index(b, height_bins, img.n_bins)
    cols = np.arange(t_frame - h, t_frame + h + 1)
    inside = (cols >= 0) & (cols < img.n_frames)
    patch = np.zeros((height_bins, len(cols)))
    patch[:, inside] = img.values[np.ix_(rows, cols[inside])]
    return patch


# -- descriptors ----------------------------------------------------------------


@lru_cache(maxsize=512)
def dct_matrix(size: int, n_coef: int) -> np.ndarray:
    """First ``n_coef`` rows of the orthonormal DCT-II matrix (zero rows past ``size``)."""
    k = np.arange(min(n_coef, size))[:, None]
    i = np.arange(size)[None, :]
    mat = np.cos(np.pi * k * (2 * i + 1) / (2 * size)) * np.sqrt(2.0 / size)
    mat[0] /= np.sqrt(2.0)
    out = np.zeros((n_coef, size))
    out[: mat.shape[0]] = mat
    out.setflags(write=False)
    return out


def _normalize_blocks(blocks: np.ndarray):
    """(N, q, r) DCT blocks -> (N, q*r-1) descriptors and a validity mask."""
    flat = blocks.reshape(len(blocks), -1)
    return _unitize(flat[:, 1:], np.linalg.norm(flat, axis=1))


def _unitize(desc: np.ndarray, scale: np.ndarray):
    """Centre and unit-normalize rows; rows with norm <= tiny * ``scale`` are invalid."""
    desc = desc - desc.mean(axis=1, keepdims=True)
    norm = np.linalg.norm(desc, axis=1)
    valid = norm > _DEGENERATE_REL * np.maximum(scale, np.finfo(float).tiny)
    out = np.zeros_like(desc)
    out[valid] = desc[valid] / norm[valid, None]
    return out, valid


def patch_descriptor(patch: np.ndarray, q: int = DEFAULT_Q, r: int = DEFAULT_R) -> np.ndarray:
    """Unit-norm, zero-mean low-frequency DCT descriptor of a patch.

    Raises DegeneratePatch when the patch has no usable AC content.
    """
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim != 2 or min(patch.shape) < 2:
        raise ValueError("patch must be at least 2x2")
    if q < 2 or r < 2:
        raise ValueError("q and r must be at least 2")
    coef = dctn(patch, type=2, norm="ortho")
    block = np.zeros((q, r))
    qq, rr = min(q, patch.shape[0]), min(r, patch.shape[1])
    block[:qq, :rr] = coef[:qq, :rr]
    desc, valid = _normalize_blocks(block[None])
    if not valid[0]:
        raise DegeneratePatch("patch has no AC energy in the low-frequency block")
    return desc[0]


class _PatchBank:
    """Chroma-DCT'd neighbourhoods of a batch of candidates.

    For each candidate the chroma DCT (``q`` coefficients over ``height``
    wrapped rows) is applied once over the widest time span; any narrower
    width is then a centred slice followed by a time DCT.
    """

    def __init__(self, img: TimeChromaImage, t_frames, bs, height: int, q: int, max_half: int):
        self.max_half = max_half
        v = np.pad(img.values, ((0, 0), (max_half, max_half)))
        rows = _row_index(np.asarray(bs), height, img.n_bins)  # (N, height)
        cols = np.asarray(t_frames)[:, None] + np.arange(2 * max_half + 1)  # padded coords
        cq = dct_matrix(height, q)
        self.y = np.empty((len(rows), q, 2 * max_half + 1))
        for s in range(0, len(rows), _CHUNK):
            patches = v[rows[s:s + _CHUNK, :, None], cols[s:s + _CHUNK, None, :]]
            self.y[s:s + _CHUNK] = np.einsum("uh,nhw->nuw", cq, patches, optimize=True)

    def descriptors(self, half: int, r: int):
        y = self.y[:, :, self.max_half - half:self.max_half + half + 1]
        cr = dct_matrix(2 * half + 1, r)
        blocks = y @ cr.T  # (N, q, r)
        return _normalize_blocks(blocks)


def descriptors_at(img: TimeChromaImage, t_frames, bs, width_s: float, height: int,
                   q: int = DEFAULT_Q, r: int = DEFAULT_R):
    """Batched :func:`patch_descriptor` for many centres at one width."""
    t_frames = np.asarray(t_frames, dtype=np.int64)
    if len(t_frames) == 0:
        return np.zeros((0, q * r - 1)), np.zeros(0, dtype=bool)
    half = half_width_frames(width_s, img.frame_hop_s)
    bank = _PatchBank(img, t_frames, bs, height, q, half)
    return bank.descriptors(half, r)


# -- dictionary -------------------------------------------------------------------


def kmeans(x: np.ndarray, k: int, seed: int, max_iter: int = 100, tol: float = 1e-6):
    """Lloyd's algorithm with k-means++ seeding. Returns (centroids, labels)."""
    rng = np.random.default_rng(seed)
    n = len(x)
    sq = np.einsum("ij,ij->i", x, x)
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.maximum(sq - 2 * x @ centers[0] + centers[0] @ centers[0], 0)
    for j in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers[j] = x[idx]
        d2 = np.minimum(d2, np.maximum(sq - 2 * x @ centers[j] + centers[j] @ centers[j], 0))

    prev = np.inf
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        dist = sq[:, None] - 2 * x @ centers.T + np.einsum("ij,ij->i", centers, centers)[None, :]
        labels = np.argmin(dist, axis=1)
        inertia = float(np.maximum(dist[np.arange(n), labels], 0).sum())
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = x[members].mean(axis=0)
            else:
                # re-seed an empty cluster at the worst-fit point
                far = int(np.argmax(dist[np.arange(n), labels]))
                centers[j] = x[far]
        if prev < np.inf and abs(prev - inertia) <= tol * max(prev, np.finfo(float).tiny):
            break
        prev = inertia
    dist = sq[:, None] - 2 * x @ centers.T + np.einsum("ij,ij->i", centers, centers)[None, :]
    return centers, np.argmin(dist, axis=1)


def build_dictionary(
    corpus_images: list,
    c: int = DEFAULT_C,
    w_t: float = DEFAULT_WT,
    w_p: int | None = None,
    seed: int = 0,
    q: int = DEFAULT_Q,
    r: int = DEFAULT_R,
) -> PatternDictionary:
    """Cluster ``w_t x w_p`` patches around every candidate of the corpus."""
    if c < 1:
        raise ValueError("c must be positive")
    params = corpus_images[0].params if corpus_images else None
    if w_p is None:
        w_p = params.m if params else 72
    descs = []
    for img in corpus_images:
        cands = find_local_maxima(img)
        if not cands:
            continue
        t = [cp.t_frame for cp in cands]
        b = [cp.b for cp in cands]
        d, ok = descriptors_at(img, t, b, w_t, w_p, q, r)
        descs.append(d[ok])
    x = np.concatenate(descs) if descs else np.zeros((0, q * r - 1))
    if len(x) < 10 * c:
        raise InsufficientPatches(f"{len(x)} patches for {c} patterns (need {10 * c})")
    centers, labels = kmeans(x, c, seed)
    patterns, ok = _unitize(centers, np.linalg.norm(centers, axis=1))
    if not ok.all():
        raise InsufficientPatches("a cluster centroid collapsed to a constant vector")
    sizes = tuple(int(np.sum(labels == j)) for j in range(c))
    return PatternDictionary(patterns, q, r, params.m if params else 72, params.n if params else 4,
                             float(w_t), int(w_p), sizes)


# -- detection and fingerprints -----------------------------------------------------


def scale_grid(scale_range=DEFAULT_SCALE_RANGE, num_scales: int = DEFAULT_NUM_SCALES) -> np.ndarray:
    return np.geomspace(scale_range[0], scale_range[1], num_scales)


def stability_vote(corr: np.ndarray, widths: np.ndarray):
    """Decide one candidate from its (num_scales, c) correlation table.

    Returns ``(ptype, scale, scale_index)`` or None when no pattern wins
    strictly more than half of the scales.
    """
    winners = np.argmax(corr, axis=1)
    counts = np.bincount(winners, minlength=corr.shape[1])
    ptype = int(np.argmax(counts))
    if 2 * counts[ptype] <= len(widths):
        return None
    won = np.flatnonzero(winners == ptype)
    best = int(won[np.argmax(corr[won, ptype])])
    return ptype, float(widths[best]), best


def detect_features(
    img: TimeChromaImage,
    dictionary: PatternDictionary,
    scale_range=DEFAULT_SCALE_RANGE,
    num_scales: int = DEFAULT_NUM_SCALES,
    candidates: list | None = None,
    keep_boundary: bool = True,
) -> list:
    """Stable candidates as :class:`FeaturePoint` objects, in candidate order.

    A point whose best scale is an end of the scale range is flagged
    ``boundary``; ``keep_boundary=False`` drops such points instead.
    """
    if dictionary.c < 1:
        raise ValueError("empty dictionary")
    if candidates is None:
        candidates = find_local_maxima(img)
    if not candidates:
        return []
    widths = scale_grid(scale_range, num_scales)
    t = np.array([cp.t_frame for cp in candidates], dtype=np.int64)
    b = np.array([cp.b for cp in candidates], dtype=np.int64)
    halves = [half_width_frames(w, img.frame_hop_s) for w in widths]
    q, r = dictionary.q, dictionary.r

    corr = np.empty((len(t), num_scales, dictionary.c))
    for s in range(0, len(t), _CHUNK):
        bank = _PatchBank(img, t[s:s + _CHUNK], b[s:s + _CHUNK], dictionary.w_p, q, max(halves))
        for k, h in enumerate(halves):
            d, ok = bank.descriptors(h, r)
            cc = d @ dictionary.patterns.T
            cc[~ok] = -np.inf  # degenerate patches never vote
            corr[s:s + _CHUNK, k] = cc

    points = []
    for i in range(len(t)):
        if not np.isfinite(corr[i]).all():
            continue
        res = stability_vote(corr[i], widths)
        if res is None:
            continue
        ptype, scale, k = res
        at_edge = k in (0, num_scales - 1)
        if at_edge and not keep_boundary:
            continue
        points.append(FeaturePoint(
            t=float(img.frame_time(t[i])), b=int(b[i]), scale=scale, ptype=ptype,
            t_frame=int(t[i]), boundary=at_edge))
    return points


def fingerprint_features(
    img: TimeChromaImage,
    points: list,
    q: int = DEFAULT_Q,
    r: int = DEFAULT_R,
    height: int | None = None,
    song_id: int = -1,
) -> list:
    """Descriptor of the ``scale x m`` patch at every point; degenerate ones dropped."""
    if height is None:
        height = img.params.m
    out = []
    by_scale: dict = {}
    for i, p in enumerate(points):
        by_scale.setdefault(p.scale, []).append(i)
    descs = [None] * len(points)
    for scale, idx in by_scale.items():
        t = [points[i].t_frame if points[i].t_frame >= 0 else _frame_of(img, points[i].t) for i in idx]
        b = [points[i].b for i in idx]
        d, ok = descriptors_at(img, t, b, scale, height, q, r)
        for j, i in enumerate(idx):
            if ok[j]:
                descs[i] = d[j]
    for p, d in zip(points, descs):
        if d is not None:
            out.append(Fingerprint(d, p, song_id))
    return out


def extract_fingerprints(img: TimeChromaImage, dictionary: PatternDictionary,
                         scan: ScanConfig = ScanConfig(), song_id: int = -1) -> list:
    """Detect stable feature points and fingerprint them in one call."""
    cands = find_local_maxima(img, scan.max_candidates_per_s)
    points = detect_features(img, dictionary, scan.scale_range, scan.num_scales, cands,
                             keep_boundary=scan.keep_boundary)
    return fingerprint_features(img, points, dictionary.q, dictionary.r, dictionary.w_p, song_id)


def _frame_of(img: TimeChromaImage, t: float) -> int:
    return int(round((t - img.t0_s) / img.frame_hop_s))


# -- dictionary file ------------------------------------------------------------------

DICT_MAGIC = b"TCDICT01"
_DICT_HEADER = struct.Struct("<8sIIIIIII")  # magic, c, q, r, m, n, w_t_ms, w_p


def save_dictionary(d: PatternDictionary, path) -> None:
    """Binary layout: header, c*(q*r-1) little-endian float64, cluster sizes, CRC32."""
    header = _DICT_HEADER.pack(DICT_MAGIC, d.c, d.q, d.r, d.m, d.n, int(round(d.w_t * 1000)), d.w_p)
    body = header + np.ascontiguousarray(d.patterns, dtype="<f8").tobytes()
    sizes = list(d.cluster_sizes) or [0] * d.c
    body += np.asarray(sizes, dtype="<u8").tobytes()
    body += struct.pack("<I", zlib.crc32(body))
    _atomic_write(path, body)


def load_dictionary(path) -> PatternDictionary:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _DICT_HEADER.size or data[:8] != DICT_MAGIC:
        raise FormatVersionMismatch(f"{path}: not a TCDICT01 dictionary")
    _, c, q, r, m, n, w_t_ms, w_p = _DICT_HEADER.unpack_from(data)
    dim = q * r - 1
    expected = _DICT_HEADER.size + 8 * c * dim + 8 * c + 4
    if len(data) != expected:
        raise FormatVersionMismatch(f"{path}: expected {expected} bytes, found {len(data)}")
    if zlib.crc32(data[:-4]) != struct.unpack("<I", data[-4:])[0]:
        raise FormatVersionMismatch(f"{path}: checksum mismatch")
    off = _DICT_HEADER.size
    patterns = np.frombuffer(data, dtype="<f8", count=c * dim, offset=off).reshape(c, dim).astype(np.float64)
    sizes = np.frombuffer(data, dtype="<u8", count=c, offset=off + 8 * c * dim)
    return PatternDictionary(patterns, q, r, m, n, w_t_ms / 1000.0, w_p, tuple(int(s) for s in sizes))


def _atomic_write(path, payload: bytes) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
