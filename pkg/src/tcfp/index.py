"""Fingerprint database and ratio-test nearest-neighbour matching.

Entries are stored as one flat descriptor matrix, grouped by song in the
order songs were added. Search is an exhaustive scan; descriptors are unit
vectors so the angle between two of them is ``arccos`` of their dot product.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import DuplicateSongId, FormatVersionMismatch
from .features import FeaturePoint, Fingerprint, _atomic_write

DEFAULT_ALPHA = 0.6
DEFAULT_THETA_MAX = 0.4  # rad
DB_MAGIC = b"TCFDB001"
_DB_HEADER = struct.Struct("<8sIIIIII")  # magic, q, r, m, n, n_songs, n_entries
_SONG_HEADER = struct.Struct("<IdHH")  # song_id, duration, title bytes, hash bytes
_QUERY_CHUNK = 256

MODE_DB = "db"  # second nearest taken from another song
MODE_LITERAL = "literal"  # second nearest over every other entry


@dataclass(frozen=True)
class SongInfo:
    song_id: int
    title: str = ""
    duration: float = 0.0
    file_hash: str = ""


@dataclass(frozen=True)
class MatchPair:
    query_fp: Fingerprint
    db_fp: Fingerprint
    angle: float  # rad
    query_index: int = -1
    db_index: int = -1


def angles(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Pairwise angles between rows of ``y`` and rows of ``x``."""
    return np.arccos(np.clip(np.asarray(y) @ np.asarray(x).T, -1.0, 1.0))


class FingerprintDB:
    """Fingerprints of a reference corpus, song ids dense from 0.

    Single writer, many readers: ``add_song`` must not run concurrently with
    anything else, ``match`` may.
    """

    def __init__(self, q: int = 12, r: int = 12, m: int = 72, n: int = 4):
        self.q, self.r, self.m, self.n = q, r, m, n
        self.songs: list = []
        dim = q * r - 1
        self._desc = np.zeros((0, dim))
        self._t = np.zeros(0)
        self._b = np.zeros(0, dtype=np.int64)
        self._scale = np.zeros(0)
        self._ptype = np.zeros(0, dtype=np.int64)
        self._song = np.zeros(0, dtype=np.int64)

    @property
    def dim(self) -> int:
        return self.q * self.r - 1

    def __len__(self) -> int:
        return len(self._song)

    @property
    def descriptors(self) -> np.ndarray:
        return self._desc

    @property
    def song_ids(self) -> np.ndarray:
        return self._song

    def song_by_hash(self, file_hash: str):
        for s in self.songs:
            if file_hash and s.file_hash == file_hash:
                return s
        return None

    def entry(self, i: int) -> Fingerprint:
        pt = FeaturePoint(t=float(self._t[i]), b=int(self._b[i]), scale=float(self._scale[i]),
                          ptype=int(self._ptype[i]))
        return Fingerprint(self._desc[i], pt, int(self._song[i]))

    def add_song(self, song_id: int, fps: list, title: str = "", duration: float = 0.0,
                 file_hash: str = "") -> "FingerprintDB":
        """Append one song's fingerprints. ``song_id`` must be the next free id."""
        if any(s.song_id == song_id for s in self.songs):
            raise DuplicateSongId(f"song {song_id} is already in the database")
        if song_id != len(self.songs):
            raise ValueError(f"song ids are dense: expected {len(self.songs)}, got {song_id}")
        desc = np.array([f.desc for f in fps], dtype=np.float64).reshape(len(fps), self.dim)
        self._desc = np.concatenate([self._desc, desc])
        self._t = np.concatenate([self._t, [f.point.t for f in fps]])
        self._b = np.concatenate([self._b, np.array([f.point.b for f in fps], dtype=np.int64)])
        self._scale = np.concatenate([self._scale, [f.point.scale for f in fps]])
        self._ptype = np.concatenate([self._ptype, np.array([f.point.ptype for f in fps], dtype=np.int64)])
        self._song = np.concatenate([self._song, np.full(len(fps), song_id, dtype=np.int64)])
        self.songs.append(SongInfo(song_id, title, float(duration), file_hash))
        return self

    # -- search ---------------------------------------------------------------

    def nearest(self, query: np.ndarray, mode: str = MODE_DB):
        """Per query row: ``(nearest index, nearest angle, runner-up angle)``.

        The second angle is ``inf`` when no admissible second entry exists.
        """
        if mode not in (MODE_DB, MODE_LITERAL):
            raise ValueError(f"unknown match mode {mode!r}")
        query = np.asarray(query, dtype=np.float64).reshape(-1, self.dim)
        nq = len(query)
        idx = np.zeros(nq, dtype=np.int64)
        a1 = np.full(nq, np.inf)
        a2 = np.full(nq, np.inf)
        if len(self) == 0 or nq == 0:
            return idx, a1, a2
        # entries are contiguous per song, so per-song minima are segment minima
        starts = np.flatnonzero(np.r_[True, self._song[1:] != self._song[:-1]])
        for s in range(0, nq, _QUERY_CHUNK):
            ang = angles(query[s:s + _QUERY_CHUNK], self._desc)
            rows = np.arange(len(ang))
            best = np.argmin(ang, axis=1)
            idx[s:s + len(ang)] = best
            a1[s:s + len(ang)] = ang[rows, best]
            if mode == MODE_LITERAL:
                if ang.shape[1] > 1:
                    ang[rows, best] = np.inf
                    a2[s:s + len(ang)] = ang.min(axis=1)
            else:
                per_song = np.minimum.reduceat(ang, starts, axis=1)
                per_song[rows, np.searchsorted(starts, best, side="right") - 1] = np.inf
                if per_song.shape[1] > 1:
                    a2[s:s + len(ang)] = per_song.min(axis=1)
        return idx, a1, a2

    def match(self, query_fps: list, alpha: float = DEFAULT_ALPHA,
              theta_max: float = DEFAULT_THETA_MAX, mode: str = MODE_DB) -> list:
        """Ratio-test matches: keep y when angle(y,x) <= alpha*angle(y,x') and <= theta_max."""
        if not 0 < alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if len(self) == 0:
            raise ValueError("cannot match against an empty database")
        if not query_fps:
            return []
        query = np.array([f.desc for f in query_fps], dtype=np.float64)
        idx, a1, a2 = self.nearest(query, mode)
        # a missing second neighbour makes the ratio test pass vacuously
        ok = (a1 <= theta_max) & ((a2 == np.inf) | (a1 <= alpha * a2))
        return [MatchPair(query_fps[i], self.entry(int(idx[i])), float(a1[i]), i, int(idx[i]))
                for i in np.flatnonzero(ok)]

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        """Header, song table, packed entries, CRC32; all little-endian."""
        parts = [_DB_HEADER.pack(DB_MAGIC, self.q, self.r, self.m, self.n, len(self.songs), len(self))]
        for s in self.songs:
            title = s.title.encode("utf-8")
            digest = s.file_hash.encode("ascii")
            parts.append(_SONG_HEADER.pack(s.song_id, s.duration, len(title), len(digest)) + title + digest)
        parts.append(np.ascontiguousarray(self._desc, dtype="<f8").tobytes())
        parts.append(self._t.astype("<f8").tobytes())
        parts.append(self._b.astype("<i4").tobytes())
        parts.append(self._scale.astype("<f8").tobytes())
        parts.append(self._ptype.astype("<i4").tobytes())
        parts.append(self._song.astype("<u4").tobytes())
        body = b"".join(parts)
        _atomic_write(path, body + struct.pack("<I", zlib.crc32(body)))

    @classmethod
    def load(cls, path) -> "FingerprintDB":
        with open(path, "rb") as fh:
            data = fh.read()
        if len(data) < _DB_HEADER.size + 4 or data[:8] != DB_MAGIC:
            raise FormatVersionMismatch(f"{path}: not a TCFDB001 database")
        if zlib.crc32(data[:-4]) != struct.unpack("<I", data[-4:])[0]:
            raise FormatVersionMismatch(f"{path}: checksum mismatch (truncated or corrupt)")
        _, q, r, m, n, n_songs, n_entries = _DB_HEADER.unpack_from(data)
        db = cls(q, r, m, n)
        off = _DB_HEADER.size
        try:
            for _ in range(n_songs):
                sid, dur, lt, lh = _SONG_HEADER.unpack_from(data, off)
                off += _SONG_HEADER.size
                title = data[off:off + lt].decode("utf-8")
                digest = data[off + lt:off + lt + lh].decode("ascii")
                off += lt + lh
                db.songs.append(SongInfo(sid, title, dur, digest))
        except (struct.error, UnicodeDecodeError) as exc:
            raise FormatVersionMismatch(f"{path}: bad song table") from exc
        dim = q * r - 1
        expected = off + n_entries * (8 * dim + 8 + 4 + 8 + 4 + 4) + 4
        if len(data) != expected:
            raise FormatVersionMismatch(f"{path}: expected {expected} bytes, found {len(data)}")

        def take(dtype, count):
            nonlocal off
            arr = np.frombuffer(data, dtype=dtype, count=count, offset=off)
            off += arr.nbytes
            return arr

        db._desc = take("<f8", n_entries * dim).reshape(n_entries, dim).astype(np.float64)
        db._t = take("<f8", n_entries).astype(np.float64)
        db._b = take("<i4", n_entries).astype(np.int64)
        db._scale = take("<f8", n_entries).astype(np.float64)
        db._ptype = take("<i4", n_entries).astype(np.int64)
        db._song = take("<u4", n_entries).astype(np.int64)
        return db


def brute_force_match(db_desc: np.ndarray, db_song: np.ndarray, query: np.ndarray,
                      alpha: float = DEFAULT_ALPHA, theta_max: float = DEFAULT_THETA_MAX,
                      mode: str = MODE_DB) -> list:
    """Reference scan, one query and one entry at a time: [(query_index, db_index, angle)]."""
    out = []
    for i, y in enumerate(np.asarray(query)):
        best, a1 = -1, np.inf
        ang = [float(np.arccos(np.clip(y @ x, -1.0, 1.0))) for x in db_desc]
        for j, a in enumerate(ang):
            if a < a1:
                best, a1 = j, a
        a2 = np.inf
        for j, a in enumerate(ang):
            if j == best or (mode == MODE_DB and db_song[j] == db_song[best]):
                continue
            a2 = min(a2, a)
        if a1 <= theta_max and (a2 == np.inf or a1 <= alpha * a2):
            out.append((i, best, a1))
    return out
