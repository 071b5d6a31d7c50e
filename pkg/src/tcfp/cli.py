"""Command-line front end.

Exit codes: 0 on success (including "no copy detected"), 2 for usage or
configuration errors, 3 for bad input data or file formats.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .attacks import Attack, generate_song
from .audio_io import load_wav, write_wav
from .config import Config, resolve
from .errors import ConfigError, DataError, InsufficientPatches
from .evaluate import evaluate_attack, rows_to_csv
from .features import load_dictionary, save_dictionary
from .index import FingerprintDB

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3

DEFAULT_ATTACKS = ("tempo=0.83", "tempo=1.2", "pitch=12", "pitch=-12", "speed=0.9", "speed=1.1", "noise=40")
SYNTH_NAME = re.compile(r"^synth_(\d+)$")


def _wav_files(corpus_dir) -> list:
    d = Path(corpus_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"{corpus_dir}: not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() == ".wav" and p.is_file())


def _file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _check_dictionary(dictionary, cfg: Config) -> None:
    if (dictionary.q, dictionary.r, dictionary.m, dictionary.n) != (cfg.q, cfg.r, cfg.m, cfg.n):
        raise ConfigError(
            f"dictionary was built with q={dictionary.q} r={dictionary.r} m={dictionary.m} n={dictionary.n}, "
            f"config has q={cfg.q} r={cfg.r} m={cfg.m} n={cfg.n}")


# -- commands ---------------------------------------------------------------------


def cmd_synth_corpus(args, cfg: Config) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for seed in range(args.first_seed, args.first_seed + args.count):
        _, sig = generate_song(seed, args.length, cfg.chroma)
        write_wav(out / f"synth_{seed}.wav", sig)
    print(f"wrote {args.count} songs to {out}")
    return EXIT_OK


def cmd_build_dict(args, cfg: Config) -> int:
    files = _wav_files(args.corpus_dir)
    if not files:
        raise InsufficientPatches(f"{args.corpus_dir}: no WAV files")
    cfg = cfg.replace(seed=args.seed) if args.seed is not None else cfg
    images = [pipeline.image_of_file(p, cfg) for p in files]
    d = pipeline.dictionary_from(images, cfg)
    save_dictionary(d, args.out)
    print("cluster sizes: " + " ".join(str(s) for s in d.cluster_sizes))
    return EXIT_OK


def cmd_ingest(args, cfg: Config) -> int:
    dictionary = load_dictionary(args.dict)
    _check_dictionary(dictionary, cfg)
    db = FingerprintDB.load(args.db) if os.path.exists(args.db) else FingerprintDB(cfg.q, cfg.r, cfg.m, cfg.n)
    added = skipped = 0
    for path in _wav_files(args.corpus_dir):
        digest = _file_hash(path)
        if db.song_by_hash(digest) is not None:
            skipped += 1
            continue
        sig = load_wav(path)
        img = pipeline.image_of(sig, cfg)
        sid = len(db.songs)
        fps = pipeline.fingerprints_of(img, dictionary, cfg, sid)
        db.add_song(sid, fps, path.stem, sig.duration, digest)
        added += 1
    db.save(args.db)
    print(f"added {added} song(s), skipped {skipped} already present; {len(db)} fingerprints in total")
    return EXIT_OK


def cmd_query(args, cfg: Config) -> int:
    dictionary = load_dictionary(args.dict)
    _check_dictionary(dictionary, cfg)
    db = FingerprintDB.load(args.db)
    dets = pipeline.query(db, load_wav(args.query), dictionary, cfg)
    for d in dets:
        print(json.dumps(d.record()))
    if not dets:
        print("no copy detected", file=sys.stderr)
    for d in dets:
        title = db.songs[d.song_id].title if d.song_id < len(db.songs) else str(d.song_id)
        print(f"{d.query_start:8.2f}-{d.query_end:8.2f} s  <-  {title} "
              f"[{d.db_start:.2f}, {d.db_end:.2f}] s  a={d.a:.3f}  dp={d.dp_signed:+d}  "
              f"support={d.support}", file=sys.stderr)
    return EXIT_OK


def _synthetic_scores(db: FingerprintDB, cfg: Config) -> list:
    scores = []
    for s in db.songs:
        hit = SYNTH_NAME.match(s.title)
        if not hit:
            raise ConfigError(f"evaluate needs a synthetic corpus; song {s.song_id} is {s.title!r}")
        score, _ = generate_song(int(hit.group(1)), s.duration, cfg.chroma)
        scores.append(score)
    return scores


def cmd_evaluate(args, cfg: Config) -> int:
    dictionary = load_dictionary(args.dict)
    _check_dictionary(dictionary, cfg)
    db = FingerprintDB.load(args.db)
    scores = _synthetic_scores(db, cfg)
    specs = []
    for item in args.attack or DEFAULT_ATTACKS:
        specs.extend(s for s in item.split(",") if s.strip())
    try:
        attacks = [Attack.parse(s) for s in specs]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rows = []
    for k, attack in enumerate(attacks):
        row, _, _ = evaluate_attack(db, dictionary, scores, attack, cfg, args.snippets, args.seed + k)
        rows.append(row)
    text = rows_to_csv(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_dump_chroma(args, cfg: Config) -> int:
    img = pipeline.image_of_file(args.wav, cfg)
    times = img.frame_time(np.arange(img.n_frames))
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        out.write("time_s," + ",".join(f"b{b}" for b in range(img.n_bins)) + "\n")
        for k in range(img.n_frames):
            out.write(f"{times[k]:.4f}," + ",".join(f"{v:.6g}" for v in img.values[:, k]) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_dump_config(args, cfg: Config) -> int:
    sys.stdout.write(cfg.dumps())
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tcfp", description="Time-chroma audio copy detection.")
    parser.add_argument("--config", help="key = value config file (default: $TCFP_CONFIG)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; repeatable")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-corpus", help="write deterministic synthetic songs as WAV")
    p.add_argument("out_dir")
    p.add_argument("--count", type=int, default=25)
    p.add_argument("--first-seed", type=int, default=1000)
    p.add_argument("--length", type=float, default=60.0)
    p.set_defaults(func=cmd_synth_corpus)

    p = sub.add_parser("build-dict", help="cluster corpus patches into a pattern dictionary")
    p.add_argument("corpus_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_build_dict)

    p = sub.add_parser("ingest", help="fingerprint corpus songs into a database")
    p.add_argument("corpus_dir")
    p.add_argument("--dict", required=True)
    p.add_argument("--db", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("query", help="detect copied snippets in a query WAV")
    p.add_argument("query")
    p.add_argument("--dict", required=True)
    p.add_argument("--db", required=True)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("evaluate", help="score detection on attacked synthetic mash-ups")
    p.add_argument("--dict", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--attack", action="append", help="e.g. tempo=1.2 or pitch=-12,noise=40; repeatable")
    p.add_argument("--snippets", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("dump-chroma", help="write the time-chroma image of a WAV as CSV")
    p.add_argument("wav")
    p.add_argument("--out")
    p.set_defaults(func=cmd_dump_chroma)

    p = sub.add_parser("dump-config", help="print the effective configuration")
    p.set_defaults(func=cmd_dump_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args.config, args.set)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
