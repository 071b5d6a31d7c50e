"""Score detections on attacked mash-ups against their ground truth."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .attacks import Attack, GroundTruth, attacked_mashup
from .config import Config
from .pipeline import query

A_TOLERANCE = 0.01
IOU_FLOOR = 0.7
CSV_FIELDS = ("attack", "snippets", "song_rate", "tempo_rate", "pitch_rate",
              "mean_iou", "iou_rate", "joint_rate")


@dataclass(frozen=True)
class SnippetOutcome:
    truth: GroundTruth
    song_ok: bool
    tempo_ok: bool
    pitch_ok: bool
    iou: float

    @property
    def joint_ok(self) -> bool:
        return self.song_ok and self.tempo_ok and self.pitch_ok and self.iou >= IOU_FLOOR


def interval_iou(a0: float, a1: float, b0: float, b1: float) -> float:
    inter = max(0.0, min(a1, b1) - max(a0, b0))
    union = max(a1, b1) - min(a0, b0)
    return inter / union if union > 0 else 0.0


def score_snippets(detections: list, truths: list, n_bins: int = 288) -> list:
    """Pair each ground-truth snippet with the detection overlapping it most."""
    out = []
    for g in truths:
        best, best_ov = None, 0.0
        for d in detections:
            ov = min(d.query_end, g.query_end) - max(d.query_start, g.query_start)
            if ov > best_ov:
                best, best_ov = d, ov
        if best is None:
            out.append(SnippetOutcome(g, False, False, False, 0.0))
            continue
        song_ok = best.song_id == g.song_id
        out.append(SnippetOutcome(
            g,
            song_ok,
            song_ok and abs(best.a - g.a) < A_TOLERANCE,
            song_ok and (best.dp - g.dp) % n_bins == 0,
            interval_iou(best.query_start, best.query_end, g.query_start, g.query_end) if song_ok else 0.0,
        ))
    return out


def summarize(label: str, outcomes: list) -> dict:
    n = len(outcomes)

    def rate(flag):
        return sum(1 for o in outcomes if flag(o)) / n if n else 0.0

    return {
        "attack": label,
        "snippets": n,
        "song_rate": rate(lambda o: o.song_ok),
        "tempo_rate": rate(lambda o: o.tempo_ok),
        "pitch_rate": rate(lambda o: o.pitch_ok),
        "mean_iou": sum(o.iou for o in outcomes) / n if n else 0.0,
        "iou_rate": rate(lambda o: o.iou >= IOU_FLOOR),
        "joint_rate": rate(lambda o: o.joint_ok),
    }


def evaluate_attack(db, dictionary, scores: list, attack: Attack, cfg: Config = Config(),
                    n_snippets: int = 10, seed: int = 0):
    """One attacked mash-up: (summary row, per-snippet outcomes, detections)."""
    sig, truths = attacked_mashup(scores, attack, n_snippets=n_snippets, seed=seed)
    dets = query(db, sig, dictionary, cfg)
    outcomes = score_snippets(dets, truths, cfg.m * cfg.n)
    return summarize(attack.label, outcomes), outcomes, dets


def rows_to_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()
