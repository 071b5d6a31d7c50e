"""Shared generators for synthetic match sets."""

import numpy as np

from tcfp.identify import Interval, MatchedFeature


def line_matches(a, b, dp, n=40, outlier_frac=0.0, seed=0, song_id=0, n_bins=288, t_db_range=(0.0, 60.0)):
    """Matches on ``t_q = a*t_db + b`` plus uniformly scattered outliers.

    Returns (matches, interval covering every match, indices of the inliers).
    """
    rng = np.random.default_rng(seed)
    n_out = int(round(outlier_frac * n))
    n_in = n - n_out
    t_db = np.sort(rng.uniform(*t_db_range, n_in))
    t_q = a * t_db + b
    feats = [MatchedFeature(song_id, a, dp % n_bins, float(q), float(d), 1.0) for q, d in zip(t_q, t_db)]
    lo, hi = float(t_q.min()), float(t_q.max())
    for _ in range(n_out):
        feats.append(MatchedFeature(
            song_id,
            float(2.0 ** rng.uniform(-1, 1)),
            int(rng.integers(n_bins)),
            float(rng.uniform(lo, hi)),
            float(rng.uniform(*t_db_range)),
            1.0,
        ))
    order = rng.permutation(len(feats))
    shuffled = [feats[i] for i in order]
    inliers = set(np.flatnonzero(order < n_in).tolist())
    return shuffled, Interval(song_id, lo, hi - lo), inliers


ACCEPTANCE_LINES = []


def report(criterion: int, name: str, ok: bool, detail: str) -> None:
    """Record and print one acceptance line, then fail the test if ``ok`` is false."""
    line = f"criterion {criterion} ({name}): {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line
