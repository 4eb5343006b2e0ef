"""Frame selection policies.

Three selection mechanisms live here: the relay slice that anchors view
synthesis (endpoint-adjacent indices of the interpolated sequence), the
feature-matching selector that scores every candidate frame by its
RANSAC inlier support against both input images, and a confidence-rank
baseline over pose-backend confidences.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .features import EmptyFrame, Frame, match_points
from .robust import RansacConfig, TooFewCorrespondences, from_point_arrays, ransac_fundamental

DEFAULT_K = 6
DEFAULT_SCORE_THRESHOLD = 30
# offsets resolve like Python indices: 0, 1 from the front; -2, -1 from
# the back, giving {0, 1, T-1, T}
DEFAULT_RELAY_OFFSETS = (0, 1, -2, -1)

_SCORING_WORKERS = 8


class PatternOutOfRange(ValueError):
    """Relay pattern does not fit the sequence (out of bounds or overlap)."""


class MisalignedLengths(ValueError):
    """Frames and confidences differ in length."""


@dataclass(frozen=True)
class FrameScore:
    """Match support of candidate frame t against both input images."""

    t: int
    n0: int
    nT: int

    def __post_init__(self):
        if self.n0 < 0 or self.nT < 0:
            raise ValueError("inlier counts cannot be negative")

    @property
    def s(self) -> int:
        return self.n0 + self.nT


@dataclass(frozen=True)
class SelectionConfig:
    k: int = DEFAULT_K
    score_threshold: int = DEFAULT_SCORE_THRESHOLD
    relay_offsets: Tuple[int, ...] = DEFAULT_RELAY_OFFSETS

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        offs = tuple(self.relay_offsets)
        object.__setattr__(self, "relay_offsets", offs)
        if 0 not in offs or -1 not in offs:
            raise ValueError("relay offsets must cover both endpoints (0 and -1)")


def relay_pattern(n: int) -> Tuple[int, ...]:
    """The n-frame relay pattern: first n/2 and last n/2 indices."""
    if n < 2 or n % 2:
        raise ValueError(f"relay pattern size must be an even count >= 2, got {n}")
    half = n // 2
    return tuple(range(half)) + tuple(range(-half, 0))


def select_relay(frames: Sequence[Frame],
                 pattern: Tuple[int, ...] = DEFAULT_RELAY_OFFSETS) -> List[Frame]:
    """Pick the relay frames out of an interpolated sequence.

    Pure index arithmetic: the returned list holds the identical frame
    objects at the resolved indices, in ascending index order.

    Raises:
        PatternOutOfRange: an offset falls outside the sequence, or two
            offsets resolve to the same index (sequence too short).
    """
    n = len(frames)
    resolved = []
    for off in pattern:
        idx = off if off >= 0 else n + off
        if idx < 0 or idx >= n:
            raise PatternOutOfRange(
                f"offset {off} outside a sequence of {n} frames")
        resolved.append(idx)
    if len(set(resolved)) != len(resolved):
        raise PatternOutOfRange(
            f"pattern {pattern} collides on a sequence of {n} frames")
    return [frames[i] for i in sorted(resolved)]


def _side_count(candidate_set, anchor_set, matcher, ransac_cfg) -> int:
    """Inlier count of candidate vs one anchor; 0 when support is absent."""
    m = matcher.match_sets(candidate_set, anchor_set)
    if len(m.pairs) < 8:
        return 0
    pa, pb = match_points(candidate_set, anchor_set, m)
    try:
        _, _, count = ransac_fundamental(from_point_arrays(pa, pb), ransac_cfg)
    except TooFewCorrespondences:
        return 0
    return count


def fms_score_all(candidates: Sequence[Frame], start: Frame, end: Frame,
                  matcher, ransac_cfg: Optional[RansacConfig] = None,
                  workers: int = _SCORING_WORKERS) -> List[FrameScore]:
    """Score every candidate frame by inlier support against both inputs.

    Failures never abort selection: a candidate that yields no features,
    too few matches, or too little RANSAC support simply scores 0 on the
    affected side.  Candidates are scored concurrently; the result order
    follows the input order.
    """
    cfg = ransac_cfg or RansacConfig()

    def describe_or_none(frame: Frame):
        try:
            return matcher.describe(frame)
        except EmptyFrame:
            return None

    start_set = describe_or_none(start)
    end_set = describe_or_none(end)

    def score(frame: Frame) -> FrameScore:
        cand = describe_or_none(frame)
        if cand is None:
            return FrameScore(t=frame.index, n0=0, nT=0)
        n0 = _side_count(cand, start_set, matcher, cfg) if start_set else 0
        nT = _side_count(cand, end_set, matcher, cfg) if end_set else 0
        return FrameScore(t=frame.index, n0=n0, nT=nT)

    if len(candidates) <= 1 or workers <= 1:
        return [score(f) for f in candidates]
    with ThreadPoolExecutor(max_workers=min(workers, len(candidates))) as pool:
        return list(pool.map(score, candidates))


def select_top_k(scores: Sequence[FrameScore], cfg: SelectionConfig) -> List[int]:
    """Indices of the k best-supported frames, in ascending t.

    Frames scoring below the threshold are dropped entirely (the result
    may be empty; the pipeline then falls back to relay frames).  Score
    ties prefer the frame closer to the temporal center of the scored
    range, then the lower t.
    """
    if not scores:
        raise ValueError("scores must be non-empty")
    center = (min(s.t for s in scores) + max(s.t for s in scores)) / 2.0
    kept = [s for s in scores if s.s >= cfg.score_threshold]
    kept.sort(key=lambda s: (-s.s, abs(s.t - center), s.t))
    return sorted(s.t for s in kept[:cfg.k])


def select_by_confidence(frames: Sequence[Frame], confidences: Sequence[float],
                         percentile: float) -> List[int]:
    """Positions of the top ceil(percentile * N) frames by confidence.

    The confidence-threshold baseline: rank frames by the pose backend's
    per-frame mean confidence and keep the given top fraction.  Returned
    positions are ascending.

    Raises:
        MisalignedLengths: frames and confidences differ in length.
    """
    if len(frames) != len(confidences):
        raise MisalignedLengths(
            f"{len(frames)} frames vs {len(confidences)} confidences")
    if not 0.0 < percentile <= 1.0:
        raise ValueError(f"percentile must be in (0, 1], got {percentile}")
    n = len(frames)
    take = math.ceil(percentile * n)
    order = sorted(range(n), key=lambda i: (-float(confidences[i]), i))
    return sorted(order[:take])
