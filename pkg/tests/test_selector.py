"""Relay slicing, match-support scoring, and top-k selection."""

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from posecraft.features import Frame, OrbMatcher, Provenance
from posecraft.robust import RansacConfig
from posecraft.selector import (
    DEFAULT_RELAY_OFFSETS,
    FrameScore,
    MisalignedLengths,
    PatternOutOfRange,
    SelectionConfig,
    fms_score_all,
    relay_pattern,
    select_by_confidence,
    select_relay,
    select_top_k,
)


def noise_image(rng, w=192, h=128):
    raw = rng.random((h, w))
    sm = gaussian_filter(raw, sigma=1.5)
    sm = (sm - sm.min()) / (sm.max() - sm.min())
    return (sm * 255).astype(np.uint8)


def shifted_frame(img, dx, index):
    # crop a common window so content overlaps across shifts
    view = img[:, dx:dx + 160]
    return Frame.from_array(view, index=index, provenance=Provenance.DC_INTERPOLATED)


# ---------------------------------------------------------------- dataclasses

class TestFrameScore:
    def test_total_is_sum_of_sides(self):
        assert FrameScore(t=3, n0=17, nT=25).s == 42

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            FrameScore(t=0, n0=-1, nT=5)
        with pytest.raises(ValueError):
            FrameScore(t=0, n0=5, nT=-2)


class TestSelectionConfig:
    def test_defaults(self):
        cfg = SelectionConfig()
        assert cfg.k == 6
        assert cfg.score_threshold == 30
        assert cfg.relay_offsets == (0, 1, -2, -1)

    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            SelectionConfig(k=0)

    def test_offsets_must_cover_endpoints(self):
        with pytest.raises(ValueError):
            SelectionConfig(relay_offsets=(0, 1, 2))
        with pytest.raises(ValueError):
            SelectionConfig(relay_offsets=(1, -1))
        SelectionConfig(relay_offsets=(0, -1))  # minimal valid pattern


# ---------------------------------------------------------------- select_relay

def make_frames(n):
    img = np.zeros((32, 32), dtype=np.uint8)
    img[8:24, 8:24] = 200
    return [Frame.from_array(img, index=i) for i in range(n)]


class TestSelectRelay:
    def test_default_pattern_on_16_frames(self):
        frames = make_frames(16)
        relay = select_relay(frames)
        assert [f.index for f in relay] == [0, 1, 14, 15]
        # identity, not copies
        assert relay[0] is frames[0]
        assert relay[2] is frames[14]

    def test_two_frame_pattern(self):
        frames = make_frames(16)
        relay = select_relay(frames, relay_pattern(2))
        assert [f.index for f in relay] == [0, 15]

    def test_full_pattern_returns_everything(self):
        frames = make_frames(16)
        relay = select_relay(frames, relay_pattern(16))
        assert [f.index for f in relay] == list(range(16))

    def test_pattern_sizes(self):
        assert relay_pattern(2) == (0, -1)
        assert relay_pattern(4) == (0, 1, -2, -1)
        assert relay_pattern(6) == (0, 1, 2, -3, -2, -1)
        assert relay_pattern(8) == (0, 1, 2, 3, -4, -3, -2, -1)
        with pytest.raises(ValueError):
            relay_pattern(3)
        with pytest.raises(ValueError):
            relay_pattern(0)

    def test_too_short_sequence_collides(self):
        with pytest.raises(PatternOutOfRange):
            select_relay(make_frames(3), DEFAULT_RELAY_OFFSETS)
        with pytest.raises(PatternOutOfRange):
            select_relay(make_frames(2), DEFAULT_RELAY_OFFSETS)

    def test_out_of_bounds_offset(self):
        with pytest.raises(PatternOutOfRange):
            select_relay(make_frames(4), (0, 7, -1))

    def test_four_frames_default_pattern_is_everything(self):
        frames = make_frames(4)
        relay = select_relay(frames)
        assert [f.index for f in relay] == [0, 1, 2, 3]


# ---------------------------------------------------------------- fms scoring

class TestFmsScoreAll:
    def test_overlapping_views_score_and_degrade(self, rng):
        img = noise_image(rng)
        start = shifted_frame(img, 0, index=0)
        end = shifted_frame(img, 24, index=4)
        flat = Frame.from_array(np.full((128, 160), 90, dtype=np.uint8), index=2)
        candidates = [
            shifted_frame(img, 6, index=1),
            flat,
            shifted_frame(img, 18, index=3),
        ]
        matcher = OrbMatcher(budget=600)
        scores = fms_score_all(candidates, start, end, matcher,
                               RansacConfig(iterations=300, seed=7))
        assert [s.t for s in scores] == [1, 2, 3]
        # featureless frame degrades to zero on both sides, no exception
        assert scores[1].n0 == 0 and scores[1].nT == 0
        # overlapping views earn support on both sides
        assert scores[0].n0 >= 30 and scores[0].nT >= 15
        assert scores[2].nT >= 30

    def test_worker_count_does_not_change_scores(self, rng):
        img = noise_image(rng)
        start = shifted_frame(img, 0, index=0)
        end = shifted_frame(img, 16, index=3)
        candidates = [shifted_frame(img, 4 * i, index=i) for i in range(1, 3)]
        matcher = OrbMatcher(budget=400)
        cfg = RansacConfig(iterations=200, seed=3)
        serial = fms_score_all(candidates, start, end, matcher, cfg, workers=1)
        parallel = fms_score_all(candidates, start, end, matcher, cfg, workers=8)
        assert [(s.t, s.n0, s.nT) for s in serial] == \
               [(s.t, s.n0, s.nT) for s in parallel]

    def test_featureless_anchor_degrades_that_side(self, rng):
        img = noise_image(rng)
        flat = Frame.from_array(np.full((128, 160), 90, dtype=np.uint8), index=0)
        end = shifted_frame(img, 8, index=2)
        cand = [shifted_frame(img, 4, index=1)]
        scores = fms_score_all(cand, flat, end, OrbMatcher(budget=400),
                               RansacConfig(iterations=200, seed=1))
        assert scores[0].n0 == 0
        assert scores[0].nT > 0


# ---------------------------------------------------------------- select_top_k

def score_list(pairs):
    return [FrameScore(t=t, n0=s // 2, nT=s - s // 2) for t, s in pairs]


class TestSelectTopK:
    def test_threshold_drops_weak_frames(self):
        scores = score_list([(1, 100), (2, 90), (3, 80), (4, 10)])
        assert select_top_k(scores, SelectionConfig()) == [1, 2, 3]

    def test_k_caps_the_selection(self):
        scores = score_list([(t, 100 - t) for t in range(10)])
        got = select_top_k(scores, SelectionConfig(k=4, score_threshold=0))
        assert got == [0, 1, 2, 3]

    def test_tie_prefers_center_then_lower_t(self):
        # full 25-frame coverage, two frames tied at the top
        pairs = [(t, 10) for t in range(25) if t not in (5, 12)]
        pairs += [(5, 50), (12, 50)]
        scores = score_list(pairs)
        assert select_top_k(scores, SelectionConfig(k=1)) == [12]
        assert select_top_k(scores, SelectionConfig(k=2)) == [5, 12]

    def test_equal_center_distance_takes_lower_t(self):
        pairs = [(t, 10) for t in range(25) if t not in (9, 15)]
        pairs += [(9, 50), (15, 50)]
        scores = score_list(pairs)
        assert select_top_k(scores, SelectionConfig(k=1)) == [9]

    def test_all_below_threshold_is_empty(self):
        scores = score_list([(t, 5) for t in range(8)])
        assert select_top_k(scores, SelectionConfig()) == []

    def test_empty_scores_rejected(self):
        with pytest.raises(ValueError):
            select_top_k([], SelectionConfig())

    def test_result_is_ascending(self, rng):
        pairs = [(t, int(rng.integers(0, 200))) for t in range(25)]
        got = select_top_k(score_list(pairs), SelectionConfig())
        assert got == sorted(got)

    def test_random_lists_obey_invariants(self, rng):
        # selection is a filter + ranked prefix; check the contract on a
        # large randomized family of score lists
        for _ in range(1000):
            n = int(rng.integers(2, 30))
            ts = rng.permutation(60)[:n]
            pairs = [(int(t), int(rng.integers(0, 120))) for t in ts]
            scores = score_list(pairs)
            k = int(rng.integers(1, 9))
            thr = int(rng.integers(0, 80))
            cfg = SelectionConfig(k=k, score_threshold=thr)
            got = select_top_k(scores, cfg)

            assert len(got) <= k
            assert got == sorted(got)
            by_t = {sc.t: sc.s for sc in scores}
            assert all(by_t[t] >= thr for t in got)
            # determinism
            assert got == select_top_k(scores, cfg)
            # raising the threshold never admits a frame
            tighter = select_top_k(
                scores, SelectionConfig(k=k, score_threshold=thr + 10))
            assert set(tighter) <= set(got)
            # raising k never evicts a frame
            wider = select_top_k(
                scores, SelectionConfig(k=k + 2, score_threshold=thr))
            assert set(got) <= set(wider)


# ------------------------------------------------------- confidence baseline

class TestSelectByConfidence:
    def test_increasing_confidence_takes_tail(self):
        frames = make_frames(25)
        conf = [i / 25.0 for i in range(25)]
        assert select_by_confidence(frames, conf, 0.2) == [20, 21, 22, 23, 24]

    def test_full_percentile_takes_everything(self):
        frames = make_frames(6)
        conf = [0.5, 0.1, 0.9, 0.3, 0.7, 0.2]
        assert select_by_confidence(frames, conf, 1.0) == list(range(6))

    def test_matches_sort_oracle(self, rng):
        frames = make_frames(40)
        conf = rng.random(40).tolist()
        got = select_by_confidence(frames, conf, 0.6)
        take = int(np.ceil(0.6 * 40))
        oracle = sorted(sorted(range(40), key=lambda i: -conf[i])[:take])
        assert got == oracle

    def test_ceil_rounding(self):
        frames = make_frames(7)
        conf = [0.1 * i for i in range(7)]
        # ceil(0.5 * 7) = 4
        assert len(select_by_confidence(frames, conf, 0.5)) == 4

    def test_confidence_tie_prefers_lower_position(self):
        frames = make_frames(4)
        got = select_by_confidence(frames, [0.5, 0.5, 0.5, 0.5], 0.5)
        assert got == [0, 1]

    def test_misaligned_lengths(self):
        frames = make_frames(5)
        with pytest.raises(MisalignedLengths):
            select_by_confidence(frames, [0.5, 0.5], 0.5)

    def test_percentile_domain(self):
        frames = make_frames(4)
        with pytest.raises(ValueError):
            select_by_confidence(frames, [0.1] * 4, 0.0)
        with pytest.raises(ValueError):
            select_by_confidence(frames, [0.1] * 4, 1.2)
