import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridmot.evaluation import (FN, FP, IDS, ClearCounts, ObjectScript, SyntheticSpec,
                                  SyntheticSpecError, UndefinedMetric, demo_spec,
                                  evaluate_sequence, generate_synthetic, match_frame, mota, motp)
from hybridmot.geometry import BoundingBox
from hybridmot.pipeline import StaticDetections, TrackerConfig, run_sequence


def sq(x, y=0.0, s=10.0):
    return BoundingBox(x, y, s, s)


def clear_scenario():
    """Two frames, 10 gt boxes, 1 FP, 2 FN and 1 identity switch.

    Returns (gt, hyp, expected sum of 1 - IoU over matches).
    """
    gt = {1: [(g, sq(50 * g)) for g in range(1, 6)],
          2: [(g, sq(50 * g)) for g in range(1, 6)]}
    hyp = {
        # g1 is 1 px off: IoU 90/110
        1: [(1, sq(51))] + [(h, sq(50 * h)) for h in range(2, 6)] + [(9, sq(0, 200))],
        # g2 now covered by a new id 6, 2 px off: IoU 80/120; g4, g5 missed
        2: [(1, sq(50)), (6, sq(102)), (3, sq(150))],
    }
    return gt, hyp, (1 - 90 / 110) + (1 - 80 / 120)


class TestMatchFrame:
    def test_perfect(self):
        items = [(1, sq(0)), (2, sq(50))]
        matches, events, carry = match_frame(items, items)
        assert [(g, h) for g, h, _ in matches] == [(1, 1), (2, 2)]
        assert events == [] and carry == {1: 1, 2: 2}

    def test_single_fn(self):
        _, events, _ = match_frame([(1, sq(0))], [])
        assert events == [(FN, 1, None)]

    def test_id_switch(self):
        _, _, carry = match_frame([(1, sq(0))], [(1, sq(0))])
        _, events, carry = match_frame([(1, sq(0))], [(2, sq(1))], carry)
        assert events == [(IDS, 1, 2)]
        assert carry == {1: 2}

    def test_carry_kept_over_better_overlap(self):
        _, _, carry = match_frame([(1, sq(0))], [(7, sq(0))])
        matches, events, _ = match_frame([(1, sq(0))], [(7, sq(2)), (8, sq(0))], carry)
        assert [(g, h) for g, h, _ in matches] == [(1, 7)]
        assert events == [(FP, None, 8)]

    def test_below_iou_min(self):
        _, events, _ = match_frame([(1, sq(0))], [(1, sq(6))])
        assert sorted(e[0] for e in events) == [FN, FP]

    def test_duplicate_ids(self):
        with pytest.raises(ValueError):
            match_frame([(1, sq(0)), (1, sq(50))], [])
        with pytest.raises(ValueError):
            match_frame([], [(2, sq(0)), (2, sq(50))])


class TestSequence:
    def test_hand_scenario(self):
        gt, hyp, dist = clear_scenario()
        c = evaluate_sequence(gt, hyp)
        assert (c.gt, c.fp, c.fn, c.ids, c.matches) == (10, 1, 2, 1, 8)
        assert mota(c) == pytest.approx(0.6, abs=1e-12)
        assert motp(c) == pytest.approx(dist / 8, abs=1e-12)

    def test_perfect_hypothesis(self):
        gt, _, _ = clear_scenario()
        c = evaluate_sequence(gt, gt)
        assert (c.fp, c.fn, c.ids, c.matches) == (0, 0, 0, c.gt)
        assert mota(c) == 1.0 and motp(c) == 0.0

    def test_drop_frame_two(self):
        gt, _, _ = clear_scenario()
        hyp = {1: gt[1], 2: []}
        assert evaluate_sequence(gt, hyp).fn == len(gt[2])

    def test_ids_across_gap(self):
        gt = {1: [(1, sq(0))], 2: [(1, sq(0))], 3: [(1, sq(0))]}
        hyp = {1: [(4, sq(0))], 2: [], 3: [(5, sq(0))]}
        c = evaluate_sequence(gt, hyp)
        assert (c.ids, c.fn) == (1, 1)


class TestMetrics:
    def test_examples(self):
        assert mota(ClearCounts(gt=10)) == 1.0
        assert mota(ClearCounts(fp=1, fn=2, ids=1, gt=10, matches=8)) == pytest.approx(0.6)
        assert mota(ClearCounts(fp=10, fn=5, gt=10, matches=5)) == pytest.approx(-0.5)
        assert motp(ClearCounts(matches=2, sum_distance=0.2 + 0.4)) == pytest.approx(0.3)

    def test_undefined(self):
        with pytest.raises(UndefinedMetric):
            mota(ClearCounts())
        with pytest.raises(UndefinedMetric):
            motp(ClearCounts(gt=3, fn=3))


def random_frames(rng, n_frames=4, n_gt=4, n_hyp=5):
    gt, hyp = {}, {}
    for f in range(1, n_frames + 1):
        gt[f] = [(g, BoundingBox(*rng.uniform(0, 60, 2), 20, 20)) for g in range(1, n_gt + 1)]
        hyp[f] = [(h, BoundingBox(*rng.uniform(0, 60, 2), 20, 20)) for h in range(1, n_hyp + 1)]
    return gt, hyp


class TestProperties:
    @given(st.integers(0, 2 ** 31))
    def test_conservation_and_bounds(self, seed):
        gt, hyp = random_frames(np.random.default_rng(seed))
        c = evaluate_sequence(gt, hyp)
        assert c.matches + c.fn == c.gt
        assert c.sum_distance <= c.matches
        if c.matches:
            assert 0.0 <= motp(c) <= 0.5 + 1e-12

    @settings(max_examples=30)
    @given(st.integers(0, 2 ** 31))
    def test_order_independent(self, seed):
        rng = np.random.default_rng(seed)
        gt, hyp = random_frames(rng)
        shuffled_gt = {f: [v[i] for i in rng.permutation(len(v))] for f, v in gt.items()}
        shuffled_hyp = {f: [v[i] for i in rng.permutation(len(v))] for f, v in hyp.items()}
        assert evaluate_sequence(gt, hyp) == evaluate_sequence(shuffled_gt, shuffled_hyp)

    @settings(max_examples=30)
    @given(st.integers(0, 2 ** 31), st.integers(1, 4))
    def test_pure_fp_costs_one_over_gt(self, seed, frame):
        gt, hyp = random_frames(np.random.default_rng(seed))
        base = evaluate_sequence(gt, hyp)
        more = {f: list(v) for f, v in hyp.items()}
        more[frame].append((99, BoundingBox(500, 500, 10, 10)))
        worse = evaluate_sequence(gt, more)
        assert mota(worse) == pytest.approx(mota(base) - 1.0 / base.gt, abs=1e-12)


class TestSynthetic:
    def test_empty(self):
        seq = generate_synthetic(SyntheticSpec())
        assert seq.frames == [] and seq.gt == {}

    def test_out_of_bounds(self):
        spec = SyntheticSpec(n_frames=10, objects=(ObjectScript(BoundingBox(300, 10, 30, 30), (5, 0)),))
        with pytest.raises(SyntheticSpecError):
            generate_synthetic(spec)

    def test_ground_truth_and_detections(self):
        spec = SyntheticSpec(n_frames=5, seed=1, objects=(
            ObjectScript(BoundingBox(10, 10, 30, 40), (2, 1)),
            ObjectScript(BoundingBox(200, 100, 30, 40), first_frame=3, occluded=(4, 4))))
        seq = generate_synthetic(spec)
        assert len(seq.frames) == 5 and seq.frames[0].shape == (240, 320)
        assert seq.gt[5][0] == (1, BoundingBox(18, 14, 30, 40))
        assert [g for g, _ in seq.gt[2]] == [1] and [g for g, _ in seq.gt[3]] == [1, 2]
        assert [d.confidence for d in seq.detections[4]] == [0.9, 0.3]
        jitter = [abs(d.box.x - g.x) for f in seq.gt for d, (_, g) in zip(seq.detections[f], seq.gt[f])]
        assert 0 < max(jitter) < 5

    def test_seeded(self):
        a = generate_synthetic(demo_spec(3))
        b = generate_synthetic(demo_spec(3))
        assert all(np.array_equal(x.data, y.data) for x, y in zip(a.frames, b.frames))

    def test_object_brighter_than_background(self):
        spec = SyntheticSpec(n_frames=1, objects=(ObjectScript(BoundingBox(100, 100, 40, 40)),))
        img = generate_synthetic(spec).frames[0].data
        assert img[100:140, 100:140].min() > img[:90, :90].max()

    def test_static_object_skip_four(self):
        spec = SyntheticSpec(n_frames=10, objects=(ObjectScript(BoundingBox(120, 80, 40, 70)),))
        seq = generate_synthetic(spec)
        log = run_sequence(seq.frames, StaticDetections(seq.detections), TrackerConfig(skip=4))
        assert mota(evaluate_sequence(seq.gt, log.as_mapping())) == 1.0
