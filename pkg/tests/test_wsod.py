import math

import numpy as np
import pytest
from scipy.special import softmax

from alsim.detections import GroundTruthBox
from alsim.geometry import BBox, iou
from alsim.wsod import (
    Proposal,
    RegionScores,
    combine_scores,
    generate_pseudo_boxes,
    mil_bce_loss,
    mil_image_scores,
    sample_difficulty_aware,
    top_fraction_count,
)
from conftest import random_box
from oracles import oracle_difficulty_sample, oracle_pseudo_boxes


class TestCombineScores:
    def test_single_region_is_row_softmax(self, rng):
        s_c = rng.normal(size=(1, 5))
        s_d = rng.normal(size=(1, 5))
        # one row: the column softmax collapses to all-ones
        out = combine_scores(RegionScores(s_c, s_d))
        assert out == pytest.approx(softmax(s_c, axis=1), abs=1e-12)

    def test_constant_rows_give_half(self):
        s_c = np.ones((3, 2)) * 4.2
        s_d = np.zeros((3, 2))
        out = combine_scores(RegionScores(s_c, s_d))
        # classification factor is exactly 0.5 everywhere for C=2
        assert out == pytest.approx(0.5 * softmax(s_d, axis=0), abs=1e-12)

    def test_matches_two_pass_softmax_oracle(self, rng):
        for _ in range(50):
            r, c = int(rng.integers(1, 8)), int(rng.integers(1, 6))
            s_c = rng.normal(scale=3, size=(r, c))
            s_d = rng.normal(scale=3, size=(r, c))
            out = combine_scores(RegionScores(s_c, s_d))
            want = softmax(s_c, axis=1) * softmax(s_d, axis=0)
            assert out == pytest.approx(want, abs=1e-12)
            assert np.all(out >= 0) and np.all(out <= 1)

    def test_factor_normalizations(self, rng):
        s_c, s_d = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        assert softmax(s_c, axis=1).sum(axis=1) == pytest.approx(np.ones(4))
        assert softmax(s_d, axis=0).sum(axis=0) == pytest.approx(np.ones(3))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            RegionScores(np.zeros((2, 3)), np.zeros((3, 2)))


class TestMilImageScores:
    def test_single_row_identity(self):
        s = np.array([[0.2, 0.7]])
        assert mil_image_scores(s) == pytest.approx([0.2, 0.7])

    def test_zero_matrix(self):
        assert mil_image_scores(np.zeros((4, 3))) == pytest.approx(np.zeros(3))

    def test_column_sums(self):
        s = np.array([[0.1, 0.2], [0.3, 0.4]])
        assert mil_image_scores(s) == pytest.approx([0.4, 0.6])


class TestMilBceLoss:
    def test_perfect_fit_at_clamp(self):
        eps = 1e-6
        loss = mil_bce_loss([1.0, 0.0], [1, 0], eps=eps)
        assert loss == pytest.approx(-math.log(1 - eps), rel=1e-6)

    def test_single_class_half(self):
        assert mil_bce_loss([0.5], [1]) == pytest.approx(math.log(2), abs=1e-12)

    def test_uniform_half_is_label_independent(self):
        phi = [0.5, 0.5, 0.5]
        assert mil_bce_loss(phi, [1, 0, 1]) == pytest.approx(math.log(2))
        assert mil_bce_loss(phi, [0, 1, 0]) == pytest.approx(math.log(2))

    def test_monotone_towards_label(self, rng):
        for _ in range(50):
            c = int(rng.integers(1, 6))
            q = (rng.random(c) < 0.5).astype(float)
            if not q.any():
                q[0] = 1.0
            phi = rng.random(c)
            k = int(rng.integers(c))
            better = phi.copy()
            better[k] = phi[k] + (1.0 - phi[k]) * 0.5 if q[k] else phi[k] * 0.5
            assert mil_bce_loss(better, q) <= mil_bce_loss(phi, q) + 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mil_bce_loss([0.5, 0.5], [1])


class TestTopFractionCount:
    @pytest.mark.parametrize("n,want", [(1, 1), (2, 1), (6, 1), (7, 2), (10, 2), (20, 3), (40, 6)])
    def test_exact_integer_arithmetic(self, n, want):
        assert top_fraction_count(n) == want
        assert top_fraction_count(n) == max(1, math.ceil(3 * n / 20))


class TestGeneratePseudoBoxes:
    def test_single_region_kept(self):
        out = generate_pseudo_boxes([BBox(0, 0, 10, 10)], {2: [0.7]})
        assert len(out) == 1 and out[0].class_id == 2

    def test_duplicate_suppressed(self):
        # R=20: top-15% keeps 3 candidates; the duplicate of the leader dies
        regions = [BBox(0, 0, 10, 10), BBox(0, 0, 10, 10)] + [
            BBox(100 + 20 * k, 0, 110 + 20 * k, 10) for k in range(18)
        ]
        scores = [1.0, 0.99] + [0.5 - 0.01 * k for k in range(18)]
        out = generate_pseudo_boxes(regions, {0: scores})
        kept_boxes = [g.box for g in out]
        assert len(kept_boxes) == 2  # leader + best disjoint runner-up
        assert kept_boxes[0] == regions[0]

    def test_ten_disjoint_keep_two(self):
        regions = [BBox(20 * k, 0, 20 * k + 10, 10) for k in range(10)]
        scores = [1.0 - 0.05 * k for k in range(10)]
        out = generate_pseudo_boxes(regions, {1: scores})
        assert [g.box for g in out] == [regions[0], regions[1]]

    def test_kept_boxes_pairwise_below_threshold(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 40))
            regions = [random_box(rng, span=60) for _ in range(n)]
            scores = {0: rng.random(n).tolist()}
            out = generate_pseudo_boxes(regions, scores)
            for i in range(len(out)):
                for j in range(i + 1, len(out)):
                    assert iou(out[i].box, out[j].box) < 0.3

    def test_matches_bruteforce(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 40))
            regions = [random_box(rng, span=60) for _ in range(n)]
            classes = rng.choice(5, size=int(rng.integers(1, 4)), replace=False)
            scores = {int(c): rng.random(n).tolist() for c in classes}
            got = [(g.class_id, regions.index(g.box)) for g in generate_pseudo_boxes(regions, scores)]
            # regions.index is safe: random boxes are distinct
            assert got == oracle_pseudo_boxes(regions, scores)

    def test_score_length_mismatch(self):
        with pytest.raises(ValueError):
            generate_pseudo_boxes([BBox(0, 0, 1, 1)], {0: [0.1, 0.2]})


def _proposals_from_boxes(boxes, scores):
    return [Proposal(b, s) for b, s in zip(boxes, scores)]


class TestDifficultyAwareSampling:
    def _make_instance(self, rng, n_pos, n_neg, n_gt=2, heads=2, n_classes=4):
        gt = [GroundTruthBox(BBox(200 * k, 0, 200 * k + 100, 100), k % n_classes) for k in range(n_gt)]
        proposals = []
        for k in range(n_pos):
            g = gt[k % n_gt].box  # near-identical: IoU well above 0.5
            proposals.append(BBox(g.x_min + 1, g.y_min + 1, g.x_max + 1, g.y_max + 1))
        for k in range(n_neg):
            proposals.append(BBox(5000 + 20 * k, 0, 5010 + 20 * k, 10))
        scores = [rng.normal(size=(heads, n_classes + 1)) for _ in proposals]
        return _proposals_from_boxes(proposals, scores), gt

    def test_exact_supply_takes_all(self, rng):
        proposals, gt = self._make_instance(rng, 128, 384)
        out = sample_difficulty_aware(proposals, gt, 0)
        assert (out.n_positives, out.n_negatives) == (128, 384)
        assert out.shortfall == 0

    def test_zero_positives_fills_with_negatives(self, rng):
        proposals, gt = self._make_instance(rng, 0, 600)
        out = sample_difficulty_aware(proposals, gt, 0)
        assert out.n_positives == 0
        assert out.n_negatives == 512
        assert out.shortfall == 0

    def test_negative_shortfall_flagged(self, rng):
        proposals, gt = self._make_instance(rng, 10, 50)
        out = sample_difficulty_aware(proposals, gt, 0)
        assert (out.n_positives, out.n_negatives) == (10, 50)
        assert out.shortfall == 512 - 60

    def test_hardest_negatives_win(self):
        gt = [GroundTruthBox(BBox(0, 0, 100, 100), 0)]
        boxes = [BBox(1000 + 30 * k, 0, 1010 + 30 * k, 10) for k in range(3)]
        # averaged-softmax object scores approximately 0.9 / 0.5 / 0.1
        def scores_for(target):
            logits = np.zeros(3)
            logits[0] = math.log(target / (1 - target) * 2)
            return [logits]

        proposals = [Proposal(b, scores_for(t)) for b, t in zip(boxes, (0.9, 0.5, 0.1))]
        out = sample_difficulty_aware(proposals, gt, 0, total=2, positive_quota=0)
        assert out.negative_indices == [0, 1]

    def test_band_proposals_never_sampled(self, rng):
        gt = [GroundTruthBox(BBox(0, 0, 100, 100), 0)]
        proposals = []
        for _ in range(300):
            box = random_box(rng, span=150)
            proposals.append(Proposal(box, rng.normal(size=(2, 4))))
        out = sample_difficulty_aware(proposals, gt, 0)
        for k in out.positive_indices:
            assert iou(proposals[k].box, gt[0].box) > 0.5
        for k in out.negative_indices:
            assert iou(proposals[k].box, gt[0].box) <= 0.3
        sampled = set(out.positive_indices) | set(out.negative_indices)
        for k in range(300):
            band = 0.3 < iou(proposals[k].box, gt[0].box) <= 0.5
            if band:
                assert k not in sampled

    def test_matches_reference(self, rng):
        for trial in range(60):
            n = int(rng.integers(1, 700))
            n_gt = int(rng.integers(0, 4))
            gt = [GroundTruthBox(random_box(rng, span=100), int(rng.integers(3))) for _ in range(n_gt)]
            proposals = [
                Proposal(random_box(rng, span=140), rng.normal(size=(2, 4)))
                for _ in range(n)
            ]
            got = sample_difficulty_aware(proposals, gt, seed := trial)
            want_pos, want_neg = oracle_difficulty_sample(proposals, gt, seed)
            assert got.positive_indices == want_pos
            assert got.negative_indices == want_neg

    def test_missing_scores_rejected(self):
        with pytest.raises(ValueError, match="head scores"):
            sample_difficulty_aware([Proposal(BBox(0, 0, 1, 1))], [], 0)

    def test_oversupplied_positives_uniform_subsample(self, rng):
        proposals, gt = self._make_instance(rng, 200, 400)
        out = sample_difficulty_aware(proposals, gt, 7)
        assert out.n_positives == 128
        assert out.positive_indices == sorted(out.positive_indices)
        out2 = sample_difficulty_aware(proposals, gt, 7)
        assert out.positive_indices == out2.positive_indices  # seeded
