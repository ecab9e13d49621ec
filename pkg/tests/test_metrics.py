import itertools
import json
import math

import numpy as np
import pytest

from skyfleet.metrics import (MetricsReport, center_match, gated_assignment, hungarian,
                              iou_sequence, objective, smooth_l1, vpq)


def brute_min_cost(cost):
    n, m = cost.shape
    if n <= m:
        return min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(m), n))
    return brute_min_cost(cost.T)


def masks(*cells, shape=(4, 4)):
    out = np.zeros(shape, bool)
    for c in cells:
        out[c] = True
    return out


class TestIoU:
    def test_identical_masks(self):
        m = masks((0, 0), (1, 2))
        assert iou_sequence([m], [m]) == 1.0

    def test_disjoint_masks(self):
        assert iou_sequence([masks((0, 0))], [masks((1, 1))]) == 0.0

    def test_two_frame_mean(self):
        # 1/3 then 1/2
        f1 = (masks((0, 0), (0, 1)), masks((0, 1), (0, 2)))
        f2 = (masks((0, 0)), masks((0, 0), (0, 1)))
        got = iou_sequence([f1[0], f2[0]], [f1[1], f2[1]])
        assert got == pytest.approx(5 / 12, abs=1e-12)

    def test_empty_union_counts_as_one(self):
        e = masks()
        assert iou_sequence([e, masks((0, 0))], [e, masks((0, 0), (1, 1))]) == 0.75

    def test_shape_and_length_checks(self):
        with pytest.raises(ValueError):
            iou_sequence([masks()], [np.zeros((3, 3), bool)])
        with pytest.raises(ValueError):
            iou_sequence([], [])


class TestHungarian:
    def test_identity(self):
        res = hungarian(1 - np.eye(4))
        assert res.matches == [(0, 0), (1, 1), (2, 2), (3, 3)]
        assert res.total_cost == 0.0

    def test_single_entry(self):
        res = hungarian([[3.5]])
        assert res.matches == [(0, 0)] and res.total_cost == 3.5

    def test_rectangular_reports_unmatched(self):
        res = hungarian(np.array([[5.0, 1.0, 9.0], [1.0, 5.0, 9.0]]))
        assert res.matches == [(0, 1), (1, 0)]
        assert res.unmatched_cols == [2] and res.unmatched_rows == []

    def test_empty(self):
        res = hungarian(np.zeros((0, 3)))
        assert res.matches == [] and res.unmatched_cols == [0, 1, 2]

    def test_matches_permutation_oracle(self, rng):
        for _ in range(60):
            n, m = rng.integers(1, 7, 2)
            cost = rng.integers(0, 20, (n, m)).astype(float)
            res = hungarian(cost)
            assert res.total_cost == brute_min_cost(cost)
            assert len(res.matches) == min(n, m)
            assert len({i for i, _ in res.matches}) == len({j for _, j in res.matches}) == min(n, m)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            hungarian([[1.0, math.inf]])

    def test_gate_prefers_more_pairs(self):
        cost = np.array([[1.0, 2.0], [1.5, 10.0]])
        # the cheap pair (0,0) would leave row 1 with only the forbidden 10
        assert sorted(gated_assignment(cost, 3.0)) == [(0, 1), (1, 0)]


class TestVPQ:
    def test_one_true_positive_and_one_false_positive(self):
        gt = np.zeros((4, 4), int)
        gt[0, 0:2] = 1
        pred = gt.copy()
        pred[3, 3] = 2
        assert vpq([pred], [gt]) == pytest.approx(2 / 3, abs=1e-12)

    def test_id_swap_turns_matches_into_false_positives(self):
        gt = np.zeros((4, 4), int)
        gt[0, 0:2], gt[3, 2:4] = 1, 2
        stable = vpq([gt, gt], [gt, gt])
        swapped = np.where(gt == 1, 2, np.where(gt == 2, 1, 0))
        got = vpq([gt, swapped], [gt, gt])
        assert stable == 1.0
        # frame 2: two FPs and two FNs, so 0 / (0 + 1 + 1)
        assert got == pytest.approx(0.5)
        assert got < stable

    def test_iou_gate_is_strict(self):
        gt = np.zeros((1, 4), int)
        gt[0, :2] = 1
        pred = np.zeros((1, 4), int)
        pred[0, 1:3] = 5  # IoU 1/3
        assert vpq([pred], [gt]) == 0.0

    def test_empty_frames_score_one(self):
        z = np.zeros((3, 3), int)
        assert vpq([z], [z]) == 1.0


class TestCenterMatch:
    def test_single_pair(self):
        p, r, d = center_match([[0.5, 0.0]], [[0.0, 0.0]], gate=4.0)
        assert (p, r) == (1.0, 1.0) and d == pytest.approx(0.5, abs=1e-12)

    def test_extra_prediction(self):
        res = center_match([[1.0, 0.0], [20.0, 0.0]], [[0.0, 0.0]], gate=4.0)
        assert (res.precision, res.recall) == (0.5, 1.0)
        assert res.deviation == 1.0

    def test_outside_gate_is_unmatched(self):
        res = center_match([[5.0, 0.0]], [[0.0, 0.0]], gate=4.0)
        assert res.recall == 0.0 and math.isnan(res.deviation)

    def test_empty_sets(self):
        assert tuple(center_match([], [])) == (1.0, 1.0, 0.0)
        assert tuple(center_match([], [[0, 0]]))[:2] == (0.0, 0.0)

    def test_gate_must_be_positive(self):
        with pytest.raises(ValueError):
            center_match([[0, 0]], [[0, 0]], gate=0.0)

    def test_rates_monotone_in_gate(self, rng):
        for _ in range(20):
            pred = rng.uniform(0, 10, (6, 2))
            gt = rng.uniform(0, 10, (5, 2))
            prev = (0.0, 0.0)
            for gate in np.linspace(0.1, 15, 30):
                res = center_match(pred, gt, gate)
                assert res.precision >= prev[0] and res.recall >= prev[1]
                prev = (res.precision, res.recall)


class TestObjective:
    def test_uniform_logits_give_log_two(self):
        seg = np.zeros((1, 3, 3, 2))
        gt = np.zeros((1, 3, 3), int)
        flow = np.zeros((1, 3, 3, 2))
        assert objective(seg, gt, flow, flow) == pytest.approx(math.log(2), abs=1e-12)

    def test_constant_flow_error(self):
        seg = np.zeros((1, 2, 2, 2))
        seg[..., 0] = 1.0
        gt = np.zeros((1, 2, 2), int)
        flow = np.zeros((1, 2, 2, 2))
        value = objective(seg, gt, flow + 0.5, flow, lambda1=0.0, probabilities=True)
        assert value == pytest.approx(0.125, abs=1e-12)

    def test_discount_over_frames(self):
        seg = np.zeros((2, 1, 1, 2))
        gt = np.zeros((2, 1, 1), int)
        flow = np.zeros((2, 1, 1, 2))
        expected = (math.log(2) + 0.95 * math.log(2)) / 2
        assert objective(seg, gt, flow, flow) == pytest.approx(expected, abs=1e-12)

    def test_smooth_l1_branches(self):
        np.testing.assert_allclose(smooth_l1(np.array([0.5, -2.0])), [0.125, 1.5])

    def test_shape_errors(self):
        with pytest.raises(ValueError):
            objective(np.zeros((1, 2, 2, 2)), np.zeros((1, 3, 3), int), np.zeros((1, 2, 2, 2)),
                      np.zeros((1, 2, 2, 2)))


def test_report_serialises_nan_as_null():
    rep = MetricsReport([0.5], 0.5, 0.25, 1.0, 0.5, math.nan, 1.2)
    doc = json.loads(rep.to_json())
    assert doc["deviation"] is None and doc["schema_version"] == 1
    assert rep.csv_row().split(",")[4] == ""
