"""Evaluation metrics: sequence IoU, assignment, VPQ, centre matching, objective."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._validation import check_same_shape

SCHEMA_VERSION = 1


@dataclass
class AssignmentResult:
    matches: list  # [(row, col), ...] sorted by row
    total_cost: float
    unmatched_rows: list
    unmatched_cols: list


def hungarian(cost) -> AssignmentResult:
    """Minimum-cost assignment of ``min(n, m)`` pairs for a finite cost matrix."""
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost entries must be finite")
    n, m = cost.shape
    if n == 0 or m == 0:
        return AssignmentResult([], 0.0, list(range(n)), list(range(m)))
    rows, cols = linear_sum_assignment(cost)
    matches = [(int(i), int(j)) for i, j in zip(rows, cols)]
    total = float(sum(cost[i, j] for i, j in matches))
    rows = {i for i, _ in matches}
    cols = {j for _, j in matches}
    return AssignmentResult(matches, total, [i for i in range(n) if i not in rows],
                            [j for j in range(m) if j not in cols])


def gated_assignment(cost, gate):
    """Maximum number of pairs with ``cost <= gate``, then minimum total cost.

    Forbidden entries are replaced by a cost larger than any feasible sum of
    allowed ones, so the solver never trades an allowed pair for them.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.size == 0:
        return []
    allowed = cost <= gate
    big = (float(gate) + 1.0) * (min(cost.shape) + 1)
    res = hungarian(np.where(allowed, cost, big))
    return [(i, j) for i, j in res.matches if allowed[i, j]]


def _frame_iou(pred, gt):
    inter = np.count_nonzero(pred & gt)
    union = np.count_nonzero(pred | gt)
    return 1.0 if union == 0 else inter / union


def iou_sequence(pred, gt) -> float:
    """Mean per-frame IoU; frames where both masks are empty score 1."""
    pred = [np.asarray(p, dtype=bool) for p in pred]
    gt = [np.asarray(g, dtype=bool) for g in gt]
    if len(pred) != len(gt) or not pred:
        raise ValueError("need equal, non-zero numbers of predicted and true frames")
    for p, g in zip(pred, gt):
        check_same_shape(p, g, ("prediction", "ground truth"))
    return float(np.mean([_frame_iou(p, g) for p, g in zip(pred, gt)]))


def _instance_ious(pred, gt):
    pids = np.unique(pred[pred > 0])
    gids = np.unique(gt[gt > 0])
    if pids.size == 0 or gids.size == 0:
        return pids, gids, np.zeros((pids.size, gids.size))
    # joint histogram of (pred id, gt id) over all cells
    pi = np.searchsorted(pids, pred.ravel())
    gi = np.searchsorted(gids, gt.ravel())
    p_ok = pred.ravel() > 0
    g_ok = gt.ravel() > 0
    both = p_ok & g_ok
    inter = np.zeros((pids.size, gids.size))
    np.add.at(inter, (pi[both], gi[both]), 1)
    area_p = np.bincount(pi[p_ok], minlength=pids.size).astype(float)
    area_g = np.bincount(gi[g_ok], minlength=gids.size).astype(float)
    union = area_p[:, None] + area_g[None, :] - inter
    return pids, gids, inter / union


def vpq(pred_instances, gt_instances, iou_gate=0.5) -> float:
    """Video panoptic quality over a sequence of instance-id maps.

    A prediction is a true positive when it overlaps a true instance with
    IoU above ``iou_gate`` and its id was last associated with that same
    true instance (or never associated before).  Each frame scores
    ``sum(TP IoU) / (TP + FP/2 + FN/2)`` (1 for an empty frame) and the
    result is the mean over frames.
    """
    pred_instances = [np.asarray(p) for p in pred_instances]
    gt_instances = [np.asarray(g) for g in gt_instances]
    if len(pred_instances) != len(gt_instances) or not pred_instances:
        raise ValueError("need equal, non-zero numbers of predicted and true frames")
    history = {}
    scores = []
    for pred, gt in zip(pred_instances, gt_instances):
        check_same_shape(pred, gt, ("prediction", "ground truth"))
        pids, gids, ious = _instance_ious(pred, gt)
        tp_iou, tp = 0.0, 0
        matched = []
        # IoU > 0.5 makes every match unique in both directions
        for a, b in zip(*np.nonzero(ious > iou_gate)):
            matched.append((int(pids[a]), int(gids[b]), float(ious[a, b])))
        for pid, gid, iou in matched:
            prev = history.get(pid)
            if prev is None or prev == gid:
                tp += 1
                tp_iou += iou
            history[pid] = gid
        fp = pids.size - tp
        fn = gids.size - tp
        denom = tp + 0.5 * fp + 0.5 * fn
        scores.append(1.0 if denom == 0 else tp_iou / denom)
    return float(np.mean(scores))


@dataclass
class CenterMatch:
    precision: float
    recall: float
    deviation: float  # mean L2 of matched pairs, NaN when nothing matched
    distances: list
    n_pred: int
    n_gt: int

    def __iter__(self):
        return iter((self.precision, self.recall, self.deviation))


def center_match(pred_centers, gt_centers, gate=4.0) -> CenterMatch:
    """Match centres by minimum total L2 distance with pairs beyond ``gate`` forbidden.

    Unpacks as ``(precision, recall, deviation)``.  Two empty sets give
    ``(1, 1, 0)``; a one-sided empty set gives zero precision and recall.
    """
    if gate <= 0:
        raise ValueError("gate must be positive")
    pred = np.asarray(pred_centers, dtype=float).reshape(-1, 2)
    gt = np.asarray(gt_centers, dtype=float).reshape(-1, 2)
    if len(pred) == 0 and len(gt) == 0:
        return CenterMatch(1.0, 1.0, 0.0, [], 0, 0)
    if len(pred) == 0 or len(gt) == 0:
        return CenterMatch(0.0, 0.0, math.nan, [], len(pred), len(gt))
    dist = np.linalg.norm(pred[:, None, :] - gt[None, :, :], axis=-1)
    pairs = gated_assignment(dist, gate)
    d = [float(dist[i, j]) for i, j in pairs]
    return CenterMatch(len(pairs) / len(pred), len(pairs) / len(gt),
                       float(np.mean(d)) if d else math.nan, d, len(pred), len(gt))


def smooth_l1(x, beta=1.0):
    ax = np.abs(x)
    return np.where(ax < beta, 0.5 * ax * ax / beta, ax - 0.5 * beta)


def objective(pred_seg, gt_seg, pred_flow, gt_flow, gamma=0.95, lambda1=1.0, lambda2=1.0,
              probabilities=False) -> float:
    """Discounted segmentation cross-entropy plus smooth-L1 flow loss.

    ``pred_seg`` is ``(T, X, Y, K)`` logits (or probabilities when
    ``probabilities`` is set), ``gt_seg`` the ``(T, X, Y)`` class map,
    flows are ``(T, X, Y, 2)``.  Returns
    ``(1/T) * sum_t gamma**t * (lambda1 * CE_t + lambda2 * smoothL1_t)``
    with both terms averaged over elements.
    """
    pred_seg = np.asarray(pred_seg, dtype=float)
    gt_seg = np.asarray(gt_seg, dtype=np.int64)
    pred_flow = np.asarray(pred_flow, dtype=float)
    gt_flow = np.asarray(gt_flow, dtype=float)
    if pred_seg.shape[:-1] != gt_seg.shape:
        raise ValueError("segmentation shapes disagree")
    check_same_shape(pred_flow, gt_flow, ("predicted flow", "true flow"))
    if pred_flow.shape[0] != gt_seg.shape[0]:
        raise ValueError("segmentation and flow horizons disagree")
    with np.errstate(divide="ignore"):
        if probabilities:
            logp = np.log(pred_seg)
        else:
            shifted = pred_seg - pred_seg.max(axis=-1, keepdims=True)
            logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(logp, gt_seg[..., None], axis=-1)[..., 0]
    horizon = gt_seg.shape[0]
    total = 0.0
    for t in range(horizon):
        ce = float(-picked[t].mean())
        fl = float(smooth_l1(pred_flow[t] - gt_flow[t]).mean())
        total += gamma ** t * (lambda1 * ce + lambda2 * fl)
    return total / horizon


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


@dataclass
class MetricsReport:
    iou_per_frame: list
    iou: float
    vpq: float
    precision: float
    recall: float
    deviation: float
    loss: float
    grid: str = "long"
    ledger: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self):
        return {k: (_clean(v) if not isinstance(v, list) else [_clean(x) for x in v])
                for k, v in asdict(self).items()}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    CSV_FIELDS = ("iou", "vpq", "precision", "recall", "deviation", "loss")

    def csv_row(self):
        return ",".join("" if _clean(getattr(self, f)) is None else repr(float(getattr(self, f)))
                        for f in self.CSV_FIELDS)
