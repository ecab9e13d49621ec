"""Named, seeded scenario suites used for comparative evaluation.

Every suite is a list of :class:`ScenarioConfig` objects; seeds are
``0..n-1`` so results are reproducible.
"""
from __future__ import annotations

import numpy as np

from .config import ScenarioConfig
from .harness import present_centers, run_scenario
from .metrics import center_match

# Dense, slow traffic with many trucks: plenty of cells hidden from any single drone.
OCCLUSION = {"scene__n_instances": 40, "scene__truck_fraction": 0.5,
             "scene__speed_range": (0.0, 2.5)}
# Every object at least 1.5 m tall, with noisy per-pixel heights.
NOISY_HEIGHTS = {"scene__car_height": (1.5, 1.8), "gbg__height_noise": 0.3}

SUITES = ("standard", "occlusion", "noisy-heights")


def suite(name="standard", n=20, **overrides):
    """Configs for seeds ``0..n-1`` of a named suite, with extra ``section__field`` overrides."""
    base = {"standard": {}, "occlusion": OCCLUSION, "noisy-heights": NOISY_HEIGHTS}
    if name not in base:
        raise ValueError(f"unknown suite {name!r}; expected one of {SUITES}")
    fields = {**base[name], **overrides}
    return [ScenarioConfig(seed=s).replace(**fields) for s in range(n)]


def mean_metric(configs, metric="iou", **overrides):
    """Mean of one report field across full scenario runs."""
    values = [getattr(run_scenario(c.replace(**overrides) if overrides else c).metrics, metric)
              for c in configs]
    return float(np.nanmean(values))


def localisation(configs, **overrides):
    """Pooled ``(deviation, recall, precision)`` of per-drone present-frame centres."""
    distances, n_pred, n_gt = [], 0, 0
    for c in configs:
        cfg = c.replace(**overrides) if overrides else c
        for pred, gt in present_centers(cfg):
            m = center_match(pred, gt, cfg.metrics.center_gate)
            distances += m.distances
            n_pred += m.n_pred
            n_gt += m.n_gt
    dev = float(np.mean(distances)) if distances else float("nan")
    recall = len(distances) / n_gt if n_gt else 1.0
    precision = len(distances) / n_pred if n_pred else 1.0
    return dev, recall, precision
