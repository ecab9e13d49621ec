"""Scenario orchestration: render, lift, exchange under a budget, fuse, forecast, score."""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .config import ScenarioConfig
from .decoder import ConstantVelocityDecoder, Forecast
from .exceptions import ConfigurationError
from .gbg import FrustumCandidates, GroundPriorBEV, splat, sum_pool_z
from .grid import pull_back
from .heights import OracleDepthEstimator, OracleHeightEstimator
from .metrics import MetricsReport, center_match, iou_sequence, objective, vpq
from .scene import (T_FUTURE, T_PAST, FeatureEmbedding, generate_scene, instance_center,
                    rasterize_gt_bev, render_view, visible_instances)
from .sisw import SparseInteraction, make_packet, select_topk
from .wire import HEADER_BYTES, max_cells_for_budget, packet_nbytes, roundtrip

PRESENT = T_PAST - 1
BROADCAST = -1


def thread_count():
    """Worker threads from ``SKYFLEET_THREADS`` (default 1)."""
    raw = os.environ.get("SKYFLEET_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"SKYFLEET_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigurationError("SKYFLEET_THREADS must be >= 1")
    return n


@dataclass(frozen=True)
class LedgerEntry:
    frame: int
    sender: int
    receiver: int  # BROADCAST for early-collaboration uploads
    kind: str  # "features", "info", "early" or "late"
    cells: int
    bytes: int
    truncated: int = 0


class TransmissionLedger:
    """Per-link, per-frame transmission log with a per-packet byte budget.

    The budget applies to feature packets.  Information-map broadcasts are
    logged under their own kind so they can be reported with or without
    the feature payload.
    """

    def __init__(self, budget=None):
        self.budget = budget
        self.entries: list[LedgerEntry] = []

    def record(self, entry: LedgerEntry):
        if self.budget is not None and entry.kind in ("features", "late") and entry.bytes > self.budget:
            raise ConfigurationError(
                f"{entry.kind} transmission {entry.sender}->{entry.receiver} at frame "
                f"{entry.frame} needs {entry.bytes} bytes, over the budget of {self.budget}")
        self.entries.append(entry)

    def __len__(self):
        return len(self.entries)

    def of_kind(self, kind):
        return [e for e in self.entries if e.kind == kind]

    def total_bytes(self, kinds=None):
        return sum(e.bytes for e in self.entries if kinds is None or e.kind in kinds)

    def summary(self):
        kinds = sorted({e.kind for e in self.entries})
        return {
            "budget_bytes": self.budget,
            "entries": len(self.entries),
            "total_bytes": self.total_bytes(),
            "total_cells": sum(e.cells for e in self.entries),
            "truncated_cells": sum(e.truncated for e in self.entries),
            "bytes_by_kind": {k: self.total_bytes({k}) for k in kinds},
            "max_entry_bytes": max((e.bytes for e in self.entries), default=0),
        }

    def rows(self):
        return [[e.frame, e.sender, e.receiver, e.kind, e.cells, e.bytes, e.truncated]
                for e in self.entries]


@dataclass(eq=False)
class FrameResult:
    frame: int
    views: list
    local: list  # per drone (X, Y, C)
    fused: list  # per drone (X, Y, C)
    occupancy: list  # per drone (X, Y) bool
    info: list  # per drone (X, Y) information map
    packets: list  # (receiver, SparsePacket)
    masks: dict  # (sender, receiver) -> (X, Y) bool top-K selection


@dataclass(eq=False)
class ScenarioRun:
    config: ScenarioConfig
    config_hash: str
    scene: object
    frames: list  # FrameResult for frames 0..T1-1
    forecasts: list  # per drone Forecast
    ground_truth: dict
    ledger: TransmissionLedger
    metrics: MetricsReport | None = None
    timing: dict = field(default_factory=dict)  # wall-clock seconds, never serialised

    @property
    def packets(self):
        return [rec for f in self.frames for rec in f.packets]


class Pipeline:
    """Per-scenario state shared by every frame step."""

    def __init__(self, config: ScenarioConfig, scene=None):
        self.config = config
        self.spec = config.grid.spec()
        self.scene = scene or generate_scene(config.seed, config.scene_params())
        self.drones = self.scene.drones
        self.embedding = FeatureEmbedding(channels=config.gbg.channels)
        self.channels = config.gbg.channels
        self.ledger = TransmissionLedger(config.collaboration.budget_bytes)
        w = config.sisw
        self.sisw = SparseInteraction(w.window, w.ratio, w.info_mode, w.infill_sigma,
                                      w.infill_radius, grid=self.spec)
        d = config.decoder
        self.decoder = ConstantVelocityDecoder(self.spec, d.threshold, d.match_gate, T_FUTURE,
                                               d.rule, embedding_norm=self.embedding.norm,
                                               min_cells=d.min_cells)
        self.bev = [GroundPriorBEV(self.spec, config.gbg.mode,
                                   OracleHeightEstimator(config.gbg.height_noise),
                                   OracleDepthEstimator(config.gbg.depth_mode),
                                   drone.bev_pose).fit(drone.camera)
                    for drone in self.drones]
        self.threads = thread_count()
        self._check_budget()

    def _check_budget(self):
        budget = self.config.collaboration.budget_bytes
        mode = self.config.collaboration.mode
        if budget is None:
            return
        if mode == "sisw" and budget < HEADER_BYTES:
            raise ConfigurationError(f"budget of {budget} bytes is below the "
                                     f"{HEADER_BYTES}-byte packet header")
        if mode == "late" and budget < self._late_bytes():
            raise ConfigurationError(f"late collaboration needs {self._late_bytes()} bytes per "
                                     f"link, over the budget of {budget}")

    def _late_bytes(self):
        return math.ceil(self.spec.n_cells / 8)

    def _map(self, fn, items):
        if self.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]

    def observe(self, frame):
        """Render and lift every drone; returns ``(views, candidates)``."""
        def one(k):
            view = render_view(self.drones[k].camera, self.scene.tracks, frame, self.embedding)
            return view, self.bev[k].lift(view)
        out = self._map(one, list(range(len(self.drones))))
        return [o[0] for o in out], [o[1] for o in out]

    def step_frame(self, frame) -> FrameResult:
        mode = self.config.collaboration.mode
        n = len(self.drones)
        views, cands = self.observe(frame)
        poses = [d.bev_pose for d in self.drones]
        local = [sum_pool_z(splat(c, self.spec, p)).values for c, p in zip(cands, poses)]
        info = [self.sisw.score(v) for v in local]
        packets, masks = [], {}
        fused = list(local)
        occupancy = None
        if mode == "early" and n > 1:
            joint = FrustumCandidates.concat(cands)
            fused = self._map(lambda p: sum_pool_z(splat(joint, self.spec, p)).values, poses)
            cells = self.spec.n_cells
            for j in range(n):
                self.ledger.record(LedgerEntry(frame, j, BROADCAST, "early", cells,
                                               cells * self.channels * 4))
        elif mode == "late" and n > 1:
            own = [self.decoder.occupancy(v) for v in local]
            occupancy = []
            for k in range(n):
                acc = own[k].copy()
                for j in range(n):
                    if j == k:
                        continue
                    pulled, _ = pull_back(own[j], self.spec, poses[k], self.spec, poses[j],
                                          fill=False)
                    acc |= pulled
                    self.ledger.record(LedgerEntry(frame, j, k, "late", self.spec.n_cells,
                                                   self._late_bytes()))
                occupancy.append(acc)
        elif mode == "sisw" and n > 1:
            fused, packets, masks = self._exchange(frame, local, info, poses)
        if occupancy is None:
            occupancy = [self.decoder.occupancy(v) for v in fused]
        return FrameResult(frame, views, local, fused, occupancy, info, packets, masks)

    def _exchange(self, frame, local, info, poses):
        n = len(local)
        cfg = self.config.sisw
        max_cells = max_cells_for_budget(self.config.collaboration.budget_bytes, self.channels)
        info_bytes = self.spec.n_cells * 4
        inbox = {k: [] for k in range(n)}
        records, masks = [], {}
        for j in range(n):
            for k in range(n):
                if j == k:
                    continue
                if cfg.count_info_maps:
                    self.ledger.record(LedgerEntry(frame, k, j, "info", self.spec.n_cells,
                                                   info_bytes))
                scores = self.sisw.scores_for(info[j], poses[j], info[k], poses[k])
                mask = select_topk(scores, cfg.ratio)
                packet = make_packet(j, frame, local[j], mask, poses[j], scores, max_cells)
                sent = np.zeros(mask.shape, dtype=bool)
                sent[packet.cell_indices[:, 0], packet.cell_indices[:, 1]] = True
                masks[(j, k)] = sent
                self.ledger.record(LedgerEntry(frame, j, k, "features", packet.cell_count,
                                               packet_nbytes(packet.cell_count, self.channels),
                                               packet.truncated))
                if cfg.wire_roundtrip:
                    packet = roundtrip(packet)
                records.append((k, packet))
                inbox[k].append(packet)
        # frame barrier: every packet of this frame exists before any fusion
        fused = []
        for k in range(n):
            got = sorted(inbox[k], key=lambda p: p.sender_id)
            assert all(p.frame == frame for p in got)
            fused.append(self.sisw.fuse(local[k], poses[k], got)[0])
        return fused, records, masks

    def forecast(self, frames):
        n = len(self.drones)
        return [self.decoder.predict_masks([f.occupancy[k] for f in frames]) for k in range(n)]

    def ground_truth(self, present_views):
        cfg = self.config.metrics
        visible = visible_instances(present_views, cfg.min_visible_pixels)
        tracks = self.scene.tracks
        gt = {"visible": sorted(visible), "occupancy": [], "instance_ids": [], "flow": [],
              "centers": []}
        for drone in self.drones:
            bevs = [rasterize_gt_bev(tracks, PRESENT + t, self.spec, drone.bev_pose, visible)
                    for t in range(1, T_FUTURE + 1)]
            gt["occupancy"].append(np.stack([b.occupancy for b in bevs]))
            gt["instance_ids"].append(np.stack([b.instance_ids for b in bevs]))
            gt["flow"].append(np.stack([b.flow for b in bevs]))
            centers = [instance_center(t, PRESENT, drone.bev_pose) for t in tracks
                       if t.id in visible]
            centers = [c for c in centers if self.spec.x_min <= c[0] < self.spec.x_max
                       and self.spec.y_min <= c[1] < self.spec.y_max]
            gt["centers"].append(np.array(centers).reshape(-1, 2))
        return gt


def evaluate(config: ScenarioConfig, forecasts, gt, ledger) -> MetricsReport:
    cfg = config.metrics
    n = len(forecasts)
    ious, per_frame, vpqs, losses = [], [], [], []
    matches = n_pred = n_gt = 0
    distances = []
    for k, fc in enumerate(forecasts):
        occ = gt["occupancy"][k]
        ious.append(iou_sequence(fc.segmentation, occ))
        per_frame.append([iou_sequence([fc.segmentation[t]], [occ[t]])
                          for t in range(len(occ))])
        vpqs.append(vpq(fc.instance_ids, gt["instance_ids"][k], cfg.iou_gate))
        p = np.clip(fc.segmentation.astype(float), 1e-6, 1 - 1e-6)
        probs = np.stack([1 - p, p], axis=-1)
        losses.append(objective(probs, occ.astype(np.int64), fc.flow, gt["flow"][k],
                                cfg.gamma, cfg.lambda1, cfg.lambda2, probabilities=True))
        cm = center_match(fc.centers, gt["centers"][k], cfg.center_gate)
        matches += len(cm.distances)
        distances += cm.distances
        n_pred += cm.n_pred
        n_gt += cm.n_gt
    precision = matches / n_pred if n_pred else (1.0 if n_gt == 0 else 0.0)
    recall = matches / n_gt if n_gt else (1.0 if n_pred == 0 else 0.0)
    deviation = float(np.mean(distances)) if distances else (0.0 if n_gt == n_pred == 0 else math.nan)
    return MetricsReport(
        iou_per_frame=[float(x) for x in np.mean(per_frame, axis=0)],
        iou=float(np.mean(ious)), vpq=float(np.mean(vpqs)), precision=float(precision),
        recall=float(recall), deviation=deviation, loss=float(np.mean(losses)),
        grid=config.grid.name, ledger=ledger.summary())


def run_scenario(config: ScenarioConfig) -> ScenarioRun:
    """Run every input frame, forecast, and score; a pure function of ``config``."""
    t0 = time.perf_counter()
    pipe = Pipeline(config)
    frames = [pipe.step_frame(t) for t in range(T_PAST)]
    t1 = time.perf_counter()
    forecasts = pipe.forecast(frames)
    gt = pipe.ground_truth(frames[PRESENT].views)
    report = evaluate(config, forecasts, gt, pipe.ledger)
    run = ScenarioRun(config, config.config_hash(), pipe.scene, frames, forecasts, gt,
                      pipe.ledger, report)
    run.timing = {"frames_s": t1 - t0, "total_s": time.perf_counter() - t0}
    return run


def present_centers(config: ScenarioConfig):
    """Per-drone localisation check at the present frame, without collaboration.

    Predicted centres come from each drone's own BEV; true centres are the
    instances that drone actually sees (inside its grid).  Returns a list of
    ``(pred_centers, gt_centers)`` per drone.
    """
    pipe = Pipeline(config)
    views, cands = pipe.observe(PRESENT)
    spec = pipe.spec
    out = []
    for k, drone in enumerate(pipe.drones):
        local = sum_pool_z(splat(cands[k], spec, drone.bev_pose)).values
        fc = pipe.decoder.predict_masks([pipe.decoder.occupancy(local)])
        seen = visible_instances([views[k]], config.metrics.min_visible_pixels)
        gt = [instance_center(t, PRESENT, drone.bev_pose) for t in pipe.scene.tracks
              if t.id in seen]
        gt = [c for c in gt if spec.x_min <= c[0] < spec.x_max and spec.y_min <= c[1] < spec.y_max]
        out.append((fc.centers, np.array(gt).reshape(-1, 2)))
    return out


def tool_header(config_hash):
    return {"tool": "skyfleet", "version": __version__, "config_hash": config_hash}
