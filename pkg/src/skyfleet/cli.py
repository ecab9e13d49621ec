"""Command-line front end.

    skyfleet generate --config C --out scene.json
    skyfleet run      --config C --out DIR
    skyfleet compare  --config C --mode none,sisw,early [--seeds N] [--out table.csv]
    skyfleet dump     RUN --what bev|mask|info-volume --frame F --drone D --out img.pgm

Exit status is 0 on success, 1 when the input is invalid and 2 when a run
fails for any other reason.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .config import COLLAB_MODES, ScenarioConfig
from .exceptions import ConfigurationError, DomainError
from .harness import run_scenario, tool_header
from .scene import generate_scene
from .wire import read_container, to_pgm, write_container, write_replay

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
DUMP_KINDS = ("bev", "mask", "info-volume")
REPORT_NAME, CSV_NAME, RUN_NAME, REPLAY_NAME = "report.json", "report.csv", "run.skr", "replay.skp"


class UsageError(ConfigurationError):
    """Bad command-line usage."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _overrides(args):
    out = {}
    if getattr(args, "mode", None) and args.command != "compare":
        out["collaboration__mode"] = args.mode
    if getattr(args, "ratio", None) is not None:
        out["sisw__ratio"] = args.ratio
    if getattr(args, "window", None) is not None:
        out["sisw__window"] = args.window
    if getattr(args, "budget_bytes", None) is not None:
        out["collaboration__budget_bytes"] = args.budget_bytes
    if getattr(args, "grid", None):
        out["grid__name"] = args.grid
    if getattr(args, "seed_override", None) is not None:
        out["seed"] = args.seed_override
    return out


def load_config(args) -> ScenarioConfig:
    try:
        config = ScenarioConfig.load(args.config)
    except OSError as exc:
        raise UsageError(f"cannot read config {args.config!r}: {exc.strerror}") from None
    fields = _overrides(args)
    return config.replace(**fields) if fields else config


def _say(args, text):
    if not args.quiet:
        print(text)


def _csv_header(header):
    return f"# {header['tool']} {header['version']} config {header['config_hash']}\n"


# -- commands -------------------------------------------------------------
def cmd_generate(args):
    config = load_config(args)
    scene = generate_scene(config.seed, config.scene_params())
    doc = {"header": tool_header(config.config_hash()), "scene": scene.to_dict()}
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    _say(args, f"wrote scene with {len(scene.tracks)} instances and {len(scene.drones)} drones "
               f"to {args.out}")
    return EXIT_OK


def run_arrays(run):
    """Per-frame, per-drone grids stored in a run file."""
    frames = run.frames
    n = len(run.scene.drones)
    bev = np.stack([[np.linalg.norm(v, axis=-1) for v in f.fused] for f in frames])
    occ = np.stack([np.stack(f.occupancy) for f in frames])
    info = np.stack([np.stack(f.info) for f in frames])
    shape = occ.shape[2:]
    masks = np.zeros((len(frames), n, n) + shape, dtype=np.uint8)
    for t, f in enumerate(frames):
        for (j, k), m in f.masks.items():
            masks[t, j, k] = m
    return {
        "bev": bev.astype(np.float32),
        "occupancy": occ.astype(np.uint8),
        "info_volume": info.astype(np.float32),
        "masks": masks,
        "forecast": np.stack([fc.segmentation for fc in run.forecasts]).astype(np.uint8),
        "forecast_ids": np.stack([fc.instance_ids for fc in run.forecasts]).astype(np.int32),
        "gt_occupancy": np.stack(run.ground_truth["occupancy"]).astype(np.uint8),
        "ledger": np.array([[r[0], r[1], r[2], r[4], r[5], r[6]] for r in run.ledger.rows()],
                           dtype=np.int64).reshape(-1, 6),
    }


def cmd_run(args):
    config = load_config(args)
    run = run_scenario(config)
    header = tool_header(run.config_hash)
    os.makedirs(args.out, exist_ok=True)
    report = run.metrics
    meta = {**header, "config": config.to_dict(), "metrics": report.to_dict(),
            "ledger_kinds": [e.kind for e in run.ledger.entries],
            "ledger_columns": ["frame", "sender", "receiver", "cells", "bytes", "truncated"]}
    write_container(os.path.join(args.out, RUN_NAME), meta, run_arrays(run))
    with open(os.path.join(args.out, REPORT_NAME), "w", encoding="utf-8") as fh:
        fh.write(json.dumps({**header, "report": report.to_dict()}, sort_keys=True, indent=2)
                 + "\n")
    with open(os.path.join(args.out, CSV_NAME), "w", encoding="utf-8") as fh:
        fh.write(_csv_header(header) + "mode," + ",".join(report.CSV_FIELDS) + "\n")
        fh.write(f"{config.collaboration.mode},{report.csv_row()}\n")
    write_replay(os.path.join(args.out, REPLAY_NAME), run.packets, run.config_hash)
    sent = run.ledger.total_bytes()
    _say(args, f"iou={report.iou:.4f} vpq={report.vpq:.4f} deviation={report.deviation:.3f} m "
               f"bytes={sent}")
    return EXIT_OK


def _parse_modes(raw):
    modes = [m.strip() for part in (raw or ["none", "sisw", "early"]) for m in part.split(",")
             if m.strip()]
    bad = [m for m in modes if m not in COLLAB_MODES]
    if bad:
        raise UsageError(f"unknown mode {bad[0]!r}; valid modes are {', '.join(COLLAB_MODES)}")
    return modes


COMPARE_FIELDS = ("iou", "vpq", "precision", "recall", "deviation")


def compare(config, modes, seeds=1):
    """Mean metrics per mode over seeds ``config.seed .. config.seed + seeds - 1``."""
    rows = []
    for mode in modes:
        reports = []
        for s in range(seeds):
            cfg = config.replace(seed=config.seed + s, collaboration__mode=mode)
            if mode == "early" and cfg.collaboration.budget_bytes is not None:
                cfg = cfg.replace(collaboration__budget_bytes=None)
            reports.append(run_scenario(cfg).metrics)
        vals = {f: float(np.nanmean([getattr(r, f) for r in reports])) for f in COMPARE_FIELDS}
        rows.append((mode, vals))
    return rows


def cmd_compare(args):
    config = load_config(args)
    modes = _parse_modes(args.mode)
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    rows = compare(config, modes, args.seeds)
    header = tool_header(config.config_hash())
    lines = ["mode," + ",".join(COMPARE_FIELDS)]
    lines += [mode + "," + ",".join(repr(v[f]) for f in COMPARE_FIELDS) for mode, v in rows]
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(_csv_header(header) + "\n".join(lines) + "\n")
    if not args.quiet:
        print(f"{'mode':<8}" + "".join(f"{f:>11}" for f in COMPARE_FIELDS))
        for mode, v in rows:
            print(f"{mode:<8}" + "".join(f"{v[f]:>11.4f}" for f in COMPARE_FIELDS))
    return EXIT_OK


def dump_grid(run_path, what, frame, drone, peer=None):
    """The 2-D grid ``cmd_dump`` renders, plus the run header."""
    if what not in DUMP_KINDS:
        raise UsageError(f"unknown dump {what!r}; expected one of {', '.join(DUMP_KINDS)}")
    header, arrays = read_container(run_path)
    n_frames, n_drones = arrays["occupancy"].shape[:2]
    if not 0 <= frame < n_frames:
        raise UsageError(f"frame {frame} out of range 0..{n_frames - 1}")
    if not 0 <= drone < n_drones:
        raise UsageError(f"drone {drone} out of range 0..{n_drones - 1}")
    if what == "bev":
        return header, arrays["bev"][frame, drone]
    if what == "info-volume":
        return header, arrays["info_volume"][frame, drone]
    if peer is None:
        peer = (drone + 1) % n_drones
    if not 0 <= peer < n_drones or peer == drone:
        raise UsageError(f"peer {peer} must be another drone in 0..{n_drones - 1}")
    return header, arrays["masks"][frame, drone, peer].astype(bool)


def cmd_dump(args):
    header, grid = dump_grid(args.run, args.what, args.frame, args.drone, args.peer)
    if grid.dtype == bool:
        image = to_pgm(grid.astype(float), 0.0, 1.0, comment=_provenance(header))
    elif args.what == "info-volume":
        image = to_pgm(grid, 0.0, 1.0, comment=_provenance(header))
    else:
        image = to_pgm(grid, comment=_provenance(header))
    with open(args.out, "wb") as fh:
        fh.write(image)
    _say(args, f"wrote {grid.shape[0]}x{grid.shape[1]} {args.what} image to {args.out}")
    return EXIT_OK


def _provenance(header):
    return f"{header['tool']} {header['version']} config {header['config_hash']}"


# -- argument parsing -----------------------------------------------------
def build_parser():
    parser = _Parser(prog="skyfleet", description="Multi-drone BEV perception simulator.")
    parser.add_argument("--version", action="version", version=f"skyfleet {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def scenario(p, with_mode=True):
        p.add_argument("--config", required=True, help="scenario document (JSON)")
        p.add_argument("--seed-override", type=int, help="replace the document's seed")
        if with_mode:
            p.add_argument("--mode", choices=COLLAB_MODES, help="collaboration mode")
        p.add_argument("--ratio", type=float, help="transmission ratio")
        p.add_argument("--window", type=int, help="information-volume window size")
        p.add_argument("--budget-bytes", type=int, help="per-packet byte budget")
        p.add_argument("--grid", choices=("long", "short"), help="named BEV grid")
        p.add_argument("--quiet", action="store_true", help="suppress the summary line")

    p = sub.add_parser("generate", help="write the deterministic scene for a config")
    scenario(p)
    p.add_argument("--out", required=True, help="scene file to write")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="run one scenario and write report, CSV, run and replay files")
    scenario(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="compare collaboration modes on the same seeds")
    scenario(p, with_mode=False)
    p.add_argument("--mode", action="append",
                   help="modes to compare, comma separated or repeated (default none,sisw,early)")
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    p.add_argument("--out", help="CSV file for the table")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("dump", help="export a grid from a run file as a graymap")
    p.add_argument("run", help="run file written by 'skyfleet run'")
    p.add_argument("--what", required=True, choices=DUMP_KINDS)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--drone", type=int, default=0)
    p.add_argument("--peer", type=int, help="receiving drone for mask dumps (default: next drone)")
    p.add_argument("--out", required=True, help="graymap file to write")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_dump)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError("a command is required: generate, run, compare or dump")
        return args.func(args)
    except (ConfigurationError, DomainError) as exc:
        print(f"skyfleet: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # anything else is a failed run, not bad input
        print(f"skyfleet: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
