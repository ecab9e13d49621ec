"""Binary formats: packet wire encoding, replay files, run containers, image dumps.

Everything is little-endian.  A packet is a 36-byte header
``<H I I H 3d`` (sender id, frame, cell count, channels, pose yaw/tx/ty)
followed by ``cell_count`` records of ``<H H`` indices and ``C`` float32
features.
"""
from __future__ import annotations

import io
import json
import struct

import numpy as np

from .grid import Pose2D
from .sisw import SparsePacket

HEADER = struct.Struct("<HIIH3d")
HEADER_BYTES = HEADER.size  # 36
INDEX_BYTES = 4

REPLAY_MAGIC = b"SKYREPL1"
RUN_MAGIC = b"SKYRUN01"


def packet_nbytes(cell_count, channels) -> int:
    return HEADER_BYTES + cell_count * (INDEX_BYTES + 4 * channels)


def max_cells_for_budget(budget, channels):
    """Largest cell count whose packet fits in ``budget`` bytes (None = unlimited)."""
    if budget is None:
        return None
    return max(0, (int(budget) - HEADER_BYTES) // (INDEX_BYTES + 4 * channels))


def _cell_dtype(channels):
    return np.dtype([("x", "<u2"), ("y", "<u2"), ("f", "<f4", (channels,))])


def encode_packet(packet: SparsePacket) -> bytes:
    c = packet.channels
    if packet.cell_count and (packet.cell_indices.max() > 0xFFFF or packet.cell_indices.min() < 0):
        raise ValueError("cell indices do not fit in 16 bits")
    head = HEADER.pack(packet.sender_id, packet.frame, packet.cell_count, c,
                       *packet.sender_pose.as_tuple())
    rec = np.zeros(packet.cell_count, dtype=_cell_dtype(c))
    rec["x"] = packet.cell_indices[:, 0]
    rec["y"] = packet.cell_indices[:, 1]
    rec["f"] = packet.features
    return head + rec.tobytes()


def decode_packet(data, offset=0):
    """Decode one packet starting at ``offset``; returns ``(packet, next_offset)``."""
    sender, frame, count, c, yaw, tx, ty = HEADER.unpack_from(data, offset)
    start = offset + HEADER_BYTES
    dt = _cell_dtype(c)
    end = start + count * dt.itemsize
    if end > len(data):
        raise ValueError("truncated packet")
    rec = np.frombuffer(data, dtype=dt, count=count, offset=start)
    idx = np.column_stack([rec["x"], rec["y"]]).astype(np.int64)
    feats = rec["f"].astype(np.float64).reshape(count, c)
    return SparsePacket(sender, frame, idx, feats, Pose2D(yaw, tx, ty)), end


def roundtrip(packet: SparsePacket) -> SparsePacket:
    """What the receiver sees after the packet crosses the wire (float32 features)."""
    out, _ = decode_packet(encode_packet(packet))
    out.truncated = packet.truncated
    return out


# -- replay files ---------------------------------------------------------
_RECORD = struct.Struct("<H")


def write_replay(path, records, config_hash=""):
    """Store ``(receiver_id, packet)`` records.

    Layout: magic, ``<I`` header length, JSON header, then per record a
    ``<H`` receiver id followed by the wire-encoded packet.
    """
    head = json.dumps({"config_hash": config_hash, "records": len(records)},
                      sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(REPLAY_MAGIC + struct.pack("<I", len(head)) + head)
        for receiver, packet in records:
            fh.write(_RECORD.pack(receiver) + encode_packet(packet))


def read_replay(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(REPLAY_MAGIC):
        raise ValueError(f"{path} is not a replay file")
    pos = len(REPLAY_MAGIC)
    (hlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    header = json.loads(data[pos:pos + hlen])
    pos += hlen
    records = []
    while pos < len(data):
        (receiver,) = _RECORD.unpack_from(data, pos)
        packet, pos = decode_packet(data, pos + _RECORD.size)
        records.append((receiver, packet))
    return header, records


# -- run containers -------------------------------------------------------
def write_container(path, header: dict, arrays: dict):
    """Deterministic array container: magic, JSON header, raw arrays in key order.

    Unlike zip-based formats nothing time-dependent is written, so equal
    inputs give byte-identical files.
    """
    names = sorted(arrays)
    index = []
    blobs = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(arrays[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob = arr.tobytes()
        index.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    meta = json.dumps({"header": header, "arrays": index}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(RUN_MAGIC + struct.pack("<Q", len(meta)) + meta)
        for blob in blobs:
            fh.write(blob)


def read_container(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(RUN_MAGIC):
        raise ValueError(f"{path} is not a run file")
    (mlen,) = struct.unpack_from("<Q", data, len(RUN_MAGIC))
    base = len(RUN_MAGIC) + 8
    meta = json.loads(data[base:base + mlen])
    base += mlen
    arrays = {}
    for item in meta["arrays"]:
        start = base + item["offset"]
        arr = np.frombuffer(data, dtype=np.dtype(item["dtype"]), count=int(np.prod(item["shape"])),
                            offset=start)
        arrays[item["name"]] = arr.reshape(item["shape"])
    return meta["header"], arrays


# -- image and raw grid dumps ---------------------------------------------
def to_pgm(grid, lo=None, hi=None, comment=None) -> bytes:
    """Binary 8-bit graymap of a 2-D grid; rows are x, columns y.

    Values are scaled linearly from ``[lo, hi]`` (data range by default) to
    ``[0, 255]``; a constant grid maps to black.  ``comment`` is written as
    a ``#`` line after the magic number.
    """
    g = np.asarray(grid, dtype=float)
    if g.ndim != 2:
        raise ValueError("graymap export needs a 2-D grid")
    lo = float(np.nanmin(g)) if lo is None else lo
    hi = float(np.nanmax(g)) if hi is None else hi
    if hi > lo:
        scaled = np.clip((g - lo) / (hi - lo), 0.0, 1.0)
    else:
        scaled = np.zeros_like(g)
    pix = np.rint(np.nan_to_num(scaled) * 255).astype(np.uint8)
    h, w = pix.shape
    note = "" if comment is None else "# " + " ".join(str(comment).split()) + "\n"
    return f"P5\n{note}{w} {h}\n255\n".encode() + pix.tobytes()


def read_pgm(data):
    """Pixels of a graymap written by :func:`to_pgm` (comment lines skipped)."""
    buf = io.BytesIO(data)
    if buf.readline().strip() != b"P5":
        raise ValueError("not a binary graymap")
    fields = []
    while len(fields) < 3:
        line = buf.readline()
        if not line:
            raise ValueError("truncated graymap header")
        if not line.startswith(b"#"):
            fields += line.split()
    w, h = int(fields[0]), int(fields[1])
    return np.frombuffer(buf.read(), dtype=np.uint8).reshape(h, w)


def bev_raw_dump(values, resolution) -> bytes:
    """Header ``<4sIIIf`` (magic, X, Y, C, cell size) then float32 x-y-c row-major."""
    v = np.asarray(values, dtype="<f4")
    if v.ndim == 2:
        v = v[..., None]
    x, y, c = v.shape
    return struct.pack("<4sIIIf", b"BEV1", x, y, c, float(resolution)) + v.tobytes()
