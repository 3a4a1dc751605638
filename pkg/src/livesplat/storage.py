"""Bit-exact checkpoints and the quantized streaming delta format.

Checkpoint ("SGME", version 1), all little-endian:
    magic 4s | u32 version | u64 point count | u32 meta length | meta JSON
    | raw array blocks in the order the meta declares.
The meta JSON lists every array as [name, dtype, shape]; scalars (iteration,
optimizer step, RNG state) ride in the meta. Arrays are written with their
exact in-memory dtypes, so load(save(x)) reproduces x bit for bit.

Delta stream ("SGMD", version 1): one record per streamed frame.
    record: u8 kind (0 delta, 1 keyframe) | u32 frame index | payload
Keyframes carry the full attribute arrays (float32) plus bindings. Delta
records carry a changed-attribute bitmap (u16); each selected attribute ships
float16 values of (current - previous), except rotation, which ships the
smallest-three encoding: a packed 2-bit index of the largest |component|,
one sign bit, and float16 deltas of the remaining three components. An
attribute is omitted when its max absolute change is below 1e-6. Decoding a
record against the true previous cloud reproduces the current cloud within
one half-precision ulp per value.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .anchors import AnchorBindings
from .cloud import GaussianCloud
from .errors import DeltaDesyncError, FormatError, TruncationError

CHECKPOINT_MAGIC = b"SGME"
CHECKPOINT_VERSION = 1
DELTA_MAGIC = b"SGMD"
DELTA_VERSION = 1
DELTA_OMIT_THRESHOLD = 1e-6

# attribute order is part of the wire format
DELTA_ATTRS = ("offset", "log_scale", "rotation", "opacity_logit",
               "color_dc", "mask_logit")


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint_bytes(arrays: Dict[str, np.ndarray], scalars: dict,
                          point_count: int) -> bytes:
    """Serialize named arrays + JSON-compatible scalars."""
    meta_arrays = []
    blobs = []
    for name in arrays:
        arr = np.ascontiguousarray(arrays[name])
        dt = arr.dtype.newbyteorder("<")
        meta_arrays.append([name, dt.str, list(arr.shape)])
        blobs.append(arr.astype(dt, copy=False).tobytes())
    meta = {"arrays": meta_arrays, "scalars": scalars}
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    out = io.BytesIO()
    out.write(CHECKPOINT_MAGIC)
    out.write(struct.pack("<I", CHECKPOINT_VERSION))
    out.write(struct.pack("<Q", point_count))
    out.write(struct.pack("<I", len(meta_bytes)))
    out.write(meta_bytes)
    for blob in blobs:
        out.write(blob)
    return out.getvalue()


def load_checkpoint_bytes(data: bytes):
    """Inverse of :func:`save_checkpoint_bytes`; validates magic/version."""
    if len(data) < 20:
        raise TruncationError("checkpoint shorter than its fixed header")
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic")
    version = struct.unpack_from("<I", data, 4)[0]
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unknown checkpoint version {version}")
    point_count = struct.unpack_from("<Q", data, 8)[0]
    meta_len = struct.unpack_from("<I", data, 16)[0]
    off = 20
    if len(data) < off + meta_len:
        raise TruncationError("checkpoint meta truncated")
    meta = json.loads(data[off:off + meta_len].decode("utf-8"))
    off += meta_len
    arrays = {}
    for name, dtype_str, shape in meta["arrays"]:
        dt = np.dtype(dtype_str)
        count = int(np.prod(shape)) if shape else 1
        nbytes = dt.itemsize * count
        if len(data) < off + nbytes:
            raise TruncationError(f"array block {name} truncated")
        arr = np.frombuffer(data, dt, count=count, offset=off).reshape(shape)
        arrays[name] = arr.copy()
        off += nbytes
    return arrays, meta["scalars"], point_count


def cloud_arrays(cloud: GaussianCloud) -> Dict[str, np.ndarray]:
    return {
        "offset": cloud.offset,
        "log_scale": cloud.log_scale,
        "rotation": cloud.rotation,
        "opacity_logit": cloud.opacity_logit,
        "color_dc": cloud.color_dc,
        "mask_logit": cloud.mask_logit,
        "anchor_face": cloud.anchor.face,
        "anchor_bary": cloud.anchor.bary,
        "anchor_group": cloud.anchor.group,
        "anchor_bound": cloud.anchor.bound.astype(np.uint8),
    }


def cloud_from_arrays(arrays: Dict[str, np.ndarray]) -> GaussianCloud:
    bindings = AnchorBindings(
        face=arrays["anchor_face"], bary=arrays["anchor_bary"],
        group=arrays["anchor_group"], bound=arrays["anchor_bound"].astype(bool))
    return GaussianCloud(
        offset=arrays["offset"], log_scale=arrays["log_scale"],
        rotation=arrays["rotation"], opacity_logit=arrays["opacity_logit"],
        color_dc=arrays["color_dc"], mask_logit=arrays["mask_logit"],
        anchor=bindings)


# ---------------------------------------------------------------------------
# Delta stream


@dataclass
class DeltaRecord:
    frame_index: int
    keyframe: bool
    bitmap: int
    payload_bytes: int
    data: bytes


def _quat_smallest_three_encode(curr: np.ndarray, prev: np.ndarray) -> bytes:
    """Largest-component index (2 bits), its sign (1 bit), f16 deltas of the
    remaining three components against the previous cloud."""
    n = curr.shape[0]
    largest = np.argmax(np.abs(curr), axis=1)
    signs = (curr[np.arange(n), largest] < 0).astype(np.uint8)
    sel = np.arange(4)[None, :] != largest[:, None]
    others = curr[sel].reshape(n, 3)
    prev_others = prev[sel].reshape(n, 3)
    deltas = (others - prev_others).astype(np.float16)
    idx_bits = np.empty((n, 2), dtype=np.uint8)
    idx_bits[:, 0] = (largest >> 1) & 1
    idx_bits[:, 1] = largest & 1
    out = io.BytesIO()
    out.write(np.packbits(idx_bits.ravel()).tobytes())
    out.write(np.packbits(signs).tobytes())
    out.write(deltas.astype("<f2").tobytes())
    return out.getvalue()


def _quat_smallest_three_decode(data: bytes, prev: np.ndarray) -> Tuple[np.ndarray, int]:
    n = prev.shape[0]
    idx_bytes = (2 * n + 7) // 8
    sign_bytes = (n + 7) // 8
    need = idx_bytes + sign_bytes + n * 3 * 2
    if len(data) < need:
        raise TruncationError("rotation payload truncated")
    bits = np.unpackbits(np.frombuffer(data, np.uint8, count=idx_bytes))
    largest = (bits[: 2 * n : 2].astype(np.int64) * 2
               + bits[1: 2 * n : 2].astype(np.int64))
    signs = np.unpackbits(np.frombuffer(data, np.uint8, count=sign_bytes,
                                        offset=idx_bytes))[:n].astype(bool)
    deltas = np.frombuffer(data, "<f2", count=n * 3,
                           offset=idx_bytes + sign_bytes).astype(np.float64)
    deltas = deltas.reshape(n, 3)
    sel = np.arange(4)[None, :] != largest[:, None]
    vals = prev[sel].reshape(n, 3).astype(np.float64) + deltas
    quats = np.empty((n, 4), dtype=np.float64)
    quats[sel] = vals.ravel()
    mag = np.sqrt(np.maximum(1.0 - np.sum(vals * vals, axis=1), 0.0))
    quats[np.arange(n), largest] = np.where(signs, -mag, mag)
    return quats, need


def encode_delta(prev: GaussianCloud, curr: GaussianCloud,
                 frame_index: int) -> DeltaRecord:
    """Delta record between two same-topology clouds.

    Attributes whose max absolute change is below the omission threshold are
    dropped via the bitmap; the rest ship as half-precision deltas (rotation
    uses smallest-three). Topology changes require a keyframe instead.
    """
    if prev.count != curr.count or not np.array_equal(
            prev.anchor.face, curr.anchor.face):
        raise DeltaDesyncError("topology changed; emit a keyframe")
    bitmap = 0
    body = io.BytesIO()
    for bit, name in enumerate(DELTA_ATTRS):
        a = getattr(prev, name).astype(np.float64)
        b = getattr(curr, name).astype(np.float64)
        if np.max(np.abs(b - a), initial=0.0) < DELTA_OMIT_THRESHOLD:
            continue
        bitmap |= 1 << bit
        if name == "rotation":
            body.write(_quat_smallest_three_encode(
                curr.rotation.astype(np.float64),
                prev.rotation.astype(np.float64)))
        else:
            body.write((b - a).astype("<f2").tobytes())
    data = body.getvalue()
    rec = io.BytesIO()
    rec.write(struct.pack("<BIH", 0, frame_index, bitmap))
    rec.write(data)
    blob = rec.getvalue()
    return DeltaRecord(frame_index=frame_index, keyframe=False, bitmap=bitmap,
                       payload_bytes=len(blob), data=blob)


def encode_keyframe(cloud: GaussianCloud, frame_index: int) -> DeltaRecord:
    """Full float32 snapshot including bindings (topology reset)."""
    body = io.BytesIO()
    body.write(struct.pack("<Q", cloud.count))
    for name in DELTA_ATTRS:
        body.write(getattr(cloud, name).astype("<f4").tobytes())
    body.write(cloud.anchor.face.astype("<i4").tobytes())
    body.write(cloud.anchor.bary.astype("<f4").tobytes())
    body.write(cloud.anchor.group.astype("<i4").tobytes())
    body.write(cloud.anchor.bound.astype("<u1").tobytes())
    rec = io.BytesIO()
    rec.write(struct.pack("<BIH", 1, frame_index, 0))
    rec.write(body.getvalue())
    blob = rec.getvalue()
    return DeltaRecord(frame_index=frame_index, keyframe=True, bitmap=0,
                       payload_bytes=len(blob), data=blob)


_ATTR_SHAPES = {"offset": 3, "log_scale": 3, "rotation": 4,
                "opacity_logit": 1, "color_dc": 3, "mask_logit": 1}


def decode_record(data: bytes, prev: Optional[GaussianCloud]):
    """Apply one record; returns (cloud, frame_index, keyframe, bytes_used)."""
    if len(data) < 7:
        raise TruncationError("record header truncated")
    kind, frame_index, bitmap = struct.unpack_from("<BIH", data, 0)
    off = 7
    if kind == 1:
        if len(data) < off + 8:
            raise TruncationError("keyframe count truncated")
        n = struct.unpack_from("<Q", data, off)[0]
        off += 8
        arrays = {}
        for name in DELTA_ATTRS:
            width = _ATTR_SHAPES[name]
            count = n * width
            nbytes = count * 4
            if len(data) < off + nbytes:
                raise TruncationError(f"keyframe block {name} truncated")
            arr = np.frombuffer(data, "<f4", count=count, offset=off)
            arrays[name] = arr.reshape(n, width) if width > 1 else arr.copy()
            off += nbytes
        face = np.frombuffer(data, "<i4", count=n, offset=off).copy(); off += 4 * n
        bary = np.frombuffer(data, "<f4", count=3 * n, offset=off).reshape(n, 3).copy(); off += 12 * n
        group = np.frombuffer(data, "<i4", count=n, offset=off).copy(); off += 4 * n
        bound = np.frombuffer(data, "<u1", count=n, offset=off).astype(bool); off += n
        cloud = GaussianCloud(
            offset=arrays["offset"], log_scale=arrays["log_scale"],
            rotation=arrays["rotation"], opacity_logit=arrays["opacity_logit"],
            color_dc=arrays["color_dc"], mask_logit=arrays["mask_logit"],
            anchor=AnchorBindings(face, bary, group, bound))
        return cloud, frame_index, True, off
    if prev is None:
        raise DeltaDesyncError("delta record without a previous cloud")
    n = prev.count
    cloud = prev.copy()
    for bit, name in enumerate(DELTA_ATTRS):
        if not (bitmap >> bit) & 1:
            continue
        if name == "rotation":
            quats, used = _quat_smallest_three_decode(data[off:],
                                                      prev.rotation.astype(np.float64))
            cloud.rotation = quats.astype(np.float32)
            off += used
        else:
            width = _ATTR_SHAPES[name]
            count = n * width
            nbytes = count * 2
            if len(data) < off + nbytes:
                raise TruncationError(f"delta block {name} truncated")
            deltas = np.frombuffer(data, "<f2", count=count, offset=off).astype(np.float64)
            base = getattr(prev, name).astype(np.float64)
            updated = base + (deltas.reshape(n, width) if width > 1 else deltas)
            setattr(cloud, name, updated.astype(np.float32))
            off += nbytes
    return cloud, frame_index, False, off


class DeltaStreamWriter:
    """Appends records to an SGMD stream."""

    def __init__(self):
        self._out = io.BytesIO()
        self._out.write(DELTA_MAGIC)
        self._out.write(struct.pack("<I", DELTA_VERSION))
        self.record_sizes: List[int] = []
        self.keyframes = 0
        self.deltas = 0
        self._prev: Optional[GaussianCloud] = None

    def append(self, cloud: GaussianCloud, frame_index: int,
               force_keyframe: bool = False) -> DeltaRecord:
        need_key = (force_keyframe or self._prev is None
                    or self._prev.count != cloud.count
                    or not np.array_equal(self._prev.anchor.face,
                                          cloud.anchor.face))
        if need_key:
            rec = encode_keyframe(cloud, frame_index)
            self.keyframes += 1
        else:
            rec = encode_delta(self._prev, cloud, frame_index)
            self.deltas += 1
        self._out.write(struct.pack("<I", len(rec.data)))
        self._out.write(rec.data)
        self.record_sizes.append(len(rec.data) + 4)
        self._prev = cloud.copy()
        return rec

    def getvalue(self) -> bytes:
        return self._out.getvalue()


def read_delta_stream(data: bytes):
    """Decode a whole SGMD stream back into per-frame clouds."""
    if len(data) < 8:
        raise TruncationError("stream shorter than header")
    if data[:4] != DELTA_MAGIC:
        raise FormatError("bad delta stream magic")
    version = struct.unpack_from("<I", data, 4)[0]
    if version != DELTA_VERSION:
        raise FormatError(f"unknown delta stream version {version}")
    off = 8
    clouds = []
    prev = None
    while off < len(data):
        if len(data) < off + 4:
            raise TruncationError("record length truncated")
        rec_len = struct.unpack_from("<I", data, off)[0]
        off += 4
        if len(data) < off + rec_len:
            raise TruncationError("record body truncated")
        cloud, frame_index, keyframe, _ = decode_record(
            data[off:off + rec_len], prev)
        off += rec_len
        clouds.append((frame_index, keyframe, cloud))
        prev = cloud
    return clouds
