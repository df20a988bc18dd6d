"""Single-file persistence for a trained detector.

Layout: the magic ``FMOE``, a uint32 format version, a uint32 section
count, then sections of (uint16 name length, utf-8 name, uint64 payload
length, payload).  All integers little-endian.  Known sections:

  meta        key=value text lines (schema columns, model provenance)
  norm        feature and degree normalization statistics
  expert_avg  model blob for the neighborhood-average expert
  expert_deg  model blob for the degree expert
  gate        model blob for the selector (absent in stage-1 checkpoints)
  head        model blob for the weighted-summation head (optional)

Anything malformed raises FormatError naming what went wrong; unknown
sections are rejected rather than skipped so a truncated or corrupted
file never half-loads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import FormatError
from .experts import ExpertBundle
from .gate import GateModel
from .ingest import NormStats

MAGIC = b"FMOE"
CONTAINER_VERSION = 1
_KNOWN = ("meta", "norm", "expert_avg", "expert_deg", "gate", "head")


@dataclass
class DetectorContainer:
    bundle: ExpertBundle
    gate: GateModel | None = None
    head: nn.MlpModel | None = None
    meta: dict = field(default_factory=dict)


def _meta_bytes(meta: dict) -> bytes:
    lines = []
    for key, value in meta.items():
        key, value = str(key), str(value)
        if "\n" in key or "\n" in value or "=" in key:
            raise FormatError(f"meta entry not encodable: {key!r}")
        lines.append(f"{key}={value}")
    return "\n".join(lines).encode("utf-8")


def _meta_from_bytes(blob: bytes) -> dict:
    meta = {}
    text = blob.decode("utf-8", errors="strict")
    for line in text.splitlines():
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"bad meta line: {line!r}")
        key, _, value = line.partition("=")
        meta[key] = value
    return meta


def _norm_bytes(stats: NormStats) -> bytes:
    mean = np.asarray(stats.mean, dtype="<f8")
    std = np.asarray(stats.std, dtype="<f8")
    d = mean.shape[0]
    return (
        struct.pack("<I", d)
        + mean.tobytes()
        + std.tobytes()
        + struct.pack("<dd", float(stats.deg_mean), float(stats.deg_std))
    )


def _norm_from_bytes(blob: bytes) -> NormStats:
    if len(blob) < 4:
        raise FormatError("norm section truncated")
    (d,) = struct.unpack_from("<I", blob, 0)
    expect = 4 + 16 * d + 16
    if len(blob) != expect:
        raise FormatError(f"norm section has {len(blob)} bytes, expected {expect}")
    mean = np.frombuffer(blob, dtype="<f8", count=d, offset=4).copy()
    std = np.frombuffer(blob, dtype="<f8", count=d, offset=4 + 8 * d).copy()
    deg_mean, deg_std = struct.unpack_from("<dd", blob, 4 + 16 * d)
    return NormStats(mean=mean, std=std, deg_mean=deg_mean, deg_std=deg_std)


def container_to_bytes(container: DetectorContainer) -> bytes:
    meta = dict(container.meta)
    if container.gate is not None:
        meta.setdefault("gate_readout", "1" if container.gate.include_readout else "0")
    sections = [
        ("meta", _meta_bytes(meta)),
        ("norm", _norm_bytes(container.bundle.stats)),
        ("expert_avg", nn.model_to_bytes(container.bundle.avg)),
        ("expert_deg", nn.model_to_bytes(container.bundle.deg)),
    ]
    if container.gate is not None:
        sections.append(("gate", nn.model_to_bytes(container.gate.mlp)))
    if container.head is not None:
        sections.append(("head", nn.model_to_bytes(container.head)))
    out = [MAGIC, struct.pack("<II", CONTAINER_VERSION, len(sections))]
    for name, payload in sections:
        encoded = name.encode("utf-8")
        out.append(struct.pack("<H", len(encoded)))
        out.append(encoded)
        out.append(struct.pack("<Q", len(payload)))
        out.append(payload)
    return b"".join(out)


def container_from_bytes(blob: bytes) -> DetectorContainer:
    if len(blob) < 12:
        raise FormatError("container too short for its header")
    if blob[:4] != MAGIC:
        raise FormatError("bad magic; not a detector container")
    version, n_sections = struct.unpack_from("<II", blob, 4)
    if version != CONTAINER_VERSION:
        raise FormatError(
            f"container version {version} not supported (expected {CONTAINER_VERSION})"
        )
    off = 12
    raw: dict = {}
    for _ in range(n_sections):
        if off + 2 > len(blob):
            raise FormatError("truncated section header")
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        if off + name_len + 8 > len(blob):
            raise FormatError("truncated section header")
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        (payload_len,) = struct.unpack_from("<Q", blob, off)
        off += 8
        if off + payload_len > len(blob):
            raise FormatError(f"section {name!r} overruns the file")
        if name not in _KNOWN:
            raise FormatError(f"unknown section {name!r}")
        if name in raw:
            raise FormatError(f"duplicate section {name!r}")
        raw[name] = blob[off : off + payload_len]
        off += payload_len
    if off != len(blob):
        raise FormatError(f"{len(blob) - off} trailing bytes after the last section")
    for required in ("norm", "expert_avg", "expert_deg"):
        if required not in raw:
            raise FormatError(f"missing required section {required!r}")

    meta = _meta_from_bytes(raw["meta"]) if "meta" in raw else {}
    stats = _norm_from_bytes(raw["norm"])
    bundle = ExpertBundle(
        avg=nn.model_from_bytes(raw["expert_avg"]),
        deg=nn.model_from_bytes(raw["expert_deg"]),
        stats=stats,
    )
    gate = None
    if "gate" in raw:
        include_readout = meta.get("gate_readout", "1") != "0"
        gate = GateModel(nn.model_from_bytes(raw["gate"]), include_readout=include_readout)
    head = nn.model_from_bytes(raw["head"]) if "head" in raw else None
    return DetectorContainer(bundle=bundle, gate=gate, head=head, meta=meta)


def save_container(path, container: DetectorContainer) -> None:
    with open(path, "wb") as fh:
        fh.write(container_to_bytes(container))


def load_container(path) -> DetectorContainer:
    with open(path, "rb") as fh:
        return container_from_bytes(fh.read())
