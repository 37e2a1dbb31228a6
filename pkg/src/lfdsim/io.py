"""Diagnostics CSV, JSON summaries and restartable checkpoints.

Checkpoint layout (little endian)::

    8 bytes   magic b"LFDCKPT1"
    uint32    length n of the JSON header
    n bytes   UTF-8 JSON header: config_hash, step, time, equilibrium, records
    ...       field block as written by grid.field_to_bytes

Floats in the header and the CSV are written with ``repr`` so that a
restart reproduces the uninterrupted run byte for byte.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .equilibrium import EquilibriumParams
from .grid import VelocityGrid, field_from_bytes, field_to_bytes
from .stepper import DiagRecord

CHECKPOINT_MAGIC = b"LFDCKPT1"
_LEN = struct.Struct("<I")


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def records_to_csv(records: list[DiagRecord]) -> str:
    lines = [",".join(DiagRecord.columns())]
    lines += [",".join(_cell(x) for x in r.row()) for r in records]
    return "\n".join(lines) + "\n"


def write_csv(path: str | Path, records: list[DiagRecord]) -> None:
    Path(path).write_text(records_to_csv(records))


def read_csv(path: str | Path) -> list[DiagRecord]:
    lines = Path(path).read_text().splitlines()
    cols = lines[0].split(",")
    if cols[: len(DiagRecord.columns())] != DiagRecord.columns():
        raise ValueError(f"unexpected CSV header in {path}")
    ints = {"picard_iters", "lin_iters"}
    out = []
    for line in lines[1:]:
        vals = dict(zip(cols, line.split(",")))
        out.append(
            DiagRecord(**{c: (int(vals[c]) if c in ints else float(vals[c])) for c in DiagRecord.columns()})
        )
    return out


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(dump_json(obj))


@dataclass
class Checkpoint:
    config_hash: str
    step: int
    time: float
    equilibrium: EquilibriumParams
    records: list[DiagRecord]
    grid: VelocityGrid
    field: np.ndarray


def checkpoint_bytes(ck: Checkpoint) -> bytes:
    header = {
        "config_hash": ck.config_hash,
        "step": ck.step,
        "time": ck.time,
        "equilibrium": ck.equilibrium.to_dict(),
        "records": [r.row() for r in ck.records],
    }
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return CHECKPOINT_MAGIC + _LEN.pack(len(text)) + text + field_to_bytes(ck.grid, ck.field)


def write_checkpoint(path: str | Path, ck: Checkpoint) -> None:
    Path(path).write_bytes(checkpoint_bytes(ck))


def read_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint (bad magic)")
    (n,) = _LEN.unpack_from(data, 8)
    header = json.loads(data[12 : 12 + n].decode())
    grid, f = field_from_bytes(data[12 + n :])
    eq = header["equilibrium"]
    params = EquilibriumParams(eq["a"], eq["b"], np.array(eq["u"]), eq["eps"], eq["residual"])
    cols = DiagRecord.columns()
    records = [DiagRecord(**dict(zip(cols, row))) for row in header["records"]]
    return Checkpoint(
        header["config_hash"], int(header["step"]), float(header["time"]), params, records, grid, f
    )


def checkpoint_name(step: int) -> str:
    return f"checkpoint_{step:06d}.lfdc"
