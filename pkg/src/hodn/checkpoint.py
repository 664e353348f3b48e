"""Checkpoints: a text manifest plus a raw little-endian float64 blob.

Manifest layout::

    # hodn-checkpoint v1
    blob <file name> <byte count>
    optimizer <step> <lr> <beta1> <beta2> <eps> <weight_decay>    (optional)
    param <name> <d0,d1,...> <byte offset>
    moment <m|v> <name> <d0,d1,...> <byte offset>                  (optional)

Scalars use 17 significant digits; a 0-d shape is written as ``-``.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import CompatibilityError, CorruptionError, ParseError
from .model import param_shapes
from .optim import OptimizerState

HEADER = "# hodn-checkpoint v1"
DTYPE = np.dtype("<f8")


def _shape_text(shape):
    return ",".join(str(n) for n in shape) if shape else "-"


def _parse_shape(text, lineno):
    if text == "-":
        return ()
    try:
        shape = tuple(int(n) for n in text.split(","))
    except ValueError:
        raise ParseError(f"bad shape {text!r}", lineno) from None
    if any(n < 0 for n in shape):
        raise ParseError(f"negative dimension in {text!r}", lineno)
    return shape


def save_checkpoint(path, params, state=None):
    """Write ``<path>`` (manifest) and ``<path>.bin`` (blob)."""
    path = Path(path)
    blob_path = path.with_name(path.name + ".bin")
    entries, chunks, offset = [], [], 0

    def put(prefix, name, value):
        nonlocal offset
        value = np.asarray(value, dtype=DTYPE)
        entries.append(f"{prefix} {name} {_shape_text(value.shape)} {offset}")
        chunks.append(value.tobytes())
        offset += value.nbytes

    for name in sorted(params):
        put("param", name, params[name])
    lines = [HEADER]
    if state is not None:
        lines.append("optimizer " + " ".join(
            [str(state.step)] + [format(float(v), ".17g")
                                 for v in (state.lr, *state.betas, state.eps, state.weight_decay)]))
        for kind, moments in (("m", state.m), ("v", state.v)):
            for name in sorted(moments):
                put(f"moment {kind}", name, moments[name])
    lines.insert(1, f"blob {blob_path.name} {offset}")
    path.parent.mkdir(parents=True, exist_ok=True)
    blob_path.write_bytes(b"".join(chunks))
    path.write_text("\n".join(lines + entries) + "\n")
    return path, blob_path


def _read_manifest(path):
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != HEADER:
        raise ParseError(f"missing header {HEADER!r}", 1)
    blob, optimizer, records = None, None, []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts:
            continue
        try:
            record = _parse_record(parts, lineno)
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"bad number in {line!r}", lineno) from None
        if record is None:
            raise ParseError(f"unrecognised manifest record {line!r}", lineno)
        if record[0] == "blob":
            blob = record[1:]
        elif record[0] == "optimizer":
            optimizer = record[1:]
        else:
            records.append(record)
    if blob is None:
        raise ParseError("manifest has no blob record")
    return blob, optimizer, records


def _parse_record(parts, lineno):
    kind = parts[0]
    if kind == "blob" and len(parts) == 3:
        return ("blob", parts[1], int(parts[2]))
    if kind == "optimizer" and len(parts) == 7:
        return ("optimizer", int(parts[1]), *(float(v) for v in parts[2:]))
    if kind == "param" and len(parts) == 4:
        return ("param", parts[1], _parse_shape(parts[2], lineno), int(parts[3]))
    if kind == "moment" and len(parts) == 5 and parts[1] in ("m", "v"):
        return (parts[1], parts[2], _parse_shape(parts[3], lineno), int(parts[4]))
    return None


def load_checkpoint(path, config=None, link_mode=None):
    """Read a checkpoint.  Returns ``(params, state_or_None)``.

    With ``config`` given, parameter names and shapes must match the
    layout that config implies.
    """
    path = Path(path)
    (blob_name, blob_size), optimizer, records = _read_manifest(path)
    data = (path.parent / blob_name).read_bytes()
    if len(data) != blob_size:
        raise CorruptionError(f"blob {blob_name} holds {len(data)} bytes, manifest says {blob_size}")
    end = 0
    sections = {"param": {}, "m": {}, "v": {}}
    for kind, name, shape, offset in records:
        count = int(np.prod(shape, dtype=np.int64))
        stop = offset + count * DTYPE.itemsize
        if offset != end or stop > blob_size:
            raise CorruptionError(f"entry {name} at offset {offset} does not fit the blob layout")
        sections[kind][name] = np.frombuffer(data, dtype=DTYPE, count=count, offset=offset) \
            .reshape(shape).astype(np.float64)
        end = stop
    if end != blob_size:
        raise CorruptionError(f"blob has {blob_size - end} trailing bytes")

    params = sections["param"]
    if config is not None:
        check_compatible(params, config, link_mode)
    state = None
    if optimizer is not None:
        step, lr, b1, b2, eps, wd = optimizer
        state = OptimizerState(lr, (b1, b2), eps, wd, step, sections["m"], sections["v"])
    return params, state


def check_compatible(params, config, link_mode=None):
    expected = param_shapes(config, link_mode)
    bad = sorted(n for n in set(expected) | set(params)
                 if n not in params or n not in expected or params[n].shape != tuple(expected[n]))
    if bad:
        shown = ", ".join(bad[:8]) + (" ..." if len(bad) > 8 else "")
        raise CompatibilityError(f"{len(bad)} parameters do not match the config: {shown}", bad)
