"""Binary checkpoints: a text header describing each array, then raw bytes.

Format:
    one line per entry:  name dim0 [dim1 ...] width
    blank line
    payload: little-endian scalars, concatenated in header order

`width` is the scalar size in bytes (8 for float64, 4 for float32).
Round-tripping a checkpoint is bit-identical.
"""

from __future__ import annotations

import numpy as np

_WIDTH_TO_DTYPE = {4: "<f4", 8: "<f8"}


def save_checkpoint(path: str, named: dict[str, np.ndarray]) -> None:
    lines = []
    payload = []
    for name, arr in named.items():
        if " " in name:
            raise ValueError(f"checkpoint entry name '{name}' may not contain spaces")
        arr = np.asarray(arr)
        width = arr.dtype.itemsize
        if width not in _WIDTH_TO_DTYPE:
            raise ValueError(f"unsupported scalar width {width} for entry '{name}'")
        dims = " ".join(str(d) for d in arr.shape) if arr.ndim else "1"
        lines.append(f"{name} {dims} {width}")
        payload.append(np.ascontiguousarray(arr, dtype=_WIDTH_TO_DTYPE[width]).tobytes())
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n\n").encode("utf-8"))
        for chunk in payload:
            fh.write(chunk)


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    sep = blob.find(b"\n\n")
    if sep < 0:
        raise ValueError(f"'{path}' is not a checkpoint: missing header terminator")
    out: dict[str, np.ndarray] = {}
    offset = sep + 2
    for line in blob[:sep].decode("utf-8").splitlines():
        parts = line.split()
        if len(parts) < 3:
            raise ValueError(f"malformed checkpoint header line: '{line}'")
        name = parts[0]
        shape = tuple(int(p) for p in parts[1:-1])
        width = int(parts[-1])
        if width not in _WIDTH_TO_DTYPE:
            raise ValueError(f"unsupported scalar width {width} in entry '{name}'")
        count = int(np.prod(shape))
        nbytes = count * width
        if offset + nbytes > len(blob):
            raise ValueError(f"checkpoint payload truncated at entry '{name}'")
        arr = np.frombuffer(blob[offset:offset + nbytes], dtype=_WIDTH_TO_DTYPE[width])
        out[name] = arr.reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise ValueError(f"checkpoint has {len(blob) - offset} trailing bytes")
    return out


def load_into(path: str, named: dict[str, np.ndarray]) -> None:
    """Load a checkpoint into existing arrays, validating names and shapes.

    Fails loudly on the first mismatching entry so a checkpoint can never
    be silently loaded into the wrong configuration.
    """
    loaded = load_checkpoint(path)
    for name, arr in named.items():
        if name not in loaded:
            raise ValueError(f"checkpoint mismatch: entry '{name}' missing from '{path}'")
        if loaded[name].shape != arr.shape:
            raise ValueError(
                f"checkpoint mismatch: entry '{name}' has shape {loaded[name].shape}, "
                f"expected {arr.shape}")
    extra = [k for k in loaded if k not in named]
    if extra:
        raise ValueError(f"checkpoint mismatch: unexpected entry '{extra[0]}'")
    for name, arr in named.items():
        arr[...] = loaded[name].astype(arr.dtype)
