"""Versioned text checkpoints for named parameter tensors.

Format (UTF-8, LF line endings):

    FACE-FORGE-CKPT-1
    <name> <ndim> <dim0> ... <dimk> <v0> <v1> ...

One record line per parameter; values are row-major and written with
``repr``, which round-trips float64 bit-exactly.
"""

from __future__ import annotations

import numpy as np

HEADER = "FACE-FORGE-CKPT-1"


class CheckpointError(ValueError):
    """Raised for malformed or version-mismatched checkpoint files."""


def save_checkpoint(params: dict[str, np.ndarray], path: str):
    lines = [HEADER]
    for name, value in params.items():
        arr = np.asarray(value, dtype=np.float64)
        fields = [name, str(arr.ndim)]
        fields += [str(n) for n in arr.shape]
        fields += [repr(float(v)) for v in arr.reshape(-1)]
        lines.append(" ".join(fields))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != HEADER:
        raise CheckpointError(f"{path}: missing or unsupported header (want {HEADER})")
    params: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split()
        try:
            name = fields[0]
            ndim = int(fields[1])
            shape = tuple(int(n) for n in fields[2:2 + ndim])
            values = np.array([float(v) for v in fields[2 + ndim:]], dtype=np.float64)
        except (IndexError, ValueError) as exc:
            raise CheckpointError(f"{path}: malformed record at line {lineno}: {exc}") from exc
        expected = int(np.prod(shape)) if shape else 1
        if values.size != expected:
            raise CheckpointError(
                f"{path}: line {lineno}: {name} declares shape {shape} "
                f"({expected} values) but carries {values.size}")
        params[name] = values.reshape(shape)
    return params
