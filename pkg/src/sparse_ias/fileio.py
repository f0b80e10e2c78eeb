"""File formats: PGM images, headered atom matrices, CSV, flat configs.

All writers go through a write-temp-then-rename step so partially
written artifacts never appear under the final name, and all numeric
text output uses 17 significant digits so values round-trip exactly.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

FLOAT_FMT = "%.17g"


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# PGM (portable graymap), ASCII P2 and binary P5


def write_pgm(path, image: np.ndarray, maxval: int = 255, binary: bool = True) -> None:
    """Write a 2-D float array with values in [0, 1] as a PGM file."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ValueError("PGM image must be 2-D")
    if not 0 < maxval < 65536:
        raise ValueError("maxval must be in [1, 65535]")
    levels = np.clip(np.rint(image * maxval), 0, maxval).astype(np.uint16)
    header = f"{'P5' if binary else 'P2'}\n{image.shape[1]} {image.shape[0]}\n{maxval}\n"
    if binary:
        dtype = ">u2" if maxval > 255 else "u1"
        payload = header.encode("ascii") + levels.astype(dtype).tobytes()
    else:
        rows = "\n".join(" ".join(str(v) for v in row) for row in levels)
        payload = (header + rows + "\n").encode("ascii")
    atomic_write_bytes(Path(path), payload)


def read_pgm(path) -> np.ndarray:
    """Read a P2/P5 PGM file into floats in [0, 1]."""
    raw = Path(path).read_bytes()
    if raw[:2] not in (b"P2", b"P5"):
        raise ValueError(f"{path}: not a P2/P5 PGM file")
    binary = raw[:2] == b"P5"

    # Header tokens (width, height, maxval) with '#' comments allowed.
    tokens: list[int] = []
    pos = 2
    while len(tokens) < 3:
        if pos >= len(raw):
            raise ValueError(f"{path}: truncated PGM header")
        ch = raw[pos : pos + 1]
        if ch == b"#":
            pos = raw.index(b"\n", pos) + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(raw) and not raw[end : end + 1].isspace():
                end += 1
            tokens.append(int(raw[pos:end]))
            pos = end
    width, height, maxval = tokens
    if binary:
        pos += 1  # single whitespace after maxval
        dtype = ">u2" if maxval > 255 else "u1"
        data = np.frombuffer(raw, dtype=dtype, count=width * height, offset=pos)
    else:
        data = np.array(raw[pos:].split(), dtype=float)
        if data.size != width * height:
            raise ValueError(f"{path}: expected {width * height} samples, got {data.size}")
    return data.astype(float).reshape(height, width) / maxval


# ---------------------------------------------------------------------------
# atom matrix files: 3-line header (rows, cols, labels flag), row-major data


def write_atoms(path, atoms: np.ndarray, labels=None, binary: bool = False) -> None:
    """Write an atom matrix (atoms as columns) with optional column labels."""
    atoms = np.asarray(atoms, dtype=float)
    if atoms.ndim != 2:
        raise ValueError("atom matrix must be 2-D")
    rows, cols = atoms.shape
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (cols,):
            raise ValueError(f"need one label per atom: {labels.shape} vs {cols} atoms")
    header = f"{rows}\n{cols}\n{1 if labels is not None else 0}\n"
    if binary:
        payload = header.encode("ascii") + atoms.astype("<f8").tobytes(order="C")
        if labels is not None:
            payload += labels.astype("<i8").tobytes()
    else:
        lines = [" ".join(FLOAT_FMT % v for v in row) for row in atoms]
        if labels is not None:
            lines.append(" ".join(str(v) for v in labels))
        payload = (header + "\n".join(lines) + "\n").encode("ascii")
    atomic_write_bytes(Path(path), payload)


def read_atoms(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Read an atom matrix file; returns (atoms, labels-or-None).

    The binary and text variants share the 3-line ASCII header; the
    variant is detected from the payload size.
    """
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4:
        raise ValueError(f"{path}: missing 3-line atom file header")
    try:
        rows, cols, flag = int(parts[0]), int(parts[1]), int(parts[2])
    except ValueError as exc:
        raise ValueError(f"{path}: malformed atom file header") from exc
    if rows <= 0 or cols <= 0 or flag not in (0, 1):
        raise ValueError(f"{path}: bad atom file header values ({rows}, {cols}, {flag})")
    body = parts[3]
    expected = 8 * rows * cols + (8 * cols if flag else 0)
    if len(body) == expected:
        atoms = np.frombuffer(body, dtype="<f8", count=rows * cols).reshape(rows, cols)
        labels = (
            np.frombuffer(body, dtype="<i8", count=cols, offset=8 * rows * cols)
            if flag
            else None
        )
        return atoms.copy(), None if labels is None else labels.copy()
    values = body.split()
    need = rows * cols + (cols if flag else 0)
    if len(values) != need:
        raise ValueError(f"{path}: expected {need} values, got {len(values)}")
    atoms = np.array(values[: rows * cols], dtype=float).reshape(rows, cols)
    labels = np.array(values[rows * cols :], dtype=np.int64) if flag else None
    return atoms, labels


# ---------------------------------------------------------------------------
# CSV (RFC-4180 subset: plain fields, comma separator, header row)


def write_csv(path, header: list[str], columns: list[np.ndarray]) -> None:
    """Write named columns; floats at full precision, ints and strings as is."""
    if len(header) != len(columns):
        raise ValueError("one header entry per column required")
    cols = [np.asarray(c) for c in columns]
    length = len(cols[0]) if cols else 0
    if any(len(c) != length for c in cols):
        raise ValueError("all columns must have equal length")

    def fmt(v) -> str:
        if isinstance(v, (np.floating, float)):
            return FLOAT_FMT % v
        return str(v)

    lines = [",".join(header)]
    for i in range(length):
        lines.append(",".join(fmt(c[i]) for c in cols))
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# flat key = value configs


def parse_config(text: str) -> dict[str, str]:
    """Parse 'key = value' lines; '#' starts a comment, blanks ignored."""
    result: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        result[key] = value.strip()
    return result


def dump_config(entries: dict[str, str]) -> str:
    """Canonical serialization: one 'key = value' per line, given order."""
    return "".join(f"{k} = {v}\n" for k, v in entries.items())
