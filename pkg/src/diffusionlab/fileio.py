"""Bit-stable file formats: RFC-4180 CSV with 17-digit floats, binary PGM
images, and sorted-key JSON manifests. No timestamps anywhere."""

import json
from pathlib import Path

import numpy as np

from .errors import BadMagic, LengthMismatch, TruncatedFile


def format_cell(value) -> str:
    """One CSV cell: floats at 17 significant digits, quoting per RFC 4180."""
    if isinstance(value, float) or isinstance(value, np.floating):
        text = f"{float(value):.17g}"
    elif isinstance(value, (int, np.integer)):
        text = str(int(value))
    else:
        text = str(value)
    if any(ch in text for ch in ',"\r\n'):
        text = '"' + text.replace('"', '""') + '"'
    return text


def write_csv(path: str, rows, header=None) -> None:
    lines = []
    if header is not None:
        lines.append(",".join(format_cell(h) for h in header))
    for row in rows:
        lines.append(",".join(format_cell(v) for v in row))
    Path(path).write_bytes(("\r\n".join(lines) + "\r\n").encode("utf-8"))


def read_csv(path: str) -> list[list[str]]:
    """Rows of string cells; quoted cells may embed commas, quotes, newlines."""
    text = Path(path).read_text(encoding="utf-8").replace("\r\n", "\n")
    rows = []
    record: list[str] = []
    field: list[str] = []
    started = False  # current record has content beyond a bare newline
    quoted = False
    i = 0
    while i < len(text):
        ch = text[i]
        if quoted:
            if ch == '"':
                if i + 1 < len(text) and text[i + 1] == '"':
                    field.append('"')
                    i += 1
                else:
                    quoted = False
            else:
                field.append(ch)
        elif ch == '"':
            quoted = True
            started = True
        elif ch == ",":
            record.append("".join(field))
            field = []
            started = True
        elif ch == "\n":
            if started or field:
                record.append("".join(field))
                rows.append(record)
            record, field, started = [], [], False
        else:
            field.append(ch)
            started = True
        i += 1
    if started or field:
        record.append("".join(field))
        rows.append(record)
    return rows


def read_numeric_csv(path: str, skip_header: bool = False) -> np.ndarray:
    """(rows, cols) float matrix; raises on ragged or non-numeric content."""
    rows = read_csv(path)
    if skip_header and rows:
        rows = rows[1:]
    if not rows:
        raise TruncatedFile(f"{path}: no data rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise LengthMismatch(f"{path}: ragged rows")
    try:
        return np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    except ValueError as e:
        raise TruncatedFile(f"{path}: non-numeric cell ({e})") from None


def write_samples_csv(path: str, samples: np.ndarray) -> None:
    """Sample matrices are written headerless, one row per sample."""
    write_csv(path, np.asarray(samples, dtype=np.float64))


def write_pgm(path: str, image: np.ndarray) -> None:
    """8-bit binary (P5) image."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise LengthMismatch(f"PGM needs a 2-D image, got {img.shape}")
    if img.dtype != np.uint8:
        if not np.all(np.isfinite(img)) or img.min() < 0 or img.max() > 255:
            raise LengthMismatch("PGM pixels must fit one byte")
        img = img.astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def read_pgm(path: str) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise BadMagic(f"{path}: not a binary PGM file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TruncatedFile(f"{path}: header ends early")
        try:
            fields.append(int(raw[start:pos]))
        except ValueError:
            raise BadMagic(f"{path}: malformed header token {raw[start:pos]!r}") from None
    pos += 1
    w, h, maxval = fields
    if maxval != 255:
        raise BadMagic(f"{path}: only 8-bit images supported, maxval {maxval}")
    data = raw[pos : pos + w * h]
    if len(data) < w * h:
        raise TruncatedFile(f"{path}: {len(data)} pixel bytes, expected {w * h}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def to_bytes_image(samples_row: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """De-quantize one [-1, 1] sample vector to an 8-bit image."""
    x = np.clip(np.asarray(samples_row, dtype=np.float64), -1.0, 1.0)
    return np.rint((x + 1.0) * 127.5).astype(np.uint8).reshape(rows, cols)


def write_manifest(path: str, payload: dict) -> None:
    blob = json.dumps(payload, sort_keys=True, indent=2)
    Path(path).write_bytes((blob + "\n").encode("utf-8"))


def read_manifest(path: str) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
