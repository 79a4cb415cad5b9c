"""Persistence: the ``.umps`` archive and atomic file writes.

The archive is a zip container with two members:

``header.json``
    ``{format_version, D, d, complex_layout, gauge_tag, model_metadata}``
``tensor.bin``
    ``A[s][alpha][beta]`` in row-major order, each entry as two little-endian
    float64 numbers (re, im).
"""

import io as _io
import json
import os
import tempfile
import zipfile

import numpy as np

from .errors import ArgumentError, DimensionError

FORMAT_VERSION = 1
COMPLEX_LAYOUT = "interleaved_f64_le"


class ArchiveError(ArgumentError):
    exit_code = 5


def atomic_write_bytes(path, data: bytes):
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_tensor(A):
    A = np.ascontiguousarray(A, dtype="<c16")
    return A.tobytes(order="C")


def decode_tensor(data, d, D):
    expected = d * D * D * 16
    if len(data) != expected:
        raise ArchiveError(f"payload has {len(data)} bytes, expected {expected}")
    return np.frombuffer(data, dtype="<c16").reshape(d, D, D).astype(complex)


def archive_bytes(A, gauge_tag="none", model_metadata=None):
    A = np.asarray(A)
    if A.ndim != 3 or A.shape[1] != A.shape[2]:
        raise DimensionError(f"tensor must have shape (d, D, D), got {A.shape}")
    header = {
        "format_version": FORMAT_VERSION,
        "D": int(A.shape[1]),
        "d": int(A.shape[0]),
        "complex_layout": COMPLEX_LAYOUT,
        "gauge_tag": gauge_tag,
        "model_metadata": model_metadata or {},
    }
    buf = _io.BytesIO()
    # fixed timestamps keep archives byte-identical across reruns
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, payload in (("header.json", json.dumps(header, sort_keys=True).encode()),
                              ("tensor.bin", encode_tensor(A))):
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, payload)
    return buf.getvalue()


def save_state(path, A, gauge_tag="none", model_metadata=None):
    atomic_write_bytes(path, archive_bytes(A, gauge_tag, model_metadata))


def load_state(path):
    """Return ``(A, header)`` from an archive; unknown format versions are rejected."""
    try:
        with zipfile.ZipFile(path, "r") as zf:
            header = json.loads(zf.read("header.json").decode("utf-8"))
            payload = zf.read("tensor.bin")
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"{path}: not a valid uMPS archive ({exc})") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise ArchiveError(f"{path}: unsupported format_version {header.get('format_version')!r}")
    if header.get("complex_layout") != COMPLEX_LAYOUT:
        raise ArchiveError(f"{path}: unsupported complex layout {header.get('complex_layout')!r}")
    A = decode_tensor(payload, int(header["d"]), int(header["D"]))
    return A, header
