"""Binary dataset file of labeled quadrant images.

Layout: magic "CLK1", one format version byte, record count as little-endian
uint32, then fixed 4112-byte records: 4096 pixel bytes (row-major, each 0 or
1) followed by psi_r and psi_p as little-endian float64. NaN marks a value
not yet computed, so the same file carries freshly harvested candidates and
fully simulated ones.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError

MAGIC = b"CLK1"
VERSION = 1
IMAGE_SIDE = 64
_PIXELS = IMAGE_SIDE * IMAGE_SIDE
_RECORD = _PIXELS + 16
_HEADER = struct.Struct("<4sBI")


@dataclass(frozen=True)
class DatasetRecord:
    image: np.ndarray
    psi_r: float = float("nan")
    psi_p: float = float("nan")

    def key(self) -> bytes:
        """Byte identity of the geometry, for exact-duplicate detection."""
        return self.image.astype(np.uint8).tobytes()


def _validate_image(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image)
    if arr.shape != (IMAGE_SIDE, IMAGE_SIDE):
        raise ContractError(f"dataset images must be {IMAGE_SIDE}x{IMAGE_SIDE}, got {arr.shape}")
    arr = arr.astype(np.uint8)
    if not np.isin(arr, (0, 1)).all():
        raise ContractError("dataset images must be binary")
    return arr


def write_dataset(path, records) -> None:
    """Write all records, replacing the file atomically."""
    records = list(records)
    payload = bytearray(_HEADER.pack(MAGIC, VERSION, len(records)))
    for rec in records:
        payload += _validate_image(rec.image).tobytes()
        payload += struct.pack("<dd", rec.psi_r, rec.psi_p)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_dataset(path) -> list[DatasetRecord]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise ConfigurationError(f"{path} is too short to be a dataset file")
    magic, version, count = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ConfigurationError(f"{path} is not a dataset file (bad magic {magic!r})")
    if version != VERSION:
        raise ConfigurationError(f"unsupported dataset version {version}")
    if len(blob) != _HEADER.size + count * _RECORD:
        raise ConfigurationError(
            f"{path} is corrupt: {len(blob)} bytes for {count} records"
        )
    records = []
    off = _HEADER.size
    for _ in range(count):
        pixels = np.frombuffer(blob, np.uint8, _PIXELS, off).reshape(IMAGE_SIDE, IMAGE_SIDE)
        if not np.isin(pixels, (0, 1)).all():
            raise ConfigurationError(f"{path} contains non-binary pixel bytes")
        psi_r, psi_p = struct.unpack_from("<dd", blob, off + _PIXELS)
        records.append(DatasetRecord(image=pixels.copy(), psi_r=psi_r, psi_p=psi_p))
        off += _RECORD
    return records
