"""EMB1 writer: magic "EMB1", uint32-LE rows and cols, float32-LE payload
row-major, no trailing bytes.  Writes are atomic (temp file + rename)."""

import os
import struct

import numpy as np

EMB_MAGIC = b"EMB1"


def write_embedding_file(path, data: np.ndarray) -> None:
    data = np.asarray(data)
    if data.ndim != 2 or data.shape[0] < 1:
        raise ValueError(f"need a 2-d array with >=1 rows, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ValueError("embedding contains non-finite values")
    rows, cols = data.shape
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(EMB_MAGIC)
        f.write(struct.pack("<II", rows, cols))
        f.write(payload)
    os.replace(tmp, path)
