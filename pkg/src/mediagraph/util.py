"""Shared plumbing: stable hashing, seed derivation, deterministic file IO."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def canonical_json(obj) -> str:
    """JSON with sorted keys and no whitespace variance, for hashing and
    byte-identical artifacts."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def derive_seed(master_seed: int, name: str) -> int:
    """Stable per-module seed: first 8 bytes of sha256("<master>:<name>").

    Documented so an independent reimplementation can reproduce the same
    per-module streams from a single master seed.
    """
    digest = hashlib.sha256(f"{master_seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % (2**63)


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write via a temp file + rename so readers never see partial output."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8", newline="")
    os.replace(tmp, path)


def write_matrix_csv(path, domains, matrix, prefix: str = "v") -> None:
    """Per-domain vector file: header "domain,<prefix>0..<prefix>{d-1}".

    Values are written with repr() so a read-back reproduces the exact
    floats.
    """
    import csv

    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["domain"] + [f"{prefix}{i}" for i in range(matrix.shape[1])])
        for domain, row in zip(domains, matrix):
            writer.writerow([domain] + [repr(float(x)) for x in row])


def read_matrix_csv(path):
    """Inverse of :func:`write_matrix_csv`: (domains, float64 matrix)."""
    import csv

    import numpy as np

    domains, rows = [], []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        width = len(header) - 1
        for row in reader:
            if len(row) != width + 1:
                raise ValueError(f"{path}: row for {row[0] if row else '?'} has wrong width")
            domains.append(row[0])
            rows.append([float(x) for x in row[1:]])
    return domains, np.array(rows, dtype=float).reshape(len(domains), width)
