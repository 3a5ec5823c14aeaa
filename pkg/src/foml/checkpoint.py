"""Versioned run checkpoints: a magic header line plus a pickled state payload.

Loads refuse anything whose header is not exactly the supported magic and
version, before touching the payload.
"""

from __future__ import annotations

import pickle

MAGIC = "FOMLCKPT"
VERSION = "v1"
HEADER = f"{MAGIC} {VERSION}\n".encode("ascii")


class CheckpointError(Exception):
    """Unreadable, corrupted, or version-mismatched checkpoint."""


def save_checkpoint(path, payload):
    with open(path, "wb") as fh:
        fh.write(HEADER)
        fh.write(pickle.dumps(payload, protocol=4))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        header = fh.readline(64)
        if not header.endswith(b"\n"):
            raise CheckpointError("missing checkpoint header line")
        parts = header.decode("ascii", errors="replace").split()
        if len(parts) != 2 or parts[0] != MAGIC:
            raise CheckpointError(f"bad checkpoint magic: {header!r}")
        if parts[1] != VERSION:
            raise CheckpointError(
                f"checkpoint version {parts[1]!r} not supported (want {VERSION})"
            )
        try:
            return pickle.loads(fh.read())
        except Exception as exc:
            raise CheckpointError(f"corrupted checkpoint payload: {exc}") from exc
