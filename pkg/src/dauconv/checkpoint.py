"""Self-describing binary checkpoints with an integrity checksum.

Layout (all integers little-endian):

    bytes 0..7    magic b"DAUCKPT0"
    bytes 8..11   format version (u32, currently 1)
    bytes 12..15  header length L (u32)
    bytes 16..    UTF-8 JSON header of length L:
                    {"spec": <network spec dict>,
                     "epoch": int, "seed": int,
                     "arrays": [{"name", "dtype", "shape"}, ...]}
    then          raw array payloads, concatenated in manifest order,
                  C-contiguous little-endian
    last 8 bytes  BLAKE2b-64 digest of everything before it

Round-trips are bit-exact: loading a checkpoint and continuing training
reproduces the uninterrupted run.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from .engine import Model, NetworkSpec, build_network
from .errors import CheckpointError

MAGIC = b"DAUCKPT0"
VERSION = 1


def _digest(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def save_checkpoint(model: Model, path: str) -> None:
    arrays = model.state_arrays()
    manifest = []
    blobs = []
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<")
        blobs.append(arr.astype(dt, copy=False).tobytes())
        manifest.append({"name": name, "dtype": dt.str, "shape": list(arr.shape)})
    header = json.dumps({
        "spec": model.spec.to_dict(),
        "epoch": model.epoch,
        "seed": model.seed,
        "arrays": manifest,
    }).encode("utf-8")
    body = bytearray()
    body += MAGIC
    body += VERSION.to_bytes(4, "little")
    body += len(header).to_bytes(4, "little")
    body += header
    for blob in blobs:
        body += blob
    body += _digest(bytes(body))
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(body)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> Model:
    if not os.path.isfile(path):
        raise CheckpointError(f"missing checkpoint file: {path}")
    with open(path, "rb") as fh:
        body = fh.read()
    if len(body) < len(MAGIC) + 16 or body[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if _digest(body[:-8]) != body[-8:]:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")
    version = int.from_bytes(body[8:12], "little")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    hlen = int.from_bytes(body[12:16], "little")
    try:
        header = json.loads(body[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad header ({exc})") from exc

    spec = NetworkSpec.from_dict(header["spec"])
    model = build_network(spec, seed=header["seed"])
    model.epoch = header["epoch"]
    model.seed = header["seed"]

    offset = 16 + hlen
    stored = {}
    for entry in header["arrays"]:
        dt = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dt.itemsize * int(np.prod(shape)) if shape else dt.itemsize
        chunk = body[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: truncated payload for {entry['name']}")
        stored[entry["name"]] = np.frombuffer(chunk, dtype=dt).reshape(shape)
        offset += nbytes
    if offset != len(body) - 8:
        raise CheckpointError(f"{path}: payload length mismatch")

    targets = model.state_arrays()
    if {n for n, _ in targets} != set(stored):
        raise CheckpointError(f"{path}: array manifest does not match the network spec")
    for name, arr in targets:
        src = stored[name]
        if src.shape != arr.shape:
            raise CheckpointError(f"{path}: shape mismatch for {name}")
        arr[...] = src.astype(arr.dtype, copy=False)
    return model
