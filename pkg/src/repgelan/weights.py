"""Flat binary weight files.

Layout, all little-endian::

    b"RGW1"
    uint32  node count
    per node:  uint16 name length, UTF-8 name, uint64 element count
    float32 payload, nodes in header order

A node's elements are its arrays (weights, biases, BN statistics) flattened
in the graph's fixed traversal order, so a file only loads into a graph of
identical structure.
"""

import dataclasses
import struct
from pathlib import Path

import numpy as np

from .exceptions import FormatError
from .graph import iter_arrays, map_arrays

MAGIC = b"RGW1"


def save_weights(g, path):
    header = [MAGIC, struct.pack("<I", len(g.nodes))]
    payload = []
    for node in g.nodes:
        arrays = [a for _, a in iter_arrays(node.block)]
        name = node.name.encode("utf-8")
        header.append(struct.pack("<H", len(name)) + name + struct.pack("<Q", sum(a.size for a in arrays)))
        payload.extend(np.asarray(a, dtype="<f4").ravel() for a in arrays)
    data = np.concatenate(payload) if payload else np.zeros(0, dtype="<f4")
    Path(path).write_bytes(b"".join(header) + data.tobytes())


def read_weights(path):
    """Return ``[(name, float32 array), ...]`` from a weights file."""
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    try:
        (count,) = struct.unpack_from("<I", buf, 4)
        pos = 8
        entries = []
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, pos)
            name = buf[pos + 2:pos + 2 + n].decode("utf-8")
            (size,) = struct.unpack_from("<Q", buf, pos + 2 + n)
            pos += 2 + n + 8
            entries.append((name, size))
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: truncated or corrupt header") from exc
    total = sum(s for _, s in entries)
    if len(buf) - pos != 4 * total:
        raise FormatError(f"{path}: payload holds {(len(buf) - pos) // 4} floats, header promises {total}")
    flat = np.frombuffer(buf, dtype="<f4", offset=pos).astype(np.float32)
    out, start = [], 0
    for name, size in entries:
        out.append((name, flat[start:start + size]))
        start += size
    return out


def load_weights(g, path):
    """Return a copy of ``g`` with every array replaced from ``path``."""
    entries = read_weights(path)
    if [name for name, _ in entries] != [n.name for n in g.nodes]:
        raise FormatError(f"{path}: node list does not match the graph")
    nodes = []
    for node, (name, flat) in zip(g.nodes, entries):
        need = sum(a.size for _, a in iter_arrays(node.block))
        if need != flat.size:
            raise FormatError(f"{path}: node {name} has {flat.size} elements, graph needs {need}")
        cursor = [0]

        def take(_, a, flat=flat, cursor=cursor):
            chunk = flat[cursor[0]:cursor[0] + a.size].reshape(a.shape)
            cursor[0] += a.size
            return chunk.copy()

        nodes.append(dataclasses.replace(node, block=map_arrays(node.block, take)))
    return dataclasses.replace(g, nodes=tuple(nodes))
