"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"TGCP" | version:u32 | record*

    record := name_len:u32 | name:utf8 | rank:u32 | extent:u64 * rank | value:f64 * prod(extents)

Records run until end of file. Adam moments live under ``<name>.m`` and
``<name>.v``; the shared step counter is the scalar ``adam.step``.
"""

import struct
from collections import OrderedDict

import numpy as np

from ..errors import FormatError

MAGIC = b"TGCP"
VERSION = 1


def encode_checkpoint(state):
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name, value in state.items():
        arr = np.require(np.asarray(value, dtype="<f8"), requirements="C")  # keeps rank 0
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def decode_checkpoint(data, path=None):
    if len(data) < 8:
        raise FormatError("checkpoint header truncated", path, len(data))
    if data[:4] != MAGIC:
        raise FormatError(f"bad checkpoint magic {data[:4]!r}", path, 0)
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", path, 4)
    state = OrderedDict()
    pos = 8
    end = len(data)

    def need(n, what):
        if pos + n > end:
            raise FormatError(f"truncated {what}", path, pos)

    while pos < end:
        need(4, "record name length")
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        need(n, "record name")
        try:
            name = data[pos:pos + n].decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("record name is not UTF-8", path, pos) from None
        pos += n
        need(4, f"rank of {name!r}")
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        need(8 * rank, f"extents of {name!r}")
        shape = struct.unpack_from(f"<{rank}Q", data, pos)
        pos += 8 * rank
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        need(8 * count, f"values of {name!r}")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64)
        pos += 8 * count
        state[name] = arr.reshape(shape)
    return state


def save_checkpoint(path, state):
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(state))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    return decode_checkpoint(data, path)
