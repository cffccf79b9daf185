"""Feature record files and dataset manifests.

Feature file (little-endian)::

    b"TGFV" | version:u32 | id_len:u32 | id:utf8 | m:u32 | D:u32 | f64 * (m*D)

Manifest: UTF-8 JSON lines. Line 1 is a header object
``{"format": "tgcap-manifest", "version": 1, "records": N, "m": .., "D": ..,
"grid": [W, H], ...}``; each following line is one image record with keys
``image_id``, ``features`` (path relative to the manifest), ``captions`` and
the optional ``topic_label``, ``topic_dist``, ``attributes``, ``split``.
"""

import json
import os
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import DataError, FormatError

FEATURE_MAGIC = b"TGFV"
FEATURE_VERSION = 1
MANIFEST_FORMAT = "tgcap-manifest"
MANIFEST_VERSION = 1
RECORD_KEYS = ("image_id", "features", "captions", "topic_label", "topic_dist", "attributes", "split")


@dataclass
class FeatureRecord:
    image_id: str
    features: np.ndarray  # (m, D)

    @property
    def m(self):
        return self.features.shape[0]

    @property
    def D(self):
        return self.features.shape[1]


def encode_features(record):
    arr = np.ascontiguousarray(record.features, dtype="<f8")
    if arr.ndim != 2:
        raise DataError(f"features for {record.image_id!r} must be 2-D, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise DataError(f"features for {record.image_id!r} contain non-finite values")
    raw = record.image_id.encode("utf-8")
    return b"".join([
        FEATURE_MAGIC,
        struct.pack("<II", FEATURE_VERSION, len(raw)),
        raw,
        struct.pack("<II", arr.shape[0], arr.shape[1]),
        arr.tobytes(),
    ])


def decode_features(data, path=None):
    if len(data) < 12:
        raise FormatError("feature header truncated", path, len(data))
    if data[:4] != FEATURE_MAGIC:
        raise FormatError(f"bad feature magic {data[:4]!r}", path, 0)
    version, n = struct.unpack_from("<II", data, 4)
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported feature version {version}", path, 4)
    pos = 12
    if pos + n + 8 > len(data):
        raise FormatError("feature header truncated", path, len(data))
    try:
        image_id = data[pos:pos + n].decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError("image id is not UTF-8", path, pos) from None
    pos += n
    m, d = struct.unpack_from("<II", data, pos)
    pos += 8
    expected = pos + 8 * m * d
    if len(data) != expected:
        raise FormatError(
            f"feature payload has {len(data) - pos} bytes, expected {8 * m * d}",
            path, min(len(data), expected),
        )
    arr = np.frombuffer(data, dtype="<f8", count=m * d, offset=pos).astype(np.float64)
    return FeatureRecord(image_id, arr.reshape(m, d))


def save_features(path, record):
    with open(path, "wb") as fh:
        fh.write(encode_features(record))


def load_features(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except FileNotFoundError:
        raise DataError(f"missing feature file {path}") from None
    return decode_features(data, path)


@dataclass
class ManifestRecord:
    image_id: str
    features: str
    captions: list
    topic_label: Optional[int] = None
    topic_dist: Optional[list] = None
    attributes: Optional[list] = None
    split: Optional[str] = None

    def to_json(self):
        obj = {"image_id": self.image_id, "features": self.features, "captions": list(self.captions)}
        for key in ("topic_label", "topic_dist", "attributes", "split"):
            val = getattr(self, key)
            if val is not None:
                obj[key] = val
        return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


@dataclass
class DatasetManifest:
    header: dict
    records: list
    root: str = "."
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def m(self):
        return self.header["m"]

    @property
    def D(self):
        return self.header["D"]

    @property
    def grid(self):
        g = self.header.get("grid")
        return tuple(g) if g else (self.m, 1)

    def split(self, name):
        if name in (None, "all"):
            return list(self.records)
        return [r for r in self.records if r.split == name]

    def by_id(self):
        return {r.image_id: r for r in self.records}

    def features_for(self, record):
        """Load (and cache) the region matrix for ``record``, checking its shape."""
        arr = self._cache.get(record.image_id)
        if arr is None:
            path = os.path.join(self.root, record.features)
            if not os.path.exists(path):
                raise DataError(f"missing features for image {record.image_id!r}: {path}")
            rec = load_features(path)
            if rec.image_id != record.image_id:
                raise DataError(
                    f"feature file {path} holds image {rec.image_id!r}, expected {record.image_id!r}"
                )
            if rec.features.shape != (self.m, self.D):
                raise DataError(
                    f"features for {record.image_id!r} have shape {rec.features.shape}, "
                    f"manifest declares ({self.m}, {self.D})"
                )
            arr = self._cache[record.image_id] = rec.features
        return arr


def encode_manifest(manifest):
    header = dict(manifest.header)
    header["format"] = MANIFEST_FORMAT
    header["version"] = MANIFEST_VERSION
    header["records"] = len(manifest.records)
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    lines.extend(r.to_json() for r in manifest.records)
    return ("\n".join(lines) + "\n").encode("utf-8")


def decode_manifest(data, path=None, root="."):
    records = []
    header = None
    offset = 0
    for raw in data.split(b"\n"):
        line_start = offset
        offset += len(raw) + 1
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            pos = line_start + getattr(exc, "pos", getattr(exc, "start", 0))
            raise FormatError(f"malformed manifest line: {exc}", path, pos) from None
        if not isinstance(obj, dict):
            raise FormatError("manifest line is not an object", path, line_start)
        if header is None:
            if obj.get("format") != MANIFEST_FORMAT:
                raise FormatError("missing manifest header", path, line_start)
            if obj.get("version") != MANIFEST_VERSION:
                raise FormatError(f"unsupported manifest version {obj.get('version')}", path, line_start)
            for key in ("m", "D", "records"):
                if not isinstance(obj.get(key), int):
                    raise FormatError(f"manifest header lacks integer {key!r}", path, line_start)
            header = obj
            continue
        unknown = set(obj) - set(RECORD_KEYS)
        missing = {"image_id", "features", "captions"} - set(obj)
        if missing or unknown:
            raise FormatError(
                f"bad manifest record fields (missing {sorted(missing)}, unknown {sorted(unknown)})",
                path, line_start,
            )
        records.append(ManifestRecord(**obj))
    if header is None:
        raise FormatError("empty manifest", path, 0)
    if len(records) != header["records"]:
        raise FormatError(
            f"manifest declares {header['records']} records but holds {len(records)}",
            path, len(data),
        )
    seen = set()
    for r in records:
        if r.image_id in seen:
            raise DataError(f"duplicate image id {r.image_id!r} in manifest")
        seen.add(r.image_id)
    return DatasetManifest(header, records, root)


def save_manifest(path, manifest):
    with open(path, "wb") as fh:
        fh.write(encode_manifest(manifest))


def load_manifest(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}") from None
    return decode_manifest(data, path, root=os.path.dirname(os.path.abspath(path)))
