# src/mpca_retrieval/storage/formats.py
# Binary files. Every format: 4-byte magic, u32 version (=1), u32 dimensions, payload.
# All integers little-endian; tensor values binary32, model values binary64.
#
#   MPFT features : N, I1, I2, I3 | N x (id u64, label u32, I1*I2*I3 f32, i3 fastest)
#   MPCM mpca     : I1, I2, I3, d1, d2, d3 | mean, V1, V2, V3 (row-major), spectra 1..3
#   PCAM pca      : in_dim, out_dim | mean, components (in_dim x out_dim), spectrum
#   LSH1 hash     : dim, bits, seed u64, checksum u64 (hyperplanes are regenerated)
#   MPIX index    : N, bits | N x (id u64, label u32, ceil(bits/64) u64 words)
# Indices are zero-based throughout.
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from typing import Callable, Dict, Tuple, Union

import numpy as np

from mpca_retrieval.errors import ArgumentError, FormatError, ShapeError
from mpca_retrieval.hashing.lsh import HashModel, fit_hash, n_words
from mpca_retrieval.ml.eigen import Spectrum
from mpca_retrieval.ml.mpca import MpcaModel
from mpca_retrieval.ml.pca_baseline import PcaModel
from mpca_retrieval.ml.tensor_ops import Dims, check_dims
from mpca_retrieval.retrieval.index import RetrievalIndex, build_index_arrays

VERSION = 1
MAGIC_FEATURES = b"MPFT"
MAGIC_MPCA = b"MPCM"
MAGIC_PCA = b"PCAM"
MAGIC_HASH = b"LSH1"
MAGIC_INDEX = b"MPIX"

PathLike = Union[str, "os.PathLike[str]"]


@dataclass(frozen=True, eq=False)
class FeatureDataset:
    dims: Dims
    ids: np.ndarray      # uint64, unique
    labels: np.ndarray   # uint32
    tensors: np.ndarray  # (N, I1, I2, I3) float32

    def __post_init__(self) -> None:
        dims = check_dims(self.dims)
        ids = np.asarray(self.ids, dtype=np.uint64).reshape(-1)
        labels = np.asarray(self.labels, dtype=np.uint32).reshape(-1)
        tensors = np.asarray(self.tensors, dtype=np.float32)
        if tensors.ndim != 4 or tuple(tensors.shape[1:]) != dims:
            raise ShapeError(f"tensors of shape {tensors.shape} do not match dims {dims}")
        if not ids.shape[0] == labels.shape[0] == tensors.shape[0]:
            raise ShapeError("ids, labels and tensors differ in length")
        if np.unique(ids).shape[0] != ids.shape[0]:
            raise ArgumentError("dataset ids are not unique")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "tensors", tensors)

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0


# -------------------------- low level --------------------------

def atomic_write(path: PathLike, data: bytes) -> None:
    """Write to a temp file in the target directory, then rename over `path`."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=folder)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


class _Reader:
    def __init__(self, buf: bytes, magic: bytes, what: str) -> None:
        self.buf = buf
        self.pos = 0
        self.what = what
        if buf[:4] != magic:
            if len(buf) < 4 and magic.startswith(bytes(buf)):
                raise FormatError(f"{what}: truncated inside the magic", len(buf))
            raise FormatError(f"{what}: bad magic, expected {magic!r}", 0)
        self.pos = 4
        version = self.u32("version")
        if version != VERSION:
            raise FormatError(f"{what}: unsupported version {version}", 4)

    def need(self, n: int, field: str) -> None:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.what}: truncated while reading {field}", len(self.buf))

    def u32(self, field: str) -> int:
        self.need(4, field)
        (v,) = struct.unpack_from("<I", self.buf, self.pos)
        self.pos += 4
        return int(v)

    def u64(self, field: str) -> int:
        self.need(8, field)
        (v,) = struct.unpack_from("<Q", self.buf, self.pos)
        self.pos += 8
        return int(v)

    def positive(self, field: str) -> int:
        at = self.pos
        v = self.u32(field)
        if v < 1:
            raise FormatError(f"{self.what}: {field} must be positive", at)
        return v

    def array(self, dtype: Union[str, np.dtype], count: int, field: str) -> np.ndarray:
        dt = np.dtype(dtype)
        self.need(dt.itemsize * count, field)
        out = np.frombuffer(self.buf, dtype=dt, count=count, offset=self.pos).copy()
        self.pos += dt.itemsize * count
        return out

    def floats(self, count: int, field: str, shape: Tuple[int, ...] = ()) -> np.ndarray:
        at = self.pos
        out = self.array("<f8", count, field).astype(np.float64)
        if not np.all(np.isfinite(out)):
            bad = int(np.nonzero(~np.isfinite(out))[0][0])
            raise FormatError(f"{self.what}: non-finite value in {field}", at + 8 * bad)
        return out.reshape(shape) if shape else out

    def end(self) -> None:
        if self.pos != len(self.buf):
            raise FormatError(f"{self.what}: {len(self.buf) - self.pos} trailing bytes", self.pos)


def _read_bytes(path: PathLike) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def _header(magic: bytes, *fields: int) -> bytes:
    return magic + struct.pack("<I", VERSION) + struct.pack(f"<{len(fields)}I", *fields)


def _f64(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def _check_unique(ids: np.ndarray, base: int, record: int, what: str) -> None:
    """Reject the first repeated id in file order, reporting its record offset."""
    order = np.argsort(ids, kind="stable")
    srt = ids[order]
    rep = np.nonzero(srt[1:] == srt[:-1])[0] + 1
    if rep.size:
        at = int(order[rep].min())
        raise FormatError(f"{what}: duplicate id {int(ids[at])}", base + at * record)


# -------------------------- features (MPFT) --------------------------

HEADER_FEATURES = 24


def feature_record_dtype(dims: Dims) -> np.dtype:
    p = dims[0] * dims[1] * dims[2]
    return np.dtype([("id", "<u8"), ("label", "<u4"), ("data", "<f4", (p,))])


def feature_payload_size(n: int, dims: Dims) -> int:
    return int(n) * feature_record_dtype(check_dims(dims)).itemsize


def features_to_bytes(ds: FeatureDataset) -> bytes:
    rec = np.zeros(len(ds), dtype=feature_record_dtype(ds.dims))
    rec["id"] = ds.ids
    rec["label"] = ds.labels
    rec["data"] = ds.tensors.reshape(len(ds), -1)
    return _header(MAGIC_FEATURES, len(ds), *ds.dims) + rec.tobytes()


def features_from_bytes(buf: bytes) -> FeatureDataset:
    r = _Reader(buf, MAGIC_FEATURES, "MPFT")
    n = r.u32("item count")
    dims = (r.positive("I1"), r.positive("I2"), r.positive("I3"))
    dt = feature_record_dtype(dims)
    rec = r.array(dt, n, "records")
    r.end()
    _check_unique(rec["id"], HEADER_FEATURES, dt.itemsize, "MPFT")
    data = rec["data"].astype(np.float32)
    if not np.all(np.isfinite(data)):
        row = int(np.nonzero(~np.all(np.isfinite(data), axis=1))[0][0])
        raise FormatError("MPFT: non-finite tensor value", HEADER_FEATURES + row * dt.itemsize)
    return FeatureDataset(dims=dims, ids=rec["id"].astype(np.uint64), labels=rec["label"].astype(np.uint32),
                          tensors=data.reshape((n,) + dims))


def write_features(ds: FeatureDataset, path: PathLike) -> None:
    atomic_write(path, features_to_bytes(ds))


def read_features(path: PathLike) -> FeatureDataset:
    return features_from_bytes(_read_bytes(path))


# -------------------------- MPCA model (MPCM) --------------------------

def mpca_to_bytes(m: MpcaModel) -> bytes:
    parts = [_header(MAGIC_MPCA, *m.in_dims, *m.out_dims), _f64(m.mean)]
    parts += [_f64(v) for v in m.projections]
    parts += [_f64(s.eigenvalues) for s in m.spectra]
    return b"".join(parts)


def mpca_from_bytes(buf: bytes) -> MpcaModel:
    r = _Reader(buf, MAGIC_MPCA, "MPCM")
    in_dims = tuple(r.positive(f"I{k}") for k in (1, 2, 3))
    out_dims = []
    for k in range(3):
        at = r.pos
        d = r.positive(f"d{k + 1}")
        if d > in_dims[k]:
            raise FormatError(f"MPCM: d{k + 1}={d} exceeds I{k + 1}={in_dims[k]}", at)
        out_dims.append(d)
    mean = r.floats(in_dims[0] * in_dims[1] * in_dims[2], "mean", in_dims)
    proj = tuple(r.floats(in_dims[k] * out_dims[k], f"V{k + 1}", (in_dims[k], out_dims[k])) for k in range(3))
    spectra = tuple(Spectrum(r.floats(in_dims[k], f"spectrum {k + 1}")) for k in range(3))
    r.end()
    for a in (mean,) + proj + tuple(s.eigenvalues for s in spectra):
        a.setflags(write=False)
    return MpcaModel(in_dims=in_dims, out_dims=tuple(out_dims), mean=mean,  # type: ignore[arg-type]
                     projections=proj, spectra=spectra)  # type: ignore[arg-type]


# -------------------------- PCA model (PCAM) --------------------------

def pca_to_bytes(m: PcaModel) -> bytes:
    return b"".join([_header(MAGIC_PCA, m.in_dim, m.out_dim), _f64(m.mean),
                     _f64(m.components), _f64(m.spectrum.eigenvalues)])


def pca_from_bytes(buf: bytes) -> PcaModel:
    r = _Reader(buf, MAGIC_PCA, "PCAM")
    in_dim = r.positive("in_dim")
    at = r.pos
    out_dim = r.positive("out_dim")
    if out_dim > in_dim:
        raise FormatError(f"PCAM: out_dim={out_dim} exceeds in_dim={in_dim}", at)
    mean = r.floats(in_dim, "mean")
    comps = r.floats(in_dim * out_dim, "components", (in_dim, out_dim))
    spectrum = Spectrum(r.floats(in_dim, "spectrum"))
    r.end()
    for a in (mean, comps, spectrum.eigenvalues):
        a.setflags(write=False)
    return PcaModel(in_dim=in_dim, out_dim=out_dim, mean=mean, components=comps, spectrum=spectrum)


# -------------------------- hash model (LSH1) --------------------------

def hash_to_bytes(m: HashModel) -> bytes:
    return _header(MAGIC_HASH, m.dim, m.bits) + struct.pack("<QQ", m.seed, m.checksum)


def hash_from_bytes(buf: bytes) -> HashModel:
    r = _Reader(buf, MAGIC_HASH, "LSH1")
    dim = r.positive("dim")
    bits = r.positive("bits")
    seed = r.u64("seed")
    at = r.pos
    stored = r.u64("checksum")
    r.end()
    model = fit_hash(dim, bits, seed)
    if model.checksum != stored:
        raise FormatError("LSH1: regenerated hyperplanes do not match the stored checksum", at)
    return model


# -------------------------- index (MPIX) --------------------------

HEADER_INDEX = 16


def index_record_dtype(bits: int) -> np.dtype:
    return np.dtype([("id", "<u8"), ("label", "<u4"), ("words", "<u8", (n_words(bits),))])


def index_to_bytes(ix: RetrievalIndex) -> bytes:
    rec = np.zeros(len(ix), dtype=index_record_dtype(ix.bits))
    rec["id"] = ix.ids
    rec["label"] = ix.labels
    rec["words"] = ix.words
    return _header(MAGIC_INDEX, len(ix), ix.bits) + rec.tobytes()


def index_from_bytes(buf: bytes) -> RetrievalIndex:
    r = _Reader(buf, MAGIC_INDEX, "MPIX")
    n = r.positive("entry count")
    bits = r.positive("bits")
    dt = index_record_dtype(bits)
    rec = r.array(dt, n, "records")
    r.end()
    _check_unique(rec["id"], HEADER_INDEX, dt.itemsize, "MPIX")
    words = rec["words"].astype(np.uint64).reshape(n, -1)
    spare = n_words(bits) * 64 - bits
    if spare:
        high = np.uint64(((1 << spare) - 1) << (64 - spare))
        bad = np.nonzero(words[:, -1] & high)[0]
        if bad.size:
            word_at = HEADER_INDEX + int(bad[0]) * dt.itemsize + 12 + 8 * (words.shape[1] - 1)
            raise FormatError("MPIX: code has bits set above its length", word_at)
    return build_index_arrays(rec["id"], rec["label"], words, bits)


def write_index(ix: RetrievalIndex, path: PathLike) -> None:
    atomic_write(path, index_to_bytes(ix))


def read_index(path: PathLike) -> RetrievalIndex:
    return index_from_bytes(_read_bytes(path))


# -------------------------- models by magic --------------------------

Model = Union[MpcaModel, PcaModel, HashModel]

_WRITERS: Dict[type, Callable[[object], bytes]] = {
    MpcaModel: mpca_to_bytes,  # type: ignore[dict-item]
    PcaModel: pca_to_bytes,    # type: ignore[dict-item]
    HashModel: hash_to_bytes,  # type: ignore[dict-item]
}
_READERS: Dict[bytes, Callable[[bytes], Model]] = {
    MAGIC_MPCA: mpca_from_bytes,
    MAGIC_PCA: pca_from_bytes,
    MAGIC_HASH: hash_from_bytes,
}


def write_model(model: Model, path: PathLike) -> None:
    writer = _WRITERS.get(type(model))
    if writer is None:
        raise ArgumentError(f"no file format for {type(model).__name__}")
    atomic_write(path, writer(model))


def read_model(path: PathLike) -> Model:
    buf = _read_bytes(path)
    reader = _READERS.get(buf[:4])
    if reader is None:
        raise FormatError(f"unknown model magic {buf[:4]!r}", 0)
    return reader(buf)
