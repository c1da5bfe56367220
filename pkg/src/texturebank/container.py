"""The "TBMK" binary model container.

Layout: magic "TBMK", u16 version, u16 section count; then per section a
4-byte tag, u32 payload length, u32 CRC32 of the payload, and the payload.
Mixture/PCA/k-means parameters are stored as f64 LE; classifier weights as
f32 LE with f64 biases. A JSON metadata section carries the pipeline
configuration so loaded models are self-describing.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    DimensionError,
    TruncatedError,
    UnsupportedVersionError,
)
from .gmm import GmmModel
from .image import atomic_write_bytes
from .pca import PcaModel
from .svm import SvmBank

CONTAINER_MAGIC = b"TBMK"
CONTAINER_VERSION = 1


@dataclass
class ModelContainer:
    gmm: GmmModel | None = None
    pca: PcaModel | None = None
    kmeans_centers: np.ndarray | None = None
    svm: SvmBank | None = None
    metadata: dict = field(default_factory=dict)

    def validate_dimensions(self) -> None:
        """Dimension compatibility across sections, before any computation."""
        desc_dim = None
        if self.pca is not None:
            desc_dim = self.pca.out_dim
        if self.gmm is not None:
            if desc_dim is not None and self.gmm.dim != desc_dim:
                raise DimensionError(
                    f"mixture dim {self.gmm.dim} != PCA output dim {desc_dim}"
                )
            desc_dim = self.gmm.dim
        if self.kmeans_centers is not None and desc_dim is not None:
            if self.kmeans_centers.shape[1] != desc_dim:
                raise DimensionError("k-means center dim inconsistent with codebook dim")
        if self.svm is not None:
            encoding = self.metadata.get("encoder", "fv")
            expect = None
            if encoding == "fv" and self.gmm is not None:
                expect = 2 * self.gmm.k * self.gmm.dim
            elif encoding == "vlad" and self.kmeans_centers is not None:
                expect = self.kmeans_centers.size
            elif encoding == "bow" and self.kmeans_centers is not None:
                expect = self.kmeans_centers.shape[0]
            if expect is not None and self.svm.dim != expect:
                raise DimensionError(
                    f"classifier dim {self.svm.dim} != encoded descriptor dim {expect}"
                )


def _pack_gmm(gmm: GmmModel) -> bytes:
    head = struct.pack("<II", gmm.k, gmm.dim)
    return (
        head
        + gmm.weights.astype("<f8").tobytes()
        + gmm.means.astype("<f8").tobytes()
        + gmm.variances.astype("<f8").tobytes()
    )


def _unpack_gmm(buf: bytes) -> GmmModel:
    k, d = struct.unpack_from("<II", buf)
    off = 8
    w = np.frombuffer(buf, "<f8", k, off).copy()
    off += 8 * k
    m = np.frombuffer(buf, "<f8", k * d, off).reshape(k, d).copy()
    off += 8 * k * d
    v = np.frombuffer(buf, "<f8", k * d, off).reshape(k, d).copy()
    return GmmModel(weights=w, means=m, variances=v)


def _pack_pca(pca: PcaModel) -> bytes:
    head = struct.pack("<II", pca.out_dim, pca.in_dim)
    return (
        head
        + pca.mean.astype("<f8").tobytes()
        + pca.components.astype("<f8").tobytes()
        + pca.eigenvalues.astype("<f8").tobytes()
    )


def _unpack_pca(buf: bytes) -> PcaModel:
    od, d = struct.unpack_from("<II", buf)
    off = 8
    mean = np.frombuffer(buf, "<f8", d, off).copy()
    off += 8 * d
    comps = np.frombuffer(buf, "<f8", od * d, off).reshape(od, d).copy()
    off += 8 * od * d
    vals = np.frombuffer(buf, "<f8", od, off).copy()
    return PcaModel(mean=mean, components=comps, eigenvalues=vals)


def _pack_kmeans(centers: np.ndarray) -> bytes:
    k, d = centers.shape
    return struct.pack("<II", k, d) + centers.astype("<f8").tobytes()


def _unpack_kmeans(buf: bytes) -> np.ndarray:
    k, d = struct.unpack_from("<II", buf)
    return np.frombuffer(buf, "<f8", k * d, 8).reshape(k, d).copy()


def _pack_svm(bank: SvmBank) -> bytes:
    names = json.dumps(
        {
            "classes": list(bank.classes),
            "skipped": list(bank.skipped),
            "degenerate": list(bank.degenerate),
            "calibrated": bank.calibrated,
            "objectives": list(bank.objectives),
        }
    ).encode("utf-8")
    head = struct.pack("<III", len(bank.classes), bank.dim, len(names))
    body = [head, names]
    for ci in range(len(bank.classes)):
        body.append(bank.weights[ci].astype("<f4").tobytes())
        body.append(struct.pack("<d", float(bank.biases[ci])))
    return b"".join(body)


def _unpack_svm(buf: bytes) -> SvmBank:
    n, dim, name_len = struct.unpack_from("<III", buf)
    off = 12
    meta = json.loads(buf[off : off + name_len].decode("utf-8"))
    off += name_len
    ws = np.empty((n, dim), dtype=np.float64)
    bs = np.empty(n, dtype=np.float64)
    for ci in range(n):
        ws[ci] = np.frombuffer(buf, "<f4", dim, off).astype(np.float64)
        off += 4 * dim
        (bs[ci],) = struct.unpack_from("<d", buf, off)
        off += 8
    return SvmBank(
        classes=tuple(meta["classes"]),
        weights=ws,
        biases=bs,
        objectives=tuple(meta["objectives"]),
        calibrated=bool(meta["calibrated"]),
        skipped=tuple(meta["skipped"]),
        degenerate=tuple(meta["degenerate"]),
    )


def write_container(model: ModelContainer) -> bytes:
    sections: list[tuple[bytes, bytes]] = []
    if model.gmm is not None:
        sections.append((b"GMM ", _pack_gmm(model.gmm)))
    if model.pca is not None:
        sections.append((b"PCA ", _pack_pca(model.pca)))
    if model.kmeans_centers is not None:
        sections.append((b"KMS ", _pack_kmeans(np.asarray(model.kmeans_centers, np.float64))))
    if model.svm is not None:
        sections.append((b"SVM ", _pack_svm(model.svm)))
    sections.append((b"META", json.dumps(model.metadata, sort_keys=True).encode("utf-8")))
    out = [struct.pack("<4sHH", CONTAINER_MAGIC, CONTAINER_VERSION, len(sections))]
    for tag, payload in sections:
        out.append(struct.pack("<4sII", tag, len(payload), zlib.crc32(payload)))
        out.append(payload)
    return b"".join(out)


def read_container(buf: bytes) -> ModelContainer:
    if buf[:4] != CONTAINER_MAGIC:
        raise BadMagicError(f"bad container magic {buf[:4]!r}")
    if len(buf) < 8:
        raise TruncatedError("container shorter than its header")
    version, n_sections = struct.unpack_from("<HH", buf, 4)
    if version != CONTAINER_VERSION:
        raise UnsupportedVersionError(f"container version {version} not supported")
    model = ModelContainer()
    pos = 8
    for _ in range(n_sections):
        if pos + 12 > len(buf):
            raise TruncatedError("container truncated in a section header")
        tag, length, crc = struct.unpack_from("<4sII", buf, pos)
        pos += 12
        if pos + length > len(buf):
            raise TruncatedError(f"container truncated in section {tag!r}")
        payload = buf[pos : pos + length]
        pos += length
        if zlib.crc32(payload) != crc:
            raise ChecksumError(f"checksum mismatch in section {tag!r}")
        if tag == b"GMM ":
            model.gmm = _unpack_gmm(payload)
        elif tag == b"PCA ":
            model.pca = _unpack_pca(payload)
        elif tag == b"KMS ":
            model.kmeans_centers = _unpack_kmeans(payload)
        elif tag == b"SVM ":
            model.svm = _unpack_svm(payload)
        elif tag == b"META":
            model.metadata = json.loads(payload.decode("utf-8"))
        else:
            raise UnsupportedVersionError(f"unknown section tag {tag!r}")
    model.validate_dimensions()
    return model


def write_container_file(path, model: ModelContainer) -> None:
    atomic_write_bytes(path, write_container(model))


def read_container_file(path) -> ModelContainer:
    return read_container(Path(path).read_bytes())
