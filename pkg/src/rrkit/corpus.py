"""Labeled embedding corpora: loading, validation, normalization, synthesis.

Vectors are held as float32 (the on-disk precision of the binary format);
numeric transforms upcast to float64 internally and cast back on output,
so save/load round trips are bit-exact for both formats.
"""

from __future__ import annotations

import csv
import logging
import statistics
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

logger = logging.getLogger(__name__)

BINARY_MAGIC = b"RRK1"
SPLITS = ("train", "test")
CSV_FLOAT_DIGITS = 9
VARIANCE_FLOOR = 1e-12


class CorpusFormatError(ValueError):
    """An embedding file does not conform to the expected on-disk format."""


@dataclass(frozen=True, eq=False)
class Sample:
    """One labeled embedding: (sample_id, writer_id, feature vector)."""

    sample_id: str
    writer_id: str
    vector: np.ndarray


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """Immutable, split-tagged collection of labeled embedding vectors.

    Invariants enforced at construction: 2-D float32 matrix, finite entries,
    unique sample ids, one shared dimension, at least one sample.
    """

    sample_ids: tuple[str, ...]
    writer_ids: tuple[str, ...]
    vectors: np.ndarray
    split: str = "test"

    def __post_init__(self) -> None:
        vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise ValueError(f"vectors must be a 2-D matrix, got ndim={vectors.ndim}")
        n = vectors.shape[0]
        if n == 0:
            raise ValueError("embedding set is empty")
        sample_ids = tuple(str(s) for s in self.sample_ids)
        writer_ids = tuple(str(w) for w in self.writer_ids)
        if len(sample_ids) != n or len(writer_ids) != n:
            raise ValueError(
                f"id/label count mismatch: {len(sample_ids)} ids, "
                f"{len(writer_ids)} writers, {n} vectors"
            )
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        bad = ~np.isfinite(vectors).all(axis=1)
        if bad.any():
            raise ValueError(
                f"non-finite vector for sample {sample_ids[int(np.flatnonzero(bad)[0])]!r}"
            )
        if len(set(sample_ids)) != n:
            seen: set[str] = set()
            for s in sample_ids:
                if s in seen:
                    raise ValueError(f"duplicate sample_id {s!r}")
                seen.add(s)
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "sample_ids", sample_ids)
        object.__setattr__(self, "writer_ids", writer_ids)
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(sample_ids)})

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return int(self.vectors.shape[0])

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self.sample(i)

    def sample(self, i: int) -> Sample:
        return Sample(self.sample_ids[i], self.writer_ids[i], self.vectors[i])

    def index_of(self, sample_id: str) -> int:
        try:
            return self._index[sample_id]  # type: ignore[attr-defined]
        except KeyError:
            raise ValueError(f"unknown sample_id {sample_id!r}") from None

    def writer_of(self, sample_id: str) -> str:
        return self.writer_ids[self.index_of(sample_id)]

    @property
    def writers(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.writer_ids)))

    def with_vectors(self, vectors: np.ndarray, split: str | None = None) -> "EmbeddingSet":
        """New set with the same ids/labels but replaced vectors."""
        return EmbeddingSet(
            self.sample_ids, self.writer_ids, vectors,
            self.split if split is None else split,
        )

    def equals(self, other: "EmbeddingSet") -> bool:
        return (
            self.sample_ids == other.sample_ids
            and self.writer_ids == other.writer_ids
            and self.split == other.split
            and self.vectors.shape == other.vectors.shape
            and bool(np.array_equal(self.vectors, other.vectors))
        )


@dataclass(frozen=True)
class GallerySizeProfile:
    """Per-writer sample counts n_G with min/median/max summaries."""

    counts: dict[str, int]

    def __post_init__(self) -> None:
        if not self.counts:
            raise ValueError("empty gallery profile")
        if any(c < 1 for c in self.counts.values()):
            raise ValueError("gallery counts must be >= 1")

    @classmethod
    def of(cls, embeddings: EmbeddingSet) -> "GallerySizeProfile":
        counts: dict[str, int] = {}
        for w in embeddings.writer_ids:
            counts[w] = counts.get(w, 0) + 1
        return cls(counts)

    @property
    def min(self) -> int:
        return min(self.counts.values())

    @property
    def median(self) -> float:
        return float(statistics.median(self.counts.values()))

    @property
    def max(self) -> int:
        return max(self.counts.values())

    def summary(self) -> str:
        return (
            f"{len(self.counts)} writers, n_G min/median/max = "
            f"{self.min}/{self.median:g}/{self.max}"
        )


def ensure_writer_disjoint(a: EmbeddingSet, b: EmbeddingSet) -> None:
    """Raise if the two sets share any writer (train/test leakage guard)."""
    shared = set(a.writer_ids) & set(b.writer_ids)
    if shared:
        raise ValueError(f"sets share writers: {sorted(shared)[:5]}")


# ---------------------------------------------------------------------------
# on-disk formats


def _format_of(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("csv", "binary"):
            raise ValueError(f"format must be 'csv' or 'binary', got {fmt!r}")
        return fmt
    if path.suffix.lower() == ".csv":
        return "csv"
    return "binary"


def load_embeddings(path, fmt: str | None = None, split: str = "test") -> EmbeddingSet:
    """Load an EmbeddingSet from CSV or binary; format inferred from suffix.

    Malformed input raises CorpusFormatError naming the offending row/offset.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusFormatError(f"{path}: file does not exist")
    if _format_of(path, fmt) == "csv":
        return _load_csv(path, split)
    return _load_binary(path, split)


def save_embeddings(embeddings: EmbeddingSet, path, fmt: str | None = None) -> None:
    path = Path(path)
    if _format_of(path, fmt) == "csv":
        _save_csv(embeddings, path)
    else:
        _save_binary(embeddings, path)


def _load_csv(path: Path, split: str) -> EmbeddingSet:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise CorpusFormatError(f"{path}: empty file")
        if len(header) < 3 or header[0] != "sample_id" or header[1] != "writer_id":
            raise CorpusFormatError(
                f"{path}: row 1: header must be sample_id,writer_id,f0,...  got {header[:3]}"
            )
        dim = len(header) - 2
        ids: list[str] = []
        writers: list[str] = []
        rows: list[list[float]] = []
        seen: set[str] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 2:
                raise CorpusFormatError(
                    f"{path}: row {lineno}: expected {dim + 2} fields "
                    f"(dim {dim}), got {len(row)}"
                )
            sid = row[0]
            if sid in seen:
                raise CorpusFormatError(f"{path}: row {lineno}: duplicate sample_id {sid!r}")
            seen.add(sid)
            try:
                values = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise CorpusFormatError(f"{path}: row {lineno}: {exc}") from None
            ids.append(sid)
            writers.append(row[1])
            rows.append(values)
        if not rows:
            raise CorpusFormatError(f"{path}: no data rows")
    return EmbeddingSet(tuple(ids), tuple(writers), np.array(rows, dtype=np.float32), split)


def _save_csv(embeddings: EmbeddingSet, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["sample_id", "writer_id"] + [f"f{j}" for j in range(embeddings.dim)]
        )
        for i in range(len(embeddings)):
            writer.writerow(
                [embeddings.sample_ids[i], embeddings.writer_ids[i]]
                + [f"{v:.{CSV_FLOAT_DIGITS}g}" for v in embeddings.vectors[i]]
            )


def _load_binary(path: Path, split: str) -> EmbeddingSet:
    blob = path.read_bytes()
    if len(blob) == 0:
        raise CorpusFormatError(f"{path}: empty file")
    if blob[:4] != BINARY_MAGIC:
        raise CorpusFormatError(f"{path}: bad magic {blob[:4]!r}, expected {BINARY_MAGIC!r}")
    if len(blob) < 12:
        raise CorpusFormatError(f"{path}: truncated header")
    count, dim = struct.unpack_from("<II", blob, 4)
    if count == 0:
        raise CorpusFormatError(f"{path}: zero samples")
    offset = 12
    ids: list[str] = []
    writers: list[str] = []
    vectors = np.empty((count, dim), dtype=np.float32)

    def read_str(off: int, what: str, i: int) -> tuple[str, int]:
        if off + 4 > len(blob):
            raise CorpusFormatError(f"{path}: sample {i}: truncated {what} length")
        (n,) = struct.unpack_from("<I", blob, off)
        off += 4
        if off + n > len(blob):
            raise CorpusFormatError(f"{path}: sample {i}: truncated {what}")
        return blob[off : off + n].decode("utf-8"), off + n

    seen: set[str] = set()
    for i in range(count):
        sid, offset = read_str(offset, "sample_id", i)
        wid, offset = read_str(offset, "writer_id", i)
        if sid in seen:
            raise CorpusFormatError(f"{path}: sample {i}: duplicate sample_id {sid!r}")
        seen.add(sid)
        nbytes = 4 * dim
        if offset + nbytes > len(blob):
            raise CorpusFormatError(f"{path}: sample {i}: truncated vector")
        vectors[i] = np.frombuffer(blob, dtype="<f4", count=dim, offset=offset)
        offset += nbytes
        ids.append(sid)
        writers.append(wid)
    return EmbeddingSet(tuple(ids), tuple(writers), vectors, split)


def _save_binary(embeddings: EmbeddingSet, path: Path) -> None:
    parts = [BINARY_MAGIC, struct.pack("<II", len(embeddings), embeddings.dim)]
    for i in range(len(embeddings)):
        for text in (embeddings.sample_ids[i], embeddings.writer_ids[i]):
            raw = text.encode("utf-8")
            parts.append(struct.pack("<I", len(raw)))
            parts.append(raw)
        parts.append(embeddings.vectors[i].astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


# ---------------------------------------------------------------------------
# normalizations


def l2_normalize(embeddings: EmbeddingSet) -> EmbeddingSet:
    """Scale every vector to unit Euclidean norm. Zero vectors are an error."""
    x = embeddings.vectors.astype(np.float64)
    norms = np.linalg.norm(x, axis=1)
    zero = norms == 0.0
    if zero.any():
        sid = embeddings.sample_ids[int(np.flatnonzero(zero)[0])]
        raise ValueError(f"cannot l2-normalize zero vector (sample {sid!r})")
    return embeddings.with_vectors(x / norms[:, None])


def power_normalize(embeddings: EmbeddingSet) -> EmbeddingSet:
    """Signed square root per element: x -> sign(x) * sqrt(|x|)."""
    x = embeddings.vectors.astype(np.float64)
    return embeddings.with_vectors(np.sign(x) * np.sqrt(np.abs(x)))


@dataclass(frozen=True, eq=False)
class WhiteningModel:
    """PCA-whitening transform fitted on a training split.

    transform(x) = ((x - mean) @ basis) * scales, basis columns being the
    leading covariance eigenvectors and scales = 1/sqrt(eigenvalue + floor).
    """

    mean: np.ndarray
    basis: np.ndarray
    scales: np.ndarray

    @property
    def out_dim(self) -> int:
        return int(self.basis.shape[1])

    def transform(self, vectors: np.ndarray) -> np.ndarray:
        x = np.asarray(vectors, dtype=np.float64)
        return (x - self.mean) @ self.basis * self.scales

    def apply(self, embeddings: EmbeddingSet) -> EmbeddingSet:
        return embeddings.with_vectors(self.transform(embeddings.vectors))


def pca_whiten(
    train: EmbeddingSet, apply_to: EmbeddingSet, out_dim: int
) -> tuple[EmbeddingSet, WhiteningModel]:
    """Fit PCA-whitening on `train` only; return (transformed apply_to, model).

    Components are ordered by descending variance; eigenvalues get a small
    floor before the inverse-sqrt scaling so degenerate directions stay finite.
    """
    d = train.dim
    if apply_to.dim != d:
        raise ValueError(f"dimension mismatch: train {d}, apply_to {apply_to.dim}")
    if not 1 <= out_dim <= d:
        raise ValueError(f"out_dim must be in [1, {d}], got {out_dim}")
    n = len(train)
    if n < max(2, out_dim):
        raise ValueError(f"need at least {max(2, out_dim)} train samples, got {n}")
    x = train.vectors.astype(np.float64)
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:out_dim]
    basis = eigvecs[:, order]
    scales = 1.0 / np.sqrt(eigvals[order] + VARIANCE_FLOOR)
    model = WhiteningModel(mean=mean, basis=basis, scales=scales)
    return model.apply(apply_to), model


# ---------------------------------------------------------------------------
# synthetic corpora


def generate_synthetic(
    writers: int,
    gallery_size_range: tuple[int, int],
    dim: int,
    cluster_spread: float,
    seed: int,
    split: str = "test",
    writer_prefix: str = "w",
) -> EmbeddingSet:
    """Isotropic Gaussian clusters, one unit-norm center per writer.

    Deterministic given the seed; with cluster_spread=0 all samples of a
    writer coincide with its center.
    """
    lo, hi = gallery_size_range
    if writers < 2:
        raise ValueError(f"need at least 2 writers, got {writers}")
    if lo < 2 or hi < lo:
        raise ValueError(f"invalid gallery size range ({lo}, {hi}); need 2 <= min <= max")
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if cluster_spread < 0:
        raise ValueError(f"cluster_spread must be >= 0, got {cluster_spread}")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((writers, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    counts = rng.integers(lo, hi + 1, size=writers)
    ids: list[str] = []
    labels: list[str] = []
    blocks: list[np.ndarray] = []
    for i in range(writers):
        wid = f"{writer_prefix}{i:04d}"
        n_i = int(counts[i])
        noise = rng.standard_normal((n_i, dim))
        blocks.append(centers[i] + cluster_spread * noise)
        ids.extend(f"{wid}_s{j:04d}" for j in range(n_i))
        labels.extend([wid] * n_i)
    return EmbeddingSet(tuple(ids), tuple(labels), np.vstack(blocks), split)
