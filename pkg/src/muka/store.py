"""Loading, validation, normalization, and persistence of embedding data.

This module is the only place that touches the filesystem formats:

* a binary matrix format for embedding exports (magic ``MUKA``, version 1,
  little-endian ``rows``/``dim`` header, float32 row-major payload), and
* a JSON dataset manifest tying together class names, per-space matrix
  files, train/test splits, and optional cross-validation folds.

Matrices are stored in 32-bit floats; everything downstream computes in
64-bit. All loaded embeddings are L2-normalized before any adapter sees
them, which makes dot products against text heads cosine similarities and
bounds squared distances by 4.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .errors import (
    BadMagic,
    ClassCountMismatch,
    FoldOverlap,
    NonFiniteValue,
    SampleCountMismatch,
    SchemaError,
    TruncatedPayload,
    VersionMismatch,
    ZeroNormRow,
)

MAGIC = b"MUKA"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")  # magic, version, rows, dim


# ---------------------------------------------------------------------------
# atomic writes

def atomic_write_bytes(path: Path | str, payload: bytes) -> None:
    """Write ``payload`` to ``path`` via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path | str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# embedding matrices

@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """A named feature space's row-major matrix of embedding vectors.

    ``values`` is read-only after construction. ``normalized`` records
    whether every row is unit-norm (within 1e-5); loaders always produce
    unnormalized matrices and :func:`l2_normalize` flips the flag.
    """

    space_name: str
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.ndim != 2:
            raise SchemaError(f"matrix must be 2-D, got ndim={arr.ndim}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise SchemaError(f"matrix must be at least 1x1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            bad = np.argwhere(~np.isfinite(arr))[0]
            raise NonFiniteValue(
                f"matrix {self.space_name!r} has a non-finite value at "
                f"row {bad[0]}, col {bad[1]}",
                row=int(bad[0]),
                col=int(bad[1]),
            )
        if self.normalized:
            norms = np.linalg.norm(arr.astype(np.float64), axis=1)
            if np.abs(norms - 1.0).max() > 1e-5:
                i = int(np.argmax(np.abs(norms - 1.0)))
                raise SchemaError(
                    f"matrix {self.space_name!r} is flagged normalized but row "
                    f"{i} has norm {norms[i]!r}"
                )
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def read_header(path: Path | str) -> tuple[int, int]:
    """Read (rows, dim) from a matrix file without loading the payload."""
    path = Path(path)
    with path.open("rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise TruncatedPayload(f"{path}: file shorter than the {_HEADER.size}-byte header")
    magic, version, rows, dim = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise BadMagic(f"{path}: expected magic {MAGIC!r}, found {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: unsupported format version {version}")
    if rows < 1 or dim < 1:
        raise SchemaError(f"{path}: header declares degenerate shape {rows}x{dim}")
    return int(rows), int(dim)


def load_matrix(path: Path | str, space: str | None = None) -> EmbeddingMatrix:
    """Load a binary matrix file.

    The returned matrix keeps the on-disk float32 values and is flagged
    unnormalized. ``space`` defaults to the file stem.
    """
    path = Path(path)
    rows, dim = read_header(path)
    with path.open("rb") as fh:
        fh.seek(_HEADER.size)
        payload = np.fromfile(fh, dtype="<f4")
    expected = rows * dim
    if payload.size != expected:
        raise TruncatedPayload(
            f"{path}: header declares {rows}x{dim} = {expected} values, "
            f"payload holds {payload.size}"
        )
    values = payload.reshape(rows, dim)
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise NonFiniteValue(
            f"{path}: non-finite value at row {bad[0]}, col {bad[1]}",
            row=int(bad[0]),
            col=int(bad[1]),
        )
    name = space if space is not None else path.stem
    return EmbeddingMatrix(space_name=name, values=values, normalized=False)


def write_matrix(matrix: EmbeddingMatrix, path: Path | str) -> None:
    """Persist a matrix in the binary format (float32 payload)."""
    payload = np.ascontiguousarray(matrix.values, dtype="<f4")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, matrix.rows, matrix.dim)
    atomic_write_bytes(path, header + payload.tobytes())


def l2_normalize(matrix: EmbeddingMatrix) -> EmbeddingMatrix:
    """Scale each row to unit Euclidean norm (computed in float64).

    Raises :class:`ZeroNormRow` for any exactly zero row. Idempotent up to
    float64 rounding; direction of every row is preserved.
    """
    values = matrix.values.astype(np.float64)
    norms = np.linalg.norm(values, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ZeroNormRow(int(zero[0]))
    return EmbeddingMatrix(
        space_name=matrix.space_name,
        values=values / norms[:, None],
        normalized=True,
    )


# ---------------------------------------------------------------------------
# zero-shot heads

@dataclass(frozen=True, eq=False)
class ZeroShotHead:
    """Class text embeddings as columns: ``weights`` has shape (dim, N)."""

    space_name: str
    weights: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.weights, dtype=np.float64)
        if arr.ndim != 2:
            raise SchemaError("head weights must be 2-D (dim x num_classes)")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue(f"head {self.space_name!r} has non-finite weights")
        norms = np.linalg.norm(arr, axis=0)
        if np.abs(norms - 1.0).max() > 1e-5:
            j = int(np.argmax(np.abs(norms - 1.0)))
            raise SchemaError(
                f"head {self.space_name!r} column {j} has norm {norms[j]!r}, "
                "expected unit columns"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "weights", arr)

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def from_class_rows(cls, space_name: str, rows: np.ndarray) -> "ZeroShotHead":
        """Build a head from an (N, dim) matrix of per-class embeddings."""
        m = l2_normalize(EmbeddingMatrix(space_name, np.asarray(rows, dtype=np.float64)))
        return cls(space_name=space_name, weights=m.values.T)


# ---------------------------------------------------------------------------
# manifests

@dataclass(frozen=True)
class SpaceRef:
    space_name: str
    dim: int
    audio_matrix_path: Path
    text_head_path: Path


@dataclass(frozen=True)
class FoldDef:
    train: tuple[int, ...]
    test: tuple[int, ...]


@dataclass(frozen=True)
class DatasetManifest:
    """Dataset description: classes, spaces, splits, optional folds.

    Sample indexing is shared across spaces: row i of every audio matrix
    is the same clip.
    """

    name: str
    class_names: tuple[str, ...]
    spaces: tuple[SpaceRef, ...]
    split_train: tuple[tuple[int, int], ...]
    split_test: tuple[tuple[int, int], ...]
    folds: tuple[FoldDef, ...] | None = None
    synth: dict | None = None
    path: Path | None = field(default=None, compare=False)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def space_names(self) -> tuple[str, ...]:
        return tuple(s.space_name for s in self.spaces)

    def labels_by_sample(self) -> dict[int, int]:
        """Mapping sample index -> class index over both splits."""
        out: dict[int, int] = {}
        for idx, cls in (*self.split_train, *self.split_test):
            out[idx] = cls
        return out


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise SchemaError(message)


def _parse_pairs(raw, key: str) -> tuple[tuple[int, int], ...]:
    _require(isinstance(raw, list), f"{key} must be a list of [sample, class] pairs")
    pairs = []
    for item in raw:
        _require(
            isinstance(item, list) and len(item) == 2
            and all(isinstance(v, int) and not isinstance(v, bool) for v in item),
            f"{key} entries must be [sample_index, class_index] integer pairs",
        )
        pairs.append((item[0], item[1]))
    return tuple(pairs)


def parse_manifest(path: Path | str) -> DatasetManifest:
    """Parse a manifest document without touching the referenced matrices."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not a valid manifest document: {exc}") from None
    _require(isinstance(raw, dict), f"{path}: manifest root must be an object")

    for key in ("name", "class_names", "spaces", "split_train", "split_test"):
        _require(key in raw, f"{path}: manifest is missing {key!r}")
    _require(isinstance(raw["name"], str), "name must be a string")
    _require(
        isinstance(raw["class_names"], list)
        and raw["class_names"]
        and all(isinstance(c, str) for c in raw["class_names"]),
        "class_names must be a nonempty list of strings",
    )

    base = path.parent
    spaces = []
    _require(isinstance(raw["spaces"], list) and raw["spaces"], "spaces must be a nonempty list")
    for s in raw["spaces"]:
        _require(isinstance(s, dict), "each space must be an object")
        for key in ("space_name", "dim", "audio_matrix_path", "text_head_path"):
            _require(key in s, f"space entry is missing {key!r}")
        _require(isinstance(s["dim"], int) and s["dim"] >= 1, "space dim must be a positive integer")
        spaces.append(
            SpaceRef(
                space_name=s["space_name"],
                dim=s["dim"],
                audio_matrix_path=base / s["audio_matrix_path"],
                text_head_path=base / s["text_head_path"],
            )
        )
    names = [s.space_name for s in spaces]
    _require(len(set(names)) == len(names), "space names must be unique")

    folds = None
    if raw.get("folds") is not None:
        _require(isinstance(raw["folds"], list) and raw["folds"], "folds must be a nonempty list")
        parsed = []
        for f in raw["folds"]:
            _require(
                isinstance(f, dict) and "train" in f and "test" in f,
                "each fold must be an object with train and test index lists",
            )
            for part in ("train", "test"):
                _require(
                    isinstance(f[part], list)
                    and all(isinstance(i, int) and not isinstance(i, bool) for i in f[part]),
                    f"fold {part} must be a list of integers",
                )
            parsed.append(FoldDef(train=tuple(f["train"]), test=tuple(f["test"])))
        folds = tuple(parsed)

    return DatasetManifest(
        name=raw["name"],
        class_names=tuple(raw["class_names"]),
        spaces=tuple(spaces),
        split_train=_parse_pairs(raw["split_train"], "split_train"),
        split_test=_parse_pairs(raw["split_test"], "split_test"),
        folds=folds,
        synth=raw.get("synth"),
        path=path,
    )


def manifest_checks(manifest: DatasetManifest) -> Iterator[tuple[str, Exception | None]]:
    """Yield (check name, error-or-None) for every cross-file invariant.

    Checks read only matrix headers; full payload validation happens at
    :meth:`Dataset.load`.
    """
    num_classes = manifest.num_classes

    def run(name, fn):
        try:
            fn()
            return name, None
        except Exception as exc:  # surfaced to the caller, never swallowed
            return name, exc

    def check_class_indices():
        for split_name, split in (
            ("split_train", manifest.split_train),
            ("split_test", manifest.split_test),
        ):
            for idx, cls in split:
                _require(
                    0 <= cls < num_classes,
                    f"{split_name} assigns sample {idx} to class {cls}, "
                    f"outside [0, {num_classes})",
                )
                _require(idx >= 0, f"{split_name} holds negative sample index {idx}")
        labels: dict[int, int] = {}
        for idx, cls in (*manifest.split_train, *manifest.split_test):
            if idx in labels and labels[idx] != cls:
                raise SchemaError(
                    f"sample {idx} is labeled both {labels[idx]} and {cls}"
                )
            labels[idx] = cls

    yield run("class indices within [0, N)", check_class_indices)

    headers: dict[str, tuple[int, int]] = {}

    def check_matrix_headers():
        for space in manifest.spaces:
            rows, dim = read_header(space.audio_matrix_path)
            _require(
                dim == space.dim,
                f"space {space.space_name!r} declares dim {space.dim} but its "
                f"audio matrix holds dim {dim}",
            )
            headers[space.space_name] = (rows, dim)

    yield run("audio matrix headers match declared dims", check_matrix_headers)

    def check_head_rows():
        for space in manifest.spaces:
            rows, dim = read_header(space.text_head_path)
            if rows != num_classes:
                raise ClassCountMismatch(
                    f"space {space.space_name!r} text head has {rows} rows for "
                    f"{num_classes} classes"
                )
            _require(
                dim == space.dim,
                f"space {space.space_name!r} text head dim {dim} != declared {space.dim}",
            )

    yield run("text heads have one row per class", check_head_rows)

    def check_sample_counts():
        counts = {name: rows for name, (rows, _) in headers.items()}
        if len(set(counts.values())) > 1:
            raise SampleCountMismatch(
                f"spaces disagree on sample count: {counts}"
            )
        if counts:
            n = next(iter(counts.values()))
            referenced = [idx for idx, _ in (*manifest.split_train, *manifest.split_test)]
            if manifest.folds:
                for f in manifest.folds:
                    referenced.extend(f.train)
                    referenced.extend(f.test)
            for idx in referenced:
                _require(
                    0 <= idx < n,
                    f"sample index {idx} outside the {n} stored samples",
                )

    yield run("all spaces share one sample indexing", check_sample_counts)

    def check_folds():
        if not manifest.folds:
            return
        indexed = {idx for idx, _ in (*manifest.split_train, *manifest.split_test)}
        for i, f in enumerate(manifest.folds):
            train, test = set(f.train), set(f.test)
            overlap = train & test
            if overlap:
                raise FoldOverlap(
                    f"fold {i} lists samples {sorted(overlap)[:5]} in both "
                    "train and test"
                )
            _require(
                train | test == indexed,
                f"fold {i} does not cover the indexed samples",
            )

    yield run("folds partition the indexed samples", check_folds)


def load_manifest(path: Path | str) -> DatasetManifest:
    """Parse a manifest and eagerly validate every cross-file invariant."""
    manifest = parse_manifest(path)
    for _, err in manifest_checks(manifest):
        if err is not None:
            raise err
    return manifest


# ---------------------------------------------------------------------------
# fully loaded datasets

@dataclass(frozen=True, eq=False)
class Dataset:
    """A manifest with all embeddings loaded, normalized, in memory.

    ``embeddings[space]`` is an (num_samples, dim) float64 array of
    unit-norm rows; ``heads[space]`` carries the per-class text embeddings
    of that space. Instances are immutable and safe for concurrent reads.
    """

    manifest: DatasetManifest
    embeddings: Mapping[str, np.ndarray]
    heads: Mapping[str, ZeroShotHead]

    @property
    def name(self) -> str:
        return self.manifest.name

    @property
    def space_names(self) -> tuple[str, ...]:
        return self.manifest.space_names

    @property
    def num_samples(self) -> int:
        first = self.manifest.spaces[0].space_name
        return self.embeddings[first].shape[0]

    @classmethod
    def load(cls, manifest_path: Path | str) -> "Dataset":
        """Load and L2-normalize every matrix the manifest references."""
        manifest = load_manifest(manifest_path)
        embeddings: dict[str, np.ndarray] = {}
        heads: dict[str, ZeroShotHead] = {}
        for space in manifest.spaces:
            audio = l2_normalize(load_matrix(space.audio_matrix_path, space=space.space_name))
            embeddings[space.space_name] = audio.values
            head_rows = l2_normalize(load_matrix(space.text_head_path, space=space.space_name))
            heads[space.space_name] = ZeroShotHead(
                space_name=space.space_name, weights=head_rows.values.T
            )
        return cls(manifest=manifest, embeddings=embeddings, heads=heads)
