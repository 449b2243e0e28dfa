"""Domain types and file I/O for embeddings, metadata, trials and scores.

On-disk formats
---------------
Binary embedding file: magic ``EMB1``, u32-LE sample count N, u32-LE dim D,
then N records of [u16-LE id byte length, UTF-8 id bytes], then an N x D
float32-LE row-major matrix.  Values are promoted to float64 in memory.

Embedding TSV: header ``sample_id<TAB>v0<TAB>...``, one row per sample,
floats printed with 17 significant digits (lossless for float64).

Metadata TSV: five headerless columns
``sample_id  speaker_id  session_id  domain  condition``.

Trial TSV: three headerless columns ``enroll_id  test_id  label`` with
label in {tgt, imp}.  Score TSV adds a fourth column ``llr``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError

TARGET = "target"
IMPOSTOR = "impostor"

_LABEL_TOKENS = {"tgt": TARGET, "imp": IMPOSTOR}
_TOKEN_OF_LABEL = {TARGET: "tgt", IMPOSTOR: "imp"}

_MAGIC = b"EMB1"


@dataclass(frozen=True)
class SampleMeta:
    sample_id: str
    speaker_id: str
    session_id: str
    domain: str
    condition: str

    def __post_init__(self):
        for name in ("sample_id", "speaker_id", "session_id", "domain", "condition"):
            if not getattr(self, name):
                raise DataFormatError(f"SampleMeta.{name} must be non-empty")


@dataclass(frozen=True)
class Trial:
    enroll_id: str
    test_id: str
    label: str

    def __post_init__(self):
        if self.label not in (TARGET, IMPOSTOR):
            raise DataFormatError(f"unknown trial label {self.label!r}")


class EmbeddingSet:
    """Ordered collection of fixed-dimension vectors with optional metadata.

    Vectors are float64 in memory.  Metadata is attached separately (it
    travels in its own TSV) and may cover only part of the set unless a
    caller requires completeness.
    """

    def __init__(self, ids, vectors, meta=None):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise DataFormatError("vectors must be a 2-D array")
        if len(ids) != vectors.shape[0]:
            raise DataFormatError("ids and vectors disagree on sample count")
        if not np.all(np.isfinite(vectors)):
            raise DataFormatError("non-finite embedding value")
        seen = set()
        for sid in ids:
            if not sid:
                raise DataFormatError("empty sample_id")
            if sid in seen:
                raise DataFormatError(f"duplicate sample_id {sid!r}")
            seen.add(sid)
        self.ids = list(ids)
        self.vectors = vectors
        self.meta = dict(meta) if meta else {}
        self._row_of = {sid: i for i, sid in enumerate(self.ids)}

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def row(self, sample_id: str) -> int:
        try:
            return self._row_of[sample_id]
        except KeyError:
            raise KeyError(f"unknown sample_id {sample_id!r}") from None

    def vector(self, sample_id: str) -> np.ndarray:
        return self.vectors[self.row(sample_id)]

    def samples(self):
        """Yield (SampleMeta | None, vector) pairs in storage order."""
        for sid, vec in zip(self.ids, self.vectors):
            yield self.meta.get(sid), vec

    def with_metadata(self, meta: dict[str, SampleMeta], require_complete=True) -> "EmbeddingSet":
        missing = [sid for sid in self.ids if sid not in meta]
        if require_complete and missing:
            raise DataFormatError(
                f"{len(missing)} samples missing metadata rows, first: {missing[0]!r}"
            )
        kept = {sid: meta[sid] for sid in self.ids if sid in meta}
        return EmbeddingSet(self.ids, self.vectors, kept)

    def subset(self, sample_ids) -> "EmbeddingSet":
        rows = [self.row(sid) for sid in sample_ids]
        meta = {sid: self.meta[sid] for sid in sample_ids if sid in self.meta}
        return EmbeddingSet(list(sample_ids), self.vectors[rows], meta)


@dataclass
class ScoreSet:
    trials: list[Trial]
    scores: np.ndarray
    kind: str = "raw"

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 1 or len(self.trials) != self.scores.shape[0]:
            raise DataFormatError("trials and scores must be parallel lists")
        if not np.all(np.isfinite(self.scores)):
            raise DataFormatError("non-finite score")
        if self.kind not in ("raw", "llr"):
            raise DataFormatError(f"unknown score kind {self.kind!r}")

    def labels(self) -> np.ndarray:
        """Boolean array, True for target trials."""
        return np.fromiter((t.label == TARGET for t in self.trials), dtype=bool,
                           count=len(self.trials))

    def __len__(self) -> int:
        return len(self.trials)


# ---------------------------------------------------------------------------
# embeddings


def write_embeddings(emb: EmbeddingSet, path, format="binary") -> None:
    path = Path(path)
    if format == "binary":
        _write_binary(emb, path)
    elif format == "tsv":
        _write_tsv(emb, path)
    else:
        raise ValueError(f"unknown embedding format {format!r}")


def read_embeddings(path, format="binary") -> EmbeddingSet:
    path = Path(path)
    if format == "binary":
        return _read_binary(path)
    if format == "tsv":
        return _read_tsv(path)
    raise ValueError(f"unknown embedding format {format!r}")


def _write_binary(emb: EmbeddingSet, path: Path) -> None:
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", len(emb), emb.dim))
        for sid in emb.ids:
            raw = sid.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise DataFormatError(f"sample_id too long: {sid[:32]!r}...")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
        f.write(np.ascontiguousarray(emb.vectors, dtype="<f4").tobytes())


def _read_binary(path: Path) -> EmbeddingSet:
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != _MAGIC:
        raise DataFormatError(f"{path}: not a binary embedding file (bad magic)")
    n, dim = struct.unpack_from("<II", blob, 4)
    if n == 0:
        raise DataFormatError(f"{path}: no samples")
    off = 12
    ids = []
    for i in range(n):
        if off + 2 > len(blob):
            raise DataFormatError(f"{path}: truncated id table at record {i}")
        (ln,) = struct.unpack_from("<H", blob, off)
        off += 2
        if off + ln > len(blob):
            raise DataFormatError(f"{path}: truncated id at record {i}")
        ids.append(blob[off:off + ln].decode("utf-8"))
        off += ln
    need = n * dim * 4
    if len(blob) - off != need:
        raise DataFormatError(
            f"{path}: expected {need} matrix bytes at offset {off}, found {len(blob) - off}"
        )
    mat = np.frombuffer(blob, dtype="<f4", count=n * dim, offset=off)
    mat = mat.astype(np.float64).reshape(n, dim)
    if not np.all(np.isfinite(mat)):
        raise DataFormatError(f"{path}: non-finite embedding value")
    return EmbeddingSet(ids, mat)


def _write_tsv(emb: EmbeddingSet, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        header = "sample_id\t" + "\t".join(f"v{i}" for i in range(emb.dim))
        f.write(header + "\n")
        for sid, vec in zip(emb.ids, emb.vectors):
            f.write(sid + "\t" + "\t".join(f"{v:.17g}" for v in vec) + "\n")


def _read_tsv(path: Path) -> EmbeddingSet:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise DataFormatError(f"{path}: no samples")
    header = lines[0].split("\t")
    if header[0] != "sample_id" or len(header) < 2:
        raise DataFormatError(f"{path}: malformed header")
    dim = len(header) - 1
    ids, rows = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != dim + 1:
            raise DataFormatError(
                f"{path}: row {lineno - 1} has {len(parts) - 1} values, expected {dim}"
            )
        ids.append(parts[0])
        try:
            rows.append([float(p) for p in parts[1:]])
        except ValueError:
            raise DataFormatError(f"{path}: bad float at line {lineno}") from None
    if not ids:
        raise DataFormatError(f"{path}: no samples")
    return EmbeddingSet(ids, np.array(rows))


# ---------------------------------------------------------------------------
# metadata


def write_metadata(meta: dict[str, SampleMeta], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for sid in meta:
            m = meta[sid]
            f.write("\t".join((m.sample_id, m.speaker_id, m.session_id,
                               m.domain, m.condition)) + "\n")


def read_metadata(path) -> dict[str, SampleMeta]:
    meta = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise DataFormatError(f"{path}: line {lineno} has {len(parts)} columns, expected 5")
        m = SampleMeta(*parts)
        if m.sample_id in meta:
            raise DataFormatError(f"{path}: duplicate sample_id {m.sample_id!r} at line {lineno}")
        meta[m.sample_id] = m
    return meta


# ---------------------------------------------------------------------------
# trials and scores


def write_trials(trials, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t in trials:
            f.write(f"{t.enroll_id}\t{t.test_id}\t{_TOKEN_OF_LABEL[t.label]}\n")


def read_trials(path) -> list[Trial]:
    trials = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataFormatError(f"{path}: line {lineno} has {len(parts)} columns, expected 3")
        if parts[2] not in _LABEL_TOKENS:
            raise DataFormatError(f"{path}: line {lineno}: unknown label token {parts[2]!r}")
        trials.append(Trial(parts[0], parts[1], _LABEL_TOKENS[parts[2]]))
    return trials


def write_scores(scores: ScoreSet, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t, s in zip(scores.trials, scores.scores):
            f.write(f"{t.enroll_id}\t{t.test_id}\t{_TOKEN_OF_LABEL[t.label]}\t{s:.17g}\n")


def read_scores(path, kind="llr") -> ScoreSet:
    trials, values = [], []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataFormatError(f"{path}: line {lineno} has {len(parts)} columns, expected 4")
        if parts[2] not in _LABEL_TOKENS:
            raise DataFormatError(f"{path}: line {lineno}: unknown label token {parts[2]!r}")
        trials.append(Trial(parts[0], parts[1], _LABEL_TOKENS[parts[2]]))
        try:
            values.append(float(parts[3]))
        except ValueError:
            raise DataFormatError(f"{path}: line {lineno}: bad score {parts[3]!r}") from None
    return ScoreSet(trials, np.array(values), kind=kind)
