"""Frame-log and trait-table ingestion, validation, and the joined cohort."""

from __future__ import annotations

import csv
import io
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, NamedTuple

import numpy as np

from .taxonomy import (
    EMOTIONS,
    FAMILIES,
    FAMILY_RANGES,
    FAMILY_TRAITS,
    TRAIT_NAMES,
    VIDEO_CATALOG,
    VIDEO_IDS,
    canonical_emotion,
    family_of,
)

log = logging.getLogger(__name__)

FRAME_COLUMNS = ("participant_id", "video_id", "timestamp_ms") + EMOTIONS
NO_FACE_SUM = 0.5
MAX_SCORE_SUM = 1.5
# frames already on the simplex are left untouched so re-ingestion is bit-exact
_RENORM_SLACK = 1e-12


class IngestError(ValueError):
    """Raised for malformed frame logs or trait tables."""

    def __init__(self, message: str, line: int | None = None, column: str | None = None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class EmotionFrame:
    timestamp_ms: int
    scores: tuple[float, ...]  # canonical EMOTIONS order

    def as_dict(self) -> dict[str, float]:
        return dict(zip(EMOTIONS, self.scores))


class FrameRecord(NamedTuple):
    participant_id: str
    video_id: int
    frame: EmotionFrame


def _open_text(source) -> IO[str]:
    if isinstance(source, (str, Path)):
        return open(source, encoding="utf-8", newline="")
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8"), newline="")
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def _video_id(raw, line: int) -> int:
    try:
        value = int(raw)
    except (TypeError, ValueError):
        raise IngestError(f"video_id {raw!r} is not an integer", line) from None
    if isinstance(raw, float) and raw != value:
        raise IngestError(f"video_id {raw!r} is not an integer", line)
    if value not in VIDEO_IDS:
        raise IngestError(f"video_id {value} outside 1..15", line)
    return value


def _record(obj: dict, line: int) -> FrameRecord:
    scores: dict[str, float] = {}
    for key, value in obj.items():
        if key in ("participant_id", "video_id", "timestamp_ms"):
            continue
        try:
            emotion = canonical_emotion(key)
        except KeyError:
            raise IngestError(f"unknown emotion key {key!r}", line) from None
        try:
            scores[emotion] = float(value)
        except (TypeError, ValueError):
            raise IngestError(f"score {key}={value!r} is not a number", line) from None
    for required in ("participant_id", "video_id", "timestamp_ms"):
        if obj.get(required) in (None, ""):
            raise IngestError(f"missing field {required!r}", line)
    missing = [e for e in EMOTIONS if e not in scores]
    if missing:
        raise IngestError(f"missing emotion key(s) {', '.join(map(repr, missing))}", line)
    try:
        ts = int(obj["timestamp_ms"])
    except (TypeError, ValueError):
        raise IngestError(f"timestamp_ms {obj['timestamp_ms']!r} is not an integer", line) from None
    if ts < 0:
        raise IngestError("timestamp_ms is negative", line)
    frame = EmotionFrame(ts, tuple(scores[e] for e in EMOTIONS))
    return FrameRecord(str(obj["participant_id"]), _video_id(obj["video_id"], line), frame)


def iter_frame_log(source, format: str = "jsonl") -> Iterator[FrameRecord]:
    """Yield frame records in input order; see :func:`parse_frame_log`."""
    if format not in ("jsonl", "csv"):
        raise ValueError(f"unknown frame log format {format!r}")
    fh = _open_text(source)
    try:
        if format == "jsonl":
            for lineno, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                try:
                    obj = json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise IngestError(f"invalid JSON ({exc.msg})", lineno) from None
                if not isinstance(obj, dict):
                    raise IngestError("record is not a JSON object", lineno)
                yield _record(obj, lineno)
        else:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                return
            header = [h.strip() for h in header]
            for row in reader:
                lineno = reader.line_num
                if not row:
                    continue
                if len(row) != len(header):
                    raise IngestError(
                        f"expected {len(header)} fields, found {len(row)}", lineno
                    )
                yield _record(dict(zip(header, row)), lineno)
    except UnicodeDecodeError as exc:
        raise IngestError(f"source is not valid UTF-8 ({exc.reason})") from None
    finally:
        if isinstance(source, (str, Path)):
            fh.close()


def parse_frame_log(source, format: str = "jsonl") -> list[FrameRecord]:
    """Parse a JSONL or CSV frame log.

    ``source`` may be a path, raw bytes, or a binary/text file object. Records
    are returned in input order; the first malformed line raises
    :class:`IngestError` carrying its line number.
    """
    records = list(iter_frame_log(source, format))
    log.info("parsed %d frame records", len(records))
    return records


@dataclass
class ValidationReport:
    total: int = 0
    retained: int = 0
    no_face: int = 0
    out_of_range: int = 0
    over_sum: int = 0
    duplicates: int = 0
    absent_streams: list[tuple[str, int]] = field(default_factory=list)

    def merge(self, other: "ValidationReport") -> "ValidationReport":
        return ValidationReport(
            total=self.total + other.total,
            retained=self.retained + other.retained,
            no_face=self.no_face + other.no_face,
            out_of_range=self.out_of_range + other.out_of_range,
            over_sum=self.over_sum + other.over_sum,
            duplicates=self.duplicates + other.duplicates,
            absent_streams=self.absent_streams + other.absent_streams,
        )

    @property
    def rejected(self) -> int:
        return self.out_of_range + self.over_sum

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "retained": self.retained,
            "no_face": self.no_face,
            "out_of_range": self.out_of_range,
            "over_sum": self.over_sum,
            "duplicates": self.duplicates,
            "absent_streams": [list(k) for k in self.absent_streams],
        }


@dataclass(frozen=True, eq=False)
class EmotionStream:
    """Validated frames of one participant watching one video.

    ``scores`` is an ``(n_frames, 7)`` array in canonical emotion order; an
    empty stream marks the (participant, video) pair as absent.
    """

    participant_id: str
    video_id: int
    timestamps: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        self.timestamps.setflags(write=False)
        self.scores.setflags(write=False)

    @property
    def absent(self) -> bool:
        return len(self.timestamps) == 0

    def __len__(self) -> int:
        return len(self.timestamps)

    def frames(self) -> list[EmotionFrame]:
        return [
            EmotionFrame(int(t), tuple(float(s) for s in row))
            for t, row in zip(self.timestamps, self.scores)
        ]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmotionStream):
            return NotImplemented
        return (
            self.participant_id == other.participant_id
            and self.video_id == other.video_id
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.scores, other.scores)
        )


def validate_and_normalize(
    frames: Iterable[EmotionFrame] | tuple[np.ndarray, np.ndarray],
    participant_id: str,
    video_id: int,
) -> tuple[EmotionStream, ValidationReport]:
    """Clean one (participant, video) frame sequence.

    Frames with a score outside [0, 1] are rejected, frames whose scores sum
    below 0.5 count as "no face detected", frames summing above 1.5 are
    rejected, and the rest are rescaled onto the simplex. Duplicate
    timestamps keep the frame that came later in the input.
    """
    if isinstance(frames, tuple):
        ts, scores = frames
        ts = np.asarray(ts, dtype=np.int64)
        scores = np.asarray(scores, dtype=float).reshape(len(ts), len(EMOTIONS))
    else:
        frames = list(frames)
        ts = np.fromiter((f.timestamp_ms for f in frames), dtype=np.int64, count=len(frames))
        scores = np.array([f.scores for f in frames], dtype=float).reshape(len(frames), len(EMOTIONS))
    report = ValidationReport(total=len(ts))

    in_range = np.all((scores >= 0.0) & (scores <= 1.0), axis=1)
    report.out_of_range = int((~in_range).sum())
    ts, scores = ts[in_range], scores[in_range]

    sums = scores.sum(axis=1)
    no_face = sums < NO_FACE_SUM
    over = sums > MAX_SCORE_SUM
    report.no_face = int(no_face.sum())
    report.over_sum = int(over.sum())
    keep = ~(no_face | over)
    ts, scores, sums = ts[keep], scores[keep].copy(), sums[keep]

    off = np.abs(sums - 1.0) > _RENORM_SLACK
    scores[off] /= sums[off, None]

    order = np.argsort(ts, kind="stable")
    ts, scores = ts[order], scores[order]
    if len(ts) > 1:
        # stable sort keeps input order among equal timestamps; keep the last
        last = np.append(ts[1:] != ts[:-1], True)
        report.duplicates = int((~last).sum())
        ts, scores = ts[last], scores[last]

    report.retained = len(ts)
    if report.retained == 0:
        report.absent_streams.append((participant_id, video_id))
    return EmotionStream(participant_id, video_id, ts, scores), report


def build_streams(
    records: Iterable[FrameRecord],
) -> tuple[dict[tuple[str, int], EmotionStream], ValidationReport]:
    """Group parsed records by (participant, video) and validate each group."""
    groups: dict[tuple[str, int], list[EmotionFrame]] = defaultdict(list)
    for rec in records:
        groups[(rec.participant_id, rec.video_id)].append(rec.frame)
    streams: dict[tuple[str, int], EmotionStream] = {}
    report = ValidationReport()
    for key in sorted(groups):
        stream, rep = validate_and_normalize(groups[key], *key)
        streams[key] = stream
        report = report.merge(rep)
    return streams, report


@dataclass(frozen=True, eq=False)
class TraitTable:
    """Trait scores keyed by participant; ``NaN`` marks a survey not taken."""

    participants: tuple[str, ...]
    scores: np.ndarray  # (n_participants, 22) in TRAIT_NAMES order

    def __post_init__(self):
        self.scores.setflags(write=False)

    def __len__(self) -> int:
        return len(self.participants)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TraitTable):
            return NotImplemented
        return self.participants == other.participants and np.array_equal(
            self.scores, other.scores, equal_nan=True
        )

    def column(self, trait: str) -> np.ndarray:
        return self.scores[:, TRAIT_NAMES.index(trait)]

    def row(self, participant_id: str) -> dict[str, float | None]:
        vals = self.scores[self.participants.index(participant_id)]
        return {t: (None if np.isnan(v) else float(v)) for t, v in zip(TRAIT_NAMES, vals)}

    def family_present(self, family: str) -> np.ndarray:
        idx = TRAIT_NAMES.index(FAMILY_TRAITS[family][0])
        return ~np.isnan(self.scores[:, idx])

    def subset(self, participants: Iterable[str]) -> "TraitTable":
        pos = {p: i for i, p in enumerate(self.participants)}
        ids = tuple(participants)
        return TraitTable(ids, self.scores[[pos[p] for p in ids]].copy())


def load_trait_table(
    source, ranges: dict[str, tuple[float, float]] | None = None
) -> TraitTable:
    """Read a trait CSV with a ``participant_id`` column and any trait columns.

    A family (e.g. all five Big Five columns) must be wholly present or wholly
    blank in each row. Scores outside the family's plausibility range raise
    :class:`IngestError` with the offending row and column.
    """
    ranges = {**FAMILY_RANGES, **(ranges or {})}
    fh = _open_text(source)
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestError("empty trait table")
        header = [h.strip() for h in header]
        if "participant_id" not in header:
            raise IngestError("header lacks participant_id", 1)
        unknown = [h for h in header if h != "participant_id" and h not in TRAIT_NAMES]
        if unknown:
            raise IngestError(f"unknown trait column(s) {', '.join(unknown)}", 1)
        for fam in FAMILIES:
            cols = [t for t in FAMILY_TRAITS[fam] if t in header]
            if cols and len(cols) != len(FAMILY_TRAITS[fam]):
                raise IngestError(
                    f"header has a partial {fam} family ({len(cols)} of {len(FAMILY_TRAITS[fam])} columns)", 1
                )
        pid_col = header.index("participant_id")
        ids: list[str] = []
        rows: list[np.ndarray] = []
        seen: set[str] = set()
        for raw in reader:
            lineno = reader.line_num
            if not raw or not any(c.strip() for c in raw):
                continue
            if len(raw) != len(header):
                raise IngestError(f"expected {len(header)} fields, found {len(raw)}", lineno)
            pid = raw[pid_col].strip()
            if not pid:
                raise IngestError("empty participant_id", lineno, "participant_id")
            if pid in seen:
                raise IngestError(f"duplicate participant_id {pid!r}", lineno, "participant_id")
            seen.add(pid)
            values = np.full(len(TRAIT_NAMES), np.nan)
            for col, cell in zip(header, raw):
                if col == "participant_id" or not cell.strip():
                    continue
                try:
                    x = float(cell)
                except ValueError:
                    raise IngestError(f"score {cell!r} is not a number", lineno, col) from None
                lo, hi = ranges[family_of(col)]
                if not (lo <= x <= hi):
                    raise IngestError(f"score {x} outside [{lo}, {hi}]", lineno, col)
                values[TRAIT_NAMES.index(col)] = x
            for fam in FAMILIES:
                present = [not np.isnan(values[TRAIT_NAMES.index(t)]) for t in FAMILY_TRAITS[fam]]
                if any(present) and not all(present):
                    raise IngestError(
                        f"partial {fam} family ({sum(present)} of {len(present)} scores)", lineno
                    )
            ids.append(pid)
            rows.append(values)
    finally:
        if isinstance(source, (str, Path)):
            fh.close()
    scores = np.vstack(rows) if rows else np.empty((0, len(TRAIT_NAMES)))
    return TraitTable(tuple(ids), scores)


@dataclass
class AssemblyReport:
    participants: int
    orphan_streams: list[str]
    trait_only: list[str]
    family_counts: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "participants": self.participants,
            "orphan_streams": self.orphan_streams,
            "trait_only": self.trait_only,
            "family_counts": self.family_counts,
        }


@dataclass(frozen=True, eq=False)
class Cohort:
    streams: dict[tuple[str, int], EmotionStream]
    traits: TraitTable
    catalog: dict[int, str] = field(default_factory=lambda: dict(VIDEO_CATALOG))
    cohort_id: str = ""

    @property
    def participants(self) -> tuple[str, ...]:
        return self.traits.participants

    def stream(self, participant_id: str, video_id: int) -> EmotionStream | None:
        s = self.streams.get((participant_id, video_id))
        return None if s is None or s.absent else s

    def family_n(self, family: str) -> int:
        return int(self.traits.family_present(family).sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Cohort):
            return NotImplemented
        return (
            self.traits == other.traits
            and self.catalog == other.catalog
            and self.streams.keys() == other.streams.keys()
            and all(self.streams[k] == other.streams[k] for k in self.streams)
        )


def assemble_cohort(
    streams: dict[tuple[str, int], EmotionStream],
    traits: TraitTable,
    cohort_id: str = "",
) -> tuple[Cohort, AssemblyReport]:
    """Join streams and traits on participant id.

    Participants need at least one non-empty stream and one trait family.
    Others are listed in the report as orphans (streams only) or trait-only.
    """
    with_streams = {pid for (pid, _), s in streams.items() if not s.absent}
    has_family = np.zeros(len(traits), dtype=bool)
    for fam in FAMILIES:
        has_family |= traits.family_present(fam)
    with_traits = {p for p, ok in zip(traits.participants, has_family) if ok}
    joined = sorted(with_streams & with_traits)
    if not joined:
        raise IngestError("no participant has both emotion streams and trait scores")
    kept = traits.subset(joined)
    cohort = Cohort(
        {k: s for k, s in streams.items() if k[0] in with_traits and not s.absent},
        kept,
        cohort_id=cohort_id,
    )
    report = AssemblyReport(
        participants=len(joined),
        orphan_streams=sorted(with_streams - with_traits),
        trait_only=sorted(set(traits.participants) - with_streams),
        family_counts={f: cohort.family_n(f) for f in FAMILIES},
    )
    return cohort, report


def write_frame_log(streams: Iterable[EmotionStream], fh: IO[str], format: str = "jsonl") -> int:
    """Serialize streams in the ingest format; returns the number of frames written."""
    n = 0
    if format == "csv":
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FRAME_COLUMNS)
    for s in streams:
        for t, row in zip(s.timestamps.tolist(), s.scores.tolist()):
            if format == "jsonl":
                rec = {"participant_id": s.participant_id, "video_id": s.video_id, "timestamp_ms": t}
                rec.update(zip(EMOTIONS, row))
                fh.write(json.dumps(rec) + "\n")
            else:
                writer.writerow([s.participant_id, s.video_id, t, *map(repr, row)])
            n += 1
    return n


def write_trait_table(traits: TraitTable, fh: IO[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(("participant_id",) + TRAIT_NAMES)
    for pid, row in zip(traits.participants, traits.scores.tolist()):
        writer.writerow([pid] + ["" if np.isnan(v) else repr(v) for v in row])


def load_cohort(frames_path, traits_path, format: str | None = None):
    """Parse, validate and join on-disk inputs. Returns (cohort, validation, assembly)."""
    frames_path = Path(frames_path)
    if format is None:
        format = "csv" if frames_path.suffix.lower() == ".csv" else "jsonl"
    streams, validation = build_streams(iter_frame_log(frames_path, format))
    traits = load_trait_table(traits_path)
    cohort, assembly = assemble_cohort(streams, traits)
    return cohort, validation, assembly
