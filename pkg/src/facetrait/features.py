"""Per-video aggregation of emotion streams into the 105-column feature matrix."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from .cohort import Cohort, EmotionStream
from .taxonomy import EMOTIONS, FEATURE_KEYS, FEATURE_NAMES, N_FEATURES, N_VIDEOS, VIDEO_IDS, FeatureKey

AGGREGATIONS = ("mean", "time_weighted", "max")


def aggregate_video(stream: EmotionStream, method: str = "mean") -> dict[str, float] | None:
    """Collapse one stream to a single value per emotion.

    ``mean`` (the default) is the unweighted per-frame average. The
    alternatives are ``time_weighted`` (each frame weighted by the gap to the
    next timestamp, the last frame by the median gap) and ``max``. Returns
    ``None`` for an absent stream.
    """
    if stream is None or stream.absent:
        return None
    scores = stream.scores
    if method == "mean":
        values = scores.mean(axis=0)
    elif method == "max":
        values = scores.max(axis=0)
    elif method == "time_weighted":
        ts = stream.timestamps.astype(float)
        if len(ts) == 1:
            values = scores[0]
        else:
            gaps = np.diff(ts)
            w = np.append(gaps, np.median(gaps))
            values = (w[:, None] * scores).sum(axis=0) / w.sum()
    else:
        raise ValueError(f"unknown aggregation {method!r}")
    return dict(zip(EMOTIONS, values.tolist()))


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Participants x 105 (emotion, video) features; ``NaN`` marks an absent cell."""

    participants: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (len(self.participants), N_FEATURES):
            raise ValueError(f"feature matrix must be N x {N_FEATURES}, got {self.values.shape}")
        self.values.setflags(write=False)

    @property
    def columns(self) -> tuple[str, ...]:
        return FEATURE_NAMES

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return self.participants == other.participants and np.array_equal(
            self.values, other.values, equal_nan=True
        )

    def column(self, key: FeatureKey | str) -> np.ndarray:
        if isinstance(key, str):
            key = FeatureKey.parse(key)
        return self.values[:, key.index]

    def rows(self, participants: Sequence[str]) -> np.ndarray:
        pos = {p: i for i, p in enumerate(self.participants)}
        return self.values[[pos[p] for p in participants]]

    def standardized(self) -> "FeatureMatrix":
        mu = np.nanmean(self.values, axis=0)
        sd = np.nanstd(self.values, axis=0, ddof=1)
        sd = np.where(sd > 0, sd, 1.0)
        return FeatureMatrix(self.participants, (self.values - mu) / sd)

    def to_csv(self, fh: IO[str]) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("participant_id",) + FEATURE_NAMES)
        for pid, row in zip(self.participants, self.values.tolist()):
            writer.writerow([pid] + ["" if math.isnan(v) else repr(v) for v in row])

    def to_csv_string(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, fh: IO[str]) -> "FeatureMatrix":
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[1:]) != FEATURE_NAMES or header[0] != "participant_id":
            raise ValueError("feature CSV header does not match the canonical 105 columns")
        ids, rows = [], []
        for row in reader:
            if not row:
                continue
            ids.append(row[0])
            rows.append([float(c) if c else math.nan for c in row[1:]])
        values = np.array(rows, dtype=float).reshape(len(ids), N_FEATURES)
        return cls(tuple(ids), values)

    def to_json(self) -> dict:
        return {
            "schema_version": "1.0",
            "columns": list(FEATURE_NAMES),
            "participants": list(self.participants),
            "values": [[None if math.isnan(v) else v for v in row] for row in self.values.tolist()],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureMatrix":
        if tuple(obj["columns"]) != FEATURE_NAMES:
            raise ValueError("feature JSON columns do not match the canonical 105 columns")
        values = np.array(
            [[math.nan if v is None else v for v in row] for row in obj["values"]], dtype=float
        ).reshape(len(obj["participants"]), N_FEATURES)
        return cls(tuple(obj["participants"]), values)

    def dumps_json(self) -> str:
        return json.dumps(self.to_json())


def build_feature_matrix(cohort: Cohort, method: str = "mean", standardize: bool = False) -> FeatureMatrix:
    """Aggregate every (participant, video) stream; missing streams leave NaN cells."""
    participants = cohort.participants
    if not participants:
        raise ValueError("cohort is empty")
    values = np.full((len(participants), N_FEATURES), np.nan)
    emotion_offsets = np.arange(len(EMOTIONS)) * N_VIDEOS
    for i, pid in enumerate(participants):
        for v in VIDEO_IDS:
            agg = aggregate_video(cohort.stream(pid, v), method)
            if agg is not None:
                values[i, emotion_offsets + (v - 1)] = [agg[e] for e in EMOTIONS]
    fm = FeatureMatrix(participants, values)
    return fm.standardized() if standardize else fm


@dataclass(frozen=True)
class DescriptiveStats:
    mean: float
    sd: float
    minimum: float
    maximum: float
    n: int

    def as_row(self) -> dict[str, float]:
        return {"M": self.mean, "SD": self.sd, "Min": self.minimum, "Max": self.maximum}


def describe(values) -> DescriptiveStats:
    """Mean, sample SD (n-1), min and max over the non-missing values."""
    x = np.asarray(values, dtype=float)
    x = x[~np.isnan(x)]
    if len(x) < 2:
        raise ValueError("describe needs at least 2 present values")
    mean = float(x.mean())
    # clamp rounding so Min <= M <= Max holds on constant columns
    mean = min(max(mean, float(x.min())), float(x.max()))
    return DescriptiveStats(mean, float(x.std(ddof=1)), float(x.min()), float(x.max()), len(x))
