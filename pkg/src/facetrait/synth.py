"""Synthetic cohorts with planted trait -> (emotion, video) effects."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize, stats

from .cohort import EmotionStream, TraitTable, assemble_cohort, write_frame_log, write_trait_table
from .taxonomy import (
    EMOTIONS,
    FAMILIES,
    FAMILY_TRAITS,
    FEATURE_KEYS,
    N_FEATURES,
    N_VIDEOS,
    TRAIT_INFO,
    TRAIT_NAMES,
    VIDEO_DURATION_S,
    VIDEO_IDS,
    FeatureKey,
)

# typical FER output while watching: mostly neutral with a little of everything
BASE_MIXTURE = np.array([0.06, 0.05, 0.04, 0.14, 0.55, 0.08, 0.08])
FEASIBILITY_SIGMAS = 4.0


@dataclass(frozen=True)
class TraitDistribution:
    mean: float
    sd: float
    minimum: float
    maximum: float


def reference_distributions() -> dict[str, TraitDistribution]:
    return {
        t: TraitDistribution(i.mean, i.sd, i.minimum, i.maximum) for t, i in TRAIT_INFO.items()
    }


@dataclass(frozen=True)
class PlantedLink:
    trait: str
    feature: str  # display name, e.g. "Happy 8"
    beta: float
    sigma: float

    @property
    def key(self) -> FeatureKey:
        return FeatureKey.parse(self.feature)

    @property
    def implied_r(self) -> float:
        """Population correlation of the feature mean with the trait."""
        denom = math.hypot(self.beta, self.sigma)
        return self.beta / denom if denom > 0 else 0.0


@dataclass(frozen=True)
class PlantSpec:
    n_participants: int = 500
    traits: Mapping[str, TraitDistribution] = field(default_factory=reference_distributions)
    links: tuple[PlantedLink, ...] = ()
    frame_rate_hz: float = 30.0
    video_duration_s: Mapping[int, float] = field(default_factory=lambda: dict(VIDEO_DURATION_S))
    family_missing: Mapping[str, float] = field(default_factory=dict)
    video_missing: float = 0.0
    jitter_concentration: float = 100.0  # 0 disables frame jitter
    participant_concentration: float = 50.0
    planted_base: float = 0.3
    stratified_traits: bool = True
    seed: int = 0

    def to_json(self) -> dict:
        d = asdict(self)
        d["traits"] = {k: asdict(v) for k, v in self.traits.items()}
        d["links"] = [asdict(l) for l in self.links]
        d["video_duration_s"] = {str(k): v for k, v in self.video_duration_s.items()}
        d["family_missing"] = dict(self.family_missing)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "PlantSpec":
        d = dict(d)
        d["traits"] = {k: TraitDistribution(**v) for k, v in d["traits"].items()}
        d["links"] = tuple(PlantedLink(**l) for l in d["links"])
        d["video_duration_s"] = {int(k): v for k, v in d["video_duration_s"].items()}
        return cls(**d)

    @property
    def cohort_id(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def strong_links(beta: float = 0.05, rho: float = 0.97, traits: Sequence[str] = TRAIT_NAMES) -> tuple[PlantedLink, ...]:
    """One planted link per trait on distinct features with the given correlation."""
    sigma = beta * math.sqrt(1.0 / rho**2 - 1.0)
    links = []
    for i, t in enumerate(traits):
        key = FeatureKey(EMOTIONS[i % len(EMOTIONS)], VIDEO_IDS[i % N_VIDEOS])
        links.append(PlantedLink(t, key.display, beta, sigma))
    return tuple(links)


def gapped_cohort(**overrides) -> PlantSpec:
    """85 participants with partial DOSPERT, Schwartz and Haidt coverage."""
    base = dict(
        n_participants=85,
        family_missing={"big_five": 5 / 85, "dospert": 20 / 85, "schwartz": 15 / 85, "haidt": 16 / 85},
    )
    base.update(overrides)
    return PlantSpec(**base)


@lru_cache(maxsize=None)
def _truncnorm_params(mean: float, sd: float, lo: float, hi: float) -> tuple[float, float]:
    """(loc, scale) whose normal truncated to [lo, hi] best matches the requested mean and SD."""

    def moments(p):
        loc, log_scale = p
        scale = math.exp(log_scale)
        a, b = (lo - loc) / scale, (hi - loc) / scale
        m, v = stats.truncnorm.stats(a, b, loc=loc, scale=scale, moments="mv")
        return [(float(m) - mean) / sd, (math.sqrt(float(v)) - sd) / sd]

    sol = optimize.least_squares(moments, x0=[mean, math.log(sd)], xtol=1e-12, ftol=1e-12)
    return float(sol.x[0]), float(math.exp(sol.x[1]))


@lru_cache(maxsize=None)
def marginal(dist: TraitDistribution):
    """Frozen scipy distribution on [min, max] with the requested mean and SD.

    A truncated normal when one fits; otherwise (a mean close to a bound with a
    wide spread, beyond what truncation can produce) a scaled Beta.
    """
    lo, hi = dist.minimum, dist.maximum
    loc, scale = _truncnorm_params(dist.mean, dist.sd, lo, hi)
    tn = stats.truncnorm((lo - loc) / scale, (hi - loc) / scale, loc=loc, scale=scale)
    m, v = (float(x) for x in tn.stats(moments="mv"))
    if abs(m - dist.mean) <= 1e-6 * dist.sd and abs(math.sqrt(v) - dist.sd) <= 1e-6 * dist.sd:
        return tn
    mu = (dist.mean - lo) / (hi - lo)
    var = (dist.sd / (hi - lo)) ** 2
    common = mu * (1 - mu) / var - 1
    if not 0 < mu < 1 or common <= 0:
        raise ValueError(f"no distribution on [{lo}, {hi}] has mean {dist.mean} and SD {dist.sd}")
    return stats.beta(mu * common, (1 - mu) * common, loc=lo, scale=hi - lo)


def draw_traits(dist: TraitDistribution, size: int, rng: np.random.Generator) -> np.ndarray:
    return marginal(dist).ppf(rng.random(size))


@dataclass(frozen=True)
class GroundTruth:
    cohort_id: str
    participants: tuple[str, ...]
    traits: TraitTable
    noiseless: np.ndarray  # (participants, 105) per-video mixtures, NaN where missing
    links: tuple[PlantedLink, ...]
    video_mixtures: np.ndarray  # (15, 7) population baseline per video

    def to_json(self) -> dict:
        return {
            "schema_version": "1.0",
            "cohort_id": self.cohort_id,
            "participants": list(self.participants),
            "links": [dict(asdict(l), implied_r=l.implied_r) for l in self.links],
            "video_mixtures": self.video_mixtures.tolist(),
            "noiseless": [[None if math.isnan(v) else v for v in row] for row in self.noiseless.tolist()],
        }


@dataclass(frozen=True)
class SyntheticCohort:
    streams: dict[tuple[str, int], EmotionStream]
    traits: TraitTable
    truth: GroundTruth
    spec: PlantSpec

    def cohort(self):
        return assemble_cohort(self.streams, self.traits, cohort_id=self.truth.cohort_id)

    def write(self, out_dir, format: str = "jsonl") -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "frames": out / f"frames.{format}",
            "traits": out / "traits.csv",
            "ground_truth": out / "ground_truth.json",
        }
        with open(paths["frames"], "w", encoding="utf-8", newline="") as fh:
            write_frame_log((self.streams[k] for k in sorted(self.streams)), fh, format)
        with open(paths["traits"], "w", encoding="utf-8", newline="") as fh:
            write_trait_table(self.traits, fh)
        truth = self.truth.to_json()
        truth["spec"] = self.spec.to_json()
        paths["ground_truth"].write_text(json.dumps(truth, sort_keys=True), encoding="utf-8")
        return paths


def _video_mixtures(spec: PlantSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 7])
    mix = rng.dirichlet(200.0 * BASE_MIXTURE, size=N_VIDEOS)
    planted = sorted({l.key for l in spec.links}, key=lambda k: k.index)
    for key in planted:
        v, e = key.video - 1, EMOTIONS.index(key.emotion)
        rest = np.delete(mix[v], e)
        mix[v] = np.insert(rest / rest.sum() * (1.0 - spec.planted_base), e, spec.planted_base)
    return mix


def check_spec(spec: PlantSpec) -> None:
    """Reject links whose shifted feature mean could leave [0, 1]."""
    if spec.n_participants < 1:
        raise ValueError("n_participants must be positive")
    if spec.frame_rate_hz <= 0 or spec.frame_rate_hz > 1000:
        raise ValueError("frame_rate_hz must lie in (0, 1000]")
    mix = _video_mixtures(spec)
    for link in spec.links:
        if link.trait not in TRAIT_NAMES:
            raise ValueError(f"unknown trait in link {link}")
    shift: dict[FeatureKey, list[float]] = {}
    for link in spec.links:
        d = spec.traits[link.trait]
        z_lo, z_hi = (d.minimum - d.mean) / d.sd, (d.maximum - d.mean) / d.sd
        lo, hi = sorted((link.beta * z_lo, link.beta * z_hi))
        acc = shift.setdefault(link.key, [0.0, 0.0, 0.0])
        acc[0] += lo
        acc[1] += hi
        acc[2] = math.hypot(acc[2], link.sigma)
    for link in spec.links:
        lo, hi, sig = shift[link.key]
        base = mix[link.key.video - 1, EMOTIONS.index(link.key.emotion)]
        if base + lo - FEASIBILITY_SIGMAS * sig < 0 or base + hi + FEASIBILITY_SIGMAS * sig > 1:
            raise ValueError(
                f"planted link {link.trait} -> {link.feature} (beta={link.beta}, sigma={link.sigma}) "
                "pushes the feature mean off the simplex"
            )


def _participant_ids(n: int) -> tuple[str, ...]:
    width = max(3, len(str(n)))
    return tuple(f"P{i:0{width}d}" for i in range(1, n + 1))


def plant_cohort(spec: PlantSpec) -> SyntheticCohort:
    """Draw traits and frame streams for ``spec.n_participants`` participants.

    Each participant gets their own RNG stream, so results do not depend on
    generation order. Per video, the participant's emotion mixture is a
    Dirichlet draw around the video's population mixture; planted emotions are
    then set to ``base + beta * z + sigma * noise`` (z the standardized trait)
    and the remaining emotions rescaled to fill the simplex. Frames are
    Dirichlet jitter around that mixture.
    """
    check_spec(spec)
    mix = _video_mixtures(spec)
    ids = _participant_ids(spec.n_participants)
    n = len(ids)
    trait_scores = np.full((n, len(TRAIT_NAMES)), np.nan)
    noiseless = np.full((n, N_FEATURES), np.nan)
    streams: dict[tuple[str, int], EmotionStream] = {}
    links_by_video: dict[int, list[PlantedLink]] = {}
    for link in spec.links:
        links_by_video.setdefault(link.key.video, []).append(link)

    # inverse-CDF trait draws: each participant's first 22 uniforms, optionally
    # stratified per trait (one draw per 1/n slice) to cut sampling noise in
    # the marginal moments
    rngs = [np.random.default_rng([spec.seed, 1, i]) for i in range(n)]
    u = np.array([r.random(len(TRAIT_NAMES)) for r in rngs]).reshape(n, len(TRAIT_NAMES))
    if spec.stratified_traits:
        for j in range(len(TRAIT_NAMES)):
            slot = np.random.default_rng([spec.seed, 2, j]).permutation(n)
            u[:, j] = (slot + u[:, j]) / n
    for j, t in enumerate(TRAIT_NAMES):
        trait_scores[:, j] = marginal(spec.traits[t]).ppf(u[:, j])

    for i, pid in enumerate(ids):
        rng = rngs[i]
        z = {
            t: (trait_scores[i, j] - spec.traits[t].mean) / spec.traits[t].sd
            for j, t in enumerate(TRAIT_NAMES)
        }
        for fam in FAMILIES:
            if rng.random() < spec.family_missing.get(fam, 0.0):
                for t in FAMILY_TRAITS[fam]:
                    trait_scores[i, TRAIT_NAMES.index(t)] = np.nan
        for v in VIDEO_IDS:
            missing = rng.random() < spec.video_missing
            m = rng.dirichlet(spec.participant_concentration * mix[v - 1])
            planted: dict[int, float] = {}
            for link in links_by_video.get(v, ()):
                e = EMOTIONS.index(link.key.emotion)
                planted.setdefault(e, float(mix[v - 1, e]))
                planted[e] += link.beta * z[link.trait] + link.sigma * rng.standard_normal()
            if planted:
                fixed = {e: min(max(val, 1e-6), 1.0 - 1e-6) for e, val in planted.items()}
                total_fixed = sum(fixed.values())
                if total_fixed >= 1.0:
                    scale = (1.0 - 1e-6) / total_fixed
                    fixed = {e: val * scale for e, val in fixed.items()}
                    total_fixed = sum(fixed.values())
                free = [e for e in range(len(EMOTIONS)) if e not in fixed]
                m[free] *= (1.0 - total_fixed) / m[free].sum()
                for e, val in fixed.items():
                    m[e] = val
            if missing:
                continue
            noiseless[i, np.arange(len(EMOTIONS)) * N_VIDEOS + (v - 1)] = m
            n_frames = max(1, int(round(spec.video_duration_s[v] * spec.frame_rate_hz)))
            ts = np.round(np.arange(n_frames) * 1000.0 / spec.frame_rate_hz).astype(np.int64)
            if spec.jitter_concentration > 0:
                frames = rng.dirichlet(spec.jitter_concentration * m, size=n_frames)
            else:
                frames = np.tile(m, (n_frames, 1))
            streams[(pid, v)] = EmotionStream(pid, v, ts, frames)

    traits = TraitTable(ids, trait_scores)
    truth = GroundTruth(spec.cohort_id, ids, traits, noiseless, tuple(spec.links), mix)
    return SyntheticCohort(streams, traits, truth, spec)


@dataclass(frozen=True)
class RecoveryThresholds:
    selection_recall: float = 0.9
    shap_recall: float = 0.9
    correlation_error: float = 0.1
    top_k: int = 5


@dataclass(frozen=True)
class RecoveryScore:
    selection_recall: float | None
    shap_recall: float | None
    correlation_error: float
    off_target_abs_r: float
    mean_holdout_kappa: float | None
    passed: bool
    details: dict = field(default_factory=dict, compare=False)

    def to_json(self) -> dict:
        return {
            "selection_recall": self.selection_recall,
            "shap_recall": self.shap_recall,
            "correlation_error": self.correlation_error,
            "off_target_abs_r": self.off_target_abs_r,
            "mean_holdout_kappa": self.mean_holdout_kappa,
            "passed": self.passed,
            "details": self.details,
        }


def verify_recovery(
    reports,
    models: Mapping[str, object],
    correlations,
    truth: GroundTruth,
    rankings: Mapping[str, Sequence] | None = None,
    thresholds: RecoveryThresholds = RecoveryThresholds(),
) -> RecoveryScore:
    """Score how much of the planted structure the pipeline recovered.

    ``models`` maps trait -> forward-selected regression model, ``rankings``
    maps trait -> SHAP importance ranking. The correlation error is the mean
    |r - implied r| over planted links (or over all cells when none are
    planted, where the implied r is 0).
    """
    if not set(correlations.participants) <= set(truth.participants):
        raise ValueError("correlation table was computed on a different cohort")
    known = set(TRAIT_NAMES)
    for name in list(models) + [r.trait for r in reports] + list(rankings or {}):
        if name not in known:
            raise ValueError(f"unknown trait {name!r} in pipeline outputs")

    links = truth.links
    r = correlations.r_matrix()
    planted_cells = {(l.key.index, TRAIT_NAMES.index(l.trait)) for l in links}
    off = [abs(r[j, k]) for j in range(r.shape[0]) for k in range(r.shape[1])
           if (j, k) not in planted_cells and not np.isnan(r[j, k])]
    off_target = float(np.mean(off)) if off else 0.0

    selected = ranked = None
    details: dict = {}
    if links:
        hits = [l.feature in getattr(models.get(l.trait), "term_names", ()) for l in links]
        selected = float(np.mean(hits))
        details["selection_misses"] = [l.trait for l, h in zip(links, hits) if not h]
        if rankings is not None:
            top = [l.feature in [e.feature for e in rankings.get(l.trait, [])[: thresholds.top_k]] for l in links]
            ranked = float(np.mean(top))
            details["shap_misses"] = [l.trait for l, h in zip(links, top) if not h]
        errs = [abs(r[l.key.index, TRAIT_NAMES.index(l.trait)] - l.implied_r) for l in links]
        corr_err = float(np.nanmean(errs))
    else:
        corr_err = off_target
    kappa = float(np.mean([rep.holdout_kappa for rep in reports])) if reports else None

    passed = corr_err <= thresholds.correlation_error
    if selected is not None:
        passed &= selected >= thresholds.selection_recall
    if ranked is not None:
        passed &= ranked >= thresholds.shap_recall
    return RecoveryScore(selected, ranked, corr_err, off_target, kappa, bool(passed), details)
