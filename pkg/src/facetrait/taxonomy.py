"""Fixed vocabularies: emotions, stimulus videos, traits and their families."""

from __future__ import annotations

from dataclasses import dataclass

EMOTIONS: tuple[str, ...] = (
    "angry",
    "disgusted",
    "fearful",
    "happy",
    "neutral",
    "sad",
    "surprised",
)
# upstream FER tools sometimes call the positive emotion "joy"
EMOTION_ALIASES = {"joy": "happy"}

N_VIDEOS = 15
VIDEO_IDS: tuple[int, ...] = tuple(range(1, N_VIDEOS + 1))

VIDEO_CATALOG: dict[int, str] = {
    1: "puppies",
    2: "avocado",
    3: "condom ad",
    4: "runner",
    5: "maggot",
    6: "soldier",
    7: "Trump",
    8: "mountain bike",
    9: "roof bike",
    10: "roof run",
    11: "raccoon",
    12: "abandoned",
    13: "waste",
    14: "dog",
    15: "monster",
}

# 9 min 22 s in total; per-video lengths are unknown, so split evenly
TOTAL_DURATION_S = 562
VIDEO_DURATION_S: dict[int, int] = {
    v: TOTAL_DURATION_S // N_VIDEOS + (1 if v <= TOTAL_DURATION_S % N_VIDEOS else 0)
    for v in VIDEO_IDS
}


@dataclass(frozen=True)
class TraitInfo:
    name: str
    family: str
    label: str
    long_label: str
    mean: float
    sd: float
    minimum: float
    maximum: float


FAMILIES: tuple[str, ...] = ("big_five", "dospert", "schwartz", "haidt")

FAMILY_RANGES: dict[str, tuple[float, float]] = {
    "big_five": (0.0, 1.0),
    "dospert": (1.0, 10.0),
    "schwartz": (-6.0, 6.0),
    "haidt": (0.0, 30.0),
}

_T = TraitInfo
TRAITS: tuple[TraitInfo, ...] = (
    _T("agreeableness", "big_five", "Agreeableness", "Agreeableness", 0.64, 0.08, 0.47, 0.83),
    _T("conscientiousness", "big_five", "Conscientiousness", "Conscientiousness", 0.69, 0.06, 0.52, 0.83),
    _T("neuroticism", "big_five", "Neuroticism", "Neuroticism", 0.54, 0.09, 0.33, 0.73),
    _T("extraversion", "big_five", "Extraversion", "Extraversion", 0.67, 0.07, 0.50, 0.83),
    _T("openness", "big_five", "Openness to experience", "Openness to experience", 0.61, 0.06, 0.48, 0.78),
    _T("ETH_L", "dospert", "ETH_L", "Ethical likelihood", 2.56, 1.31, 1.50, 7.33),
    _T("ETH_P", "dospert", "ETH_P", "Ethical perceived", 4.55, 1.23, 1.83, 8.83),
    _T("FIN_L", "dospert", "FIN_L", "Financial likelihood", 3.25, 1.39, 1.00, 8.33),
    _T("FIN_P", "dospert", "FIN_P", "Financial perceived", 4.72, 1.34, 1.00, 9.00),
    _T("HEA_L", "dospert", "HEA_L", "Health likelihood", 3.33, 1.10, 1.17, 6.33),
    _T("HEA_P", "dospert", "HEA_P", "Health perceived", 4.81, 1.02, 1.50, 7.17),
    _T("SOC_L", "dospert", "SOC_L", "Social likelihood", 5.58, 1.07, 3.50, 9.67),
    _T("SOC_P", "dospert", "SOC_P", "Social perceived", 2.72, 1.12, 1.17, 6.67),
    _T("REC_L", "dospert", "REC_L", "Recreational likelihood", 4.19, 1.35, 1.50, 7.33),
    _T("REC_P", "dospert", "REC_P", "Recreational perceived", 3.99, 1.15, 1.83, 7.00),
    _T("conservation", "schwartz", "Conservation", "Conservation", 0.77, 0.74, -0.62, 3.54),
    _T("transcendence", "schwartz", "Transcendence", "Transcendence", -1.20, 0.70, -2.87, 0.70),
    _T("harm_care", "haidt", "Harm/care", "Harm/care", 22.36, 3.93, 12.0, 29.0),
    _T("fairness_reciprocity", "haidt", "Fairness/reciprocity", "Fairness/reciprocity", 22.13, 4.08, 7.0, 30.0),
    _T("ingroup_loyalty", "haidt", "In-group loyalty", "In-group loyalty", 16.54, 4.30, 6.0, 25.0),
    _T("authority_respect", "haidt", "Authority/respect", "Authority/respect", 13.57, 4.45, 3.0, 22.0),
    _T("purity_sanctity", "haidt", "Purity/sanctity", "Purity/sanctity", 11.93, 4.68, 0.0, 20.0),
)
del _T

TRAIT_NAMES: tuple[str, ...] = tuple(t.name for t in TRAITS)
TRAIT_INFO: dict[str, TraitInfo] = {t.name: t for t in TRAITS}
FAMILY_TRAITS: dict[str, tuple[str, ...]] = {
    f: tuple(t.name for t in TRAITS if t.family == f) for f in FAMILIES
}


def family_of(trait: str) -> str:
    try:
        return TRAIT_INFO[trait].family
    except KeyError:
        raise KeyError(f"unknown trait {trait!r}") from None


def canonical_emotion(name: str) -> str:
    key = name.strip().lower()
    key = EMOTION_ALIASES.get(key, key)
    if key not in EMOTIONS:
        raise KeyError(f"unknown emotion {name!r}")
    return key


@dataclass(frozen=True, order=True)
class FeatureKey:
    """One (emotion, video) predictor, e.g. ``Happy 8``."""

    emotion: str
    video: int

    @property
    def index(self) -> int:
        return EMOTIONS.index(self.emotion) * N_VIDEOS + (self.video - 1)

    @property
    def display(self) -> str:
        return f"{self.emotion.capitalize()} {self.video}"

    @classmethod
    def parse(cls, text: str) -> "FeatureKey":
        emotion, _, video = text.strip().rpartition(" ")
        key = cls(canonical_emotion(emotion), int(video))
        if key.video not in VIDEO_IDS:
            raise ValueError(f"video out of range in {text!r}")
        return key


FEATURE_KEYS: tuple[FeatureKey, ...] = tuple(
    FeatureKey(e, v) for e in EMOTIONS for v in VIDEO_IDS
)
FEATURE_NAMES: tuple[str, ...] = tuple(k.display for k in FEATURE_KEYS)
N_FEATURES = len(FEATURE_KEYS)
