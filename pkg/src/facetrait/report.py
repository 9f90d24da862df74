"""Tabular and link-table exports built from pipeline artifacts."""

from __future__ import annotations

import csv
from collections import defaultdict
from typing import IO, Iterable, Mapping, Sequence

from .features import describe
from .stats import RegressionModel
from .taxonomy import FAMILIES, FAMILY_TRAITS, TRAIT_INFO, TRAIT_NAMES, FeatureKey


def write_descriptives(traits, fh: IO[str]) -> None:
    """Trait descriptives: Variable, M, SD, Min, Max, N."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(("Variable", "M", "SD", "Min", "Max", "N"))
    for t in TRAIT_NAMES:
        try:
            d = describe(traits.column(t))
        except ValueError:
            continue
        writer.writerow((TRAIT_INFO[t].label, f"{d.mean:.2f}", f"{d.sd:.2f}",
                         f"{d.minimum:.2f}", f"{d.maximum:.2f}", d.n))


def write_regression_tables(models: Mapping[str, RegressionModel], fh: IO[str]) -> None:
    """One block per trait family with predictors as rows and traits as columns."""
    writer = csv.writer(fh, lineterminator="\n")
    for fam in FAMILIES:
        traits = [t for t in FAMILY_TRAITS[fam] if t in models]
        if not traits:
            continue
        writer.writerow(["Predictor/Dependent"] + [TRAIT_INFO[t].label for t in traits])
        predictors = sorted(
            {term.name for t in traits for term in models[t].terms},
            key=lambda n: FeatureKey.parse(n).index,
        )
        for name in predictors:
            row = [name]
            for t in traits:
                term = next((x for x in models[t].terms if x.name == name), None)
                row.append("" if term is None else str(term))
            writer.writerow(row)
        writer.writerow(["Constant"] + [str(models[t].intercept) for t in traits])
        writer.writerow(["Adjusted R2"] + [f"{models[t].adj_r2:.3f}" for t in traits])
        writer.writerow(["N"] + [models[t].n for t in traits])
        writer.writerow([])


def alluvial_links(
    regressions: Iterable[dict],
    shap_bars: Mapping[str, Sequence[dict]] | None = None,
    alpha: float = 0.05,
    top_k: int = 5,
) -> dict:
    """Video -> emotion and emotion -> trait link weights.

    ``regressions`` are regression-model JSON objects; every term with
    p < ``alpha`` adds 1 to both of its links (weight = term count).
    ``shap_bars`` maps trait -> SHAP bar entries; the top ``top_k`` add their
    mean |SHAP| instead.
    """
    def collect(pairs: Iterable[tuple[str, str, float]]) -> dict:
        ve: dict[tuple[str, str], float] = defaultdict(float)
        et: dict[tuple[str, str], float] = defaultdict(float)
        for feature, trait, weight in pairs:
            key = FeatureKey.parse(feature)
            ve[(f"video-{key.video}", key.emotion)] += weight
            et[(key.emotion, TRAIT_INFO[trait].label)] += weight
        as_list = lambda d: [  # noqa: E731
            {"source": s, "target": t, "weight": w} for (s, t), w in sorted(d.items())
        ]
        return {"video_emotion": as_list(ve), "emotion_trait": as_list(et)}

    reg_pairs = [
        (term["name"], model["dependent"], 1.0)
        for model in regressions
        for term in model["terms"]
        if term["p"] < alpha
    ]
    out = {"schema_version": "1.0", "regression": collect(reg_pairs)}
    if shap_bars is not None:
        shap_pairs = [
            (bar["feature"], trait, float(bar["mean_abs_shap"]))
            for trait, bars in shap_bars.items()
            for bar in bars[:top_k]
            if bar["mean_abs_shap"] > 0
        ]
        out["shap"] = collect(shap_pairs)
    return out
