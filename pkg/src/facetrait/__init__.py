"""Facial-emotion features versus personality traits: ingestion, statistics,
boosted-tree classification and SHAP attribution."""

from .cohort import Cohort, EmotionStream, IngestError, TraitTable, assemble_cohort, load_cohort
from .config import RunConfig
from .evaluation import EvalReport, ExperimentConfig, run_all, run_experiment
from .explain import brute_force_shap, rank_importance, tree_shap
from .features import FeatureMatrix, build_feature_matrix
from .gbt import BoostParams, Ensemble, predict, predict_proba, train
from .resample import ResamplePlan, adasyn, balance, smote
from .stats import correlation_table, forward_select, ols_fit, pearson, vif
from .synth import PlantSpec, plant_cohort, verify_recovery

__all__ = [
    "BoostParams", "Cohort", "EmotionStream", "Ensemble", "EvalReport", "ExperimentConfig",
    "FeatureMatrix", "IngestError", "PlantSpec", "ResamplePlan", "RunConfig", "TraitTable",
    "adasyn", "assemble_cohort", "balance", "brute_force_shap", "build_feature_matrix",
    "correlation_table", "forward_select", "load_cohort", "ols_fit", "pearson", "plant_cohort",
    "predict", "predict_proba", "rank_importance", "run_all", "run_experiment", "smote",
    "train", "tree_shap", "verify_recovery", "vif",
]
