"""Gradient-boosted generalized r-Pareto processes for spatial extremes."""

__version__ = "0.1.0"

from .boosting import (CVResult, TrainConfig, TreeEnsemble, boost,
                       cross_validate)
from .brown_resnick import (CovarianceModel, ScoreGeometry, br_intensity,
                            br_log_intensity, build_covariance,
                            grp_gradient_score, pairwise_cond_prob,
                            score_dense_reference, simulate_grp,
                            vecchia_factorize)
from .data import (GriddedDataset, load_dataset, rolling_mean, save_dataset,
                   season_mask, standardized_anomalies)
from .errors import ConfigError, DataError, GrpboostError, NumericError
from .evaluation import (ScoreReport, StudyConfig, StudyReport, brier,
                         extremogram, permutation_test, qq_table, qq_tail,
                         roc_auc, simulation_study, tree_shap)
from .losses import (DependenceScoreLoss, GPDLoss, OccurrenceLoss, gpd_mle,
                     gpd_pwm, transform_to_z)
from .pipeline import (FitSettings, SubModelBundle, ThresholdSpec,
                       assemble_predictors, compute_risk_series, day_inputs,
                       fit_all, generate_scenarios, prefit_dependence_params,
                       select_thresholds)
from .spatial import (Grid, SemivariogramParams, anisotropic_distance,
                      maximin_ordering, neighbor_sets, pairwise_limit_prob,
                      semivariogram, semivariogram_matrix)

__all__ = [
    "__version__",
    "GrpboostError", "ConfigError", "DataError", "NumericError",
    "Grid", "SemivariogramParams", "anisotropic_distance", "semivariogram",
    "semivariogram_matrix", "pairwise_limit_prob", "maximin_ordering",
    "neighbor_sets",
    "TrainConfig", "TreeEnsemble", "CVResult", "boost", "cross_validate",
    "OccurrenceLoss", "GPDLoss", "DependenceScoreLoss", "gpd_mle", "gpd_pwm",
    "transform_to_z",
    "CovarianceModel", "ScoreGeometry", "build_covariance", "br_intensity",
    "br_log_intensity", "vecchia_factorize", "grp_gradient_score",
    "score_dense_reference", "simulate_grp", "pairwise_cond_prob",
    "GriddedDataset", "load_dataset", "save_dataset",
    "standardized_anomalies", "rolling_mean", "season_mask",
    "ThresholdSpec", "FitSettings", "SubModelBundle", "select_thresholds",
    "compute_risk_series", "assemble_predictors", "fit_all", "day_inputs",
    "generate_scenarios", "prefit_dependence_params",
    "ScoreReport", "roc_auc", "brier", "permutation_test", "qq_table",
    "qq_tail", "extremogram", "tree_shap", "StudyConfig", "StudyReport",
    "simulation_study",
]
