"""Benchmark suite for learned parameter-to-state operators.

Generates parametric-PDE datasets (Poisson source identification and
two-level Darcy diffusion on the unit square), trains four operator
surrogates (PCA-reduced dense nets, a PCA-reduced linear map, a Fourier
neural operator, and a branch/trunk operator net), solves the inverse
problems by backward operator training and by Tikhonov minimisation
through a frozen forward surrogate, and renders the error/noise tables.
"""

from .datagen import MeasureTag, NoiseLevel, Problem, SampleSet, add_noise, build_dataset, push_forward, sample_grf
from .fdm import apply_poisson_operator, solve_darcy, solve_poisson
from .fields import GridField, MetricRecord, rel_l2, restrict, seg_accuracy
from .inversion import TikhonovConfig, inverse_metrics, tikhonov_invert, train_backward
from .nets import DenseNet, OptimConfig
from .pcann import PcaBasis, PcannModel, decode, encode, fit_pca, train_operator
from .fno import FnoModel, fno_apply, spectral_apply, train_fno
from .deeponet import DeepONetModel, don_apply, train_deeponet
from .bench import ExperimentConfig, Report, emit_report, parse_report, run_experiment
from .io import FormatError, load_dataset, load_model, save_dataset, save_model

__all__ = [
    "MeasureTag", "NoiseLevel", "Problem", "SampleSet", "add_noise", "build_dataset",
    "push_forward", "sample_grf", "apply_poisson_operator", "solve_darcy", "solve_poisson",
    "GridField", "MetricRecord", "rel_l2", "restrict", "seg_accuracy",
    "TikhonovConfig", "inverse_metrics", "tikhonov_invert", "train_backward",
    "DenseNet", "OptimConfig", "PcaBasis", "PcannModel", "decode", "encode", "fit_pca",
    "train_operator", "FnoModel", "fno_apply", "spectral_apply", "train_fno",
    "DeepONetModel", "don_apply", "train_deeponet",
    "ExperimentConfig", "Report", "emit_report", "parse_report", "run_experiment",
    "FormatError", "load_dataset", "load_model", "save_dataset", "save_model",
]

__version__ = "0.1.0"
