"""Sizing, simulation and analysis of two-stage SMARTs with a repeated-measures outcome."""

__version__ = "0.1.0"

from .covariance import CorrelationStructure, Pooling, Structure, VarianceSpec, working_covariance
from .data import TrialDataset
from .design import (Design, EmbeddedDtr, SmartDesign, SubjectRecord, consistency_indicator, enumerate_dtrs,
                     weight)
from .estimator import FitResult, WaldResult, fit, sandwich, solve_theta, wald_test
from .mean_model import (ContrastVector, MeanModelSpec, design_matrix, dtr_contrast, eos_contrast,
                         first_stage_slope_contrast, marginal_mean)
from .sample_size import (SizingInputs, SizingResult, design_effect, normal_quantile, required_n,
                          required_n_sharp_design2)
from .simulator import GenerativeSpec, canonical_spec, check_assumptions, generate
