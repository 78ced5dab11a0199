"""Calibrated MC-dropout uncertainties for multimodal surrogates.

Pipeline: a synthetic multimodal simulator generates (input, scalars,
image) datasets; an autoencoder compresses the outputs into a small
latent space; a dropout-sampled dense network maps inputs to latent
posteriors; the dropout keep-rate is tuned against a latent-space
calibration error score on held-out data.
"""

from .autoencoder import (LatentDataset, MultimodalAutoencoder,
                          encode_dataset, load_latent_dataset,
                          train_autoencoder)
from .calibration import (CalibrationReport, ConfidenceGrid, SweepResult,
                          calibrate_model, calibration_curve,
                          calibration_error, central_interval, coverage,
                          evaluate_calibration, parse_keep_rates,
                          sweep_keep_rate)
from .contours import ContourSet, contour_set, extract_contour
from .datagen import (DatasetManifest, DensityProfile, MultimodalOutput,
                      OutputScaler, SimDataset, generate_dataset,
                      load_dataset, normalize_outputs, simulate)
from .experiments import (ResidualUncertaintyModel, build_residual_models,
                          contour_uncertainty, density_study,
                          toy_compare, toy_contour_contrast)
from .forward_uq import (DenseRegressor, DropoutSurrogate, OutputPosterior,
                         PosteriorSamples, gaussian_nll,
                         predict_output_posterior, train_forward)
from .netcore import DenseLayer, DropoutMask, Network, sample_mask

__version__ = "0.1.0"

__all__ = [
    "CalibrationReport", "ConfidenceGrid", "ContourSet", "DenseLayer",
    "DenseRegressor", "DatasetManifest", "DensityProfile", "DropoutMask",
    "DropoutSurrogate", "LatentDataset", "MultimodalAutoencoder",
    "MultimodalOutput", "Network", "OutputPosterior", "OutputScaler",
    "PosteriorSamples", "ResidualUncertaintyModel", "SimDataset",
    "SweepResult", "build_residual_models", "calibrate_model",
    "calibration_curve", "calibration_error", "central_interval",
    "contour_set", "contour_uncertainty", "coverage", "density_study",
    "encode_dataset", "evaluate_calibration", "extract_contour",
    "gaussian_nll", "generate_dataset", "load_dataset",
    "load_latent_dataset", "normalize_outputs", "parse_keep_rates",
    "predict_output_posterior", "sample_mask", "simulate", "sweep_keep_rate",
    "toy_compare", "toy_contour_contrast", "train_autoencoder",
    "train_forward",
]
