"""Qualitative studies contrasting latent- and output-space uncertainty.

Three experiments, each writing CSV/JSON artifacts:

* ``toy_compare`` - a deterministic pipeline plus resampled validation
  residuals as the uncertainty distribution, applied either in the
  latent space (then decoded) or directly per output channel. The
  latent route preserves the correlated scalar pair; the output route
  destroys it.
* ``toy_contour_contrast`` - the same two residual models, but looking
  at the 17%-of-peak image contour. Latent perturbations move the
  contour coherently; independent per-pixel noise averages out and the
  mean image's contour barely varies.
* ``density_study`` - posterior sd of a designated scalar swept along
  one input coordinate, against the training-sample histogram on that
  axis: fewer training samples means larger sd.

Residual resampling is per-dimension independent in the chosen space;
any correlation in the decoded clouds is induced by the decoder alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autoencoder import LatentDataset, MultimodalAutoencoder
from .contours import ContourSet, contour_angles, contour_set, extract_contour
from .datagen import CORRELATED_PAIR, SimDataset
from .fileio import write_csv, write_json
from .forward_uq import (DenseRegressor, DropoutSurrogate,
                         predict_output_posterior)
from .rngs import generator
from .validation import as_matrix, as_vector


@dataclass
class ResidualUncertaintyModel:
    """Validation residuals used as a per-dimension uncertainty model.

    ``space`` records where the residuals were computed ("latent" or
    "output"). Sampling draws each dimension independently from its
    marginal residual distribution.
    """

    space: str
    residuals: np.ndarray  # (n_val, d)

    def __post_init__(self):
        if self.space not in ("latent", "output"):
            raise ValueError(f"unknown residual space {self.space!r}")
        self.residuals = as_matrix(self.residuals, "residuals")

    def sample(self, center: np.ndarray, n_draws: int,
               rng: np.random.Generator) -> np.ndarray:
        """``center`` plus per-dimension resampled residuals, (n_draws, d)."""
        center = as_vector(center, "center", size=self.residuals.shape[1])
        if len(self.residuals) == 0:
            raise ValueError("residual matrix is empty")
        n_val, d = self.residuals.shape
        idx = rng.integers(n_val, size=(n_draws, d))
        return center[None, :] + self.residuals[idx, np.arange(d)]


def build_residual_models(ae: MultimodalAutoencoder, det: DenseRegressor,
                          latent: LatentDataset, ds: SimDataset
                          ) -> tuple[ResidualUncertaintyModel,
                                     ResidualUncertaintyModel]:
    """Latent- and output-space validation residuals of the deterministic
    pipeline."""
    X_val = latent.inputs_of("val")
    z_pred = det.predict(X_val)
    z_resid = latent.latents_of("val") - z_pred
    y_pred = ae.inverse_transform(z_pred)
    y_resid = ds.stacked_outputs("val") - y_pred
    return (ResidualUncertaintyModel("latent", z_resid),
            ResidualUncertaintyModel("output", y_resid))


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    if np.std(a) < 1e-300 or np.std(b) < 1e-300:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


@dataclass
class ToyCompareResult:
    x: np.ndarray
    latent_cloud: np.ndarray  # (n_draws, d_y) physical
    output_cloud: np.ndarray  # (n_draws, d_y) physical
    pair: tuple[int, int]
    r_latent: float
    r_output: float
    r_simulator: float

    def save(self, out_dir, n_scalars: int) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        header = [f"s{i}" for i in range(n_scalars)]
        write_csv(out_dir / "toy_scatter_latent.csv", header,
                  self.latent_cloud[:, :n_scalars])
        write_csv(out_dir / "toy_scatter_output.csv", header,
                  self.output_cloud[:, :n_scalars])
        write_json(out_dir / "toy_summary.json", {
            "x": self.x.tolist(),
            "pair": list(self.pair),
            "r_latent": self.r_latent,
            "r_output": self.r_output,
            "r_simulator": self.r_simulator,
            "n_draws": len(self.latent_cloud),
        })


def toy_compare(ae: MultimodalAutoencoder, det: DenseRegressor,
                latent_rm: ResidualUncertaintyModel,
                output_rm: ResidualUncertaintyModel,
                ds: SimDataset, x, n_draws: int = 1000,
                pair: tuple[int, int] = CORRELATED_PAIR,
                seed: int = 0) -> ToyCompareResult:
    """Sample both uncertainty routes at one point and compare the
    correlated scalar pair."""
    x = as_vector(x, "x")
    z_hat = det.predict(x[None, :])[0]
    y_hat = ae.inverse_transform(z_hat[None, :])[0]

    z_draws = latent_rm.sample(z_hat, n_draws, generator(seed, "toy-latent"))
    latent_cloud = ae.inverse_transform(z_draws)
    output_cloud = output_rm.sample(y_hat, n_draws,
                                    generator(seed, "toy-output"))
    d_s = ae.n_scalars
    output_cloud[:, d_s:] = np.maximum(output_cloud[:, d_s:], 0.0)

    i, j = pair
    train_scalars = ds.scalars[ds.split("train")]
    return ToyCompareResult(
        x=x, latent_cloud=latent_cloud, output_cloud=output_cloud, pair=pair,
        r_latent=_pearson(latent_cloud[:, i], latent_cloud[:, j]),
        r_output=_pearson(output_cloud[:, i], output_cloud[:, j]),
        r_simulator=_pearson(train_scalars[:, i], train_scalars[:, j]),
    )


# ---------------------------------------------------------------------------
# contour uncertainty

def contour_uncertainty(model: DropoutSurrogate, ae: MultimodalAutoencoder,
                        x, n_samples: int | None = None,
                        fraction: float = 0.17, n_angles: int = 64,
                        seed: int = 0) -> ContourSet:
    """Contours of decoded posterior image samples at one input point."""
    post = predict_output_posterior(model, ae, x, n_samples=n_samples,
                                    seed=seed)
    return contour_set(post.image_samples, fraction=fraction,
                       n_angles=n_angles)


@dataclass
class ContourContrastResult:
    angles: np.ndarray
    latent_contours: ContourSet
    output_contours: ContourSet
    latent_groupmean_sd: np.ndarray   # (n_angles,)
    output_groupmean_sd: np.ndarray   # (n_angles,)
    reference_radii: np.ndarray       # deterministic prediction's contour
    fraction: float

    def save(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        rows = np.column_stack([
            self.angles,
            self.latent_contours.mean_radius,
            self.latent_contours.sd_radius,
            self.latent_groupmean_sd,
            self.output_contours.mean_radius,
            self.output_contours.sd_radius,
            self.output_groupmean_sd,
            self.reference_radii,
        ])
        write_csv(out_dir / "contour_stats.csv",
                  ["angle", "latent_mean", "latent_sd",
                   "latent_groupmean_sd", "output_mean", "output_sd",
                   "output_groupmean_sd", "reference"],
                  rows)
        write_json(out_dir / "contour_summary.json", {
            "fraction": self.fraction,
            "latent_max_sd": float(self.latent_contours.sd_radius.max()),
            "latent_min_sd": float(self.latent_contours.sd_radius.min()),
            "output_max_sd": float(self.output_contours.sd_radius.max()),
            "latent_groupmean_max_sd": float(self.latent_groupmean_sd.max()),
            "output_groupmean_max_sd": float(self.output_groupmean_sd.max()),
        })


def _groupmean_contour_sd(images: np.ndarray, n_groups: int,
                          fraction: float, n_angles: int) -> np.ndarray:
    """Per-angle sd across contours of disjoint group-mean images.

    Estimates the spread of the *mean image's* contour: spatially
    uncorrelated noise cancels in group means, coherent shape changes
    partially survive.
    """
    S = len(images)
    if n_groups < 2 or S < 2 * n_groups:
        raise ValueError("need at least 2 groups of at least 2 images")
    per = S // n_groups
    radii = np.stack([
        extract_contour(images[g * per:(g + 1) * per].mean(axis=0),
                        fraction, n_angles)
        for g in range(n_groups)
    ])
    return radii.std(axis=0, ddof=1)


def toy_contour_contrast(ae: MultimodalAutoencoder, det: DenseRegressor,
                         latent_rm: ResidualUncertaintyModel,
                         output_rm: ResidualUncertaintyModel, x,
                         n_samples: int = 500, fraction: float = 0.17,
                         n_angles: int = 64, n_groups: int = 10,
                         seed: int = 0) -> ContourContrastResult:
    """17%-contour statistics of both uncertainty routes at one point."""
    x = as_vector(x, "x")
    d_s, d_img = ae.n_scalars, ae.d_img
    z_hat = det.predict(x[None, :])[0]
    y_hat = ae.inverse_transform(z_hat[None, :])[0]

    z_draws = latent_rm.sample(z_hat, n_samples,
                               generator(seed, "contour-latent"))
    latent_imgs = ae.inverse_transform(z_draws)[:, d_s:].reshape(
        n_samples, d_img, d_img)
    out_draws = output_rm.sample(y_hat, n_samples,
                                 generator(seed, "contour-output"))
    output_imgs = np.maximum(out_draws[:, d_s:], 0.0).reshape(
        n_samples, d_img, d_img)

    ref = extract_contour(y_hat[d_s:].reshape(d_img, d_img), fraction,
                          n_angles)
    return ContourContrastResult(
        angles=contour_angles(n_angles),
        latent_contours=contour_set(latent_imgs, fraction, n_angles),
        output_contours=contour_set(output_imgs, fraction, n_angles),
        latent_groupmean_sd=_groupmean_contour_sd(
            latent_imgs, n_groups, fraction, n_angles),
        output_groupmean_sd=_groupmean_contour_sd(
            output_imgs, n_groups, fraction, n_angles),
        reference_radii=ref,
        fraction=fraction,
    )


# ---------------------------------------------------------------------------
# uncertainty vs training density

@dataclass
class DensityStudyResult:
    coordinate: int
    scalar_channel: int
    x_values: np.ndarray      # (n_eval,)
    mean: np.ndarray          # (n_eval,) posterior mean of the scalar
    sd: np.ndarray            # (n_eval,) posterior sd of the scalar
    hist_edges: np.ndarray    # (n_bins + 1,)
    hist_counts: np.ndarray   # (n_bins,) training-sample histogram
    mean_sd_low: float        # mean sd over x < 0.5
    mean_sd_high: float       # mean sd over x >= 0.5
    count_low: int
    count_high: int

    @property
    def count_ratio(self) -> float:
        return self.count_low / max(self.count_high, 1)

    def save(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_csv(out_dir / "density_table.csv", ["x", "mean", "sd"],
                  np.column_stack([self.x_values, self.mean, self.sd]))
        write_csv(out_dir / "density_hist.csv",
                  ["bin_left", "bin_right", "count"],
                  np.column_stack([self.hist_edges[:-1],
                                   self.hist_edges[1:],
                                   self.hist_counts]))
        write_json(out_dir / "density_summary.json", {
            "coordinate": self.coordinate,
            "scalar_channel": self.scalar_channel,
            "mean_sd_low": self.mean_sd_low,
            "mean_sd_high": self.mean_sd_high,
            "count_low": self.count_low,
            "count_high": self.count_high,
            "count_ratio": self.count_ratio,
        })


def density_study(ae: MultimodalAutoencoder, model: DropoutSurrogate,
                  train_inputs: np.ndarray, coordinate: int = 0,
                  n_eval: int = 1000, n_samples: int = 256,
                  scalar_channel: int = 0, fixed_value: float = 0.5,
                  n_bins: int = 20, seed: int = 0,
                  chunk: int = 64) -> DensityStudyResult:
    """Posterior sd of one decoded scalar along one input coordinate.

    All other coordinates are pinned at ``fixed_value``. The training
    histogram over the same axis quantifies local sample density.
    """
    train_inputs = as_matrix(train_inputs, "train_inputs")
    d_in = train_inputs.shape[1]
    if not (0 <= coordinate < d_in):
        raise ValueError(f"coordinate {coordinate} out of range for "
                         f"d_in={d_in}")
    xs = np.linspace(0.0, 1.0, n_eval)
    X_eval = np.full((n_eval, d_in), fixed_value)
    X_eval[:, coordinate] = xs

    mean = np.empty(n_eval)
    sd = np.empty(n_eval)
    d_s = ae.n_scalars
    for start in range(0, n_eval, chunk):
        block = slice(start, min(start + chunk, n_eval))
        posts = model.sample_posterior_batch(X_eval[block],
                                             n_samples=n_samples, seed=seed)
        stacked = np.vstack([p.samples for p in posts])
        decoded = ae.inverse_transform(stacked)[:, scalar_channel]
        decoded = decoded.reshape(len(posts), n_samples)
        mean[block] = decoded.mean(axis=1)
        sd[block] = decoded.std(axis=1, ddof=1)

    counts, edges = np.histogram(train_inputs[:, coordinate], bins=n_bins,
                                 range=(0.0, 1.0))
    low = xs < 0.5
    train_coord = train_inputs[:, coordinate]
    return DensityStudyResult(
        coordinate=coordinate, scalar_channel=scalar_channel,
        x_values=xs, mean=mean, sd=sd,
        hist_edges=edges, hist_counts=counts.astype(np.float64),
        mean_sd_low=float(sd[low].mean()),
        mean_sd_high=float(sd[~low].mean()),
        count_low=int((train_coord < 0.5).sum()),
        count_high=int((train_coord >= 0.5).sum()),
    )
