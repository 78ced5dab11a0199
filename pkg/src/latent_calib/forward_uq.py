"""Uncertainty-equipped forward surrogate: inputs -> latent posterior.

``DropoutSurrogate`` is a dense network with a dropout mask sampled
before every layer (optionally excluding the input layer). Training
minimizes a Gaussian likelihood loss: at every iteration each batch item
is pushed through ``train_samples`` independently masked passes, the
per-dimension mean and sample sd of those passes form the likelihood,
and the gradient flows through *all* passes (both the mean and the sd
are differentiable functions of the per-pass outputs). Keeping the masks
active at prediction time and drawing ``predict_samples`` passes yields
a Monte Carlo posterior over latent predictions whose spread is
controlled by the keep rate.

Prediction-time mask streams are derived per sample index from
``(seed, sample_index)`` via ``numpy.random.SeedSequence``, so sample
sets are reproducible and independent of how the passes are scheduled.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from . import checkpoint
from .autoencoder import LatentDataset, MultimodalAutoencoder
from .errors import TrainingDivergedError, VarianceCollapseError, ZeroVarianceError
from .fileio import read_json, write_json
from .netcore import DropoutMask, Network, sample_mask
from .rngs import derive_seed, generator
from .validation import as_matrix, as_vector, check_keep_rate

SIGMA_FLOOR = 1e-6


@dataclass
class FloorCounter:
    """Counts sd-floor substitutions inside likelihood evaluations."""

    count: int = 0


def gaussian_nll(z, mu, sigma, floor: float = SIGMA_FLOOR,
                 counter: FloorCounter | None = None) -> float:
    """Per-dimension Gaussian negative log likelihood, mean-reduced.

    ``mean_d [ (z_d - mu_d)^2 / (2 sigma_d^2) + log(sigma_d^2) / 2 ]``.
    Entries of ``sigma`` at or below ``floor`` are replaced by the floor
    (and counted) so the log term stays finite.
    """
    z = as_vector(z, "z")
    mu = as_vector(mu, "mu", size=z.size)
    sigma = as_vector(sigma, "sigma", size=z.size)
    return float(gaussian_nll_batch(z[None, :], mu[None, :], sigma[None, :],
                                    floor=floor, counter=counter))


def gaussian_nll_batch(Z: np.ndarray, mu: np.ndarray, sigma: np.ndarray,
                       floor: float = SIGMA_FLOOR,
                       counter: FloorCounter | None = None) -> float:
    """Mean over rows of the per-dimension Gaussian NLL."""
    if not (Z.shape == mu.shape == sigma.shape):
        raise ValueError("z, mu and sigma must have identical shapes")
    floored = sigma <= floor
    if counter is not None:
        counter.count += int(floored.sum())
    var = np.square(np.where(floored, floor, sigma))
    nll = np.square(Z - mu) / (2.0 * var) + 0.5 * np.log(var)
    return float(nll.mean())


def _mc_loss_and_grads(net: Network, Xb: np.ndarray, Zb: np.ndarray,
                       masks: list[DropoutMask], n_samples: int,
                       floor: float):
    """Loss + parameter gradients of the S-sample Gaussian NLL pipeline.

    ``masks`` hold ``n_samples * len(Xb)`` rows per layer, ordered
    sample-major (row ``s * B + b``). Returns
    ``(loss, grads, n_floored, floored_item_fraction)``.
    """
    S, B = n_samples, len(Xb)
    d_z = Zb.shape[1]
    tiled = np.tile(Xb, (S, 1))
    out, cache = net.forward_cached(tiled, masks)
    F = out.reshape(S, B, d_z)
    mu = F.mean(axis=0)
    var = F.var(axis=0, ddof=1)
    floored = var < floor * floor
    var_eff = np.where(floored, floor * floor, var)
    resid = Zb - mu
    loss = float(np.mean(np.square(resid) / (2.0 * var_eff)
                         + 0.5 * np.log(var_eff)))
    scale = 1.0 / (B * d_z)
    d_mu = -resid / var_eff * scale
    d_var = (0.5 / var_eff - np.square(resid) / (2.0 * np.square(var_eff)))
    d_var = np.where(floored, 0.0, d_var * scale)
    dF = d_mu[None, :, :] / S + d_var[None, :, :] * 2.0 * (F - mu) / (S - 1)
    grads, _ = net.backward(dF.reshape(S * B, d_z), cache)
    return loss, grads, int(floored.sum()), float(floored.mean())


@dataclass(frozen=True)
class PosteriorSamples:
    """Monte Carlo latent posterior at one input point.

    ``mean``/``sd`` are exactly the column mean and column sample sd
    (ddof=1) of ``samples``.
    """

    input: np.ndarray    # (d_in,)
    samples: np.ndarray  # (n_samples, d_z)
    mean: np.ndarray = field(init=False)
    sd: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.samples.ndim != 2 or len(self.samples) < 2:
            raise ValueError("samples must be (n_samples >= 2, d_z)")
        object.__setattr__(self, "mean", self.samples.mean(axis=0))
        object.__setattr__(self, "sd", self.samples.std(axis=0, ddof=1))

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    @property
    def d_z(self) -> int:
        return self.samples.shape[1]


def _sample_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))


def _point_seed(seed: int, index: int) -> int:
    return int(_sample_seed(seed, index).generate_state(1, np.uint64)[0])


class DropoutSurrogate(BaseEstimator, RegressorMixin):
    """MC-dropout dense regressor from inputs to latent vectors.

    Parameters
    ----------
    keep_rate : probability a node is retained by each dropout mask; the
        spread of the predictive posterior shrinks as this approaches 1
        (at exactly 1 the posterior collapses to a point).
    hidden : hidden layer widths.
    epochs, batch_size, learning_rate : Adam training schedule.
    train_samples : masked passes per item per training iteration (>= 2).
    predict_samples : default posterior sample count at prediction time.
    input_dropout : also mask the input layer (on by default).
    sigma_floor : lower bound substituted for degenerate sample sds.
    seed : root seed for init, shuffling and training masks.
    """

    def __init__(self, keep_rate: float = 0.95, hidden: tuple = (64, 64),
                 epochs: int = 150, batch_size: int = 64,
                 learning_rate: float = 1e-3, train_samples: int = 20,
                 predict_samples: int = 1000, input_dropout: bool = True,
                 sigma_floor: float = SIGMA_FLOOR, seed: int = 0):
        self.keep_rate = keep_rate
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.train_samples = train_samples
        self.predict_samples = predict_samples
        self.input_dropout = input_dropout
        self.sigma_floor = sigma_floor
        self.seed = seed

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise NotFittedError(
                "this DropoutSurrogate instance is not fitted yet"
            )

    # -- mask plumbing --------------------------------------------------

    def _layer_keep_rates(self) -> list[float]:
        first = self.keep_rate if self.input_dropout else 1.0
        return [first] + [self.keep_rate] * (len(self.net_.layers) - 1)

    def _training_masks(self, rng, n_rows: int) -> list[DropoutMask]:
        return [sample_mask(kr, w, rng, n_rows=n_rows)
                for kr, w in zip(self._layer_keep_rates(),
                                 self.net_.input_widths())]

    def _prediction_masks(self, seed: int, n_samples: int
                          ) -> list[DropoutMask]:
        """Per-layer mask matrices; row s comes from substream (seed, s)."""
        widths = self.net_.input_widths()
        keep = self._layer_keep_rates()
        rows = [np.empty((n_samples, w)) for w in widths]
        for s in range(n_samples):
            rng = np.random.default_rng(_sample_seed(seed, s))
            for li, (kr, w) in enumerate(zip(keep, widths)):
                rows[li][s] = sample_mask(kr, w, rng).mask[0]
        return [DropoutMask(kr, m) for kr, m in zip(keep, rows)]

    # -- training -------------------------------------------------------

    def fit(self, X, Z, X_val=None, Z_val=None):
        """Train on (inputs, latent targets) with the S-sample NLL loss.

        Latent targets are standardized internally with their own
        per-dimension statistics; predictions are mapped back.
        """
        X = as_matrix(X, "X")
        Z = as_matrix(Z, "Z")
        if len(X) != len(Z):
            raise ValueError("X and Z must have the same number of rows")
        check_keep_rate(self.keep_rate)
        if self.train_samples < 2:
            raise ValueError("train_samples must be at least 2")
        if self.predict_samples < 2:
            raise ValueError("predict_samples must be at least 2")
        degenerate = self.keep_rate == 1.0
        if degenerate:
            warnings.warn(
                "degenerate keep-rate 1.0: all dropout masks are identical, "
                "the predictive sd is identically 0 and the likelihood is "
                "driven by the sd floor", UserWarning, stacklevel=2)

        self.latent_mean_ = Z.mean(axis=0)
        self.latent_sd_ = Z.std(axis=0)
        if np.any(self.latent_sd_ < 1e-12):
            raise ZeroVarianceError("latent target dimension has ~zero "
                                    "variance; cannot standardize")
        Zn = (Z - self.latent_mean_) / self.latent_sd_
        Zn_val = None
        if X_val is not None and Z_val is not None:
            X_val = as_matrix(X_val, "X_val", n_cols=X.shape[1])
            Z_val = as_matrix(Z_val, "Z_val", n_cols=Z.shape[1])
            Zn_val = (Z_val - self.latent_mean_) / self.latent_sd_

        self.net_ = Network.build(
            [X.shape[1], *self.hidden, Z.shape[1]],
            seed=derive_seed(self.seed, "forward"))
        mask_rng = generator(self.seed, "train-masks")
        shuffle_rng = generator(self.seed, "shuffle")
        floor_counter = FloorCounter()
        n = len(X)
        bs = min(self.batch_size, n)
        S = self.train_samples
        train_log, val_log = [], []
        for epoch in range(self.epochs):
            perm = shuffle_rng.permutation(n)
            epoch_loss = 0.0
            for start in range(0, n, bs):
                idx = perm[start:start + bs]
                masks = self._training_masks(mask_rng, S * len(idx))
                loss, grads, n_floored, frac = _mc_loss_and_grads(
                    self.net_, X[idx], Zn[idx], masks, S, self.sigma_floor)
                if not np.isfinite(loss):
                    raise TrainingDivergedError(
                        f"forward-model loss diverged at epoch {epoch}")
                floor_counter.count += n_floored
                if not degenerate and frac > 0.5:
                    raise VarianceCollapseError(
                        f"predictive sd at floor for {frac:.0%} of the batch "
                        f"at epoch {epoch} (keep_rate={self.keep_rate})")
                self.net_.adam_step(grads, self.learning_rate)
                epoch_loss += loss * len(idx)
            train_log.append(epoch_loss / n)
            if Zn_val is not None:
                val_log.append(self._validation_nll(
                    X_val, Zn_val, epoch, floor_counter))
        self.train_log_ = {"train_nll": train_log, "val_nll": val_log}
        self.diagnostics_ = {
            "floor_substitutions": floor_counter.count,
            "degenerate_keep_rate": degenerate,
        }
        self.n_features_in_ = X.shape[1]
        return self

    def _validation_nll(self, X_val, Zn_val, epoch: int,
                        counter: FloorCounter) -> float:
        rng = generator(self.seed, "val-masks", epoch)
        S, N = self.train_samples, len(X_val)
        masks = self._training_masks(rng, S * N)
        out = self.net_.forward(np.tile(X_val, (S, 1)), masks)
        F = out.reshape(S, N, -1)
        return gaussian_nll_batch(Zn_val, F.mean(axis=0),
                                  F.std(axis=0, ddof=1),
                                  floor=self.sigma_floor, counter=counter)

    # -- prediction -----------------------------------------------------

    def predict(self, X) -> np.ndarray:
        """Dropout-disabled point prediction (latent units)."""
        self._check_fitted()
        X = as_matrix(X, "X", n_cols=self.n_features_in_)
        out = self.net_.forward(X)
        return out * self.latent_sd_ + self.latent_mean_

    def sample_posterior(self, x, n_samples: int | None = None,
                         seed: int = 0) -> PosteriorSamples:
        """Draw masked passes at one input; masks stay on.

        Sample ``s`` uses the RNG substream ``(seed, s)``, so the result
        is independent of batching or evaluation order.
        """
        self._check_fitted()
        x = as_vector(x, "x", size=self.n_features_in_)
        S = int(n_samples or self.predict_samples)
        if S < 2:
            raise ValueError("n_samples must be at least 2")
        masks = self._prediction_masks(seed, S)
        out = self.net_.forward(np.tile(x[None, :], (S, 1)), masks)
        samples = out * self.latent_sd_ + self.latent_mean_
        return PosteriorSamples(input=x.copy(), samples=samples)

    def sample_posterior_batch(self, X, n_samples: int | None = None,
                               seed: int = 0) -> list[PosteriorSamples]:
        """Posterior per row of X; point i uses the derived seed (seed, i).

        Equivalent to calling :meth:`sample_posterior` per point, but the
        network passes are batched.
        """
        self._check_fitted()
        X = as_matrix(X, "X", n_cols=self.n_features_in_)
        S = int(n_samples or self.predict_samples)
        if S < 2:
            raise ValueError("n_samples must be at least 2")
        N = len(X)
        widths = self.net_.input_widths()
        keep = self._layer_keep_rates()
        stacked = [np.empty((N * S, w)) for w in widths]
        for i in range(N):
            per_point = self._prediction_masks(_point_seed(seed, i), S)
            for li in range(len(widths)):
                stacked[li][i * S:(i + 1) * S] = per_point[li].mask
        masks = [DropoutMask(kr, m) for kr, m in zip(keep, stacked)]
        out = self.net_.forward(np.repeat(X, S, axis=0), masks)
        samples = out * self.latent_sd_ + self.latent_mean_
        samples = samples.reshape(N, S, -1)
        return [PosteriorSamples(input=X[i].copy(), samples=samples[i])
                for i in range(N)]

    # -- persistence ----------------------------------------------------

    def save(self, out_dir) -> None:
        self._check_fitted()
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        checkpoint.save_network(self.net_, out_dir / "forward.lcnn")
        write_json(out_dir / "fwd_meta.json", {
            "params": {
                "keep_rate": self.keep_rate, "hidden": list(self.hidden),
                "epochs": self.epochs, "batch_size": self.batch_size,
                "learning_rate": self.learning_rate,
                "train_samples": self.train_samples,
                "predict_samples": self.predict_samples,
                "input_dropout": self.input_dropout,
                "sigma_floor": self.sigma_floor, "seed": self.seed,
            },
            "latent_mean": self.latent_mean_.tolist(),
            "latent_sd": self.latent_sd_.tolist(),
            "train_log": self.train_log_,
            "diagnostics": self.diagnostics_,
        })

    @classmethod
    def load(cls, path) -> "DropoutSurrogate":
        path = Path(path)
        meta = read_json(path / "fwd_meta.json")
        params = dict(meta["params"])
        params["hidden"] = tuple(params["hidden"])
        model = cls(**params)
        model.net_ = checkpoint.load_network(path / "forward.lcnn")
        model.latent_mean_ = np.asarray(meta["latent_mean"], dtype=np.float64)
        model.latent_sd_ = np.asarray(meta["latent_sd"], dtype=np.float64)
        model.train_log_ = meta["train_log"]
        model.diagnostics_ = meta["diagnostics"]
        model.n_features_in_ = model.net_.in_dim
        return model


def train_forward(latent: LatentDataset, **params) -> DropoutSurrogate:
    """Fit a DropoutSurrogate on a latent dataset's training split."""
    model = DropoutSurrogate(**params)
    return model.fit(latent.inputs_of("train"), latent.latents_of("train"),
                     latent.inputs_of("val"), latent.latents_of("val"))


# ---------------------------------------------------------------------------
# deterministic baseline (no dropout, plain MSE)

class DenseRegressor(BaseEstimator, RegressorMixin):
    """Plain dense regressor: the no-dropout point-prediction baseline."""

    def __init__(self, hidden: tuple = (64, 64), epochs: int = 150,
                 batch_size: int = 64, learning_rate: float = 1e-3,
                 seed: int = 0):
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed

    def fit(self, X, Z):
        X = as_matrix(X, "X")
        Z = as_matrix(Z, "Z")
        if len(X) != len(Z):
            raise ValueError("X and Z must have the same number of rows")
        self.latent_mean_ = Z.mean(axis=0)
        self.latent_sd_ = Z.std(axis=0)
        if np.any(self.latent_sd_ < 1e-12):
            raise ZeroVarianceError("target dimension has ~zero variance")
        Zn = (Z - self.latent_mean_) / self.latent_sd_
        net = Network.build([X.shape[1], *self.hidden, Z.shape[1]],
                            seed=derive_seed(self.seed, "dense"))
        rng = generator(self.seed, "shuffle")
        n = len(X)
        bs = min(self.batch_size, n)
        losses = []
        for epoch in range(self.epochs):
            perm = rng.permutation(n)
            epoch_loss = 0.0
            for start in range(0, n, bs):
                idx = perm[start:start + bs]
                out, cache = net.forward_cached(X[idx])
                resid = out - Zn[idx]
                loss = float(np.mean(np.square(resid)))
                if not np.isfinite(loss):
                    raise TrainingDivergedError(
                        f"regressor loss diverged at epoch {epoch}")
                grads, _ = net.backward((2.0 / resid.size) * resid, cache)
                net.adam_step(grads, self.learning_rate)
                epoch_loss += loss * len(idx)
            losses.append(epoch_loss / n)
        self.net_ = net
        self.train_log_ = {"train_mse": losses}
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "net_"):
            raise NotFittedError(
                "this DenseRegressor instance is not fitted yet")
        X = as_matrix(X, "X", n_cols=self.n_features_in_)
        return self.net_.forward(X) * self.latent_sd_ + self.latent_mean_


# ---------------------------------------------------------------------------
# decoded output posteriors

@dataclass(frozen=True)
class OutputPosterior:
    """Decoded posterior: every latent sample individually decoded.

    Cross-channel and cross-pixel correlations are exactly those induced
    by the decoder; marginals are never reassembled independently.
    """

    latent: PosteriorSamples
    scalar_samples: np.ndarray  # (S, d_s)
    image_samples: np.ndarray   # (S, d_img, d_img)

    @property
    def scalar_mean(self) -> np.ndarray:
        return self.scalar_samples.mean(axis=0)

    @property
    def scalar_sd(self) -> np.ndarray:
        return self.scalar_samples.std(axis=0, ddof=1)

    @property
    def image_mean(self) -> np.ndarray:
        return self.image_samples.mean(axis=0)

    @property
    def image_sd(self) -> np.ndarray:
        return self.image_samples.std(axis=0, ddof=1)


def predict_output_posterior(model: DropoutSurrogate,
                             ae: MultimodalAutoencoder, x,
                             n_samples: int | None = None,
                             seed: int = 0) -> OutputPosterior:
    """Latent posterior at x, mapped sample-by-sample through the decoder."""
    model._check_fitted()
    if ae.n_latent != model.net_.out_dim:
        raise ValueError(
            f"latent width mismatch: decoder expects {ae.n_latent}, forward "
            f"model produces {model.net_.out_dim}")
    ps = model.sample_posterior(x, n_samples=n_samples, seed=seed)
    decoded = ae.inverse_transform(ps.samples)
    d_s, d_img = ae.n_scalars, ae.d_img
    return OutputPosterior(
        latent=ps,
        scalar_samples=decoded[:, :d_s],
        image_samples=decoded[:, d_s:].reshape(len(decoded), d_img, d_img),
    )
