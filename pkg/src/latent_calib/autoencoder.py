"""Joint latent representation of multimodal outputs.

``MultimodalAutoencoder`` is an sklearn-style transformer: ``fit`` on a
physical-unit output matrix (scalar channels followed by row-major
flattened image pixels), ``transform`` encodes to the latent space,
``inverse_transform`` decodes back to physical units with the image
clamped at zero. Normalization statistics (training split only) are
stored on the model, so callers always pass physical units.

The autoencoder is deterministic by design: no dropout anywhere, and a
fixed seed gives a bit-identical training trajectory. Downstream it is
treated as a frozen nonlinear preprocessing of the outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import checkpoint
from .datagen import N_SCALARS, OutputScaler, SimDataset
from .errors import TrainingDivergedError
from .fileio import read_csv, read_json, write_csv, write_json
from .netcore import Network
from .rngs import derive_seed, generator
from .validation import as_matrix

META_NAME = "ae_meta.json"


class MultimodalAutoencoder(BaseEstimator, TransformerMixin):
    """Dense symmetric autoencoder over (scalars || image pixels).

    Parameters
    ----------
    n_latent : width of the latent space (must be < d_s + d_img**2).
    hidden : encoder hidden widths; the decoder mirrors them.
    epochs, batch_size, learning_rate : Adam training schedule.
    n_scalars, d_img : column layout of the stacked output matrix.
    seed : root seed for init and batch shuffling.
    """

    def __init__(self, n_latent: int = 8, hidden: tuple = (128, 64),
                 epochs: int = 200, batch_size: int = 64,
                 learning_rate: float = 1e-3, n_scalars: int = N_SCALARS,
                 d_img: int = 16, seed: int = 0):
        self.n_latent = n_latent
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.n_scalars = n_scalars
        self.d_img = d_img
        self.seed = seed

    # -- sklearn plumbing ---------------------------------------------------

    @property
    def d_y(self) -> int:
        return self.n_scalars + self.d_img ** 2

    def _check_fitted(self):
        if not hasattr(self, "encoder_"):
            raise NotFittedError(
                "this MultimodalAutoencoder instance is not fitted yet"
            )

    # -- training -----------------------------------------------------------

    def fit(self, Y, Y_val=None):
        """Train encoder/decoder to minimize reconstruction MSE.

        ``Y`` is the training-split physical output matrix
        ``(n, n_scalars + d_img**2)``; ``Y_val`` is only used for the
        per-epoch validation loss log.
        """
        Y = as_matrix(Y, "Y", n_cols=self.d_y)
        if self.n_latent < 1:
            raise ValueError("n_latent must be at least 1")
        if self.n_latent >= self.d_y:
            raise ValueError(
                f"n_latent={self.n_latent} must be smaller than the output "
                f"dimension {self.d_y}"
            )
        self.scaler_ = OutputScaler.fit(
            Y[:, :self.n_scalars], Y[:, self.n_scalars:], self.d_img
        )
        yn = self.scaler_.transform(Y)
        yn_val = None
        if Y_val is not None:
            yn_val = self.scaler_.transform(
                as_matrix(Y_val, "Y_val", n_cols=self.d_y))

        dims = [self.d_y, *self.hidden, self.n_latent]
        enc = Network.build(dims, seed=derive_seed(self.seed, "encoder"))
        dec = Network.build(list(reversed(dims)),
                            seed=derive_seed(self.seed, "decoder"))
        rng = generator(self.seed, "shuffle")
        n = len(yn)
        bs = min(self.batch_size, n)
        train_log, val_log = [], []
        for _epoch in range(self.epochs):
            perm = rng.permutation(n)
            epoch_loss = 0.0
            for start in range(0, n, bs):
                idx = perm[start:start + bs]
                yb = yn[idx]
                z, enc_cache = enc.forward_cached(yb)
                yh, dec_cache = dec.forward_cached(z)
                resid = yh - yb
                loss = float(np.mean(np.square(resid)))
                if not np.isfinite(loss):
                    raise TrainingDivergedError(
                        f"autoencoder loss diverged at epoch {_epoch}"
                    )
                epoch_loss += loss * len(idx)
                grad_out = (2.0 / resid.size) * resid
                dec_grads, dz = dec.backward(grad_out, dec_cache)
                enc_grads, _ = enc.backward(dz, enc_cache)
                dec.adam_step(dec_grads, self.learning_rate)
                enc.adam_step(enc_grads, self.learning_rate)
            train_log.append(epoch_loss / n)
            if yn_val is not None:
                vh = dec.forward(enc.forward(yn_val))
                val_log.append(float(np.mean(np.square(vh - yn_val))))
        self.encoder_ = enc
        self.decoder_ = dec
        self.train_log_ = {"train_loss": train_log, "val_loss": val_log}
        self.n_features_in_ = self.d_y
        return self

    # -- encode / decode ----------------------------------------------------

    def transform(self, Y) -> np.ndarray:
        """Encode physical outputs to latent vectors (deterministic)."""
        self._check_fitted()
        Y = as_matrix(Y, "Y", n_cols=self.d_y)
        return self.encoder_.forward(self.scaler_.transform(Y))

    def inverse_transform(self, Z) -> np.ndarray:
        """Decode latent vectors to physical units; image clamped at 0."""
        self._check_fitted()
        Z = as_matrix(Z, "Z", n_cols=self.n_latent)
        return self.scaler_.inverse_transform(self.decoder_.forward(Z))

    def decode_normalized(self, Z) -> np.ndarray:
        """Decode to normalized units (no denormalization, no clamp)."""
        self._check_fitted()
        Z = as_matrix(Z, "Z", n_cols=self.n_latent)
        return self.decoder_.forward(Z)

    # -- persistence ----------------------------------------------------

    def save(self, out_dir) -> None:
        self._check_fitted()
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        checkpoint.save_network(self.encoder_, out_dir / "encoder.lcnn")
        checkpoint.save_network(self.decoder_, out_dir / "decoder.lcnn")
        write_json(out_dir / META_NAME, {
            "params": {
                "n_latent": self.n_latent, "hidden": list(self.hidden),
                "epochs": self.epochs, "batch_size": self.batch_size,
                "learning_rate": self.learning_rate,
                "n_scalars": self.n_scalars, "d_img": self.d_img,
                "seed": self.seed,
            },
            "scaler": self.scaler_.to_dict(),
            "train_log": self.train_log_,
        })

    @classmethod
    def load(cls, path) -> "MultimodalAutoencoder":
        path = Path(path)
        meta = read_json(path / META_NAME)
        params = dict(meta["params"])
        params["hidden"] = tuple(params["hidden"])
        model = cls(**params)
        model.scaler_ = OutputScaler.from_dict(meta["scaler"])
        model.encoder_ = checkpoint.load_network(path / "encoder.lcnn")
        model.decoder_ = checkpoint.load_network(path / "decoder.lcnn")
        model.train_log_ = meta["train_log"]
        model.n_features_in_ = model.d_y
        return model


def train_autoencoder(ds: SimDataset, **params) -> MultimodalAutoencoder:
    """Fit an autoencoder on a dataset's training split (val split logged)."""
    params.setdefault("n_scalars", ds.manifest.d_s)
    params.setdefault("d_img", ds.manifest.d_img)
    model = MultimodalAutoencoder(**params)
    return model.fit(ds.stacked_outputs("train"), ds.stacked_outputs("val"))


# ---------------------------------------------------------------------------
# latent datasets

@dataclass
class LatentDataset:
    """Encoded dataset: inputs, latent vectors, split structure, stats."""

    inputs: np.ndarray   # (n, d_in)
    latents: np.ndarray  # (n, d_z)
    splits: dict[str, list[int]]
    latent_mean: np.ndarray  # training-split per-dim mean
    latent_sd: np.ndarray    # training-split per-dim sd (ddof=0)

    def split(self, name: str) -> np.ndarray:
        return np.asarray(self.splits[name], dtype=np.intp)

    def inputs_of(self, name: str) -> np.ndarray:
        return self.inputs[self.split(name)]

    def latents_of(self, name: str) -> np.ndarray:
        return self.latents[self.split(name)]

    @property
    def d_z(self) -> int:
        return self.latents.shape[1]

    @property
    def d_in(self) -> int:
        return self.inputs.shape[1]


def encode_dataset(model: MultimodalAutoencoder, ds: SimDataset,
                   out_dir=None) -> LatentDataset:
    """Encode every sample; split structure is preserved.

    Training-split per-dimension mean/sd are recorded for forward-model
    normalization.
    """
    Z = model.transform(ds.stacked_outputs())
    train_idx = ds.split("train")
    latent = LatentDataset(
        inputs=ds.inputs.copy(),
        latents=Z,
        splits={k: list(v) for k, v in ds.manifest.splits.items()},
        latent_mean=Z[train_idx].mean(axis=0),
        latent_sd=Z[train_idx].std(axis=0),
    )
    if out_dir is not None:
        save_latent_dataset(latent, out_dir)
    return latent


def save_latent_dataset(latent: LatentDataset, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / "inputs.csv",
              [f"x{i}" for i in range(latent.d_in)], latent.inputs)
    write_csv(out_dir / "latents.csv",
              [f"z{i}" for i in range(latent.d_z)], latent.latents)
    write_json(out_dir / "latent_meta.json", {
        "d_z": latent.d_z,
        "d_in": latent.d_in,
        "splits": latent.splits,
        "latent_mean": latent.latent_mean.tolist(),
        "latent_sd": latent.latent_sd.tolist(),
    })


def load_latent_dataset(path) -> LatentDataset:
    path = Path(path)
    meta = read_json(path / "latent_meta.json")
    _, inputs = read_csv(path / "inputs.csv")
    _, latents = read_csv(path / "latents.csv")
    return LatentDataset(
        inputs=inputs, latents=latents,
        splits={k: list(v) for k, v in meta["splits"].items()},
        latent_mean=np.asarray(meta["latent_mean"], dtype=np.float64),
        latent_sd=np.asarray(meta["latent_sd"], dtype=np.float64),
    )
