"""Synthetic multimodal "simulator" and dataset tooling.

A deterministic analytic map from a low-dimensional input vector in
[0, 1]^d_in to eight correlated scalar diagnostics plus a small
non-negative image (an anisotropic Gaussian blob). It stands in for an
expensive simulation ensemble: smooth, nonlinear, multimodal, with a
strongly correlated scalar pair and an image whose peak position tracks
a designated input.

The exact formulas below are versioned constants
(``SIMULATOR_VERSION``); changing them is a breaking dataset-format
change.

Scalar channels (x0..x3 are the first four input coordinates):

====  ============  ====================================================
idx   name          formula
====  ============  ====================================================
0     log_strength  1.2*x0 + 0.8*x1*x2 - 1.5*(x3 - 0.5)^2
1     timing_a      1.0 + 0.45*x0^2 + 0.30*sin(2 pi x1) + 0.25*x2*x3
2     timing_b      timing_a + 0.02*sin(4 pi x0)
3     decay_mix     x1*exp(-2*x2) + 0.1*cos(2 pi x3)
4     quad_sum      ((x0 + x1 + x2 + x3) / 2)^2
5     log_blend     log1p(3*x0*x3) + 0.5*x1
6     saturation    tanh(2*(x2 - 0.5)) + 0.3*x0*x1
7     image_flux    mean over image pixels
====  ============  ====================================================

``(timing_a, timing_b)`` is the strongly correlated pair. The image is
an amplitude-A rotated Gaussian blob; its center column follows x0 (the
designated position input), center row and orientation follow x1, width
follows x2, and aspect ratio follows x3. Blob geometry keeps the
17%-of-peak level set strictly inside the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ZeroVarianceError
from .fileio import read_csv, read_json, write_csv, write_json
from .rngs import generator
from .validation import as_matrix, as_vector, check_unit_box

SIMULATOR_VERSION = 1
N_SCALARS = 8
SCALAR_NAMES = ("log_strength", "timing_a", "timing_b", "decay_mix",
                "quad_sum", "log_blend", "saturation", "image_flux")
CORRELATED_PAIR = (1, 2)
POSITION_INPUT = 0
DEFAULT_D_IN = 4
DEFAULT_D_IMG = 16
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class MultimodalOutput:
    """One sample's scalar vector plus image grid."""

    scalars: np.ndarray  # (N_SCALARS,)
    image: np.ndarray    # (d_img, d_img), non-negative

    def stacked(self) -> np.ndarray:
        """Concatenate scalars and the row-major flattened image."""
        return np.concatenate([self.scalars, self.image.ravel()])

    @staticmethod
    def from_stacked(y: np.ndarray, d_img: int) -> "MultimodalOutput":
        y = as_vector(y, "y", N_SCALARS + d_img * d_img)
        return MultimodalOutput(
            scalars=y[:N_SCALARS].copy(),
            image=y[N_SCALARS:].reshape(d_img, d_img).copy(),
        )


def _blob_params(X: np.ndarray, d_img: int):
    x0, x1, x2, x3 = X[:, 0], X[:, 1], X[:, 2], X[:, 3]
    cx = d_img * (0.32 + 0.28 * x0)
    cy = d_img * (0.32 + 0.28 * x1)
    sigma_major = d_img * (0.07 + 0.05 * x2)
    sigma_minor = sigma_major / (1.0 + x3)
    theta = np.pi * x1
    amplitude = 1.0 + 0.5 * x2 + 0.5 * x0 * x3
    return cx, cy, sigma_major, sigma_minor, theta, amplitude


def _simulate_batch(X: np.ndarray, d_img: int
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized simulator: (n, d_in) -> scalars (n, 8), images (n, d^2)."""
    x0, x1, x2, x3 = X[:, 0], X[:, 1], X[:, 2], X[:, 3]

    cx, cy, sig_a, sig_b, theta, amp = _blob_params(X, d_img)
    rows = np.arange(d_img, dtype=np.float64)
    cols = np.arange(d_img, dtype=np.float64)
    # broadcast over (n, row, col)
    dx = cols[None, None, :] - cx[:, None, None]
    dy = rows[None, :, None] - cy[:, None, None]
    cos_t = np.cos(theta)[:, None, None]
    sin_t = np.sin(theta)[:, None, None]
    u = dx * cos_t + dy * sin_t
    v = -dx * sin_t + dy * cos_t
    images = amp[:, None, None] * np.exp(
        -0.5 * (np.square(u / sig_a[:, None, None])
                + np.square(v / sig_b[:, None, None]))
    )
    images = images.reshape(len(X), d_img * d_img)

    s = np.empty((len(X), N_SCALARS))
    s[:, 0] = 1.2 * x0 + 0.8 * x1 * x2 - 1.5 * np.square(x3 - 0.5)
    s[:, 1] = (1.0 + 0.45 * np.square(x0) + 0.30 * np.sin(2 * np.pi * x1)
               + 0.25 * x2 * x3)
    s[:, 2] = s[:, 1] + 0.02 * np.sin(4 * np.pi * x0)
    s[:, 3] = x1 * np.exp(-2.0 * x2) + 0.1 * np.cos(2 * np.pi * x3)
    s[:, 4] = np.square((x0 + x1 + x2 + x3) / 2.0)
    s[:, 5] = np.log1p(3.0 * x0 * x3) + 0.5 * x1
    s[:, 6] = np.tanh(2.0 * (x2 - 0.5)) + 0.3 * x0 * x1
    s[:, 7] = images.mean(axis=1)
    return s, images


def simulate(x, d_img: int = DEFAULT_D_IMG) -> MultimodalOutput:
    """Evaluate the simulator at one input point in [0, 1]^d_in.

    Pure and deterministic: equal inputs give identical outputs.
    """
    x = as_vector(x, "x")
    if x.size < 4:
        raise ValueError(f"simulator needs at least 4 inputs, got {x.size}")
    check_unit_box(x, "x")
    if d_img < 8:
        raise ValueError("d_img must be at least 8")
    scalars, images = _simulate_batch(x.reshape(1, -1), d_img)
    return MultimodalOutput(scalars=scalars[0],
                            image=images[0].reshape(d_img, d_img))


# ---------------------------------------------------------------------------
# density profiles

@dataclass(frozen=True)
class DensityProfile:
    """Sampling density over the input box.

    ``uniform`` draws every coordinate from U[0, 1]. ``ramp`` keeps all
    coordinates uniform except ``coordinate``, which is piecewise
    constant with ``ratio`` times more density on [0, 0.5) than on
    [0.5, 1].
    """

    kind: str = "uniform"
    ratio: float = 1.0
    coordinate: int = 0

    def __post_init__(self):
        if self.kind not in ("uniform", "ramp"):
            raise ValueError(f"unknown density profile kind {self.kind!r}")
        if self.kind == "ramp" and self.ratio <= 0:
            raise ValueError("ramp ratio must be positive")

    @staticmethod
    def parse(text: str) -> "DensityProfile":
        """Parse ``uniform`` or ``ramp:RATIO`` (e.g. ``ramp:1.75``)."""
        text = text.strip()
        if text == "uniform":
            return DensityProfile()
        if text.startswith("ramp:"):
            return DensityProfile(kind="ramp", ratio=float(text[5:]))
        raise ValueError(f"invalid density profile {text!r}")

    def describe(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "ramp":
            d["ratio"] = self.ratio
            d["coordinate"] = self.coordinate
        return d

    @staticmethod
    def from_description(d: dict) -> "DensityProfile":
        return DensityProfile(kind=d["kind"], ratio=d.get("ratio", 1.0),
                              coordinate=d.get("coordinate", 0))

    def sample(self, n: int, d_in: int, rng: np.random.Generator
               ) -> np.ndarray:
        X = rng.random((n, d_in))
        if self.kind == "ramp":
            c = self.coordinate
            p_low = self.ratio / (1.0 + self.ratio)
            u = X[:, c]
            low = u < p_low
            X[low, c] = 0.5 * (u[low] / p_low)
            X[~low, c] = 0.5 + 0.5 * (u[~low] - p_low) / (1.0 - p_low)
        return X


# ---------------------------------------------------------------------------
# manifests and datasets

@dataclass
class DatasetManifest:
    n_samples: int
    d_in: int
    d_s: int
    d_img: int
    seed: int
    profile: dict
    splits: dict[str, list[int]] = field(default_factory=dict)
    simulator_version: int = SIMULATOR_VERSION
    scalar_names: tuple[str, ...] = SCALAR_NAMES

    def validate(self) -> None:
        all_idx = sorted(i for idx in self.splits.values() for i in idx)
        if all_idx != list(range(self.n_samples)):
            raise ValueError("splits must be disjoint and cover all samples")
        for name in ("val", "test"):
            if len(self.splits[name]) * 10 < self.n_samples:
                raise ValueError(f"{name} split below 10% of samples")

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "d_in": self.d_in,
            "d_s": self.d_s,
            "d_img": self.d_img,
            "seed": self.seed,
            "profile": self.profile,
            "splits": self.splits,
            "simulator_version": self.simulator_version,
            "scalar_names": list(self.scalar_names),
        }

    @staticmethod
    def from_dict(d: dict) -> "DatasetManifest":
        return DatasetManifest(
            n_samples=d["n_samples"], d_in=d["d_in"], d_s=d["d_s"],
            d_img=d["d_img"], seed=d["seed"], profile=d["profile"],
            splits={k: list(v) for k, v in d["splits"].items()},
            simulator_version=d["simulator_version"],
            scalar_names=tuple(d["scalar_names"]),
        )


@dataclass
class SimDataset:
    """In-memory dataset: inputs, scalar outputs, flattened images."""

    manifest: DatasetManifest
    inputs: np.ndarray   # (n, d_in)
    scalars: np.ndarray  # (n, d_s)
    images: np.ndarray   # (n, d_img * d_img), row-major

    def split(self, name: str) -> np.ndarray:
        return np.asarray(self.manifest.splits[name], dtype=np.intp)

    def stacked_outputs(self, split: str | None = None) -> np.ndarray:
        """Physical-unit output matrix (n, d_s + d_img^2)."""
        y = np.hstack([self.scalars, self.images])
        if split is None:
            return y
        return y[self.split(split)]

    def inputs_of(self, split: str) -> np.ndarray:
        return self.inputs[self.split(split)]

    @property
    def d_y(self) -> int:
        return self.manifest.d_s + self.manifest.d_img ** 2


def assign_splits(n: int, rng: np.random.Generator,
                  val_frac: float = 0.1, test_frac: float = 0.1
                  ) -> dict[str, list[int]]:
    """Random disjoint train/val/test assignment covering 0..n-1."""
    n_val = int(np.ceil(val_frac * n))
    n_test = int(np.ceil(test_frac * n))
    perm = rng.permutation(n)
    val = sorted(perm[:n_val].tolist())
    test = sorted(perm[n_val:n_val + n_test].tolist())
    train = sorted(perm[n_val + n_test:].tolist())
    return {"train": train, "val": val, "test": test}


def generate_dataset(n: int, seed: int,
                     profile: DensityProfile | str = "uniform",
                     out_dir=None, d_in: int = DEFAULT_D_IN,
                     d_img: int = DEFAULT_D_IMG) -> SimDataset:
    """Sample inputs per the density profile, simulate, assign splits.

    With ``out_dir`` the dataset is also written to disk; the same
    (n, seed, profile) always produces byte-identical files.
    """
    if n < 50:
        raise ValueError(f"need at least 50 samples, got {n}")
    if d_in < 4:
        raise ValueError("d_in must be at least 4")
    if isinstance(profile, str):
        profile = DensityProfile.parse(profile)
    X = profile.sample(n, d_in, generator(seed, "datagen", "inputs"))
    scalars, images = _simulate_batch(X, d_img)
    splits = assign_splits(n, generator(seed, "datagen", "splits"))
    manifest = DatasetManifest(
        n_samples=n, d_in=d_in, d_s=N_SCALARS, d_img=d_img, seed=int(seed),
        profile=profile.describe(), splits=splits,
    )
    manifest.validate()
    ds = SimDataset(manifest=manifest, inputs=X, scalars=scalars,
                    images=images)
    if out_dir is not None:
        save_dataset(ds, out_dir)
    return ds


def save_dataset(ds: SimDataset, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / MANIFEST_NAME, ds.manifest.to_dict())
    m = ds.manifest
    write_csv(out_dir / "inputs.csv",
              [f"x{i}" for i in range(m.d_in)], ds.inputs)
    write_csv(out_dir / "scalars.csv",
              [f"s{i}" for i in range(m.d_s)], ds.scalars)
    write_csv(out_dir / "images.csv",
              [f"px{i}" for i in range(m.d_img ** 2)], ds.images)


def load_dataset(path) -> SimDataset:
    path = Path(path)
    manifest = DatasetManifest.from_dict(read_json(path / MANIFEST_NAME))
    manifest.validate()
    _, inputs = read_csv(path / "inputs.csv")
    _, scalars = read_csv(path / "scalars.csv")
    _, images = read_csv(path / "images.csv")
    if not (len(inputs) == len(scalars) == len(images)
            == manifest.n_samples):
        raise ValueError(f"{path}: row counts do not match manifest")
    return SimDataset(manifest=manifest, inputs=inputs, scalars=scalars,
                      images=images)


# ---------------------------------------------------------------------------
# output normalization

@dataclass
class OutputScaler:
    """Per-channel standardization of multimodal outputs.

    Each scalar channel gets its own mean/sd; image pixels are
    standardized as one population (a single mean/sd for all pixels) so
    near-constant corner pixels cannot blow up. Statistics come from the
    training split only and are stored for exact inversion.
    """

    scalar_mean: np.ndarray
    scalar_sd: np.ndarray
    image_mean: float
    image_sd: float
    d_s: int
    d_img: int

    MIN_SD = 1e-12

    @classmethod
    def fit(cls, scalars: np.ndarray, images: np.ndarray, d_img: int
            ) -> "OutputScaler":
        scalars = as_matrix(scalars, "scalars")
        images = as_matrix(images, "images", n_cols=d_img * d_img)
        if len(scalars) < 2:
            raise ValueError("need at least 2 samples per channel")
        mean = scalars.mean(axis=0)
        sd = scalars.std(axis=0)
        if np.any(sd < cls.MIN_SD):
            bad = [int(i) for i in np.flatnonzero(sd < cls.MIN_SD)]
            raise ZeroVarianceError(
                f"zero-variance scalar channel(s): {bad}"
            )
        img_mean = float(images.mean())
        img_sd = float(images.std())
        if img_sd < cls.MIN_SD:
            raise ZeroVarianceError("zero-variance image population")
        return cls(scalar_mean=mean, scalar_sd=sd, image_mean=img_mean,
                   image_sd=img_sd, d_s=scalars.shape[1], d_img=d_img)

    @classmethod
    def fit_dataset(cls, ds: SimDataset) -> "OutputScaler":
        idx = ds.split("train")
        return cls.fit(ds.scalars[idx], ds.images[idx], ds.manifest.d_img)

    @property
    def d_y(self) -> int:
        return self.d_s + self.d_img ** 2

    def transform(self, stacked: np.ndarray) -> np.ndarray:
        """Standardize a physical (n, d_y) matrix."""
        y = as_matrix(stacked, "outputs", n_cols=self.d_y)
        out = np.empty_like(y)
        out[:, :self.d_s] = (y[:, :self.d_s] - self.scalar_mean) / self.scalar_sd
        out[:, self.d_s:] = (y[:, self.d_s:] - self.image_mean) / self.image_sd
        return out

    def inverse_transform(self, normalized: np.ndarray,
                          clamp_image: bool = True) -> np.ndarray:
        """Back to physical units; image pixels clamped at 0 by default."""
        y = as_matrix(normalized, "normalized outputs", n_cols=self.d_y)
        out = np.empty_like(y)
        out[:, :self.d_s] = y[:, :self.d_s] * self.scalar_sd + self.scalar_mean
        img = y[:, self.d_s:] * self.image_sd + self.image_mean
        if clamp_image:
            img = np.maximum(img, 0.0)
        out[:, self.d_s:] = img
        return out

    def to_dict(self) -> dict:
        return {
            "scalar_mean": self.scalar_mean.tolist(),
            "scalar_sd": self.scalar_sd.tolist(),
            "image_mean": self.image_mean,
            "image_sd": self.image_sd,
            "d_s": self.d_s,
            "d_img": self.d_img,
        }

    @staticmethod
    def from_dict(d: dict) -> "OutputScaler":
        return OutputScaler(
            scalar_mean=np.asarray(d["scalar_mean"], dtype=np.float64),
            scalar_sd=np.asarray(d["scalar_sd"], dtype=np.float64),
            image_mean=float(d["image_mean"]), image_sd=float(d["image_sd"]),
            d_s=int(d["d_s"]), d_img=int(d["d_img"]),
        )


def normalize_outputs(ds: SimDataset) -> tuple[np.ndarray, OutputScaler]:
    """Standardize all outputs with training-split statistics.

    Returns the full normalized (n, d_y) matrix plus the fitted scaler.
    """
    scaler = OutputScaler.fit_dataset(ds)
    return scaler.transform(ds.stacked_outputs()), scaler
