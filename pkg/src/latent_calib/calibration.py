"""Coverage, calibration curves, calibration error, keep-rate sweep.

Given Monte Carlo posteriors and held-out truths, the observed coverage
at confidence level p is the fraction of points whose truth falls
strictly inside the central p-interval of their posterior samples. The
calibration error score is the weighted sum of squared gaps between
nominal and observed coverage over a grid of levels; the keep-rate sweep
trains one forward model per candidate rate and picks the rate whose
mean error over latent dimensions (on the validation split) is minimal,
then reports that model on the test split.

Intervals are equal-tailed empirical quantile intervals computed by
linear interpolation of order statistics (the inclusive scheme). A
Gaussian ``mean +- z * sd`` variant is available behind a flag.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autoencoder import LatentDataset
from .errors import SweepAbortedError
from .fileio import write_csv, write_json
from .forward_uq import DropoutSurrogate, PosteriorSamples, train_forward
from .rngs import derive_seed
from .validation import as_matrix

DEFAULT_LEVELS = tuple(round(0.05 * k, 2) for k in range(1, 20))


def _default_levels() -> np.ndarray:
    return np.asarray(DEFAULT_LEVELS, dtype=np.float64)


@dataclass(frozen=True)
class ConfidenceGrid:
    """Ordered confidence levels in (0, 1) with non-negative weights."""

    levels: np.ndarray = field(default_factory=_default_levels)
    weights: np.ndarray | None = None

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=np.float64)
        if levels.ndim != 1 or levels.size == 0:
            raise ValueError("levels must be a non-empty 1-D sequence")
        if np.any(levels <= 0.0) or np.any(levels >= 1.0):
            raise ValueError("levels must lie strictly inside (0, 1)")
        if np.any(np.diff(levels) <= 0.0):
            raise ValueError("levels must be strictly increasing")
        weights = self.weights
        if weights is None:
            weights = np.ones_like(levels)
        else:
            weights = np.asarray(weights, dtype=np.float64)
            if weights.shape != levels.shape:
                raise ValueError("weights must align with levels")
            if np.any(weights < 0.0):
                raise ValueError("weights must be non-negative")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return self.levels.size


def central_interval(samples, level: float) -> tuple[float, float]:
    """Equal-tailed empirical interval at the given confidence level.

    Quantiles at (1-level)/2 and (1+level)/2 by linear interpolation of
    order statistics; needs at least two samples.
    """
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.size < 2:
        raise ValueError("need at least 2 samples for an interval")
    if not (0.0 < level < 1.0):
        raise ValueError(f"level must be in (0, 1), got {level}")
    lo, hi = np.quantile(samples, [(1.0 - level) / 2.0, (1.0 + level) / 2.0])
    return float(lo), float(hi)


def _intervals_sorted(sorted_samples: np.ndarray, level: float
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized central intervals for pre-sorted rows (N, S)."""
    S = sorted_samples.shape[-1]
    out = []
    for q in ((1.0 - level) / 2.0, (1.0 + level) / 2.0):
        pos = q * (S - 1)
        i0 = int(np.floor(pos))
        i1 = min(i0 + 1, S - 1)
        frac = pos - i0
        out.append(sorted_samples[..., i0] * (1.0 - frac)
                   + sorted_samples[..., i1] * frac)
    return out[0], out[1]


def _stack_dim(posteriors, truths, dim: int
               ) -> tuple[np.ndarray, np.ndarray]:
    if len(posteriors) != len(truths):
        raise ValueError(
            f"{len(posteriors)} posteriors but {len(truths)} truths")
    if len(posteriors) == 0:
        raise ValueError("need at least one test point")
    samples = np.stack([p.samples[:, dim] for p in posteriors])
    t = as_matrix(np.asarray(truths), "truths")[:, dim]
    return samples, t


def coverage(posteriors: list[PosteriorSamples], truths, level: float,
             dim: int) -> float:
    """Fraction of truths strictly inside their central interval.

    Strict inequalities: with continuous samples ties have measure zero,
    and degenerate ties count as non-covered.
    """
    samples, t = _stack_dim(posteriors, truths, dim)
    if not (0.0 < level < 1.0):
        raise ValueError(f"level must be in (0, 1), got {level}")
    lo, hi = _intervals_sorted(np.sort(samples, axis=-1), level)
    return float(np.mean((lo < t) & (t < hi)))


def _gaussian_intervals(posteriors, dim: int, level: float):
    mu = np.array([p.mean[dim] for p in posteriors])
    sd = np.array([p.sd[dim] for p in posteriors])
    zq = _norm_ppf((1.0 + level) / 2.0)
    return mu - zq * sd, mu + zq * sd


def calibration_curve(posteriors: list[PosteriorSamples], truths,
                      grid: ConfidenceGrid, dim: int,
                      interval: str = "empirical") -> np.ndarray:
    """Observed coverage at every grid level, aligned with the grid."""
    samples, t = _stack_dim(posteriors, truths, dim)
    observed = np.empty(len(grid))
    if interval == "empirical":
        sorted_samples = np.sort(samples, axis=-1)
        for i, level in enumerate(grid.levels):
            lo, hi = _intervals_sorted(sorted_samples, level)
            observed[i] = np.mean((lo < t) & (t < hi))
    elif interval == "gaussian":
        for i, level in enumerate(grid.levels):
            lo, hi = _gaussian_intervals(posteriors, dim, float(level))
            observed[i] = np.mean((lo < t) & (t < hi))
    else:
        raise ValueError(f"unknown interval scheme {interval!r}")
    return observed


def calibration_error(observed, grid: ConfidenceGrid) -> float:
    """Weighted sum of squared nominal-vs-observed coverage gaps."""
    observed = np.asarray(observed, dtype=np.float64)
    if observed.shape != grid.levels.shape:
        raise ValueError("curve is not aligned with the grid")
    return float(np.sum(grid.weights * np.square(grid.levels - observed)))


def _norm_ppf(q: float) -> float:
    """Standard normal quantile (Acklam's rational approximation)."""
    if not (0.0 < q < 1.0):
        raise ValueError("q must be in (0, 1)")
    a = (-3.969683028665376e+01, 2.209460984245205e+02,
         -2.759285104469687e+02, 1.383577518672690e+02,
         -3.066479806614716e+01, 2.506628277459239e+00)
    b = (-5.447609879822406e+01, 1.615858368580409e+02,
         -1.556989798598866e+02, 6.680131188771972e+01,
         -1.328068155288572e+01)
    c = (-7.784894002430293e-03, -3.223964580411365e-01,
         -2.400758277161838e+00, -2.549732539343734e+00,
         4.374664141464968e+00, 2.938163982698783e+00)
    d = (7.784695709041462e-03, 3.224671290700398e-01,
         2.445134137142996e+00, 3.754408661907416e+00)
    q_low = 0.02425
    if q < q_low:
        u = np.sqrt(-2.0 * np.log(q))
        return (((((c[0] * u + c[1]) * u + c[2]) * u + c[3]) * u + c[4]) * u
                + c[5]) / ((((d[0] * u + d[1]) * u + d[2]) * u + d[3]) * u
                           + 1.0)
    if q > 1.0 - q_low:
        u = np.sqrt(-2.0 * np.log(1.0 - q))
        return -(((((c[0] * u + c[1]) * u + c[2]) * u + c[3]) * u + c[4]) * u
                 + c[5]) / ((((d[0] * u + d[1]) * u + d[2]) * u + d[3]) * u
                            + 1.0)
    u = q - 0.5
    r = u * u
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r
            + a[5]) * u / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r
                            + b[4]) * r + 1.0)


# ---------------------------------------------------------------------------
# reports

@dataclass
class CalibrationReport:
    """Per-dimension calibration curves and error scores on one split."""

    levels: np.ndarray           # (L,)
    weights: np.ndarray          # (L,)
    observed: np.ndarray         # (d_z, L)
    per_dim_error: np.ndarray    # (d_z,)
    mean_error: float
    n_test: int
    metadata: dict = field(default_factory=dict)

    def validate(self) -> None:
        """Re-check the stored errors against the stored curves."""
        if np.any(self.observed < 0.0) or np.any(self.observed > 1.0):
            raise ValueError("observed coverage outside [0, 1]")
        grid = ConfidenceGrid(self.levels, self.weights)
        recomputed = np.array([calibration_error(row, grid)
                               for row in self.observed])
        if not np.allclose(recomputed, self.per_dim_error, atol=1e-12,
                           rtol=0.0):
            raise ValueError("stored errors do not match stored curves")
        if abs(float(recomputed.mean()) - self.mean_error) > 1e-12:
            raise ValueError("stored mean error does not match curves")

    @property
    def d_z(self) -> int:
        return self.observed.shape[0]

    def to_dict(self) -> dict:
        return {
            "levels": self.levels.tolist(),
            "weights": self.weights.tolist(),
            "observed": self.observed.tolist(),
            "per_dim_error": self.per_dim_error.tolist(),
            "mean_error": self.mean_error,
            "n_test": self.n_test,
            "metadata": self.metadata,
        }

    @staticmethod
    def from_dict(d: dict) -> "CalibrationReport":
        return CalibrationReport(
            levels=np.asarray(d["levels"], dtype=np.float64),
            weights=np.asarray(d["weights"], dtype=np.float64),
            observed=np.asarray(d["observed"], dtype=np.float64),
            per_dim_error=np.asarray(d["per_dim_error"], dtype=np.float64),
            mean_error=float(d["mean_error"]),
            n_test=int(d["n_test"]),
            metadata=dict(d.get("metadata", {})),
        )

    def save(self, out_dir) -> None:
        """Write ``calibration_report.json`` and ``curves.csv``."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_json(out_dir / "calibration_report.json", self.to_dict())
        rows = []
        for dim in range(self.d_z):
            for level, obs in zip(self.levels, self.observed[dim]):
                rows.append((dim, level, obs))
        write_csv(out_dir / "curves.csv", ["dim", "level", "observed"],
                  np.asarray(rows, dtype=np.float64))


def evaluate_calibration(posteriors: list[PosteriorSamples], truths,
                         grid: ConfidenceGrid | None = None,
                         interval: str = "empirical",
                         metadata: dict | None = None) -> CalibrationReport:
    """Build a CalibrationReport from posteriors and aligned truths."""
    grid = grid or ConfidenceGrid()
    truths = as_matrix(np.asarray(truths), "truths")
    d_z = posteriors[0].d_z
    observed = np.stack([
        calibration_curve(posteriors, truths, grid, dim, interval=interval)
        for dim in range(d_z)
    ])
    per_dim = np.array([calibration_error(row, grid) for row in observed])
    report = CalibrationReport(
        levels=grid.levels.copy(), weights=grid.weights.copy(),
        observed=observed, per_dim_error=per_dim,
        mean_error=float(per_dim.mean()), n_test=len(posteriors),
        metadata=metadata or {},
    )
    report.validate()
    return report


def calibrate_model(model: DropoutSurrogate, X, Z_true,
                    grid: ConfidenceGrid | None = None,
                    n_samples: int | None = None, seed: int = 0,
                    interval: str = "empirical",
                    metadata: dict | None = None) -> CalibrationReport:
    """Sample the model's posterior on (X, Z_true) and score calibration."""
    X = as_matrix(X, "X")
    Z_true = as_matrix(Z_true, "Z_true")
    posteriors = model.sample_posterior_batch(X, n_samples=n_samples,
                                              seed=seed)
    meta = {"keep_rate": model.keep_rate, "eval_seed": seed,
            "n_samples": posteriors[0].n_samples, "interval": interval}
    meta.update(metadata or {})
    return evaluate_calibration(posteriors, Z_true, grid,
                                interval=interval, metadata=meta)


# ---------------------------------------------------------------------------
# keep-rate sweep

@dataclass
class SweepEntry:
    keep_rate: float
    mean_error: float
    per_dim_error: np.ndarray
    report: CalibrationReport


@dataclass
class SweepResult:
    """Keep-rate sweep outcome: one entry per rate plus the selection.

    Selection happens on the validation split; ``test_report`` re-scores
    the selected model on the test split. Ties go to the larger rate.
    """

    entries: list[SweepEntry]
    selected_keep_rate: float | None = None
    selected_model: DropoutSurrogate | None = None
    test_report: CalibrationReport | None = None
    seed: int = 0

    def entry_for(self, keep_rate: float) -> SweepEntry:
        for e in self.entries:
            if e.keep_rate == keep_rate:
                return e
        raise KeyError(f"no sweep entry for keep_rate={keep_rate}")

    def table(self) -> np.ndarray:
        """(keep_rate, mean validation error, selected) rows."""
        return np.array([
            (e.keep_rate, e.mean_error,
             1.0 if e.keep_rate == self.selected_keep_rate else 0.0)
            for e in self.entries
        ])

    def save(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_csv(out_dir / "sweep_table.csv",
                  ["keep_rate", "mean_calibration_error", "selected"],
                  self.table())
        write_json(out_dir / "sweep_result.json", {
            "seed": self.seed,
            "selected_keep_rate": self.selected_keep_rate,
            "entries": [
                {"keep_rate": e.keep_rate, "mean_error": e.mean_error,
                 "per_dim_error": e.per_dim_error.tolist()}
                for e in self.entries
            ],
            "test_report": (self.test_report.to_dict()
                            if self.test_report else None),
        })


def parse_keep_rates(text: str) -> list[float]:
    """Parse ``start:stop:step`` (inclusive) or a comma-separated list."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"expected start:stop:step, got {text!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ValueError("step must be positive")
        n = int(round((stop - start) / step))
        rates = [round(start + i * step, 10) for i in range(n + 1)]
        return [r for r in rates if r <= stop + 1e-12]
    return [float(p) for p in text.split(",") if p.strip()]


def sweep_keep_rate(latent: LatentDataset, keep_rates,
                    grid: ConfidenceGrid | None = None, seed: int = 0,
                    train_params: dict | None = None,
                    n_samples: int | None = None) -> SweepResult:
    """Train one forward model per keep rate and select by calibration.

    All members share the same derived training seed and config, so the
    keep rate is the only thing that varies. Calibration is scored on
    the validation split; the winner is re-scored on the test split. A
    member failure raises :class:`SweepAbortedError` carrying the
    partial result.
    """
    keep_rates = [float(k) for k in keep_rates]
    if len(keep_rates) < 2:
        raise ValueError("need at least 2 keep rates to sweep")
    if "val" not in latent.splits or len(latent.splits["val"]) == 0:
        raise ValueError("latent dataset has no validation split")
    grid = grid or ConfidenceGrid()
    params = dict(train_params or {})
    params["seed"] = derive_seed(seed, "sweep-train")
    eval_seed = derive_seed(seed, "sweep-val")
    result = SweepResult(entries=[], seed=seed)
    models: dict[float, DropoutSurrogate] = {}
    for kr in keep_rates:
        member = dict(params)
        member["keep_rate"] = kr
        try:
            model = train_forward(latent, **member)
            report = calibrate_model(
                model, latent.inputs_of("val"), latent.latents_of("val"),
                grid=grid, n_samples=n_samples, seed=eval_seed,
                metadata={"split": "val"})
        except Exception as exc:
            raise SweepAbortedError(
                f"sweep member keep_rate={kr} failed: {exc}", result
            ) from exc
        models[kr] = model
        result.entries.append(SweepEntry(
            keep_rate=kr, mean_error=report.mean_error,
            per_dim_error=report.per_dim_error.copy(), report=report))
    best = result.entries[0]
    for e in result.entries[1:]:
        if (e.mean_error < best.mean_error
                or (e.mean_error == best.mean_error
                    and e.keep_rate > best.keep_rate)):
            best = e
    result.selected_keep_rate = best.keep_rate
    result.selected_model = models[best.keep_rate]
    result.test_report = calibrate_model(
        result.selected_model, latent.inputs_of("test"),
        latent.latents_of("test"), grid=grid, n_samples=n_samples,
        seed=derive_seed(seed, "sweep-test"), metadata={"split": "test"})
    return result
