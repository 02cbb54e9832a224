"""Densities and two-sample statistics for scalar Monte Carlo output."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .errors import EmptyOverlap, TooFewSamples

MIN_SAMPLES = 100
DEFAULT_GRID_POINTS = 2048
BANDWIDTH_FLOOR = 1e-6
KL_FLOOR = 1e-12


@dataclass(frozen=True)
class Provenance:
    source: str
    master_seed: int
    count: int
    config_digest: str

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "master_seed": self.master_seed,
            "count": self.count,
            "config_digest": self.config_digest,
        }


@dataclass(frozen=True)
class SampleSet:
    values: np.ndarray
    provenance: Provenance = field(default_factory=lambda: Provenance("anonymous", 0, 0, ""))

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise ValueError("SampleSet values must be finite")
        object.__setattr__(self, "values", values)
        if self.provenance.count != values.size:
            object.__setattr__(
                self,
                "provenance",
                Provenance(self.provenance.source, self.provenance.master_seed, values.size,
                           self.provenance.config_digest),
            )

    @classmethod
    def from_values(cls, values, source="anonymous", master_seed=0, config_digest=""):
        values = np.asarray(values, dtype=float).reshape(-1)
        return cls(values, Provenance(source, int(master_seed), values.size, config_digest))

    @property
    def count(self) -> int:
        return self.values.size

    def __len__(self) -> int:
        return self.values.size

    def digest(self) -> str:
        h = hashlib.sha256(self.values.astype("<f8").tobytes())
        h.update(json.dumps(self.provenance.to_dict(), sort_keys=True).encode())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class DensityEstimate:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float
    label: str = ""

    def integral(self) -> float:
        return float(np.trapezoid(self.density, self.grid))


@dataclass(frozen=True)
class Moments:
    count: int
    mean: float
    variance: float
    skewness: float
    ex_kurtosis: float
    se_mean: float
    se_variance: float
    se_skewness: float
    se_kurtosis: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class ComparisonReport:
    kl: float
    ks_statistic: float
    moments_a: Moments
    moments_b: Moments

    @property
    def log_kl(self) -> float:
        return math.log(self.kl) if self.kl > 0 else -math.inf

    @property
    def sample_counts(self) -> tuple[int, int]:
        return self.moments_a.count, self.moments_b.count

    def to_dict(self) -> dict:
        return {
            "kl": self.kl,
            "log_kl": self.log_kl,
            "ks": self.ks_statistic,
            "moments_a": self.moments_a.to_dict(),
            "moments_b": self.moments_b.to_dict(),
        }


def _values(samples) -> np.ndarray:
    if isinstance(samples, SampleSet):
        return samples.values
    return np.asarray(samples, dtype=float).reshape(-1)


def _require(x: np.ndarray, what: str = "samples"):
    if x.size < MIN_SAMPLES:
        raise TooFewSamples(f"{what}: need at least {MIN_SAMPLES} values, got {x.size}")


def silverman_bandwidth(x: np.ndarray) -> float:
    """``0.9 * min(std, IQR / 1.34) * N**(-1/5)``, floored at 1e-6."""
    std = np.std(x, ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(std, (q75 - q25) / 1.34)
    if spread <= 0:
        # heavy ties collapse the IQR; fall back to the std before the floor
        spread = std
    return max(0.9 * spread * x.size ** (-0.2), BANDWIDTH_FLOOR)


def kde(samples, grid_points: int = DEFAULT_GRID_POINTS, label: str = "") -> DensityEstimate:
    """Gaussian KDE with Silverman's bandwidth on a uniform grid.

    The grid spans ``[min - 4h, max + 4h]``.  Samples are linearly binned
    onto the grid and convolved with the sampled kernel; the result is
    rescaled so its trapezoidal integral is exactly one.
    """
    x = _values(samples)
    _require(x)
    if grid_points < 16:
        raise ValueError("grid_points must be >= 16")
    h = silverman_bandwidth(x)
    lo, hi = x.min() - 4 * h, x.max() + 4 * h
    grid = np.linspace(lo, hi, grid_points)
    delta = grid[1] - grid[0]

    pos = (x - lo) / delta
    left = np.clip(np.floor(pos).astype(np.int64), 0, grid_points - 2)
    frac = pos - left
    counts = np.bincount(left, weights=1.0 - frac, minlength=grid_points)
    counts += np.bincount(left + 1, weights=frac, minlength=grid_points)

    half = int(np.ceil(8 * h / delta))
    offsets = np.arange(-half, half + 1) * delta
    kernel = np.exp(-0.5 * (offsets / h) ** 2) / (h * math.sqrt(2 * math.pi))
    dens = fftconvolve(counts, kernel, mode="full")[half : half + grid_points] / x.size
    dens = np.clip(dens, 0.0, None)
    dens /= np.trapezoid(dens, grid)
    return DensityEstimate(grid, dens, float(h), label or getattr(getattr(samples, "provenance", None), "source", ""))


def kl_divergence(p: DensityEstimate, q: DensityEstimate) -> float:
    """Trapezoidal ``int p ln(p/q)`` on the union of both grids.

    Both densities are linearly interpolated (zero outside their grid),
    renormalized on the union grid and clamped below at 1e-12.
    """
    if p.grid[-1] < q.grid[0] or q.grid[-1] < p.grid[0]:
        raise EmptyOverlap("density supports do not overlap")
    grid = np.union1d(p.grid, q.grid)
    pd = np.interp(grid, p.grid, p.density, left=0.0, right=0.0)
    qd = np.interp(grid, q.grid, q.density, left=0.0, right=0.0)
    pd /= np.trapezoid(pd, grid)
    qd /= np.trapezoid(qd, grid)
    pd = np.maximum(pd, KL_FLOOR)
    qd = np.maximum(qd, KL_FLOOR)
    return float(np.trapezoid(pd * np.log(pd / qd), grid))


def ks_two_sample(a, b) -> float:
    """Sup distance between the two empirical CDFs."""
    x, y = np.sort(_values(a)), np.sort(_values(b))
    _require(x, "first sample")
    _require(y, "second sample")
    # both CDFs evaluated just after every jump point, ties handled by side="right"
    pts = np.concatenate([x, y])
    fx = np.searchsorted(x, pts, side="right") / x.size
    fy = np.searchsorted(y, pts, side="right") / y.size
    return float(np.max(np.abs(fx - fy)))


def moments(samples) -> Moments:
    """Mean, unbiased variance, skewness and excess kurtosis.

    Skewness and kurtosis are the plug-in ``m3/m2**1.5`` and ``m4/m2**2 - 3``.
    Standard errors use the normal-reference formulas, e.g.
    ``se(kurtosis) = sqrt(24/N)``.
    """
    x = _values(samples)
    _require(x)
    n = x.size
    mean = float(np.mean(x))
    d = x - mean
    m2 = float(np.mean(d * d))
    var = m2 * n / (n - 1)
    if m2 > 0:
        skew = float(np.mean(d**3)) / m2**1.5
        kurt = float(np.mean(d**4)) / m2**2 - 3.0
    else:
        skew = kurt = 0.0
    return Moments(
        count=n,
        mean=mean,
        variance=var,
        skewness=skew,
        ex_kurtosis=kurt,
        se_mean=math.sqrt(var / n),
        se_variance=var * math.sqrt(2.0 / (n - 1)),
        se_skewness=math.sqrt(6.0 / n),
        se_kurtosis=math.sqrt(24.0 / n),
    )


def compare(a, b, grid_points: int = DEFAULT_GRID_POINTS) -> ComparisonReport:
    """KL(a || b) between KDEs, two-sample KS and moments of both samples."""
    return ComparisonReport(
        kl=kl_divergence(kde(a, grid_points), kde(b, grid_points)),
        ks_statistic=ks_two_sample(a, b),
        moments_a=moments(a),
        moments_b=moments(b),
    )
