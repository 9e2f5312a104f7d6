"""Gaussian tail functions, Cholesky sampling and reproducible random streams."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

__all__ = [
    "COVARIANCE_STREAM",
    "CALIBRATION_STREAM",
    "NotPositiveDefinite",
    "CholeskyFactor",
    "RngStream",
    "normal_sf",
    "normal_cdf",
    "normal_pdf",
    "normal_quantile",
    "cholesky",
    "mvn_sample",
]

PIVOT_TOL = 1e-12
SYMMETRY_TOL = 1e-10

# Stream indices reserved per master seed; replication r uses stream_index r.
COVARIANCE_STREAM = 2**62
CALIBRATION_STREAM = 2**62 + 1

# Above this point erfc loses the tail to underflow; switch to log-space erfcx.
_TAIL_SWITCH = 5.0
_SQRT2 = math.sqrt(2.0)


class NotPositiveDefinite(ValueError):
    """Raised when a covariance matrix has a Cholesky pivot at or below tolerance."""


def normal_sf(x):
    """Upper tail ``1 - Phi(x)`` of the standard normal.

    Accepts scalars or arrays. The far tail is evaluated as
    ``exp(log(erfcx(x/sqrt 2) / 2) - x**2 / 2)`` so that the single rounding
    happens at the end, which keeps subnormal results to within one ulp.
    """
    arr = np.asarray(x, dtype=float)
    out = np.empty_like(arr)
    tail = arr > _TAIL_SWITCH
    body = ~tail
    out[body] = 0.5 * special.erfc(arr[body] / _SQRT2)
    xt = arr[tail]
    with np.errstate(divide="ignore", invalid="ignore"):
        out[tail] = np.exp(np.log(0.5 * special.erfcx(xt / _SQRT2)) - 0.5 * xt * xt)
    out[np.isposinf(arr)] = 0.0
    if np.ndim(x) == 0:
        return float(out)
    return out


def normal_cdf(x):
    """Lower tail ``Phi(x)``, computed as ``normal_sf(-x)`` to keep the left tail accurate."""
    return normal_sf(np.negative(x, dtype=float))


def normal_pdf(x):
    arr = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * arr * arr) / math.sqrt(2.0 * math.pi)
    return float(out) if np.ndim(x) == 0 else out


def normal_quantile(q):
    """Inverse of the standard normal CDF on the open interval (0, 1)."""
    arr = np.asarray(q, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ValueError(f"normal_quantile requires 0 < q < 1, got {q!r}")
    out = special.ndtri(arr)
    return float(out) if np.ndim(q) == 0 else out


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor ``L`` with ``L @ L.T`` equal to the source matrix."""

    lower: np.ndarray

    def __post_init__(self):
        lower = np.array(self.lower, dtype=float)
        if lower.ndim != 2 or lower.shape[0] != lower.shape[1]:
            raise ValueError("Cholesky factor must be square")
        lower.setflags(write=False)
        object.__setattr__(self, "lower", lower)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "CholeskyFactor":
        return cls(np.eye(dim))

    def reconstruct(self) -> np.ndarray:
        return self.lower @ self.lower.T


def cholesky(m) -> CholeskyFactor:
    """Factor a symmetric positive definite matrix.

    Raises
    ------
    ValueError
        If ``m`` is not square, not finite or not symmetric to 1e-10.
    NotPositiveDefinite
        If any pivot (squared diagonal of the factor) is at or below 1e-12.
    """
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    if a.size and np.max(np.abs(a - a.T)) > SYMMETRY_TOL:
        raise ValueError("matrix is not symmetric")
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    pivots = np.diag(lower) ** 2
    if a.size and (not np.all(np.isfinite(pivots)) or np.min(pivots) <= PIVOT_TOL):
        bad = int(np.argmin(pivots))
        raise NotPositiveDefinite(f"pivot {bad} is {pivots[bad]:.3g} <= {PIVOT_TOL:g}")
    return CholeskyFactor(lower)


@dataclass(frozen=True)
class RngStream:
    """A named, independent random stream.

    ``(master_seed, stream_index)`` is hashed by :class:`numpy.random.SeedSequence`
    through its spawn key, so distinct indices give independent PCG64 streams
    and equal pairs give bit-identical draws.
    """

    master_seed: int
    stream_index: int = 0
    subkey: tuple = ()
    _gen: np.random.Generator = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if int(self.stream_index) < 0:
            raise ValueError("stream_index must be non-negative")
        seq = np.random.SeedSequence(
            int(self.master_seed), spawn_key=(int(self.stream_index), *map(int, self.subkey))
        )
        object.__setattr__(self, "_gen", np.random.Generator(np.random.PCG64(seq)))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def child(self, index: int) -> "RngStream":
        """Independent sub-stream, e.g. one per null draw inside a calibration."""
        return RngStream(self.master_seed, self.stream_index, (*self.subkey, int(index)))

    def standard_normal(self, size) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)


def mvn_sample(factor: CholeskyFactor, mean, rng) -> np.ndarray:
    """Draw ``mean + L @ g`` with ``g`` standard normal from ``rng``."""
    mean = np.asarray(mean, dtype=float)
    if mean.shape != (factor.dim,):
        raise ValueError(f"mean has shape {mean.shape}, factor has dim {factor.dim}")
    g = np.asarray(rng.standard_normal(factor.dim), dtype=float)
    return mean + factor.lower @ g
