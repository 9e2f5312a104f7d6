"""Signal-proportion estimation with Monte-Carlo bounding constants.

Two normalizations of the deviation between the ranked null tail and its
expectation are calibrated on null draws (``sqrt(sf)`` and ``sf``); each gives
a lower-bound estimator of the signal proportion and the reported estimate
is the larger of the two.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .depmodels import CovarianceSpec, build_covariance, covariance_from_dict, covariance_to_dict
from .io import dump_json
from .numcore import CALIBRATION_STREAM, COVARIANCE_STREAM, CholeskyFactor, RngStream, cholesky, normal_sf
from .statvector import StatVector

__all__ = [
    "FORMAT_VERSION",
    "SF_FLOOR",
    "DEFAULT_N_DRAWS",
    "InvalidNullMatrix",
    "SizeMismatch",
    "IndependentGaussian",
    "CovarianceNull",
    "ExternalMatrix",
    "NullCalibration",
    "ProportionEstimate",
    "quantile_level",
    "nearest_rank_quantile",
    "bounding_statistics",
    "calibrate",
    "calibration_from_matrix",
    "estimate_pi",
    "null_from_permutation",
    "load_null_matrix",
]

FORMAT_VERSION = 1
SF_FLOOR = 1e-300
DEFAULT_N_DRAWS = 500
MIN_N_DRAWS = 100


class InvalidNullMatrix(ValueError):
    pass


class SizeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class IndependentGaussian:
    pass


@dataclass(frozen=True)
class CovarianceNull:
    covariance: CovarianceSpec


@dataclass(frozen=True)
class ExternalMatrix:
    """A validated ``N x p`` file of null statistics, one draw per row."""

    path: str
    n_rows: int
    p: int
    sha256: str


NullSource = Union[IndependentGaussian, CovarianceNull, ExternalMatrix]


def _tail(scores: np.ndarray, two_sided: bool) -> np.ndarray:
    sf = normal_sf(scores)
    if two_sided:
        sf = np.minimum(2.0 * sf, 1.0)
    return np.maximum(sf, SF_FLOOR)


def quantile_level(p: int) -> float:
    """``1 - 1/sqrt(ln p)``."""
    return 1.0 - 1.0 / math.sqrt(math.log(p))


def nearest_rank_quantile(values, level: float) -> float:
    v = np.sort(np.asarray(values, dtype=float))
    idx = min(max(math.ceil(level * v.size) - 1, 0), v.size - 1)
    return float(v[idx])


def bounding_statistics(null_draws, two_sided: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Per-draw maxima ``V_0.5`` and ``V_1`` of the normalized tail deviation.

    For each row ``w`` ranked descending, ``V_d = max_j |j/p - sf(w_(j))| / sf(w_(j))**d``.
    """
    w = np.atleast_2d(np.asarray(null_draws, dtype=float))
    if not np.all(np.isfinite(w)):
        raise InvalidNullMatrix("null draws contain non-finite values")
    scores = np.abs(w) if two_sided else w
    ranked = -np.sort(-scores, axis=1)
    p = ranked.shape[1]
    sf = _tail(ranked, two_sided)
    dev = np.abs(np.arange(1, p + 1) / p - sf)
    return np.max(dev / np.sqrt(sf), axis=1), np.max(dev / sf, axis=1)


def _source_to_dict(src: NullSource) -> dict:
    if isinstance(src, IndependentGaussian):
        return {"type": "independent"}
    if isinstance(src, CovarianceNull):
        return {"type": "covariance", "covariance": covariance_to_dict(src.covariance)}
    if isinstance(src, ExternalMatrix):
        return {"type": "external", "path": src.path, "n_rows": src.n_rows, "p": src.p, "sha256": src.sha256}
    raise TypeError(f"unknown null source {src!r}")


def _source_from_dict(d: dict) -> NullSource:
    kind = d.get("type")
    if kind == "independent":
        return IndependentGaussian()
    if kind == "covariance":
        return CovarianceNull(covariance_from_dict(d["covariance"]))
    if kind == "external":
        return ExternalMatrix(d["path"], int(d["n_rows"]), int(d["p"]), d["sha256"])
    raise ValueError(f"unknown null source type {kind!r}")


def _created_stamp() -> str:
    # SOURCE_DATE_EPOCH pins the stamp for reproducible output files.
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


@dataclass(frozen=True)
class NullCalibration:
    p: int
    n_draws: int
    c_p_05: float
    c_p_1: float
    null_source: NullSource
    master_seed: int
    two_sided: bool = False
    created: str = field(default_factory=_created_stamp, compare=False)

    def __post_init__(self):
        for name in ("c_p_05", "c_p_1"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")

    @property
    def quantile_level(self) -> float:
        return quantile_level(self.p)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "created": self.created,
            "p": self.p,
            "n_draws": self.n_draws,
            "quantile_level": self.quantile_level,
            "c_p_05": self.c_p_05,
            "c_p_1": self.c_p_1,
            "sidedness": "two-sided" if self.two_sided else "one-sided",
            "null_source": _source_to_dict(self.null_source),
            "master_seed": self.master_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NullCalibration":
        version = d.get("format_version")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported calibration format_version {version!r}")
        return cls(
            p=int(d["p"]),
            n_draws=int(d["n_draws"]),
            c_p_05=float(d["c_p_05"]),
            c_p_1=float(d["c_p_1"]),
            null_source=_source_from_dict(d["null_source"]),
            master_seed=int(d["master_seed"]),
            two_sided=d.get("sidedness", "one-sided") == "two-sided",
            created=d.get("created", ""),
        )

    def save(self, path) -> None:
        dump_json(self.to_dict(), path)

    @classmethod
    def load(cls, path) -> "NullCalibration":
        return cls.from_dict(json.loads(Path(path).read_text()))


def calibration_from_matrix(null_draws, null_source: NullSource, master_seed: int = 0,
                            two_sided: bool = False) -> NullCalibration:
    """Bounding constants from an explicit ``N x p`` matrix of null draws (any ``N >= 1``)."""
    w = np.atleast_2d(np.asarray(null_draws, dtype=float))
    p = w.shape[1]
    if p < 3:
        raise InvalidNullMatrix("null draws need p >= 3 columns")
    v05, v1 = bounding_statistics(w, two_sided)
    level = quantile_level(p)
    return NullCalibration(
        p=p,
        n_draws=w.shape[0],
        c_p_05=nearest_rank_quantile(v05, level),
        c_p_1=nearest_rank_quantile(v1, level),
        null_source=null_source,
        master_seed=int(master_seed),
        two_sided=two_sided,
    )


def _draw_chunk(base: RngStream, rows: range, p: int, factor: CholeskyFactor | None, two_sided: bool):
    g = np.empty((len(rows), p))
    for i, a in enumerate(rows):
        g[i] = base.child(a).standard_normal(p)
    w = g if factor is None else g @ factor.lower.T
    return bounding_statistics(w, two_sided)


def calibrate(p: int, n_draws: int = DEFAULT_N_DRAWS, null_source: NullSource | None = None,
              master_seed: int = 0, *, factor: CholeskyFactor | None = None, workers: int = 1,
              two_sided: bool = False) -> NullCalibration:
    """Monte-Carlo bounding constants ``c_p_05`` and ``c_p_1`` for dimension ``p``.

    Null draw ``a`` comes from its own stream, a child of the reserved
    calibration stream of ``master_seed``, so the result does not depend on
    ``workers``. For a :class:`CovarianceNull` source the correlation matrix is
    built from the reserved covariance stream unless ``factor`` is supplied.
    For an :class:`ExternalMatrix` the rows of the file are the draws and
    ``n_draws`` must equal the row count.
    """
    null_source = IndependentGaussian() if null_source is None else null_source
    if int(p) < 3:
        raise ValueError("calibration needs p >= 3")
    if int(n_draws) < MIN_N_DRAWS:
        raise ValueError(f"calibration needs at least {MIN_N_DRAWS} null draws, got {n_draws}")
    p, n_draws = int(p), int(n_draws)

    if isinstance(null_source, ExternalMatrix):
        w = load_null_matrix(null_source.path, p)
        if w.shape[0] != n_draws:
            raise InvalidNullMatrix(f"{null_source.path} has {w.shape[0]} rows, expected {n_draws}")
        return calibration_from_matrix(w, null_source, master_seed, two_sided)

    if isinstance(null_source, CovarianceNull) and factor is None:
        sigma = build_covariance(null_source.covariance, p, RngStream(master_seed, COVARIANCE_STREAM))
        factor = cholesky(sigma)
    if isinstance(null_source, IndependentGaussian):
        factor = None
    if factor is not None and factor.dim != p:
        raise SizeMismatch(f"factor dim {factor.dim} != p {p}")

    base = RngStream(master_seed, CALIBRATION_STREAM)
    n_chunks = max(1, min(int(workers), n_draws)) * 4
    bounds = np.linspace(0, n_draws, n_chunks + 1).astype(int)
    chunks = [range(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    with ThreadPoolExecutor(max_workers=max(1, int(workers))) as pool:
        parts = list(pool.map(lambda rows: _draw_chunk(base, rows, p, factor, two_sided), chunks))
    v05 = np.concatenate([a for a, _ in parts])
    v1 = np.concatenate([b for _, b in parts])
    level = quantile_level(p)
    return NullCalibration(
        p=p,
        n_draws=n_draws,
        c_p_05=nearest_rank_quantile(v05, level),
        c_p_1=nearest_rank_quantile(v1, level),
        null_source=null_source,
        master_seed=int(master_seed),
        two_sided=two_sided,
    )


@dataclass(frozen=True)
class ProportionEstimate:
    pi_05: float
    pi_1: float
    pi_hat: float
    argmax_rank_05: int
    argmax_rank_1: int

    @property
    def pi_raw(self) -> float:
        """Larger of the two estimators before clamping to [0, 1]."""
        return max(self.pi_05, self.pi_1)

    def to_dict(self) -> dict:
        return {
            "pi_05": self.pi_05,
            "pi_1": self.pi_1,
            "pi_hat": self.pi_hat,
            "argmax_rank_05": self.argmax_rank_05,
            "argmax_rank_1": self.argmax_rank_1,
        }


def estimate_pi(stats: StatVector, calib: NullCalibration) -> ProportionEstimate:
    """Lower-bound estimate of the signal proportion from ranked statistics."""
    if stats.p != calib.p:
        raise SizeMismatch(f"statistics have p={stats.p}, calibration has p={calib.p}")
    if stats.two_sided != calib.two_sided:
        raise SizeMismatch(f"statistics are {stats.sidedness} but calibration is not")
    p = stats.p
    ranked = stats.sorted_scores()
    sf = _tail(ranked, stats.two_sided)
    if stats.two_sided:
        # 1 - 2 sf(|z|) = P(|Z| <= |z|); floored like sf to avoid a zero denominator.
        denom = np.maximum(1.0 - sf, SF_FLOOR)
    else:
        denom = np.maximum(normal_sf(-ranked), SF_FLOOR)
    base = np.arange(1, p + 1) / p - sf
    r05 = (base - calib.c_p_05 * np.sqrt(sf)) / denom
    r1 = (base - calib.c_p_1 * sf) / denom
    j05, j1 = int(np.argmax(r05)), int(np.argmax(r1))
    pi_05, pi_1 = float(r05[j05]), float(r1[j1])
    pi_hat = min(max(pi_05, pi_1, 0.0), 1.0)
    return ProportionEstimate(pi_05, pi_1, pi_hat, j05 + 1, j1 + 1)


def load_null_matrix(path, p: int | None = None) -> np.ndarray:
    """Read a delimited ``N x p`` numeric file and validate it."""
    try:
        w = np.loadtxt(path, delimiter=None if _is_whitespace(path) else ",", ndmin=2)
    except ValueError as exc:
        raise InvalidNullMatrix(f"{path}: {exc}") from None
    if w.size == 0:
        raise InvalidNullMatrix(f"{path}: empty null matrix")
    if not np.all(np.isfinite(w)):
        raise InvalidNullMatrix(f"{path}: non-finite entries")
    if p is not None and w.shape[1] != p:
        raise InvalidNullMatrix(f"{path}: expected {p} columns, found {w.shape[1]}")
    return w


def _is_whitespace(path) -> bool:
    with open(path) as fh:
        for line in fh:
            if line.strip() and not line.lstrip().startswith("#"):
                return "," not in line
    return True


def null_from_permutation(path, p: int | None = None) -> ExternalMatrix:
    """Register a matrix of null statistics produced outside this package.

    Typical source: recompute the statistics after shuffling the response
    variable, once per row. Only validation and provenance happen here.
    """
    w = load_null_matrix(path, p)
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return ExternalMatrix(str(path), int(w.shape[0]), int(w.shape[1]), digest)
