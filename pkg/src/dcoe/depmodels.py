"""Correlation models, the dependence parameter eta, and the consistency boundaries.

The models cover autoregressive, block-diagonal, random-block and one-factor
correlation structures plus an explicit matrix. :func:`dependence_summary`
turns a correlation matrix into the average absolute correlation and its
exponent ``eta`` (``rho_bar = p ** -eta``); :func:`theory_boundaries` gives
the threshold scale above which the FNP estimator is consistent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .numcore import RngStream

__all__ = [
    "InvalidSpec",
    "Identity",
    "Autoregressive",
    "Block",
    "RandomBlock",
    "Factor",
    "Explicit",
    "CovarianceSpec",
    "DependenceSummary",
    "TheoryBoundaries",
    "build_covariance",
    "random_block_sizes",
    "dependence_summary",
    "theory_boundaries",
    "phase_boundary",
    "covariance_from_dict",
    "covariance_to_dict",
]


class InvalidSpec(ValueError):
    pass


@dataclass(frozen=True)
class Identity:
    pass


@dataclass(frozen=True)
class Autoregressive:
    lam: float

    def __post_init__(self):
        if not -1.0 < self.lam < 1.0:
            raise InvalidSpec(f"autoregressive lambda must lie in (-1, 1), got {self.lam}")


@dataclass(frozen=True)
class Block:
    block_size: int
    within_corr: float

    def __post_init__(self):
        if int(self.block_size) < 1:
            raise InvalidSpec("block_size must be positive")
        if not 0.0 <= self.within_corr < 1.0:
            raise InvalidSpec(f"within_corr must lie in [0, 1), got {self.within_corr}")


@dataclass(frozen=True)
class RandomBlock:
    """Blocks of uniformly random size in ``[min_size, max_size]``, filled until ``p``.

    The sizes come from ``seed`` when given, otherwise from the stream passed
    to :func:`build_covariance`.
    """

    min_size: int
    max_size: int
    within_corr: float
    seed: int | None = None

    def __post_init__(self):
        if not 1 <= int(self.min_size) <= int(self.max_size):
            raise InvalidSpec("need 1 <= min_size <= max_size")
        if not 0.0 <= self.within_corr < 1.0:
            raise InvalidSpec(f"within_corr must lie in [0, 1), got {self.within_corr}")


@dataclass(frozen=True)
class Factor:
    """One-factor model ``V = tau h h^T + I`` rescaled to unit diagonal, ``h ~ N(0, I)`` from ``h_seed``."""

    tau: float
    h_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise InvalidSpec(f"factor tau must lie in (0, 1), got {self.tau}")


@dataclass(frozen=True)
class Explicit:
    matrix: np.ndarray = field(compare=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidSpec("explicit covariance must be a square matrix")
        if not np.all(np.isfinite(m)):
            raise InvalidSpec("explicit covariance has non-finite entries")
        if np.max(np.abs(m - m.T)) > 1e-10:
            raise InvalidSpec("explicit covariance is not symmetric")
        if np.max(np.abs(np.diag(m) - 1.0)) > 1e-10:
            raise InvalidSpec("explicit covariance must have a unit diagonal")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)


CovarianceSpec = Union[Identity, Autoregressive, Block, RandomBlock, Factor, Explicit]


def random_block_sizes(spec: RandomBlock, p: int, rng: RngStream | None = None) -> list[int]:
    if spec.seed is not None:
        rng = RngStream(spec.seed, 0)
    if rng is None:
        raise InvalidSpec("RandomBlock needs either a seed or a random stream")
    sizes, total = [], 0
    while total < p:
        size = int(rng.integers(spec.min_size, spec.max_size + 1))
        size = min(size, p - total)
        sizes.append(size)
        total += size
    return sizes


def _block_diagonal(sizes, r: float, p: int) -> np.ndarray:
    sigma = np.zeros((p, p))
    start = 0
    for size in sizes:
        sigma[start:start + size, start:start + size] = r
        start += size
    np.fill_diagonal(sigma, 1.0)
    return sigma


def build_covariance(spec: CovarianceSpec, p: int, rng: RngStream | None = None) -> np.ndarray:
    """Materialize ``spec`` as a ``p x p`` correlation matrix."""
    p = int(p)
    if p < 1:
        raise InvalidSpec("p must be positive")
    if isinstance(spec, Identity):
        return np.eye(p)
    if isinstance(spec, Autoregressive):
        idx = np.arange(p)
        lag = np.abs(idx[:, None] - idx[None, :])
        return np.power(spec.lam, lag.astype(float))
    if isinstance(spec, Block):
        k = int(spec.block_size)
        if k > p:
            raise InvalidSpec(f"block_size {k} exceeds p={p}")
        sizes = [min(k, p - start) for start in range(0, p, k)]
        return _block_diagonal(sizes, spec.within_corr, p)
    if isinstance(spec, RandomBlock):
        if spec.min_size > p:
            raise InvalidSpec(f"min_size {spec.min_size} exceeds p={p}")
        return _block_diagonal(random_block_sizes(spec, p, rng), spec.within_corr, p)
    if isinstance(spec, Factor):
        h = RngStream(spec.h_seed, 0).standard_normal(p)
        v = spec.tau * np.outer(h, h)
        v[np.diag_indices(p)] += 1.0
        scale = 1.0 / np.sqrt(np.diag(v))
        sigma = v * scale[:, None] * scale[None, :]
        np.fill_diagonal(sigma, 1.0)
        return sigma
    if isinstance(spec, Explicit):
        if spec.matrix.shape[0] != p:
            raise InvalidSpec(f"explicit covariance is {spec.matrix.shape[0]}x{spec.matrix.shape[0]}, p={p}")
        return np.array(spec.matrix)
    raise InvalidSpec(f"unknown covariance spec {spec!r}")


@dataclass(frozen=True)
class DependenceSummary:
    sigma_l1: float
    rho_bar: float
    eta: float
    eta_raw: float
    p: int


def dependence_summary(sigma) -> DependenceSummary:
    """Entrywise L1 norm, average absolute correlation and the exponent ``eta``.

    ``eta = -ln(rho_bar) / ln(p)`` is reported raw and clamped to ``[0, 1]``.
    """
    sigma = np.asarray(sigma, dtype=float)
    p = sigma.shape[0]
    if p < 2:
        raise ValueError("dependence_summary needs p >= 2")
    l1 = math.fsum(np.abs(sigma).ravel())
    rho_bar = l1 / (p * p)
    eta_raw = -math.log(rho_bar) / math.log(p)
    return DependenceSummary(l1, rho_bar, min(max(eta_raw, 0.0), 1.0), eta_raw, p)


@dataclass(frozen=True)
class TheoryBoundaries:
    mu1: float
    mu2: float
    mu_min: float
    gamma: float
    eta: float
    p: int


def theory_boundaries(gamma: float, eta: float, p: int, clamp: str = "outer") -> TheoryBoundaries:
    """Boundary ``mu_min = min(mu1, mu2)`` for the consistency of the FNP estimator.

    ``mu1 = sqrt(2 gamma ln p)``. With ``clamp="outer"`` (default),
    ``mu2 = sqrt(max((4 gamma - 2 eta) ln p + 4 ln ln p, 0))``; ``clamp="inner"``
    clamps only ``4 gamma - 2 eta`` at zero. The outer form is the one that
    reproduces the published numbers.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    if int(p) < 3:
        raise ValueError("p must be at least 3")
    log_p = math.log(p)
    mu1 = math.sqrt(2.0 * gamma * log_p)
    lead = 4.0 * gamma - 2.0 * eta
    if clamp == "outer":
        radicand = max(lead * log_p + 4.0 * math.log(log_p), 0.0)
    elif clamp == "inner":
        radicand = max(lead, 0.0) * log_p + 4.0 * math.log(log_p)
    else:
        raise ValueError(f"clamp must be 'outer' or 'inner', got {clamp!r}")
    mu2 = math.sqrt(radicand)
    return TheoryBoundaries(mu1, mu2, min(mu1, mu2), gamma, eta, int(p))


def phase_boundary(gamma: float, eta: float) -> float:
    """Lower edge ``min(gamma, 2 gamma - eta)`` of the dual-control region in the (gamma, r) plane."""
    return min(gamma, 2.0 * gamma - eta)


_KINDS = {
    "identity": Identity,
    "autoregressive": Autoregressive,
    "block": Block,
    "random_block": RandomBlock,
    "factor": Factor,
    "explicit": Explicit,
}


def covariance_from_dict(d: dict) -> CovarianceSpec:
    """Parse the ``covariance`` table of an experiment configuration."""
    d = dict(d)
    kind = d.pop("type", None)
    if kind not in _KINDS:
        raise InvalidSpec(f"unknown covariance type {kind!r}; expected one of {sorted(_KINDS)}")
    if kind == "autoregressive" and "lambda" in d:
        d["lam"] = d.pop("lambda")
    try:
        return _KINDS[kind](**d)
    except TypeError as exc:
        raise InvalidSpec(f"bad parameters for covariance type {kind!r}: {exc}") from None


def covariance_to_dict(spec: CovarianceSpec) -> dict:
    if isinstance(spec, Identity):
        return {"type": "identity"}
    if isinstance(spec, Autoregressive):
        return {"type": "autoregressive", "lambda": spec.lam}
    if isinstance(spec, Block):
        return {"type": "block", "block_size": spec.block_size, "within_corr": spec.within_corr}
    if isinstance(spec, RandomBlock):
        out = {"type": "random_block", "min_size": spec.min_size, "max_size": spec.max_size,
               "within_corr": spec.within_corr}
        if spec.seed is not None:
            out["seed"] = spec.seed
        return out
    if isinstance(spec, Factor):
        return {"type": "factor", "tau": spec.tau, "h_seed": spec.h_seed}
    if isinstance(spec, Explicit):
        return {"type": "explicit", "matrix": spec.matrix.tolist()}
    raise InvalidSpec(f"unknown covariance spec {spec!r}")
