"""Benjamini-Hochberg selection and per-selection accuracy metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fnpcontrol import fdp_true
from .numcore import normal_sf
from .statvector import StatVector

__all__ = ["InvalidAlpha", "MetricRow", "pvalues", "bh_reject", "bh_fdr_select", "fm_index", "evaluate"]


class InvalidAlpha(ValueError):
    pass


def pvalues(stats: StatVector) -> np.ndarray:
    """Gaussian p-values: ``sf(z)`` one-sided, ``2 sf(|z|)`` two-sided."""
    if stats.two_sided:
        return np.minimum(2.0 * normal_sf(np.abs(stats.z)), 1.0)
    return normal_sf(stats.z)


def bh_reject(pvals, alpha: float) -> np.ndarray:
    """Indices rejected by the BH step-up rule at level ``alpha``, ascending."""
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise InvalidAlpha(f"alpha must lie in (0, 1), got {alpha}")
    pvals = np.asarray(pvals, dtype=float)
    m = pvals.size
    if m == 0:
        return np.empty(0, dtype=np.int64)
    order = np.argsort(pvals, kind="stable")
    passed = np.flatnonzero(pvals[order] <= alpha * np.arange(1, m + 1) / m)
    if passed.size == 0:
        return np.empty(0, dtype=np.int64)
    return np.sort(order[: passed[-1] + 1])


def bh_fdr_select(stats: StatVector, alpha: float) -> np.ndarray:
    return bh_reject(pvalues(stats), alpha)


def fm_index(fnp: float, fdp: float) -> float:
    """Fowlkes-Mallows summary ``sqrt((1 - FNP)(1 - FDP))``."""
    return math.sqrt(max(1.0 - fnp, 0.0) * max(1.0 - fdp, 0.0))


@dataclass(frozen=True)
class MetricRow:
    method_label: str
    fnp: float
    fdp: float
    fm_index: float
    n_selected: int


def evaluate(selected, stats: StatVector, label: str) -> MetricRow:
    """Realized FNP, FDP and FM-index of a selection against ``stats.truth``."""
    fdp = fdp_true(selected, stats)
    selected = np.unique(np.asarray(selected, dtype=np.int64))
    truth = stats.truth
    fnp = float(np.count_nonzero(~np.isin(truth, selected))) / truth.size
    return MetricRow(label, fnp, fdp, fm_index(fnp, fdp), int(selected.size))
