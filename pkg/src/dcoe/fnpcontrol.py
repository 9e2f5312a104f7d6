"""False-negative-proportion estimation and the dual-control selection rule.

For a threshold ``t`` the estimate is

    FNP_hat(t) = max(1 - R(t)/s + c (p - s) sf(t) / s, 0)

with ``R(t)`` the number of scores above ``t``, ``sf`` the standard normal
upper tail and ``c`` = 1 (one-sided) or 2 (two-sided). The selection walks
down the ranked scores and stops at the first rank ``k`` whose estimate
(evaluated with ``R = k``) drops below ``beta``; ranks ``1..k-1`` are selected.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .numcore import normal_sf
from .proportion import NullCalibration, ProportionEstimate, estimate_pi
from .statvector import StatVector

__all__ = [
    "MissingTruth",
    "NonpositiveS",
    "InvalidBeta",
    "DEGENERATE_PROPORTION",
    "FnpCurve",
    "SelectionReport",
    "fnp_hat",
    "fnp_true",
    "fdp_true",
    "fnp_curve",
    "dcoe_select",
    "dcoe_select_estimated",
]

DEGENERATE_PROPORTION = "DegenerateProportion"


class MissingTruth(ValueError):
    pass


class NonpositiveS(ValueError):
    pass


class InvalidBeta(ValueError):
    pass


def _check_s(s: float) -> float:
    s = float(s)
    if not s > 0:
        raise NonpositiveS(f"number of signals must be positive, got {s}")
    return s


def fnp_hat(t: float, stats: StatVector, s: float) -> float:
    """Estimated FNP at threshold ``t`` given ``s`` signals (``s`` may be fractional)."""
    s = _check_s(s)
    r = int(np.count_nonzero(stats.scores > t))
    est = 1.0 - r / s + stats.null_tail_factor * (stats.p - s) * normal_sf(t) / s
    return min(max(est, 0.0), 1.0)


def _require_truth(stats: StatVector) -> np.ndarray:
    if stats.truth is None or stats.truth.size == 0:
        raise MissingTruth("operation needs a non-empty ground-truth signal set")
    return stats.truth


def fnp_true(t: float, stats: StatVector) -> float:
    truth = _require_truth(stats)
    return float(np.count_nonzero(stats.scores[truth] <= t)) / truth.size


def fdp_true(selected, stats: StatVector) -> float:
    """Fraction of ``selected`` that are noise; 0 for an empty selection."""
    truth = _require_truth(stats)
    selected = np.unique(np.asarray(selected, dtype=np.int64))
    if selected.size == 0:
        return 0.0
    false_pos = np.count_nonzero(~np.isin(selected, truth))
    return false_pos / selected.size


@dataclass(frozen=True)
class FnpCurve:
    """FNP estimates at each descending order statistic (``R`` taken as the rank)."""

    thresholds: np.ndarray
    estimates: np.ndarray
    order: np.ndarray
    s_used: float

    def to_rows(self):
        for j, (t, e, idx) in enumerate(zip(self.thresholds, self.estimates, self.order), start=1):
            yield j, int(idx), float(t), float(e)


def fnp_curve(stats: StatVector, s: float) -> FnpCurve:
    s = _check_s(s)
    p = stats.p
    ranked = stats.sorted_scores()
    ranks = np.arange(1, p + 1)
    est = 1.0 - ranks / s + stats.null_tail_factor * (p - s) * normal_sf(ranked) / s
    est = np.clip(est, 0.0, 1.0)
    return FnpCurve(ranked, est, stats.order, s)


@dataclass(frozen=True)
class SelectionReport:
    """Outcome of a dual-control selection.

    ``threshold`` is the score at the first rank whose estimate fell below
    ``beta`` (so ``selected`` is exactly the indices scoring above it, barring
    ties), ``None`` when nothing crossed and every variable is selected.
    ``crossing_rank`` is that rank, ``p + 1`` when the scan exhausted.
    """

    beta: float
    threshold: float | None
    selected: np.ndarray
    k_selected: int
    crossing_rank: int
    s_used: float
    s_source: str
    fnp_hat_at_threshold: float | None
    sidedness: str
    warning: str | None = None
    curve: FnpCurve | None = None
    proportion: ProportionEstimate | None = None

    def to_dict(self, include_selected: bool = True) -> dict:
        out = {
            "beta": self.beta,
            "threshold": self.threshold,
            "k_selected": self.k_selected,
            "crossing_rank": self.crossing_rank,
            "s_used": self.s_used,
            "s_source": self.s_source,
            "fnp_hat_at_threshold": self.fnp_hat_at_threshold,
            "sidedness": self.sidedness,
            "warning": self.warning,
        }
        if include_selected:
            out["selected"] = [int(i) for i in self.selected]
        if self.proportion is not None:
            out["proportion"] = self.proportion.to_dict()
        return out


def _check_beta(beta: float) -> float:
    beta = float(beta)
    if not 0.0 < beta < 1.0:
        raise InvalidBeta(f"beta must lie in (0, 1), got {beta}")
    return beta


def dcoe_select(stats: StatVector, beta: float, s: float, *, s_source: str = "Known") -> SelectionReport:
    """Select the smallest top set whose estimated FNP is below ``beta``.

    Follows the rank scan literally: if the top-ranked statistic already has
    an estimate below ``beta`` the selection is empty, and if no rank does,
    all ``p`` variables are selected.
    """
    beta = _check_beta(beta)
    curve = fnp_curve(stats, s)
    below = np.flatnonzero(curve.estimates < beta)
    if below.size:
        k = int(below[0]) + 1
        threshold = float(curve.thresholds[k - 1])
        at_threshold = float(curve.estimates[k - 1])
    else:
        k = stats.p + 1
        threshold = None
        at_threshold = None
    selected = np.sort(curve.order[: k - 1])
    return SelectionReport(
        beta=beta,
        threshold=threshold,
        selected=selected,
        k_selected=int(selected.size),
        crossing_rank=k,
        s_used=curve.s_used,
        s_source=s_source,
        fnp_hat_at_threshold=at_threshold,
        sidedness=stats.sidedness,
        curve=curve,
    )


def dcoe_select_estimated(stats: StatVector, beta: float, calib: NullCalibration) -> SelectionReport:
    """Dual control with ``s`` replaced by ``p * pi_hat`` from :func:`estimate_pi`.

    A zero proportion estimate yields an empty selection flagged with
    :data:`DEGENERATE_PROPORTION` instead of an error.
    """
    beta = _check_beta(beta)
    est = estimate_pi(stats, calib)
    s_hat = est.pi_hat * stats.p
    if s_hat <= 0:
        return SelectionReport(
            beta=beta,
            threshold=float(stats.sorted_scores()[0]),
            selected=np.empty(0, dtype=np.int64),
            k_selected=0,
            crossing_rank=1,
            s_used=0.0,
            s_source="Estimated",
            fnp_hat_at_threshold=None,
            sidedness=stats.sidedness,
            warning=DEGENERATE_PROPORTION,
            proportion=est,
        )
    report = dcoe_select(stats, beta, s_hat, s_source="Estimated")
    return replace(report, proportion=est)
