"""Replicated simulation experiments: 1-D tables, consistency curves and the 2-D grid.

Replication ``r`` of an experiment with master seed ``m`` always draws from
``RngStream(m, r)``; the correlation matrix and the null calibration use
reserved streams of the same seed and are shared read-only, so results do
not depend on the number of workers.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .baselines import MetricRow, bh_fdr_select, evaluate
from .depmodels import (
    CovarianceSpec,
    DependenceSummary,
    Identity,
    TheoryBoundaries,
    build_covariance,
    covariance_from_dict,
    covariance_to_dict,
    dependence_summary,
    theory_boundaries,
)
from .fnpcontrol import dcoe_select, dcoe_select_estimated
from .io import dump_json, write_csv
from .numcore import COVARIANCE_STREAM, RngStream, cholesky, normal_sf
from .proportion import DEFAULT_N_DRAWS, CovarianceNull, IndependentGaussian, NullCalibration, calibrate
from .statvector import StatVector

log = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "ReplicationError",
    "Constant",
    "Uniform",
    "DcoeMethod",
    "BhMethod",
    "ExperimentSpec",
    "GridSpec",
    "RawRow",
    "SummaryRow",
    "ExperimentResult",
    "ConsistencyResult",
    "GridResult",
    "n_signals",
    "default_mask",
    "run_experiment",
    "consistency_curve",
    "run_grid",
    "spec_from_dict",
    "spec_to_dict",
    "SUMMARY_HEADER",
    "RAW_HEADER",
    "CURVE_HEADER",
]

SUMMARY_HEADER = ["method", "mean_fnp", "sd_fnp", "mean_fdp", "sd_fdp", "mean_fm", "sd_fm"]
RAW_HEADER = ["replication", "method", "fnp", "fdp", "fm_index", "n_selected", "threshold", "s_used"]
CURVE_HEADER = ["replication", "rank", "t", "fnp_hat", "fnp_true", "abs_diff", "mu1", "mu2", "mu_min"]


class ConfigError(ValueError):
    pass


class ReplicationError(RuntimeError):
    def __init__(self, replication: int, cause: Exception):
        super().__init__(f"replication {replication} failed: {cause}")
        self.replication = replication


@dataclass(frozen=True)
class Constant:
    A: float

    def draw(self, rng: RngStream, n: int) -> np.ndarray:
        return np.full(n, float(self.A))


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ConfigError("uniform strength needs lo <= hi")

    def draw(self, rng: RngStream, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, n)


Strength = Union[Constant, Uniform]


@dataclass(frozen=True)
class DcoeMethod:
    beta: float
    s_source: str = "known"

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ConfigError(f"DCOE beta must lie in (0, 1), got {self.beta}")
        if self.s_source not in ("known", "estimated"):
            raise ConfigError(f"s_source must be 'known' or 'estimated', got {self.s_source!r}")

    @property
    def label(self) -> str:
        suffix = "" if self.s_source == "known" else ",s=est"
        return f"DCOE(beta={self.beta:g}{suffix})"


@dataclass(frozen=True)
class BhMethod:
    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"BH alpha must lie in (0, 1), got {self.alpha}")

    @property
    def label(self) -> str:
        return f"BH(alpha={self.alpha:g})"


Method = Union[DcoeMethod, BhMethod]


def n_signals(p: int, gamma: float) -> int:
    """``s = round(p ** (1 - gamma))``."""
    return int(round(p ** (1.0 - gamma)))


@dataclass(frozen=True)
class ExperimentSpec:
    p: int
    gamma: float
    signal_strength: Strength
    covariance: CovarianceSpec
    methods: tuple
    n_replications: int
    master_seed: int
    two_sided: bool = False
    n_null_draws: int = DEFAULT_N_DRAWS
    name: str = "experiment"

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.p < 3:
            raise ConfigError("p must be at least 3")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not self.methods:
            raise ConfigError("at least one method is required")
        if self.n_replications < 1:
            raise ConfigError("n_replications must be at least 1")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")
        if not 1 <= self.s <= self.p:
            raise ConfigError(f"s = {self.s} is outside [1, p]")

    @property
    def s(self) -> int:
        return n_signals(self.p, self.gamma)

    @property
    def needs_calibration(self) -> bool:
        return any(isinstance(m, DcoeMethod) and m.s_source == "estimated" for m in self.methods)


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int
    mask: np.ndarray = field(compare=False)
    strength: Strength
    methods: tuple
    master_seed: int
    n_trials: int = 1
    n_null_draws: int = DEFAULT_N_DRAWS
    name: str = "grid"

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != (self.rows, self.cols):
            raise ConfigError(f"mask shape {mask.shape} != ({self.rows}, {self.cols})")
        if not mask.any():
            raise ConfigError("mask must contain at least one cell")
        if not self.methods:
            raise ConfigError("at least one method is required")
        if self.n_trials < 1:
            raise ConfigError("n_trials must be at least 1")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def needs_calibration(self) -> bool:
        return any(isinstance(m, DcoeMethod) and m.s_source == "estimated" for m in self.methods)


@dataclass(frozen=True)
class RawRow:
    replication: int
    metrics: MetricRow
    threshold: float | None
    s_used: float | None

    def as_csv(self):
        m = self.metrics
        # No threshold means everything was selected.
        thr = -math.inf if self.threshold is None else self.threshold
        return [self.replication, m.method_label, m.fnp, m.fdp, m.fm_index, m.n_selected, thr, self.s_used]


@dataclass(frozen=True)
class SummaryRow:
    method: str
    mean_fnp: float
    sd_fnp: float
    mean_fdp: float
    sd_fdp: float
    mean_fm: float
    sd_fm: float

    def as_csv(self):
        return [self.method, self.mean_fnp, self.sd_fnp, self.mean_fdp, self.sd_fdp, self.mean_fm, self.sd_fm]


@dataclass
class ExperimentResult:
    summary: list
    raw: list
    config: dict
    wall_time: float
    calibration: NullCalibration | None = None

    def row(self, label: str) -> SummaryRow:
        for r in self.summary:
            if r.method == label:
                return r
        raise KeyError(label)

    def raw_for(self, label: str) -> list:
        return [r for r in self.raw if r.metrics.method_label == label]

    def write(self, out_dir, stem: str | None = None) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = stem or self.config.get("name", "experiment")
        paths = [out_dir / f"{stem}_summary.csv", out_dir / f"{stem}_raw.csv", out_dir / f"{stem}_config.json"]
        write_csv(paths[0], SUMMARY_HEADER, (r.as_csv() for r in self.summary))
        write_csv(paths[1], RAW_HEADER, (r.as_csv() for r in self.raw))
        dump_json(self.config, paths[2])
        return paths


def _sd(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.std(x, ddof=1)) if x.size > 1 else 0.0


def _summarize(raw: list, labels: list) -> list:
    out = []
    for label in labels:
        ms = [r.metrics for r in raw if r.metrics.method_label == label]
        fnp = [m.fnp for m in ms]
        fdp = [m.fdp for m in ms]
        fm = [m.fm_index for m in ms]
        out.append(SummaryRow(label, float(np.mean(fnp)), _sd(fnp), float(np.mean(fdp)), _sd(fdp),
                              float(np.mean(fm)), _sd(fm)))
    return out


def _first_excluded_score(stats: StatVector, selected: np.ndarray) -> float | None:
    """Highest score outside ``selected``; the selection is everything scoring above it."""
    mask = np.ones(stats.p, dtype=bool)
    mask[selected] = False
    if not mask.any():
        return None
    return float(np.max(stats.scores[mask]))


def _apply_methods(stats: StatVector, methods, s_known: int, calib: NullCalibration | None):
    """Yield ``(label, selected indices, threshold, s_used)`` per method."""
    for m in methods:
        if isinstance(m, DcoeMethod):
            if m.s_source == "known":
                rep = dcoe_select(stats, m.beta, s_known)
            else:
                rep = dcoe_select_estimated(stats, m.beta, calib)
            yield m.label, rep.selected, rep.threshold, rep.s_used
        else:
            sel = bh_fdr_select(stats, m.alpha)
            yield m.label, sel, _first_excluded_score(stats, sel), None


def _map(fn, items, workers: int) -> list:
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


class _Sampler:
    """Draws one replication's statistics; the factor is shared read-only."""

    def __init__(self, spec: ExperimentSpec):
        self.spec = spec
        self.sigma = build_covariance(spec.covariance, spec.p, RngStream(spec.master_seed, COVARIANCE_STREAM))
        self.factor = None if isinstance(spec.covariance, Identity) else cholesky(self.sigma)

    def draw(self, r: int) -> StatVector:
        spec = self.spec
        rng = RngStream(spec.master_seed, r)
        truth = np.sort(rng.choice(spec.p, spec.s, replace=False))
        mu = np.zeros(spec.p)
        mu[truth] = spec.signal_strength.draw(rng, spec.s)
        g = rng.standard_normal(spec.p)
        z = mu + (g if self.factor is None else self.factor.lower @ g)
        return StatVector(z, truth, spec.two_sided)


def _calibration_for(spec: ExperimentSpec, sampler: _Sampler, workers: int) -> NullCalibration | None:
    if not spec.needs_calibration:
        return None
    source = IndependentGaussian() if sampler.factor is None else CovarianceNull(spec.covariance)
    return calibrate(spec.p, spec.n_null_draws, source, spec.master_seed, factor=sampler.factor,
                     workers=workers, two_sided=spec.two_sided)


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> ExperimentResult:
    """Run every method on ``spec.n_replications`` simulated statistic vectors."""
    start = time.perf_counter()
    sampler = _Sampler(spec)
    calib = _calibration_for(spec, sampler, workers)

    def one(r: int) -> list:
        try:
            stats = sampler.draw(r)
            rows = []
            for label, selected, threshold, s_used in _apply_methods(stats, spec.methods, spec.s, calib):
                rows.append(RawRow(r, evaluate(selected, stats, label), threshold, s_used))
            return rows
        except Exception as exc:
            raise ReplicationError(r, exc) from exc

    per_rep = _map(one, range(spec.n_replications), workers)
    raw = [row for rows in per_rep for row in rows]
    labels = [m.label for m in spec.methods]
    wall = time.perf_counter() - start
    log.info("%s: %d replications in %.2fs", spec.name, spec.n_replications, wall)
    return ExperimentResult(_summarize(raw, labels), raw, spec_to_dict(spec), wall, calib)


@dataclass
class ConsistencyResult:
    """Per-replication FNP estimation error at every order statistic."""

    z: np.ndarray  # (n_replications, p)
    truth: np.ndarray  # (n_replications, s)
    s: int
    two_sided: bool
    dependence: DependenceSummary
    boundaries: TheoryBoundaries
    config: dict

    def _curves(self, r: int, t: np.ndarray):
        scores = np.abs(self.z[r]) if self.two_sided else self.z[r]
        asc = np.sort(scores)
        p = asc.size
        above = p - np.searchsorted(asc, t, side="right")
        factor = 2.0 if self.two_sided else 1.0
        est = np.clip(1.0 - above / self.s + factor * (p - self.s) * normal_sf(t) / self.s, 0.0, 1.0)
        sig = np.sort(scores[self.truth[r]])
        true = np.searchsorted(sig, t, side="right") / self.s
        return est, true

    def rows(self):
        b = self.boundaries
        for r in range(self.z.shape[0]):
            scores = np.abs(self.z[r]) if self.two_sided else self.z[r]
            t = -np.sort(-scores)
            est, true = self._curves(r, t)
            diff = np.abs(est - true)
            for j in range(t.size):
                yield [r, j + 1, t[j], est[j], true[j], diff[j], b.mu1, b.mu2, b.mu_min]

    def median_abs_diff(self, t_min: float) -> tuple[np.ndarray, np.ndarray]:
        """Median over replications of ``|FNP_hat(t) - FNP(t)|`` on the pooled grid.

        The grid is every order statistic, from any replication, at or above
        ``t_min``. Returns ``(grid, medians)``.
        """
        scores = np.abs(self.z) if self.two_sided else self.z
        grid = np.unique(scores[scores >= t_min])
        diffs = np.empty((self.z.shape[0], grid.size))
        for r in range(self.z.shape[0]):
            est, true = self._curves(r, grid)
            diffs[r] = np.abs(est - true)
        return grid, np.median(diffs, axis=0)

    def write(self, path) -> None:
        write_csv(path, CURVE_HEADER, self.rows())


def consistency_curve(spec: ExperimentSpec, workers: int = 1) -> ConsistencyResult:
    """FNP estimate versus realized FNP along the threshold axis, with known ``s``."""
    sampler = _Sampler(spec)
    dep = dependence_summary(sampler.sigma)
    bounds = theory_boundaries(spec.gamma, dep.eta, spec.p)
    draws = _map(sampler.draw, range(spec.n_replications), workers)
    z = np.stack([d.z for d in draws])
    truth = np.stack([d.truth for d in draws])
    return ConsistencyResult(z, truth, spec.s, spec.two_sided, dep, bounds, spec_to_dict(spec))


def default_mask(rows: int = 100, cols: int = 100, size: int = 994, center=None) -> np.ndarray:
    """Filled disk of exactly ``size`` cells around ``center``.

    Cells are ordered by squared distance to the centre, then by angle, and
    the first ``size`` are taken, so the boundary ring is filled partially
    in a fixed angular order.
    """
    if not 1 <= size <= rows * cols:
        raise ConfigError(f"mask size {size} outside [1, {rows * cols}]")
    cy, cx = (rows // 2, cols // 2) if center is None else center
    ii, jj = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    dy, dx = (ii - cy).ravel(), (jj - cx).ravel()
    order = np.lexsort((np.arctan2(dy, dx), dy * dy + dx * dx))
    mask = np.zeros(rows * cols, dtype=bool)
    mask[order[:size]] = True
    return mask.reshape(rows, cols)


@dataclass
class GridTrial:
    selections: dict
    metrics: list


@dataclass
class GridResult:
    mask: np.ndarray
    trials: list
    config: dict
    calibration: NullCalibration | None = None

    def write(self, out_dir, stem: str | None = None) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = stem or self.config.get("name", "grid")
        paths = [out_dir / f"{stem}_mask_truth.txt"]
        write_mask(paths[0], self.mask)
        rows = []
        for t, trial in enumerate(self.trials):
            for label, sel in trial.selections.items():
                path = out_dir / f"{stem}_trial{t}_{_slug(label)}.txt"
                write_mask(path, sel)
                paths.append(path)
            for m in trial.metrics:
                rows.append([t, m.method_label, m.fnp, m.fdp, m.fm_index, m.n_selected])
        metrics_path = out_dir / f"{stem}_metrics.csv"
        write_csv(metrics_path, ["trial", "method", "fnp", "fdp", "fm_index", "n_selected"], rows)
        dump_json(self.config, out_dir / f"{stem}_config.json")
        return paths + [metrics_path, out_dir / f"{stem}_config.json"]


def _slug(label: str) -> str:
    return "".join(c if c.isalnum() or c in ".-" else "_" for c in label).strip("_")


def write_mask(path, mask) -> None:
    mask = np.asarray(mask, dtype=bool)
    Path(path).write_text("".join("".join("1" if v else "0" for v in row) + "\n" for row in mask))


def read_mask(path) -> np.ndarray:
    rows = []
    for line in Path(path).read_text().splitlines():
        cells = [c for c in line if c in "01"]
        if cells:
            rows.append([c == "1" for c in cells])
    if not rows or len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{path}: mask must be a non-empty rectangle of 0/1 cells")
    return np.array(rows, dtype=bool)


def run_grid(spec: GridSpec, workers: int = 1) -> GridResult:
    """Independent ``N(A_ij, 1)`` statistics on a grid, one selection per method per trial."""
    p = spec.rows * spec.cols
    truth = np.flatnonzero(spec.mask.ravel())
    calib = None
    if spec.needs_calibration:
        calib = calibrate(p, spec.n_null_draws, IndependentGaussian(), spec.master_seed, workers=workers)

    def one(t: int) -> GridTrial:
        try:
            rng = RngStream(spec.master_seed, t)
            mu = np.zeros(p)
            mu[truth] = spec.strength.draw(rng, truth.size)
            stats = StatVector(mu + rng.standard_normal(p), truth)
            selections, metrics = {}, []
            for label, selected, _, _ in _apply_methods(stats, spec.methods, truth.size, calib):
                cells = np.zeros(p, dtype=bool)
                cells[selected] = True
                selections[label] = cells.reshape(spec.rows, spec.cols)
                metrics.append(evaluate(selected, stats, label))
            return GridTrial(selections, metrics)
        except Exception as exc:
            raise ReplicationError(t, exc) from exc

    trials = _map(one, range(spec.n_trials), workers)
    return GridResult(spec.mask, trials, spec_to_dict(spec), calib)


def _strength_from_dict(d) -> Strength:
    if isinstance(d, (int, float)):
        return Constant(float(d))
    kind = d.get("type")
    if kind == "constant":
        return Constant(float(d["A"]))
    if kind == "uniform":
        return Uniform(float(d["lo"]), float(d["hi"]))
    raise ConfigError(f"unknown signal_strength type {kind!r}")


def _strength_to_dict(s: Strength) -> dict:
    if isinstance(s, Constant):
        return {"type": "constant", "A": s.A}
    return {"type": "uniform", "lo": s.lo, "hi": s.hi}


def _method_from_dict(d) -> Method:
    kind = d.get("type")
    if kind == "dcoe":
        return DcoeMethod(float(d["beta"]), d.get("s_source", "known"))
    if kind == "bh":
        return BhMethod(float(d["alpha"]))
    raise ConfigError(f"unknown method type {kind!r}")


def _method_to_dict(m: Method) -> dict:
    if isinstance(m, DcoeMethod):
        return {"type": "dcoe", "beta": m.beta, "s_source": m.s_source}
    return {"type": "bh", "alpha": m.alpha}


def spec_from_dict(d: dict, base_dir=None) -> Union[ExperimentSpec, GridSpec]:
    """Build an experiment or grid spec from a parsed configuration file.

    ``kind`` is ``"experiment"``, ``"consistency"`` (same fields, read by
    :func:`consistency_curve`) or ``"grid"``. A grid ``mask`` may be a path to a 0/1 text file (relative to
    ``base_dir``) or ``{"type": "disk", "size": 994}``.
    """
    try:
        kind = d.get("kind", "experiment")
        methods = [_method_from_dict(m) for m in d["methods"]]
        seed = int(d.get("master_seed", 0))
        if kind == "grid":
            rows, cols = int(d.get("rows", 100)), int(d.get("cols", 100))
            mask_cfg = d.get("mask", {"type": "disk", "size": 994})
            if isinstance(mask_cfg, str):
                mask_path = Path(mask_cfg)
                if base_dir is not None and not mask_path.is_absolute():
                    mask_path = Path(base_dir) / mask_path
                mask = read_mask(mask_path)
            else:
                mask = default_mask(rows, cols, int(mask_cfg.get("size", 994)), mask_cfg.get("center"))
            return GridSpec(rows, cols, mask, _strength_from_dict(d.get("strength", {"type": "uniform", "lo": 1.0, "hi": 2.5})),
                            methods, seed, int(d.get("n_trials", 1)), int(d.get("n_null_draws", DEFAULT_N_DRAWS)),
                            d.get("name", "grid"))
        if kind not in ("experiment", "consistency"):
            raise ConfigError(f"unknown config kind {kind!r}")
        return ExperimentSpec(
            p=int(d["p"]),
            gamma=float(d["gamma"]),
            signal_strength=_strength_from_dict(d["signal_strength"]),
            covariance=covariance_from_dict(d.get("covariance", {"type": "identity"})),
            methods=methods,
            n_replications=int(d.get("n_replications", 100)),
            master_seed=seed,
            two_sided=d.get("sidedness", "one-sided") == "two-sided",
            n_null_draws=int(d.get("n_null_draws", DEFAULT_N_DRAWS)),
            name=d.get("name", "experiment"),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc!r}") from None


def spec_to_dict(spec) -> dict:
    if isinstance(spec, GridSpec):
        return {
            "kind": "grid",
            "name": spec.name,
            "rows": spec.rows,
            "cols": spec.cols,
            "mask_cells": int(spec.mask.sum()),
            "strength": _strength_to_dict(spec.strength),
            "methods": [_method_to_dict(m) for m in spec.methods],
            "master_seed": spec.master_seed,
            "n_trials": spec.n_trials,
            "n_null_draws": spec.n_null_draws,
        }
    return {
        "kind": "experiment",
        "name": spec.name,
        "p": spec.p,
        "gamma": spec.gamma,
        "s": spec.s,
        "signal_strength": _strength_to_dict(spec.signal_strength),
        "covariance": covariance_to_dict(spec.covariance),
        "methods": [_method_to_dict(m) for m in spec.methods],
        "n_replications": spec.n_replications,
        "master_seed": spec.master_seed,
        "sidedness": "two-sided" if spec.two_sided else "one-sided",
        "n_null_draws": spec.n_null_draws,
    }
