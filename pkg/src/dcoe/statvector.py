"""The z-statistic container shared by every procedure, and its text-file formats.

Indices are 0-based positions in the z vector everywhere (files included).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["StatVector", "load_z_file", "load_index_file", "write_index_file", "write_z_file"]

_SPLIT = re.compile(r"[,\s;]+")


@dataclass(frozen=True)
class StatVector:
    """Test statistics ``z`` with an optional ground-truth signal set.

    With ``two_sided=True`` all procedures rank ``|z|`` and double the null tail.
    """

    z: np.ndarray
    truth: np.ndarray | None = None
    two_sided: bool = False
    _order: np.ndarray = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        z = np.array(self.z, dtype=float).ravel()
        if z.size == 0:
            raise ValueError("StatVector needs at least one statistic")
        if not np.all(np.isfinite(z)):
            raise ValueError("z contains non-finite values")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)
        if self.truth is not None:
            truth = np.array(self.truth, dtype=np.int64).ravel()
            if truth.size and (truth.min() < 0 or truth.max() >= z.size):
                raise ValueError(f"truth indices must lie in [0, {z.size})")
            if np.unique(truth).size != truth.size:
                raise ValueError("truth indices must be distinct")
            truth = np.sort(truth)
            truth.setflags(write=False)
            object.__setattr__(self, "truth", truth)
        # Descending by score, ties broken by original index.
        order = np.argsort(-self.scores, kind="stable")
        order.setflags(write=False)
        object.__setattr__(self, "_order", order)

    @property
    def p(self) -> int:
        return self.z.size

    @property
    def scores(self) -> np.ndarray:
        """The ranked quantity: ``z`` one-sided, ``|z|`` two-sided."""
        return np.abs(self.z) if self.two_sided else self.z

    @property
    def null_tail_factor(self) -> float:
        return 2.0 if self.two_sided else 1.0

    @property
    def sidedness(self) -> str:
        return "two-sided" if self.two_sided else "one-sided"

    @property
    def order(self) -> np.ndarray:
        """Indices sorted by descending score; ``order[0]`` is rank 1."""
        return self._order

    def sorted_scores(self) -> np.ndarray:
        return self.scores[self._order]

    def with_truth(self, truth) -> "StatVector":
        return StatVector(self.z, truth, self.two_sided)

    def negated(self) -> "StatVector":
        return StatVector(-self.z, self.truth, self.two_sided)


def _tokens(path) -> list[list[str]]:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            rows.append([tok for tok in _SPLIT.split(line) if tok])
    return rows


def load_z_file(path, truth=None, two_sided: bool = False) -> StatVector:
    """Read one z per line, or two columns ``index, z`` with indices ``0..p-1`` in any order."""
    rows = _tokens(path)
    if not rows:
        raise ValueError(f"{path}: no statistics found")
    widths = {len(r) for r in rows}
    if widths == {1}:
        z = np.array([float(r[0]) for r in rows])
    elif widths == {2}:
        idx = np.array([int(r[0]) for r in rows])
        vals = np.array([float(r[1]) for r in rows])
        if not np.array_equal(np.sort(idx), np.arange(idx.size)):
            raise ValueError(f"{path}: index column must be a permutation of 0..{idx.size - 1}")
        z = np.empty(idx.size)
        z[idx] = vals
    else:
        raise ValueError(f"{path}: expected 1 or 2 columns per line, found {sorted(widths)}")
    return StatVector(z, truth, two_sided)


def load_index_file(path) -> np.ndarray:
    """Read a list of 0-based indices separated by newlines, commas or whitespace."""
    return np.array([int(tok) for row in _tokens(path) for tok in row], dtype=np.int64)


def write_index_file(path, indices) -> None:
    Path(path).write_text("".join(f"{int(i)}\n" for i in indices))


def write_z_file(path, z) -> None:
    Path(path).write_text("".join(f"{float(v):.17g}\n" for v in np.asarray(z, dtype=float)))
