"""Grid-supported measures and functions on a dyadic lattice.

Everything in this package lives on the lattice of minimal cells

    [k * 2^-m, (k+1) * 2^-m),   k integer,

for a fixed scale exponent m.  A measure is a finite nonnegative mass
per cell, a function is a value per cell, and positions are always the
cell representatives x_k = (k + 1/2) * 2^-m.  Cell indices are exact
integers and representatives are exact binary floats, so there is no
position drift anywhere downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Dict, Iterable, Mapping, Tuple

import numpy as np


class InvariantViolation(AssertionError):
    """A proved inequality failed numerically; treated as a hard error."""


# ---- intervals -------------------------------------------------------------


@dataclass(frozen=True, order=True)
class GridInterval:
    """Half-open interval [left * 2^-m, (right+1) * 2^-m) of whole cells.

    Parameters
    ----------
    left, right : int
        First and last cell index, inclusive.  ``right >= left``.
    scale : int
        Scale exponent m of the underlying lattice.
    """

    left: int
    right: int
    scale: int

    def __post_init__(self):
        if self.right < self.left:
            raise ValueError(f"empty interval: left={self.left} > right={self.right}")

    @property
    def n_cells(self) -> int:
        return self.right - self.left + 1

    @property
    def length(self) -> float:
        return self.n_cells * 2.0 ** (-self.scale)

    @property
    def center(self) -> float:
        # (left + right + 1) / 2 is a half-integer; exact in binary floats
        return (self.left + self.right + 1) / 2.0 * 2.0 ** (-self.scale)

    @property
    def left_endpoint(self) -> float:
        return self.left * 2.0 ** (-self.scale)

    @property
    def right_endpoint(self) -> float:
        return (self.right + 1) * 2.0 ** (-self.scale)

    def contains_cell(self, k: int) -> bool:
        return self.left <= k <= self.right

    def contains(self, other: "GridInterval") -> bool:
        if self.scale != other.scale:
            raise ValueError("scale mismatch")
        return self.left <= other.left and other.right <= self.right

    def intersects(self, other: "GridInterval") -> bool:
        if self.scale != other.scale:
            raise ValueError("scale mismatch")
        return not (other.right < self.left or self.right < other.left)

    def cells(self) -> range:
        return range(self.left, self.right + 1)


def cell_position(k: int, scale: int) -> float:
    """Representative point of cell k at scale m (exact binary float)."""
    return (k + 0.5) * 2.0 ** (-scale)


# ---- measures --------------------------------------------------------------


class GridMeasure:
    """Finite nonnegative measure supported on lattice cells.

    Parameters
    ----------
    scale : int
        Scale exponent m; minimal cells have width 2^-m.
    cells : mapping int -> float
        Mass per cell index.  Zero-mass entries are dropped.  Negative
        masses are rejected.
    """

    def __init__(self, scale: int, cells: Mapping[int, float]):
        self.scale = int(scale)
        clean: Dict[int, float] = {}
        for k, mass in cells.items():
            mass = float(mass)
            if mass < 0.0:
                raise ValueError(f"negative mass {mass} at cell {k}")
            if mass > 0.0:
                clean[int(k)] = clean.get(int(k), 0.0) + mass
        self.cells: Dict[int, float] = clean

    # -- cached vector views --

    @cached_property
    def indices(self) -> np.ndarray:
        return np.array(sorted(self.cells), dtype=np.int64)

    @cached_property
    def masses(self) -> np.ndarray:
        return np.array([self.cells[k] for k in self.indices], dtype=float)

    @cached_property
    def positions(self) -> np.ndarray:
        return (self.indices + 0.5) * 2.0 ** (-self.scale)

    @property
    def total(self) -> float:
        return float(self.masses.sum()) if self.cells else 0.0

    def mass_at(self, k: int) -> float:
        return self.cells.get(k, 0.0)

    def __len__(self) -> int:
        return len(self.cells)

    def __repr__(self) -> str:
        return f"GridMeasure(scale={self.scale}, n_cells={len(self.cells)}, total={self.total:g})"

    def support_hull(self) -> GridInterval | None:
        """Smallest grid interval containing the support, or None if empty."""
        if not self.cells:
            return None
        idx = self.indices
        return GridInterval(int(idx[0]), int(idx[-1]), self.scale)

    def restricted(self, interval: GridInterval) -> "GridMeasure":
        if interval.scale != self.scale:
            raise ValueError("scale mismatch")
        return GridMeasure(
            self.scale,
            {k: v for k, v in self.cells.items() if interval.left <= k <= interval.right},
        )


def from_atoms(atoms: Iterable[Tuple[object, object]], scale: int) -> GridMeasure:
    """Build a measure by snapping point atoms onto the cell lattice.

    Each atom is a (position, mass) pair; the position may be a float,
    int or Fraction and lands in the half-open cell containing it, so
    no mass is ever attributed to a cell endpoint.  Negative masses are
    rejected with the index of the offending atom.
    """
    cells: Dict[int, float] = {}
    factor = 2 ** scale if scale >= 0 else Fraction(1, 2 ** (-scale))
    for i, (pos, mass) in enumerate(atoms):
        mass = float(mass)
        if mass < 0.0:
            raise ValueError(f"atom {i}: negative mass {mass}")
        if mass == 0.0:
            continue
        if isinstance(pos, Fraction):
            k = math.floor(pos * factor)
        else:
            k = math.floor(float(pos) * 2.0 ** scale)
        cells[k] = cells.get(k, 0.0) + mass
    return GridMeasure(scale, cells)


def interval_mass(measure: GridMeasure, interval: GridInterval) -> float:
    """Exact mass of a grid interval (sum over contained cells)."""
    if interval.scale != measure.scale:
        raise ValueError("scale mismatch between measure and interval")
    if len(measure) == 0:
        return 0.0
    idx = measure.indices
    lo = np.searchsorted(idx, interval.left, side="left")
    hi = np.searchsorted(idx, interval.right, side="right")
    if hi <= lo:
        return 0.0
    return float(measure.masses[lo:hi].sum())


def reflect_translate(measure: GridMeasure, a, orientation: int) -> GridMeasure:
    """Pushforward of the measure under x -> orientation * (x - a).

    ``a`` must lie on the grid (an integer multiple of 2^-m) and
    ``orientation`` is +1 or -1.  Cell representatives map onto cell
    representatives: cell k goes to k - j for orientation +1 and to
    j - k - 1 for orientation -1, where a = j * 2^-m.
    """
    if orientation not in (1, -1):
        raise ValueError(f"orientation must be +1 or -1, got {orientation}")
    if isinstance(a, Fraction):
        j_frac = a * (2 ** measure.scale if measure.scale >= 0 else Fraction(1, 2 ** (-measure.scale)))
        if j_frac.denominator != 1:
            raise ValueError(f"translation {a} is not a grid point at scale {measure.scale}")
        j = int(j_frac)
    else:
        j_real = float(a) * 2.0 ** measure.scale
        j = round(j_real)
        if j != j_real:
            raise ValueError(f"translation {a} is not a grid point at scale {measure.scale}")
    if orientation == 1:
        return GridMeasure(measure.scale, {k - j: v for k, v in measure.cells.items()})
    return GridMeasure(measure.scale, {j - k - 1: v for k, v in measure.cells.items()})


# ---- functions -------------------------------------------------------------


class GridFunction:
    """Cell-wise constant function; zero outside the stored cells."""

    __slots__ = ("scale", "values")

    def __init__(self, scale: int, values: Mapping[int, float] | None = None):
        self.scale = int(scale)
        self.values: Dict[int, float] = {int(k): float(v) for k, v in (values or {}).items() if v != 0.0}

    def __getitem__(self, k: int) -> float:
        return self.values.get(k, 0.0)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        if self.scale != other.scale:
            raise ValueError("scale mismatch")
        out = dict(self.values)
        for k, v in other.values.items():
            out[k] = out.get(k, 0.0) + v
        return GridFunction(self.scale, out)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        return self + other.scaled(-1.0)

    def scaled(self, c: float) -> "GridFunction":
        return GridFunction(self.scale, {k: c * v for k, v in self.values.items()})

    def support_cells(self):
        return sorted(self.values)

    def values_at(self, indices: np.ndarray) -> np.ndarray:
        return np.array([self.values.get(int(k), 0.0) for k in indices], dtype=float)

    def __repr__(self) -> str:
        return f"GridFunction(scale={self.scale}, n_cells={len(self.values)})"


def indicator(interval: GridInterval) -> GridFunction:
    return GridFunction(interval.scale, {k: 1.0 for k in interval.cells()})


def identity_on(cells: Iterable[int], scale: int) -> GridFunction:
    """The function x (restricted to the given cells, via representatives)."""
    return GridFunction(scale, {k: cell_position(k, scale) for k in cells})


def dot(f: GridFunction, g: GridFunction, measure: GridMeasure) -> float:
    """Inner product int f g dmu over the (finite) common support."""
    if f.scale != measure.scale or g.scale != measure.scale:
        raise ValueError("scale mismatch")
    small = f.values if len(f.values) <= len(g.values) else g.values
    total = 0.0
    for k in small:
        m = measure.cells.get(k)
        if m is not None:
            total += m * f.values.get(k, 0.0) * g.values.get(k, 0.0)
    return total


def norm_l2(f: GridFunction, measure: GridMeasure) -> float:
    return math.sqrt(max(dot(f, f, measure), 0.0))


def joint_hull(sigma: GridMeasure, w: GridMeasure) -> GridInterval | None:
    """Smallest grid interval containing both supports."""
    if sigma.scale != w.scale:
        raise ValueError("scale mismatch")
    hulls = [h for h in (sigma.support_hull(), w.support_hull()) if h is not None]
    if not hulls:
        return None
    return GridInterval(
        min(h.left for h in hulls), max(h.right for h in hulls), sigma.scale
    )
