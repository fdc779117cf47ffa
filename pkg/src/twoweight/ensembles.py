"""Seeded measure-pair generators for the verification ensembles.

Five kinds, all deterministic given (kind, params, seed):

* ``lattice``      -- sigma = w = unit masses on N consecutive cells, the
                      classical counting-measure pair.
* ``random-atoms`` -- independent supports, lognormal masses, positions
                      drawn in a window proportional to the atom count.
* ``common-mass``  -- like random-atoms but at least one cell is charged
                      by both measures (the shared-point-mass regime).
* ``cantor``       -- the depth-d middle-thirds Cantor measure snapped to
                      the dyadic grid; sigma = w.
* ``sparse-sequence`` -- lacunary supports: sigma on cells 2^j - 1, w on
                      the midpoints between consecutive sigma atoms.

Instance i of an ensemble is seeded with (seed, i) so lists are
reproducible element by element.
"""

from __future__ import annotations

from fractions import Fraction
from typing import List, Tuple

import numpy as np

from .grid import GridFunction, GridMeasure, from_atoms

ENSEMBLE_KINDS = (
    "lattice",
    "random-atoms",
    "common-mass",
    "cantor",
    "sparse-sequence",
)

_MAX_CELL = 1 << 50  # positions stay well inside exact float integer range

Pair = Tuple[GridMeasure, GridMeasure]


def lattice_pair(n: int, scale: int = 0) -> Pair:
    """sigma = w = sum of unit point masses on cells 0..n-1."""
    if n < 0:
        raise ValueError(f"lattice size must be nonnegative, got {n}")
    cells = {k: 1.0 for k in range(n)}
    return GridMeasure(scale, dict(cells)), GridMeasure(scale, cells)


def _random_cells(rng: np.random.Generator, count: int, window: int) -> np.ndarray:
    return rng.choice(window, size=min(count, window), replace=False)


def random_atoms_pair(n: int, seed, scale: int = 0) -> Pair:
    """Independent supports in a 4n-cell window, lognormal masses."""
    if n < 1:
        raise ValueError(f"atom count must be positive, got {n}")
    rng = np.random.default_rng(seed)
    window = min(4 * n, _MAX_CELL)
    sigma_cells = _random_cells(rng, int(rng.integers(1, n + 1)), window)
    w_cells = _random_cells(rng, int(rng.integers(1, n + 1)), window)
    sigma = {int(k): float(m) for k, m in zip(sigma_cells, rng.lognormal(0.0, 1.0, len(sigma_cells)))}
    w = {int(k): float(m) for k, m in zip(w_cells, rng.lognormal(0.0, 1.0, len(w_cells)))}
    return GridMeasure(scale, sigma), GridMeasure(scale, w)


def common_mass_pair(n: int, seed, scale: int = 0) -> Pair:
    """Random-atoms pair with at least one cell charged by both measures."""
    sigma, w = random_atoms_pair(n, seed, scale)
    shared = set(map(int, sigma.indices)) & set(map(int, w.indices))
    if not shared:
        rng = np.random.default_rng((0x5A11ED, *_entropy(seed)))
        cell = int(rng.choice(sigma.indices))
        cells = dict(w.cells)
        cells[cell] = float(rng.lognormal(0.0, 1.0))
        w = GridMeasure(scale, cells)
    return sigma, w


def _entropy(seed) -> tuple:
    if isinstance(seed, (tuple, list)):
        return tuple(int(s) for s in seed)
    return (int(seed),)


def cantor_pair(depth: int, scale: int | None = None) -> Pair:
    """sigma = w = the depth-d Cantor measure, 2^d atoms of mass 2^-d.

    Atom j (binary digits e_1..e_d) sits at sum 2*e_i/3^i, the left end
    of its middle-thirds interval, snapped to the cell containing it.
    The default scale 2*depth keeps all snapped cells distinct.
    """
    if depth < 0:
        raise ValueError(f"depth must be nonnegative, got {depth}")
    if scale is None:
        scale = 2 * depth
    atoms = []
    mass = 0.5**depth
    for j in range(1 << depth):
        pos = Fraction(0)
        for i in range(depth):
            if (j >> (depth - 1 - i)) & 1:
                pos += Fraction(2, 3 ** (i + 1))
        atoms.append((pos, mass))
    sigma = from_atoms(atoms, scale)
    if len(sigma) != 1 << depth:
        raise ValueError(
            f"scale {scale} too coarse for depth {depth}: atoms collide after snapping"
        )
    return sigma, from_atoms(atoms, scale)


def sparse_sequence_pair(n: int, seed, scale: int = 0) -> Pair:
    """Lacunary pair: sigma on cells 2^j - 1, w midway between them."""
    if not 1 <= n <= 48:
        raise ValueError(f"length must be in 1..48, got {n}")
    rng = np.random.default_rng(seed)
    sigma_cells = [(1 << j) - 1 for j in range(n)]
    w_cells = [(1 << j) + (1 << max(j - 1, 0)) - 1 for j in range(n)]
    sigma = {k: float(m) for k, m in zip(sigma_cells, rng.uniform(0.5, 2.0, n))}
    w = {k: float(m) for k, m in zip(w_cells, rng.uniform(0.5, 2.0, n))}
    return GridMeasure(scale, sigma), GridMeasure(scale, w)


def make_pair(kind: str, n: int, seed, scale: int = 0) -> Pair:
    """One instance of the given kind; ``n`` is the size parameter."""
    if kind == "lattice":
        return lattice_pair(n, scale)
    if kind == "random-atoms":
        return random_atoms_pair(n, seed, scale)
    if kind == "common-mass":
        return common_mass_pair(n, seed, scale)
    if kind == "cantor":
        return cantor_pair(n if n > 0 else 3)
    if kind == "sparse-sequence":
        return sparse_sequence_pair(min(n, 48), seed, scale)
    raise ValueError(f"unknown ensemble kind {kind!r}; choose from {ENSEMBLE_KINDS}")


def make_ensemble(kind: str, count: int, n: int, seed: int, scale: int = 0) -> List[Pair]:
    """``count`` instances; instance i is seeded with (seed, i)."""
    if count < 0:
        raise ValueError(f"count must be nonnegative, got {count}")
    return [make_pair(kind, n, (int(seed), i), scale) for i in range(count)]


# ---- whole-instance draws for the identity and envelope batteries -----------


def random_functions(sigma: GridMeasure, w: GridMeasure, seed) -> Tuple[GridFunction, GridFunction]:
    """Seeded rough test functions charged exactly on the two supports."""
    rng = np.random.default_rng(_entropy(seed))
    f = GridFunction(sigma.scale, {int(k): float(rng.normal()) for k in sorted(sigma.cells)})
    g = GridFunction(w.scale, {int(k): float(rng.normal()) for k in sorted(w.cells)})
    return f, g


def dense_measure(n: int, seed, zero_fraction: float = 0.3, spike: bool = False, scale: int = 0) -> GridMeasure:
    """Measure on an n-cell window with gaps and an optional tiny spike cell."""
    rng = np.random.default_rng(_entropy(seed))
    cells = {}
    for k in range(n):
        if rng.random() > zero_fraction:
            cells[k] = float(rng.exponential()) + 1e-3
    if not cells:
        cells[int(rng.integers(n))] = 1.0
    if spike and rng.random() < 0.5:
        cells[int(rng.integers(n))] = 1e-4
    return GridMeasure(scale, cells)


class StoppingInstance:
    """A fully built decomposition instance over a 2^levels-cell window."""

    def __init__(self, sigma, w, form, system, f, g, tree, base):
        self.sigma = sigma
        self.w = w
        self.form = form
        self.system = system
        self.f = f
        self.g = g
        self.tree = tree
        self.base = base


def stopping_instance(
    n_levels: int, seed, gamma: float = 0.75, r: int = 3, scale: int = 0
) -> StoppingInstance:
    """Measures, form, dyadic system, good test functions and their tree.

    gamma = 3/4 keeps good intervals plentiful at desk depth (at the
    conservative 1/4 nothing separates from ancestors fewer than five
    levels up, so small windows would have no deep pairs at all); the
    split and extraction identities downstream are exact algebra for
    every parameter choice.
    """
    from .decomposition import build_stopping_tree
    from .dyadic import ShiftedDyadicSystem, good_bad_split
    from .forms import build_form
    from .grid import GridInterval

    n = 1 << n_levels
    base = GridInterval(0, n - 1, scale)
    sigma = dense_measure(n, (*_entropy(seed), 1), scale=scale)
    w = dense_measure(n, (*_entropy(seed), 2), spike=True, scale=scale)
    form = build_form(sigma, w)
    system = ShiftedDyadicSystem(base, shift=0, gamma=gamma, r=r)
    f_raw, g_raw = random_functions(sigma, w, (*_entropy(seed), 3))
    f = good_bad_split(f_raw, system, sigma)[0]
    g = good_bad_split(g_raw, system, w)[0]
    tree = build_stopping_tree(f, g, sigma, w, form, base, gamma=gamma, r=r)
    return StoppingInstance(sigma, w, form, system, f, g, tree, base)
