"""Top singular value, two ways.

The primary route is power iteration on the normal operator A^T A with a
deterministic start vector; the secondary route is a dense SVD used as a
certification oracle for moderate sizes.  Both operate on the weighted
kernel matrix diag(sqrt(w)) K diag(sqrt(sigma)), whose top singular
value is the best constant in |B(f,g)| <= C ||f||_sigma ||g||_w.
"""

from __future__ import annotations

import numpy as np

DEFAULT_REL_TOL = 1e-10
MAX_ITERATIONS = 50000


def top_singular_value(matrix: np.ndarray, rel_tol: float = DEFAULT_REL_TOL) -> float:
    """Largest singular value by power iteration on A^T A.

    Deterministic: starts from the all-ones vector plus a small index
    ramp to break symmetries.  Stops when the Rayleigh estimate is
    stable to ``rel_tol`` (relative) over consecutive sweeps.
    """
    a = np.asarray(matrix, dtype=float)
    if a.size == 0:
        return 0.0
    n = a.shape[1]
    v = np.ones(n) + 1e-6 * np.arange(n)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return 0.0
    v /= nv
    estimate = 0.0
    prev_diff = None
    for _ in range(MAX_ITERATIONS):
        av = a @ v
        w = a.T @ av
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # v is in the null space; restart once from a shifted vector
            v = np.cos(np.arange(n) + 0.7)
            nv = np.linalg.norm(v)
            if nv == 0.0:
                return 0.0
            v /= nv
            av = a @ v
            w = a.T @ av
            nw = np.linalg.norm(w)
            if nw == 0.0:
                return 0.0
        new_estimate = float(np.linalg.norm(av))
        v = w / nw
        diff = abs(new_estimate - estimate)
        # The iterates converge geometrically, so the remaining error is
        # about diff * rho / (1 - rho) with rho the observed ratio of
        # consecutive increments; stop only when that is inside tolerance
        # (or the increments have hit floating-point noise).
        if prev_diff is not None and prev_diff > 0.0:
            rho = min(diff / prev_diff, 0.9999)
            tail = diff * rho / (1.0 - rho)
        else:
            tail = diff
        scale = max(new_estimate, 1e-300)
        if tail <= rel_tol * scale or diff <= 1e-15 * scale:
            return new_estimate
        prev_diff = diff
        estimate = new_estimate
    return estimate


def top_singular_value_dense(matrix: np.ndarray) -> float:
    """Dense-SVD oracle for the largest singular value."""
    a = np.asarray(matrix, dtype=float)
    if a.size == 0:
        return 0.0
    return float(np.linalg.svd(a, compute_uv=False)[0])
