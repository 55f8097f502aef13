"""Tolerance-aware numerical subspace algebra.

Every subspace is represented by an orthonormal column basis together with a
relative singular-value tolerance that decides all rank questions. The same
ToleranceConfig instance is threaded through the higher-level modules so the
whole library shares one rank knob.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space


class DimensionMismatch(ValueError):
    """Inputs do not share an ambient dimension."""


class InfeasibleExtension(RuntimeError):
    """The pool cannot extend the core to span the target."""


@dataclass(frozen=True)
class ToleranceConfig:
    """Relative rank threshold: singular values below rank_tol * s_max count as zero."""

    rank_tol: float = 1e-10

    def __post_init__(self):
        if not (0.0 <= self.rank_tol < 1.0):
            raise ValueError(f"rank_tol must lie in [0, 1), got {self.rank_tol}")


DEFAULT_TOL = ToleranceConfig()


def _as_matrix(vectors, ambient_dim=None) -> np.ndarray:
    """Coerce a (n, k) array or a sequence of length-n vectors to a float matrix."""
    if isinstance(vectors, np.ndarray):
        m = np.atleast_2d(np.asarray(vectors, dtype=float))
        if vectors.ndim == 1:
            m = m.T
    else:
        cols = [np.asarray(v, dtype=float).reshape(-1) for v in vectors]
        if not cols:
            if ambient_dim is None:
                raise DimensionMismatch("empty vector list needs an explicit ambient_dim")
            return np.zeros((ambient_dim, 0))
        n = cols[0].shape[0]
        for c in cols:
            if c.shape[0] != n:
                raise DimensionMismatch("vectors have mixed lengths")
        m = np.column_stack(cols)
    if ambient_dim is not None and m.shape[0] != ambient_dim:
        raise DimensionMismatch(f"expected ambient dimension {ambient_dim}, got {m.shape[0]}")
    return m


def _fix_signs(m: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    if m.size == 0:
        return m
    idx = np.argmax(np.abs(m), axis=0)
    signs = np.sign(m[idx, np.arange(m.shape[1])])
    signs[signs == 0] = 1.0
    return m * signs


@dataclass(frozen=True)
class Basis:
    """Orthonormal column basis of a subspace of R^n. k = 0 is a valid empty basis."""

    ambient_dim: int
    vectors: np.ndarray  # shape (ambient_dim, k)

    def __post_init__(self):
        v = self.vectors
        if v.ndim != 2 or v.shape[0] != self.ambient_dim:
            raise DimensionMismatch(
                f"basis matrix shape {v.shape} does not match ambient_dim {self.ambient_dim}"
            )
        if v.shape[1] > self.ambient_dim:
            raise DimensionMismatch("more basis vectors than ambient dimensions")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @staticmethod
    def empty(ambient_dim: int) -> "Basis":
        return Basis(ambient_dim, np.zeros((ambient_dim, 0)))


def orthonormal_basis(vectors, tol: ToleranceConfig = DEFAULT_TOL, ambient_dim=None) -> Basis:
    """Orthonormal basis of the span; the column count equals the numerical rank.

    Accepts a (n, k) array or any sequence of length-n vectors. Columns come out
    ordered by descending singular value with a deterministic sign convention.
    """
    m = _as_matrix(vectors, ambient_dim)
    n = m.shape[0]
    if m.shape[1] == 0:
        return Basis.empty(n)
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    if s.size == 0 or s[0] <= 0.0:
        return Basis.empty(n)
    rank = int(np.sum(s > tol.rank_tol * s[0]))
    return Basis(n, _fix_signs(u[:, :rank]))


def rank_of(vectors, tol: ToleranceConfig = DEFAULT_TOL, ambient_dim=None) -> int:
    """Count of singular values above the relative threshold."""
    m = _as_matrix(vectors, ambient_dim)
    if m.shape[1] == 0 or m.shape[0] == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] <= 0.0:
        return 0
    return int(np.sum(s > tol.rank_tol * s[0]))


def _check_same_ambient(a: Basis, b: Basis):
    if a.ambient_dim != b.ambient_dim:
        raise DimensionMismatch(
            f"ambient dimensions differ: {a.ambient_dim} vs {b.ambient_dim}"
        )


def intersect(a: Basis, b: Basis, tol: ToleranceConfig = DEFAULT_TOL) -> Basis:
    """Basis of the intersection, via the nullspace of the stacked system [A | -B].

    For orthonormal A and B every nullspace vector (alpha, beta) gives one
    intersection vector A alpha, and the map is injective, so the dimension
    count is exact at integer level.
    """
    _check_same_ambient(a, b)
    if a.dim == 0 or b.dim == 0:
        return Basis.empty(a.ambient_dim)
    stacked = np.hstack([a.vectors, -b.vectors])
    ns = null_space(stacked, rcond=tol.rank_tol)
    if ns.shape[1] == 0:
        return Basis.empty(a.ambient_dim)
    vecs = a.vectors @ ns[: a.dim, :]
    return orthonormal_basis(vecs, tol)


def join(a: Basis, b: Basis, tol: ToleranceConfig = DEFAULT_TOL) -> Basis:
    """Basis of the sum A + B."""
    _check_same_ambient(a, b)
    return orthonormal_basis(np.hstack([a.vectors, b.vectors]), tol, a.ambient_dim)


def is_subspace_of(a: Basis, b: Basis, tol: ToleranceConfig = DEFAULT_TOL) -> bool:
    """True iff every column of A has residual <= tol after projection onto B."""
    _check_same_ambient(a, b)
    if a.dim == 0:
        return True
    resid = a.vectors - b.vectors @ (b.vectors.T @ a.vectors)
    # basis columns are unit vectors, so the relative threshold is absolute here
    return bool(np.all(np.linalg.norm(resid, axis=0) <= max(tol.rank_tol, 1e-14)))


def _greedy_pick(current: np.ndarray, pool: np.ndarray, count: int,
                 tol: ToleranceConfig) -> list[np.ndarray]:
    """Pick `count` pool columns, each with the largest residual against the
    running span (ties broken by lowest column index). Raises if the pool runs
    out of independent directions first."""
    span = current
    chosen: list[np.ndarray] = []
    for _ in range(count):
        if span.shape[1] == 0:
            resid = pool
        else:
            q = orthonormal_basis(span, tol).vectors
            resid = pool - q @ (q.T @ pool)
        norms = np.linalg.norm(resid, axis=0)
        best = int(np.argmax(norms)) if norms.size else 0
        if norms.size == 0 or norms[best] <= tol.rank_tol:
            raise InfeasibleExtension(
                f"pool exhausted after {len(chosen)} of {count} extension vectors"
            )
        chosen.append(pool[:, best].copy())
        span = np.hstack([span, pool[:, best:best + 1]])
    return chosen


def extend_from_pool(core: Basis, pool: Basis, target: Basis,
                     tol: ToleranceConfig = DEFAULT_TOL) -> list[np.ndarray]:
    """Vectors from the pool that extend the core to a basis of the target.

    Returns exactly target.dim - core.dim vectors. The core must lie inside the
    target; the pool need not, in which case selection happens inside
    pool intersect target (by modularity this preserves feasibility whenever
    span(core union pool) covers the target).
    """
    _check_same_ambient(core, pool)
    _check_same_ambient(core, target)
    if not is_subspace_of(core, target, tol):
        raise ValueError("core must be a subspace of target")
    need = target.dim - core.dim
    if need < 0:
        raise ValueError("core dimension exceeds target dimension")
    if need == 0:
        return []
    if not is_subspace_of(target, join(core, pool, tol), tol):
        raise InfeasibleExtension("span(core union pool) does not cover target")
    effective = pool
    if not is_subspace_of(pool, target, tol):
        effective = intersect(pool, target, tol)
    return _greedy_pick(core.vectors, effective.vectors, need, tol)
