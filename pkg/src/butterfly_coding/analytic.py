"""Achievability analysis and lower-bound-achieving constructions.

necessary_report checks the rank conditions that any bound-achieving code must
satisfy (given positive eigen-gaps); sufficient_report additionally checks the
span-coverage conditions under which construct_lb_code emits a code whose exact
loss equals the lower bound.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .code import ButterflyCode, CodeSpans, realize_spans, with_optimal_decoders
from .model import (
    ProblemInstance,
    TaskSpectrum,
    observation_bases,
    spectrum,
    task_bases,
    validate,
)
from .subspace import (
    Basis,
    DEFAULT_TOL,
    ToleranceConfig,
    _greedy_pick,
    extend_from_pool,
    intersect,
    is_subspace_of,
    join,
)


class PreconditionNotMet(RuntimeError):
    """The sufficient conditions fail; fall back to gradient training."""


@dataclass(frozen=True)
class ConditionReport:
    eigengap_ok3: bool
    eigengap_ok4: bool
    r_plus_34: int
    r_minus_34: int
    r_minus_13: int
    r_minus_24: int
    necessary_ok: bool
    sf1_ok: bool
    sf2_ok: bool
    corollary_nc_free: bool   # col(U3) int col(U4) inside col(U1) int col(U2)
    corollary_dim: bool       # n <= Z + min{a, b}
    sufficient_ok: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _analyze(spec: TaskSpectrum, instance: ProblemInstance,
             tol: ToleranceConfig) -> ConditionReport:
    n, z = instance.n, instance.z
    b1, b2 = observation_bases(spec, tol)
    b3, b4 = task_bases(spec)
    i34 = intersect(b3, b4, tol)
    i13 = intersect(b1, b3, tol)
    i24 = intersect(b2, b4, tol)
    r_plus = join(b3, b4, tol).dim
    floor = min(z, n - z)
    necessary_ok = (r_plus <= 3 * z) and (i13.dim >= floor) and (i24.dim >= floor)
    sf1 = is_subspace_of(b3, join(i13, i34, tol), tol)
    sf2 = is_subspace_of(b4, join(i24, i34, tol), tol)
    i12 = intersect(b1, b2, tol)
    nc_free = is_subspace_of(i34, i12, tol)
    gap_scale = tol.rank_tol * max(1.0, float(spec.mu3[0]), float(spec.mu4[0]))
    return ConditionReport(
        eigengap_ok3=spec.eigengap3 > gap_scale,
        eigengap_ok4=spec.eigengap4 > gap_scale,
        r_plus_34=r_plus,
        r_minus_34=i34.dim,
        r_minus_13=i13.dim,
        r_minus_24=i24.dim,
        necessary_ok=necessary_ok,
        sf1_ok=sf1,
        sf2_ok=sf2,
        corollary_nc_free=nc_free,
        corollary_dim=n <= z + min(instance.a, instance.b),
        sufficient_ok=necessary_ok and sf1 and sf2,
    )


def necessary_report(spec: TaskSpectrum, instance: ProblemInstance,
                     tol: ToleranceConfig = DEFAULT_TOL) -> ConditionReport:
    """Rank conditions for achievability. necessary_ok is advisory when an
    eigen-gap flag is false (the underlying assumption fails)."""
    return _analyze(spec, instance, tol)


def sufficient_report(spec: TaskSpectrum, instance: ProblemInstance,
                      tol: ToleranceConfig = DEFAULT_TOL) -> ConditionReport:
    """Span-coverage conditions; sufficient_ok guarantees construct_lb_code
    succeeds. Covers 2Z > n uniformly: there both task spans fill R^n, so the
    coverage conditions hold trivially and the rank conditions reduce to
    a >= n - Z and b >= n - Z."""
    return _analyze(spec, instance, tol)


def _stack(vectors: list[np.ndarray], n: int) -> np.ndarray:
    if not vectors:
        return np.zeros((n, 0))
    return np.column_stack(vectors)


def _construct_small_capacity(spec: TaskSpectrum, instance: ProblemInstance,
                              tol: ToleranceConfig) -> CodeSpans:
    """Span construction for 2Z <= n.

    Each task-exclusive direction rides its direct link; directions common to
    all four spans ride both direct links; when those run short, each sink
    sends private directions of the task intersection on its direct link and
    the relay carries their pairwise sums, letting each sink subtract its own
    contribution. The relay's remaining columns complete the task
    intersection.
    """
    n, z = instance.n, instance.z
    b1, b2 = observation_bases(spec, tol)
    b3, b4 = task_bases(spec)
    i34 = intersect(b3, b4, tol)
    i13 = intersect(b1, b3, tol)
    i24 = intersect(b2, b4, tol)
    r34 = i34.dim
    if r34 < z:
        # impossible under r+ <= 3Z since r+ + r- = 4Z here
        raise PreconditionNotMet(f"task intersection dimension {r34} below Z={z}")
    excl3 = extend_from_pool(i34, i13, b3, tol)
    excl4 = extend_from_pool(i34, i24, b4, tol)
    i1234 = intersect(i13, i24, tol)
    k_both = min(i1234.dim, r34 - z)
    shared = [i1234.vectors[:, j].copy() for j in range(k_both)]
    q = r34 - z - k_both
    if q > 0:
        i134 = intersect(i13, b4, tol)
        i234 = intersect(i24, b3, tol)
        core = _stack(shared, n)
        xi = _greedy_pick(core, i134.vectors, q, tol)
        chi = _greedy_pick(core, i234.vectors, q, tol)
        sums = [x + c for x, c in zip(xi, chi)]
    else:
        xi, chi, sums = [], [], []
    core_iv = _stack(shared + xi + chi, n)
    ext56 = _greedy_pick(core_iv, i34.vectors, z - q, tol)
    phi13 = _stack(excl3 + shared + xi, n)
    phi24 = _stack(excl4 + shared + chi, n)
    phi56 = _stack(sums + ext56, n)
    assert phi13.shape[1] == z and phi24.shape[1] == z and phi56.shape[1] == z
    return CodeSpans(phi13=phi13, phi24=phi24, phi56=phi56)


def _construct_large_capacity(spec: TaskSpectrum, instance: ProblemInstance,
                              tol: ToleranceConfig) -> CodeSpans:
    """Span construction for 2Z > n, assuming a <= b.

    Rows of L indexed below n-b are private to node 1, above a private to
    node 2, the rest mutual. The relay pairs each node-1-private row with a
    node-2-private partner so both sinks recover both by subtraction; leftover
    node-2 rows and the mutual rows fill the remaining columns.
    """
    n, a, b, z = instance.n, instance.a, instance.b, instance.z
    rows = [spec.cholesky_l[i, :].copy() for i in range(n)]
    pairs = [rows[i] + rows[a + i] for i in range(n - b)]
    directs = [rows[i] for i in range(a + n - b, n)]
    mutual = [rows[i] for i in range(n - b, a)]
    slots56 = z - len(pairs) - len(directs)
    slots13 = z - (n - b)
    assert slots56 >= 0 and slots13 >= 0
    fills: list[np.ndarray] = []
    for idx in range(slots56 + slots13):
        fills.append(mutual[idx % len(mutual)] if mutual else np.zeros(n))
    phi56 = _stack(pairs + directs + fills[:slots56], n)
    phi13 = _stack([rows[i] for i in range(n - b)] + fills[slots56:], n)
    phi24 = _stack([rows[a + i] for i in range(n - b)] + fills[slots56:], n)
    return CodeSpans(phi13=phi13, phi24=phi24, phi56=phi56)


def _reversed_instance(instance: ProblemInstance) -> ProblemInstance:
    """Flip the coordinate order and swap the two source/sink pairs."""
    return validate(
        ProblemInstance(
            n=instance.n,
            psi=instance.psi[::-1, ::-1].copy(),
            a=instance.b,
            b=instance.a,
            z=instance.z,
            k3=instance.k4[:, ::-1].copy(),
            k4=instance.k3[:, ::-1].copy(),
        )
    )


def construct_lb_code(spec: TaskSpectrum, instance: ProblemInstance,
                      tol: ToleranceConfig = DEFAULT_TOL) -> ButterflyCode:
    """A code achieving the lower bound, when the sufficient conditions hold.

    Raises PreconditionNotMet otherwise; callers fall back to training.
    """
    report = _analyze(spec, instance, tol)
    if not report.sufficient_ok:
        raise PreconditionNotMet(
            f"sufficient conditions fail: necessary_ok={report.necessary_ok}, "
            f"sf1_ok={report.sf1_ok}, sf2_ok={report.sf2_ok}"
        )
    if 2 * instance.z <= instance.n:
        spans = _construct_small_capacity(spec, instance, tol)
        return realize_spans(spans, instance, tol)
    if instance.a > instance.b:
        rev = _reversed_instance(instance)
        rev_code = construct_lb_code(spectrum(rev, tol), rev, tol)
        flip_a = np.eye(instance.a)[::-1]
        flip_b = np.eye(instance.b)[::-1]
        swap = np.block([
            [np.zeros((instance.z, instance.z)), np.eye(instance.z)],
            [np.eye(instance.z), np.zeros((instance.z, instance.z))],
        ])
        raw = ButterflyCode(
            e13=rev_code.e24 @ flip_a,
            e15=rev_code.e25 @ flip_a,
            e24=rev_code.e13 @ flip_b,
            e25=rev_code.e15 @ flip_b,
            e56=rev_code.e56 @ swap,
            d3=np.zeros((instance.n, 2 * instance.z)),
            d4=np.zeros((instance.n, 2 * instance.z)),
        )
        return with_optimal_decoders(raw, instance, tol)
    spans = _construct_large_capacity(spec, instance, tol)
    return realize_spans(spans, instance, tol)
