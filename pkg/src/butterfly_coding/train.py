"""Gradient training of butterfly codes, plus the greedy spectral benchmark.

The trainer runs plain gradient descent on the exact quadratic objective (or
its batch estimate) with simultaneous updates, matching the contractual update
rule. Modes restrict which matrices move or which objective drives them; the
loss trace always reports the true task losses.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .code import (
    ButterflyCode,
    CodeSpans,
    check_code_shapes,
    realize_spans,
)
from .model import ProblemInstance, spectrum
from .subspace import DEFAULT_TOL, ToleranceConfig, extend_from_pool, orthonormal_basis


class DivergenceDetected(RuntimeError):
    """Total loss blew past 10x its initial value; lower the learning rate."""


MODES = (
    "task_aware_coding",
    "task_aware_no_coding",
    "task_agnostic_coding",
    "coding_benchmark",
)
GRADIENTS = ("exact_expectation", "empirical_batch")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    learning_rate: float = 0.05
    batch_size: int = 64
    seed: int = 0
    mode: str = "task_aware_coding"
    gradient: str = "exact_expectation"
    init_scale: float = 0.1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be positive, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.gradient not in GRADIENTS:
            raise ValueError(f"unknown gradient {self.gradient!r}; expected one of {GRADIENTS}")
        if not self.init_scale > 0:
            raise ValueError(f"init_scale must be positive, got {self.init_scale}")


_MATRIX_ORDER = ("e13", "e15", "e24", "e25", "e56", "d3", "d4")


def _matrix_shapes(instance: ProblemInstance) -> dict[str, tuple[int, int]]:
    n, a, b, z = instance.n, instance.a, instance.b, instance.z
    return {
        "e13": (z, a), "e15": (z, a), "e24": (z, b), "e25": (z, b),
        "e56": (z, 2 * z), "d3": (n, 2 * z), "d4": (n, 2 * z),
    }


def init_code(instance: ProblemInstance, seed: int, init_scale: float = 0.1) -> ButterflyCode:
    """Uniform random code; one counter-based stream per matrix so any single
    matrix replays independently of the others."""
    if init_scale < 0:
        raise ValueError(f"init_scale must be nonnegative, got {init_scale}")
    shapes = _matrix_shapes(instance)
    mats = {}
    for idx, name in enumerate(_MATRIX_ORDER):
        rng = np.random.Generator(np.random.Philox(key=[seed % 2**64, idx]))
        mats[name] = rng.uniform(-init_scale, init_scale, shapes[name])
    return ButterflyCode(**mats)


def _selection_e56(z: int) -> np.ndarray:
    """0/1 relay matrix forwarding the first ceil(Z/2) relay-input coordinates
    from source 1 and the first floor(Z/2) from source 2."""
    e56 = np.zeros((z, 2 * z))
    head = (z + 1) // 2
    for i in range(head):
        e56[i, i] = 1.0
    for j in range(z - head):
        e56[head + j, z + j] = 1.0
    return e56


def _assemble(mats: dict[str, np.ndarray], n: int, a: int, b: int,
              z: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Relay input map B and sink observation maps A3, A4, all (2Z x n)."""
    big = np.zeros((2 * z, n))
    big[:z, :a] = mats["e15"]
    big[z:, n - b:] = mats["e25"]
    rel = mats["e56"] @ big
    a3 = np.zeros((2 * z, n))
    a3[:z, :a] = mats["e13"]
    a3[z:] = rel
    a4 = np.zeros((2 * z, n))
    a4[:z, n - b:] = mats["e24"]
    a4[z:] = rel
    return big, a3, a4


def _true_losses(mats, k3, k4, psi, n, a, b, z) -> tuple[float, float]:
    _, a3, a4 = _assemble(mats, n, a, b, z)
    r3 = np.eye(n) - mats["d3"] @ a3
    r4 = np.eye(n) - mats["d4"] @ a4
    l3 = float(np.sum((k3 @ r3 @ psi) * (k3 @ r3)))
    l4 = float(np.sum((k4 @ r4 @ psi) * (k4 @ r4)))
    return l3, l4


def _gradients(mats, g3, g4, psi, n, a, b, z) -> dict[str, np.ndarray]:
    """Analytic gradient of Tr(K3 R3 psi R3' K3') + Tr(K4 R4 psi R4' K4')
    with R_i = I - D_i A_i, by the chain rule through the link maps."""
    big, a3, a4 = _assemble(mats, n, a, b, z)
    r3 = np.eye(n) - mats["d3"] @ a3
    r4 = np.eye(n) - mats["d4"] @ a4
    gd3 = -2.0 * g3 @ r3 @ psi @ a3.T
    gd4 = -2.0 * g4 @ r4 @ psi @ a4.T
    ga3 = -2.0 * mats["d3"].T @ g3 @ r3 @ psi
    ga4 = -2.0 * mats["d4"].T @ g4 @ r4 @ psi
    grel = ga3[z:] + ga4[z:]
    gbig = mats["e56"].T @ grel
    return {
        "e13": ga3[:z, :a],
        "e24": ga4[:z, n - b:],
        "e56": grel @ big.T,
        "e15": gbig[:z, :a],
        "e25": gbig[z:, n - b:],
        "d3": gd3,
        "d4": gd4,
    }


def greedy_benchmark_code(instance: ProblemInstance,
                          tol: ToleranceConfig = DEFAULT_TOL) -> ButterflyCode:
    """Relay carries the top-Z directions of the summed task Gram matrix;
    each direct link then adds its task's best directions from what its
    source can see beyond the relay's columns."""
    spec = spectrum(instance, tol)
    n, z = instance.n, instance.z
    w, v = np.linalg.eigh(spec.s3 + spec.s4)
    order = np.argsort(w)[::-1]
    t56 = min(z, n)
    phi56 = np.zeros((n, z))
    phi56[:, :t56] = v[:, order[:t56]]
    b56 = orthonormal_basis(phi56, tol, ambient_dim=n)

    def side(obs: np.ndarray, gram: np.ndarray) -> np.ndarray:
        pool = orthonormal_basis(obs, tol, ambient_dim=n)
        joint = orthonormal_basis(np.hstack([b56.vectors, pool.vectors]), tol, ambient_dim=n)
        resid = joint.vectors - b56.vectors @ (b56.vectors.T @ joint.vectors)
        comp = orthonormal_basis(resid, tol, ambient_dim=n)
        t = min(z, comp.dim)
        if t > 0:
            m = comp.vectors.T @ gram @ comp.vectors
            mw, mv = np.linalg.eigh(m)
            morder = np.argsort(mw)[::-1]
            tilde = comp.vectors @ mv[:, morder[:t]]
        else:
            tilde = np.zeros((n, 0))
        target = orthonormal_basis(np.hstack([tilde, phi56[:, :t56]]), tol, ambient_dim=n)
        picked = extend_from_pool(b56, pool, target, tol)
        direct = np.zeros((n, z))
        for j, vec in enumerate(picked):
            direct[:, j] = vec
        return direct

    spans = CodeSpans(
        phi13=side(spec.obs1, spec.s3),
        phi24=side(spec.obs2, spec.s4),
        phi56=phi56,
    )
    return realize_spans(spans, instance, tol)


def train(instance: ProblemInstance, config: TrainConfig,
          init: ButterflyCode | None = None,
          tol: ToleranceConfig = DEFAULT_TOL) -> tuple[ButterflyCode, np.ndarray]:
    """Run gradient descent; returns the final code and an (epochs, 3) trace
    of per-epoch (L3, L4, L_total) true-task losses after each update."""
    n, a, b, z = instance.n, instance.a, instance.b, instance.z
    psi = 0.5 * (instance.psi + instance.psi.T)
    k3, k4 = instance.k3, instance.k4

    if init is None:
        init = init_code(instance, config.seed, config.init_scale)
    else:
        check_code_shapes(init, instance)
    mats = {name: np.array(getattr(init, name), dtype=float, copy=True)
            for name in _MATRIX_ORDER}

    trainable = set(_MATRIX_ORDER)
    if config.mode == "task_aware_no_coding":
        mats["e56"] = _selection_e56(z)
        trainable.discard("e56")
    elif config.mode == "coding_benchmark":
        bench = greedy_benchmark_code(instance, tol)
        for name in ("e13", "e15", "e24", "e25", "e56"):
            mats[name] = np.array(getattr(bench, name), dtype=float, copy=True)
        trainable = {"d3", "d4"}

    if config.mode == "task_agnostic_coding":
        g3 = g4 = np.eye(n)
    else:
        g3 = k3.T @ k3
        g4 = k4.T @ k4

    batch_rng = None
    factor = None
    if config.gradient == "empirical_batch":
        batch_rng = np.random.Generator(
            np.random.Philox(key=[config.seed % 2**64, 10_000]))
        w, v = np.linalg.eigh(psi)
        factor = v * np.sqrt(np.clip(w, 0.0, None))

    l3, l4 = _true_losses(mats, k3, k4, psi, n, a, b, z)
    initial_total = l3 + l4
    lr = config.learning_rate
    trace = np.zeros((config.epochs, 3))
    for epoch in range(config.epochs):
        if config.gradient == "empirical_batch":
            x = batch_rng.normal(size=(config.batch_size, n)) @ factor.T
            psi_step = x.T @ x / config.batch_size
        else:
            psi_step = psi
        grads = _gradients(mats, g3, g4, psi_step, n, a, b, z)
        for name in trainable:
            mats[name] = mats[name] - lr * grads[name]
        l3, l4 = _true_losses(mats, k3, k4, psi, n, a, b, z)
        total = l3 + l4
        trace[epoch] = (l3, l4, total)
        if not np.isfinite(total) or total > 10.0 * initial_total:
            raise DivergenceDetected(
                f"L_total={total:.6g} exceeded 10x initial {initial_total:.6g} "
                f"at epoch {epoch}; reduce learning_rate"
            )
    return ButterflyCode(**mats), trace


def export_trace_csv(trace: np.ndarray, path) -> None:
    trace = np.asarray(trace, dtype=float)
    if trace.ndim != 2 or trace.shape[1] != 3:
        raise ValueError(f"trace must have shape (epochs, 3), got {trace.shape}")
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "L3", "L4", "L_total"])
            for i, row in enumerate(trace):
                writer.writerow(
                    [i, repr(float(row[0])), repr(float(row[1])), repr(float(row[2]))]
                )
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc
