"""Consensus matrices over undirected connected topologies.

Construction (Metropolis weights), validation of loaded matrices, spectral
analysis by cyclic Jacobi rotations, and the step-size / SNR thresholds the
spectrum induces for differential-coded DGD.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._backend import kernels


@dataclass(frozen=True)
class Tolerances:
    """Every numeric tolerance used by this module, in one place."""

    row_sum: float = 1e-10
    symmetry: float = 1e-12
    unit_eigenvalue: float = 1e-8
    eigen_residual: float = 1e-10
    jacobi_off_norm: float = 1e-12
    jacobi_max_sweeps: int = 100


TOLERANCES = Tolerances()


class GraphError(ValueError):
    """Invalid topology (bad endpoints, self-loops, disconnected)."""


class MatrixValidationError(ValueError):
    """A candidate consensus matrix violates one or more required properties.

    ``violations`` holds one ``(property, message)`` pair per failed check.
    """

    def __init__(self, violations: list[tuple[str, str]]):
        self.violations = violations
        super().__init__("; ".join(f"{prop}: {msg}" for prop, msg in violations))


class SpectralError(RuntimeError):
    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (achieved residual {residual:.3e})")


@dataclass(frozen=True)
class Topology:
    n: int
    edges: frozenset

    def __post_init__(self):
        if self.n < 2:
            raise GraphError(f"topology needs at least 2 nodes, got {self.n}")
        norm = set()
        for e in self.edges:
            i, j = sorted(int(v) for v in e)
            if i == j:
                raise GraphError(f"self-loop at node {i}")
            if i < 0 or j >= self.n:
                raise GraphError(f"edge ({i}, {j}) outside [0, {self.n})")
            norm.add((i, j))
        object.__setattr__(self, "edges", frozenset(norm))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Sequence[int]]) -> "Topology":
        return cls(n, frozenset(tuple(e) for e in edges))

    def neighbors(self, i: int) -> list[int]:
        out = [b if a == i else a for a, b in self.edges if i in (a, b)]
        return sorted(out)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n, self.n), dtype=bool)
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = True
        return adj

    def unreachable(self) -> list[int]:
        """Nodes not reachable from node 0 (empty when connected)."""
        adj = [[] for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        seen = {0}
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return [v for v in range(self.n) if v not in seen]

    def is_connected(self) -> bool:
        return not self.unreachable()


def ring(n: int) -> Topology:
    return Topology.from_edges(n, [(i, (i + 1) % n) for i in range(n)] if n > 2 else [(0, 1)])


def path(n: int) -> Topology:
    return Topology.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def complete(n: int) -> Topology:
    return Topology.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def star(n: int) -> Topology:
    return Topology.from_edges(n, [(0, j) for j in range(1, n)])


@dataclass(frozen=True, eq=False)
class ConsensusMatrix:
    """Validated symmetric doubly stochastic weights on a topology."""

    weights: np.ndarray
    topology: Topology

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def __post_init__(self):
        self.weights.setflags(write=False)


@dataclass(frozen=True)
class SpectralReport:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns, matching eigenvalues
    lambda2: float
    lambdaN: float
    beta: float
    eigen_tolerance: float
    sweeps: int
    degenerate: bool = False  # beta == 0, e.g. the uniform complete-graph matrix


@dataclass(frozen=True)
class TheoryThresholds:
    """SNR floor and step-size ceiling implied by the smallest eigenvalue."""

    lambdaN: float
    L: float
    eta_min: float
    p_min: float

    def alpha_max(self, eta: float) -> float:
        """Largest admissible constant step for SNR floor ``eta``.

        Negative or zero when ``eta <= eta_min``; for an exact compressor
        (``eta = inf``) the limit ``(1 + lambdaN) / L`` is returned.
        """
        if math.isinf(eta):
            return (1.0 + self.lambdaN) / self.L
        return (self.lambdaN * (eta + 1.0) + eta - 1.0) / (self.L * (1.0 + eta))

    def table(self, etas: Iterable[float]) -> list[tuple[float, float]]:
        return [(float(e), self.alpha_max(e)) for e in etas]

    def feasible(self, eta: float | None, alpha: float | None = None) -> bool:
        if eta is None or not eta > self.eta_min:
            return False
        return alpha is None or alpha <= self.alpha_max(eta)


def eta_min_for(lambdaN: float) -> float:
    if lambdaN <= -1.0:
        raise ValueError(f"lambda_N = {lambdaN} <= -1 is not a valid consensus spectrum")
    return (1.0 - lambdaN) / (1.0 + lambdaN)


def build_metropolis(topology: Topology) -> ConsensusMatrix:
    """Metropolis-Hastings weights: ``1 / (1 + max(deg_i, deg_j))`` per edge.

    The diagonal takes whatever each row has left, so rows and columns sum
    to one and the matrix is symmetric by construction.
    """
    missing = topology.unreachable()
    if missing:
        raise GraphError(f"topology is disconnected: node {missing[0]} is unreachable from node 0")
    deg = topology.degrees()
    W = np.zeros((topology.n, topology.n))
    for i, j in topology.edges:
        W[i, j] = W[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    np.fill_diagonal(W, 1.0 - W.sum(axis=1))
    return load_matrix(W, topology)


def lazy(matrix: ConsensusMatrix, self_weight: float) -> ConsensusMatrix:
    """Mix with the identity: ``(1 - s) W + s I``; shifts the spectrum toward 1."""
    if not 0.0 <= self_weight < 1.0:
        raise ValueError("self_weight must lie in [0, 1)")
    W = (1.0 - self_weight) * matrix.weights + self_weight * np.eye(matrix.n)
    return load_matrix(W, matrix.topology)


def ring_matrix(n: int, neighbor_weight: float) -> ConsensusMatrix:
    """Ring with a uniform neighbor weight and self weight ``1 - 2w``."""
    if not 0.0 < neighbor_weight <= 0.5:
        raise ValueError("neighbor_weight must lie in (0, 0.5]")
    top = ring(n)
    W = np.zeros((n, n))
    for i, j in top.edges:
        W[i, j] = W[j, i] = neighbor_weight
    np.fill_diagonal(W, 1.0 - W.sum(axis=1))
    return load_matrix(W, top)


def check_matrix(raw, topology: Topology | None = None, tol: Tolerances = TOLERANCES) -> list[tuple[str, str]]:
    """Return the list of violated consensus-matrix properties (empty if valid)."""
    W = np.asarray(raw, dtype=float)
    out: list[tuple[str, str]] = []
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        return [("shape", f"matrix must be square, got shape {W.shape}")]
    n = W.shape[0]
    if n < 2:
        return [("shape", f"need n >= 2, got n = {n}")]
    if not np.all(np.isfinite(W)):
        return [("finite", "matrix has non-finite entries")]
    if topology is not None and topology.n != n:
        return [("shape", f"matrix is {n}x{n} but topology has {topology.n} nodes")]
    asym = float(np.max(np.abs(W - W.T)))
    if asym > tol.symmetry:
        i, j = np.unravel_index(np.argmax(np.abs(W - W.T)), W.shape)
        out.append(("symmetric", f"|W[{i},{j}] - W[{j},{i}]| = {asym:.3e} > {tol.symmetry:g}"))
    rows = W.sum(axis=1) - 1.0
    bad = np.flatnonzero(np.abs(rows) > tol.row_sum)
    if bad.size:
        out.append(("row sum", f"row {bad[0]} sums to {float(1.0 + rows[bad[0]])!r}"))
    cols = W.sum(axis=0) - 1.0
    bad = np.flatnonzero(np.abs(cols) > tol.row_sum)
    if bad.size:
        out.append(("column sum", f"column {bad[0]} sums to {float(1.0 + cols[bad[0]])!r}"))
    if np.any(W < 0):
        i, j = np.argwhere(W < 0)[0]
        out.append(("nonnegative", f"W[{i},{j}] = {float(W[i, j])!r} < 0"))
    if topology is not None:
        adj = topology.adjacency()
        off = ~np.eye(n, dtype=bool)
        stray = np.argwhere(off & ~adj & (W != 0))
        if stray.size:
            i, j = stray[0]
            out.append(("sparsity", f"W[{i},{j}] = {float(W[i, j])!r} but ({i},{j}) is not a link"))
        missing = np.argwhere(adj & ~(W > 0))
        if missing.size:
            i, j = missing[0]
            out.append(("sparsity", f"link ({i},{j}) has non-positive weight {float(W[i, j])!r}"))
        unreachable = topology.unreachable()
        if unreachable:
            out.append(("connected", f"node {unreachable[0]} is unreachable from node 0"))
    return out


def topology_from_pattern(raw) -> Topology:
    """Topology implied by the nonzero off-diagonal entries of ``raw``."""
    W = np.asarray(raw, dtype=float)
    n = W.shape[0]
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if W[i, j] != 0 or W[j, i] != 0]
    return Topology.from_edges(n, edges)


def load_matrix(raw, topology: Topology | None = None) -> ConsensusMatrix:
    """Validate ``raw`` against the consensus-matrix properties.

    Raises
    ------
    MatrixValidationError
        Listing every violated property.
    """
    violations = check_matrix(raw, topology)
    if violations:
        raise MatrixValidationError(violations)
    W = np.array(raw, dtype=float)
    return ConsensusMatrix(W, topology if topology is not None else topology_from_pattern(W))


def spectral(w: ConsensusMatrix, tol: Tolerances = TOLERANCES) -> SpectralReport:
    """Full spectrum via cyclic Jacobi, with residual and unit-eigenvalue checks."""
    W = np.asarray(w.weights, dtype=float)
    vals, vecs, sweeps, off = kernels.jacobi_eigh(W, tol.jacobi_off_norm, tol.jacobi_max_sweeps)
    if off > tol.jacobi_off_norm:
        raise SpectralError(f"Jacobi did not converge in {sweeps} sweeps", off)
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]
    resid = np.linalg.norm(W @ vecs - vecs * vals, axis=0) / np.linalg.norm(vecs, axis=0)
    worst = float(resid.max())
    if worst > tol.eigen_residual:
        raise SpectralError("eigenpair residual above tolerance", worst)
    if abs(vals[0] - 1.0) > tol.unit_eigenvalue:
        raise SpectralError(f"largest eigenvalue {vals[0]!r} is not 1", abs(vals[0] - 1.0))
    v1 = vecs[:, 0] / np.linalg.norm(vecs[:, 0])
    ones = np.ones(w.n) / math.sqrt(w.n)
    if abs(abs(float(v1 @ ones)) - 1.0) > tol.unit_eigenvalue:
        raise SpectralError("eigenvector of eigenvalue 1 is not the all-ones direction", abs(abs(float(v1 @ ones)) - 1.0))
    if abs(vals[1] - 1.0) <= tol.unit_eigenvalue:
        raise SpectralError("eigenvalue 1 is repeated (graph not connected?)", abs(vals[1] - 1.0))
    lam2 = float(vals[1])
    lamN = float(vals[-1])
    if lamN <= -1.0:
        raise SpectralError(f"smallest eigenvalue {lamN!r} <= -1", lamN + 1.0)
    beta = max(abs(lam2), abs(lamN))
    # a rank-one projector leaves roundoff-sized eigenvalues
    degenerate = beta <= tol.unit_eigenvalue
    if degenerate:
        lam2 = lamN = beta = 0.0
    return SpectralReport(vals, vecs, lam2, lamN, beta, worst, sweeps, degenerate)


def thresholds(report: SpectralReport, L: float) -> TheoryThresholds:
    """Minimum SNR ``(1 - lN) / (1 + lN)`` and the matching sparsifier probability."""
    if not L > 0:
        raise ValueError(f"smoothness constant must be positive, got {L}")
    eta_min = eta_min_for(report.lambdaN)
    return TheoryThresholds(report.lambdaN, float(L), eta_min, eta_min / (1.0 + eta_min))


# ---------------------------------------------------------------- file formats

def read_matrix_file(path) -> np.ndarray:
    """First line ``n``, then ``n`` rows of ``n`` whitespace-separated numbers.

    Entries may be written as fractions (``2/5``).
    """
    lines = [ln.split("#", 1)[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError(f"{path}: empty matrix file")
    try:
        n = int(lines[0])
    except ValueError:
        raise ValueError(f"{path}:1: expected node count, got {lines[0]!r}") from None
    if len(lines) - 1 != n:
        raise ValueError(f"{path}: expected {n} rows, found {len(lines) - 1}")
    rows = []
    for k, ln in enumerate(lines[1:], start=2):
        try:
            row = [_parse_number(tok) for tok in ln.split()]
        except ValueError as exc:
            raise ValueError(f"{path}:{k}: {exc}") from None
        if len(row) != n:
            raise ValueError(f"{path}:{k}: expected {n} entries, found {len(row)}")
        rows.append(row)
    return np.array(rows, dtype=float)


def _parse_number(tok: str) -> float:
    if "/" in tok:
        num, den = tok.split("/", 1)
        return float(num) / float(den)
    return float(tok)


def write_matrix_file(path, W) -> None:
    W = np.asarray(W, dtype=float)
    rows = [" ".join(repr(float(v)) for v in row) for row in W]
    Path(path).write_text(f"{W.shape[0]}\n" + "\n".join(rows) + "\n")


def read_topology_file(path) -> Topology:
    """First line ``n``, then one ``i j`` pair per line."""
    lines = [ln.split("#", 1)[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError(f"{path}: empty topology file")
    n = int(lines[0])
    edges = []
    for k, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{k}: expected 'i j', got {ln!r}")
        edges.append((int(parts[0]), int(parts[1])))
    return Topology.from_edges(n, edges)


def write_topology_file(path, topology: Topology) -> None:
    body = "".join(f"{i} {j}\n" for i, j in sorted(topology.edges))
    Path(path).write_text(f"{topology.n}\n{body}")


def data_path(name: str) -> Path:
    """Path of a file shipped in ``dcdgd/data``."""
    return Path(__file__).with_name("data") / name
