"""Local objectives, their global sum, and dataset ingestion.

All objectives are immutable after construction and expose ``value``,
``grad`` and a smoothness constant ``L_est``.  Smoothness constants are
analytic where a closed form exists and otherwise come from power
iteration on the Hessian.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (residual {residual:.3e})")


class DatasetError(ValueError):
    pass


def power_iteration(matvec, dim: int, tol: float = 1e-10, max_iter: int = 10_000, seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric positive semidefinite operator.

    Stops when ``||A v - lam v|| <= tol * max(lam, 1)``; raises
    :class:`ConvergenceError` with the residual otherwise.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    residual = math.inf
    for _ in range(max_iter):
        w = matvec(v)
        lam = float(v @ w)
        residual = float(np.linalg.norm(w - lam * v))
        if residual <= tol * max(abs(lam), 1.0):
            return lam
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
    raise ConvergenceError("power iteration did not converge", residual)


class LocalObjective:
    """Base class; subclasses set ``dim`` and implement ``value`` and ``grad``."""

    dim: int
    name: str = "local"

    def value(self, x) -> float:
        raise NotImplementedError

    def grad(self, x) -> np.ndarray:
        raise NotImplementedError

    @property
    def L_est(self) -> float:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Quadratic(LocalObjective):
    """``x^T H x / 2 + g^T x + c`` with symmetric positive semidefinite ``H``."""

    H: np.ndarray
    g: np.ndarray
    c: float = 0.0
    name: str = "quadratic"

    @property
    def dim(self) -> int:
        return self.g.shape[0]

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.H @ x + self.g @ x + self.c)

    def grad(self, x):
        return self.H @ np.asarray(x, dtype=float) + self.g

    @property
    def L_est(self):
        return power_iteration(lambda v: self.H @ v, self.dim)


@dataclass(frozen=True, eq=False)
class LeastSquares(LocalObjective):
    """``(a^T x - b)**2 / 2``."""

    a: np.ndarray
    b: float
    name: str = "least_squares"

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    def value(self, x):
        r = float(self.a @ x) - self.b
        return 0.5 * r * r

    def grad(self, x):
        return (float(self.a @ x) - self.b) * self.a

    @property
    def L_est(self):
        # Hessian a a^T; power iteration lands on ||a||^2 in one step
        return power_iteration(lambda v: self.a * float(self.a @ v), self.dim)


@dataclass(frozen=True, eq=False)
class LogCauchy(LocalObjective):
    """``log(1 + (a^T x + b)**2 / 2)``, a smooth non-convex robust loss.

    Its second derivative in ``u = a^T x + b`` is ``(1 - u**2/2) / (1 + u**2/2)**2``,
    largest (= 1) at ``u = 0``, so ``L = ||a||^2``.
    """

    a: np.ndarray
    b: float
    name: str = "log_cauchy"

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    def value(self, x):
        u = float(self.a @ x) + self.b
        return math.log1p(0.5 * u * u)

    def grad(self, x):
        u = float(self.a @ x) + self.b
        return (u / (1.0 + 0.5 * u * u)) * self.a

    @property
    def L_est(self):
        return float(self.a @ self.a)


def regularizer(x, rho: float) -> float:
    """``rho * sum(x**2 / (1 + x**2))``."""
    x2 = np.square(x)
    return float(rho * np.sum(x2 / (1.0 + x2)))


def regularizer_grad(x, rho: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return rho * 2.0 * x / np.square(1.0 + x * x)


@dataclass(frozen=True, eq=False)
class LogisticNonconvex(LocalObjective):
    """Mean cross-entropy of a linear classifier plus ``rho * sum(x**2 / (1 + x**2))``.

    ``L_est`` is the analytic bound ``lambda_max(Z^T Z) / (4 n) + 2 rho``.
    """

    Z: np.ndarray
    y: np.ndarray
    rho: float = 0.1
    name: str = "logistic_nonconvex"

    def __post_init__(self):
        if self.Z.shape[0] == 0:
            raise ValueError("logistic objective needs at least one row")
        if self.rho < 0:
            raise ValueError("rho must be >= 0")

    @property
    def dim(self) -> int:
        return self.Z.shape[1]

    def value(self, x):
        s = self.Z @ x
        # -[y log sig(s) + (1-y) log(1 - sig(s))] = log(1 + e^s) - y s
        ce = np.mean(np.logaddexp(0.0, s) - self.y * s)
        return float(ce) + regularizer(x, self.rho)

    def grad(self, x):
        s = self.Z @ x
        sig = 0.5 * (1.0 + np.tanh(0.5 * s))
        return self.Z.T @ (sig - self.y) / self.Z.shape[0] + regularizer_grad(x, self.rho)

    @property
    def L_est(self):
        n = self.Z.shape[0]
        top = power_iteration(lambda v: self.Z.T @ (self.Z @ v), self.dim)
        return top / (4.0 * n) + 2.0 * self.rho


@dataclass(frozen=True, eq=False)
class GlobalObjective:
    """``f(x) = sum_i f_i(x)`` over the nodes' local objectives."""

    locals: tuple
    f_ref: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.locals:
            raise ValueError("need at least one local objective")
        dims = {f.dim for f in self.locals}
        if len(dims) != 1:
            raise ValueError(f"local objectives disagree on dimension: {sorted(dims)}")

    @property
    def n(self) -> int:
        return len(self.locals)

    @property
    def dim(self) -> int:
        return self.locals[0].dim

    def value(self, x) -> float:
        return float(sum(f.value(x) for f in self.locals))

    def grad(self, x) -> np.ndarray:
        return np.sum([f.grad(x) for f in self.locals], axis=0)

    def local_values(self, X) -> np.ndarray:
        """``f_i(X[i])`` for a stacked ``(N, D)`` iterate."""
        return np.array([f.value(X[i]) for i, f in enumerate(self.locals)])

    def local_grads(self, X) -> np.ndarray:
        return np.stack([f.grad(X[i]) for i, f in enumerate(self.locals)])

    @property
    def L_est(self) -> float:
        """Largest local smoothness constant (the constant the theory uses)."""
        return max(f.L_est for f in self.locals)

    def with_f_ref(self, f_ref: float) -> "GlobalObjective":
        return GlobalObjective(self.locals, float(f_ref), dict(self.meta))


def estimate_L(objective) -> float:
    """Smoothness constant of a local or global objective."""
    return objective.L_est


def reference_optimum(objective: GlobalObjective, iterations: int = 100_000, step: float | None = None,
                      tol: float = 1e-24, x0=None) -> tuple[float, np.ndarray]:
    """Long-horizon centralised gradient descent on ``f`` for a gap reference.

    Uses step ``1 / sum_i L_i`` (a valid bound for the sum) and stops early
    once ``||grad f||^2 <= tol``.
    """
    if step is None:
        step = 1.0 / sum(f.L_est for f in objective.locals)
    x = np.zeros(objective.dim) if x0 is None else np.array(x0, dtype=float)
    for _ in range(iterations):
        g = objective.grad(x)
        if float(g @ g) <= tol:
            break
        x = x - step * g
    return objective.value(x), x


def make_synthetic_five(seed: int = 0, dim: int = 10) -> GlobalObjective:
    """Five-node mix: two log-Cauchy terms and three least-squares terms.

    ``a_i`` and ``b_i`` are standard Gaussian draws from ``seed``.
    """
    rng = np.random.default_rng(seed)
    locals_ = []
    for i in range(5):
        a = rng.standard_normal(dim)
        b = float(rng.standard_normal())
        locals_.append(LogCauchy(a, b) if i < 2 else LeastSquares(a, b))
    return GlobalObjective(tuple(locals_), meta={"kind": "synthetic_five", "seed": seed, "dim": dim})


# ------------------------------------------------------------------ datasets

@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    checksum: str
    standardized: bool
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    @property
    def rows(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True, eq=False)
class Partition:
    blocks: tuple

    @property
    def N(self) -> int:
        return len(self.blocks)

    @property
    def sizes(self) -> tuple:
        return tuple(len(b) for b in self.blocks)


def file_checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def standardize(features: np.ndarray):
    """Zero-mean unit-variance columns; constant columns are only centred."""
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    safe = np.where(std > 0, std, 1.0)
    return (features - mean) / safe, mean, safe


def load_csv_dataset(path, feature_count: int = 57, label_column: int = -1, standardize_features: bool = True,
                     expected_checksum: str | None = None) -> Dataset:
    """Read comma-separated rows of ``feature_count`` numbers plus a 0/1 label.

    Blank lines and lines starting with ``#`` are skipped.

    Raises
    ------
    DatasetError
        Missing file, checksum mismatch, a row that does not parse (the
        message names the line), a non-binary label, or no rows at all.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(
            f"dataset file {path} not found; expected comma-separated rows of "
            f"{feature_count} numeric features and a trailing 0/1 label (e.g. spambase.data)"
        )
    digest = file_checksum(path)
    if expected_checksum is not None and digest != expected_checksum.lower():
        raise DatasetError(f"checksum mismatch for {path}: expected {expected_checksum}, got {digest}")
    rows, labels = [], []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != feature_count + 1:
                raise DatasetError(f"{path}:{lineno}: expected {feature_count + 1} fields, got {len(parts)}")
            try:
                values = [float(p) for p in parts]
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            label = values.pop(label_column)
            if label not in (0.0, 1.0):
                raise DatasetError(f"{path}:{lineno}: label {label:g} is not 0 or 1")
            if not all(math.isfinite(v) for v in values):
                raise DatasetError(f"{path}:{lineno}: non-finite feature")
            rows.append(values)
            labels.append(label)
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    X = np.array(rows)
    mean = std = None
    if standardize_features:
        X, mean, std = standardize(X)
    return Dataset(X, np.array(labels), digest, standardize_features, mean, std)


def partition_even(dataset_or_rows, N: int, seed: int = 0) -> Partition:
    """Seeded shuffle, then ``N`` contiguous blocks whose sizes differ by at most one."""
    n = dataset_or_rows if isinstance(dataset_or_rows, int) else dataset_or_rows.rows
    if N <= 0:
        raise ValueError("N must be positive")
    if N > n:
        raise ValueError(f"cannot split {n} rows into {N} nonempty blocks")
    perm = np.random.default_rng(seed).permutation(n)
    return Partition(tuple(np.sort(b) for b in np.array_split(perm, N)))


def make_logistic_nonconvex(dataset: Dataset, indices, rho: float = 0.1) -> LogisticNonconvex:
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise ValueError("empty partition block")
    return LogisticNonconvex(dataset.features[indices], dataset.labels[indices], rho)


def make_logistic_global(dataset: Dataset, N: int, rho: float = 0.1, seed: int = 0) -> GlobalObjective:
    part = partition_even(dataset, N, seed)
    locals_ = tuple(make_logistic_nonconvex(dataset, b, rho) for b in part.blocks)
    return GlobalObjective(locals_, meta={"kind": "logistic", "rho": rho, "N": N, "checksum": dataset.checksum})


def finite_difference_grad(fun, x, rel_step: float = 1e-5) -> np.ndarray:
    """Central differences with step ``rel_step * (1 + |x_j|)``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for j in range(x.shape[0]):
        h = rel_step * (1.0 + abs(x[j]))
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (fun(x + e) - fun(x - e)) / (2.0 * h)
    return g
