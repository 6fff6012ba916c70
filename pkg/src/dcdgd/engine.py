"""Differential-coded compressed DGD over a simulated synchronous network.

Each node ``i`` keeps ``(x_i, y_i, z_i, d_i)``.  Per iteration it compresses
its differential once, applies the realised message to its own copy and
delivers the identical message to every neighbour, which fold it into
their aggregates with the consensus weights (self weight included).  Then
each node takes a local gradient step from its aggregate and forms the next
differential.  With ``y_0 = 0`` this keeps ``y_t = (W kron I) x_t`` and
``d_{t+1} = -grad L_{alpha_t}(x_t)`` exactly, where

    L_alpha(x) = x^T (I - W kron I) x / 2 + alpha * sum_i f_i(x_i).

States are stored stacked: row ``i`` of each ``(N, D)`` array is node ``i``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import compressors
from .bitcodec import DEFAULT_COST_MODEL, CostModel
from .compressors import CompressorSpec
from .graph import ConsensusMatrix, SpectralReport, eta_min_for, spectral
from .objectives import GlobalObjective

ACCOUNTING_MODES = ("broadcast", "per_link")


class InfeasibleConfigError(ValueError):
    """The compressor's SNR floor does not clear the spectrum's threshold."""


# ------------------------------------------------------------------ schedules

@dataclass(frozen=True)
class StepSchedule:
    """``constant`` (``alpha_t = alpha``) or ``sublinear`` (``alpha_t = (C2 / t)**(1/3)``, optional cap)."""

    kind: str
    alpha: float | None = None
    C2: float | None = None
    cap: float | None = None

    def __post_init__(self):
        if self.kind == "constant":
            if self.alpha is None or not self.alpha > 0:
                raise ValueError("constant schedule needs alpha > 0")
        elif self.kind == "sublinear":
            if self.C2 is None or not self.C2 > 0:
                raise ValueError("sublinear schedule needs C2 > 0")
            if self.cap is not None and not self.cap > 0:
                raise ValueError("step cap must be positive")
        else:
            raise ValueError(f"unknown schedule {self.kind!r}")

    @classmethod
    def constant(cls, alpha: float):
        return cls("constant", alpha=float(alpha))

    @classmethod
    def sublinear(cls, C2: float, cap: float | None = None):
        return cls("sublinear", C2=float(C2), cap=None if cap is None else float(cap))

    def __call__(self, t: int) -> float:
        if t < 1:
            raise ValueError("iterations are numbered from 1")
        if self.kind == "constant":
            return self.alpha
        a = (self.C2 / t) ** (1.0 / 3.0)
        return a if self.cap is None else min(a, self.cap)

    def __str__(self):
        if self.kind == "constant":
            return f"constant:{self.alpha:g}"
        out = f"sublinear:C2={self.C2:g}"
        return out if self.cap is None else out + f",cap={self.cap:g}"


# ------------------------------------------------------------------ config/state

@dataclass(frozen=True, eq=False)
class RunConfig:
    matrix: ConsensusMatrix
    objective: GlobalObjective
    compressor: CompressorSpec
    schedule: StepSchedule
    iterations: int
    master_seed: int = 0
    trial_count: int = 1
    cost_model: CostModel = DEFAULT_COST_MODEL
    accounting: str = "per_link"
    allow_infeasible: bool = False
    float_bits: int | None = None
    divergence_factor: float = 1e6
    workers: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.trial_count < 1:
            raise ValueError("trial_count must be >= 1")
        if self.accounting not in ACCOUNTING_MODES:
            raise ValueError(f"accounting must be one of {ACCOUNTING_MODES}")
        if self.matrix.n != self.objective.n:
            raise ValueError(
                f"matrix has {self.matrix.n} nodes but the objective has {self.objective.n} local terms"
            )


@dataclass(eq=False)
class NodeState:
    """Stacked ``(N, D)`` node variables."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    d: np.ndarray

    @classmethod
    def zeros(cls, n: int, dim: int):
        return cls(*(np.zeros((n, dim)) for _ in range(4)))

    def node(self, i: int):
        return self.x[i], self.y[i], self.z[i], self.d[i]


@dataclass(frozen=True)
class IterationMetrics:
    t: int
    mean_iterate: np.ndarray
    gap: float
    grad_norm_sq: float
    consensus_dev: float
    lyapunov: float
    lyapunov_grad_sq: float
    cum_bits: int
    alpha: float


@dataclass(eq=False)
class EngineState:
    config: RunConfig
    trial: int
    nodes: NodeState
    t: int = 1
    cum_bits: int = 0
    alpha_prev: float | None = None  # step used in the latest 3-c update
    f_ref: float = 0.0
    initial_gap: float = 0.0
    last_messages: np.ndarray | None = None
    out_degree: np.ndarray = field(default=None)


def node_rng(master_seed: int, trial: int, node: int, iteration: int) -> np.random.Generator:
    """Counter-based stream keyed by ``(master_seed, trial)`` at counter ``(node, iteration)``.

    Any ``(node, iteration)`` stream can be rebuilt independently of the
    order in which others were used.
    """
    bits = np.random.Philox(key=[master_seed, trial], counter=[0, 0, node, iteration])
    return np.random.Generator(bits)


def check_feasibility(config: RunConfig, report: SpectralReport | None = None) -> tuple[bool, str]:
    """Whether the compressor's SNR floor exceeds ``(1 - lambda_N) / (1 + lambda_N)``."""
    report = report or spectral(config.matrix)
    eta_min = eta_min_for(report.lambdaN)
    eta = config.compressor.eta
    eta_txt = "none (ternary has no uniform floor)" if eta is None else f"{eta:g}"
    ok = eta is not None and eta > eta_min
    msg = (
        f"SNR floor eta = {eta_txt} must exceed (1 - lambda_N)/(1 + lambda_N) = "
        f"(1 - {report.lambdaN:.6g})/(1 + {report.lambdaN:.6g}) = {eta_min:.6g}"
    )
    return ok, msg


# ------------------------------------------------------------------ algorithm

def init(config: RunConfig, trial: int = 0, report: SpectralReport | None = None,
         f_ref: float | None = None) -> EngineState:
    """Zero every node and set ``d_1 = z_1 = -alpha_1 grad f_i(0)``."""
    if not config.allow_infeasible:
        ok, msg = check_feasibility(config, report)
        if not ok:
            raise InfeasibleConfigError(msg + " (set allow_infeasible to run anyway)")
    n, dim = config.matrix.n, config.objective.dim
    nodes = NodeState.zeros(n, dim)
    alpha1 = config.schedule(1)
    nodes.z = -alpha1 * config.objective.local_grads(nodes.x)
    nodes.d = nodes.z - nodes.x
    if f_ref is None:
        f_ref = config.objective.f_ref if config.objective.f_ref is not None else 0.0
    deg = config.matrix.topology.degrees()
    state = EngineState(config, trial, nodes, f_ref=f_ref, out_degree=np.asarray(deg, dtype=np.int64))
    state.initial_gap = config.objective.value(np.zeros(dim)) - f_ref
    return state


def compress_all(state: EngineState) -> tuple[np.ndarray, np.ndarray]:
    """One draw per node: the ``(N, D)`` messages and their model-cost bits."""
    cfg = state.config
    n, dim = state.nodes.d.shape
    msgs = np.empty((n, dim))
    bits = np.zeros(n, dtype=np.int64)
    for i in range(n):
        rng = node_rng(cfg.master_seed, state.trial, i, state.t)
        decoded, cost = compressors.sample(
            cfg.compressor, state.nodes.d[i], rng, 1, cfg.cost_model, float_bits=cfg.float_bits
        )
        msgs[i] = decoded[0]
        bits[i] = cost[0]
    return msgs, bits


def step(state: EngineState) -> IterationMetrics:
    """Advance one synchronous round and report metrics at ``x_t``."""
    cfg = state.config
    W = cfg.matrix.weights
    nodes = state.nodes
    msgs, bits = compress_all(state)
    # every neighbour receives exactly what the sender applies to itself
    nodes.x = nodes.x + msgs
    nodes.y = nodes.y + W @ msgs
    alpha = cfg.schedule(state.t)
    grads = cfg.objective.local_grads(nodes.x)
    nodes.z = nodes.y - alpha * grads
    nodes.d = nodes.z - nodes.x
    if cfg.accounting == "broadcast":
        state.cum_bits += int(bits.sum())
    else:
        state.cum_bits += int(bits @ state.out_degree)
    state.last_messages = msgs
    state.alpha_prev = alpha
    metrics = measure(state, alpha, grads)
    state.t += 1
    return metrics


def measure(state: EngineState, alpha: float, local_grads: np.ndarray | None = None) -> IterationMetrics:
    cfg = state.config
    x = state.nodes.x
    xbar = x.mean(axis=0)
    g = cfg.objective.grad(xbar)
    dev = x - xbar
    if local_grads is None:
        local_grads = cfg.objective.local_grads(x)
    gL = lyapunov_grad(x, alpha, cfg.matrix, local_grads)
    return IterationMetrics(
        t=state.t,
        mean_iterate=xbar,
        gap=cfg.objective.value(xbar) - state.f_ref,
        grad_norm_sq=float(g @ g),
        consensus_dev=float(np.sum(dev * dev)),
        lyapunov=lyapunov(x, alpha, cfg.matrix, cfg.objective),
        lyapunov_grad_sq=float(np.sum(gL * gL)),
        cum_bits=state.cum_bits,
        alpha=alpha,
    )


def lyapunov(x, alpha: float, matrix: ConsensusMatrix, objective: GlobalObjective) -> float:
    """``x^T (I - W kron I) x / 2 + alpha * sum_i f_i(x_i)`` for stacked ``x``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (matrix.n, objective.dim):
        raise ValueError(f"stacked iterate must have shape {(matrix.n, objective.dim)}, got {x.shape}")
    mix = x - matrix.weights @ x
    return 0.5 * float(np.sum(x * mix)) + alpha * float(np.sum(objective.local_values(x)))


def lyapunov_grad(x, alpha: float, matrix: ConsensusMatrix, local_grads) -> np.ndarray:
    return x - matrix.weights @ x + alpha * local_grads


def lyapunov_grad_probe(state: EngineState) -> float:
    """``||d_{t+1} + grad L_{alpha_t}(x_t)||`` after the latest step."""
    cfg = state.config
    alpha = state.alpha_prev if state.alpha_prev is not None else cfg.schedule(1)
    gL = lyapunov_grad(state.nodes.x, alpha, cfg.matrix, cfg.objective.local_grads(state.nodes.x))
    return float(np.linalg.norm(state.nodes.d + gL))


def y_consistency_probe(state: EngineState) -> float:
    """``||y_t - (W kron I) x_t||``."""
    W = state.config.matrix.weights
    return float(np.linalg.norm(state.nodes.y - W @ state.nodes.x))


def classic_dgd(matrix: ConsensusMatrix, objective: GlobalObjective, schedule: StepSchedule,
                iterations: int) -> np.ndarray:
    """Plain DGD ``x_{t+1} = (W kron I) x_t - alpha_t grad f(x_t)`` with ``x_1 = -alpha_1 grad f(0)``.

    Returns the stacked iterates ``x_1 .. x_T`` as an array of shape ``(T, N, D)``.
    """
    W = matrix.weights
    x = -schedule(1) * objective.local_grads(np.zeros((matrix.n, objective.dim)))
    out = [x]
    for t in range(1, iterations):
        x = W @ x - schedule(t) * objective.local_grads(x)
        out.append(x)
    return np.stack(out)


# ------------------------------------------------------------------ trials

METRIC_NAMES = ("gap", "grad_norm_sq", "consensus_dev", "lyapunov", "cum_bits")


@dataclass(eq=False)
class TrialResult:
    """Per-iteration series of one trial.

    Entries after ``diverged_at`` are NaN (``cum_bits`` keeps its last value).
    """

    trial: int
    gap: np.ndarray
    grad_norm_sq: np.ndarray
    consensus_dev: np.ndarray
    lyapunov: np.ndarray
    lyapunov_grad_sq: np.ndarray
    cum_bits: np.ndarray
    alpha: np.ndarray
    diverged_at: int | None = None
    max_local_grad_norm: float = 0.0
    max_y_residual: float = 0.0
    max_grad_residual: float = 0.0
    trajectory: np.ndarray | None = None

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    @property
    def iterations(self) -> int:
        return self.gap.shape[0]


def run_trial(config: RunConfig, trial: int, report: SpectralReport | None = None, f_ref: float | None = None,
              probes: bool = False, keep_trajectory: bool = False) -> TrialResult:
    T = config.iterations
    state = init(config, trial, report, f_ref)
    series = {name: np.full(T, np.nan) for name in ("gap", "grad_norm_sq", "consensus_dev", "lyapunov",
                                                    "lyapunov_grad_sq", "alpha")}
    cum = np.zeros(T, dtype=np.int64)
    traj = np.full((T,) + state.nodes.x.shape, np.nan) if keep_trajectory else None
    threshold = config.divergence_factor * abs(state.initial_gap)
    diverged_at = None
    max_grad = float(np.max(np.linalg.norm(config.objective.local_grads(state.nodes.x), axis=1)))
    max_y = max_res = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(T):
            m = step(state)
            cum[k] = m.cum_bits
            finite = np.all(np.isfinite(state.nodes.x)) and math.isfinite(m.gap) and math.isfinite(m.lyapunov)
            if not finite or m.gap > threshold:
                diverged_at = m.t
                cum[k:] = m.cum_bits
                break
            series["gap"][k] = m.gap
            series["grad_norm_sq"][k] = m.grad_norm_sq
            series["consensus_dev"][k] = m.consensus_dev
            series["lyapunov"][k] = m.lyapunov
            series["lyapunov_grad_sq"][k] = m.lyapunov_grad_sq
            series["alpha"][k] = m.alpha
            if traj is not None:
                traj[k] = state.nodes.x
            g = config.objective.local_grads(state.nodes.x)
            max_grad = max(max_grad, float(np.max(np.linalg.norm(g, axis=1))))
            if probes:
                max_y = max(max_y, y_consistency_probe(state) / (1.0 + np.linalg.norm(state.nodes.x)))
                gnorm = math.sqrt(m.lyapunov_grad_sq)
                max_res = max(max_res, lyapunov_grad_probe(state) / (1.0 + gnorm))
    return TrialResult(
        trial=trial, cum_bits=cum, diverged_at=diverged_at, max_local_grad_norm=max_grad,
        max_y_residual=max_y, max_grad_residual=max_res, trajectory=traj, **series,
    )


@dataclass(eq=False)
class RunResult:
    config: RunConfig
    trials: list
    initial_gap: float
    f_ref: float
    report: SpectralReport

    @property
    def any_diverged(self) -> bool:
        return any(t.diverged for t in self.trials)

    @property
    def diverged_count(self) -> int:
        return sum(t.diverged for t in self.trials)

    @property
    def gap_threshold(self) -> float:
        return self.config.divergence_factor * abs(self.initial_gap)

    def clipped(self, name: str) -> np.ndarray:
        """``(trials, T)`` series; diverged gaps are clipped at the divergence threshold."""
        data = np.stack([getattr(t, name) for t in self.trials]).astype(float)
        if name == "gap":
            data = np.where(np.isnan(data), self.gap_threshold, np.minimum(data, self.gap_threshold))
        return data

    def aggregate(self) -> dict:
        """Per-iteration mean and (population) std across trials for each metric.

        Gaps of diverged trials enter at the clip value; other metrics
        average over the trials still running at that iteration.
        """
        out = {}
        for name in METRIC_NAMES + ("lyapunov_grad_sq",):
            data = self.clipped(name)
            with np.errstate(invalid="ignore"), _quiet_nan():
                out[name] = (np.nanmean(data, axis=0), np.nanstd(data, axis=0))
        return out

    def final_mean_gap(self) -> float:
        return float(np.mean(self.clipped("gap")[:, -1]))

    @property
    def D_est(self) -> float:
        return max(t.max_local_grad_norm for t in self.trials)


class _quiet_nan:
    def __enter__(self):
        import warnings
        self._ctx = warnings.catch_warnings()
        self._ctx.__enter__()
        warnings.simplefilter("ignore", RuntimeWarning)

    def __exit__(self, *exc):
        return self._ctx.__exit__(*exc)


def run(config: RunConfig, f_ref: float | None = None, probes: bool = False,
        keep_trajectory: bool = False) -> RunResult:
    """All trials of ``config``; results are independent of ``workers``."""
    report = spectral(config.matrix)
    if not config.allow_infeasible:
        ok, msg = check_feasibility(config, report)
        if not ok:
            raise InfeasibleConfigError(msg + " (set allow_infeasible to run anyway)")
    if f_ref is None:
        f_ref = config.objective.f_ref if config.objective.f_ref is not None else 0.0

    def one(k):
        return run_trial(config, k, report, f_ref, probes, keep_trajectory)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            trials = list(pool.map(one, range(config.trial_count)))
    else:
        trials = [one(k) for k in range(config.trial_count)]
    initial_gap = config.objective.value(np.zeros(config.objective.dim)) - f_ref
    return RunResult(config, trials, initial_gap, f_ref, report)


# ------------------------------------------------------------------ theory

@dataclass(frozen=True)
class TheoryReport:
    feasible: bool
    eta: float | None
    eta_min: float
    alpha: float
    alpha_max: float
    C1: float
    error_ball: float
    gradient_sum_bound: float
    C2: float
    rate_constant: float
    N: int
    L: float
    D: float
    beta: float
    lambdaN: float


def theory_report(alpha: float, eta: float | None, report: SpectralReport, L: float, D: float, N: int,
                  f0: float, f_star: float) -> TheoryReport:
    """Constants from the convergence statements, evaluated with measured inputs.

    ``f_star`` stands in for the optimal value.  Constants whose formula
    needs a feasible ``(eta, alpha)`` are NaN when infeasible.
    """
    lam, beta = report.lambdaN, report.beta
    eta_min = eta_min_for(lam)
    eta_val = math.inf if eta is None else eta
    if eta is None:
        a_max = float("nan")
    elif math.isinf(eta):
        a_max = (1.0 + lam) / L
    else:
        a_max = (lam * (eta + 1.0) + eta - 1.0) / (L * (1.0 + eta))
    feasible = eta is not None and eta > eta_min and alpha <= a_max
    gap0 = f0 - f_star
    nan = float("nan")
    if feasible:
        denom = (1.0 + lam - alpha * L) * eta_val - (1.0 - lam + alpha * L) if not math.isinf(eta_val) else math.inf
        first = 0.0 if math.isinf(denom) else 4.0 * (alpha / (1.0 - beta ** 2) + L / 2.0) / denom
        C1 = first + 2.0 * N / alpha
        inv_eta = 0.0 if math.isinf(eta_val) else 1.0 / eta_val
        grad_bound = 2.0 * alpha * gap0 / (1.0 + lam - alpha * L - (1.0 - lam + alpha * L) * inv_eta)
    else:
        C1 = grad_bound = nan
    error_ball = alpha ** 2 * N ** 2 * D ** 2 * L / (1.0 - beta) ** 2
    C2 = gap0 * (1.0 - beta) ** 2 / (D ** 2 * N ** 2 * L)
    rate = 3.0 * gap0 ** (2.0 / 3.0) * (D ** 2 * N ** 2 * L) ** (1.0 / 3.0) / (1.0 - beta) ** (2.0 / 3.0)
    return TheoryReport(
        feasible=feasible, eta=eta, eta_min=eta_min, alpha=alpha, alpha_max=a_max, C1=C1,
        error_ball=error_ball, gradient_sum_bound=grad_bound, C2=C2, rate_constant=rate,
        N=N, L=L, D=D, beta=beta, lambdaN=lam,
    )


def consensus_bound(alpha: float, N: int, D: float, beta: float, eta: float, lyap_grad_sq) -> np.ndarray:
    """Deviation bound ``(alpha N D / (1 - beta))**2 + sum_tau beta**(2(t - tau)) g_{tau-1} / eta`` per t.

    ``lyap_grad_sq[k]`` is ``||grad L(x_k)||^2`` for ``k = 0 .. T-1``; entry
    ``t - 1`` of the result bounds the deviation at iteration ``t``.
    """
    g = np.asarray(lyap_grad_sq, dtype=float)
    inv_eta = 0.0 if math.isinf(eta) else 1.0 / eta
    acc = np.empty_like(g)
    run_sum = 0.0
    for k in range(g.shape[0]):
        run_sum = beta ** 2 * run_sum + g[k]
        acc[k] = run_sum
    return (alpha * N * D / (1.0 - beta)) ** 2 + acc * inv_eta
