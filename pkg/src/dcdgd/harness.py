"""Experiment configs, sweeps and CSV output for the command-line runner.

Configs are INI files (``configparser`` grammar: ``[section]`` headers and
``key = value`` lines, ``#`` comments).  Every experiment kind reads
``[experiment]``; the remaining sections depend on the kind, see the files in
``configs/`` for annotated examples.
"""
from __future__ import annotations

import configparser
import csv
import io
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import compressors, engine, graph, objectives
from .bitcodec import CostModel
from .compressors import CompressorSpec
from .engine import RunConfig, StepSchedule

RUN_COLUMNS = ("trial", "iteration", "gap", "grad_norm_sq", "consensus_dev", "lyapunov", "cum_bits")
SUMMARY_COLUMNS = (
    "config_id", "iteration",
    "gap_mean", "gap_std",
    "grad_norm_sq_mean", "grad_norm_sq_std",
    "consensus_dev_mean", "consensus_dev_std",
    "lyapunov_mean", "lyapunov_std",
    "cum_bits_mean", "running_trials",
)
COMPARE_COLUMNS = (
    "snr_target_db", "d", "vector", "compressor", "bias_norm", "max_bias_z",
    "empirical_snr", "empirical_snr_db", "analytic_noise_power", "mean_paper_cost_bits",
)
EXPERIMENT_KINDS = ("convergence", "compressor-compare", "real-data")


class ConfigError(ValueError):
    """Config problem; the message names the file, section and key."""


# ------------------------------------------------------------------ config

@dataclass
class ExperimentConfig:
    kind: str
    path: Path
    parser: configparser.ConfigParser
    seed: int = 0
    trials: int = 10
    iterations: int = 200
    out_dir: Path = Path("results")
    workers: int = 1

    def get(self, section, key, fallback=None, required=False):
        if self.parser.has_option(section, key):
            return self.parser.get(section, key).strip()
        if required:
            raise ConfigError(f"{self.path}: missing key [{section}] {key}")
        return fallback

    def typed(self, section, key, conv, fallback=None, required=False):
        raw = self.get(section, key, None, required)
        if raw is None:
            return fallback
        try:
            return conv(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{self.path}: [{section}] {key} = {raw!r}: {exc}") from None

    def resolve_path(self, text: str) -> Path:
        p = Path(text).expanduser()
        return p if p.is_absolute() else (self.path.parent / p)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _words(text: str) -> list[str]:
    return [w for w in re.split(r"[\s,;]+", text.strip()) if w]


def _spec_list(text: str) -> list[CompressorSpec]:
    specs = compressors.parse_spec_list(text)
    if not specs:
        raise ValueError("empty compressor list")
    return specs


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Parse a config file; ``overrides`` (seed, trials, iterations, out_dir) win over the file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str  # keep key case (C, p)
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not parser.has_section("experiment"):
        raise ConfigError(f"{path}: missing [experiment] section")
    cfg = ExperimentConfig(kind="", path=path, parser=parser)
    cfg.kind = cfg.get("experiment", "kind", required=True)
    if cfg.kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"{path}: [experiment] kind = {cfg.kind!r}: expected one of {EXPERIMENT_KINDS}")
    cfg.seed = cfg.typed("experiment", "seed", int, 0)
    cfg.trials = cfg.typed("experiment", "trials", int, 10)
    cfg.iterations = cfg.typed("experiment", "iterations", int, 200)
    cfg.workers = cfg.typed("experiment", "workers", int, 1)
    cfg.out_dir = cfg.resolve_path(cfg.get("experiment", "out_dir", "results"))
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, key, Path(value) if key == "out_dir" else value)
    if cfg.trials < 1 or cfg.iterations < 1:
        raise ConfigError(f"{path}: trials and iterations must be >= 1")
    return cfg


def cost_model_from(cfg: ExperimentConfig) -> CostModel:
    s = "cost"
    try:
        return CostModel(
            c1=cfg.typed(s, "c1", int, 32),
            c0=cfg.typed(s, "c0", int, 1),
            c0t=cfg.typed(s, "c0t", int, 2),
            hybrid_zero_bits=cfg.typed(s, "hybrid_zero_bits", int, None),
        )
    except ValueError as exc:
        raise ConfigError(f"{cfg.path}: [cost] {exc}") from None


def matrix_from_text(text: str, base: Path | None = None) -> graph.ConsensusMatrix:
    """Build a consensus matrix from a short description.

    ``file:<path>`` or a bare ``*.txt`` name (bundled data first), or
    ``<topology>[:n]`` with an optional weight rule, e.g. ``ring:10``,
    ``ring:10 metropolis``, ``path:10 lazy=0.5``, ``ring:10 weight=0.4``.
    """
    parts = text.split()
    head = parts[0]
    rules = parts[1:]
    if head.startswith("file:") or head.endswith(".txt"):
        name = head[5:] if head.startswith("file:") else head
        p = Path(name)
        if not p.is_absolute() and base is not None and (base / p).is_file():
            p = base / p
        elif not p.is_file():
            p = graph.data_path(name)
        return graph.load_matrix(graph.read_matrix_file(p))
    kind, _, n_txt = head.partition(":")
    builders = {"ring": graph.ring, "path": graph.path, "complete": graph.complete, "star": graph.star}
    if kind not in builders:
        raise ValueError(f"unknown topology {kind!r}")
    n = int(n_txt) if n_txt else 5
    W = None
    lazy = None
    for rule in rules:
        key, _, val = rule.partition("=")
        if key == "metropolis":
            continue
        if key == "lazy":
            lazy = float(val)
        elif key == "weight":
            if kind != "ring":
                raise ValueError("weight= is only defined for rings")
            W = graph.ring_matrix(n, float(val))
        else:
            raise ValueError(f"unknown weight rule {rule!r}")
    if W is None:
        W = graph.build_metropolis(builders[kind](n))
    if lazy is not None:
        W = graph.lazy(W, lazy)
    return W


def schedule_from_text(text: str) -> StepSchedule:
    kind, _, rest = text.partition(":")
    kind = kind.strip()
    if kind == "constant":
        return StepSchedule.constant(float(rest))
    if kind == "sublinear":
        params = dict(item.split("=") for item in rest.split(",") if item)
        cap = params.get("cap")
        return StepSchedule.sublinear(float(params["C2"]), None if cap is None else float(cap))
    raise ValueError(f"unknown schedule {text!r}")


def config_id(spec: CompressorSpec, prefix: str = "") -> str:
    tag = str(spec).replace(":", "_").replace("=", "").replace(",", "_")
    return f"{prefix}{tag}"


# ------------------------------------------------------------------ output

def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)


def write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([r if isinstance(r, str) else _fmt(r) for r in row])
    path.write_text(buf.getvalue())


def run_rows(result: engine.RunResult):
    for tr in result.trials:
        for k in range(tr.iterations):
            yield (tr.trial, k + 1, tr.gap[k], tr.grad_norm_sq[k], tr.consensus_dev[k], tr.lyapunov[k],
                   int(tr.cum_bits[k]))


def summary_rows(cid: str, result: engine.RunResult):
    agg = result.aggregate()
    running = np.sum(~np.isnan(np.stack([t.gap for t in result.trials])), axis=0)
    T = result.config.iterations
    for k in range(T):
        yield (cid, k + 1,
               agg["gap"][0][k], agg["gap"][1][k],
               agg["grad_norm_sq"][0][k], agg["grad_norm_sq"][1][k],
               agg["consensus_dev"][0][k], agg["consensus_dev"][1][k],
               agg["lyapunov"][0][k], agg["lyapunov"][1][k],
               agg["cum_bits"][0][k], int(running[k]))


# ------------------------------------------------------------------ experiments

@dataclass
class SweepOutcome:
    results: dict = field(default_factory=dict)  # config id -> RunResult
    files: list = field(default_factory=list)
    required: list = field(default_factory=list)  # config ids that must converge
    notes: list = field(default_factory=list)

    def failed_requirements(self) -> list[str]:
        return [cid for cid in self.required if self.results[cid].any_diverged]


def _objective_from(cfg: ExperimentConfig):
    s = "objective"
    kind = cfg.get(s, "kind", "synthetic_five")
    if kind != "synthetic_five":
        raise ConfigError(f"{cfg.path}: [objective] kind = {kind!r}: only synthetic_five is supported here")
    obj = objectives.make_synthetic_five(cfg.typed(s, "seed", int, 0), cfg.typed(s, "dim", int, 10))
    return _with_reference(cfg, obj)


def _with_reference(cfg: ExperimentConfig, obj):
    s = "objective"
    policy = cfg.get(s, "f_ref", "gd")
    if policy == "gd":
        f_ref, _ = objectives.reference_optimum(obj, iterations=cfg.typed(s, "f_ref_iterations", int, 100_000))
    elif policy == "zero":
        f_ref = 0.0
    else:
        f_ref = cfg.typed(s, "f_ref", float)
    return obj.with_f_ref(f_ref)


def _accounting(cfg: ExperimentConfig) -> str:
    mode = cfg.get("sweep", "accounting", "per_link")
    if mode not in engine.ACCOUNTING_MODES:
        raise ConfigError(f"{cfg.path}: [sweep] accounting must be one of {engine.ACCOUNTING_MODES}, got {mode!r}")
    return mode


def _run_sweep(cfg: ExperimentConfig, W, obj, specs, schedule, model, prefix="", allow=True,
               accounting="per_link") -> dict:
    out = {}
    for spec in specs:
        rc = RunConfig(
            matrix=W, objective=obj, compressor=spec, schedule=schedule, iterations=cfg.iterations,
            master_seed=cfg.seed, trial_count=cfg.trials, cost_model=model, accounting=accounting,
            allow_infeasible=allow, workers=cfg.workers,
        )
        out[config_id(spec, prefix)] = engine.run(rc)
    return out


def run_convergence(cfg: ExperimentConfig) -> SweepOutcome:
    """Sweep compressors on one network and objective (``[network]``, ``[objective]``, ``[sweep]``)."""
    try:
        W = matrix_from_text(cfg.get("network", "matrix", required=True), cfg.path.parent)
        specs = _spec_list(cfg.get("sweep", "compressors", required=True))
        schedule = schedule_from_text(cfg.get("sweep", "schedule", "constant:0.1"))
        required = [config_id(s) for s in compressors.parse_spec_list(cfg.get("sweep", "require_convergence", ""))]
    except (ValueError, graph.MatrixValidationError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{cfg.path}: {exc}") from None
    obj = _objective_from(cfg)
    model = cost_model_from(cfg)
    allow = cfg.typed("sweep", "allow_infeasible", _bool, True)
    accounting = _accounting(cfg)
    outcome = SweepOutcome(required=required)
    try:
        outcome.results = _run_sweep(cfg, W, obj, specs, schedule, model, allow=allow, accounting=accounting)
    except engine.InfeasibleConfigError as exc:
        raise ConfigError(f"{cfg.path}: {exc}") from None
    missing = [r for r in required if r not in outcome.results]
    if missing:
        raise ConfigError(f"{cfg.path}: [sweep] require_convergence names configs not in the sweep: {missing}")
    _write_sweep(cfg, outcome)
    return outcome


def _write_sweep(cfg: ExperimentConfig, outcome: SweepOutcome, summary_name="summary.csv"):
    summary = []
    for cid, result in outcome.results.items():
        path = cfg.out_dir / f"{cid}.csv"
        write_csv(path, RUN_COLUMNS, run_rows(result))
        outcome.files.append(path)
        summary.extend(summary_rows(cid, result))
    path = cfg.out_dir / summary_name
    write_csv(path, SUMMARY_COLUMNS, summary)
    outcome.files.append(path)


def sweep_report(outcome: SweepOutcome) -> str:
    lines = []
    for cid, r in outcome.results.items():
        status = f"diverged in {r.diverged_count}/{len(r.trials)} trials" if r.any_diverged else "all trials finite"
        lines.append(f"{cid:32s} final mean gap {r.final_mean_gap():.4e}  (initial {r.initial_gap:.4e}); {status}")
    return "\n".join(lines)


# ----------------------------------------------------------- compressor compare

@dataclass
class CompareOutcome:
    rows: list
    files: list

    def select(self, **match):
        return [r for r in self.rows if all(r[k] == v for k, v in match.items())]


def specs_for_target(db: float, kinds) -> list[CompressorSpec]:
    """Sparsifier ``p = eta/(1+eta)`` and hybrid ``C = eta`` for an SNR target in dB."""
    eta = compressors.db_to_snr(db)
    out = []
    for kind in kinds:
        if kind == "sparsifier":
            out.append(CompressorSpec.sparsifier(eta / (1.0 + eta)))
        elif kind == "hybrid":
            out.append(CompressorSpec.hybrid(eta))
        elif kind == "ternary":
            out.append(CompressorSpec.ternary())
        elif kind == "identity":
            out.append(CompressorSpec.identity())
        else:
            raise ValueError(f"unknown compressor kind {kind!r}")
    return out


def compare_compressors(dims=(20, 50), vectors: int = 20, trials: int = 100, targets_db=(0.0, 3.0),
                        kinds=("sparsifier", "ternary", "hybrid"), seed: int = 0, model: CostModel | None = None):
    """Monte-Carlo bias, SNR and cost for each (target, d, vector, compressor).

    Vectors are drawn from ``N(0, I_d)`` with ``default_rng(seed)``; each
    (target, d, vector, compressor) cell gets its own Philox stream.
    """
    model = model or CostModel()
    vec_rng = np.random.default_rng(seed)
    zs = {d: [vec_rng.standard_normal(d) for _ in range(vectors)] for d in dims}
    rows = []
    for ti, db in enumerate(targets_db):
        for d in dims:
            for vi, z in enumerate(zs[d]):
                for ki, spec in enumerate(specs_for_target(db, kinds)):
                    rng = np.random.Generator(np.random.Philox(key=[seed, ti], counter=[0, d, vi, ki]))
                    st = compressors.estimate_stats(spec, z, trials, rng, model)
                    zscore = st.coordinate_z
                    rows.append({
                        "snr_target_db": float(db), "d": d, "vector": vi, "compressor": str(spec),
                        "kind": spec.kind, "bias_norm": st.bias_norm, "max_bias_z": float(np.max(zscore)),
                        "empirical_snr": st.empirical_snr, "empirical_snr_db": st.snr_db,
                        "analytic_noise_power": compressors.noise_power(spec, z),
                        "mean_paper_cost_bits": st.mean_paper_cost_bits,
                        "coordinate_z": zscore,
                    })
    return rows


def run_compare(cfg: ExperimentConfig) -> CompareOutcome:
    s = "compare"
    try:
        dims = tuple(int(x) for x in _words(cfg.get(s, "dims", "20 50")))
        targets = tuple(float(x) for x in _words(cfg.get(s, "snr_db", "0 3")))
        kinds = tuple(_words(cfg.get(s, "compressors", "sparsifier ternary hybrid")))
        vectors = cfg.typed(s, "vectors", int, 20)
        rows = compare_compressors(dims, vectors, cfg.trials, targets, kinds, cfg.seed, cost_model_from(cfg))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{cfg.path}: [compare] {exc}") from None
    path = cfg.out_dir / "compare.csv"
    write_csv(path, COMPARE_COLUMNS, ([r[c] for c in COMPARE_COLUMNS] for r in rows))
    summary = []
    for db in targets:
        for d in dims:
            sel = [r for r in rows if r["snr_target_db"] == db and r["d"] == d]
            for kind in kinds:
                ks = [r for r in sel if r["kind"] == kind]
                summary.append((db, d, kind, float(np.mean([r["mean_paper_cost_bits"] for r in ks])),
                                float(np.min([r["empirical_snr"] for r in ks])),
                                float(np.max([r["max_bias_z"] for r in ks]))))
    spath = cfg.out_dir / "compare_summary.csv"
    write_csv(spath, ("snr_target_db", "d", "compressor", "mean_paper_cost_bits", "min_empirical_snr",
                      "max_bias_z"), summary)
    return CompareOutcome(rows, [path, spath])


def compare_report(outcome: CompareOutcome) -> str:
    lines = []
    keys = sorted({(r["snr_target_db"], r["d"]) for r in outcome.rows})
    for db, d in keys:
        sel = [r for r in outcome.rows if r["snr_target_db"] == db and r["d"] == d]
        parts = []
        for kind in sorted({r["kind"] for r in sel}):
            ks = [r for r in sel if r["kind"] == kind]
            parts.append(f"{kind}: cost {np.mean([r['mean_paper_cost_bits'] for r in ks]):.1f} bits, "
                         f"min SNR {min(r['empirical_snr'] for r in ks):.3g}")
        lines.append(f"{db:g} dB, d = {d}: " + "; ".join(parts))
    return "\n".join(lines)


# ----------------------------------------------------------------- real data

def run_real_data(cfg: ExperimentConfig) -> SweepOutcome:
    """Logistic regression with the non-convex regulariser on each listed topology.

    ``[dataset]`` gives ``path`` (and optional ``checksum``, ``features``,
    ``standardize``, ``rho``, ``nodes``); ``[topologies]`` maps a name to a
    matrix description; ``[sweep]`` lists compressors and the schedule.
    """
    s = "dataset"
    path = cfg.resolve_path(cfg.get(s, "path", required=True))
    try:
        ds = objectives.load_csv_dataset(
            path, cfg.typed(s, "features", int, 57), standardize_features=cfg.typed(s, "standardize", _bool, True),
            expected_checksum=cfg.get(s, "checksum"),
        )
    except objectives.DatasetError as exc:
        raise ConfigError(str(exc)) from None
    N = cfg.typed(s, "nodes", int, 10)
    rho = cfg.typed(s, "rho", float, 0.1)
    obj = objectives.make_logistic_global(ds, N, rho, cfg.typed(s, "partition_seed", int, cfg.seed))
    obj = _with_reference(cfg, obj)
    if not cfg.parser.has_section("topologies"):
        raise ConfigError(f"{cfg.path}: missing [topologies] section")
    try:
        specs = _spec_list(cfg.get("sweep", "compressors", required=True))
        schedule = schedule_from_text(cfg.get("sweep", "schedule", "constant:0.1"))
        tops = {name: matrix_from_text(text, cfg.path.parent) for name, text in cfg.parser.items("topologies")
                if name not in cfg.parser.defaults()}
    except (ValueError, graph.MatrixValidationError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{cfg.path}: {exc}") from None
    for name, W in tops.items():
        if W.n != N:
            raise ConfigError(f"{cfg.path}: [topologies] {name} has {W.n} nodes, dataset split into {N}")
    model = cost_model_from(cfg)
    accounting = _accounting(cfg)
    required_specs = compressors.parse_spec_list(cfg.get("sweep", "require_convergence", ""))
    outcome = SweepOutcome(required=[config_id(s, f"{name}__") for name in tops for s in required_specs])
    for name, W in tops.items():
        rep = graph.spectral(W)
        outcome.notes.append(f"{name}: lambda_2 = {rep.lambda2:.4f}, lambda_N = {rep.lambdaN:.4f}, "
                             f"beta = {rep.beta:.4f}, eta_min = {graph.eta_min_for(rep.lambdaN):.4f}")
        for spec in specs:
            ok, msg = engine.check_feasibility(
                RunConfig(W, obj, spec, schedule, 1, allow_infeasible=True), rep)
            if not ok:
                outcome.notes.append(f"{name}/{spec}: infeasible: {msg}")
        outcome.results.update(_run_sweep(cfg, W, obj, specs, schedule, model, prefix=f"{name}__",
                                          accounting=accounting))
    _write_sweep(cfg, outcome)
    # cost-indexed view: one row per (config, trial, iteration) keyed by cumulative bits
    rows = []
    for cid, r in outcome.results.items():
        mean_gap = r.aggregate()["gap"][0]
        bits = r.aggregate()["cum_bits"][0]
        rows.extend((cid, b, g) for b, g in zip(bits, mean_gap))
    path = cfg.out_dir / "cost_indexed.csv"
    write_csv(path, ("config_id", "cum_bits_mean", "gap_mean"), rows)
    outcome.files.append(path)
    return outcome


def bits_to_reach(result: engine.RunResult, level: float) -> float:
    """Mean cumulative bits at the first iteration whose trial-mean gap is <= ``level`` (inf if never)."""
    agg = result.aggregate()
    hit = np.flatnonzero(agg["gap"][0] <= level)
    return float(agg["cum_bits"][0][hit[0]]) if hit.size else math.inf


# ------------------------------------------------------------------ analysis

def analyze_matrix(W_raw, topology=None, L: float = 1.0) -> dict:
    """Validation, spectrum and thresholds of a candidate consensus matrix.

    Raises :class:`~dcdgd.graph.MatrixValidationError` for invalid input.
    """
    W = graph.load_matrix(W_raw, topology)
    rep = graph.spectral(W)
    th = graph.thresholds(rep, L)
    etas = [th.eta_min * 1.1, 1.0, 2.0, 4.0]
    return {"matrix": W, "report": rep, "thresholds": th, "alpha_table": th.table(etas)}


def format_analysis(info: dict) -> str:
    rep, th = info["report"], info["thresholds"]
    lines = [
        f"valid consensus matrix: n = {info['matrix'].n}, {len(info['matrix'].topology.edges)} edges",
        f"eigenvalues: {' '.join(f'{v:.6f}' for v in rep.eigenvalues)}",
        f"lambda_2 = {rep.lambda2:.6f}",
        f"lambda_N = {rep.lambdaN:.6f}",
        f"beta = {rep.beta:.6f}" + ("  (degenerate: uniform averaging)" if rep.degenerate else ""),
        f"eigen residual = {rep.eigen_tolerance:.3e} after {rep.sweeps} Jacobi sweeps",
        f"eta_min = {th.eta_min:.6f} ({compressors.snr_to_db(th.eta_min):.3f} dB)",
        f"sparsifier p_min = {th.p_min:.6f}",
        f"alpha_max (L = {th.L:g}):",
    ]
    for eta, a in info["alpha_table"]:
        flag = "" if a > 0 else "  (infeasible)"
        lines.append(f"  eta = {eta:10.6f}  alpha_max = {a: .6f}{flag}")
    return "\n".join(lines)
