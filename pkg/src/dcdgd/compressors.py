"""Unbiased stochastic compressors with an SNR floor.

Every compressor here keeps coordinate ``j`` with probability ``pi_j`` and
emits a fixed value ``v_j`` when kept (zero otherwise), with
``pi_j * v_j = z_j``.  That single keep-or-drop structure covers:

* identity    -- ``pi = 1``, ``v = z``;
* sparsifier  -- ``pi = p``, ``v = z / p``; noise ``(1/p - 1) ||z||^2``;
* ternary     -- ``pi = |z_j| / ||z||_inf``, ``v = sign(z_j) ||z||_inf``;
* hybrid      -- ternary within groups anchored at a large element, the
  sparsifier on the remainder; groups are chosen by a greedy bit-cost
  planner so that every element's noise stays below ``z_j**2 / C``.

Draws consume exactly ``d`` uniforms per message (none for identity) in
coordinate order, so a batch of ``n`` draws equals ``n`` sequential
:func:`compress` calls on the same generator.
"""
from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, replace

import numpy as np

from . import bitcodec
from ._backend import kernels
from .bitcodec import DEFAULT_COST_MODEL, CostModel

KINDS = ("identity", "sparsifier", "ternary", "hybrid")
BRUTE_FORCE_MAX_DIM = 12


@dataclass(frozen=True)
class CompressorSpec:
    """Compressor configuration.

    Use the constructors :meth:`identity`, :meth:`sparsifier`,
    :meth:`ternary`, :meth:`hybrid` or :meth:`parse`.
    """

    kind: str
    p: float | None = None
    C: float | None = None
    margin: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown compressor kind {self.kind!r}")
        if self.kind == "sparsifier":
            if self.p is None or not 0.0 < self.p <= 1.0:
                raise ValueError(f"sparsifier needs 0 < p <= 1, got p={self.p}")
        if self.kind == "hybrid":
            if self.C is None or not self.C > 0:
                raise ValueError(f"hybrid needs C > 0, got C={self.C}")
            if self.margin < 0:
                raise ValueError("hybrid margin must be >= 0")
            if self.p is not None:
                floor = self.C / (self.C + 1.0)
                if not floor <= self.p <= 1.0:
                    raise ValueError(f"hybrid p={self.p} must lie in [C/(C+1), 1] = [{floor:.6g}, 1]")

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def sparsifier(cls, p: float):
        return cls("sparsifier", p=float(p))

    @classmethod
    def ternary(cls):
        return cls("ternary")

    @classmethod
    def hybrid(cls, C: float, p: float | None = None, margin: float = 0.0):
        return cls("hybrid", p=None if p is None else float(p), C=float(C), margin=float(margin))

    @classmethod
    def parse(cls, text: str) -> "CompressorSpec":
        """Parse ``identity``, ``sparsifier:p=0.8``, ``ternary``, ``hybrid:C=2[,p=..]``.

        ``dgd`` is accepted as an alias of ``identity``.
        """
        text = text.strip()
        kind, _, rest = text.partition(":")
        kind = kind.strip().lower()
        if kind == "dgd":
            kind = "identity"
        params = {}
        if rest.strip():
            for item in rest.split(","):
                key, eq, val = item.partition("=")
                if not eq:
                    raise ValueError(f"bad compressor parameter {item!r} in {text!r}")
                try:
                    params[key.strip()] = float(val)
                except ValueError:
                    raise ValueError(f"bad number {val!r} in {text!r}") from None
        allowed = {"identity": set(), "ternary": set(), "sparsifier": {"p"}, "hybrid": {"C", "p", "margin"}}
        if kind not in allowed:
            raise ValueError(f"unknown compressor {kind!r} in {text!r}")
        extra = set(params) - allowed[kind]
        if extra:
            raise ValueError(f"{kind} does not take {sorted(extra)} (in {text!r})")
        if kind == "sparsifier":
            if "p" not in params:
                raise ValueError(f"sparsifier needs p (in {text!r})")
            return cls.sparsifier(params["p"])
        if kind == "hybrid":
            if "C" not in params:
                raise ValueError(f"hybrid needs C (in {text!r})")
            return cls.hybrid(params["C"], params.get("p"), params.get("margin", 0.0))
        return cls(kind)

    def __str__(self) -> str:
        if self.kind == "sparsifier":
            return f"sparsifier:p={self.p:g}"
        if self.kind == "hybrid":
            out = f"hybrid:C={self.C:g}"
            if self.p is not None:
                out += f",p={self.p:g}"
            if self.margin:
                out += f",margin={self.margin:g}"
            return out
        return self.kind

    @property
    def hybrid_p(self) -> float:
        """Residue keep probability: explicit ``p`` or ``C/(C+1) + margin`` (capped at 1)."""
        if self.p is not None:
            return self.p
        return min(1.0, self.C / (self.C + 1.0) + self.margin)

    @property
    def eta(self) -> float | None:
        """Guaranteed SNR floor, ``inf`` for exact, ``None`` when none exists (ternary)."""
        if self.kind == "identity":
            return math.inf
        if self.kind == "sparsifier":
            return math.inf if self.p == 1.0 else self.p / (1.0 - self.p)
        if self.kind == "hybrid":
            return self.C
        return None


@dataclass(frozen=True, eq=False)
class HybridPlan:
    """Group assignment for one input vector.

    Index arrays refer to original coordinates; ``anchor_ranks`` are the
    anchors' positions in the descending-magnitude order ``order``.
    """

    dim: int
    C: float
    p: float
    order: np.ndarray
    anchors: tuple
    anchor_ranks: tuple
    groups: tuple
    sparsified: np.ndarray
    group_of: np.ndarray
    objective_bits: float
    checksum: str
    ops: int = 0
    candidate_groups: int = 0

    @property
    def k(self) -> int:
        return len(self.anchors)

    @property
    def sizes(self) -> tuple:
        return tuple(len(g) for g in self.groups)

    @property
    def grouped(self) -> int:
        return int(sum(self.sizes))


@dataclass(frozen=True, eq=False)
class CompressedMessage:
    scheme: str
    dim: int
    decoded: np.ndarray
    paper_cost_bits: int
    wire_cost_bits: int
    p: float | None = None
    scale: float | None = None
    group_of: np.ndarray | None = None
    anchor_index: np.ndarray | None = None
    anchor_scale: np.ndarray | None = None
    plan: HybridPlan | None = None

    def noise(self, z) -> np.ndarray:
        return self.decoded - np.asarray(z, dtype=float)

    def with_paper_cost(self, model: CostModel = DEFAULT_COST_MODEL) -> "CompressedMessage":
        return replace(self, paper_cost_bits=bitcodec.paper_cost(self, model))


@dataclass(frozen=True)
class CompressorStats:
    bias_norm: float
    empirical_snr: float
    mean_paper_cost_bits: float
    trials: int
    mean_noise_power: float
    coordinate_bias: np.ndarray
    coordinate_se: np.ndarray  # analytic per-coordinate standard error of the mean

    @property
    def coordinate_z(self) -> np.ndarray:
        """``|bias_j| / se_j`` per coordinate."""
        return np.abs(self.coordinate_bias) / self.coordinate_se

    @property
    def snr_db(self) -> float:
        return 10.0 * math.log10(self.empirical_snr) if self.empirical_snr > 0 else -math.inf


# ---------------------------------------------------------------- validation

def _as_vector(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {z.shape}")
    if z.shape[0] == 0:
        raise ValueError("cannot compress an empty vector")
    if not np.all(np.isfinite(z)):
        raise ValueError("cannot compress a vector with non-finite entries")
    return z


def _round(values: np.ndarray, float_bits: int | None) -> np.ndarray:
    if float_bits is None or float_bits == 64:
        return values
    if float_bits == 32:
        return values.astype(np.float32).astype(np.float64)
    raise ValueError("float_bits must be None, 32 or 64")


def ternary_noise_power(z) -> float:
    """Analytic ``E||C(z) - z||^2`` of the ternary operator."""
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0:
        raise ValueError("empty vector")
    a = np.abs(z)
    return float(np.sum(a * (a.max() - a)))


def noise_power(spec: CompressorSpec, z, plan: HybridPlan | None = None) -> float:
    """Analytic expected noise power of ``spec`` on ``z``."""
    z = _as_vector(z)
    plan = _resolve_plan(spec, z, DEFAULT_COST_MODEL, plan)
    prob, value = _keep_law(spec, z, plan)
    return float(np.sum(_coordinate_variance(prob, value)))


def _coordinate_variance(prob, value):
    # Var of Bernoulli(prob) * value
    return prob * (1.0 - prob) * value * value


# ---------------------------------------------------------------- hybrid plan

def _checksum(z: np.ndarray) -> str:
    return hashlib.blake2b(np.abs(z).tobytes(), digest_size=12).hexdigest()


def _sort_ops(d: int) -> int:
    return d * max(1, math.ceil(math.log2(d))) if d > 1 else 1


def hybrid_plan(z, C: float, model: CostModel = DEFAULT_COST_MODEL, p: float | None = None,
                margin: float = 0.0, trim: bool = True) -> HybridPlan:
    """Greedy group selection for the hybrid compressor.

    Sort by descending magnitude, then repeatedly take the largest admissible
    ternary window (see ``greedy_groups`` in the kernels) while its ternary
    cost ``c1 + c0t (s - 1)`` beats sparsifying the same ``s`` elements.
    Remaining elements are sparsified with ``p = C/(C+1)`` (plus ``margin``).

    The stopping rule ignores the group-tag bits that every symbol pays once
    ``k > 0``.  With ``trim`` (default) the accepted groups are cut back to
    the prefix with the smallest hybrid objective, which can only lower the
    cost and guarantees the plan never costs more than pure sparsification.
    """
    z = _as_vector(z)
    if not C > 0:
        raise ValueError(f"C must be positive, got {C}")
    d = z.shape[0]
    if p is None:
        p = min(1.0, C / (C + 1.0) + margin)
    mags = np.abs(z)
    order = np.argsort(-mags, kind="stable")
    sorted_mags = mags[order]
    nonzero = int(np.count_nonzero(sorted_mags))
    group_sorted, anchor_pos, ops = kernels.greedy_groups(
        sorted_mags[:nonzero], float(C), float(model.c1), float(model.c0t), model.sparsifier_unit(p)
    )
    ops += _sort_ops(d)
    candidates = len(anchor_pos)
    keep = candidates
    if trim and candidates:
        sizes = np.bincount(group_sorted, minlength=candidates + 1)[1:]
        cum = np.concatenate([[0], np.cumsum(sizes)])
        costs = [bitcodec.hybrid_objective(d, kk, int(cum[kk]), p, model) for kk in range(candidates + 1)]
        keep = int(np.argmin(costs))
    group_of = np.zeros(d, dtype=np.int64)
    gs = group_sorted.copy()
    gs[gs > keep] = 0
    group_of[order[:nonzero]] = gs
    anchor_ranks = tuple(int(a) for a in anchor_pos[:keep])
    anchors = tuple(int(order[a]) for a in anchor_ranks)
    groups = tuple(order[:nonzero][gs == g] for g in range(1, keep + 1))
    sparsified = np.flatnonzero(group_of == 0)
    grouped = int(sum(len(g) for g in groups))
    return HybridPlan(
        dim=d, C=float(C), p=float(p), order=order, anchors=anchors, anchor_ranks=anchor_ranks,
        groups=groups, sparsified=sparsified, group_of=group_of,
        objective_bits=bitcodec.hybrid_objective(d, keep, grouped, p, model),
        checksum=_checksum(z), ops=int(ops), candidate_groups=candidates,
    )


def membership_ok(member: float, anchor: float, C: float) -> bool:
    """Group admission test ``|z_j| (|z_q| - |z_j|) < z_j**2 / C`` with ``|z_j| <= |z_q|``."""
    a, b = abs(member), abs(anchor)
    # divided through by |z_j| > 0 so squares of tiny values cannot underflow
    return 0.0 < a <= b and (b - a) * C < a


def brute_force_plan(z, C: float, model: CostModel = DEFAULT_COST_MODEL, p: float | None = None,
                     margin: float = 0.0) -> HybridPlan:
    """Exhaustive minimiser of the hybrid objective (oracle for small ``d``).

    Enumerates every assignment of nonzero elements to groups in which each
    group's first (largest) element is its anchor and every other member
    passes :func:`membership_ok` against that anchor, plus a sparsified
    remainder.  Exponential in ``d``; refused above ``d = 12``.
    """
    z = _as_vector(z)
    d = z.shape[0]
    if d > BRUTE_FORCE_MAX_DIM:
        raise ValueError(f"brute_force_plan is exponential; d = {d} > {BRUTE_FORCE_MAX_DIM}. Use hybrid_plan.")
    if not C > 0:
        raise ValueError(f"C must be positive, got {C}")
    if p is None:
        p = min(1.0, C / (C + 1.0) + margin)
    mags = np.abs(z)
    order = np.argsort(-mags, kind="stable")
    vals = [float(mags[i]) for i in order if mags[i] > 0]
    m = len(vals)
    best = [math.inf, None]
    assign = [0] * m
    anchors: list[int] = []

    def visit(i, grouped):
        if i == m:
            cost = bitcodec.hybrid_objective(d, len(anchors), grouped, p, model)
            if cost < best[0]:
                best[0] = cost
                best[1] = (list(assign), list(anchors))
            return
        a = vals[i]
        assign[i] = 0
        visit(i + 1, grouped)
        for g, q in enumerate(anchors, start=1):
            if membership_ok(a, vals[q], C):
                assign[i] = g
                visit(i + 1, grouped + 1)
        anchors.append(i)
        assign[i] = len(anchors)
        visit(i + 1, grouped + 1)
        anchors.pop()
        assign[i] = 0

    visit(0, 0)
    sorted_assign, anchor_pos = best[1]
    k = len(anchor_pos)
    group_of = np.zeros(d, dtype=np.int64)
    group_of[order[:m]] = sorted_assign
    groups = tuple(order[:m][np.asarray(sorted_assign, dtype=np.int64) == g] for g in range(1, k + 1))
    return HybridPlan(
        dim=d, C=float(C), p=float(p), order=order,
        anchors=tuple(int(order[a]) for a in anchor_pos), anchor_ranks=tuple(anchor_pos),
        groups=groups, sparsified=np.flatnonzero(group_of == 0), group_of=group_of,
        objective_bits=best[0], checksum=_checksum(z), candidate_groups=k,
    )


def check_plan(plan: HybridPlan, z) -> list[str]:
    """Structural problems with ``plan`` for ``z`` (empty when consistent)."""
    z = np.asarray(z, dtype=float)
    problems = []
    seen = np.zeros(plan.dim, dtype=int)
    for g, members in enumerate(plan.groups, start=1):
        seen[members] += 1
        q = plan.anchors[g - 1]
        if q not in set(members.tolist()):
            problems.append(f"anchor {q} not in its group {g}")
        for j in members.tolist():
            if j != q and not membership_ok(z[j], z[q], plan.C):
                problems.append(f"member {j} of group {g} fails admission against anchor {q}")
            if abs(z[j]) > abs(z[q]):
                problems.append(f"member {j} of group {g} exceeds its anchor")
    seen[plan.sparsified] += 1
    if np.any(seen != 1):
        problems.append("groups and residue do not partition the coordinates")
    return problems


# ---------------------------------------------------------------- drawing

def _keep_law(spec: CompressorSpec, z: np.ndarray, plan: HybridPlan | None, float_bits: int | None = None):
    """Per-coordinate keep probability and emitted value."""
    if spec.kind == "identity":
        return np.ones_like(z), z.copy()
    if spec.kind == "sparsifier":
        return np.full_like(z, spec.p), _round(z / spec.p, float_bits)
    if spec.kind == "ternary":
        a = np.abs(z)
        top = a.max()
        if top == 0.0:
            return np.zeros_like(z), np.zeros_like(z)
        scale = _round(np.array([top]), float_bits)[0]
        return a / top, np.sign(z) * scale
    prob = np.full_like(z, plan.p)
    value = _round(z / plan.p, float_bits)
    for q, members in zip(plan.anchors, plan.groups):
        top = abs(z[q])
        scale = _round(np.array([top]), float_bits)[0]
        prob[members] = np.abs(z[members]) / top
        value[members] = np.sign(z[members]) * scale
    return prob, value


def _draw(prob, value, u) -> np.ndarray:
    # "+ 0.0" normalises -0.0 so the wire round trip is bit exact
    return np.where(u < prob, value, 0.0) + 0.0


def _resolve_plan(spec, z, model, plan):
    if spec.kind != "hybrid":
        return None
    if plan is None:
        return hybrid_plan(z, spec.C, model, p=spec.hybrid_p)
    if plan.dim != z.shape[0] or plan.checksum != _checksum(z):
        raise ValueError("hybrid plan was computed for a different vector")
    return plan


def _message(spec, z, decoded, model, plan, prob, value) -> CompressedMessage:
    d = z.shape[0]
    kw = {}
    if spec.kind == "sparsifier":
        kw["p"] = spec.p
    elif spec.kind == "ternary":
        kw["scale"] = float(np.max(np.abs(value))) if d else 0.0
    elif spec.kind == "hybrid":
        kw.update(
            p=plan.p,
            group_of=plan.group_of,
            anchor_index=np.asarray(plan.anchors, dtype=np.int64),
            anchor_scale=np.array([abs(value[q]) for q in plan.anchors]),
            plan=plan,
        )
    msg = CompressedMessage(scheme=spec.kind, dim=d, decoded=decoded, paper_cost_bits=0, wire_cost_bits=0, **kw)
    k = plan.k if plan is not None else 0
    return replace(
        msg,
        paper_cost_bits=bitcodec.paper_cost(msg, model),
        wire_cost_bits=bitcodec.wire_bits(spec.kind, decoded, model, plan.group_of if plan else None, k),
    )


def compress(spec: CompressorSpec, z, rng: np.random.Generator, model: CostModel = DEFAULT_COST_MODEL,
             float_bits: int | None = None, plan: HybridPlan | None = None) -> CompressedMessage:
    """Draw one compressed message ``C(z)``.

    Parameters
    ----------
    spec : CompressorSpec
    z : array_like, shape (d,)
        Finite, nonempty.
    rng : numpy.random.Generator
        Consumed: ``d`` uniforms (none for identity).
    model : CostModel
        Prices for ``paper_cost_bits`` and the float width of ``wire_cost_bits``.
    float_bits : {None, 32, 64}
        Round transmitted floats to this width so the message is exactly
        encodable at ``model.c1 = float_bits``.  ``None`` keeps full float64
        values (exactly unbiased).
    plan : HybridPlan, optional
        Precomputed plan for ``z`` (hybrid only); verified by checksum.
    """
    z = _as_vector(z)
    plan = _resolve_plan(spec, z, model, plan)
    prob, value = _keep_law(spec, z, plan, float_bits)
    if spec.kind == "identity":
        decoded = _round(z, float_bits) + 0.0
    else:
        decoded = _draw(prob, value, rng.random(z.shape[0]))
    return _message(spec, z, decoded, model, plan, prob, value)


def hybrid_compress(plan: HybridPlan, z, rng: np.random.Generator, model: CostModel = DEFAULT_COST_MODEL,
                    float_bits: int | None = None) -> CompressedMessage:
    """Compress ``z`` with an existing hybrid plan."""
    spec = CompressorSpec.hybrid(plan.C, p=plan.p)
    return compress(spec, z, rng, model=model, float_bits=float_bits, plan=plan)


def sample(spec: CompressorSpec, z, rng: np.random.Generator, size: int, model: CostModel = DEFAULT_COST_MODEL,
           plan: HybridPlan | None = None, float_bits: int | None = None):
    """``size`` independent draws at once.

    Returns
    -------
    decoded : ndarray, shape (size, d)
    paper_cost : ndarray, shape (size,)
        Realised model cost of each draw.
    """
    z = _as_vector(z)
    d = z.shape[0]
    plan = _resolve_plan(spec, z, model, plan)
    prob, value = _keep_law(spec, z, plan, float_bits)
    if spec.kind == "identity":
        decoded = np.broadcast_to(_round(z, float_bits) + 0.0, (size, d)).copy()
    else:
        decoded = _draw(prob, value, rng.random((size, d)))
    nz = decoded != 0
    if spec.kind == "identity":
        cost = np.full(size, d * model.c1, dtype=np.int64)
    elif spec.kind == "sparsifier":
        nnz = nz.sum(axis=1)
        cost = nnz * model.c1 + (d - nnz) * model.c0
    elif spec.kind == "ternary":
        cost = np.full(size, bitcodec.ternary_cost(d, model), dtype=np.int64)
    else:
        residue = plan.group_of == 0
        nnz_res = nz[:, residue].sum(axis=1)
        zeros_res = int(residue.sum()) - nnz_res
        tag = bitcodec.anchor_tag_bits(plan.k)
        cost = (model.c1 * (plan.k + nnz_res) + (model.c0t + tag) * (plan.grouped - plan.k)
                + (model.residue_zero_bits + tag) * zeros_res)
    return decoded, np.asarray(cost)


def estimate_stats(spec: CompressorSpec, z, trials: int, rng: np.random.Generator,
                   model: CostModel = DEFAULT_COST_MODEL) -> CompressorStats:
    """Monte-Carlo bias, SNR and mean model cost over ``trials`` draws.

    The SNR is ``||z||^2`` over the mean of ``||C(z) - z||^2`` and is
    ``inf`` when no noise was observed.
    """
    if trials < 2:
        raise ValueError("need at least 2 trials")
    z = _as_vector(z)
    plan = _resolve_plan(spec, z, model, None)
    decoded, cost = sample(spec, z, rng, trials, model, plan=plan)
    noise = decoded - z
    mean_noise = float(np.mean(np.sum(noise * noise, axis=1)))
    bias = decoded.mean(axis=0) - z
    prob, value = _keep_law(spec, z, plan)
    # deterministic coordinates have zero variance; floor the error at
    # summation roundoff so their z-scores stay finite
    se = np.maximum(np.sqrt(_coordinate_variance(prob, value) / trials), 1e-12 * np.maximum(np.abs(z), 1e-300))
    signal = float(z @ z)
    snr = math.inf if mean_noise == 0.0 else signal / mean_noise
    return CompressorStats(
        bias_norm=float(np.linalg.norm(bias)),
        empirical_snr=snr,
        mean_paper_cost_bits=float(np.mean(cost)),
        trials=trials,
        mean_noise_power=mean_noise,
        coordinate_bias=bias,
        coordinate_se=se,
    )


def db_to_snr(db: float) -> float:
    """Linear SNR for a dB target.

    Values within 0.25% of an integer snap to it, following the usual
    engineering shorthand that 3 dB means a factor of 2.
    """
    eta = 10.0 ** (db / 10.0)
    nearest = round(eta)
    if nearest > 0 and abs(eta - nearest) <= 0.0025 * nearest:
        return float(nearest)
    return eta


def snr_to_db(eta: float) -> float:
    return 10.0 * math.log10(eta) if eta > 0 else -math.inf


_SPEC_SPLIT = re.compile(r"[\s;]+")


def parse_spec_list(text: str) -> list[CompressorSpec]:
    """Whitespace- or semicolon-separated list of compressor specs."""
    return [CompressorSpec.parse(tok) for tok in _SPEC_SPLIT.split(text.strip()) if tok]
