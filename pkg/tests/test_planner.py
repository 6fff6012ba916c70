import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dcdgd import bitcodec, compressors
from dcdgd.bitcodec import CostModel

DEFAULT = bitcodec.DEFAULT_COST_MODEL


def sparsifier_objective(d, p, model=DEFAULT):
    return bitcodec.hybrid_objective(d, 0, 0, p, model)


def admission_exact(member, anchor, C):
    # group admission rule in exact rational arithmetic
    from fractions import Fraction
    a, b, c = Fraction(abs(member)), Fraction(abs(anchor)), Fraction(C)
    return a <= b and a * (b - a) < a * a / c


def assert_valid(plan, z):
    assert compressors.check_plan(plan, z) == []
    for q, members in zip(plan.anchors, plan.groups):
        assert q in members.tolist()
        for j in members.tolist():
            if j != q:
                assert admission_exact(z[j], z[q], plan.C)


# ---------------------------------------------------------------- examples

def test_equal_magnitudes_form_one_group():
    z = np.array([1.5, -1.5, 1.5, 1.5, -1.5, 1.5])
    plan = compressors.hybrid_plan(z, 2.0)
    assert plan.k == 1 and plan.grouped == 6
    assert_valid(plan, z)


def test_huge_C_gives_no_groups():
    z = np.random.default_rng(0).standard_normal(30)
    plan = compressors.hybrid_plan(z, 1e6)
    assert plan.k == 0
    assert plan.objective_bits == pytest.approx(sparsifier_objective(30, plan.p))


def test_all_zero_vector_is_fully_sparsified():
    plan = compressors.hybrid_plan(np.zeros(7), 2.0)
    assert plan.k == 0 and plan.sparsified.tolist() == list(range(7))


def test_zeros_never_grouped():
    z = np.array([2.0, 0.0, 2.0, 0.0, 2.0])
    plan = compressors.hybrid_plan(z, 1.0)
    assert set(plan.sparsified.tolist()) >= {1, 3}


def test_brute_force_single_element():
    C = 2.0
    p = C / (C + 1)
    plan = compressors.brute_force_plan([3.0], C)
    # one ternary group costs one float; sparsifying costs 32 p + 2 (1 - p)
    assert plan.objective_bits == pytest.approx(min(32.0, 32 * p + 2 * (1 - p)))


def test_brute_force_equal_pair():
    C = 2.0
    p = C / (C + 1)
    plan = compressors.brute_force_plan([1.0, -1.0], C)
    grouped = 32 + (2 + 1)
    sparse = 2 * (32 * p + 2 * (1 - p))
    assert grouped < sparse
    assert plan.k == 1 and plan.grouped == 2
    assert plan.objective_bits == pytest.approx(grouped)


def test_brute_force_refuses_large_d():
    with pytest.raises(ValueError, match="hybrid_plan"):
        compressors.brute_force_plan(np.ones(13), 2.0)


def test_brute_force_below_greedy_on_random_d6():
    for seed in range(100):
        z = np.random.default_rng(seed).standard_normal(6)
        for C in (1.0, 2.0):
            bf = compressors.brute_force_plan(z, C)
            gr = compressors.hybrid_plan(z, C)
            assert bf.objective_bits <= gr.objective_bits + 1e-9
            assert_valid(bf, z)


def test_objective_matches_plan_contents():
    z = np.random.default_rng(3).standard_normal(40)
    plan = compressors.hybrid_plan(z, 2.0)
    assert plan.objective_bits == bitcodec.paper_cost(plan)
    assert plan.objective_bits == pytest.approx(
        bitcodec.hybrid_objective(40, plan.k, plan.grouped, plan.p)
    )


def test_plan_indices_refer_to_original_order():
    z = np.array([0.1, -5.0, 0.2, 5.0, 4.9])
    plan = compressors.hybrid_plan(z, 2.0)
    assert plan.order.tolist()[:2] == [1, 3]
    for q, members in zip(plan.anchors, plan.groups):
        assert abs(z[q]) == max(abs(z[members]))


def test_margin_raises_p():
    z = np.random.default_rng(4).standard_normal(20)
    assert compressors.hybrid_plan(z, 2.0, margin=0.1).p == pytest.approx(2 / 3 + 0.1)


def test_rejects_nonpositive_C():
    with pytest.raises(ValueError):
        compressors.hybrid_plan([1.0], 0.0)


# ---------------------------------------------------------------- properties

vectors = arrays(
    np.float64, st.integers(1, 8),
    elements=st.one_of(
        st.floats(-10, 10, allow_nan=False, allow_subnormal=False),
        st.sampled_from([1.0, -1.0, 2.0, 0.0]),
    ),
)
Cs = st.sampled_from([0.5, 1.0, 2.0, 5.0, 10.0])
models = st.sampled_from([DEFAULT, CostModel(hybrid_zero_bits=1), CostModel(c1=64, c0t=3)])


@settings(max_examples=150, deadline=None)
@given(vectors, Cs, models)
def test_oracle_greedy_sparsifier_ordering(z, C, model):
    gr = compressors.hybrid_plan(z, C, model)
    bf = compressors.brute_force_plan(z, C, model)
    assert bf.objective_bits <= gr.objective_bits + 1e-9
    assert gr.objective_bits <= sparsifier_objective(len(z), gr.p, model) + 1e-9
    assert_valid(gr, z)
    assert_valid(bf, z)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 300), elements=st.floats(-1e6, 1e6, allow_nan=False)), Cs)
def test_greedy_dominance_large(z, C):
    plan = compressors.hybrid_plan(z, C)
    assert plan.objective_bits <= sparsifier_objective(len(z), plan.p) + 1e-6
    assert_valid(plan, z)


# ---------------------------------------------------------------- running time

def _worst_ops(d, C=2.0):
    # geometric magnitudes keep every window short, so many groups are tried
    ops = []
    for seed in range(3):
        z = np.random.default_rng(seed).standard_normal(d)
        ops.append(compressors.hybrid_plan(z, C).ops)
    ops.append(compressors.hybrid_plan(np.ones(d), C).ops)
    ops.append(compressors.hybrid_plan(1.1 ** -np.arange(d), C).ops)
    return max(ops)


def test_operation_count_fits_quadratic_bound():
    def model(d):
        return d * d + d * math.log2(d)

    # fit the constant on small sizes, then check the larger ones
    c = max(_worst_ops(d) / model(d) for d in (10, 20, 40))
    for d in (100, 1000):
        assert _worst_ops(d) <= c * model(d)
