import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dcdgd import bitcodec, compressors
from dcdgd.compressors import CompressorSpec


finite_vectors = arrays(
    np.float64, st.integers(1, 40),
    elements=st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False, allow_subnormal=False),
)
specs = st.sampled_from([
    CompressorSpec.identity(), CompressorSpec.sparsifier(0.3), CompressorSpec.sparsifier(0.8),
    CompressorSpec.ternary(), CompressorSpec.hybrid(1.0), CompressorSpec.hybrid(2.0), CompressorSpec.hybrid(4.0),
])


# ---------------------------------------------------------------- spec

@pytest.mark.parametrize("text", ["identity", "sparsifier:p=0.8", "ternary", "hybrid:C=2", "hybrid:C=2,p=0.9"])
def test_spec_text_round_trip(text):
    assert str(CompressorSpec.parse(text)) == text


def test_spec_dgd_alias_and_errors():
    assert CompressorSpec.parse("dgd") == CompressorSpec.identity()
    for bad in ["sparsifier", "sparsifier:p=0", "sparsifier:p=1.5", "hybrid:C=0", "hybrid:C=2,p=0.5",
                "topk:k=3", "ternary:p=0.5", "sparsifier:p=abc"]:
        with pytest.raises(ValueError):
            CompressorSpec.parse(bad)


def test_spec_eta():
    assert CompressorSpec.identity().eta == math.inf
    assert CompressorSpec.sparsifier(2 / 3).eta == pytest.approx(2.0)
    assert CompressorSpec.sparsifier(1.0).eta == math.inf
    assert CompressorSpec.hybrid(3.0).eta == 3.0
    assert CompressorSpec.ternary().eta is None
    assert CompressorSpec.hybrid(2.0).hybrid_p == pytest.approx(2 / 3)
    assert CompressorSpec.hybrid(2.0, margin=0.1).hybrid_p == pytest.approx(2 / 3 + 0.1)


def test_db_conversion():
    assert compressors.db_to_snr(0.0) == 1.0
    assert compressors.db_to_snr(3.0) == 2.0
    assert compressors.db_to_snr(5.0) == pytest.approx(10 ** 0.5)


# ---------------------------------------------------------------- compress

def test_rejects_bad_input(rng):
    for z in ([], [1.0, np.nan], [np.inf], [[1.0, 2.0]]):
        with pytest.raises(ValueError):
            compressors.compress(CompressorSpec.identity(), z, rng)


def test_identity_exact(rng):
    z = rng.standard_normal(17)
    m = compressors.compress(CompressorSpec.identity(), z, rng)
    np.testing.assert_array_equal(m.decoded, z)
    assert np.all(m.noise(z) == 0)


def test_sparsifier_p_one_exact(rng):
    z = rng.standard_normal(17)
    np.testing.assert_array_equal(compressors.compress(CompressorSpec.sparsifier(1.0), z, rng).decoded, z)


def test_ternary_equal_magnitudes_exact(rng):
    z = np.array([1.5, 1.5, -1.5])
    np.testing.assert_array_equal(compressors.compress(CompressorSpec.ternary(), z, rng).decoded, z)


def test_sparsifier_noise_power_closed_form():
    rng = np.random.default_rng(7)
    z = np.array([1.0, 2.0])
    decoded, _ = compressors.sample(CompressorSpec.sparsifier(0.5), z, rng, 100_000)
    power = np.sum((decoded - z) ** 2, axis=1)
    se = power.std(ddof=1) / math.sqrt(power.size)
    assert abs(power.mean() - 5.0) <= 3 * se


def test_ternary_noise_power_values():
    assert compressors.ternary_noise_power([2.0, 1.0]) == 1.0
    assert compressors.ternary_noise_power(np.zeros(4)) == 0.0
    assert compressors.ternary_noise_power([3.0] * 6) == 0.0
    with pytest.raises(ValueError):
        compressors.ternary_noise_power([])


def test_ternary_noise_power_monte_carlo():
    rng = np.random.default_rng(3)
    z = np.array([2.0, 1.0])
    decoded, _ = compressors.sample(CompressorSpec.ternary(), z, rng, 100_000)
    power = np.sum((decoded - z) ** 2, axis=1)
    se = power.std(ddof=1) / math.sqrt(power.size)
    assert abs(power.mean() - 1.0) <= 4 * se


def test_batched_sample_matches_sequential_compress():
    z = np.random.default_rng(0).standard_normal(30)
    for spec in [CompressorSpec.sparsifier(0.6), CompressorSpec.ternary(), CompressorSpec.hybrid(2.0)]:
        a = np.random.default_rng(5)
        b = np.random.default_rng(5)
        batch, cost = compressors.sample(spec, z, a, 20)
        for k in range(20):
            m = compressors.compress(spec, z, b)
            np.testing.assert_array_equal(batch[k], m.decoded)
            assert cost[k] == m.paper_cost_bits


def test_float_bits_32_rounds_transmitted_values(rng):
    z = rng.standard_normal(40)
    for spec in [CompressorSpec.sparsifier(0.7), CompressorSpec.ternary(), CompressorSpec.hybrid(2.0)]:
        m = compressors.compress(spec, z, rng, float_bits=32)
        assert np.array_equal(m.decoded.astype(np.float32).astype(np.float64), m.decoded)


@settings(max_examples=80, deadline=None)
@given(finite_vectors, specs, st.integers(0, 2**32 - 1))
def test_support_per_draw(z, spec, seed):
    m = compressors.compress(spec, z, np.random.default_rng(seed))
    out = m.decoded
    assert out.shape == z.shape
    if spec.kind == "identity":
        np.testing.assert_array_equal(out, z)
    elif spec.kind == "sparsifier":
        assert np.all((out == 0) | (out == z / spec.p))
    elif spec.kind == "ternary":
        top = np.max(np.abs(z))
        assert np.all((out == 0) | (np.abs(out) == top))
        assert np.all(out * z >= 0)
    else:
        plan = m.plan
        for q, members in zip(plan.anchors, plan.groups):
            assert out[q] == z[q]
            vals = out[members]
            assert np.all((vals == 0) | (np.abs(vals) == abs(z[q])))
        res = plan.sparsified
        assert np.all((out[res] == 0) | (out[res] == z[res] / plan.p))
    assert m.wire_cost_bits == bitcodec.wire_bits(spec.kind, out, bitcodec.DEFAULT_COST_MODEL,
                                                  m.group_of, 0 if m.plan is None else m.plan.k)


# ---------------------------------------------------------------- hybrid

def test_hybrid_plan_k0_reduces_to_sparsifier():
    z = np.array([1.0, -2.0, 3.0, -4.0, 5.5, 7.0, -11.0, 13.0])
    plan = compressors.hybrid_plan(z, 1e6)
    assert plan.k == 0
    a = compressors.hybrid_compress(plan, z, np.random.default_rng(1))
    b = compressors.compress(CompressorSpec.sparsifier(plan.p), z, np.random.default_rng(1))
    np.testing.assert_array_equal(a.decoded, b.decoded)


def test_hybrid_anchor_decoded_exactly(rng):
    z = rng.standard_normal(50)
    plan = compressors.hybrid_plan(z, 2.0)
    assert plan.k > 0
    for seed in range(20):
        m = compressors.hybrid_compress(plan, z, np.random.default_rng(seed))
        for q in plan.anchors:
            assert m.decoded[q] == z[q]


def test_hybrid_plan_mismatch_rejected(rng):
    z = rng.standard_normal(10)
    plan = compressors.hybrid_plan(z, 2.0)
    with pytest.raises(ValueError, match="different vector"):
        compressors.hybrid_compress(plan, z * 1.5, rng)


def test_hybrid_empirical_snr_at_3db():
    z = np.random.default_rng(11).standard_normal(50)
    st_ = compressors.estimate_stats(CompressorSpec.hybrid(2.0), z, 100, np.random.default_rng(12))
    assert st_.empirical_snr >= 2.0


def test_hybrid_analytic_noise_within_floor():
    for seed in range(30):
        z = np.random.default_rng(seed).standard_normal(40)
        for C in (0.5, 1.0, 2.0, 5.0):
            spec = CompressorSpec.hybrid(C)
            assert compressors.noise_power(spec, z) <= (z @ z) / C * (1 + 1e-12)


def test_estimate_stats_identity():
    z = np.arange(1.0, 6.0)
    st_ = compressors.estimate_stats(CompressorSpec.identity(), z, 10, np.random.default_rng(0))
    assert st_.bias_norm == 0.0
    assert st_.empirical_snr == math.inf
    with pytest.raises(ValueError):
        compressors.estimate_stats(CompressorSpec.identity(), z, 1, np.random.default_rng(0))


def test_estimate_stats_sparsifier_snr():
    z = np.random.default_rng(21).standard_normal(50)
    st_ = compressors.estimate_stats(CompressorSpec.sparsifier(2 / 3), z, 10_000, np.random.default_rng(22))
    assert 1.8 <= st_.empirical_snr <= 2.2


def test_hybrid_cost_saving_at_0db():
    z = np.random.default_rng(31).standard_normal(50)
    h = compressors.estimate_stats(CompressorSpec.hybrid(1.0), z, 200, np.random.default_rng(1))
    s = compressors.estimate_stats(CompressorSpec.sparsifier(0.5), z, 200, np.random.default_rng(2))
    assert h.mean_paper_cost_bits <= 0.6 * s.mean_paper_cost_bits


def test_parse_spec_list():
    got = compressors.parse_spec_list("identity  sparsifier:p=0.5; hybrid:C=2,p=0.8")
    assert [str(s) for s in got] == ["identity", "sparsifier:p=0.5", "hybrid:C=2,p=0.8"]
