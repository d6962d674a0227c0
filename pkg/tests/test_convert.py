from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ifqnet import convert as C, model as M, testkit
from ifqnet.divide import divide_substructures
from ifqnet.engine_fixed import run_fixed
from ifqnet.engine_float import run_float


def params(alpha=1.0, bias=0.0, theta=0.0, sigma=1.0, base=1.0, offset=-0.5, k=2, pool=False, bn=True):
    conv = M.QConv("c", 1, 1, 1, 1, 1, 0, [alpha], np.ones((1, 1, 1, 1)), [bias], 2)
    return C.QuantizedParams(conv, M.MaxPool("p", 2, 1) if pool else None,
                             M.BN("b", [theta], [sigma]) if bn else None,
                             M.Quant("q", k, base, offset, 1.0))


dyadic = st.integers(1, 1 << 20).map(lambda n: n / (1 << 16))
signed_dyadic = st.integers(-(1 << 20), 1 << 20).map(lambda n: n / (1 << 16))


def test_identity_composition():
    folded = C.compose_thresholds(params(base=1.0, offset=-0.5), 1.0)
    assert folded.thresholds.tolist() == [[0, 1, 2]]
    assert folded.k == 2 and not folded.compact


def test_hand_composition():
    # (0.8*3 + 1 - 0.25) / (0.5*2) = 3.15
    p = params(alpha=0.5, bias=0.25, theta=1.0, sigma=3.0, base=0.8, offset=0.0, k=1)
    assert C.compose_thresholds(p, 2.0).thresholds.tolist() == [[3]]


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_threshold_count(k):
    assert C.compose_thresholds(params(k=k), 1.0).thresholds.shape == (1, (1 << k) - 1)


def test_positivity_preconditions():
    with pytest.raises(C.ConversionError):
        C.compose_thresholds(params(), 0.0)
    p = params()
    p.conv.alpha = np.array([-1.0])
    with pytest.raises(C.ConversionError, match="alpha"):
        C.compose_thresholds(p, 1.0)


def test_threshold_overflow():
    with pytest.raises(C.FixedPointOverflow):
        C.compose_thresholds(params(alpha=2.0 ** -40, base=1.0), 1.0)


def test_base_offset_trivial():
    p = params(base=1.0, offset=0.0)
    b, o = C.compose_base_offset(p, 1.0, 0)
    assert (b.tolist(), o.tolist()) == ([1], [0])
    assert C.reconstruct_thresholds(b, o, 0, 3).tolist() == [[1, 2, 3]]


def test_compact_k4_two_integers_per_channel():
    p = params(alpha=0.75, sigma=1.5, theta=0.25, base=0.375, offset=-0.1875, k=4)
    folded = C.compose_compact(p, 0.5)
    assert folded is not None and folded.compact
    assert folded.base_fixed.shape == folded.offset_fixed.shape == (1,)
    rec = C.reconstruct_thresholds(folded.base_fixed, folded.offset_fixed, folded.frac_bits, 15)
    assert rec.shape == (1, 15)
    np.testing.assert_array_equal(rec, folded.thresholds)


def test_fraction_bits_range():
    with pytest.raises(ValueError):
        C.compose_base_offset(params(), 1.0, 31)


@pytest.mark.parametrize("x, m, want", [(0.001, 12, 4), (0.0, 7, 0), (-0.3, 3, -3), (2.5, 0, 2), (-2.5, 0, -3)])
def test_separated_scale(x, m, want):
    assert C.separated_scale(x, m) == want


def test_separated_scale_overflow():
    with pytest.raises(C.FixedPointOverflow):
        C.separated_scale(1.0, 62)
    with pytest.raises(C.FixedPointOverflow):
        C.scale_floor([1.0], 62)


@given(alpha=dyadic, beta=dyadic, sigma=dyadic, theta=signed_dyadic, bias=signed_dyadic,
       base=dyadic, offset=signed_dyadic, k=st.integers(1, 4))
def test_thresholds_match_rational_floor(alpha, beta, sigma, theta, bias, base, offset, k):
    p = params(alpha, bias, theta, sigma, base, offset, k)
    try:
        got = C.compose_thresholds(p, beta).thresholds[0]
    except C.FixedPointOverflow:
        return
    F = Fraction
    want = [math.floor(((i * F(base) + F(offset)) * F(sigma) + F(theta) - F(bias)) / (F(alpha) * F(beta)))
            for i in range(1, (1 << k))]
    assert got.tolist() == want
    assert np.all(np.diff(got) >= 0)


@given(s=st.integers(-(1 << 40), 1 << 40), num=st.integers(-(1 << 50), 1 << 50), den=st.integers(1, 1 << 30))
def test_integer_threshold_lemma(s, num, den):
    t = Fraction(num, den)
    assert (s <= t) == (s <= math.floor(t))
    assert (s > t) == (s > math.floor(t))


@given(alpha=dyadic, beta=dyadic, sigma=dyadic, theta=signed_dyadic, bias=signed_dyadic,
       base=dyadic, offset=signed_dyadic, k=st.integers(1, 4))
def test_compact_reconstruction_at_reported_f(alpha, beta, sigma, theta, bias, base, offset, k):
    p = params(alpha, bias, theta, sigma, base, offset, k)
    try:
        explicit = C.compose_thresholds(p, beta).thresholds
    except C.FixedPointOverflow:
        return
    f = C.sufficient_fraction_bits(p, beta)
    if f is None:
        return
    b, o = C.compose_base_offset(p, beta, f)
    np.testing.assert_array_equal(C.reconstruct_thresholds(b, o, f, p.quant.levels), explicit)


def test_alexnet_integrated_m_map(alexnet):
    cn = C.convert_network(alexnet, "integrated", {1: 9, 7: 14})
    assert [s.m for s in cn.subs] == [9, 0, 0, 0, 0, 0, 14]
    assert [s.mode for s in cn.subs[1:6]] == ["integrated"] * 5
    assert cn.output_descale == 2.0 ** -28
    for prev, nxt in zip(cn.subs, cn.subs[1:]):
        quant = alexnet.layers[prev.last]
        assert nxt.in_scale == quant.beta_out
    assert cn.scale_chain[0] == alexnet.input_scale


def test_default_m(alexnet):
    subs = divide_substructures(alexnet)
    assert C.resolve_m_map(subs, "integrated", None)[1] == 9
    assert C.resolve_m_map(subs, "integrated", None)[7] == 14
    assert set(C.resolve_m_map(subs, "separated", None).values()) == {12}
    assert set(C.resolve_m_map(subs, "separated", {"all": 8, 2: 10}).values()) == {8, 10}
    with pytest.raises(C.ConversionError, match="unknown substructure"):
        C.resolve_m_map(subs, "integrated", {9: 3})
    with pytest.raises(C.ConversionError, match="0..30"):
        C.resolve_m_map(subs, "integrated", {1: 31})


def test_single_quantized_sub_payload():
    net = testkit.gen_random_network(3, testkit.GenSpec(depth=(1, 1), pool_prob=1.0, fc_prob=0.0))
    cn = C.convert_network(net, "integrated")
    (sub,) = cn.subs
    kinds = [type(op).__name__ for op in sub.ops]
    assert kinds[0] == "BinaryConvOp" and kinds[-1] == "ThresholdOp"
    assert set(kinds) <= {"BinaryConvOp", "MaxPoolOp", "ThresholdOp"}
    assert sub.ops[0].alpha_fixed is None


def test_separated_payloads_floor_each_parameter():
    net = testkit.gen_random_network(21, testkit.GenSpec(depth=(2, 2), bn_prob=1.0, fc_prob=0.0))
    a = C.convert_network(net, "separated", {"all": 8})
    b = C.convert_network(net, "separated", {"all": 12})
    conv = net.layers[0]
    op8, op12 = a.subs[0].ops[0], b.subs[0].ops[0]
    np.testing.assert_array_equal(op8.alpha_fixed, np.floor(conv.alpha * 2 ** 8))
    np.testing.assert_array_equal(op12.bias_fixed, np.floor(conv.bias * 2 ** 24))
    assert op8.input_scale_fixed == math.floor(net.input_scale * 2 ** 8)
    assert not np.array_equal(op8.alpha_fixed, op12.alpha_fixed)
    bn = next(op for op in b.subs[0].ops if isinstance(op, C.IntBNOp))
    bn_layer = next(l for l in net.layers if isinstance(l, M.BN))
    np.testing.assert_array_equal(bn.sigma_fixed, np.floor(bn_layer.sigma * 2 ** 12))
    thr = next(op for op in b.subs[0].ops if isinstance(op, C.ThresholdOp))
    quant = net.layers[a.subs[0].last]
    np.testing.assert_array_equal(thr.folded.thresholds[0], np.floor(quant.thresholds() * 2 ** 24))


def test_descale_exact_without_nonquantized_subs():
    rng = np.random.default_rng(0)
    for seed in range(30):
        net = testkit.gen_random_network(seed)
        cn = C.convert_network(net, "integrated")
        x = testkit.random_input(net, rng)
        out, descale = run_fixed(cn, x)
        np.testing.assert_array_equal(out * descale, run_float(net, x))


def test_separated_error_non_increasing_in_m():
    nets = [testkit.gen_random_network(s) for s in range(500, 540)]
    rng = np.random.default_rng(3)
    inputs = [[testkit.random_input(n, rng) for _ in range(3)] for n in nets]
    refs = [[run_float(n, x) for x in xs] for n, xs in zip(nets, inputs)]
    totals = []
    for m in range(6, 17):
        total = 0.0
        for net, xs, ys in zip(nets, inputs, refs):
            cn = C.convert_network(net, "separated", {"all": m})
            for x, y in zip(xs, ys):
                out, d = run_fixed(cn, x)
                total += float(np.max(np.abs(out * d - y)))
        totals.append(total)
    assert all(b <= a for a, b in zip(totals, totals[1:])), totals
