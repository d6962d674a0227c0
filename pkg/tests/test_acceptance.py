"""Acceptance criteria, one test each. Every test prints a single
``criterion N: PASS|FAIL - detail`` line, also echoed in the pytest summary.

Run alone with ``python tests/test_acceptance.py`` or
``pytest tests/test_acceptance.py -s``.
"""

from __future__ import annotations

import sys
import time

import numpy as np
import pytest

import conftest
from ifqnet import accounting, container, convert as C, model as M, testkit, zoo
from ifqnet.divide import divide_substructures
from ifqnet.engine_fixed import PackedBinaryWeights, binary_dot, eval_quantized_sub_fixed
from ifqnet.engine_float import eval_quantized_sub_float


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_1_losslessness():
    start = time.perf_counter()
    iso = e2e = compared = fo = 0
    ks, pooled, depths = set(), set(), set()
    for seed in range(1000):
        net = testkit.gen_random_network(seed)
        subs = divide_substructures(net)
        depths.add(len(subs))
        for layer in net.layers:
            if isinstance(layer, M.Quant):
                ks.add(layer.k)
        pooled.add(any(isinstance(l, M.MaxPool) for l in net.layers))
        rep = testkit.check_equivalence(net, 10, C.INTEGRATED, seed=seed)
        iso += rep.isolated_diffs
        e2e += rep.end_to_end_diffs
        compared += rep.codes_compared
        fo += rep.float_oracle_diffs
    elapsed = time.perf_counter() - start
    covered = ks == {1, 2, 3, 4} and pooled == {False, True} and depths == set(range(1, 7))
    ok = iso == 0 and e2e == 0 and covered and elapsed < 120
    report(1, ok, f"1000 nets x 10 inputs, {compared} codes, isolated diffs {iso}, end-to-end diffs {e2e}, "
                  f"float-vs-oracle diffs {fo}, k {sorted(ks)}, depths {sorted(depths)}, {elapsed:.1f}s")


def test_criterion_2_separated_degradation():
    seeds = range(10000, 10100)
    rates = {m: testkit.suite_mismatch_rate(seeds, m) for m in (8, 10, 12, 14, 15, 16)}
    ordered = rates[8] > rates[10] > rates[12]
    small = all(rates[m] < 1e-3 for m in (14, 15, 16))
    detail = ", ".join(f"m={m}: {r:.5f}" for m, r in rates.items())
    report(2, ordered and small, f"mean mismatch over 100 nets: {detail}")


def test_criterion_3_binary_dot():
    rng = np.random.default_rng(2024)
    bad = 0
    for _ in range(100_000):
        n, k = int(rng.integers(1, 200)), int(rng.integers(1, 9))
        w = rng.choice([-1, 1], n)
        x = rng.integers(0, 1 << k, n)
        bad += binary_dot(PackedBinaryWeights.from_signs(w), x, k) != int(w @ x)
    report(3, bad == 0, f"100000 pairs, {bad} mismatches")


def test_criterion_4_pool_commutation():
    spec = testkit.GenSpec(depth=(1, 1), pool_prob=1.0, fc_prob=0.0)
    rng = np.random.default_rng(4)
    diffs = compared = pooled = 0
    seed = 0
    while pooled < 500:
        net = testkit.gen_random_network(seed, spec)
        seed += 1
        params = C.quantized_params(net, divide_substructures(net)[0])
        # tiny feature maps leave no room for a pool window
        if params.pool is None:
            continue
        pooled += 1
        csub = C.convert_network(net).subs[0]
        x = testkit.random_input(net, rng)
        want, _ = eval_quantized_sub_float(params, x, net.input_scale)
        got = eval_quantized_sub_fixed(csub, x)
        diffs += int(np.count_nonzero(got != want))
        compared += want.size
    report(4, diffs == 0, f"500 pooled substructures (seeds 0..{seed - 1}), {compared} codes, {diffs} diffs")


def _random_channel(rng):
    def dy(lo, hi, bits=16):
        return int(rng.integers(int(lo * 2 ** bits), int(hi * 2 ** bits) + 1)) / 2 ** bits
    k = int(rng.integers(1, 5))
    conv = M.QConv("c", 1, 1, 1, 1, 1, 0, [dy(0.01, 2)], np.ones((1, 1, 1, 1)), [dy(-1, 1)], 2)
    bn = M.BN("b", [dy(-1, 1)], [dy(0.05, 2)])
    quant = M.Quant("q", k, dy(0.05, 1), dy(-1, 1), 1.0)
    return C.QuantizedParams(conv, None, bn, quant), dy(0.01, 1)


def test_criterion_5_compact_form():
    rng = np.random.default_rng(5)
    bad = none = 0
    for _ in range(1000):
        params, beta = _random_channel(rng)
        explicit = C.compose_thresholds(params, beta).thresholds
        f = C.sufficient_fraction_bits(params, beta)
        if f is None:
            none += 1
            continue
        b, o = C.compose_base_offset(params, beta, f)
        bad += not np.array_equal(C.reconstruct_thresholds(b, o, f, params.quant.levels), explicit)
    report(5, bad == 0, f"1000 channels, {bad} mismatches, {none} without a sufficient f in 0..30")


def test_criterion_6_accounting():
    k2 = zoo.alexnet_hwgq(2, n_calib=0)
    k4 = zoo.alexnet_hwgq(4, n_calib=0)
    total = accounting.model_size_bits(k2, exclude_last_fc=True).total_model_bits
    p2 = accounting.peak_feature_bits(k2).peak_feature_bits
    p4 = accounting.peak_feature_bits(k4).peak_feature_bits
    ok = (abs(total - 58.8e6) / 58.8e6 <= 0.01 and abs(p2 - 0.6e6) / 0.6e6 <= 0.10
          and abs(p4 - 1.1e6) / 1.1e6 <= 0.10)
    report(6, ok, f"model {total / 1e6:.2f} Mbits (ref 58.8), peak k=2 {p2 / 1e6:.3f} Mbits (ref 0.6), "
                  f"k=4 {p4 / 1e6:.3f} Mbits (ref 1.1)")


ALEXNET_DIVISION = [
    ("conv1", "pool1", "bn1", "quant1"),
    ("conv2", "pool2", "bn2", "quant2"),
    ("conv3", "bn3", "quant3"),
    ("conv4", "bn4", "quant4"),
    ("conv5", "pool5", "bn5", "quant5"),
    ("fc6", "bn6", "quant6"),
    ("fc7", "bn7", "relu7", "fc8"),
]


def test_criterion_7_division(alexnet):
    subs = divide_substructures(alexnet)
    names = [tuple(alexnet.layers[i].name for i in s.span) for s in subs]
    quantized = [i for i, s in enumerate(subs, start=1) if s.quantized]
    ok = len(subs) == 7 and quantized == [2, 3, 4, 5, 6] and names == ALEXNET_DIVISION
    report(7, ok, f"{len(subs)} substructures, quantized {quantized}, membership "
                  f"{'matches' if names == ALEXNET_DIVISION else 'differs'}")


def test_criterion_8_round_trip():
    bad = 0
    for seed in range(100):
        net = testkit.gen_random_network(seed)
        a = container.dumps_model(net)
        bad += container.dumps_model(container.loads_model(a)) != a
        mode = C.SEPARATED if seed % 3 == 2 else C.INTEGRATED
        cn = C.convert_network(net, mode, compact=seed % 3 == 1)
        b = container.dumps_converted(cn)
        bad += container.dumps_converted(container.loads_converted(b)) != b
    report(8, bad == 0, f"100 models, IFQN and IFQC, {bad} non-identical re-saves")


def test_criterion_9_task_accuracy():
    line = "criterion 9: SKIP - ImageNet/FDDB accuracy not reproducible at desk scale; covered by 1-2"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    pytest.skip("not reproducible at desk scale; covered by criteria 1-2")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
