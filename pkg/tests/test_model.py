from __future__ import annotations

import numpy as np
import pytest

from ifqnet import model as M


def qconv(name="c", cout=2, cin=1, k=3, act_bits=2, alpha=None, signs=None, pad=0, stride=1):
    alpha = np.ones(cout) if alpha is None else alpha
    signs = np.ones((cout, cin, k, k)) if signs is None else signs
    return M.QConv(name, cout, cin, k, k, stride, pad, alpha, signs, np.zeros(cout), act_bits)


def small_net(*layers, shape=(1, 5, 5), bits=2):
    return M.NetworkDef("t", shape, list(layers), input_bits=bits, input_scale=0.5)


def messages(net):
    return [str(v) for v in M.validate_model(net)]


def test_int_tensor_range():
    M.IntTensor(np.array([0, 3]), 2)
    with pytest.raises(ValueError, match="not representable"):
        M.IntTensor(np.array([4]), 2)
    with pytest.raises(ValueError):
        M.IntTensor(np.array([-1]), 2)
    M.IntTensor(np.array([-2, 1]), 2, signed=True)
    with pytest.raises(TypeError):
        M.IntTensor(np.array([0.5]), 4)


def test_float_tensor_rejects_nan():
    with pytest.raises(ValueError):
        M.FloatTensor(np.array([1.0, np.nan]))


def test_valid_substructure():
    net = small_net(qconv(), M.BN("b", [0, 0], [1, 1]), M.Quant("q", 2, 1.0, -0.5, 1.0))
    assert M.validate_model(net) == []
    assert M.infer_shapes(net) == [(2, 3, 3)] * 3


def test_negative_alpha_reported():
    net = small_net(qconv(alpha=[1.0, -2.0]), M.Quant("q", 2, 1.0, -0.5, 1.0))
    msgs = messages(net)
    assert any("alpha must be positive" in m and m.startswith("layer 0") for m in msgs)


def test_bad_sign_value():
    signs = np.ones((2, 1, 3, 3))
    signs[0, 0, 0, 0] = 0
    msgs = messages(small_net(qconv(signs=signs), M.Quant("q", 2, 1.0, -0.5, 1.0)))
    assert any("weights_sign not in {-1,+1}" in m for m in msgs)


@pytest.mark.parametrize("layer, needle", [
    (M.BN("b", [0, 0], [1, 0]), "sigma must be positive"),
    (M.Quant("q", 9, 1.0, 0.0, 1.0), "k: must be in 1..8"),
    (M.Quant("q", 2, -1.0, 0.0, 1.0), "base must be positive"),
    (M.Quant("q", 2, 1.0, 0.0, 0.0), "beta_out must be positive"),
])
def test_parameter_rules(layer, needle):
    net = small_net(qconv(), layer, M.Quant("q2", 2, 1.0, -0.5, 1.0))
    assert any(needle in m for m in messages(net))


def test_act_bits_must_match_codes():
    net = small_net(qconv(act_bits=3), M.Quant("q", 2, 1.0, -0.5, 1.0), bits=2)
    assert any("declared 3 bits" in m for m in messages(net))


def test_binary_layer_needs_codes():
    net = small_net(qconv(), qconv("c2", cin=2, k=1), M.Quant("q", 2, 1.0, -0.5, 1.0))
    assert any("must consume quantization codes" in m for m in messages(net))


def test_dangling_quant():
    net = small_net(qconv(), M.Quant("q", 2, 1.0, -0.5, 1.0), M.Quant("q2", 2, 1.0, -0.5, 1.0))
    assert any("without a preceding convolution" in m for m in messages(net))


def test_pool_after_bn_rejected():
    net = small_net(qconv(), M.BN("b", [0, 0], [1, 1]), M.MaxPool("p", 2, 1), M.Quant("q", 2, 1.0, -0.5, 1.0))
    assert any("max pool must sit between convolution and BN" in m for m in messages(net))


def test_shape_errors():
    net = small_net(qconv(k=7), M.Quant("q", 2, 1.0, -0.5, 1.0))
    assert any("layer does not fit input" in m for m in messages(net))
    net = small_net(qconv(cin=3), M.Quant("q", 2, 1.0, -0.5, 1.0))
    assert any("input channels" in m for m in messages(net))
    with pytest.raises(M.ModelError):
        M.ensure_valid(net)


def test_accumulator_bound():
    layer = M.QFC("f", 1, 1 << 24, [1.0], np.ones((1, 1 << 24), dtype=np.int8), [0.0], act_bits=8)
    msgs = [str(v) for v in M._layer_violations(0, layer)]
    assert any("accumulator bound" in m for m in msgs)


def test_alexnet_shapes(alexnet):
    assert M.validate_model(alexnet) == []
    shapes = dict(zip((l.name for l in alexnet.layers), M.infer_shapes(alexnet)))
    assert shapes["conv1"] == (96, 55, 55)
    assert shapes["pool1"] == (96, 27, 27)
    assert shapes["conv2"] == (256, 27, 27)
    assert shapes["pool5"] == (256, 6, 6)
    assert shapes["fc6"] == (4096, 1, 1)
    assert shapes["fc8"] == (1000, 1, 1)
