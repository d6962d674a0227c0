"""Reference architectures with synthetic parameters.

``alexnet_hwgq`` follows the layer chain of AlexNet-HWGQ (ungrouped convolutions,
full-precision conv1 and fc8, binary conv2..fc7). Batch-norm statistics are
calibrated on random images so that the quantizers see unit-variance inputs.
"""

from __future__ import annotations

import numpy as np

from . import model as M
from .engine_float import _step

# uniform quantizer step for a unit Gaussian half-wave, per bit width
HWGQ_STEP = {1: 0.7979, 2: 0.5380, 3: 0.3201, 4: 0.1881}

ALEXNET_INPUT = (3, 227, 227)


def hwgq_quant(name: str, k: int) -> M.Quant:
    step = HWGQ_STEP[k]
    return M.Quant(name, k, base=step, offset=-step / 2, beta_out=step)


def _calibrate_bn(name, y: np.ndarray) -> M.BN:
    # y: (N, C, H, W)
    theta = y.mean(axis=(0, 2, 3))
    sigma = y.std(axis=(0, 2, 3)) + 1e-3
    return M.BN(name, theta, sigma)


class _Builder:
    def __init__(self, input_shape, rng, calib: np.ndarray, input_scale: float):
        self.layers = []
        self.rng = rng
        self.acts = [(x, input_scale) for x in calib]
        self.shape = input_shape

    def add(self, layer):
        self.layers.append(layer)
        self.acts = [_step(layer, a, s) for a, s in self.acts]

    def add_bn(self, name):
        if not self.acts:
            last = next(l for l in reversed(self.layers) if isinstance(l, M.LINEAR))
            c = getattr(last, "out_channels", None) or last.out_features
            self.add(M.BN(name, np.zeros(c), np.ones(c)))
            return
        y = np.stack([a if s is None else a * s for a, s in self.acts])
        self.add(_calibrate_bn(name, y))

    def qconv(self, name, cin, cout, k, stride, pad, act_bits):
        w = self.rng.choice(np.array([-1, 1], dtype=np.int8), size=(cout, cin, k, k))
        n = cin * k * k
        alpha = np.sqrt(2.0 / n) * self.rng.uniform(0.6, 1.0, cout)
        bias = self.rng.normal(0, 0.01, cout)
        self.add(M.QConv(name, cout, cin, k, k, stride, pad, alpha, w, bias, act_bits))

    def qfc(self, name, nin, nout, act_bits):
        w = self.rng.choice(np.array([-1, 1], dtype=np.int8), size=(nout, nin))
        alpha = np.sqrt(2.0 / nin) * self.rng.uniform(0.6, 1.0, nout)
        bias = self.rng.normal(0, 0.01, nout)
        self.add(M.QFC(name, nout, nin, alpha, w, bias, act_bits))


def calibration_images(n: int, shape=ALEXNET_INPUT, seed: int = 1234) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(n,) + tuple(shape), dtype=np.int64)


def alexnet_hwgq(k: int = 2, seed: int = 0, n_calib: int = 16) -> M.NetworkDef:
    """AlexNet-HWGQ layer chain with random weights and calibrated BN.

    ``n_calib=0`` skips calibration (identity BN), enough for size accounting.
    """
    rng = np.random.default_rng(seed)
    input_scale = 2.0 ** -7
    b = _Builder(ALEXNET_INPUT, rng, calibration_images(n_calib), input_scale)

    # conv1 is a 9-bit layer: weights are signed 9-bit integers times 2^-9
    w1 = np.clip(np.rint(rng.normal(0, np.sqrt(2.0 / 363), (96, 3, 11, 11)) * 2 ** 9), -256, 255) / 2 ** 9
    b1 = np.rint(rng.normal(0, 0.01, 96) * 2 ** 18) / 2 ** 18
    b.add(M.Conv("conv1", 96, 3, 11, 11, 4, 0, w1, b1, weight_bits=9))
    b.add(M.MaxPool("pool1", 3, 2))
    b.add_bn("bn1")
    b.add(hwgq_quant("quant1", k))

    b.qconv("conv2", 96, 256, 5, 1, 2, k)
    b.add(M.MaxPool("pool2", 3, 2))
    b.add_bn("bn2")
    b.add(hwgq_quant("quant2", k))

    b.qconv("conv3", 256, 384, 3, 1, 1, k)
    b.add_bn("bn3")
    b.add(hwgq_quant("quant3", k))

    b.qconv("conv4", 384, 384, 3, 1, 1, k)
    b.add_bn("bn4")
    b.add(hwgq_quant("quant4", k))

    b.qconv("conv5", 384, 256, 3, 1, 1, k)
    b.add(M.MaxPool("pool5", 3, 2))
    b.add_bn("bn5")
    b.add(hwgq_quant("quant5", k))

    b.qfc("fc6", 256 * 6 * 6, 4096, k)
    b.add_bn("bn6")
    b.add(hwgq_quant("quant6", k))

    b.qfc("fc7", 4096, 4096, k)
    b.add_bn("bn7")
    b.add(M.ReLU("relu7"))
    w8 = rng.normal(0, np.sqrt(1.0 / 4096), (1000, 4096))
    b.add(M.FC("fc8", 1000, 4096, w8, rng.normal(0, 0.01, 1000), weight_bits=32))
    return M.NetworkDef(f"alexnet-hwgq-k{k}", ALEXNET_INPUT, b.layers, input_bits=8, input_scale=input_scale)


# conv widths of Tiny-YOLO (VOC cfg with a 30-channel face head), halved for Tinier-YOLO
TINY_YOLO_FILTERS = (16, 32, 64, 128, 256, 512, 1024, 1024)
FACE_HEAD = 30


def tinier_yolo(k: int = 2, seed: int = 0, input_size: int = 416) -> M.NetworkDef:
    """Tinier-YOLO face detector: half the filters, 1x1 conv8, all binary weights.

    Parameters are random and BN is not calibrated; the model is meant for
    size accounting, not inference quality.
    """
    rng = np.random.default_rng(seed)
    filters = [f // 2 for f in TINY_YOLO_FILTERS]
    layers = []
    cin, size, act_bits = 3, input_size, 8
    for i, cout in enumerate(filters, start=1):
        ksize = 1 if i == 8 else 3
        pad = ksize // 2
        w = rng.choice(np.array([-1, 1], dtype=np.int8), size=(cout, cin, ksize, ksize))
        layers.append(M.QConv(f"conv{i}", cout, cin, ksize, ksize, 1, pad,
                              np.full(cout, 0.05), w, np.zeros(cout), act_bits))
        if i <= 5:
            layers.append(M.MaxPool(f"pool{i}", 2, 2))
            size //= 2
        layers.append(M.BN(f"bn{i}", np.zeros(cout), np.ones(cout)))
        layers.append(hwgq_quant(f"quant{i}", k))
        cin, act_bits = cout, k
    w = rng.choice(np.array([-1, 1], dtype=np.int8), size=(FACE_HEAD, cin, 1, 1))
    layers.append(M.QConv("conv9", FACE_HEAD, cin, 1, 1, 1, 0, np.full(FACE_HEAD, 0.05), w,
                          np.zeros(FACE_HEAD), act_bits))
    return M.NetworkDef("tinier-yolo", (3, input_size, input_size), layers, input_bits=8, input_scale=1 / 256)
