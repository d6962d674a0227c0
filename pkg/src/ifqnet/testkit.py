"""Random networks, an exact rational oracle and equivalence checks.

Generated parameters are dyadic rationals on a ``2**-16`` grid, so every value
is an exact float64 and the float engine computes ``alpha * beta * s + b - theta``
without rounding. Quantizer offsets are odd multiples of ``2**-17`` and BN
``sigma`` has an odd numerator, which places ``thr_i * sigma`` on a finer grid
than the convolution side (``2**-32``): the batch-norm output can never land
exactly on a threshold. Without BN the offset is an odd multiple of ``2**-33``
for the same reason.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import model as M
from . import convert as C
from . import engine_fixed, engine_float
from .divide import divide_substructures
from .layout import im2col, max_pool

Rational = Fraction

GRID = 16


@dataclass
class GenSpec:
    depth: tuple[int, int] = (1, 6)
    channels: tuple[int, int] = (1, 16)
    ks: tuple[int, ...] = (1, 2, 3, 4)
    spatial: tuple[int, int] = (4, 10)
    pool_prob: float = 0.5
    bn_prob: float = 0.9
    fc_prob: float = 0.2

    def check(self):
        if not (1 <= self.depth[0] <= self.depth[1]):
            raise ValueError("infeasible depth range")
        if not (1 <= self.channels[0] <= self.channels[1]):
            raise ValueError("infeasible channel range")
        if not self.ks or any(k not in (1, 2, 3, 4) for k in self.ks):
            raise ValueError("k must be drawn from 1..4")
        if not (1 <= self.spatial[0] <= self.spatial[1]):
            raise ValueError("infeasible spatial range")


def _dyadic(rng, lo: float, hi: float, size=None, bits: int = GRID):
    scale = 1 << bits
    return rng.integers(int(lo * scale), int(hi * scale) + 1, size=size) / scale


def _odd_dyadic(rng, lo: float, hi: float, size=None, bits: int = GRID):
    scale = 1 << bits
    n = rng.integers(int(lo * scale) // 2, int(hi * scale) // 2 + 1, size=size)
    return (2 * n + 1) / scale


def _snap(x, bits: int = GRID):
    return np.round(np.asarray(x, dtype=np.float64) * (1 << bits)) / (1 << bits)


def gen_random_network(seed: int, spec: GenSpec | None = None) -> M.NetworkDef:
    """A chain of quantized substructures, deterministic in ``seed``."""
    spec = spec or GenSpec()
    spec.check()
    rng = np.random.default_rng(seed)
    depth = int(rng.integers(spec.depth[0], spec.depth[1] + 1))
    k_in = int(rng.choice(spec.ks))
    c = int(rng.integers(spec.channels[0], spec.channels[1] + 1))
    h = w = int(rng.integers(spec.spatial[0], spec.spatial[1] + 1))
    input_shape = (c, h, w)
    beta = float(_dyadic(rng, 1 / 16, 2))
    input_scale = beta
    layers = []
    k_prev = k_in
    for d in range(depth):
        last = d == depth - 1
        out_c = int(rng.integers(spec.channels[0], spec.channels[1] + 1))
        use_fc = last and rng.random() < spec.fc_prob
        if use_fc:
            n_in = c * h * w
            conv = M.QFC(f"fc{d + 1}", out_c, n_in, alpha=np.ones(out_c),
                         weights_sign=np.ones((out_c, n_in)), bias=np.zeros(out_c), act_bits=k_prev)
            h = w = 1
        else:
            kh = int(rng.integers(1, min(3, h + 2) + 1))
            kw = int(rng.integers(1, min(3, w + 2) + 1))
            pad = int(rng.integers(0, 2)) if min(kh, kw) > 1 else 0
            stride = int(rng.integers(1, 3))
            ho = (h + 2 * pad - kh) // stride + 1
            wo = (w + 2 * pad - kw) // stride + 1
            if ho < 1 or wo < 1:
                stride, pad = 1, 0
                kh, kw = min(kh, h), min(kw, w)
                ho, wo = h - kh + 1, w - kw + 1
            conv = M.QConv(f"conv{d + 1}", out_c, c, kh, kw, stride, pad, alpha=np.ones(out_c),
                           weights_sign=np.ones((out_c, c, kh, kw)), bias=np.zeros(out_c), act_bits=k_prev)
            h, w = ho, wo
        signs = rng.choice(np.array([-1, 1], dtype=np.int8), size=conv.weights_sign.shape)
        conv.weights_sign = signs
        conv.alpha = _dyadic(rng, 1 / 16, 2, size=out_c)
        n = conv.fan_in
        sub_layers = [conv]

        pool = None
        if not use_fc and rng.random() < spec.pool_prob and min(h, w) >= 2:
            window = int(rng.integers(2, min(3, h, w) + 1))
            pstride = int(rng.integers(1, window + 1))
            pool = M.MaxPool(f"pool{d + 1}", window, pstride)
            sub_layers.append(pool)
            h = (h - window) // pstride + 1
            w = (w - window) // pstride + 1

        k = int(rng.choice(spec.ks))
        levels = (1 << k) - 1
        codes_max = (1 << k_prev) - 1
        mean_x = codes_max / 2
        std_x = math.sqrt(((codes_max + 1) ** 2 - 1) / 12)
        gain = conv.alpha * beta
        # centre each channel near its expected sum, spread thresholds over ~2.5 std
        centre = gain * signs.reshape(out_c, -1).sum(axis=1) * mean_x
        spread = gain * math.sqrt(n) * std_x
        if pool is not None:
            centre = centre + 0.5 * spread
        bias = _snap(rng.normal(0, 0.25, out_c) * spread)
        conv.bias = bias
        if rng.random() < spec.bn_prob:
            sigma = _odd_dyadic(rng, 0.5, 4, size=out_c)
            theta = _snap(centre + bias + rng.normal(0, 0.3, out_c) * spread)
            sub_layers.append(M.BN(f"bn{d + 1}", theta, sigma))
            unit = float(np.median(spread / sigma))
            offset_bits = GRID + 1
        else:
            # identity BN: thresholds live in conv units
            unit = float(np.median(spread))
            conv.bias = _snap(bias - centre)
            offset_bits = 2 * GRID + 1
        base = max(2.0 ** -GRID, float(_snap(5 * unit / (levels + 1))))
        off_centre = -base * (levels + 1) / 2
        offset = float(_odd_dyadic(rng, off_centre - base / 4, off_centre + base / 4, bits=offset_bits))
        beta_out = float(_dyadic(rng, 1 / 16, 2))
        sub_layers.append(M.Quant(f"quant{d + 1}", k, base, offset, beta_out))
        layers.extend(sub_layers)
        c = out_c
        beta = beta_out
        k_prev = k
    return M.NetworkDef(f"random-{seed}", input_shape, layers, input_bits=k_in, input_scale=input_scale)


def random_input(net: M.NetworkDef, rng) -> np.ndarray:
    return rng.integers(0, 1 << net.input_bits, size=net.input_shape, dtype=np.int64)


# -- exact oracle ----------------------------------------------------------

def naive_binary_sum(codes: np.ndarray, conv) -> np.ndarray:
    """Integer sum W_b (x) X_q with int64 arithmetic, no bit tricks."""
    w = np.asarray(conv.weights_sign, dtype=np.int64)
    w = w.reshape(w.shape[0], -1)
    if isinstance(conv, M.QFC) or getattr(conv, "fc", False):
        return (w @ codes.reshape(-1)).reshape(-1, 1, 1)
    patches, (ho, wo) = im2col(codes, conv.kernel_h, conv.kernel_w, conv.stride, conv.pad)
    return (w @ patches.T).reshape(-1, ho, wo)


def _int_array(values, bound: int):
    return np.array(values, dtype=np.int64 if bound < (1 << 62) else object)


def oracle_quantize_exact(params, x, beta_in) -> np.ndarray:
    """Codes of one quantized substructure in exact rational arithmetic.

    Evaluates ``(alpha beta s + b)`` -> max pool -> ``(. - theta) / sigma`` ->
    bin lookup against ``thr_i = i base + offset``. Parameters may be floats or
    Fractions. Code ``i`` means ``thr_i < y <= thr_{i+1}``.
    """
    x = np.asarray(x, dtype=np.int64)
    s = naive_binary_sum(x, params.conv)
    beta = Fraction(beta_in)
    alpha = [Fraction(a) for a in params.conv.alpha]
    bias = [Fraction(b) for b in params.conv.bias]
    theta = [Fraction(t) for t in params.theta]
    sigma = [Fraction(v) for v in params.sigma]
    base, offset = Fraction(params.quant.base), Fraction(params.quant.offset)
    levels = (1 << params.quant.k) - 1
    thr = [i * base + offset for i in range(1, levels + 1)]
    out = []
    s_max = int(np.abs(s).max()) if s.size else 0
    for ch in range(s.shape[0]):
        slope = alpha[ch] * beta
        # y > thr_i  <=>  slope*s + b > thr_i*sigma + theta   (sigma > 0)
        rhs = [t * sigma[ch] + theta[ch] for t in thr]
        den = math.lcm(slope.denominator, bias[ch].denominator, *(r.denominator for r in rhs))
        p = slope.numerator * (den // slope.denominator)
        q = bias[ch].numerator * (den // bias[ch].denominator)
        r = [v.numerator * (den // v.denominator) for v in rhs]
        bound = max(abs(p) * s_max + abs(q), *(abs(v) for v in r))
        z = _int_array(s[ch], bound) * p + q
        if params.pool is not None:
            z = max_pool(z[None], params.pool.window, params.pool.stride)[0]
        code = np.zeros(z.shape, dtype=np.int64)
        for rv in r:
            code += (z > rv).astype(np.int64)
        out.append(code)
    return np.stack(out)


@dataclass
class Reference:
    """Oracle codes per Quant layer and the input entering each substructure."""

    codes: dict
    sub_inputs: list
    sub_scales: list
    output: np.ndarray


def oracle_run(net: M.NetworkDef, x) -> Reference:
    """Exact codes for quantized substructures; other spans use the float engine."""
    subs = divide_substructures(net)
    arr = np.asarray(x, dtype=np.int64).reshape(net.input_shape)
    scale = net.input_scale
    codes, inputs, scales = {}, [], []
    for sub in subs:
        inputs.append(arr)
        scales.append(scale)
        if sub.quantized:
            params = C.quantized_params(net, sub)
            arr = oracle_quantize_exact(params, arr, scale)
            scale = params.quant.beta_out
            codes[sub.last] = arr
        else:
            trace = {}
            arr, scale = engine_float.forward_layers(
                [net.layers[i] for i in sub.span], arr, scale, start=sub.first, trace=trace)
            for i in sub.span:
                if isinstance(net.layers[i], M.Quant):
                    codes[i] = trace[i]
    output = arr.astype(np.float64) if scale is None else arr * scale
    return Reference(codes, inputs, scales, output)


# -- equivalence -----------------------------------------------------------

@dataclass
class EquivalenceReport:
    mode: str
    n_inputs: int
    isolated_diffs: int = 0
    end_to_end_diffs: int = 0
    codes_compared: int = 0
    max_code_diff: int = 0
    max_real_diff: float = 0.0
    float_oracle_diffs: int = 0
    per_layer: dict = field(default_factory=dict)

    @property
    def mismatch_rate(self) -> float:
        return self.end_to_end_diffs / self.codes_compared if self.codes_compared else 0.0

    @property
    def passed(self) -> bool:
        if self.mode == C.INTEGRATED:
            return self.isolated_diffs == 0
        return True

    def rows(self):
        return [(layer, d, n, d / n if n else 0.0) for layer, (d, n) in sorted(self.per_layer.items())]


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("IFQ_THREADS", "1")))
    except ValueError:
        return 1


def _compare_one(net, cn, x):
    ref = oracle_run(net, x)
    float_out, float_trace = engine_float.run_float(net, x, trace=True)
    fixed_out, descale, fixed_trace = engine_fixed.run_fixed(cn, x, trace=True)
    result = {"iso": 0, "e2e": {}, "maxdiff": 0, "fo": 0,
              "real": float(np.max(np.abs(fixed_out * descale - float_out))) if float_out.size else 0.0}
    for csub, sub_in in zip(cn.subs, ref.sub_inputs):
        if csub.kind != "quantized":
            continue
        got = engine_fixed.run_sub(csub, sub_in)
        result["iso"] += int(np.count_nonzero(got != ref.codes[csub.last]))
    for layer, want in ref.codes.items():
        got = fixed_trace[layer]
        diff = np.abs(got - want)
        result["e2e"][layer] = (int(np.count_nonzero(diff)), int(diff.size))
        result["maxdiff"] = max(result["maxdiff"], int(diff.max()) if diff.size else 0)
        result["fo"] += int(np.count_nonzero(float_trace[layer] != want))
    return result


def check_equivalence(net: M.NetworkDef, n_inputs: int, mode: str = C.INTEGRATED,
                      m_map: dict | None = None, seed: int = 0,
                      converted: C.ConvertedNetwork | None = None) -> EquivalenceReport:
    """Run oracle, float and fixed paths on ``n_inputs`` random inputs.

    Isolated diffs feed every quantized substructure the oracle's own input,
    which is what the lossless claim is about; end-to-end diffs let errors
    from lossy spans propagate.
    """
    cn = converted if converted is not None else C.convert_network(net, mode, m_map)
    report = EquivalenceReport(cn.mode, n_inputs)
    rng = np.random.default_rng(seed)
    inputs = [random_input(net, rng) for _ in range(n_inputs)]
    workers = _threads()
    if workers > 1 and n_inputs > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda x: _compare_one(net, cn, x), inputs))
    else:
        results = [_compare_one(net, cn, x) for x in inputs]
    for r in results:
        report.isolated_diffs += r["iso"]
        report.max_code_diff = max(report.max_code_diff, r["maxdiff"])
        report.max_real_diff = max(report.max_real_diff, r["real"])
        report.float_oracle_diffs += r["fo"]
        for layer, (d, n) in r["e2e"].items():
            pd, pn = report.per_layer.get(layer, (0, 0))
            report.per_layer[layer] = (pd + d, pn + n)
            report.end_to_end_diffs += d
            report.codes_compared += n
    return report


def write_property_csv(path, rows) -> None:
    """Property-run summary: one row per (seed, k, depth, max diff)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "k", "depth", "max_diff"])
        writer.writerows(rows)


def suite_mismatch_rate(seeds, m: int, n_inputs: int = 10, spec: GenSpec | None = None) -> float:
    """Mean over networks of the separated-mode end-to-end code mismatch rate."""
    rates = []
    for seed in seeds:
        net = gen_random_network(seed, spec)
        rep = check_equivalence(net, n_inputs, C.SEPARATED, {"all": m}, seed=seed)
        rates.append(rep.mismatch_rate)
    return float(np.mean(rates)) if rates else 0.0
