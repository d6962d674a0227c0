"""Model size and feature-map memory in bits.

Model size counts weights only (biases, BN and quantizer parameters are not
included), each at its declared bit width. Feature-map memory counts every
layer's output elements at the code width of the Quant that closes the layer's
substructure, or at the declared float width when no Quant closes it.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import convert as C
from . import model as M
from .divide import divide_substructures

FLOAT_BITS = 32
MBIT = 1e6


@dataclass
class LayerMemory:
    index: int
    name: str
    kind: str
    weight_count: int = 0
    weight_width: int = 0
    out_elements: int = 0
    act_width: int = 0
    excluded: bool = False

    @property
    def weight_bits(self) -> int:
        return 0 if self.excluded else self.weight_count * self.weight_width

    @property
    def feature_bits(self) -> int:
        return self.out_elements * self.act_width


@dataclass
class MemoryReport:
    rows: list[LayerMemory] = field(default_factory=list)

    @property
    def total_model_bits(self) -> int:
        return sum(r.weight_bits for r in self.rows)

    @property
    def peak_feature_bits(self) -> int:
        return max((r.feature_bits for r in self.rows), default=0)

    @property
    def peak_layer(self) -> int | None:
        if not self.rows:
            return None
        return max(self.rows, key=lambda r: r.feature_bits).index

    @property
    def bit_widths(self) -> dict[str, int]:
        return {r.name: r.weight_width for r in self.rows if r.weight_count}

    def to_text(self) -> str:
        head = ("idx", "layer", "kind", "params", "w_bits", "model_bits", "out_elems", "a_bits", "fmap_bits")
        body = []
        for r in self.rows:
            wb = "excl" if r.excluded else str(r.weight_bits)
            body.append((str(r.index), r.name, r.kind, str(r.weight_count), str(r.weight_width), wb,
                         str(r.out_elements), str(r.act_width), str(r.feature_bits)))
        widths = [max(len(h), *(len(row[i]) for row in body)) if body else len(h) for i, h in enumerate(head)]
        lines = ["  ".join(c.rjust(w) if i != 1 and i != 2 else c.ljust(w) for i, (c, w) in
                           enumerate(zip(row, widths))).rstrip() for row in [head, *body]]
        lines.append(f"total model bits: {self.total_model_bits} ({self.total_model_bits / MBIT:.2f} Mbits)")
        if self.peak_layer is not None:
            name = next(r.name for r in self.rows if r.index == self.peak_layer)
            lines.append(f"peak feature-map bits: {self.peak_feature_bits} "
                         f"({self.peak_feature_bits / MBIT:.2f} Mbits) at layer {self.peak_layer} ({name})")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "name", "kind", "weight_count", "weight_width", "weight_bits",
                    "out_elements", "act_width", "feature_bits", "excluded"])
        for r in self.rows:
            w.writerow([r.index, r.name, r.kind, r.weight_count, r.weight_width, r.weight_bits,
                        r.out_elements, r.act_width, r.feature_bits, int(r.excluded)])
        return buf.getvalue()


def signed_width(values) -> int:
    """Bits of a two's-complement integer holding every entry."""
    v = np.asarray(values)
    if v.size == 0:
        return 0
    hi = int(v.max())
    lo = int(v.min())
    return max(hi.bit_length(), (-lo - 1).bit_length() if lo < 0 else 0) + 1


def _weights_of(layer) -> tuple[int, int]:
    if isinstance(layer, M.BINARY_LINEAR):
        return int(np.asarray(layer.weights_sign).size), 1
    if isinstance(layer, (M.Conv, M.FC)):
        return int(np.asarray(layer.weight).size), int(layer.weight_bits)
    return 0, 0


def _last_fc(kinds: list[tuple[int, bool]]) -> int | None:
    """Index of the final linear layer when it is fully connected."""
    if kinds and kinds[-1][1]:
        return kinds[-1][0]
    return None


def _net_rows(net: M.NetworkDef, exclude_last_fc: bool) -> list[LayerMemory]:
    M.ensure_valid(net)
    rows = []
    for i, layer in enumerate(net.layers):
        count, width = _weights_of(layer)
        rows.append(LayerMemory(i, layer.name, M.layer_kind(layer), count, width))
    if exclude_last_fc:
        last = _last_fc([(i, isinstance(l, (M.FC, M.QFC))) for i, l in enumerate(net.layers)
                         if isinstance(l, M.LINEAR)])
        if last is not None:
            rows[last].excluded = True
    return rows


def _cn_rows(cn: C.ConvertedNetwork, exclude_last_fc: bool) -> list[LayerMemory]:
    rows = []
    linear = []
    for op in cn.ops():
        if isinstance(op, C.BinaryConvOp):
            count, width = int(op.signs.size), 1
        elif isinstance(op, C.IntLinearOp):
            count, width = int(op.weight_fixed.size), signed_width(op.weight_fixed)
        else:
            continue
        linear.append((len(rows), op.fc))
        rows.append(LayerMemory(op.layer, f"layer{op.layer}", type(op).__name__, count, width))
    if exclude_last_fc:
        last = _last_fc(linear)
        if last is not None:
            rows[last].excluded = True
    return rows


def model_size_bits(model, exclude_last_fc: bool = False) -> MemoryReport:
    """Weight bits per layer for a NetworkDef or a ConvertedNetwork.

    For a converted network the width of an integer weight tensor is the
    signed width its values actually need.
    """
    if isinstance(model, C.ConvertedNetwork):
        return MemoryReport(_cn_rows(model, exclude_last_fc))
    return MemoryReport(_net_rows(model, exclude_last_fc))


def activation_widths(net: M.NetworkDef) -> list[int]:
    """Code width of the Quant closing each layer's substructure, else FLOAT_BITS."""
    widths = [FLOAT_BITS] * len(net.layers)
    for sub in divide_substructures(net):
        pending: list[int] = []
        for i in sub.span:
            layer = net.layers[i]
            if isinstance(layer, M.Quant):
                for j in pending + [i]:
                    widths[j] = layer.k
                pending = []
            else:
                pending.append(i)
    return widths


def peak_feature_bits(net: M.NetworkDef) -> MemoryReport:
    M.ensure_valid(net)
    shapes = M.infer_shapes(net)
    widths = activation_widths(net)
    rows = []
    for i, layer in enumerate(net.layers):
        rows.append(LayerMemory(i, layer.name, M.layer_kind(layer),
                                out_elements=int(np.prod(shapes[i])), act_width=widths[i]))
    return MemoryReport(rows)


def memory_report(net: M.NetworkDef, exclude_last_fc: bool = False) -> MemoryReport:
    """Weights and feature maps combined, one row per layer."""
    weights = _net_rows(net, exclude_last_fc)
    features = peak_feature_bits(net).rows
    for w, f in zip(weights, features):
        w.out_elements, w.act_width = f.out_elements, f.act_width
    return MemoryReport(weights)
