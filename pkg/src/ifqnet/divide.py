"""Partition a layer chain into quantized and non-quantized substructures."""

from __future__ import annotations

from dataclasses import dataclass

from . import model as M

QUANTIZED = "quantized"
NON_QUANTIZED = "non_quantized"

_ROLES = {
    "QConv": "conv", "Conv": "conv", "QFC": "fc", "FC": "fc",
    "BN": "bn", "MaxPool": "pool", "Quant": "quant", "ReLU": "relu",
}


@dataclass(frozen=True)
class Substructure:
    kind: str
    first: int
    last: int
    layer_roles: tuple[str, ...]

    @property
    def span(self) -> range:
        return range(self.first, self.last + 1)

    @property
    def quantized(self) -> bool:
        return self.kind == QUANTIZED


def role(layer) -> str:
    return _ROLES[type(layer).__name__]


def _match_quantized(layers, i: int) -> int | None:
    """Index of the closing Quant if a quantized span starts at ``i``."""
    if not isinstance(layers[i], M.BINARY_LINEAR):
        return None
    j = i + 1
    if j < len(layers) and isinstance(layers[j], M.MaxPool):
        j += 1
    if j < len(layers) and isinstance(layers[j], M.BN):
        j += 1
    if j < len(layers) and isinstance(layers[j], M.Quant):
        return j
    return None


def divide_substructures(net: M.NetworkDef) -> list[Substructure]:
    """Greedy left-to-right scan.

    A quantized substructure is ``binary conv, [pool], [BN], quant``. Every
    maximal run of layers outside such spans forms one non-quantized
    substructure.
    """
    layers = net.layers
    subs: list[Substructure] = []
    pending: int | None = None

    def flush(end):
        nonlocal pending
        if pending is not None:
            subs.append(Substructure(
                NON_QUANTIZED, pending, end,
                tuple(role(layers[k]) for k in range(pending, end + 1))))
            pending = None

    i = 0
    while i < len(layers):
        end = _match_quantized(layers, i)
        if end is None:
            if pending is None:
                pending = i
            i += 1
            continue
        flush(i - 1)
        subs.append(Substructure(QUANTIZED, i, end,
                                 tuple(role(layers[k]) for k in range(i, end + 1))))
        i = end + 1
    flush(len(layers) - 1)
    return subs


def partition_table(net: M.NetworkDef, subs: list[Substructure] | None = None) -> list[tuple]:
    """Rows of (layer index, layer name, role, substructure id, kind); ids are 1-based."""
    subs = divide_substructures(net) if subs is None else subs
    rows = []
    for sid, sub in enumerate(subs, start=1):
        for idx in sub.span:
            layer = net.layers[idx]
            rows.append((idx, layer.name, role(layer), sid, sub.kind))
    return rows


def format_partition(rows) -> str:
    header = ("layer", "name", "role", "sub", "kind")
    table = [header] + [tuple(str(v) for v in r) for r in rows]
    widths = [max(len(r[c]) for r in table) for c in range(len(header))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in table)
