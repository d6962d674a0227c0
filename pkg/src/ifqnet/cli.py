"""``ifq`` command line: inspect, divide, convert, run, verify, report, sweep.

Data goes to stdout, diagnostics to stderr. Exit codes: 0 success, 1 invalid
model or unreadable file, 2 conversion failure (overflow), 3 integrated
equivalence failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import accounting
from . import container
from . import convert as C
from . import model as M
from . import testkit, zoo
from .divide import divide_substructures, format_partition, partition_table
from .engine_fixed import run_fixed, run_sub
from .engine_float import run_float

log = logging.getLogger("ifq")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_OVERFLOW = 2
EXIT_MISMATCH = 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


def _table(header, rows) -> str:
    cells = [tuple(str(v) for v in header)] + [tuple(str(v) for v in r) for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in cells)


def _load_net(path) -> M.NetworkDef:
    path = Path(path)
    if not path.is_file():
        raise CliError(f"{path}: no such file")
    try:
        net = container.load_model(path, validate=False)
    except container.ContainerError as exc:
        raise CliError(f"{path}: {exc}") from exc
    problems = M.validate_model(net)
    if problems:
        for p in problems:
            log.error("%s: %s", path, p)
        raise CliError(f"{path}: invalid model ({len(problems)} violation(s))")
    return net


def _load_converted(path) -> C.ConvertedNetwork:
    path = Path(path)
    if not path.is_file():
        raise CliError(f"{path}: no such file")
    try:
        return container.load_converted(path)
    except container.ContainerError as exc:
        raise CliError(f"{path}: {exc}") from exc


def _load_any(path):
    path = Path(path)
    if not path.is_file():
        raise CliError(f"{path}: no such file")
    magic = container.sniff(path)
    if magic == container.IFQC_MAGIC:
        return _load_converted(path)
    return _load_net(path)


def parse_m(items) -> dict:
    """``SUBID=EXP`` or ``all=EXP`` pairs into an m map."""
    out: dict = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise CliError(f"--m expects SUBID=EXP, got {item!r}")
        try:
            exp = int(value)
            out["all" if key.strip() == "all" else int(key)] = exp
        except ValueError as exc:
            raise CliError(f"--m expects SUBID=EXP, got {item!r}") from exc
    return out


def _read_input(args, shape, bits):
    if args.input_array:
        path = Path(args.input_array)
        if not path.is_file():
            raise CliError(f"{path}: no such file")
        return np.load(path).astype(np.int64).reshape(shape)
    rng = np.random.default_rng(args.seed)
    return rng.integers(0, 1 << bits, size=shape, dtype=np.int64)


# -- commands ----------------------------------------------------------------

def cmd_inspect(args) -> int:
    model = _load_any(args.input)
    if isinstance(model, C.ConvertedNetwork):
        print(f"converted network: {model.name}")
        print(f"mode: {model.mode}")
        print(f"input: {'x'.join(map(str, model.input_shape))} @ {model.input_bits} bits, scale {model.input_scale!r}")
        print(f"output descale: {model.output_descale!r}")
        rows = C.summarize(model)
        print(_table(list(rows[0]), [r.values() for r in rows]) if rows else "(no substructures)")
        return EXIT_OK
    net = model
    shapes = M.infer_shapes(net)
    weights = accounting.model_size_bits(net)
    print(f"network: {net.name}")
    print(f"input: {'x'.join(map(str, net.input_shape))} @ {net.input_bits} bits, scale {net.input_scale!r}")
    rows = []
    for i, layer in enumerate(net.layers):
        r = weights.rows[i]
        rows.append((i, layer.name, M.layer_kind(layer), "x".join(map(str, shapes[i])),
                     r.weight_count, r.weight_width or "-"))
    print(_table(("idx", "name", "kind", "output", "params", "w_bits"), rows))
    print("valid: yes")
    return EXIT_OK


def cmd_divide(args) -> int:
    net = _load_net(args.input)
    print(format_partition(partition_table(net)))
    subs = divide_substructures(net)
    quantized = [i for i, s in enumerate(subs, start=1) if s.quantized]
    print(f"{len(subs)} substructures; quantized: {', '.join(map(str, quantized)) or 'none'}")
    return EXIT_OK


def cmd_convert(args) -> int:
    net = _load_net(args.input)
    m_map = parse_m(args.m)
    try:
        cn = C.convert_network(net, args.mode, m_map, compact=args.compact)
        container.save_converted(cn, args.out)
    except OverflowError as exc:
        raise CliError(f"conversion overflow: {exc}", EXIT_OVERFLOW) from exc
    except C.ConversionError as exc:
        raise CliError(f"conversion failed: {exc}", EXIT_OVERFLOW) from exc
    rows = C.summarize(cn)
    print(_table(list(rows[0]), [r.values() for r in rows]))
    log.info("wrote %s (%d substructures)", args.out, len(cn.subs))
    return EXIT_OK


def cmd_run(args) -> int:
    model = _load_any(args.input)
    x = _read_input(args, model.input_shape, model.input_bits)
    try:
        if isinstance(model, C.ConvertedNetwork):
            out, descale = run_fixed(model, x)
            scores = out.ravel()
        else:
            scores, descale = run_float(model, x).ravel(), None
    except OverflowError as exc:
        raise CliError(f"fixed-point overflow: {exc}", EXIT_OVERFLOW) from exc
    order = np.argsort(-scores, kind="stable")[: args.top]
    if descale is None:
        print(_table(("rank", "index", "value"), [(r + 1, i, repr(float(scores[i]))) for r, i in enumerate(order)]))
    else:
        print(f"descale: {descale!r}")
        print(_table(("rank", "index", "int", "value"),
                     [(r + 1, i, int(scores[i]), repr(float(scores[i]) * descale)) for r, i in enumerate(order)]))
    return EXIT_OK


def cmd_verify(args) -> int:
    net = _load_net(args.float)
    cn = _load_converted(args.fixed)
    if tuple(cn.input_shape) != tuple(net.input_shape) or cn.subs[-1].last != len(net.layers) - 1:
        raise CliError("float and fixed models do not match")
    try:
        rep = testkit.check_equivalence(net, args.inputs, cn.mode, seed=args.seed, converted=cn)
    except OverflowError as exc:
        raise CliError(f"fixed-point overflow: {exc}", EXIT_OVERFLOW) from exc
    diffs = rep.isolated_diffs if cn.mode == C.INTEGRATED else rep.end_to_end_diffs
    print(f"mode: {rep.mode}")
    print(f"inputs: {rep.n_inputs}")
    print(f"code diffs: {diffs}")
    print(f"isolated code diffs: {rep.isolated_diffs}")
    print(f"end-to-end code diffs: {rep.end_to_end_diffs} of {rep.codes_compared}")
    print(f"max code diff: {rep.max_code_diff}")
    print(f"max real diff: {rep.max_real_diff!r}")
    rows = [(layer, net.layers[layer].name, d, n, f"{rate:.6f}") for layer, d, n, rate in rep.rows()]
    if rows:
        print(_table(("layer", "name", "diffs", "codes", "rate"), rows))
    if not rep.passed:
        log.error("integrated conversion is not bit-exact: %d code diffs", rep.isolated_diffs)
        return EXIT_MISMATCH
    return EXIT_OK


def cmd_report(args) -> int:
    model = _load_any(args.input)
    if isinstance(model, C.ConvertedNetwork):
        rep = accounting.model_size_bits(model, args.exclude_last_fc)
    else:
        rep = accounting.memory_report(model, args.exclude_last_fc)
    sys.stdout.write(rep.to_text())
    if args.csv:
        Path(args.csv).write_text(rep.to_csv())
        log.info("wrote %s", args.csv)
    return EXIT_OK


def sweep_rows(net: M.NetworkDef, mode: str, sub_id: int | None, ms, n_inputs: int, seed: int):
    """Output error of the fixed engine against the float engine for each m.

    Integrated mode varies only substructure ``sub_id`` (default: the last
    non-quantized one) and feeds it the float engine's own input, so the
    numbers isolate that span. Separated mode varies every span and compares
    end to end.
    """
    subs = divide_substructures(net)
    if mode == C.INTEGRATED:
        if sub_id is None:
            candidates = [i for i, s in enumerate(subs, start=1) if not s.quantized]
            if not candidates:
                raise CliError("network has no non-quantized substructure to sweep")
            sub_id = candidates[-1]
        if not 1 <= sub_id <= len(subs) or subs[sub_id - 1].quantized:
            raise CliError(f"substructure {sub_id} is not a non-quantized substructure")
    rng = np.random.default_rng(seed)
    inputs = [testkit.random_input(net, rng) for _ in range(n_inputs)]
    traces = [run_float(net, x, trace=True) for x in inputs]
    rows = []
    for m in ms:
        m_map = {sub_id: m} if mode == C.INTEGRATED else {"all": m}
        cn = C.convert_network(net, mode, m_map)
        max_abs = max_rel = 0.0
        diffs = total = 0
        for x, (out, rec) in zip(inputs, traces):
            if mode == C.INTEGRATED:
                csub = cn.subs[sub_id - 1]
                sub_in = rec[csub.first - 1] if csub.first else x
                got = run_sub(csub, sub_in)
                want = rec[csub.last]
                if csub.out_codes:
                    diffs += int(np.count_nonzero(got != want))
                    total += want.size
                    got, want = got * csub.out_scale, want * net.layers[csub.last].beta_out
                else:
                    got = got * csub.out_scale
            else:
                fixed, descale, frec = run_fixed(cn, x, trace=True)
                got, want = fixed * descale, out
                for i, layer in enumerate(net.layers):
                    if isinstance(layer, M.Quant):
                        diffs += int(np.count_nonzero(frec[i] != rec[i]))
                        total += rec[i].size
            err = float(np.max(np.abs(got - want))) if want.size else 0.0
            scale = float(np.max(np.abs(want))) if want.size else 0.0
            max_abs = max(max_abs, err)
            max_rel = max(max_rel, err / scale if scale else err)
        rows.append((m, max_abs, max_rel, diffs / total if total else 0.0))
    return rows


def cmd_sweep(args) -> int:
    net = _load_net(args.input)
    if args.m_min > args.m_max:
        raise CliError("--m-min exceeds --m-max")
    try:
        rows = sweep_rows(net, args.mode, args.sub, range(args.m_min, args.m_max + 1), args.inputs, args.seed)
    except OverflowError as exc:
        raise CliError(f"conversion overflow: {exc}", EXIT_OVERFLOW) from exc
    except C.ConversionError as exc:
        raise CliError(f"conversion failed: {exc}", EXIT_OVERFLOW) from exc
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["m", "max_abs_err", "max_rel_err", "code_mismatch_rate"])
        for m, a, r, c in rows:
            writer.writerow([m, repr(a), repr(r), repr(c)])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def cmd_generate(args) -> int:
    if args.kind == "alexnet":
        net = zoo.alexnet_hwgq(args.k, args.seed)
    elif args.kind == "tinier-yolo":
        net = zoo.tinier_yolo(args.k, args.seed)
    else:
        net = testkit.gen_random_network(args.seed)
    container.save_model(net, args.out)
    log.info("wrote %s (%d layers)", args.out, len(net.layers))
    return EXIT_OK


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ifq", description="Integer-only inference for quantized networks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("inspect", help="summarize an IFQN or IFQC file")
    s.add_argument("--in", dest="input", required=True)
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("divide", help="print the substructure partition")
    s.add_argument("--in", dest="input", required=True)
    s.set_defaults(func=cmd_divide)

    s = sub.add_parser("convert", help="convert IFQN to integer-only IFQC")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=(C.INTEGRATED, C.SEPARATED), default=C.INTEGRATED)
    s.add_argument("--m", action="append", metavar="SUBID=EXP",
                   help="scaling exponent per substructure (1-based id) or all=EXP; repeatable")
    s.add_argument("--compact", action="store_true", help="store thresholds as base/offset when exact")
    s.set_defaults(func=cmd_convert)

    s = sub.add_parser("run", help="single inference, top-n outputs")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--input", dest="input_array", metavar="NPY", help="input codes (.npy); random if omitted")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--top", type=int, default=5)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("verify", help="compare a float model with its converted form")
    s.add_argument("--float", required=True)
    s.add_argument("--fixed", required=True)
    s.add_argument("--inputs", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("report", help="model size and feature-map memory")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--exclude-last-fc", action="store_true")
    s.add_argument("--csv", metavar="PATH")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("sweep", help="output error versus m, as CSV")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--mode", choices=(C.INTEGRATED, C.SEPARATED), default=C.INTEGRATED)
    s.add_argument("--sub", type=int, help="substructure to vary (integrated mode)")
    s.add_argument("--m-min", type=int, default=4)
    s.add_argument("--m-max", type=int, default=16)
    s.add_argument("--inputs", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", metavar="CSV")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("generate", help="write a fixture network")
    s.add_argument("kind", choices=("alexnet", "tinier-yolo", "random"))
    s.add_argument("--out", required=True)
    s.add_argument("--k", type=int, default=2)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_generate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="ifq: %(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CliError as exc:
        log.error("%s", exc)
        return exc.code
    except (M.ModelError, container.ContainerError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
