from __future__ import annotations

import csv
import io
import subprocess
import sys

import numpy as np
import pytest

from ifqnet import cli, container, convert as C, model as M, testkit


@pytest.fixture(scope="module")
def alexnet_ifqc(alexnet_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "alexnet.ifqc"
    assert cli.main(["convert", "--in", str(alexnet_file), "--out", str(out),
                     "--mode", "integrated", "--m", "1=9", "--m", "7=14"]) == 0
    return out


@pytest.fixture
def random_file(tmp_path):
    path = tmp_path / "r.ifqn"
    container.save_model(testkit.gen_random_network(3), path)
    return path


def _summary_rows(text):
    lines = text.strip().splitlines()
    return [line.split() for line in lines[1:]]


def test_convert_integrated_alexnet(alexnet_file, alexnet_ifqc, capsys):
    capsys.readouterr()
    out = alexnet_ifqc.parent / "again.ifqc"
    code = cli.main(["convert", "--in", str(alexnet_file), "--out", str(out),
                     "--mode", "integrated", "--m", "1=9", "--m", "7=14"])
    text = capsys.readouterr().out
    assert code == 0
    assert len(_summary_rows(text)) == 7
    assert out.read_bytes() == alexnet_ifqc.read_bytes()
    cn = container.load_converted(out)
    assert [s.m for s in cn.subs] == [9, 0, 0, 0, 0, 0, 14]


def test_convert_missing_file(tmp_path):
    assert cli.main(["convert", "--in", str(tmp_path / "nope.ifqn"), "--out", str(tmp_path / "x")]) == 1


def test_convert_separated_all_8(alexnet_file, tmp_path, capsys):
    out = tmp_path / "sep.ifqc"
    assert cli.main(["convert", "--in", str(alexnet_file), "--out", str(out),
                     "--mode", "separated", "--m", "all=8"]) == 0
    header, *rows = [line.split() for line in capsys.readouterr().out.strip().splitlines()]
    col = header.index("m")
    assert len(rows) == 7 and {r[col] for r in rows} == {"8"}


def test_convert_bad_m(random_file, tmp_path):
    assert cli.main(["convert", "--in", str(random_file), "--out", str(tmp_path / "x"), "--m", "oops"]) == 1


def test_convert_invalid_model(tmp_path):
    conv = M.QConv("c", 1, 1, 1, 1, 1, 0, [-1.0], np.ones((1, 1, 1, 1)), [0.0], 2)
    net = M.NetworkDef("bad", (1, 2, 2), [conv, M.Quant("q", 2, 1.0, -0.5, 1.0)], input_bits=2)
    path = tmp_path / "bad.ifqn"
    path.write_bytes(container.dumps_model(net))
    assert cli.main(["convert", "--in", str(path), "--out", str(tmp_path / "x")]) == 1


def test_convert_overflow_exit_2(tmp_path):
    conv = M.QConv("c", 1, 1, 1, 1, 1, 0, [2.0 ** -40], np.ones((1, 1, 1, 1)), [0.0], 2)
    net = M.NetworkDef("tiny", (1, 2, 2), [conv, M.Quant("q", 2, 1.0, -0.5, 1.0)], input_bits=2)
    path = tmp_path / "tiny.ifqn"
    container.save_model(net, path)
    assert cli.main(["convert", "--in", str(path), "--out", str(tmp_path / "x")]) == 2


def test_verify_integrated(alexnet_file, alexnet_ifqc, capsys):
    capsys.readouterr()
    code = cli.main(["verify", "--float", str(alexnet_file), "--fixed", str(alexnet_ifqc),
                     "--inputs", "1", "--seed", "0"])
    assert code == 0
    assert "code diffs: 0" in capsys.readouterr().out.splitlines()


def test_verify_separated_reports_diffs(alexnet_file, tmp_path, capsys):
    fixed = tmp_path / "sep8.ifqc"
    cli.main(["convert", "--in", str(alexnet_file), "--out", str(fixed), "--mode", "separated", "--m", "all=8"])
    capsys.readouterr()
    code = cli.main(["verify", "--float", str(alexnet_file), "--fixed", str(fixed), "--inputs", "1"])
    lines = capsys.readouterr().out.splitlines()
    assert code == 0
    diffs = int(next(l for l in lines if l.startswith("code diffs:")).split(":")[1])
    assert diffs > 0
    assert any(l.startswith("layer") for l in lines)


def test_verify_zero_inputs(random_file, tmp_path, capsys):
    fixed = tmp_path / "r.ifqc"
    cli.main(["convert", "--in", str(random_file), "--out", str(fixed)])
    capsys.readouterr()
    assert cli.main(["verify", "--float", str(random_file), "--fixed", str(fixed), "--inputs", "0"]) == 0
    out = capsys.readouterr().out
    assert "code diffs: 0" in out and "layer" not in out


def test_verify_tampered_pair_exit_3(random_file, tmp_path):
    cn = C.convert_network(container.load_model(random_file))
    thr = next(op for op in cn.ops() if isinstance(op, C.ThresholdOp))
    thr.folded.thresholds[...] = thr.folded.thresholds + 7
    fixed = tmp_path / "tampered.ifqc"
    container.save_converted(cn, fixed)
    assert cli.main(["verify", "--float", str(random_file), "--fixed", str(fixed), "--inputs", "3"]) == 3


def test_report_alexnet(alexnet_file, tmp_path, capsys):
    path = tmp_path / "rep.csv"
    assert cli.main(["report", "--in", str(alexnet_file), "--exclude-last-fc", "--csv", str(path)]) == 0
    out = capsys.readouterr().out
    assert "total model bits: 58550560 (58.55 Mbits)" in out
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == 25 and rows[-1]["excluded"] == "1"


def test_report_single_layer(tmp_path, capsys):
    net = M.NetworkDef("one", (1, 2, 2), [M.ReLU("r")], input_bits=2)
    path = tmp_path / "one.ifqn"
    container.save_model(net, path)
    capsys.readouterr()
    assert cli.main(["report", "--in", str(path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    body = [l for l in lines[1:] if not l.startswith(("total", "peak"))]
    assert len(body) == 1 and body[0].split()[1] == "r"


def test_divide_and_inspect(alexnet_file, alexnet_ifqc, capsys):
    capsys.readouterr()
    assert cli.main(["divide", "--in", str(alexnet_file)]) == 0
    assert "7 substructures; quantized: 2, 3, 4, 5, 6" in capsys.readouterr().out
    assert cli.main(["inspect", "--in", str(alexnet_ifqc)]) == 0
    out = capsys.readouterr().out
    assert "mode: integrated" in out and "output descale" in out
    assert cli.main(["inspect", "--in", str(alexnet_file)]) == 0
    assert "valid: yes" in capsys.readouterr().out


def test_run_converted_matches_engine(random_file, tmp_path, capsys):
    fixed = tmp_path / "r.ifqc"
    cli.main(["convert", "--in", str(random_file), "--out", str(fixed)])
    net = container.load_model(random_file)
    x = testkit.random_input(net, np.random.default_rng(0))
    arr = tmp_path / "x.npy"
    np.save(arr, x)
    capsys.readouterr()
    assert cli.main(["run", "--in", str(fixed), "--input", str(arr), "--top", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("descale:")
    assert len(lines) == 2 + min(3, int(np.prod(M.infer_shapes(net)[-1])))


def test_sweep_csv(random_file, tmp_path):
    out = tmp_path / "sweep.csv"
    assert cli.main(["sweep", "--in", str(random_file), "--mode", "separated", "--m-min", "4",
                     "--m-max", "8", "--inputs", "2", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [int(r["m"]) for r in rows] == [4, 5, 6, 7, 8]
    assert all(float(r["max_abs_err"]) >= 0 for r in rows)


def test_sweep_is_deterministic(random_file, capsys):
    argv = ["sweep", "--in", str(random_file), "--mode", "separated", "--m-min", "6", "--m-max", "7"]
    capsys.readouterr()
    cli.main(argv)
    first = capsys.readouterr().out
    cli.main(argv)
    assert capsys.readouterr().out == first
    assert list(csv.reader(io.StringIO(first)))[0] == ["m", "max_abs_err", "max_rel_err", "code_mismatch_rate"]


def test_streams_are_separated(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ifqnet", "report", "--in", str(tmp_path / "missing.ifqn")],
                          capture_output=True, text=True)
    assert proc.returncode == 1
    assert proc.stdout == ""
    assert proc.stderr.startswith("ifq: ERROR:")


def test_generate_random(tmp_path):
    out = tmp_path / "g.ifqn"
    assert cli.main(["generate", "random", "--seed", "5", "--out", str(out)]) == 0
    assert out.read_bytes() == container.dumps_model(testkit.gen_random_network(5))
