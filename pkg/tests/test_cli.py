import json
from fractions import Fraction

import pytest

from holistic2d.cli import build_parser, main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def coefficient_lines(text):
    return {line.split()[0] + " " + line.split()[1] if len(line.split()) > 2 else line.split()[0]: line.split()[-1]
            for line in text.splitlines() if line.startswith("  ")}


def table1_values(text):
    last = text.strip().splitlines()[-1].split()
    return [Fraction(v) for v in last[1:]]


def test_construct_table1_row(tmp_path, capsys):
    code, out, _ = run(capsys, "construct", "--n", "2", "--order-gamma", "3", "--order-alpha", "3",
                       "--out", str(tmp_path))
    assert code == 0
    assert table1_values(out) == [Fraction(-1, 16), Fraction(1, 16), Fraction(-3, 16)]
    model = json.loads((tmp_path / "model_n2.json").read_text())
    assert model["config"]["command"] == "construct"
    assert model["config"]["params"]["n"] == 2
    assert (tmp_path / "coefficients_n2.txt").read_text() == out


def test_construct_low_order_model(tmp_path, capsys):
    code, out, _ = run(capsys, "construct", "--n", "4", "--order-gamma", "2", "--order-alpha", "2",
                       "--total", "2", "--out", str(tmp_path))
    assert code == 0
    body = [line.split() for line in out.splitlines() if line.startswith("  ")]
    assert body == [["u", "1"], ["u^3", "-1"], ["d2", "u", "1"]]


def test_construct_odd_n_between_neighbours(tmp_path, capsys):
    rows = {}
    for n in (2, 3, 4):
        code, out, _ = run(capsys, "construct", "--n", str(n), "--out", str(tmp_path))
        assert code == 0
        rows[n] = table1_values(out)
    for a, b, c in zip(rows[2], rows[3], rows[4]):
        assert min(a, c) < b < max(a, c)


def test_verify(tmp_path, capsys, monkeypatch):
    code, out, _ = run(capsys, "verify", "--out", str(tmp_path / "r"))
    assert code == 0
    t1 = [line for line in out.splitlines() if line.startswith("Table 1")]
    assert len(t1) == 12 and all(line.endswith("PASS") for line in t1)
    t2 = [line for line in out.splitlines() if line.startswith("Table 2")]
    assert len(t2) == 15
    substituted = [line for line in t2 if "SUBSTITUTED" in line]
    assert len(substituted) == 3 and all("gamma^2*alpha" in line for line in substituted)
    report = json.loads((tmp_path / "r" / "verify.json").read_text())
    assert report["quadratic_decay"] is True
    verdicts = [c["status"] for c in report["cells"]]

    monkeypatch.setenv("HOLISTIC_MODE", "float")
    code, _, _ = run(capsys, "verify", "--out", str(tmp_path / "f"))
    assert code == 0
    report_f = json.loads((tmp_path / "f" / "verify.json").read_text())
    assert report_f["config"]["mode"] == "float"
    assert [c["status"] for c in report_f["cells"]] == verdicts


def test_simulate_is_deterministic(tmp_path, capsys):
    args = ["simulate", "--elements", "4", "--alpha", "6", "--t-end", "1", "--init", "random", "--seed", "3"]
    assert run(capsys, *args, "--out", str(tmp_path / "a"))[0] == 0
    assert run(capsys, *args, "--out", str(tmp_path / "b"))[0] == 0
    for name in ("trajectory.csv", "trajectory.json", "final.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    meta = json.loads((tmp_path / "a" / "trajectory.json").read_text())
    assert meta["config"]["seed"] == 3


def test_continue(tmp_path, capsys):
    code, out, _ = run(capsys, "continue", "--model", "centered4", "--grid", "11", "--alpha-max", "20",
                       "--out", str(tmp_path))
    assert code == 0
    summary = json.loads((tmp_path / "continuation.json").read_text())
    assert summary["grid"]["mx"] == 12
    bifs = summary["bifurcations"]
    assert len(bifs) == 3
    for a, target in zip(bifs, (2, 8, 18)):
        assert abs(a - target) / target < 0.05
    svg = (tmp_path / "diagram.svg").read_text()
    # trivial-branch markers, plus any secondary bifurcations on the side branches
    assert svg.count('width="8" height="8"') >= 3
    assert 'stroke="blue"' in svg and 'stroke="red"' in svg
    assert summary["branches"][1]["stability"] == ["stable"]


def test_consistency(tmp_path, capsys):
    code, out, _ = run(capsys, "consistency", "--model", "holistic_g3a3", "--out", str(tmp_path))
    assert code == 0
    res = json.loads((tmp_path / "consistency_holistic_g3a3.json").read_text())
    assert res["order"] == pytest.approx(4.0, abs=0.1)
    assert res["config"]["command"] == "consistency"
    assert (tmp_path / "consistency_holistic_g3a3.csv").exists()


def test_subgrid_plot(tmp_path, capsys):
    code, out, _ = run(capsys, "subgrid-plot", "--elements", "4", "--alpha", "6", "--order-gamma", "2",
                       "--order-alpha", "2", "--out", str(tmp_path))
    assert code == 0
    data = json.loads((tmp_path / "subgrid.json").read_text())
    assert data["max_jump"] > 0.01
    assert "<svg" in (tmp_path / "subgrid.svg").read_text()


@pytest.mark.parametrize("argv", [
    ["construct", "--n", "1"],
    ["construct", "--n", "2", "--order-gamma", "0"],
    ["consistency", "--m-list", "8", "16"],
    ["simulate", "--model", "nonsense"],
    ["simulate", "--elements", "1"],
    ["frobnicate"],
])
def test_validation_exit_code(tmp_path, capsys, argv):
    with pytest.raises(SystemExit) as exc:
        code = main(argv + ["--out", str(tmp_path)])
        raise SystemExit(code)
    assert exc.value.code == 1


def test_numerical_failure_exit_code(tmp_path, capsys):
    code, _, err = run(capsys, "simulate", "--elements", "4", "--gamma", "0", "--alpha", "10",
                       "--init", "random", "--amplitude", "1000", "--out", str(tmp_path))
    assert code == 2
    assert "numerical failure" in err


def test_parser_lists_subcommands():
    text = build_parser().format_help()
    for cmd in ("construct", "verify", "simulate", "continue", "consistency", "subgrid-plot"):
        assert cmd in text
