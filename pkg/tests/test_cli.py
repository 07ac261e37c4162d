import csv
import io
import json
import math

import numpy as np
import pytest

from srasym.cli import run

BINARY = {"px": [0.3, 0.7], "d1": [[0, 1], [1, 0]], "d2": [[0, 1], [1, 0]], "D1": 0.15, "D2": 0.05}
GAUSS = {"sigma2": 1.0, "D1": 0.25, "D2": 0.0625}


@pytest.fixture
def files(tmp_path):
    b = tmp_path / "binary.json"
    b.write_text(json.dumps(BINARY))
    g = tmp_path / "gauss.json"
    g.write_text(json.dumps(GAUSS))
    return b, g


def call(capsys, *argv):
    code = run([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_rd_json_and_units(capsys, files):
    code, out, _ = call(capsys, "rd", "--instance", files[0])
    assert code == 0
    nats = json.loads(out)
    assert set(nats) == {"rate", "slope", "test_channel", "tilted"}
    _, out, _ = call(capsys, "rd", "--instance", files[0], "--units", "bits")
    bits = json.loads(out)
    assert bits["rate"] == pytest.approx(nats["rate"] * math.log2(math.e), rel=1e-15)
    assert np.allclose(bits["tilted"], np.array(nats["tilted"]) * math.log2(math.e), rtol=1e-15)


def test_sr_infeasible_string(capsys, files):
    code, out, _ = call(capsys, "sr", "--instance", files[0], "--R1", "0.01")
    assert code == 0 and json.loads(out)["value"] == "infeasible"


def test_dispersion_and_mdc(capsys, files):
    _, out, _ = call(capsys, "dispersion", "--instance", files[0])
    doc = json.loads(out)
    assert doc["rank"] == 1
    assert doc["v_joint"] == pytest.approx(0.3 * 0.7 * math.log(7 / 3) ** 2, abs=1e-8)
    _, out, _ = call(capsys, "mdc", "--instance", files[0])
    assert json.loads(out) == {"nu_star": pytest.approx(1 / (2 * doc["v_joint"])), "case": "iii"}


def test_region_csv_layout(capsys, files):
    code, out, _ = call(capsys, "region", "--instance", files[0], "--epsilon", "0.05")
    assert code == 0
    lines = out.split("\n")
    assert lines[0] == "L1,L2" and lines[-1] == ""
    assert "\r" not in out
    value = lines[1].split(",")[0]
    assert len(value.replace("-", "").replace(".", "").lstrip("0")) <= 15
    assert float(value) == pytest.approx(math.sqrt(0.3 * 0.7) * math.log(7 / 3) * 1.6448536269514722, abs=1e-12)


def test_bounds_json(capsys, files):
    code, out, _ = call(capsys, "bounds", "--instance", files[0], "--n", "100", "--L1", "0.5", "--L2", "0.5")
    assert code == 0
    doc = json.loads(out)
    assert set(doc) == {"achievability", "converse", "one_shot", "gaussian_approx", "diagnostics"}
    assert 0 <= doc["converse"] <= doc["achievability"] <= 1


def test_bounds_explicit_sizes_and_mc(capsys, files):
    code, out, _ = call(capsys, "bounds", "--instance", files[0], "--n", "100", "--logM1", "25", "--logM1M2", "50", "--mode", "mc", "--trials", "300", "--seed", "2")
    assert code == 0
    doc = json.loads(out)
    assert doc["diagnostics"]["one_shot"]["stderr"] >= 0


def test_gaussian_queries(capsys, files):
    _, out, _ = call(capsys, "gaussian", "--instance", files[1])
    assert json.loads(out)["R_Y"] == pytest.approx(math.log(2))
    _, out, _ = call(capsys, "gaussian", "--instance", files[1], "--query", "region", "--format", "json")
    assert json.loads(out)["corner"][0] == pytest.approx(1.163085, abs=1e-5)
    _, out, _ = call(capsys, "gaussian", "--instance", files[1], "--query", "mdc", "--theta1", "1", "--theta2", "2")
    assert json.loads(out)["nu_star"] == pytest.approx(1.0)
    code, out, _ = call(capsys, "gaussian", "--instance", files[1], "--query", "bounds", "--n", "1000", "--L1", "1", "--L2", "1")
    assert code == 0 and json.loads(out)["one_shot"] <= json.loads(out)["achievability"]


def test_figure1(capsys):
    code, out, _ = call(capsys, "figure1")
    rows = list(csv.reader(io.StringIO(out)))
    assert code == 0 and rows[0] == ["D", "V(D)"] and len(rows) == 51
    D = [float(r[0]) for r in rows[1:]]
    assert 0 < D[0] and D[-1] < 0.74


def _max_turn(points):
    seg = np.diff(points, axis=0)
    seg = seg[np.linalg.norm(seg, axis=1) > 0]
    ang = np.arctan2(seg[:, 1], seg[:, 0])
    return float(np.max(np.abs(np.diff(ang))))


@pytest.fixture(scope="module")
def figure2(tmp_path_factory):
    out = tmp_path_factory.mktemp("fig2")
    assert run(["figure2", "--out", str(out)]) == 0
    return {D: np.loadtxt(out / f"figure2_D1_{D:.2f}.csv", delimiter=",", skiprows=1) for D in (0.5, 0.55, 0.6)}


def test_figure2_corner_and_smooth(figure2):
    rect = figure2[0.5]
    a = rect[0, 0]
    vertical = rect[np.isclose(rect[:, 0], a)]
    horizontal = rect[~np.isclose(rect[:, 0], a)]
    assert vertical.shape[0] > 1 and np.allclose(horizontal[:, 1], horizontal[0, 1])
    assert _max_turn(rect) == pytest.approx(math.pi / 2, abs=1e-9)
    assert _max_turn(figure2[0.6]) < 0.1
    assert _max_turn(figure2[0.55]) < 0.1


def test_figure2_bits_default(figure2):
    # corner in bits is sqrt(V) Q^{-1}(0.005) / ln 2 with V the surprisal variance
    px = np.array([1 / 3, 1 / 4, 1 / 4, 1 / 6])
    s = -np.log(px)
    v = px @ (s - px @ s) ** 2
    assert figure2[0.5][0, 0] == pytest.approx(math.sqrt(v) * 2.5758293035489004 / math.log(2), abs=1e-9)


def test_outputs_are_byte_identical(capsys, files, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run(["region", "--instance", str(files[0]), "--out", str(a)])
    run(["region", "--instance", str(files[0]), "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize(
    "content, fragment",
    [
        ('{"px": [0.3, 0.7],', "malformed JSON at line"),
        ('{"px": [0.3, 0.7], "d1": [[0, 1], [1, 0]], "d2": [[0, 1], [1, 0]], "D1": 0.1}', "missing field 'D2'"),
        ('{"px": [0.3, "x"], "d1": [[0, 1], [1, 0]], "d2": [[0, 1], [1, 0]], "D1": 0.1, "D2": 0.05}', "field 'px'"),
    ],
)
@pytest.mark.parametrize("sub", ["rd", "sr", "dispersion", "region", "mdc", "bounds"])
def test_malformed_input_single_line(capsys, tmp_path, content, fragment, sub):
    path = tmp_path / "bad.json"
    path.write_text(content)
    code, out, err = call(capsys, sub, "--instance", path, "--n", "10")
    assert code == 1 and out == ""
    assert err.count("\n") == 1 and err.startswith("error: input: ")
    assert str(path) in err and fragment in err


def test_gaussian_malformed(capsys, tmp_path):
    path = tmp_path / "g.json"
    path.write_text('{"sigma2": 1, "D1": "a", "D2": 0.1}')
    code, _, err = call(capsys, "gaussian", "--instance", path)
    assert code == 1 and "field 'D1'" in err and err.count("\n") == 1


@pytest.mark.parametrize("argv", [["nope"], ["rd"], ["rd", "--instance", "/nonexistent.json"], ["rd", "--format", "xml"]])
def test_usage_errors(capsys, argv):
    code, out, err = call(capsys, *argv)
    assert code == 1 and out == "" and err.count("\n") == 1 and err.startswith("error: ")


def test_bad_thread_setting(capsys, files, monkeypatch):
    monkeypatch.setenv("SRASYM_THREADS", "zero")
    code, _, err = call(capsys, "bounds", "--instance", files[0], "--n", "50")
    assert code == 1 and "SRASYM_THREADS" in err
