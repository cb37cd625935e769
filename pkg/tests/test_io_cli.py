import csv
import json

import numpy as np
import pytest
from scipy.stats import norm

from flowcap import io as fio
from flowcap.cli import main
from flowcap.densities import Gaussian1D, GaussianD, MixtureGaussianD, PiecewiseGaussian1D, twin_bump_target
from flowcap.flows import FlowStack, Householder, Planar, Radial, Sylvester

from support import random_mog


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def stack():
    return FlowStack(
        (
            Planar([0.3, -0.2], [1.0, 0.5], 0.1, "tanh"),
            Householder.from_direction([1.0, 2.0]),
            Radial(1.0, 0.5, [0.2, -0.1]),
            Sylvester([[1.0], [0.5]], [[0.4], [0.1]], [0.2], "relu"),
        )
    )


def test_stack_round_trip(stack):
    again = fio.stack_from_dict(json.loads(json.dumps(stack.to_dict())))
    Z = np.random.default_rng(0).normal(size=(30, 2))
    a, la = stack.forward(Z)
    b, lb = again.forward(Z)
    assert np.array_equal(a, b) and np.array_equal(la, lb)


@pytest.mark.parametrize(
    "dist",
    [
        Gaussian1D(0.5, 2.0),
        GaussianD([0.0, 1.0], [[2.0, 0.3], [0.3, 1.0]]),
        PiecewiseGaussian1D([0.0], [0.0, 0.0], [1.0, 1.0]),
        twin_bump_target(),
    ],
)
def test_dist_round_trip(dist):
    again = fio.dist_from_dict(json.loads(json.dumps(dist.to_dict())))
    x = np.linspace(-4, 4, 17) if dist.dim == 1 else np.random.default_rng(1).normal(size=(9, dist.dim))
    assert np.array_equal(dist.log_density(x), again.log_density(x))


def test_mixture_round_trip():
    mix = random_mog(3, 2, np.random.default_rng(2))
    assert isinstance(fio.dist_from_dict(mix.to_dict()), MixtureGaussianD)


def test_validate_accepts_valid_flow(stack):
    assert fio.validate_object(stack.to_dict()).ok


def test_validate_reports_non_unit_reflection():
    rep = fio.validate_object({"schema": fio.FLOW_SCHEMA, "layers": [{"variant": "householder", "v": [0.9, 0.0]}]})
    assert not rep.ok
    assert rep.issues[0].path == "layers[0].v" and rep.issues[0].category == "invariant"


def test_validate_reports_version_mismatch(stack):
    obj = stack.to_dict()
    obj["schema"] = "flowcap-flow/999"
    rep = fio.validate_object(obj)
    assert [i.category for i in rep.issues] == ["version_mismatch"]


def test_validate_reports_schema_path():
    rep = fio.validate_object({"schema": fio.FLOW_SCHEMA, "layers": [{"variant": "planar", "u": [1.0], "w": "x"}]})
    assert rep.issues and rep.issues[0].category == "schema"
    assert rep.issues[0].path.startswith("layers[0]")


def test_cli_validate_exit_codes(tmp_path, stack, capsys):
    good = write(tmp_path / "good.json", stack.to_dict())
    bad = write(tmp_path / "bad.json", {"layers": [{"variant": "householder", "v": [0.9, 0.0]}]})
    assert main(["validate", good]) == 0
    capsys.readouterr()
    assert main(["validate", good, bad]) == 2
    report = json.loads(capsys.readouterr().out)
    assert [f["ok"] for f in report["files"]] == [True, False]
    assert report["files"][1]["issues"][0]["path"] == "layers[0].v"


def test_cli_flow_eval_and_invert(tmp_path, stack, capsys):
    path = write(tmp_path / "f.json", stack.to_dict())
    assert main(["flow", "eval", "--flow", path, "--z", "0.3,-0.7", "--out", str(tmp_path / "y.json")]) == 0
    y = json.loads((tmp_path / "y.json").read_text())["y"]
    assert main(["flow", "invert", "--flow", path, "--z", ",".join(map(str, y[0])), "--out", str(tmp_path / "z.json")]) == 0
    z = json.loads((tmp_path / "z.json").read_text())["z"]
    assert np.allclose(z, [[0.3, -0.7]], atol=1e-9)


def test_cli_compile_singular_matrix_exit_3(tmp_path):
    path = write(tmp_path / "A.json", [[1.0, 2.0], [2.0, 4.0]])
    assert main(["compile-linear", "--matrix", path]) == 3


def test_cli_missing_file_exit_2(tmp_path):
    assert main(["compile-linear", "--matrix", str(tmp_path / "nope.json")]) == 2


def test_cli_bad_usage_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["capacity", "--family", "nope", "--dims", "2"])
    assert exc.value.code == 2


def test_cli_compile_writes_equivalent_stack(tmp_path, capsys):
    A = [[0.0, 1.0, 0.5], [2.0, 0.3, 0.0], [0.1, 0.0, 1.5]]
    m = write(tmp_path / "A.json", {"matrix": A})
    out = tmp_path / "stack.json"
    assert main(["compile-linear", "--matrix", m, "--out", str(out)]) == 0
    loaded = fio.load_stack(out)
    Z = np.random.default_rng(3).normal(size=(10, 3))
    assert np.allclose(loaded.forward(Z)[0], Z @ np.array(A).T, atol=1e-10)


def test_cli_capacity_csv(tmp_path, capsys):
    out = tmp_path / "cap.csv"
    assert main(["capacity", "--family", "householder", "--dims", "64,128,256", "--out", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["d"] for r in rows] == ["64", "128", "256"]
    assert float(rows[0]["slope_estimate"]) == pytest.approx(1.0, abs=0.1)
    assert json.loads(capsys.readouterr().out)["family"] == "householder"


def test_cli_feasibility(tmp_path, capsys):
    q = write(tmp_path / "q.json", np.eye(3).tolist())
    p = write(tmp_path / "p.json", np.diag([1.0, 2.0, 0.5]).tolist())
    assert main(["feasibility", "--sigma-q", q, "--sigma-p", p, "--family", "planar-smooth"]) == 0
    [verdict] = json.loads(capsys.readouterr().out)
    assert verdict["verdict"] == "ruled_out"


def test_cli_synth_1d(tmp_path, capsys):
    target = write(tmp_path / "t.json", {"kind": "twin_bump"})
    curves = tmp_path / "curves.csv"
    args = ["synth-1d", "--target", target, "--eps", "0.05", "--pieces", "50", "--curves", str(curves)]
    assert main(args + ["--out", str(tmp_path / "s.json")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["achieved_l1"] <= 0.3
    with open(curves) as fh:
        assert next(csv.reader(fh)) == ["x", "p", "approx"]
    assert fio.validate_files([tmp_path / "s.json"]).ok


def test_cli_l1_grid(tmp_path, capsys):
    p = write(tmp_path / "p.json", Gaussian1D(0.0, 1.0).to_dict())
    q = write(tmp_path / "q.json", Gaussian1D(1.0, 1.0).to_dict())
    assert main(["l1", "--p", p, "--q", q]) == 0
    assert json.loads(capsys.readouterr().out)["value"] == pytest.approx(2 * (2 * norm.cdf(0.5) - 1), abs=1e-7)
