import hashlib
import json

import pytest

from flowcap.errors import ContractViolation
from flowcap.experiments import DEFAULTS, ExperimentConfig, run_experiment

FAST = {
    "fig1": {"points": 401},
    "topo_tanh_2d": {"grid": 61},
    "topo_relu_2d": {"grid": 81},
    "scaling_householder": {},
    "scaling_local_planar": {"dims": [16, 32, 64]},
}


@pytest.mark.parametrize("name", sorted(FAST))
def test_same_seed_gives_identical_files(tmp_path, name):
    a = run_experiment(ExperimentConfig(name, FAST[name], 5, str(tmp_path / "a")))
    b = run_experiment(ExperimentConfig(name, FAST[name], 5, str(tmp_path / "b")))
    assert a["files"] == b["files"]
    for fname in a["files"]:
        assert (tmp_path / "a" / fname).read_bytes() == (tmp_path / "b" / fname).read_bytes()


def test_manifest_hashes_match_files(tmp_path):
    man = run_experiment(ExperimentConfig("scaling_householder", {}, 0, str(tmp_path)))
    on_disk = json.loads((tmp_path / "manifest_scaling_householder.json").read_text())
    assert on_disk["files"] == man["files"]
    for fname, digest in man["files"].items():
        assert hashlib.sha256((tmp_path / fname).read_bytes()).hexdigest() == digest


def test_config_hash_tracks_parameters_and_seed():
    base = ExperimentConfig("fig1")
    assert base.hash() == ExperimentConfig("fig1", dict(DEFAULTS["fig1"])).hash()
    assert base.hash() != ExperimentConfig("fig1", seed=1).hash()
    assert base.hash() != ExperimentConfig("fig1", {"eps": 0.2}).hash()


@pytest.mark.parametrize(
    "params",
    [{"unknown": 1}, {"eps": "big"}, {"eps": True}],
)
def test_config_rejects_bad_parameters(params):
    with pytest.raises(ContractViolation):
        ExperimentConfig("fig1", params).resolved()


def test_config_rejects_unknown_experiment():
    with pytest.raises(ContractViolation):
        ExperimentConfig("fig99").resolved()


def test_topo_tanh_gradient_parallel_to_hyperplane_normal(tmp_path):
    man = run_experiment(ExperimentConfig("topo_tanh_2d", FAST["topo_tanh_2d"], 0, str(tmp_path)))
    assert man["summary"]["min_abs_cosine_to_w"] > 1 - 1e-6


def test_topo_relu_peaks_follow_the_map(tmp_path):
    man = run_experiment(ExperimentConfig("topo_relu_2d", {}, 0, str(tmp_path)))
    assert man["summary"]["n_peaks"] == 4
    assert man["summary"]["max_cell_distance"] <= 1.0
