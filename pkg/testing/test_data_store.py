"""Tests for data CSV, network config and result persistence."""

import json
from pathlib import Path

import numpy as np
import pytest

from src.exceptions import ConfigParseError, InvalidDataError, NetworkValidationError
from src.models import EMTrace, Eta, IterationRecord
from src.services.data_store import (
    JsonStore,
    file_sha256,
    parse_network_config,
    read_data_csv,
    write_data_csv,
    write_network_config,
)
from src.services.network import builtin_case

NETWORKS = Path(__file__).resolve().parents[1] / "networks"


def test_data_csv_round_trip_is_exact(tmp_path, case1_data):
    path = write_data_csv(case1_data, tmp_path / "case1.csv")

    loaded = read_data_csv(path)

    np.testing.assert_array_equal(loaded.w, case1_data.w)
    np.testing.assert_array_equal(loaded.r, case1_data.r)
    assert loaded.seed == 7


def test_data_csv_layout(tmp_path, case1_data):
    path = write_data_csv(case1_data, tmp_path / "case1.csv")

    lines = path.read_text().splitlines()

    assert lines[0] == "# seed=7"
    assert lines[1] == "t,w1,w2,w3,w4,r1,r2,r3,r4"
    assert len(lines) == 202
    assert lines[2].startswith("0,")


def test_data_csv_same_record_same_hash(tmp_path, case1_data):
    a = write_data_csv(case1_data, tmp_path / "a.csv")
    b = write_data_csv(case1_data, tmp_path / "b.csv")

    assert file_sha256(a) == file_sha256(b)


def test_data_csv_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("# seed=1\nt,x1,r1\n0,1,0\n")

    with pytest.raises(InvalidDataError, match=":2:"):
        read_data_csv(path)


def test_data_csv_missing_seed_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,w1,r1\n0,1,0\n")

    with pytest.raises(InvalidDataError, match=":1:"):
        read_data_csv(path)


@pytest.mark.parametrize("name", ["case1", "case2"])
def test_shipped_configs_equal_builtin_cases(name):
    assert parse_network_config(NETWORKS / f"{name}.json") == builtin_case(name)


def test_network_config_round_trip(tmp_path, case2):
    path = write_network_config(case2, tmp_path / "net.json")

    assert parse_network_config(path) == case2
    assert json.loads(path.read_text())["modules"][0]["from"] == 1


def _config(**overrides):
    config = {
        "L": 2,
        "modules": [{"from": 1, "to": 2, "num": [0, 0.5], "den": [1, -0.3]}],
        "noise": [{"node": 2, "variance": 0.1}],
        "references": [1],
    }
    config.update(overrides)
    return config


def test_network_config_minimal(tmp_path):
    path = tmp_path / "net.json"
    path.write_text(json.dumps(_config()))

    net = parse_network_config(path)

    assert net.module(2, 1).den.coeffs == (1.0, -0.3)
    assert net.noise_of(2).H.num.coeffs == (1.0,)


def test_network_config_unknown_key(tmp_path):
    path = tmp_path / "net.json"
    path.write_text(json.dumps(_config(delay=3), indent=2))

    with pytest.raises(ConfigParseError, match="unknown key 'delay'"):
        parse_network_config(path)


def test_network_config_syntax_error_has_line(tmp_path):
    path = tmp_path / "net.json"
    path.write_text('{\n  "L": 2,\n  "modules": [\n')

    with pytest.raises(ConfigParseError, match=r"net\.json:\d+:\d+"):
        parse_network_config(path)


def test_network_config_not_strictly_proper(tmp_path):
    path = tmp_path / "net.json"
    path.write_text(json.dumps(_config(modules=[{"from": 1, "to": 2, "num": [0.2, 0.5], "den": [1]}])))

    with pytest.raises(NetworkValidationError) as excinfo:
        parse_network_config(path)

    assert "not strictly proper" in excinfo.value.violations[0]


def test_network_config_non_monic_denominator(tmp_path):
    path = tmp_path / "net.json"
    path.write_text(json.dumps(_config(modules=[{"from": 1, "to": 2, "num": [0, 0.5], "den": [2, 1]}])))

    with pytest.raises(NetworkValidationError, match="G_21"):
        parse_network_config(path)


def test_json_store_round_trip(tmp_path):
    eta = Eta(theta=(1.0, 0.5), lambdas={3: 0.2}, betas={3: 0.8}, sigma2=0.1)
    trace = EMTrace(iterations=[IterationRecord(iteration=0, eta=eta, nll=12.5)], termination="converged")
    store = JsonStore(tmp_path / "out" / "trace.json")

    store.save(trace)

    assert store.load(EMTrace) == trace
