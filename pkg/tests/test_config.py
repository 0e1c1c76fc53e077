import dataclasses
import json

import pytest

from drivefusion.agents import BackendKind, DeterministicBackend, RemoteBackend
from drivefusion.config import (
    EvalConfig,
    FiltrationConfig,
    PipelineConfig,
    RemoteConfig,
    ResponseConfig,
    VehicleConfig,
    load_config,
)
from drivefusion.environment import EnvironmentRules
from drivefusion.errors import ConfigError
from drivefusion.filtration import ThresholdSet
from drivefusion.response import InsightCategory

BASE = PipelineConfig()


def _sub(name, **kw):
    return {name: dataclasses.replace(getattr(BASE, name), **kw)}


TUNABLE_CHANGES = [
    {"backend": BackendKind.REMOTE},
    {"correspondence_gate": 4.0},
    {"seed": 1},
    _sub("remote", endpoint="http://other:1/v1"),
    _sub("remote", model="other"),
    _sub("remote", temperature=0.5),
    _sub("remote", attempts=5),
    _sub("remote", backoff=0.1),
    _sub("remote", timeout=3.0),
    _sub("remote", max_in_flight=1),
    _sub("remote", fallback=False),
    _sub("filtration", refractory=1.0),
    _sub("filtration", thresholds=ThresholdSet(9.0, 7.0, 9.0)),
    _sub("filtration", frame_window=0.2),
    _sub("vehicle", tau_obj=1.5),
    _sub("vehicle", majority=0.6),
    _sub("vehicle", range_limit=80.0),
    _sub("vehicle", expected_min_objects=2),
    _sub("environment", move_epsilon=0.3),
    _sub("environment", sigma_sig=0.8),
    _sub("environment", severity_bands=(1.0, 4.0)),
    _sub("environment", cosine_min=0.7),
    _sub("environment", proximity=3.0),
    _sub("environment", sub_intervals=3),
    {"response": ResponseConfig(weights={**ResponseConfig().weights, InsightCategory.SAFETY: 0.9})},
    {"response": ResponseConfig(catalog={**ResponseConfig().catalog, InsightCategory.COMFORT: ResponseConfig().catalog[InsightCategory.SAFETY]})},
    {"evaluation": EvalConfig(match_radius=1.0)},
]


def test_defaults_valid():
    assert BASE.problems() == []
    assert PipelineConfig.from_json("{}") == BASE


def test_round_trip():
    cfg = BASE.replace(seed=4, filtration=FiltrationConfig(thresholds=ThresholdSet(1, 2, 3)))
    assert PipelineConfig.from_json(cfg.to_json()) == cfg


@pytest.mark.parametrize("change", TUNABLE_CHANGES, ids=lambda c: next(iter(c)))
def test_every_tunable_changes_hash(change):
    assert BASE.replace(**change).config_hash() != BASE.config_hash()


def test_all_tunables_covered():
    # each leaf of the config document (except output_dir) appears in the list above
    def leaves(data, prefix=""):
        for k, v in data.items():
            if isinstance(v, dict) and k not in ("weights", "catalog"):
                yield from leaves(v, prefix + k + ".")
            else:
                yield prefix + k

    changed = set()
    base = BASE.to_jsonable()
    for change in TUNABLE_CHANGES:
        data = BASE.replace(**change).to_jsonable()
        changed |= {name for name in leaves(base) if _get(data, name) != _get(base, name)}
    assert changed == set(leaves(base)) - {"output_dir"}


def _get(data, dotted):
    for part in dotted.split("."):
        data = data[part]
    return data


def test_output_dir_excluded_from_hash():
    assert BASE.replace(output_dir="/elsewhere").config_hash() == BASE.config_hash()


def test_hash_stable_across_instances():
    assert PipelineConfig().config_hash() == PipelineConfig.from_json(BASE.to_json()).config_hash()


@pytest.mark.parametrize(
    "text",
    [
        '{"bogus": 1}',
        '{"remote": {"endpoint": "http://x", "retries": 2}}',
        '{"vehicle": {"tau_obj": "two"}}',
        "[1, 2]",
        "{",
    ],
)
def test_bad_documents_rejected(text):
    with pytest.raises(ConfigError):
        PipelineConfig.from_json(text)


@pytest.mark.parametrize(
    "change",
    [
        _sub("vehicle", tau_obj=0.0),
        _sub("vehicle", majority=1.5),
        _sub("vehicle", majority=0.0),
        _sub("remote", endpoint="ftp://x"),
        _sub("remote", attempts=0),
        _sub("remote", timeout=float("inf")),
        _sub("environment", severity_bands=(3.0, 1.0)),
        _sub("environment", sub_intervals=0),
        _sub("filtration", thresholds=ThresholdSet(-1.0, 8.0, 10.0)),
        {"correspondence_gate": -1.0},
        {"evaluation": EvalConfig(match_radius=0.0)},
        {"response": ResponseConfig(weights={InsightCategory.SAFETY: 1.0})},
    ],
    ids=str,
)
def test_domain_violations_rejected(change):
    cfg = BASE.replace(**change)
    assert cfg.problems()
    with pytest.raises(ConfigError):
        cfg.validate()


def test_load_config(tmp_path):
    assert load_config(None) == BASE
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"vehicle": {"tau_obj": 1.5}, "output_dir": "out"}))
    cfg = load_config(path)
    assert cfg.vehicle == VehicleConfig(tau_obj=1.5) and cfg.output_dir == "out"
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_runner_backend_selection():
    assert isinstance(BASE.runner().backend, DeterministicBackend)
    cfg = BASE.replace(backend=BackendKind.REMOTE, remote=RemoteConfig(fallback=False, attempts=2))
    runner = cfg.runner()
    assert isinstance(runner.backend, RemoteBackend)
    assert runner.policy.attempts == 2 and runner.fallback is None


def test_rules_follow_config():
    cfg = BASE.replace(vehicle=VehicleConfig(tau_obj=1.5), environment=EnvironmentRules(proximity=2.0))
    rules = cfg.rules()
    assert rules.vehicle.tau_obj == 1.5 and rules.environment.proximity == 2.0
