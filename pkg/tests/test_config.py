"""Config parsing, canonical hashing, and parameter validation."""

import pytest

from thinfb.config import (
    ConfigError,
    config_hash,
    flatten,
    load_config,
    parse_config,
    validate_params,
)

SAMPLE = """
# top-level comment
threads = 4
[solve]
nodes = 65
tol = 1e-10   # inline comment
omega = 1.9
verbose = true
boundary = m2
[seq]
gamma = 0.5
"""


def test_parse_types_and_sections():
    cfg = parse_config(SAMPLE)
    assert cfg[""]["threads"] == 4
    assert cfg["solve"]["nodes"] == 65
    assert cfg["solve"]["tol"] == 1e-10
    assert cfg["solve"]["verbose"] is True
    assert cfg["solve"]["boundary"] == "m2"
    assert cfg["seq"]["gamma"] == 0.5


def test_parse_errors():
    with pytest.raises(ConfigError):
        parse_config("[solve]\nnodes = 3\nnodes = 5\n")  # duplicate key
    with pytest.raises(ConfigError):
        parse_config("[]\n")  # empty section
    with pytest.raises(ConfigError):
        parse_config("just a line\n")  # no '='
    with pytest.raises(ConfigError):
        parse_config(" = 3\n")  # empty key


def test_load_config(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(SAMPLE)
    assert load_config(path) == parse_config(SAMPLE)


def test_flatten():
    assert flatten({"solve": {"n": 1}, "": {"seed": 2}}) == {"solve.n": 1, "seed": 2}


def test_hash_invariant_under_reordering():
    a = {"solve": {"nodes": 65, "tol": 1e-10}, "seq": {"gamma": 0.5}}
    b = {"seq": {"gamma": 0.5}, "solve": {"tol": 1e-10, "nodes": 65}}
    assert config_hash(a) == config_hash(b)
    assert len(config_hash(a)) == 16


def test_hash_sensitive_to_values():
    a = {"solve": {"nodes": 65}}
    b = {"solve": {"nodes": 33}}
    assert config_hash(a) != config_hash(b)


def test_hash_flat_and_nested_agree():
    assert config_hash({"solve": {"nodes": 65}}) == config_hash({"solve.nodes": 65})


def test_validate_params_accepts_good():
    validate_params({"solve": {"nodes": 65, "tol": 1e-10, "seed": 0}})


@pytest.mark.parametrize(
    "bad",
    [
        {"solve": {"tol": 0.0}},
        {"solve": {"tol": -1e-10}},
        {"solve": {"tol": "tiny"}},
        {"solve": {"nodes": 0}},
        {"solve": {"nodes": 6.5}},
        {"solve": {"nodes": True}},
        {"seq": {"steps": -1}},
        {"run": {"seed": -1}},
        {"dich": {"drop_floor": 0}},
    ],
)
def test_validate_params_rejects(bad):
    with pytest.raises(ConfigError) as exc:
        validate_params(bad)
    # the error names the offending field
    section = next(iter(bad))
    key = next(iter(bad[section]))
    assert f"{section}.{key}" in str(exc.value)
