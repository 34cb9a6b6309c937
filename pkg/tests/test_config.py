import json

import pytest

from leakymap.config import ConfigError, RunConfig, load_config


def test_defaults_validate():
    cfg = load_config(None)
    assert cfg.a == 2.0 and cfg.hole == [] and cfg.samples == 10**6


@pytest.mark.parametrize(
    "data, field",
    [
        ({"samples": 0}, "samples"),
        ({"a": 3.0}, "a"),
        ({"hole": [[0.3, 0.2]]}, "hole[0]"),
        ({"hole": [[0.3, 1.5]]}, "hole[0]"),
        ({"kmax": 3}, "kmax"),
        ({"n_cells": 10}, "n_cells"),
        ({"seed": -1}, "seed"),
        ({"bogus": 1}, "bogus"),
        ({"tower": {"growth": 4}}, "tower.growth"),
        ({"tower": {"nope": 1}}, "tower.nope"),
        ({"escape": {"init": "gaussian"}}, "escape.init"),
        ({"escape": {"window": [5, 3]}}, "escape.window"),
        ({"accim": {"K": 0}}, "accim.K"),
        ({"shrink": {"holes": [[[0.3]]]}}, "shrink.holes[0][0]"),
        ({"check": {"delta0": 0.0}}, "check.delta0"),
        ({"tower": 5}, "tower."),
    ],
)
def test_validation_names_the_field(data, field):
    with pytest.raises(ConfigError) as exc:
        load_config(data)
    assert exc.value.field == field
    assert str(exc.value).startswith(field)


def test_booleans_are_not_integers():
    with pytest.raises(ConfigError):
        load_config({"samples": True})


def test_digest_is_stable_and_sensitive():
    a, b = load_config({"seed": 1}), load_config({"seed": 1})
    assert a.digest() == b.digest()
    assert a.digest() != load_config({"seed": 2}).digest()


def test_load_from_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"hole": [[0.28, 0.3]]}))
    assert load_config(str(p)).hole == [[0.28, 0.3]]
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(str(p))
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(str(tmp_path / "missing.json"))


def test_round_trip_through_dict():
    cfg = load_config({"tower": {"seeds": 10}})
    again = load_config(cfg.to_dict())
    assert again == cfg and isinstance(again, RunConfig)
