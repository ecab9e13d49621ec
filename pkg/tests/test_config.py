import json

import pytest

from skyfleet.config import ScenarioConfig
from skyfleet.exceptions import ValidationError


def test_round_trip_is_identity():
    cfg = ScenarioConfig(seed=4).replace(sisw__ratio=0.1, rig__poses=((1.0, 2.0, 0.0, 1.0, 0.0),),
                                         rig__n_drones=1, collaboration__budget_bytes=5000)
    text = cfg.to_json()
    back = ScenarioConfig.from_json(text)
    assert back == cfg
    assert back.to_json() == text


def test_defaults():
    cfg = ScenarioConfig.from_dict({"seed": 0})
    assert (cfg.sisw.window, cfg.sisw.ratio) == (7, 0.25)
    assert cfg.rig.n_drones == 4 and cfg.rig.altitude == 50.0
    assert cfg.grid.spec().shape == (200, 200)


def test_missing_seed_names_the_field():
    with pytest.raises(ValidationError, match="seed") as exc:
        ScenarioConfig.from_dict({})
    assert exc.value.field == "seed"


@pytest.mark.parametrize("doc, path", [
    ({"seed": 0, "colour": 1}, "colour"),
    ({"seed": 0, "sisw": {"windw": 5}}, "sisw.windw"),
])
def test_unknown_keys_are_errors(doc, path):
    with pytest.raises(ValidationError) as exc:
        ScenarioConfig.from_dict(doc)
    assert exc.value.field == path


@pytest.mark.parametrize("doc, path", [
    ({"seed": -1}, "seed"),
    ({"seed": 0, "sisw": {"window": 4}}, "sisw.window"),
    ({"seed": 0, "sisw": {"ratio": 0}}, "sisw.ratio"),
    ({"seed": 0, "sisw": {"window": "7"}}, "sisw.window"),
    ({"seed": 0, "collaboration": {"mode": "telepathy"}}, "collaboration.mode"),
    ({"seed": 0, "scene": {"car_height": [2.0, 1.0]}}, "scene.car_height"),
    ({"seed": 0, "gbg": {"mode": "lidar"}}, "gbg.mode"),
    ({"seed": 0, "rig": {"n_drones": 2, "poses": [[0, 0, 0, 1, 0]]}}, "rig.poses"),
])
def test_invalid_values_name_their_path(doc, path):
    with pytest.raises(ValidationError) as exc:
        ScenarioConfig.from_dict(doc)
    assert exc.value.field == path


def test_bad_json():
    with pytest.raises(ValidationError):
        ScenarioConfig.from_json("{seed: 1")


def test_hash_tracks_content():
    a = ScenarioConfig(seed=1)
    assert a.config_hash() == ScenarioConfig.from_json(a.to_json()).config_hash()
    assert a.config_hash() != a.replace(sisw__ratio=0.5).config_hash()
    assert len(a.config_hash()) == 16


def test_replace_with_dotted_paths():
    cfg = ScenarioConfig(seed=1).replace(grid__name="short", seed=9)
    assert cfg.grid.name == "short" and cfg.seed == 9
    assert cfg.grid.spec().resolution == 0.25
    with pytest.raises(ValidationError):
        cfg.replace(grid__name="medium")


def test_scene_params_carry_rig(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 2, "rig": {"altitude": 40.0}}))
    params = ScenarioConfig.load(path).scene_params()
    assert params.altitude == 40.0
