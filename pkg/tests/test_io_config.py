import json
import os

import numpy as np
import pytest

from conftest import chain
from meshpose import io, synthetic
from meshpose.align import KeypointObservation, TargetSet
from meshpose.config import OUTPUT_ENV, config_from_dict, load_config
from meshpose.errors import InvalidInputError
from meshpose.mvcam import make_ring_rig
from meshpose.rig import Pose


@pytest.fixture
def rig(rng):
    return synthetic.quadruped_rig(rng, 9, surface_per_bone=2)


def test_rig_round_trip(rig):
    doc = json.loads(io.dumps(io.rig_to_dict(rig.skeleton, rig.mesh, rig.bindings)))
    sk, mesh, bindings = io.rig_from_dict(doc, rig.mesh.vertices, rig.mesh.faces)
    np.testing.assert_array_equal(sk.heads, rig.skeleton.heads)
    assert sk.names == rig.skeleton.names
    assert mesh.weights == rig.mesh.weights
    assert bindings == rig.bindings


def test_unsorted_bones_are_remapped():
    doc = {"bones": [
        {"id": 10, "name": "tip", "parent": 4, "rest_head": [1, 0, 0], "rest_tail": [2, 0, 0]},
        {"id": 4, "name": "base", "parent": None, "rest_head": [0, 0, 0], "rest_tail": [1, 0, 0]}],
        "bindings": [{"keypoint_id": "t", "bone": 10, "fraction": 1.0}],
        "weights": [[[10, 1.0]], [[4, 0.5], [10, 0.5]], [[4, 1.0]]]}
    sk, mesh, b = io.rig_from_dict(doc, np.eye(3), [[0, 1, 2]])
    assert sk.names == ["base", "tip"]
    assert b[0].bone == 1
    assert mesh.weights[0] == [(1, 1.0)]


@pytest.mark.parametrize("mutate, field", [
    (lambda d: d["bones"][0].pop("rest_head"), "bones[0].rest_head"),
    (lambda d: d["bones"][1].update(parent=99), "bones.parent"),
    (lambda d: d["bindings"][0].update(fraction=2.0), "bindings[0]"),
    (lambda d: d["weights"].pop(), "weights"),
    (lambda d: d["bindings"].append(dict(d["bindings"][0])), "bindings.keypoint_id"),
    (lambda d: d.pop("bones"), "rig.bones"),
])
def test_rig_schema_errors_name_the_field(rig, mutate, field):
    doc = json.loads(io.dumps(io.rig_to_dict(rig.skeleton, rig.mesh, rig.bindings)))
    mutate(doc)
    with pytest.raises(InvalidInputError) as info:
        io.rig_from_dict(doc, rig.mesh.vertices, rig.mesh.faces)
    assert info.value.field.startswith(field)


def test_cameras_round_trip():
    rig = make_ring_rig(5, elevation=0.2, radius=3.5, focal=512.0, image_size=(640, 480))
    back = io.cameras_from_dict(json.loads(io.dumps(io.cameras_to_dict(rig))))
    for a, b in zip(rig, back):
        np.testing.assert_array_equal(a.rotation, b.rotation)
        assert a.image_size == b.image_size


def test_targets_round_trip_with_invisible(rng):
    obs = (KeypointObservation(0, "a", rng.normal(size=2) * 100),
           KeypointObservation(1, "b", [np.nan, np.nan], visible=False, confidence=0.5))
    doc = json.loads(io.dumps(io.targets_to_dict(TargetSet(obs), n_views=3)))
    assert [v["view_id"] for v in doc["views"]] == [0, 1, 2]
    back = io.targets_from_dict(doc)
    np.testing.assert_array_equal(back.observations[0].position, obs[0].position)
    assert not back.observations[1].visible and back.observations[1].confidence == 0.5


def test_targets_schema_errors():
    with pytest.raises(InvalidInputError) as info:
        io.targets_from_dict({"views": [{"view_id": 0, "keypoints": [{"id": "a", "u": 1.0}]}]})
    assert info.value.field == "views[0].keypoints[0].v"


def test_float_text_is_exact(rng):
    x = rng.normal(size=50) * 10.0 ** rng.integers(-8, 8, size=50)
    np.testing.assert_array_equal(json.loads(io.dumps(x.tolist())), x)


def test_obj_round_trip(tmp_path, rng):
    v = rng.normal(size=(6, 3))
    f = np.array([[0, 1, 2], [3, 4, 5]])
    path = tmp_path / "m.obj"
    path.write_text(io.format_obj(v, f))
    v2, f2 = io.read_obj(path)
    np.testing.assert_allclose(v2, v, rtol=1e-8)
    np.testing.assert_array_equal(f2, f)
    lines = path.read_text().splitlines()
    assert lines[0] == "v " + " ".join(format(x, ".9g") for x in v[0])
    assert lines[-1] == "f 4 5 6"


def test_pose_round_trip():
    sk = chain(3)
    pose = Pose(np.arange(9.0).reshape(3, 3) / 10, [1, 2, 3])
    back = io.pose_from_dict(json.loads(io.dumps(io.pose_to_dict(pose, sk))), sk)
    np.testing.assert_array_equal(back.rotations, pose.rotations)
    with pytest.raises(InvalidInputError):
        io.pose_from_dict({"rotations": [[0, 0, 0]]}, sk)


# -- config -------------------------------------------------------------------

def test_config_defaults():
    cfg = config_from_dict({})
    echo = cfg.echo()
    assert echo["diffusion"]["guidance_scale"] == 7.5
    assert echo["diffusion"]["schedule"]["steps"] == 50
    assert echo["views"]["n_views"] == 8
    assert echo["optimizer"]["learning_rate"] == 0.05
    assert echo["optimizer"]["max_iterations"] == 300
    assert echo["root_attenuation"] == 0.3
    assert "output_dir" not in echo


@pytest.mark.parametrize("doc, field", [
    ({"bogus": 1}, "bogus"),
    ({"optimizer": {"learning_rate": "fast"}}, "optimizer.learning_rate"),
    ({"optimizer": {"lr_schedule": "step"}}, "optimizer.lr_schedule"),
    ({"targets": {"drop_rate": 1.0}}, "targets.drop_rate"),
    ({"diffusion": {"depth": 60}}, "diffusion.depth"),
    ({"diffusion": {"depth_selection": {"candidates": [5, 70]}}},
     "diffusion.depth_selection.candidates"),
    ({"seed": True}, "seed"),
])
def test_config_errors_name_the_field(doc, field):
    with pytest.raises(InvalidInputError) as info:
        config_from_dict(doc)
    assert info.value.field == field


def test_fallback_may_be_null():
    cfg = config_from_dict({"diffusion": {"depth_selection": {"fallback": None}}})
    assert cfg.diffusion.depth_selection.fallback is None


def test_output_dir_precedence(tmp_path, monkeypatch):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"output_dir": "from_file", "paths": {"rig": "r.json"}}))
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    assert load_config(path).output_dir == "from_file"
    monkeypatch.setenv(OUTPUT_ENV, "from_env")
    assert load_config(path).output_dir == "from_env"
    assert load_config(path, out="from_flag").output_dir == "from_flag"
    assert load_config(path).path("rig") == os.path.join(str(tmp_path), "r.json")
