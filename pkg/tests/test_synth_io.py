from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from multirecon.errors import DataError
from multirecon.evalkit.synth import SceneSpec, generate_synthetic_scene, load_scene, occlusion_fraction, save_scene
from multirecon.io import load_pfm, load_png, save_pfm, save_png


@settings(max_examples=25, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(-1e6, 1e6, width=32)))
def test_pfm_roundtrip(a):
    import tempfile, pathlib

    with tempfile.TemporaryDirectory() as d:
        p = pathlib.Path(d) / "x.pfm"
        save_pfm(p, a)
        np.testing.assert_array_equal(load_pfm(p), a)


def test_pfm_keeps_infinity(tmp_path):
    a = np.array([[1.0, np.inf], [2.5, -3.0]])
    save_pfm(tmp_path / "a.pfm", a)
    np.testing.assert_array_equal(load_pfm(tmp_path / "a.pfm"), a)


def test_png_roundtrip(tmp_path, rng):
    m = rng.random((5, 7)) < 0.5
    save_png(tmp_path / "m.png", m)
    np.testing.assert_array_equal(load_png(tmp_path / "m.png", as_mask=True), m)
    img = np.round(rng.random((5, 7, 3)) * 255) / 255
    save_png(tmp_path / "i.png", img)
    np.testing.assert_allclose(load_png(tmp_path / "i.png"), img, atol=1e-12)
    with pytest.raises(DataError):
        load_png(tmp_path / "nothing.png")


def test_scene_roundtrip(tiny_scene, tmp_path):
    save_scene(tiny_scene, tmp_path)
    sc = load_scene(tmp_path)
    np.testing.assert_allclose(sc.images, tiny_scene.images, atol=0.5 / 255 + 1e-12)
    np.testing.assert_array_equal(sc.masks, tiny_scene.masks)
    np.testing.assert_allclose(sc.depths, tiny_scene.depths.astype(np.float32))
    for fa, fb in zip(sc.poses, tiny_scene.poses):
        for a, b in zip(fa, fb):
            np.testing.assert_allclose(a.rotations.numpy(), b.rotations.numpy())
    assert len(sc.canonical_meshes) == 2 and sc.meshes[2][1].faces.shape == tiny_scene.meshes[2][1].faces.shape


def test_scene_loader_errors(tiny_scene, tmp_path):
    with pytest.raises(DataError):
        load_scene(tmp_path / "empty")
    save_scene(tiny_scene, tmp_path)
    meta = json.loads((tmp_path / "scene.json").read_text())
    meta["format_version"] = 99
    (tmp_path / "scene.json").write_text(json.dumps(meta))
    with pytest.raises(DataError):
        load_scene(tmp_path)
    meta["format_version"] = 1
    (tmp_path / "scene.json").write_text(json.dumps(meta))
    (tmp_path / "frames" / "00001.png").unlink()
    with pytest.raises(DataError):
        load_scene(tmp_path)


def test_generation_is_deterministic_and_occludes():
    kw = dict(num_persons=2, preset="occluding-cross", num_frames=6, resolution=20, samples=4, mesh_resolution=24, seed=5)
    a = generate_synthetic_scene(**kw)
    b = generate_synthetic_scene(**kw)
    np.testing.assert_array_equal(a.images, b.images)
    occ = max(max(occlusion_fraction(a, f, 0, 1), occlusion_fraction(a, f, 1, 0)) for f in range(6))
    assert occ > 0.05
    # masks are a partition of the covered pixels
    assert not (a.masks[:, 0] & a.masks[:, 1]).any()


def test_scene_spec_validation():
    with pytest.raises(ValueError):
        SceneSpec(num_persons=5)
    with pytest.raises(ValueError):
        SceneSpec(preset="dance")


def test_overlap_preset_is_static_and_overlapping():
    sc = generate_synthetic_scene(num_persons=2, preset="overlap", num_frames=2, resolution=24, samples=4, mesh_resolution=24, seed=0)
    np.testing.assert_array_equal(sc.poses[0][1].rotations.numpy(), sc.poses[1][1].rotations.numpy())
    assert occlusion_fraction(sc, 0, 0, 1) > 0.02
    assert sc.poses[0][0].translation[2] < sc.poses[0][1].translation[2]
