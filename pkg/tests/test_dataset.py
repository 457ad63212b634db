import json
import shutil

import numpy as np
import pytest

from vnmix import dataset as D
from vnmix.fileio import (read_param_blob, read_png, read_raster, write_param_blob, write_png,
                          write_raster)


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    return D.synthesize_dataset(4, (16, 16), 7, root), root


def test_counts_and_roles(small):
    m, root = small
    assert m.n_images() == 4 * 7
    for e in m.scenes:
        assert set(e["roles"]) == set(D.roles_for(e["phase"]))
    assert len(list(root.glob("scene_*/*.f32"))) == 4 * 7 + 8  # plus one deviation map per entry


def test_paper_scale_count():
    assert D.n_test_scenes(102) == 14
    assert D.n_test_scenes(32) == 5
    assert D.n_test_scenes(4) == 1


def test_fresh_dataset_validates(small):
    assert D.validate_manifest(small[1]) == []


def test_manifest_roundtrip(small):
    m, root = small
    again = D.Manifest.load(root)
    assert again.to_dict() == m.to_dict()
    assert again.config_hash == D.config_hash(m.config)


def test_split_disjoint_by_scene(small):
    m, _ = small
    train, test = set(m.split["train"]), set(m.split["test"])
    assert not train & test
    scene = {e["id"]: e["scene"] for e in m.scenes}
    assert not {scene[i] for i in train} & {scene[i] for i in test}


def test_night_long_exposure_is_brighter(small):
    m, _ = small
    for s in D.load_batch(m, m.ids(phase="night")):
        assert s.vis_long.mean() > s.vis.mean()


def test_load_batch_order_and_schema(small):
    m, _ = small
    ids = list(reversed(m.ids()))[:3]
    batch = D.load_batch(m, ids)
    assert [s.id for s in batch] == ids
    day = D.load_batch(m, m.ids(phase="day")[:1])[0]
    assert day.vis_long is None and day.target is day.vis
    with pytest.raises(D.DatasetError):
        D.load_batch(m, ["9999-day"])
    with pytest.raises(D.DatasetError):
        D.load_batch(m, m.ids(phase="day")[:1], phase="night")


def test_deterministic_rerun(tmp_path):
    a = D.synthesize_dataset(4, (16, 16), 3, tmp_path / "a")
    D.synthesize_dataset(4, (16, 16), 3, tmp_path / "b")
    for path in sorted((tmp_path / "a").rglob("*")):
        if path.is_file():
            twin = tmp_path / "b" / path.relative_to(tmp_path / "a")
            assert path.read_bytes() == twin.read_bytes(), path
    assert a.n_images() == 28


def test_too_few_scenes(tmp_path):
    with pytest.raises(D.DatasetError):
        D.synthesize_dataset(1, (8, 8), 0, tmp_path)


def test_unwritable_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(D.DatasetError):
        D.synthesize_dataset(2, (8, 8), 0, blocker / "sub")


def test_validate_reports_missing_file(small, tmp_path):
    root = tmp_path / "copy"
    shutil.copytree(small[1], root)
    victim = small[0].scenes[1]
    (root / victim["roles"]["nir"]).unlink()
    issues = D.validate_manifest(root)
    assert any(v.kind == "missing_role" and v.scene == victim["id"] and v.role == "nir" for v in issues)


def test_validate_reports_split_overlap(small, tmp_path):
    root = tmp_path / "copy"
    shutil.copytree(small[1], root)
    doc = json.loads((root / "manifest.json").read_text())
    doc["split"]["test"].append(doc["split"]["train"][0])
    (root / "manifest.json").write_text(json.dumps(doc))
    assert any(v.kind == "split" for v in D.validate_manifest(root))


def test_validate_without_manifest(tmp_path):
    issues = D.validate_manifest(tmp_path)
    assert len(issues) == 1 and issues[0].kind == "manifest"


def test_noise_free_dataset_additivity(tmp_path):
    D.synthesize_dataset(3, (16, 16), 1, tmp_path, noise=False, previews=False)
    assert D.validate_manifest(tmp_path) == []


def test_validate_catches_broken_additivity(tmp_path):
    m = D.synthesize_dataset(2, (8, 8), 1, tmp_path, noise=False, previews=False)
    rel = m.scenes[0]["roles"]["mixed"]
    data, meta = read_raster(tmp_path / rel)
    write_raster(tmp_path / rel, np.clip(data + 0.1, 0, 1), meta["role"], meta["seed"], meta["config"])
    assert any(v.kind == "additivity" for v in D.validate_manifest(tmp_path))


# -- file formats ---------------------------------------------------------------------------
def test_raster_resave_is_byte_identical(small, tmp_path):
    m, root = small
    rel = m.scenes[0]["roles"]["mixed"]
    data, meta = read_raster(root / rel)
    out = write_raster(tmp_path / "copy", data, meta["role"], meta["seed"], meta["config"])
    assert out.read_bytes() == (root / rel).read_bytes()
    assert out.with_suffix(".json").read_text() == (root / rel).with_suffix(".json").read_text()


def test_raster_sidecar_fields(small):
    m, root = small
    _, meta = read_raster(root / m.scenes[0]["roles"]["vis"])
    assert {"height", "width", "channels", "role", "seed", "config"} <= set(meta)


def test_png_roundtrip(tmp_path):
    x = np.random.default_rng(0).uniform(size=(5, 7, 3))
    write_png(tmp_path / "a.png", x)
    np.testing.assert_allclose(read_png(tmp_path / "a.png"), np.round(x * 255) / 255, atol=1e-6)
    write_png(tmp_path / "b.png", x, bits=16)
    np.testing.assert_allclose(read_png(tmp_path / "b.png"), x, atol=1e-5)


def test_param_blob_roundtrip(tmp_path):
    params = {"a.w": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.ones(4, dtype=np.float32)}
    write_param_blob(tmp_path / "p.params", params)
    back = read_param_blob(tmp_path / "p.params")
    assert back.keys() == params.keys()
    for k in params:
        assert back[k].tobytes() == params[k].tobytes()
    index = json.loads((tmp_path / "p.params.json").read_text())
    assert index[1] == {"name": "b", "shape": [4], "offset": 6}
