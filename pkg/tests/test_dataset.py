import json

import numpy as np
import pytest

from matrender import spectra
from matrender.dataset import (
    DatasetConfig,
    DatasetManifest,
    colmap_to_transforms,
    convert_to_colmap,
    family_for_index,
    generate_scene_set,
    read_colmap,
    read_transforms,
    render_dataset,
    write_transforms,
)
from matrender.images import read_exr, read_image
from matrender.materials import FAMILIES
from matrender.scene import CameraConfig, Camera, CameraSet, look_at, make_cameras


@pytest.fixture(scope="module")
def db():
    return spectra.load_material_db()


def manifest(db, total, seed=0, shapes=("a.obj",), envs=("e.exr",)):
    return generate_scene_set(list(shapes), db, list(envs), total, seed)


def test_1001_scenes_balanced(db):
    m = manifest(db, 1001, seed=5)
    assert m.counts == {f: 143 for f in FAMILIES}


def test_seven_scenes_one_per_family(db):
    shapes = [f"s{i}.obj" for i in range(7)]
    m = manifest(db, 7, shapes=shapes)
    assert sorted(s.family for s in m.scenes) == sorted(FAMILIES)
    assert [s.shape for s in m.scenes] == shapes


@pytest.mark.parametrize("total", [1, 2, 6, 8, 13, 50, 99])
def test_balance_for_any_total(db, total):
    c = manifest(db, total, seed=total).counts.values()
    assert max(c) - min(c) <= 1 and sum(c) == total


def test_manifest_byte_identical(db, tmp_path):
    a = manifest(db, 30, seed=11, envs=("x.hdr", "y.exr"))
    b = manifest(db, 30, seed=11, envs=("x.hdr", "y.exr"))
    a.save(tmp_path / "a.json")
    b.save(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert manifest(db, 30, seed=12).to_json() != a.to_json()


def test_prefix_stability(db):
    # adding scenes never reshuffles the earlier ones
    small, big = manifest(db, 10, seed=3), manifest(db, 40, seed=3)
    assert small.scenes == big.scenes[:10]


def test_manifest_roundtrip(db, tmp_path):
    m = manifest(db, 14, seed=2)
    m.save(tmp_path / "m.json")
    back = DatasetManifest.load(tmp_path / "m.json")
    assert back.to_json() == m.to_json()


def test_parameter_ranges(db):
    m = manifest(db, 700, seed=9, envs=[f"e{i}.exr" for i in range(5)])
    ids = {fam: {t.material_id for t in tables} for fam, tables in db.items()}
    for s in m.scenes:
        mat = s.material
        if s.family == "diffuse":
            assert 0.15 <= mat["diffuse_reflectance"] <= 0.85
        else:
            assert mat["material_id"] in ids[mat["ior_family"]]
        if s.family.startswith("rough"):
            assert 0.1 <= mat["alpha"] <= 0.5
        else:
            assert "alpha" not in mat
        if s.family.endswith("plastic"):
            assert all(0.2 <= c <= 0.8 for c in mat["pigment_albedo"])
    # every envmap gets used
    assert {s.envmap for s in m.scenes} == {f"e{i}.exr" for i in range(5)}


def test_family_permutation_per_block():
    for block in range(20):
        fams = [family_for_index(4, 7 * block + j) for j in range(7)]
        assert sorted(fams) == sorted(FAMILIES)


def test_empty_inputs_rejected(db):
    with pytest.raises(ValueError):
        generate_scene_set([], db, ["e.exr"], 7, 0)
    with pytest.raises(ValueError):
        generate_scene_set(["a.obj"], db, [], 7, 0)
    with pytest.raises(ValueError):
        generate_scene_set(["a.obj"], {**db, "plastic": []}, ["e.exr"], 7, 0)
    with pytest.raises(ValueError):
        generate_scene_set(["a.obj"], db, ["e.exr"], 0, 0)


# ------------------------------------------------------------- transforms


def test_write_transforms_layout(tmp_path):
    cams = make_cameras(50, 40, 2.5, 0.6911, (16, 12))
    paths = write_transforms(cams, tmp_path)
    train = json.loads(paths["train"].read_text())
    test = json.loads(paths["test"].read_text())
    assert len(train["frames"]) == 50 and len(test["frames"]) == 40
    assert train["camera_angle_x"] == 0.6911 and (train["w"], train["h"]) == (16, 12)
    names = [f["file_path"] for f in train["frames"] + test["frames"]]
    assert len(set(names)) == 90
    assert all(n.startswith("./train/r_") for n in names[:50])


def test_transforms_readback_exact(tmp_path):
    cams = make_cameras(10, 5, 3.0, 0.7, (8, 6))
    write_transforms(cams, tmp_path)
    back = read_transforms(tmp_path)
    assert [c.index for c in back] == list(range(15))
    for a, b in zip(cams, back):
        assert a.tag == b.tag and a.resolution == b.resolution and a.fov_x == b.fov_x
        assert np.max(np.abs(a.pose - b.pose)) < 1e-9


def test_pole_camera_translation(tmp_path):
    cam = Camera(look_at([0, 0, 2.5]), 0.6911, (8, 8), "train", 0)
    write_transforms(CameraSet((cam,), 2.5), tmp_path)
    m = np.array(json.loads((tmp_path / "transforms_train.json").read_text())["frames"][0]["transform_matrix"])
    assert np.allclose(m[:3, 3], [0, 0, 2.5])


def test_colmap_files(tmp_path):
    cams = make_cameras(50, 40, 2.5, 0.6911, (1600, 1200))
    write_transforms(cams, tmp_path)
    out = convert_to_colmap(tmp_path)
    cam_lines = [ln for ln in (out / "cameras.txt").read_text().splitlines() if not ln.startswith("#")]
    assert len(cam_lines) == 1 and cam_lines[0].split()[1] == "PINHOLE"
    data = [ln for ln in (out / "images.txt").read_text().splitlines() if not ln.startswith("#")][0::2]
    assert len(data) == 90
    for line in data:
        q = np.array([float(x) for x in line.split()[1:5]])
        assert abs(np.linalg.norm(q) - 1) < 1e-9
    points = [ln for ln in (out / "points3D.txt").read_text().splitlines() if not ln.startswith("#")]
    assert points == []


def test_colmap_convention(tmp_path):
    # a COLMAP camera looks along +z of its own frame, so the world origin
    # must land at positive camera-space z for every lattice camera
    cams = make_cameras(10, 5, 2.5, 0.7, (8, 6))
    write_transforms(cams, tmp_path)
    out = convert_to_colmap(tmp_path)
    from scipy.spatial.transform import Rotation

    for line in [ln for ln in (out / "images.txt").read_text().splitlines() if not ln.startswith("#")][0::2]:
        p = line.split()
        qw, qx, qy, qz, tx, ty, tz = map(float, p[1:8])
        r = Rotation.from_quat([qx, qy, qz, qw]).as_matrix()
        origin_cam = r @ np.zeros(3) + np.array([tx, ty, tz])
        assert abs(origin_cam[2] - 2.5) < 1e-9 and np.allclose(origin_cam[:2], 0, atol=1e-9)
        # world +z (up) projects to negative image y (towards the top row)
        up_cam = r @ np.array([0, 0, 1.0])
        assert up_cam[1] < 0


@pytest.mark.parametrize("seed", range(5))
def test_colmap_roundtrip_random_cameras(tmp_path, seed):
    rng = np.random.default_rng(seed)
    cams = []
    for i in range(30):
        pos = rng.normal(size=3)
        pos *= rng.uniform(1.5, 5.0) / np.linalg.norm(pos)
        target = rng.normal(scale=0.2, size=3)
        cams.append(Camera(look_at(pos, target), 0.8, (64, 48), "train" if i % 3 else "test", i))
    cams = CameraSet(tuple(cams), 3.0)
    write_transforms(cams, tmp_path / "a")
    colmap = convert_to_colmap(tmp_path / "a")
    colmap_to_transforms(colmap, tmp_path / "b")
    back = read_transforms(tmp_path / "b")
    for a, b in zip(cams, back):
        assert a.tag == b.tag and abs(a.fov_x - b.fov_x) < 1e-12
        assert np.max(np.abs(a.pose - b.pose)) < 1e-6


def test_missing_transforms(tmp_path):
    with pytest.raises(FileNotFoundError):
        convert_to_colmap(tmp_path)
    with pytest.raises(FileNotFoundError):
        read_colmap(tmp_path)


# -------------------------------------------------------------- rendering


def small_config(assets, total=3, seed=1):
    return DatasetConfig(assets / "shapes", assets / "envmaps", None, total, seed,
                         CameraConfig(2, 1, 2.5, 0.6911, 12, 8), {"spp": 2, "max_depth": 3})


def test_config_file(tmp_path, assets):
    (tmp_path / "cfg.toml").write_text(
        f'shape_dir = "{assets / "shapes"}"\nenvmap_dir = "{assets / "envmaps"}"\ntotal = 5\nseed = 4\n'
        "[cameras]\nwidth = 12\nheight = 8\n[render]\nspp = 4\n"
    )
    cfg = DatasetConfig.load(tmp_path / "cfg.toml")
    assert cfg.total == 5 and cfg.cameras.width == 12 and cfg.render["spp"] == 4
    assert cfg.shapes() == ["ball.obj", "box.obj"] and cfg.envmaps() == ["sky.exr", "studio.hdr"]
    (tmp_path / "bad.toml").write_text('shape_dir = "x"\n[render]\nspp = 0\n')
    with pytest.raises(ValueError):
        DatasetConfig.load(tmp_path / "bad.toml")


def test_render_dataset_layout(tmp_path, assets):
    cfg = small_config(assets)
    m = render_dataset(cfg, tmp_path / "out")
    for s in m.scenes:
        d = tmp_path / "out" / f"scene_{s.scene_id}"
        for name in ("transforms_train.json", "transforms_test.json", "material.json", "mesh.obj"):
            assert (d / name).is_file()
        cams = read_transforms(d)
        assert len(cams) == 3
        for c in cams:
            assert read_image(d / c.tag / f"r_{c.index}.png").shape == (8, 12, 3)
            depth = read_exr(d / "depth" / f"r_{c.index}.exr")
            mask = read_image(d / "mask" / f"r_{c.index}.png")
            assert np.array_equal(depth > 0, mask > 0.5)
        info = json.loads((d / "material.json").read_text())
        assert info["material"] == s.material and info["camera_angle_x"] == 0.6911
    assert (tmp_path / "out" / "manifest.json").read_text() == m.to_json()


def test_render_dataset_thread_independent(tmp_path, assets):
    cfg = small_config(assets, total=2)
    render_dataset(cfg, tmp_path / "a", threads=1)
    render_dataset(cfg, tmp_path / "b", threads=2)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
