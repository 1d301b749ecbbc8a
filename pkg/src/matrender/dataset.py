"""Scene-set generation and the on-disk annotation formats.

A dataset is a list of scenes, each pairing one shape with one material
and one environment map. Families are balanced block-wise: every run of
seven consecutive scenes holds each family once, in an order drawn from a
per-block permutation. All other choices come from a Philox stream keyed by
``(seed, "scene", index)``, so growing ``total`` never reshuffles earlier
scenes.

Each rendered scene is written as::

    scene_<id>/
        train/r_<k>.png  test/r_<k>.png    tone-mapped radiance
        depth/r_<k>.exr  mask/r_<k>.png    ray-length depth and coverage
        transforms_train.json  transforms_test.json
        material.json  mesh.obj

where ``k`` is the camera's index on the Fibonacci lattice, unique across
both splits, so depth and mask files never collide.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import load_mesh, save_obj
from .images import HDR_SUFFIXES
from .materials import ALPHA_RANGE, DIFFUSE_RANGE, FAMILIES, IOR_FAMILY, PIGMENT_RANGE, ROUGH_FAMILIES
from .render import RenderSettings, render_image
from .rng import derive_seed, generator
from .scene import Camera, CameraConfig, CameraSet, SceneDesc, material_from_dict
from .spectra import IorTable, bundled_ior_dir, load_material_db

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

MESH_SUFFIXES = (".obj", ".ply")
MANIFEST_VERSION = 1
DATASET_SPP = 512
# conversion between Blender (-z forward, +y up) and COLMAP (+z forward, -y up) cameras
_FLIP_YZ = np.diag([1.0, -1.0, -1.0, 1.0])

# conventions recorded with every manifest so downstream tools need not guess
PROTOCOL = {
    "depth": "ray length along the pixel-centre ray, 0 for background",
    "normalization": "vertex bounding-box centre at origin, farthest vertex at radius 1",
    "tonemap": "clip to [0, 1] then gamma 1/2.2, 16-bit PNG",
    "camera_convention": "Blender: camera looks along -z with +y up; transform_matrix is camera-to-world",
    "family_balance": "each block of 7 consecutive scenes holds every family once",
    "alpha_range": list(ALPHA_RANGE),
    "diffuse_range": list(DIFFUSE_RANGE),
    "pigment_range": list(PIGMENT_RANGE),
}


# ------------------------------------------------------------ assignment


def family_for_index(seed: int, index: int) -> str:
    block, slot = divmod(index, len(FAMILIES))
    perm = generator(seed, "families", block).permutation(len(FAMILIES))
    return FAMILIES[int(perm[slot])]


@dataclass(frozen=True)
class SceneEntry:
    """One scene's assignment; names are relative to the configured directories."""

    index: int
    shape: str
    envmap: str
    material: dict
    seed: int

    @property
    def scene_id(self) -> str:
        return f"{self.index:04d}"

    @property
    def family(self) -> str:
        return self.material["family"]

    def to_dict(self) -> dict:
        return {"id": self.scene_id, **asdict(self)}


@dataclass(frozen=True)
class DatasetManifest:
    seed: int
    scenes: tuple[SceneEntry, ...]
    cameras: CameraConfig = CameraConfig()
    render: dict = field(default_factory=dict)

    @property
    def counts(self) -> dict[str, int]:
        c = {f: 0 for f in FAMILIES}
        for s in self.scenes:
            c[s.family] += 1
        return c

    def to_dict(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "seed": self.seed,
            "total": len(self.scenes),
            "counts": self.counts,
            "cameras": asdict(self.cameras),
            "render": self.render,
            "protocol": PROTOCOL,
            "scenes": [s.to_dict() for s in self.scenes],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_json().encode("utf-8"))

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        scenes = tuple(
            SceneEntry(s["index"], s["shape"], s["envmap"], s["material"], s["seed"]) for s in d["scenes"]
        )
        return cls(d["seed"], scenes, CameraConfig(**d["cameras"]), d.get("render", {}))


def _draw_material(family: str, db: dict[str, list[IorTable]], rng: np.random.Generator) -> dict:
    m = {"family": family}
    if family == "diffuse":
        m["diffuse_reflectance"] = float(rng.uniform(*DIFFUSE_RANGE))
        return m
    tables = db[IOR_FAMILY[family]]
    table = tables[int(rng.integers(len(tables)))]
    m["material_id"] = table.material_id
    m["ior_family"] = table.family
    if family in ROUGH_FAMILIES:
        m["alpha"] = float(rng.uniform(*ALPHA_RANGE))
    if family in ("plastic", "rough_plastic"):
        m["pigment_albedo"] = [float(x) for x in rng.uniform(*PIGMENT_RANGE, size=3)]
    return m


def generate_scene_set(shapes, material_db: dict[str, list[IorTable]], envmaps, total: int, seed: int,
                       cameras: CameraConfig = CameraConfig(), render: dict | None = None) -> DatasetManifest:
    """Assign shape, material and lighting to ``total`` scenes.

    Shapes are used in order (scene ``i`` gets shape ``i mod len(shapes)``)
    so every scene has its own shape whenever enough are supplied. Material
    table, roughness, reflectance, pigment and environment map are drawn
    uniformly per scene.
    """
    shapes = [str(s) for s in shapes]
    envmaps = [str(e) for e in envmaps]
    if not shapes:
        raise ValueError("no shapes supplied")
    if not envmaps:
        raise ValueError("no environment maps supplied")
    if total < 1:
        raise ValueError("total must be at least 1")
    for fam in ("conductor", "dielectric", "plastic"):
        if not material_db.get(fam):
            raise ValueError(f"material database has no {fam} tables")
    scenes = []
    for i in range(total):
        family = family_for_index(seed, i)
        rng = generator(seed, "scene", i)
        material = _draw_material(family, material_db, rng)
        env = envmaps[int(rng.integers(len(envmaps)))]
        scenes.append(SceneEntry(i, shapes[i % len(shapes)], env, material, derive_seed(seed, "scene", i) >> 33))
    return DatasetManifest(int(seed), tuple(scenes), cameras, dict(render or {}))


# ----------------------------------------------------------- config file


@dataclass(frozen=True)
class DatasetConfig:
    """Inputs for ``generate``: asset directories, scene count and overrides."""

    shape_dir: Path
    envmap_dir: Path
    ior_dir: Path | None = None
    total: int = 7
    seed: int = 0
    cameras: CameraConfig = CameraConfig()
    render: dict = field(default_factory=lambda: {"spp": DATASET_SPP})

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "DatasetConfig":
        base = Path(base_dir)
        try:
            shape_dir, envmap_dir = base / d["shape_dir"], base / d["envmap_dir"]
        except KeyError as exc:
            raise ValueError(f"dataset config is missing required key {exc}") from None
        render = {"spp": DATASET_SPP, **d.get("render", {})}
        RenderSettings(**render)  # validate early
        ior = d.get("ior_dir")
        return cls(shape_dir, envmap_dir, base / ior if ior else None, int(d.get("total", 7)),
                   int(d.get("seed", 0)), CameraConfig(**d.get("cameras", {})), render)

    @classmethod
    def load(cls, path) -> "DatasetConfig":
        path = Path(path)
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh), path.parent)

    def to_dict(self) -> dict:
        return {
            "shape_dir": str(self.shape_dir),
            "envmap_dir": str(self.envmap_dir),
            "ior_dir": str(self.ior_dir or bundled_ior_dir()),
            "total": self.total,
            "seed": self.seed,
            "cameras": asdict(self.cameras),
            "render": self.render,
        }

    def shapes(self) -> list[str]:
        return _list_files(self.shape_dir, MESH_SUFFIXES)

    def envmaps(self) -> list[str]:
        return _list_files(self.envmap_dir, HDR_SUFFIXES)

    def manifest(self, db=None) -> DatasetManifest:
        db = db if db is not None else load_material_db(self.ior_dir)
        return generate_scene_set(self.shapes(), db, self.envmaps(), self.total, self.seed, self.cameras, self.render)


def _list_files(directory: Path, suffixes) -> list[str]:
    if not directory.is_dir():
        raise FileNotFoundError(f"directory not found: {directory}")
    return sorted(p.name for p in directory.iterdir() if p.suffix.lower() in suffixes)


# ---------------------------------------------------- transforms / COLMAP


def frame_name(camera: Camera) -> str:
    return f"r_{camera.index}"


def write_transforms(cameras: CameraSet, scene_dir) -> dict[str, Path]:
    """Write NeRF-synthetic style ``transforms_{train,test}.json``."""
    root = Path(scene_dir)
    root.mkdir(parents=True, exist_ok=True)
    paths = {}
    for tag in ("train", "test"):
        cams = [c for c in cameras if c.tag == tag]
        ref = cameras[0]
        doc = {
            "camera_angle_x": ref.fov_x,
            "w": ref.width,
            "h": ref.height,
            "fl_x": ref.focal,
            "fl_y": ref.focal,
            "cx": 0.5 * ref.width,
            "cy": 0.5 * ref.height,
            "frames": [
                {"file_path": f"./{tag}/{frame_name(c)}", "transform_matrix": c.pose.tolist()} for c in cams
            ],
        }
        paths[tag] = root / f"transforms_{tag}.json"
        paths[tag].write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return paths


def _frame_index(file_path: str) -> int:
    stem = Path(file_path).name
    if not stem.startswith("r_"):
        raise ValueError(f"unexpected frame name {file_path!r}")
    return int(Path(stem).stem[2:])


def read_transforms(scene_dir) -> CameraSet:
    """Rebuild the camera set from a scene's transforms files."""
    root = Path(scene_dir)
    cams = []
    for tag in ("train", "test"):
        path = root / f"transforms_{tag}.json"
        if not path.is_file():
            raise FileNotFoundError(f"missing {path}")
        doc = json.loads(path.read_text(encoding="utf-8"))
        fov = float(doc["camera_angle_x"])
        res = (int(doc["w"]), int(doc["h"]))
        for fr in doc["frames"]:
            cams.append(Camera(np.array(fr["transform_matrix"]), fov, res, tag, _frame_index(fr["file_path"])))
    cams.sort(key=lambda c: c.index)
    radius = float(np.linalg.norm(cams[0].position)) if cams else 0.0
    return CameraSet(tuple(cams), radius)


def _c2w_to_colmap(c2w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w2c = np.linalg.inv(c2w @ _FLIP_YZ)
    q = Rotation.from_matrix(w2c[:3, :3]).as_quat()  # x, y, z, w
    q = np.array([q[3], q[0], q[1], q[2]])
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q, w2c[:3, 3]


def _colmap_to_c2w(qvec, tvec) -> np.ndarray:
    w, x, y, z = qvec
    w2c = np.eye(4)
    w2c[:3, :3] = Rotation.from_quat([x, y, z, w]).as_matrix()
    w2c[:3, 3] = tvec
    return np.linalg.inv(w2c) @ _FLIP_YZ


def convert_to_colmap(scene_dir, out_dir=None) -> Path:
    """Write a COLMAP text model (``cameras.txt``, ``images.txt``, ``points3D.txt``)."""
    root = Path(scene_dir)
    cams = read_transforms(root)
    out = Path(out_dir) if out_dir is not None else root / "colmap"
    out.mkdir(parents=True, exist_ok=True)
    ref = cams[0]
    k = ref.intrinsics()
    params = " ".join(repr(float(x)) for x in (k[0, 0], k[1, 1], k[0, 2], k[1, 2]))
    (out / "cameras.txt").write_text(
        "# Camera list with one line of data per camera:\n"
        "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n"
        f"1 PINHOLE {ref.width} {ref.height} {params}\n",
        encoding="utf-8",
    )
    lines = [
        "# Image list with two lines of data per image:",
        "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME",
        "#   POINTS2D[] as (X, Y, POINT3D_ID)",
    ]
    for image_id, c in enumerate(cams, start=1):
        q, t = _c2w_to_colmap(c.pose)
        vals = " ".join(repr(float(x)) for x in (*q, *t))
        lines += [f"{image_id} {vals} 1 {c.tag}/{frame_name(c)}.png", ""]
    (out / "images.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "points3D.txt").write_text("# 3D point list (empty: poses are known)\n", encoding="utf-8")
    return out


def read_colmap(colmap_dir) -> CameraSet:
    """Cameras from a COLMAP text model written by ``convert_to_colmap``."""
    root = Path(colmap_dir)
    for name in ("cameras.txt", "images.txt"):
        if not (root / name).is_file():
            raise FileNotFoundError(f"missing {root / name}")
    intr = {}
    for line in (root / "cameras.txt").read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        cid, model, w, h, *params = line.split()
        if model != "PINHOLE":
            raise ValueError(f"unsupported camera model {model}")
        fx = float(params[0])
        intr[cid] = ((int(w), int(h)), 2.0 * math.atan(0.5 * int(w) / fx))
    lines = [ln for ln in (root / "images.txt").read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
    cams = []
    # data lines alternate with (possibly empty) 2D point lines
    for line in lines[0::2]:
        parts = line.split()
        if not parts:
            continue
        q, t = [float(x) for x in parts[1:5]], [float(x) for x in parts[5:8]]
        res, fov = intr[parts[8]]
        tag, stem = parts[9].split("/")
        cams.append(Camera(_colmap_to_c2w(q, t), fov, res, tag, _frame_index(stem)))
    cams.sort(key=lambda c: c.index)
    return CameraSet(tuple(cams), float(np.linalg.norm(cams[0].position)) if cams else 0.0)


def colmap_to_transforms(colmap_dir, scene_dir) -> dict[str, Path]:
    """Inverse of ``convert_to_colmap``: rewrite the transforms files."""
    return write_transforms(read_colmap(colmap_dir), scene_dir)


# ------------------------------------------------------------- rendering


def scene_desc(entry: SceneEntry, config: DatasetConfig, db) -> SceneDesc:
    return SceneDesc(config.shape_dir / entry.shape, material_from_dict(entry.material, db),
                     config.envmap_dir / entry.envmap, cameras=config.cameras, seed=entry.seed)


def render_scene(desc: SceneDesc, scene_dir, settings: RenderSettings, threads: int | None = None,
                 extra: dict | None = None, exr: bool = False) -> Path:
    """Render every camera of one scene and write all annotations under ``scene_dir``."""
    root = Path(scene_dir)
    root.mkdir(parents=True, exist_ok=True)
    scene = desc.build()
    cameras = desc.cameras.build()
    save_obj(scene.mesh, root / "mesh.obj")
    ref = cameras[0]
    info = {
        "material": desc.material.to_dict(),
        "envmap": str(desc.envmap_path) if desc.envmap_path is not None else list(desc.envmap_constant),
        "seed": desc.seed,
        "render": settings.to_dict(),
        "camera_angle_x": ref.fov_x,
        "intrinsics": {"w": ref.width, "h": ref.height, "fl_x": ref.focal, "fl_y": ref.focal,
                       "cx": 0.5 * ref.width, "cy": 0.5 * ref.height},
        "normalization": scene.transform.to_dict() if scene.transform is not None else None,
        **(extra or {}),
    }
    (root / "material.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_transforms(cameras, root)
    for cam in cameras:
        out = render_image(scene, cam, settings, threads=threads)
        out.save(root, frame_name(cam), exr=exr, rgb_dir=cam.tag)
    return root


def render_dataset(config: DatasetConfig, out_dir, threads: int = 1, db=None,
                   manifest: DatasetManifest | None = None) -> DatasetManifest:
    """Render every scene of the manifest, then write ``manifest.json``.

    Scenes run in parallel when there are at least as many as workers;
    otherwise each scene parallelises over its tiles. Either way the output
    does not depend on ``threads``.
    """
    db = db if db is not None else load_material_db(config.ior_dir)
    manifest = manifest or config.manifest(db)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def run(entry: SceneEntry, tile_threads: int):
        settings = RenderSettings(**{**config.render, "seed": entry.seed})
        desc = scene_desc(entry, config, db)
        log.info("scene %s: %s on %s", entry.scene_id, entry.family, entry.shape)
        render_scene(desc, out / f"scene_{entry.scene_id}", settings, tile_threads,
                     extra={"scene_id": entry.scene_id, "shape": entry.shape})

    if threads > 1 and len(manifest.scenes) >= threads:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda e: run(e, 1), manifest.scenes))
    else:
        for entry in manifest.scenes:
            run(entry, threads)
    manifest.save(out / "manifest.json")
    return manifest


def load_scene_mesh(scene_dir):
    """The normalised ground-truth mesh stored with a rendered scene."""
    return load_mesh(Path(scene_dir) / "mesh.obj")

