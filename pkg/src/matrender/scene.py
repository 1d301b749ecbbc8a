"""Cameras on a Fibonacci hemisphere, HDR environment lighting and scene files.

World space is right-handed with +z up. Cameras follow the Blender
convention: in camera space the view direction is -z and +y is up, so the
pose matrix columns are (right, up, -forward, position).

Environment maps are equirectangular: column ``j`` covers azimuth
``phi = atan2(y, x)`` in ``[2*pi*j/W, 2*pi*(j+1)/W)`` (mod 2*pi) and row ``i``
covers polar angle ``theta = acos(z)`` in ``[pi*i/H, pi*(i+1)/H)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .geometry import Bvh, TriangleMesh, build_bvh, load_mesh, normalize_to_unit_sphere
from .images import read_hdr_image
from .materials import FAMILIES, IOR_FAMILY, MaterialSpec
from .rng import RandomStream, next_float
from .spectra import IorTable, load_material_db

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0
DEFAULT_RADIUS = 2.5
DEFAULT_FOV_X = 0.6911
DEFAULT_RESOLUTION = (1600, 1200)
TAGS = ("train", "test")
INV_4PI = 1.0 / (4.0 * math.pi)

_jit = njit(cache=True, nogil=True)


# ------------------------------------------------------------------ cameras


def fibonacci_hemisphere(n: int) -> np.ndarray:
    """``n`` unit directions on the upper hemisphere, (n, 3)."""
    if n < 1:
        raise ValueError("need at least one direction")
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (i + 0.5) / n
    phi = 2.0 * math.pi * i * (1.0 - 1.0 / GOLDEN_RATIO)
    r = np.sqrt(1.0 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def look_at(position, target=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Camera-to-world pose looking from ``position`` at ``target`` with +z up."""
    pos = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - pos
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, (0.0, 0.0, 1.0))
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, (1.0, 0.0, 0.0))
    right /= np.linalg.norm(right)
    up = np.cross(right, forward)
    pose = np.eye(4)
    pose[:3, 0], pose[:3, 1], pose[:3, 2], pose[:3, 3] = right, up, -forward, pos
    return pose


@dataclass(frozen=True, eq=False)
class Camera:
    pose: np.ndarray
    fov_x: float
    resolution: tuple[int, int]
    tag: str = "train"
    index: int = 0

    def __post_init__(self):
        pose = np.array(self.pose, dtype=np.float64)
        if pose.shape != (4, 4):
            raise ValueError("pose must be 4x4")
        r = pose[:3, :3]
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise ValueError("pose rotation must be orthonormal")
        if not 0.0 < self.fov_x < math.pi:
            raise ValueError("fov_x must lie in (0, pi)")
        w, h = (int(x) for x in self.resolution)
        if w < 1 or h < 1:
            raise ValueError("resolution must be positive")
        if self.tag not in TAGS:
            raise ValueError(f"tag must be one of {TAGS}")
        pose.flags.writeable = False
        object.__setattr__(self, "pose", pose)
        object.__setattr__(self, "resolution", (w, h))

    @property
    def width(self) -> int:
        return self.resolution[0]

    @property
    def height(self) -> int:
        return self.resolution[1]

    @property
    def position(self) -> np.ndarray:
        return self.pose[:3, 3].copy()

    @property
    def forward(self) -> np.ndarray:
        return -self.pose[:3, 2]

    @property
    def focal(self) -> float:
        """Focal length in pixels."""
        return 0.5 * self.width / math.tan(0.5 * self.fov_x)

    def intrinsics(self) -> np.ndarray:
        k = np.eye(3)
        k[0, 0] = k[1, 1] = self.focal
        k[0, 2], k[1, 2] = 0.5 * self.width, 0.5 * self.height
        return k

    def pixel_directions(self) -> np.ndarray:
        """Unit world-space directions through every pixel centre, (H, W, 3)."""
        j, i = np.meshgrid(np.arange(self.width) + 0.5, np.arange(self.height) + 0.5)
        d = np.stack([j - 0.5 * self.width, -(i - 0.5 * self.height), -np.full(j.shape, self.focal)], axis=-1)
        d = d @ self.pose[:3, :3].T
        return d / np.linalg.norm(d, axis=-1, keepdims=True)


@dataclass(frozen=True)
class CameraSet:
    cameras: tuple[Camera, ...]
    radius: float = DEFAULT_RADIUS

    def __len__(self) -> int:
        return len(self.cameras)

    def __iter__(self):
        return iter(self.cameras)

    def __getitem__(self, i) -> Camera:
        return self.cameras[i]

    @property
    def train(self) -> list[Camera]:
        return [c for c in self.cameras if c.tag == "train"]

    @property
    def test(self) -> list[Camera]:
        return [c for c in self.cameras if c.tag == "test"]


def split_indices(n_train: int, n_test: int) -> np.ndarray:
    """Boolean mask over ``n_train + n_test`` positions marking test views."""
    n = n_train + n_test
    test = np.zeros(n, dtype=bool)
    if (n_train, n_test) == (50, 40):
        test[np.arange(n) % 9 < 4] = True
    elif n_test > 0:
        test[(np.arange(n_test) * n) // n_test] = True
    return test


def make_cameras(n_train: int = 50, n_test: int = 40, radius: float = DEFAULT_RADIUS,
                 fov_x: float = DEFAULT_FOV_X, resolution=DEFAULT_RESOLUTION) -> CameraSet:
    if n_train < 0 or n_test < 0 or n_train + n_test < 1:
        raise ValueError("need a non-negative split with at least one camera")
    if not radius > 1.0:
        raise ValueError("camera radius must exceed 1 (outside the unit object sphere)")
    dirs = fibonacci_hemisphere(n_train + n_test)
    test = split_indices(n_train, n_test)
    cams = tuple(
        Camera(look_at(radius * d), fov_x, tuple(resolution), "test" if test[i] else "train", i)
        for i, d in enumerate(dirs)
    )
    return CameraSet(cams, float(radius))


# ----------------------------------------------------------- environment


@_jit
def _dir_to_pixel(d, cos_edges, h, w):
    z = min(max(d[2], -1.0), 1.0)
    # rows satisfy cos_edges[i] >= z > cos_edges[i + 1]
    lo, hi = 0, h - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if z > cos_edges[mid + 1]:
            hi = mid
        else:
            lo = mid + 1
    phi = math.atan2(d[1], d[0])
    if phi < 0.0:
        phi += 2.0 * math.pi
    col = int(phi * (w / (2.0 * math.pi)))
    if col >= w:
        col = w - 1
    return lo, col


@_jit
def env_eval_point(pixels, cos_edges, d):
    i, j = _dir_to_pixel(d, cos_edges, pixels.shape[0], pixels.shape[1])
    return pixels[i, j, 0], pixels[i, j, 1], pixels[i, j, 2]


@_jit
def env_eval_bilinear(pixels, d):
    h, w = pixels.shape[0], pixels.shape[1]
    theta = math.acos(min(max(d[2], -1.0), 1.0))
    phi = math.atan2(d[1], d[0])
    if phi < 0.0:
        phi += 2.0 * math.pi
    x = phi * (w / (2.0 * math.pi)) - 0.5
    y = theta * (h / math.pi) - 0.5
    y = min(max(y, 0.0), h - 1.0)
    x0 = math.floor(x)
    y0 = min(int(math.floor(y)), h - 1)
    fx = x - x0
    fy = y - y0
    y1 = min(y0 + 1, h - 1)
    xa = int(x0) % w
    xb = (xa + 1) % w
    out = np.zeros(3)
    for c in range(3):
        top = (1.0 - fx) * pixels[y0, xa, c] + fx * pixels[y0, xb, c]
        bot = (1.0 - fx) * pixels[y1, xa, c] + fx * pixels[y1, xb, c]
        out[c] = (1.0 - fy) * top + fy * bot
    return out[0], out[1], out[2]


@_jit
def _search(cdf, u):
    # largest k with cdf[k] <= u; for u < 1 that bin has non-zero mass
    lo, hi = 0, cdf.shape[0] - 2
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if cdf[mid] <= u:
            lo = mid
        else:
            hi = mid - 1
    return lo


@_jit
def env_sample(pixels, cos_edges, row_cdf, col_cdf, pmf, black, u1, u2, u3, u4):
    """Importance-sample a direction; returns (dir, rgb radiance, solid-angle pdf)."""
    if black:
        z = 1.0 - 2.0 * u1
        r = math.sqrt(max(0.0, 1.0 - z * z))
        phi = 2.0 * math.pi * u2
        return (r * math.cos(phi), r * math.sin(phi), z), (0.0, 0.0, 0.0), INV_4PI
    h, w = pixels.shape[0], pixels.shape[1]
    i = _search(row_cdf, u1)
    j = _search(col_cdf[i], u2)
    z = cos_edges[i] - u3 * (cos_edges[i] - cos_edges[i + 1])
    phi = 2.0 * math.pi * (j + u4) / w
    r = math.sqrt(max(0.0, 1.0 - z * z))
    d = (r * math.cos(phi), r * math.sin(phi), z)
    solid_angle = (2.0 * math.pi / w) * (cos_edges[i] - cos_edges[i + 1])
    rad = (pixels[i, j, 0], pixels[i, j, 1], pixels[i, j, 2])
    return d, rad, pmf[i, j] / solid_angle


@_jit
def env_pdf(pixels, cos_edges, pmf, black, d):
    if black:
        return INV_4PI
    h, w = pixels.shape[0], pixels.shape[1]
    i, j = _dir_to_pixel(d, cos_edges, h, w)
    solid_angle = (2.0 * math.pi / w) * (cos_edges[i] - cos_edges[i + 1])
    return pmf[i, j] / solid_angle


def luminance(rgb: np.ndarray) -> np.ndarray:
    return rgb[..., 0] * 0.2126 + rgb[..., 1] * 0.7152 + rgb[..., 2] * 0.0722


@dataclass(frozen=True, eq=False)
class EnvMap:
    """Equirectangular radiance map with a luminance-weighted sampling table.

    Each pixel's sampling weight is its luminance times its solid angle
    (the integral of sin(theta) over the pixel), so a constant map samples
    directions exactly uniformly.
    """

    pixels: np.ndarray
    name: str = "envmap"
    cos_edges: np.ndarray = field(init=False, repr=False)
    pmf: np.ndarray = field(init=False, repr=False)
    row_cdf: np.ndarray = field(init=False, repr=False)
    col_cdf: np.ndarray = field(init=False, repr=False)
    black: bool = field(init=False)
    uniform: bool = field(init=False)

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError("environment map must be an (H, W, 3) rgb image")
        h, w = px.shape[:2]
        if w != 2 * h:
            raise ValueError(f"environment map must be twice as wide as tall, got {w}x{h}")
        if not np.all(np.isfinite(px)) or px.min() < 0:
            raise ValueError("environment radiance must be finite and non-negative")
        theta = np.linspace(0.0, math.pi, h + 1)
        cos_edges = np.cos(theta)
        cos_edges[0], cos_edges[-1] = 1.0, -1.0
        if h % 2 == 0:
            cos_edges[h // 2] = 0.0
        band = cos_edges[:-1] - cos_edges[1:]
        weight = luminance(px) * band[:, None]
        total = weight.sum()
        black = not total > 0
        if black:
            weight = np.ones((h, w)) * band[:, None]
            total = weight.sum()
        pmf = weight / total
        row_mass = pmf.sum(axis=1)
        row_cdf = np.concatenate([[0.0], np.cumsum(row_mass)])
        row_cdf /= row_cdf[-1]
        row_cdf[-1] = 1.0
        col_cdf = np.zeros((h, w + 1))
        for i in range(h):
            c = np.cumsum(weight[i])
            col_cdf[i, 1:] = c / c[-1] if c[-1] > 0 else np.arange(1, w + 1) / w
            col_cdf[i, -1] = 1.0
        # the pmf seen by the sampler is the product of the two stages
        pmf = (row_cdf[1:] - row_cdf[:-1])[:, None] * (col_cdf[:, 1:] - col_cdf[:, :-1])
        for name, val in (("pixels", px), ("cos_edges", cos_edges), ("pmf", pmf),
                          ("row_cdf", row_cdf), ("col_cdf", col_cdf)):
            val.flags.writeable = False
            object.__setattr__(self, name, val)
        object.__setattr__(self, "black", bool(black))
        object.__setattr__(self, "uniform", bool(np.all(px == px[0, 0])))

    @classmethod
    def constant(cls, value=1.0, height: int = 1) -> "EnvMap":
        rgb = np.broadcast_to(np.asarray(value, dtype=np.float64), (3,))
        return cls(np.tile(rgb, (height, 2 * height, 1)), name=f"constant_{rgb[0]:g}_{rgb[1]:g}_{rgb[2]:g}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def arrays(self) -> tuple:
        return self.pixels, self.cos_edges, self.row_cdf, self.col_cdf, self.pmf, self.black

    def integral(self) -> np.ndarray:
        """Exact integral of the point-sampled radiance over the sphere."""
        band = self.cos_edges[:-1] - self.cos_edges[1:]
        return (self.pixels * (band[:, None, None] * 2.0 * math.pi / self.width)).sum(axis=(0, 1))


def load_envmap(path) -> EnvMap:
    img = read_hdr_image(path)
    return EnvMap(img, name=Path(path).stem)


def envmap_eval(env: EnvMap, direction, bilinear: bool = True) -> np.ndarray:
    d = np.asarray(direction, dtype=np.float64)
    if bilinear:
        return np.array(env_eval_bilinear(env.pixels, d))
    return np.array(env_eval_point(env.pixels, env.cos_edges, d))


def envmap_sample(env: EnvMap, rng: RandomStream) -> tuple[np.ndarray, np.ndarray, float]:
    s = rng.state
    d, rad, pdf = env_sample(env.pixels, env.cos_edges, env.row_cdf, env.col_cdf, env.pmf, env.black,
                             next_float(s), next_float(s), next_float(s), next_float(s))
    return np.array(d), np.array(rad), pdf


def envmap_pdf(env: EnvMap, direction) -> float:
    return env_pdf(env.pixels, env.cos_edges, env.pmf, env.black, np.asarray(direction, dtype=np.float64))


# ---------------------------------------------------------- scene files


def material_from_dict(d: dict, db: dict[str, list[IorTable]] | None = None) -> MaterialSpec:
    """Rebuild a MaterialSpec from ``MaterialSpec.to_dict`` output."""
    fam = d.get("family")
    if fam not in FAMILIES:
        raise ValueError(f"unknown material family {fam!r}")
    ior = None
    if fam != "diffuse":
        db = db if db is not None else load_material_db()
        mid = d.get("material_id")
        tables = {t.material_id: t for t in db.get(IOR_FAMILY[fam], [])}
        if mid not in tables:
            raise ValueError(f"no {IOR_FAMILY[fam]} IOR table named {mid!r}")
        ior = tables[mid]
    pig = d.get("pigment_albedo")
    return MaterialSpec(fam, ior, alpha=d.get("alpha"), diffuse_reflectance=d.get("diffuse_reflectance"),
                        pigment_albedo=tuple(pig) if pig is not None else None)


@dataclass(frozen=True)
class CameraConfig:
    n_train: int = 50
    n_test: int = 40
    radius: float = DEFAULT_RADIUS
    fov_x: float = DEFAULT_FOV_X
    width: int = DEFAULT_RESOLUTION[0]
    height: int = DEFAULT_RESOLUTION[1]

    def build(self) -> CameraSet:
        return make_cameras(self.n_train, self.n_test, self.radius, self.fov_x, (self.width, self.height))


@dataclass(frozen=True)
class SceneDesc:
    """One object, one material and one environment, seen by a camera set.

    ``envmap_path`` may be None, in which case ``envmap_constant`` gives a
    uniform rgb radiance.
    """

    mesh_path: Path
    material: MaterialSpec
    envmap_path: Path | None = None
    envmap_constant: tuple[float, float, float] = (1.0, 1.0, 1.0)
    cameras: CameraConfig = CameraConfig()
    seed: int = 0
    normalize: bool = True

    def to_dict(self) -> dict:
        d = {
            "seed": self.seed,
            "mesh_path": str(self.mesh_path),
            "normalize": self.normalize,
            "material": self.material.to_dict(),
            "cameras": dict(vars(self.cameras)),
        }
        if self.envmap_path is not None:
            d["envmap_path"] = str(self.envmap_path)
        else:
            d["envmap_constant"] = list(self.envmap_constant)
        return d

    def save(self, path) -> None:
        Path(path).write_bytes(tomli_w.dumps(self.to_dict()).encode("utf-8"))

    @classmethod
    def from_dict(cls, d: dict, base_dir=".", db=None) -> "SceneDesc":
        base = Path(base_dir)
        try:
            mesh_path = base / d["mesh_path"]
            material = material_from_dict(d["material"], db)
        except KeyError as exc:
            raise ValueError(f"scene is missing required key {exc}") from None
        env = d.get("envmap_path")
        const = d.get("envmap_constant", [1.0, 1.0, 1.0])
        if env is None and len(const) != 3:
            raise ValueError("envmap_constant must have three components")
        cams = CameraConfig(**d.get("cameras", {}))
        return cls(mesh_path, material, base / env if env is not None else None,
                   tuple(float(c) for c in const), cams, int(d.get("seed", 0)), bool(d.get("normalize", True)))

    @classmethod
    def load(cls, path, db=None) -> "SceneDesc":
        path = Path(path)
        with open(path, "rb") as fh:
            d = tomllib.load(fh)
        return cls.from_dict(d, path.parent, db)

    def build(self) -> "Scene":
        mesh = load_mesh(self.mesh_path)
        transform = None
        if self.normalize:
            mesh, transform = normalize_to_unit_sphere(mesh)
        if self.envmap_path is not None:
            env = load_envmap(self.envmap_path)
        else:
            env = EnvMap.constant(self.envmap_constant)
        return Scene(mesh, build_bvh(mesh), self.material, env, transform)


@dataclass(frozen=True, eq=False)
class Scene:
    """Render-ready scene: geometry with its BVH, material and lighting."""

    mesh: TriangleMesh
    bvh: Bvh
    material: MaterialSpec
    envmap: EnvMap
    transform: object = None

    @classmethod
    def from_mesh(cls, mesh: TriangleMesh, material: MaterialSpec, envmap: EnvMap) -> "Scene":
        mesh = mesh.with_vertex_normals()
        return cls(mesh, build_bvh(mesh), material, envmap)
