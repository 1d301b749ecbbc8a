"""Reconstruction and novel-view evaluation.

Mesh protocol: unproject every ground-truth depth map into a visible point
cloud, keep only the facets of a mesh whose three vertices all lie within
``tau`` of that cloud, sample points area-uniformly on the kept facets and
compare point sets with an outlier-filtered Chamfer distance. The same
visibility filter is applied to ground truth and candidate.

Image metrics are PSNR and a Gaussian-window SSIM on luminance.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial import cKDTree

from .dataset import frame_name, read_transforms
from .geometry import TriangleMesh, load_mesh
from .images import read_exr, read_image
from .rng import generator
from .scene import CameraSet, luminance

log = logging.getLogger(__name__)

DEFAULT_STRIDE = 4
DEFAULT_TAU = 0.01
DEFAULT_OUTLIER = 0.15
DEFAULT_POINTS = 1_000_000
PSNR_CAP = 99.0
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11
SSIM_K1, SSIM_K2 = 0.01, 0.03


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        p = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise ValueError("point coordinates must be finite")
        p.flags.writeable = False
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return len(self.points)


def _points(x) -> np.ndarray:
    return x.points if isinstance(x, PointCloud) else PointCloud(x).points


# ---------------------------------------------------------- visibility


def extract_visible_points(depth_maps, cameras: CameraSet, stride: int = DEFAULT_STRIDE) -> PointCloud:
    """Unproject every ``stride``-th pixel with depth > 0 along its pixel-centre ray."""
    cams = list(cameras)
    if len(depth_maps) != len(cams):
        raise ValueError(f"{len(depth_maps)} depth maps for {len(cams)} cameras")
    if stride < 1:
        raise ValueError("stride must be positive")
    out = []
    for depth, cam in zip(depth_maps, cams):
        depth = np.asarray(depth, dtype=np.float64)
        if depth.shape != (cam.height, cam.width):
            raise ValueError(f"depth map of shape {depth.shape} does not match camera {cam.width}x{cam.height}")
        d = depth[::stride, ::stride]
        dirs = cam.pixel_directions()[::stride, ::stride]
        hit = d > 0
        out.append(cam.position + d[hit][:, None] * dirs[hit])
    return PointCloud(np.concatenate(out) if out else np.zeros((0, 3)))


def load_scene_depths(scene_dir) -> tuple[list[np.ndarray], CameraSet]:
    """Depth maps and cameras of a rendered scene directory."""
    root = Path(scene_dir)
    cams = read_transforms(root)
    depths = [read_exr(root / "depth" / f"{frame_name(c)}.exr") for c in cams]
    return depths, cams


def filter_visible_facets(mesh: TriangleMesh, visible, tau: float = DEFAULT_TAU) -> TriangleMesh:
    """Keep facets whose three vertices each have a visible point closer than ``tau``."""
    pts = _points(visible)
    if len(pts) == 0:
        warnings.warn("empty visible cloud: no facets retained", stacklevel=2)
        return mesh.submesh(np.zeros(mesh.n_faces, dtype=bool))
    dist, _ = cKDTree(pts).query(mesh.vertices, k=1)
    near = dist < tau
    return mesh.submesh(near[mesh.faces].all(axis=1))


def sample_points(mesh: TriangleMesh, n: int, seed: int = 0) -> PointCloud:
    """``n`` points distributed uniformly by area over the mesh surface."""
    pts, _ = sample_points_with_faces(mesh, n, seed)
    return PointCloud(pts)


def sample_points_with_faces(mesh: TriangleMesh, n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    if mesh.n_faces == 0:
        raise ValueError("cannot sample an empty mesh")
    areas = mesh.face_areas()
    total = areas.sum()
    if not total > 0:
        raise ValueError("cannot sample a mesh with zero surface area")
    rng = generator(seed, "sample_points")
    face = rng.choice(mesh.n_faces, size=n, p=areas / total)
    u, v = rng.random(n), rng.random(n)
    su = np.sqrt(u)
    b0, b1, b2 = 1.0 - su, su * (1.0 - v), su * v
    t = mesh.triangles()[face]
    pts = b0[:, None] * t[:, 0] + b1[:, None] * t[:, 1] + b2[:, None] * t[:, 2]
    return pts, face


# ---------------------------------------------------------------- Chamfer


@dataclass(frozen=True)
class ChamferReport:
    mean_a_to_b: float | None
    mean_b_to_a: float | None
    chamfer: float | None
    excluded_count: int
    excluded_a: int
    excluded_b: int
    n_a: int
    n_b: int
    outlier_threshold: float

    def to_dict(self) -> dict:
        return asdict(self)


class ChamferUndefinedError(ValueError):
    """Every distance in one direction exceeded the outlier threshold."""

    def __init__(self, report: ChamferReport):
        side = "a->b" if report.mean_a_to_b is None else "b->a"
        super().__init__(f"all {side} distances exceed {report.outlier_threshold}; chamfer undefined")
        self.report = report


def nearest_distances(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance from each ``src`` point to its nearest ``dst`` point."""
    dist, _ = cKDTree(dst).query(src, k=1, eps=0.0)
    return dist


def _filtered_mean(d: np.ndarray, threshold: float) -> tuple[float | None, int]:
    keep = d <= threshold
    n_out = int(len(d) - keep.sum())
    return (float(d[keep].mean()) if keep.any() else None), n_out


def chamfer_from_distances(d_ab: np.ndarray, d_ba: np.ndarray, threshold: float = DEFAULT_OUTLIER) -> ChamferReport:
    m_ab, x_ab = _filtered_mean(d_ab, threshold)
    m_ba, x_ba = _filtered_mean(d_ba, threshold)
    value = None if m_ab is None or m_ba is None else 0.5 * (m_ab + m_ba)
    report = ChamferReport(m_ab, m_ba, value, x_ab + x_ba, x_ab, x_ba, len(d_ab), len(d_ba), float(threshold))
    if value is None:
        raise ChamferUndefinedError(report)
    return report


def chamfer(a, b, outlier_threshold: float = DEFAULT_OUTLIER) -> ChamferReport:
    """Symmetric Chamfer distance with per-point outliers excluded from both means."""
    pa, pb = _points(a), _points(b)
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("chamfer needs two non-empty point clouds")
    return chamfer_from_distances(nearest_distances(pa, pb), nearest_distances(pb, pa), outlier_threshold)


def evaluate_mesh(gt: TriangleMesh, pred: TriangleMesh, depth_maps, cameras: CameraSet,
                  n_points: int = DEFAULT_POINTS, tau: float = DEFAULT_TAU,
                  outlier_threshold: float = DEFAULT_OUTLIER, stride: int = DEFAULT_STRIDE,
                  seed: int = 0) -> dict:
    """Visible-mesh Chamfer between ground truth and a candidate, with all protocol parameters."""
    visible = extract_visible_points(depth_maps, cameras, stride)
    gt_vis = filter_visible_facets(gt, visible, tau)
    pred_vis = filter_visible_facets(pred, visible, tau)
    if pred_vis.n_faces == 0:
        raise ValueError("no candidate facets lie near the visible surface")
    # both meshes share one sampling seed, so identical inputs give identical clouds
    report = chamfer(sample_points(gt_vis, n_points, seed), sample_points(pred_vis, n_points, seed),
                     outlier_threshold)
    return {
        **report.to_dict(),
        "visible_points": len(visible),
        "gt_facets": gt.n_faces,
        "gt_facets_retained": gt_vis.n_faces,
        "pred_facets": pred.n_faces,
        "pred_facets_retained": pred_vis.n_faces,
        "protocol": {
            "stride": stride,
            "tau": tau,
            "n_points": n_points,
            "outlier_threshold": outlier_threshold,
            "seed": seed,
            "distance": "unsquared Euclidean",
            "depth": "ray length",
        },
    }


def evaluate_mesh_files(gt_path, pred_path, scene_dir, **kw) -> dict:
    depths, cams = load_scene_depths(scene_dir)
    return evaluate_mesh(load_mesh(gt_path), load_mesh(pred_path), depths, cams, **kw)


# ----------------------------------------------------------- image metrics


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(img_a, img_b) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]; capped at 99."""
    a, b = _check_pair(img_a, img_b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def ssim(img_a, img_b) -> float:
    """Mean SSIM over an 11x11 Gaussian window (sigma 1.5), on luminance for rgb."""
    a, b = _check_pair(img_a, img_b)
    if a.ndim == 3:
        a, b = luminance(a), luminance(b)
    if a.ndim != 2:
        raise ValueError("ssim expects grayscale or rgb images")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW} pixels on each side")
    # truncate so the kernel spans exactly the 11x11 window
    trunc = (SSIM_WINDOW // 2) / SSIM_SIGMA

    def blur(x):
        return gaussian_filter(x, SSIM_SIGMA, truncate=trunc, mode="reflect")

    c1, c2 = SSIM_K1**2, SSIM_K2**2
    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a**2
    var_b = blur(b * b) - mu_b**2
    cov = blur(a * b) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    pad = SSIM_WINDOW // 2
    return float(s[pad:-pad, pad:-pad].mean())


IMAGE_SUFFIXES = (".png", ".exr", ".jpg", ".jpeg")


def evaluate_views(dir_a, dir_b) -> dict:
    """Per-image and mean PSNR/SSIM over files present in both directories."""
    a_root, b_root = Path(dir_a), Path(dir_b)
    for d in (a_root, b_root):
        if not d.is_dir():
            raise FileNotFoundError(f"directory not found: {d}")
    names = sorted(p.name for p in a_root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    missing = [n for n in names if not (b_root / n).is_file()]
    if missing:
        raise ValueError(f"{len(missing)} images have no counterpart, e.g. {missing[0]}")
    if not names:
        raise ValueError(f"no images in {a_root}")
    per = {}
    for n in names:
        a, b = read_image(a_root / n), read_image(b_root / n)
        per[n] = {"psnr": psnr(a, b), "ssim": ssim(a, b)}
    return {
        "images": per,
        "mean_psnr": float(np.mean([v["psnr"] for v in per.values()])),
        "mean_ssim": float(np.mean([v["ssim"] for v in per.values()])),
        "count": len(names),
    }


def write_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
