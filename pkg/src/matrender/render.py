"""Spectral path tracer.

Each camera path carries a single wavelength drawn from a per-pixel
stratification of [380, 780] nm. The throughput is kept as an rgb triple:
the environment is an rgb radiance map and plastic pigment is an rgb albedo,
while the only wavelength-dependent response is the measured conductor IOR.
Paths through a conductor are weighted by ``rgb_weight_table`` (colour
matching functions mapped to linear rgb and normalised to unit mean over
the band); every other path is wavelength-flat, whose expected weight is
exactly (1, 1, 1), so it is accumulated unweighted.

Tiles are rendered independently; tile ``k`` draws from the counter-based
stream keyed by ``(seed, k)``, so images do not depend on the thread count.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from . import vecmath as vm
from .geometry import bvh_intersect, bvh_occluded, intersect_many
from .images import write_exr, write_mask_png, write_png16
from .materials import DIELECTRIC, ROUGH_DIELECTRIC, bsdf_eval_kernel, bsdf_pdf_kernel, bsdf_sample_kernel
from .rng import derive_seed, next_float, seed_state
from .scene import Camera, Scene, env_eval_bilinear, env_eval_point, env_pdf, env_sample
from .spectra import interp_table, rgb_weight_table, stratified_wavelength

log = logging.getLogger(__name__)

RAY_EPSILON = 1e-4
ENV_NEE_MODES = ("auto", "always", "never")

_jit = njit(cache=True, nogil=True)


@dataclass(frozen=True)
class RenderSettings:
    spp: int = 64
    max_depth: int = 12
    wavelengths_per_path: int = 1
    seed: int = 0
    rr_start_depth: int = 4
    env_nee: str = "auto"
    tile_size: int = 16

    def __post_init__(self):
        if self.spp < 1:
            raise ValueError("spp must be at least 1")
        if self.max_depth < 0:
            raise ValueError("max_depth must be non-negative")
        if self.wavelengths_per_path < 1:
            raise ValueError("wavelengths_per_path must be at least 1")
        if self.rr_start_depth < 0:
            raise ValueError("rr_start_depth must be non-negative")
        if self.env_nee not in ENV_NEE_MODES:
            raise ValueError(f"env_nee must be one of {ENV_NEE_MODES}")
        if self.tile_size < 1:
            raise ValueError("tile_size must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class RenderOutput:
    radiance: np.ndarray
    depth: np.ndarray
    mask: np.ndarray
    stats: dict = field(default_factory=dict)

    def save(self, directory, name: str, exr: bool = False, rgb_dir: str = ".",
             depth_dir: str = "depth", mask_dir: str = "mask") -> dict[str, Path]:
        """Write ``<rgb_dir>/<name>.png``, ``<depth_dir>/<name>.exr`` and
        ``<mask_dir>/<name>.png`` under ``directory``."""
        root = Path(directory)
        paths = {
            "rgb": root / rgb_dir / f"{name}.png",
            "depth": root / depth_dir / f"{name}.exr",
            "mask": root / mask_dir / f"{name}.png",
        }
        if exr:
            paths["rgb_exr"] = root / rgb_dir / f"{name}.exr"
        for p in paths.values():
            p.parent.mkdir(parents=True, exist_ok=True)
        write_png16(paths["rgb"], self.radiance)
        write_exr(paths["depth"], self.depth)
        write_mask_png(paths["mask"], self.mask)
        if exr:
            write_exr(paths["rgb_exr"], self.radiance)
        return paths


# ------------------------------------------------------------------ kernels


@_jit
def _shading_normal(vertices, faces, normals, face, u, v):
    i0, i1, i2 = faces[face, 0], faces[face, 1], faces[face, 2]
    p0 = (vertices[i0, 0], vertices[i0, 1], vertices[i0, 2])
    e1 = (vertices[i1, 0] - p0[0], vertices[i1, 1] - p0[1], vertices[i1, 2] - p0[2])
    e2 = (vertices[i2, 0] - p0[0], vertices[i2, 1] - p0[1], vertices[i2, 2] - p0[2])
    ng = vm.normalize(vm.cross(e1, e2))
    w = 1.0 - u - v
    ns = (
        w * normals[i0, 0] + u * normals[i1, 0] + v * normals[i2, 0],
        w * normals[i0, 1] + u * normals[i1, 1] + v * normals[i2, 1],
        w * normals[i0, 2] + u * normals[i1, 2] + v * normals[i2, 2],
    )
    if vm.dot(ns, ns) <= 0.0:
        return ng, ng
    return ng, vm.normalize(ns)


@_jit
def _offset(p, ng, w):
    s = RAY_EPSILON if vm.dot(w, ng) >= 0.0 else -RAY_EPSILON
    return (p[0] + s * ng[0], p[1] + s * ng[1], p[2] + s * ng[2])


@_jit
def trace_kernel(geo, mat, env, o, d, state, wavelength, max_depth, rr_start, nee):
    """One path estimate as an rgb triple (not yet weighted by wavelength)."""
    node_min, node_max, left, start, count, order, tris, vertices, faces, normals = geo
    p_mat, lam, eta_tab, k_tab = mat
    pixels, cos_edges, row_cdf, col_cdf, pmf, black = env
    fam = int(p_mat[0])
    dielectric = fam == DIELECTRIC or fam == ROUGH_DIELECTRIC
    beta = (1.0, 1.0, 1.0)
    lr, lg, lb = 0.0, 0.0, 0.0
    prev_pdf = 1.0
    prev_delta = True
    for depth in range(max_depth + 1):
        t, face, u, v = bvh_intersect(node_min, node_max, left, start, count, order, tris, o, d, 0.0, np.inf)
        if face < 0:
            if depth == 0:
                le = env_eval_bilinear(pixels, d)
            else:
                le = env_eval_point(pixels, cos_edges, d)
            w = 1.0
            if nee and not prev_delta:
                pl = env_pdf(pixels, cos_edges, pmf, black, d)
                w = prev_pdf / (prev_pdf + pl)
            lr += beta[0] * le[0] * w
            lg += beta[1] * le[1] * w
            lb += beta[2] * le[2] * w
            break
        if depth == max_depth:
            break
        p = (o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2])
        ng, ns = _shading_normal(vertices, faces, normals, face, u, v)
        wi = vm.neg(d)
        if not dielectric and vm.dot(wi, ng) < 0.0:
            # two-sided opaque surfaces face the incoming ray
            ng = vm.neg(ng)
            ns = vm.neg(ns)
        if vm.dot(ns, ng) < 0.0:
            ns = vm.neg(ns)
        sx, sy = vm.onb(ns)
        sz = ns
        wi_l = vm.to_local(wi, sx, sy, sz)
        if (wi_l[2] > 0.0) != (vm.dot(wi, ng) > 0.0):
            # shading normal disagrees with the true side: use the flat normal
            ns = ng
            sx, sy = vm.onb(ns)
            sz = ns
            wi_l = vm.to_local(wi, sx, sy, sz)

        if nee:
            u1, u2, u3, u4 = next_float(state), next_float(state), next_float(state), next_float(state)
            ld, rad, pl = env_sample(pixels, cos_edges, row_cdf, col_cdf, pmf, black, u1, u2, u3, u4)
            wo_l = vm.to_local(ld, sx, sy, sz)
            if pl > 0.0 and (wo_l[2] > 0.0) == (vm.dot(ld, ng) > 0.0) and wo_l[2] != 0.0:
                f = bsdf_eval_kernel(p_mat, lam, eta_tab, k_tab, wi_l, wo_l, wavelength)
                if f[0] + f[1] + f[2] > 0.0:
                    o2 = _offset(p, ng, ld)
                    if not bvh_occluded(node_min, node_max, left, start, count, order, tris,
                                        o2, ld, 0.0, np.inf):
                        pb = bsdf_pdf_kernel(p_mat, lam, eta_tab, k_tab, wi_l, wo_l, wavelength)
                        c = abs(wo_l[2]) / (pl + pb)
                        lr += beta[0] * f[0] * rad[0] * c
                        lg += beta[1] * f[1] * rad[1] * c
                        lb += beta[2] * f[2] * rad[2] * c

        wo_l, weight, pdf, delta, trans = bsdf_sample_kernel(p_mat, lam, eta_tab, k_tab, wi_l, wavelength, state)
        if weight[0] + weight[1] + weight[2] <= 0.0:
            break
        wo = vm.to_world(wo_l, sx, sy, sz)
        if (wo_l[2] > 0.0) != (vm.dot(wo, ng) > 0.0):
            break
        beta = (beta[0] * weight[0], beta[1] * weight[1], beta[2] * weight[2])
        prev_pdf = pdf
        prev_delta = delta
        o = _offset(p, ng, wo)
        d = wo
        if depth + 1 >= rr_start:
            q = min(1.0, max(beta[0], max(beta[1], beta[2])))
            if next_float(state) >= q:
                break
            beta = (beta[0] / q, beta[1] / q, beta[2] / q)
    return lr, lg, lb


@_jit
def _camera_ray(pose, focal, width, height, x, y):
    cx = x - 0.5 * width
    cy = -(y - 0.5 * height)
    cz = -focal
    d = (
        pose[0, 0] * cx + pose[0, 1] * cy + pose[0, 2] * cz,
        pose[1, 0] * cx + pose[1, 1] * cy + pose[1, 2] * cz,
        pose[2, 0] * cx + pose[2, 1] * cy + pose[2, 2] * cz,
    )
    return (pose[0, 3], pose[1, 3], pose[2, 3]), vm.normalize(d)


@_jit
def render_tile(geo, mat, env, pose, focal, width, height, x0, y0, x1, y1, spp, n_lambda,
                max_depth, rr_start, nee, spectral, w_lam, w_tab, base_seed, tile_index):
    """Radiance of pixels [y0, y1) x [x0, x1); returns (image, non-finite count)."""
    out = np.zeros((y1 - y0, x1 - x0, 3))
    state = seed_state(base_seed, tile_index)
    w_r = w_tab[:, 0].copy()
    w_g = w_tab[:, 1].copy()
    w_b = w_tab[:, 2].copy()
    n_total = spp * n_lambda
    bad = 0
    for y in range(y0, y1):
        for x in range(x0, x1):
            ar, ag, ab = 0.0, 0.0, 0.0
            for s in range(spp):
                o, d = _camera_ray(pose, focal, width, height, x + next_float(state), y + next_float(state))
                for m in range(n_lambda):
                    lam = stratified_wavelength(s * n_lambda + m, n_total, next_float(state))
                    r, g, b = trace_kernel(geo, mat, env, o, d, state, lam, max_depth, rr_start, nee)
                    if spectral:
                        r *= interp_table(w_lam, w_r, lam)
                        g *= interp_table(w_lam, w_g, lam)
                        b *= interp_table(w_lam, w_b, lam)
                    if math.isfinite(r) and math.isfinite(g) and math.isfinite(b):
                        ar += r
                        ag += g
                        ab += b
                    else:
                        bad += 1
            out[y - y0, x - x0, 0] = ar / n_total
            out[y - y0, x - x0, 1] = ag / n_total
            out[y - y0, x - x0, 2] = ab / n_total
    return out, bad


# ----------------------------------------------------------------- drivers


def _scene_args(scene: Scene):
    mesh = scene.mesh.with_vertex_normals()
    geo = tuple(scene.bvh.arrays) + (mesh.vertices, mesh.faces, mesh.normals)
    return geo, tuple(scene.material.kernel_args), tuple(scene.envmap.arrays)


def _use_nee(scene: Scene, settings: RenderSettings) -> bool:
    if settings.env_nee == "auto":
        # under uniform light BSDF sampling alone is the better estimator
        return not scene.envmap.uniform
    return settings.env_nee == "always"


_WEIGHTS = None


def _weight_table():
    global _WEIGHTS
    if _WEIGHTS is None:
        lam, w = rgb_weight_table()
        _WEIGHTS = (np.ascontiguousarray(lam), np.ascontiguousarray(w))
    return _WEIGHTS


def default_threads() -> int:
    env = os.environ.get("MATRENDER_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def trace_path(scene: Scene, origin, direction, rng, settings: RenderSettings,
               wavelength_nm: float) -> np.ndarray:
    """Radiance estimate (rgb, before wavelength weighting) along one ray."""
    d = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ValueError("ray direction must be a unit vector")
    geo, mat, env = _scene_args(scene)
    r = trace_kernel(geo, mat, env, vm.as_tuple(origin), vm.as_tuple(d), rng.state, float(wavelength_nm),
                     settings.max_depth, settings.rr_start_depth, _use_nee(scene, settings))
    out = np.array(r)
    return np.where(np.isfinite(out), out, 0.0)


def render_depth(scene: Scene, camera: Camera) -> np.ndarray:
    """Ray length to the first surface along each pixel-centre ray; 0 on a miss."""
    dirs = camera.pixel_directions().reshape(-1, 3)
    origins = np.broadcast_to(camera.position, dirs.shape)
    t, face = intersect_many(scene.bvh, origins, dirs)
    depth = np.where(face >= 0, t, 0.0)
    return depth.reshape(camera.height, camera.width)


def render_image(scene: Scene, camera: Camera, settings: RenderSettings, threads: int | None = None) -> RenderOutput:
    geo, mat, env = _scene_args(scene)
    w_lam, w_tab = _weight_table()
    nee = _use_nee(scene, settings)
    spectral = scene.material.spectral
    width, height, ts = camera.width, camera.height, settings.tile_size
    base = np.uint64(derive_seed(settings.seed, "render", camera.index))
    tiles = [
        (k, x0, y0, min(x0 + ts, width), min(y0 + ts, height))
        for k, (y0, x0) in enumerate((y, x) for y in range(0, height, ts) for x in range(0, width, ts))
    ]
    pose = np.ascontiguousarray(camera.pose)

    def run(tile):
        k, x0, y0, x1, y1 = tile
        return render_tile(geo, mat, env, pose, camera.focal, width, height, x0, y0, x1, y1,
                           settings.spp, settings.wavelengths_per_path, settings.max_depth,
                           settings.rr_start_depth, nee, spectral, w_lam, w_tab, base, k)

    threads = threads or default_threads()
    radiance = np.zeros((height, width, 3))
    bad = 0
    if threads == 1:
        results = map(run, tiles)
    else:
        pool = ThreadPoolExecutor(max_workers=threads)
        results = pool.map(run, tiles)
    for (k, x0, y0, x1, y1), (img, n_bad) in zip(tiles, results):
        radiance[y0:y1, x0:x1] = img
        bad += n_bad
    if threads != 1:
        pool.shutdown()
    if bad:
        log.warning("discarded %d non-finite path samples", bad)
    # colour-matching weights can push noisy spectral estimates below zero
    negative = int((radiance < 0).sum())
    np.maximum(radiance, 0.0, out=radiance)
    depth = render_depth(scene, camera)
    mask = (depth > 0).astype(np.uint8)
    stats = {"nonfinite_samples": int(bad), "clamped_negative": negative, "env_nee": nee}
    return RenderOutput(radiance, depth, mask, stats)
