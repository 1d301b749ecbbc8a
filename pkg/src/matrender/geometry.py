"""Triangle meshes, unit-sphere normalization and a SAH bounding-volume hierarchy.

Ray/triangle tests use the watertight formulation of Woop, Benthin and Wald:
the ray is sheared onto +z so that edge functions of neighbouring triangles
are evaluated identically, leaving no cracks along shared edges.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

LEAF_SIZE = 4
N_BINS = 16
SAH_MAX_DEPTH = 48  # deeper nodes use index splits, bounding tree depth
STACK_SIZE = 128
DEGENERATE_AREA = 1e-12

_jit = njit(cache=True, nogil=True)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh vertices must be finite")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face index out of range")
        n = self.normals
        if n is not None:
            n = np.ascontiguousarray(n, dtype=np.float64).reshape(-1, 3)
            if n.shape != v.shape:
                raise ValueError("normals must match vertices one to one")
        for a in (v, f) + ((n,) if n is not None else ()):
            a.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "normals", n)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def triangles(self) -> np.ndarray:
        """(M, 3, 3) array of corner positions."""
        return self.vertices[self.faces]

    def face_areas(self) -> np.ndarray:
        t = self.triangles()
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    def with_vertex_normals(self) -> "TriangleMesh":
        if self.normals is not None:
            return self
        return TriangleMesh(self.vertices, self.faces, vertex_normals(self.vertices, self.faces))

    def submesh(self, face_mask) -> "TriangleMesh":
        return TriangleMesh(self.vertices, self.faces[np.asarray(face_mask, dtype=bool)], self.normals)


def vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted average of adjacent face normals, unit length."""
    t = vertices[faces]
    fn = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])  # length = 2 * area
    acc = np.zeros_like(vertices)
    for c in range(3):
        np.add.at(acc, faces[:, c], fn)
    norm = np.linalg.norm(acc, axis=1, keepdims=True)
    out = np.divide(acc, norm, out=np.zeros_like(acc), where=norm > 0)
    out[norm[:, 0] == 0] = (0.0, 0.0, 1.0)  # isolated vertices
    return out


# ------------------------------------------------------------------ loading


def _obj_index(tok: str, count: int) -> int:
    i = int(tok)
    return i - 1 if i > 0 else count + i


def _parse_obj(path: Path):
    verts, vnorms, faces, face_vn = [], [], [], []
    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(x) for x in parts[1:4]])
                elif parts[0] == "vn":
                    vnorms.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    corners = [c.split("/") for c in parts[1:]]
                    vi = [_obj_index(c[0], len(verts)) for c in corners]
                    ni = [_obj_index(c[2], len(vnorms)) if len(c) > 2 and c[2] else -1 for c in corners]
                    for k in range(1, len(vi) - 1):  # fan triangulation
                        faces.append((vi[0], vi[k], vi[k + 1]))
                        face_vn.append((ni[0], ni[k], ni[k + 1]))
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed OBJ record") from exc
    v = np.array(verts, dtype=np.float64).reshape(-1, 3)
    f = np.array(faces, dtype=np.int64).reshape(-1, 3)
    normals = None
    fvn = np.array(face_vn, dtype=np.int64).reshape(-1, 3)
    if vnorms and len(f) and np.all(fvn >= 0):
        # scatter corner normals onto vertices; averaging handles split normals
        vn = np.array(vnorms, dtype=np.float64)
        acc = np.zeros_like(v)
        np.add.at(acc, f.ravel(), vn[fvn.ravel()])
        norm = np.linalg.norm(acc, axis=1, keepdims=True)
        if np.all(norm > 0):
            normals = acc / norm
    return v, f, normals


def _parse_ply(path: Path):
    from plyfile import PlyData

    ply = PlyData.read(str(path))
    vert = ply["vertex"]
    v = np.stack([vert["x"], vert["y"], vert["z"]], axis=1).astype(np.float64)
    names = vert.data.dtype.names
    normals = None
    if all(c in names for c in ("nx", "ny", "nz")):
        normals = np.stack([vert["nx"], vert["ny"], vert["nz"]], axis=1).astype(np.float64)
        norm = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = normals / norm if np.all(norm > 0) else None
    faces = []
    if "face" in ply:
        fe = ply["face"]
        key = "vertex_indices" if "vertex_indices" in fe.data.dtype.names else "vertex_index"
        for poly in fe[key]:
            poly = [int(i) for i in poly]
            for k in range(1, len(poly) - 1):
                faces.append((poly[0], poly[k], poly[k + 1]))
    return v, np.array(faces, dtype=np.int64).reshape(-1, 3), normals


def _check_manifold(faces: np.ndarray, source) -> None:
    edges = np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1)
    counts = Counter(map(tuple, edges.tolist()))
    bad = sum(1 for c in counts.values() if c > 2)
    if bad:
        warnings.warn(f"{source}: {bad} non-manifold edges", stacklevel=3)


def load_mesh(path) -> TriangleMesh:
    """Read an OBJ or PLY file as a triangle mesh with unit vertex normals."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"mesh file not found: {path}")
    ext = path.suffix.lower()
    if ext == ".obj":
        v, f, n = _parse_obj(path)
    elif ext == ".ply":
        v, f, n = _parse_ply(path)
    else:
        raise ValueError(f"unsupported mesh format {ext!r} (expected .obj or .ply)")
    if len(f) == 0:
        raise ValueError(f"{path}: mesh has no faces")
    _check_manifold(f, path)
    mesh = TriangleMesh(v, f, n)
    return mesh if n is not None else mesh.with_vertex_normals()


def save_obj(mesh: TriangleMesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in mesh.vertices:
            fh.write(f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        if mesh.normals is not None:
            for p in mesh.normals:
                fh.write(f"vn {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
            for a, b, c in mesh.faces + 1:
                fh.write(f"f {a}//{a} {b}//{b} {c}//{c}\n")
        else:
            for a, b, c in mesh.faces + 1:
                fh.write(f"f {a} {b} {c}\n")


# ------------------------------------------------------------ normalization


@dataclass(frozen=True)
class SimilarityTransform:
    """p' = scale * (p + translation)."""

    scale: float
    translation: tuple[float, float, float]

    def apply(self, points) -> np.ndarray:
        return self.scale * (np.asarray(points, dtype=np.float64) + np.asarray(self.translation))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] *= self.scale
        m[:3, 3] = self.scale * np.asarray(self.translation)
        return m

    def to_dict(self) -> dict:
        return {"scale": self.scale, "translation": list(self.translation)}


def normalize_to_unit_sphere(mesh: TriangleMesh) -> tuple[TriangleMesh, SimilarityTransform]:
    """Centre the vertex bounding box at the origin and scale to max radius 1."""
    v = mesh.vertices
    if len(v) == 0:
        raise ValueError("cannot normalize an empty mesh")
    center = 0.5 * (v.min(axis=0) + v.max(axis=0))
    radius = np.linalg.norm(v - center, axis=1).max()
    if not radius > 0:
        raise ValueError("all vertices coincide; mesh has no extent")
    tf = SimilarityTransform(float(1.0 / radius), tuple(float(x) for x in -center))
    out = tf.apply(v)
    # pin the farthest vertex exactly onto the sphere against rounding
    out /= np.linalg.norm(out, axis=1).max()
    areas = TriangleMesh(out, mesh.faces).face_areas()
    keep = areas > DEGENERATE_AREA
    if not np.all(keep):
        warnings.warn(f"dropping {int((~keep).sum())} degenerate faces", stacklevel=2)
    return TriangleMesh(out, mesh.faces[keep], mesh.normals), tf


# --------------------------------------------------------- primitive shapes


def icosphere(level: int = 4) -> TriangleMesh:
    """Geodesic unit sphere with a vertex at each pole (20 * 4**level faces)."""
    z = 1.0 / math.sqrt(5.0)
    r = 2.0 / math.sqrt(5.0)
    verts = [(0.0, 0.0, 1.0)]
    verts += [(r * math.cos(2 * math.pi * k / 5), r * math.sin(2 * math.pi * k / 5), z) for k in range(5)]
    verts += [(r * math.cos(2 * math.pi * (k + 0.5) / 5), r * math.sin(2 * math.pi * (k + 0.5) / 5), -z)
              for k in range(5)]
    verts.append((0.0, 0.0, -1.0))
    faces = []
    for k in range(5):
        a, b = 1 + k, 1 + (k + 1) % 5
        c, d = 6 + k, 6 + (k + 1) % 5
        faces += [(0, a, b), (a, c, b), (b, c, d), (c, 11, d)]
    verts = [np.array(p) for p in verts]
    for _ in range(level):
        cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    v = np.array(verts)
    return TriangleMesh(v, np.array(faces), v.copy())


def box_mesh(half_extent: float = 1.0, subdivisions: int = 1) -> TriangleMesh:
    """Axis-aligned cube; each face is an n×n grid of quads split into 4 triangles
    around the quad centre so every triangle owns a face-interior vertex."""
    n = int(subdivisions)
    verts, faces = [], []
    index = {}

    def vid(p):
        key = tuple(np.round(p, 12))
        if key not in index:
            index[key] = len(verts)
            verts.append(p)
        return index[key]

    for axis in range(3):
        for sign in (-1.0, 1.0):
            u_ax, v_ax = (axis + 1) % 3, (axis + 2) % 3
            for i in range(n):
                for j in range(n):
                    def corner(a, b):
                        p = np.zeros(3)
                        p[axis] = sign * half_extent
                        p[u_ax] = (-1.0 + 2.0 * a / n) * half_extent
                        p[v_ax] = (-1.0 + 2.0 * b / n) * half_extent
                        return p

                    q = [vid(corner(i, j)), vid(corner(i + 1, j)), vid(corner(i + 1, j + 1)), vid(corner(i, j + 1))]
                    c = vid(corner(i + 0.5, j + 0.5))
                    for k in range(4):
                        a, b = q[k], q[(k + 1) % 4]
                        faces.append((c, a, b) if sign > 0 else (c, b, a))
    return TriangleMesh(np.array(verts), np.array(faces)).with_vertex_normals()


# ---------------------------------------------------------------------- BVH


@_jit
def _area(lo, hi):
    dx, dy, dz = hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]
    if dx < 0.0:
        return 0.0
    return 2.0 * (dx * dy + dy * dz + dz * dx)


@_jit
def _build(tri_min, tri_max, centroid, leaf_size, n_bins):
    m = tri_min.shape[0]
    order = np.arange(m)
    cap = 2 * m
    node_min = np.empty((cap, 3))
    node_max = np.empty((cap, 3))
    node_left = np.full(cap, -1, dtype=np.int64)
    node_start = np.zeros(cap, dtype=np.int64)
    node_count = np.zeros(cap, dtype=np.int64)
    n_nodes = 1
    stack = np.empty((STACK_SIZE, 4), dtype=np.int64)
    stack[0, 0], stack[0, 1], stack[0, 2], stack[0, 3] = 0, 0, m, 0
    sp = 1
    bin_min = np.empty((n_bins, 3))
    bin_max = np.empty((n_bins, 3))
    bin_cnt = np.zeros(n_bins, dtype=np.int64)
    right_area = np.empty(n_bins)
    right_cnt = np.empty(n_bins, dtype=np.int64)
    while sp > 0:
        sp -= 1
        node, start, end, depth = stack[sp, 0], stack[sp, 1], stack[sp, 2], stack[sp, 3]
        lo = np.full(3, np.inf)
        hi = np.full(3, -np.inf)
        clo = np.full(3, np.inf)
        chi = np.full(3, -np.inf)
        for i in range(start, end):
            t = order[i]
            for a in range(3):
                lo[a] = min(lo[a], tri_min[t, a])
                hi[a] = max(hi[a], tri_max[t, a])
                clo[a] = min(clo[a], centroid[t, a])
                chi[a] = max(chi[a], centroid[t, a])
        node_min[node] = lo
        node_max[node] = hi
        count = end - start
        if count <= leaf_size:
            node_start[node] = start
            node_count[node] = count
            continue
        axis = 0
        ext = chi - clo
        if ext[1] > ext[axis]:
            axis = 1
        if ext[2] > ext[axis]:
            axis = 2
        mid = -1
        if ext[axis] > 0.0 and depth < SAH_MAX_DEPTH:
            scale = n_bins / ext[axis]
            bin_cnt[:] = 0
            bin_min[:] = np.inf
            bin_max[:] = -np.inf
            for i in range(start, end):
                t = order[i]
                b = min(int((centroid[t, axis] - clo[axis]) * scale), n_bins - 1)
                bin_cnt[b] += 1
                for a in range(3):
                    bin_min[b, a] = min(bin_min[b, a], tri_min[t, a])
                    bin_max[b, a] = max(bin_max[b, a], tri_max[t, a])
            # sweep from the right, then from the left evaluating the SAH cost
            rlo = np.full(3, np.inf)
            rhi = np.full(3, -np.inf)
            rc = 0
            for b in range(n_bins - 1, 0, -1):
                for a in range(3):
                    rlo[a] = min(rlo[a], bin_min[b, a])
                    rhi[a] = max(rhi[a], bin_max[b, a])
                rc += bin_cnt[b]
                right_area[b] = _area(rlo, rhi)
                right_cnt[b] = rc
            llo = np.full(3, np.inf)
            lhi = np.full(3, -np.inf)
            lc = 0
            best_cost = np.inf
            best = -1
            for b in range(n_bins - 1):
                for a in range(3):
                    llo[a] = min(llo[a], bin_min[b, a])
                    lhi[a] = max(lhi[a], bin_max[b, a])
                lc += bin_cnt[b]
                if lc == 0 or right_cnt[b + 1] == 0:
                    continue
                cost = lc * _area(llo, lhi) + right_cnt[b + 1] * right_area[b + 1]
                if cost < best_cost:
                    best_cost = cost
                    best = b
            if best >= 0:
                i, j = start, end - 1
                while i <= j:
                    b = min(int((centroid[order[i], axis] - clo[axis]) * scale), n_bins - 1)
                    if b <= best:
                        i += 1
                    else:
                        tmp = order[i]
                        order[i] = order[j]
                        order[j] = tmp
                        j -= 1
                mid = i
        if mid <= start or mid >= end:
            # coincident centroids: fall back to an index split so leaves stay small
            mid = (start + end) // 2
        left = n_nodes
        n_nodes += 2
        node_left[node] = left
        stack[sp, 0], stack[sp, 1], stack[sp, 2], stack[sp, 3] = left, start, mid, depth + 1
        stack[sp + 1, 0], stack[sp + 1, 1], stack[sp + 1, 2], stack[sp + 1, 3] = left + 1, mid, end, depth + 1
        sp += 2
    return (node_min[:n_nodes].copy(), node_max[:n_nodes].copy(), node_left[:n_nodes].copy(),
            node_start[:n_nodes].copy(), node_count[:n_nodes].copy(), order)


@dataclass(frozen=True, eq=False)
class Bvh:
    """Flattened binary tree. Interior nodes store their first child at
    ``left`` (the sibling follows it); leaves store a range into ``order``.
    ``tris`` holds triangle corners permuted into leaf order."""

    mesh: TriangleMesh
    node_min: np.ndarray
    node_max: np.ndarray
    left: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray
    tris: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    @property
    def arrays(self) -> tuple:
        """Arrays consumed by the traversal kernels."""
        return self.node_min, self.node_max, self.left, self.start, self.count, self.order, self.tris

    def depth(self) -> int:
        best, stack = 0, [(0, 1)]
        while stack:
            n, d = stack.pop()
            best = max(best, d)
            if self.left[n] >= 0:
                stack += [(self.left[n], d + 1), (self.left[n] + 1, d + 1)]
        return best


def build_bvh(mesh: TriangleMesh) -> Bvh:
    if mesh.n_faces == 0:
        raise ValueError("cannot build a BVH over an empty mesh")
    tri = mesh.triangles()
    tmin, tmax = tri.min(axis=1), tri.max(axis=1)
    arrays = _build(tmin, tmax, tri.mean(axis=1), LEAF_SIZE, N_BINS)
    tris = np.ascontiguousarray(tri[arrays[-1]].reshape(-1, 9))
    for a in arrays:
        a.flags.writeable = False
    tris.flags.writeable = False
    return Bvh(mesh, *arrays, tris)


# ---------------------------------------------------------------- traversal


@_jit
def ray_setup(d):
    """Shear constants for the watertight test."""
    kz = 0
    if abs(d[1]) > abs(d[kz]):
        kz = 1
    if abs(d[2]) > abs(d[kz]):
        kz = 2
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    if d[kz] < 0.0:
        kx, ky = ky, kx
    return kx, ky, kz, d[kx] / d[kz], d[ky] / d[kz], 1.0 / d[kz]


@_jit
def tri_intersect(tri, o, kx, ky, kz, sx, sy, sz):
    """Watertight ray/triangle test; returns (t, u, v) with t = inf on a miss.

    ``tri`` is a 9-vector of corners (v0, v1, v2); the hit point is
    ``(1-u-v) v0 + u v1 + v v2``.
    """
    ax = tri[kx] - o[kx]
    ay = tri[ky] - o[ky]
    az = tri[kz] - o[kz]
    bx = tri[3 + kx] - o[kx]
    by = tri[3 + ky] - o[ky]
    bz = tri[3 + kz] - o[kz]
    cx = tri[6 + kx] - o[kx]
    cy = tri[6 + ky] - o[ky]
    cz = tri[6 + kz] - o[kz]
    ax -= sx * az
    ay -= sy * az
    bx -= sx * bz
    by -= sy * bz
    cx -= sx * cz
    cy -= sy * cz
    e0 = cx * by - cy * bx
    e1 = ax * cy - ay * cx
    e2 = bx * ay - by * ax
    if (e0 < 0.0 or e1 < 0.0 or e2 < 0.0) and (e0 > 0.0 or e1 > 0.0 or e2 > 0.0):
        return np.inf, 0.0, 0.0
    det = e0 + e1 + e2
    if det == 0.0:
        return np.inf, 0.0, 0.0
    t = (e0 * az + e1 * bz + e2 * cz) * sz / det
    return t, e1 / det, e2 / det


@_jit
def _box_entry(lo, hi, o, inv, t_max):
    t0 = 0.0
    t1 = t_max
    for a in range(3):
        ta = (lo[a] - o[a]) * inv[a]
        tb = (hi[a] - o[a]) * inv[a]
        if ta > tb:
            ta, tb = tb, ta
        # conservative slack against rounding in the slab test
        tb *= 1.0 + 4.440892098500626e-16 * 6
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
        if t0 > t1:
            return np.inf
    return t0


@_jit
def _inverse(d):
    inv = np.empty(3)
    for a in range(3):
        inv[a] = 1.0 / d[a] if d[a] != 0.0 else math.copysign(1e300, d[a])
    return inv


@_jit
def bvh_intersect(node_min, node_max, left, start, count, order, tris, o, d, t_min, t_max):
    """Nearest hit in (t_min, t_max): returns (t, face, u, v); face = -1 on a miss."""
    kx, ky, kz, sx, sy, sz = ray_setup(d)
    inv = _inverse(d)
    best_t = t_max
    best_face = -1
    best_u = 0.0
    best_v = 0.0
    stack = np.empty(STACK_SIZE, dtype=np.int64)
    stack[0] = 0
    sp = 1
    if _box_entry(node_min[0], node_max[0], o, inv, best_t) == np.inf:
        return np.inf, -1, 0.0, 0.0
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if left[node] < 0:
            for i in range(start[node], start[node] + count[node]):
                t, u, v = tri_intersect(tris[i], o, kx, ky, kz, sx, sy, sz)
                if t > t_min and t < best_t:
                    best_t = t
                    best_face = i
                    best_u = u
                    best_v = v
            continue
        a = left[node]
        b = a + 1
        ta = _box_entry(node_min[a], node_max[a], o, inv, best_t)
        tb = _box_entry(node_min[b], node_max[b], o, inv, best_t)
        if ta > tb:
            a, b = b, a
            ta, tb = tb, ta
        # push the far child first so the near one is popped next
        if tb != np.inf:
            stack[sp] = b
            sp += 1
        if ta != np.inf:
            stack[sp] = a
            sp += 1
    if best_face < 0:
        return np.inf, -1, 0.0, 0.0
    return best_t, order[best_face], best_u, best_v


@_jit
def bvh_occluded(node_min, node_max, left, start, count, order, tris, o, d, t_min, t_max):
    kx, ky, kz, sx, sy, sz = ray_setup(d)
    inv = _inverse(d)
    stack = np.empty(STACK_SIZE, dtype=np.int64)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if _box_entry(node_min[node], node_max[node], o, inv, t_max) == np.inf:
            continue
        if left[node] < 0:
            for i in range(start[node], start[node] + count[node]):
                t, u, v = tri_intersect(tris[i], o, kx, ky, kz, sx, sy, sz)
                if t > t_min and t < t_max:
                    return True
            continue
        stack[sp] = left[node]
        stack[sp + 1] = left[node] + 1
        sp += 2
    return False


@_jit
def brute_intersect(tris, o, d, t_min, t_max):
    kx, ky, kz, sx, sy, sz = ray_setup(d)
    best_t = t_max
    best = -1
    bu = 0.0
    bv = 0.0
    for i in range(tris.shape[0]):
        t, u, v = tri_intersect(tris[i], o, kx, ky, kz, sx, sy, sz)
        if t > t_min and t < best_t:
            best_t, best, bu, bv = t, i, u, v
    if best < 0:
        return np.inf, -1, 0.0, 0.0
    return best_t, best, bu, bv


@_jit
def _intersect_batch(node_min, node_max, left, start, count, order, tris, origins, dirs, t_min, t_max):
    n = origins.shape[0]
    t_out = np.full(n, np.inf)
    f_out = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        t, f, u, v = bvh_intersect(node_min, node_max, left, start, count, order, tris,
                                   origins[i], dirs[i], t_min, t_max)
        t_out[i] = t
        f_out[i] = f
    return t_out, f_out


@dataclass(frozen=True)
class Hit:
    t: float
    face_index: int
    barycentric: tuple[float, float]
    position: np.ndarray
    geometric_normal: np.ndarray
    shading_normal: np.ndarray


def _check_ray(origin, direction, t_min):
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ValueError("ray direction must be a unit vector")
    if t_min < 0:
        raise ValueError("t_min must be non-negative")
    return o, d


def make_hit(mesh: TriangleMesh, t: float, face: int, u: float, v: float, origin, direction) -> Hit:
    i0, i1, i2 = mesh.faces[face]
    p0, p1, p2 = mesh.vertices[i0], mesh.vertices[i1], mesh.vertices[i2]
    ng = np.cross(p1 - p0, p2 - p0)
    ng /= np.linalg.norm(ng)
    if mesh.normals is not None:
        ns = (1 - u - v) * mesh.normals[i0] + u * mesh.normals[i1] + v * mesh.normals[i2]
        length = np.linalg.norm(ns)
        ns = ns / length if length > 0 else ng.copy()
    else:
        ns = ng.copy()
    pos = (1 - u - v) * p0 + u * p1 + v * p2
    return Hit(float(t), int(face), (float(u), float(v)), pos, ng, ns)


def intersect(bvh: Bvh, origin, direction, t_min: float = 0.0, t_max: float = np.inf) -> Hit | None:
    """Nearest intersection with t in (t_min, t_max), or None."""
    o, d = _check_ray(origin, direction, t_min)
    t, f, u, v = bvh_intersect(*bvh.arrays, o, d, float(t_min), float(t_max))
    if f < 0:
        return None
    return make_hit(bvh.mesh, t, f, u, v, o, d)


def intersect_brute(mesh: TriangleMesh, origin, direction, t_min: float = 0.0,
                    t_max: float = np.inf) -> Hit | None:
    """Reference test of every triangle; used to validate the BVH."""
    o, d = _check_ray(origin, direction, t_min)
    tris = np.ascontiguousarray(mesh.triangles().reshape(-1, 9))
    t, f, u, v = brute_intersect(tris, o, d, float(t_min), float(t_max))
    if f < 0:
        return None
    return make_hit(mesh, t, f, u, v, o, d)


def intersect_many(bvh: Bvh, origins, directions, t_min: float = 0.0,
                   t_max: float = np.inf) -> tuple[np.ndarray, np.ndarray]:
    """Batched nearest hits: (t, face) arrays with t = inf and face = -1 on misses."""
    o = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    d = np.ascontiguousarray(directions, dtype=np.float64).reshape(-1, 3)
    return _intersect_batch(*bvh.arrays, o, d, float(t_min), float(t_max))
