"""Triangle-mesh representation, Fourier vertex-index embedding, pose
application (axis-angle), and OBJ/PLY/region-mask file I/O.

All geometry is in millimeters. Meshes are immutable after construction;
every function here is pure or a write-once file emitter.
"""

import math
from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    """Invalid mesh file, topology, or region mask."""


@dataclass
class TemplateMesh:
    """The neutral rest-shape head: vertices, triangles, and (after
    build_adjacency) the per-vertex sorted neighbor lists."""

    vertices: np.ndarray                 # (N, 3) float64, mm
    faces: list[tuple[int, int, int]]
    adjacency: list[np.ndarray] = field(default_factory=list)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)


@dataclass
class RegionMask:
    name: str
    indices: np.ndarray  # sorted unique vertex indices


def load_obj(path) -> TemplateMesh:
    """Parse an ASCII OBJ with `v` and triangulated `f` records.

    Face indices are 1-based; `/...` suffixes on face entries are ignored.
    Adjacency is left unbuilt (all-empty lists).
    """
    vertices = []
    faces = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshError(f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    vertices.append([float(x) for x in parts[1:4]])
                except ValueError as e:
                    raise MeshError(f"{path}:{lineno}: bad vertex coordinate: {e}") from None
            elif tag == "f":
                if len(parts) != 4:
                    raise MeshError(
                        f"{path}:{lineno}: only triangle faces are supported "
                        f"(got {len(parts) - 1} indices)"
                    )
                idx = []
                for tok in parts[1:]:
                    head = tok.split("/", 1)[0]
                    try:
                        idx.append(int(head) - 1)
                    except ValueError:
                        raise MeshError(f"{path}:{lineno}: bad face index {tok!r}") from None
                faces.append(tuple(idx))
            # other record types (vn, vt, o, g, ...) are ignored

    verts = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    n = verts.shape[0]
    for a, b, c in faces:
        for v in (a, b, c):
            if not 0 <= v < n:
                raise MeshError(f"{path}: face index {v + 1} out of range (N={n})")
    return TemplateMesh(vertices=verts, faces=faces, adjacency=[np.empty(0, dtype=np.int64) for _ in range(n)])


def write_obj(mesh_or_vertices, path, faces=None) -> None:
    """Write an ASCII OBJ. Coordinates use shortest round-trip formatting,
    so load_obj(write_obj(m)) recovers vertices exactly."""
    if isinstance(mesh_or_vertices, TemplateMesh):
        vertices = mesh_or_vertices.vertices
        faces = mesh_or_vertices.faces
    else:
        vertices = np.asarray(mesh_or_vertices)
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in vertices:
            fh.write(f"v {float(x)!r} {float(y)!r} {float(z)!r}\n")
        for a, b, c in faces or []:
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


def build_adjacency(mesh: TemplateMesh) -> TemplateMesh:
    """Derive the undirected neighbor lists from the face edges.

    Lists are deduplicated and strictly increasing; the result satisfies
    u in adj(v) <=> v in adj(u).
    """
    n = mesh.n_vertices
    neighbor_sets = [set() for _ in range(n)]
    for a, b, c in mesh.faces:
        for u, v in ((a, b), (b, c), (c, a)):
            neighbor_sets[u].add(v)
            neighbor_sets[v].add(u)
    adjacency = [np.array(sorted(s), dtype=np.int64) for s in neighbor_sets]
    return TemplateMesh(vertices=mesh.vertices, faces=mesh.faces, adjacency=adjacency)


def normalize_index(v: int, n: int) -> float:
    """Map vertex index v in [0, n) onto [-1, 1]: t = 2v/(n-1) - 1."""
    if n < 2:
        raise MeshError(f"need at least 2 vertices to normalize an index (got n={n})")
    if not 0 <= v < n:
        raise MeshError(f"vertex index {v} out of range [0, {n})")
    return 2.0 * v / (n - 1) - 1.0


def fourier_embed(t: float, k: int) -> np.ndarray:
    """Sin/cos features of t at frequencies 2^0 pi .. 2^(k-1) pi.

    Returns [sin(2^0 pi t), cos(2^0 pi t), ..., sin(2^(k-1) pi t), cos(...)].
    """
    if k < 1:
        raise MeshError(f"band count must be >= 1 (got {k})")
    out = np.empty(2 * k, dtype=np.float64)
    for band in range(k):
        arg = (2.0 ** band) * math.pi * t
        out[2 * band] = math.sin(arg)
        out[2 * band + 1] = math.cos(arg)
    return out


def vertex_embedding(n: int, k: int) -> np.ndarray:
    """(N, 2K) embedding matrix: row v = fourier_embed(normalize_index(v, n), k).

    Deterministic function of (n, k) only.
    """
    t = 2.0 * np.arange(n, dtype=np.float64) / (n - 1) - 1.0
    bands = (2.0 ** np.arange(k, dtype=np.float64)) * math.pi
    args = t[:, None] * bands[None, :]          # (N, K)
    out = np.empty((n, 2 * k), dtype=np.float64)
    out[:, 0::2] = np.sin(args)
    out[:, 1::2] = np.cos(args)
    return out


def rotation_matrix(p) -> np.ndarray:
    """Rodrigues rotation matrix for an axis-angle 3-vector."""
    p = np.asarray(p, dtype=np.float64)
    theta = float(np.linalg.norm(p))
    if theta < 1e-12:
        return np.eye(3)
    axis = p / theta
    kx, ky, kz = axis
    k = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return np.eye(3) + math.sin(theta) * k + (1.0 - math.cos(theta)) * (k @ k)


def apply_pose(vertices, p, pivot) -> np.ndarray:
    """Rotate vertices about `pivot` by the axis-angle vector p.

    ||p|| = 0 (below 1e-12) is the exact identity.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    pivot = np.asarray(pivot, dtype=np.float64)
    r = rotation_matrix(p)
    return (vertices - pivot) @ r.T + pivot


def load_region_mask(path, n: int) -> RegionMask:
    """Read a region mask: one 0-based vertex index per line, `#` comments.

    The mask name is the file stem. Duplicate indices collapse.
    """
    import os

    indices = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            try:
                v = int(body)
            except ValueError:
                raise MeshError(f"{path}:{lineno}: bad index {body!r}") from None
            if not 0 <= v < n:
                raise MeshError(f"{path}:{lineno}: index {v} out of range [0, {n})")
            indices.add(v)
    if not indices:
        raise MeshError(f"{path}: empty region mask")
    name = os.path.splitext(os.path.basename(path))[0]
    return RegionMask(name=name, indices=np.array(sorted(indices), dtype=np.int64))


def export_ply_colormap(mesh: TemplateMesh, scalars, path) -> None:
    """Write an ASCII PLY with a linear blue->red ramp over the scalar field.

    Vertex properties: x y z red green blue error. Constant fields map to
    blue. The raw scalar is kept as the float `error` property with 6
    decimal digits.
    """
    scalars = np.asarray(scalars, dtype=np.float64)
    if scalars.shape != (mesh.n_vertices,):
        raise MeshError(
            f"scalar field has shape {scalars.shape}, expected ({mesh.n_vertices},)"
        )
    if not np.all(np.isfinite(scalars)):
        raise MeshError("scalar field contains non-finite values")

    lo, hi = float(scalars.min()), float(scalars.max())
    if hi > lo:
        t = (scalars - lo) / (hi - lo)
    else:
        t = np.zeros_like(scalars)
    red = np.rint(255.0 * t).astype(np.int64)
    blue = np.rint(255.0 * (1.0 - t)).astype(np.int64)

    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("ply\nformat ascii 1.0\n")
            fh.write(f"element vertex {mesh.n_vertices}\n")
            fh.write("property float x\nproperty float y\nproperty float z\n")
            fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
            fh.write("property float error\n")
            fh.write(f"element face {len(mesh.faces)}\n")
            fh.write("property list uchar int vertex_indices\n")
            fh.write("end_header\n")
            for i in range(mesh.n_vertices):
                x, y, z = mesh.vertices[i]
                fh.write(
                    f"{x:.6f} {y:.6f} {z:.6f} {red[i]} 0 {blue[i]} {scalars[i]:.6f}\n"
                )
            for a, b, c in mesh.faces:
                fh.write(f"3 {a} {b} {c}\n")
    except OSError as e:
        raise MeshError(f"failed to write PLY to {path}: {e}") from e
