"""Triangle meshes: procedural generation, OBJ I/O, and canonical normalization."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import EmptyMesh

NORMALIZE_BOX = 1.05  # half-extent of the canonical bounding box
MIN_TRIANGLE_AREA = 1e-12


@dataclass
class Mesh:
    """Indexed triangle mesh with per-vertex colors and unit normals."""

    vertices: np.ndarray   # (V, 3) float64
    triangles: np.ndarray  # (T, 3) int64
    colors: np.ndarray     # (V, 3) float64 in [0, 1]
    normals: np.ndarray    # (V, 3) float64, unit

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.colors is None:
            self.colors = np.full_like(self.vertices, 0.7)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        if self.normals is None:
            self.normals = vertex_normals(self.vertices, self.triangles)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if len(self.vertices) == 0 or len(self.triangles) == 0:
            raise EmptyMesh("mesh needs at least one vertex and one triangle")
        if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
            raise EmptyMesh("triangle index out of range")
        self.triangles = _drop_degenerate(self.vertices, self.triangles)
        if len(self.triangles) == 0:
            raise EmptyMesh("all triangles degenerate")

    def diameter(self) -> float:
        """Largest vertex-to-vertex distance (exact for <= 2000 vertices, else hull of extremes)."""
        v = self.vertices
        if len(v) <= 2000:
            d2 = ((v[:, None, :] - v[None, :, :]) ** 2).sum(-1)
            return float(np.sqrt(d2.max()))
        # cheap upper-ish bound via extreme points along many directions
        rng = np.random.default_rng(0)
        dirs = rng.normal(size=(64, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        proj = v @ dirs.T
        extremes = np.unique(np.concatenate([proj.argmin(0), proj.argmax(0)]))
        e = v[extremes]
        d2 = ((e[:, None, :] - e[None, :, :]) ** 2).sum(-1)
        return float(np.sqrt(d2.max()))

    def transformed(self, R: np.ndarray, t: np.ndarray) -> "Mesh":
        return Mesh(self.vertices @ R.T + t, self.triangles.copy(),
                    self.colors.copy(), self.normals @ R.T)


def _drop_degenerate(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    return triangles[area >= MIN_TRIANGLE_AREA]


def vertex_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals (cross products are area-weighted already)."""
    n = np.zeros_like(vertices)
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    face_n = np.cross(b - a, c - a)
    for k in range(3):
        np.add.at(n, triangles[:, k], face_n)
    lengths = np.linalg.norm(n, axis=1, keepdims=True)
    lengths[lengths < 1e-12] = 1.0
    return n / lengths


@dataclass(frozen=True)
class NormalizationSpec:
    """Isotropic map original -> normalized: q_norm = scale * (q - offset)."""

    scale: float
    offset: np.ndarray
    box: float = NORMALIZE_BOX


def normalize_mesh(mesh: Mesh, box: float = NORMALIZE_BOX) -> tuple[Mesh, NormalizationSpec]:
    """Center the AABB at the origin and scale the largest half-extent to `box`."""
    v = mesh.vertices
    lo, hi = v.min(axis=0), v.max(axis=0)
    center = (lo + hi) / 2.0
    half = float((hi - lo).max() / 2.0)
    if half <= 0:
        raise EmptyMesh("mesh has zero extent on every axis")
    scale = box / half
    out = Mesh((v - center) * scale, mesh.triangles.copy(),
               mesh.colors.copy(), mesh.normals.copy())
    return out, NormalizationSpec(scale=scale, offset=center.copy(), box=box)


# ---------------------------------------------------------------------------
# Procedural zoo (stands in for a large asset collection at desk scale)
# ---------------------------------------------------------------------------

def _palette(rng: np.random.Generator, n: int) -> np.ndarray:
    base = rng.uniform(0.15, 0.95, size=(n, 3))
    return base


def make_sphere(radius: float = 1.0, rings: int = 12, segments: int = 18,
                color=None) -> Mesh:
    verts, norms = [], []
    for i in range(rings + 1):
        theta = np.pi * i / rings
        for j in range(segments):
            phi = 2 * np.pi * j / segments
            d = np.array([np.sin(theta) * np.cos(phi),
                          np.sin(theta) * np.sin(phi),
                          np.cos(theta)])
            verts.append(radius * d)
            norms.append(d)
    tris = []
    for i in range(rings):
        for j in range(segments):
            a = i * segments + j
            b = i * segments + (j + 1) % segments
            c = (i + 1) * segments + j
            d = (i + 1) * segments + (j + 1) % segments
            if i > 0:
                tris.append([a, b, c])
            if i < rings - 1:
                tris.append([b, d, c])
    verts = np.array(verts)
    colors = np.tile(color if color is not None else [0.8, 0.3, 0.3], (len(verts), 1))
    return Mesh(verts, np.array(tris), colors, np.array(norms))


def make_box(extents=(1.0, 1.0, 1.0), face_colors=None) -> Mesh:
    ex, ey, ez = np.asarray(extents, dtype=np.float64) / 2.0
    # 6 faces x 4 vertices, duplicated so normals/colors stay per-face
    faces = [
        ((+1, 0, 0), [(+ex, -ey, -ez), (+ex, +ey, -ez), (+ex, +ey, +ez), (+ex, -ey, +ez)]),
        ((-1, 0, 0), [(-ex, +ey, -ez), (-ex, -ey, -ez), (-ex, -ey, +ez), (-ex, +ey, +ez)]),
        ((0, +1, 0), [(+ex, +ey, -ez), (-ex, +ey, -ez), (-ex, +ey, +ez), (+ex, +ey, +ez)]),
        ((0, -1, 0), [(-ex, -ey, -ez), (+ex, -ey, -ez), (+ex, -ey, +ez), (-ex, -ey, +ez)]),
        ((0, 0, +1), [(-ex, -ey, +ez), (+ex, -ey, +ez), (+ex, +ey, +ez), (-ex, +ey, +ez)]),
        ((0, 0, -1), [(+ex, -ey, -ez), (-ex, -ey, -ez), (-ex, +ey, -ez), (+ex, +ey, -ez)]),
    ]
    if face_colors is None:
        face_colors = [[0.85, 0.2, 0.2], [0.2, 0.85, 0.2], [0.2, 0.2, 0.85],
                       [0.85, 0.85, 0.2], [0.85, 0.2, 0.85], [0.2, 0.85, 0.85]]
    verts, norms, colors, tris = [], [], [], []
    for fi, (n, quad) in enumerate(faces):
        base = len(verts)
        for p in quad:
            verts.append(p)
            norms.append(n)
            colors.append(face_colors[fi % len(face_colors)])
        tris.append([base, base + 1, base + 2])
        tris.append([base, base + 2, base + 3])
    return Mesh(np.array(verts, dtype=np.float64), np.array(tris),
                np.array(colors, dtype=np.float64), np.array(norms, dtype=np.float64))


def make_torus(major: float = 1.0, minor: float = 0.35,
               segments: int = 20, rings: int = 12, color=None) -> Mesh:
    verts, norms = [], []
    for i in range(segments):
        u = 2 * np.pi * i / segments
        cu, su = np.cos(u), np.sin(u)
        for j in range(rings):
            v = 2 * np.pi * j / rings
            cv, sv = np.cos(v), np.sin(v)
            verts.append([(major + minor * cv) * cu, (major + minor * cv) * su, minor * sv])
            norms.append([cv * cu, cv * su, sv])
    tris = []
    for i in range(segments):
        for j in range(rings):
            a = i * rings + j
            b = ((i + 1) % segments) * rings + j
            c = i * rings + (j + 1) % rings
            d = ((i + 1) % segments) * rings + (j + 1) % rings
            tris.append([a, b, c])
            tris.append([b, d, c])
    verts = np.array(verts)
    colors = np.tile(color if color is not None else [0.3, 0.5, 0.85], (len(verts), 1))
    return Mesh(verts, np.array(tris), colors, np.array(norms))


def make_capsule(radius: float = 0.4, height: float = 1.2, rings: int = 8,
                 segments: int = 14, color=None) -> Mesh:
    # sphere stretched along z between two hemispherical caps
    sphere = make_sphere(radius, rings=2 * rings, segments=segments)
    v = sphere.vertices.copy()
    v[:, 2] += np.sign(v[:, 2]) * height / 2.0
    colors = np.tile(color if color is not None else [0.9, 0.7, 0.2], (len(v), 1))
    return Mesh(v, sphere.triangles.copy(), colors, sphere.normals.copy())


def make_terrain(size: float = 2.0, grid: int = 9, roughness: float = 0.35,
                 rng: np.random.Generator | None = None) -> Mesh:
    rng = rng or np.random.default_rng(0)
    xs = np.linspace(-size / 2, size / 2, grid)
    heights = rng.uniform(-roughness, roughness, size=(grid, grid))
    verts, colors = [], []
    for i in range(grid):
        for j in range(grid):
            verts.append([xs[j], xs[i], heights[i, j]])
            h = (heights[i, j] + roughness) / (2 * roughness + 1e-12)
            colors.append([0.2 + 0.5 * h, 0.55, 0.25 + 0.3 * (1 - h)])
    tris = []
    for i in range(grid - 1):
        for j in range(grid - 1):
            a = i * grid + j
            b = i * grid + j + 1
            c = (i + 1) * grid + j
            d = (i + 1) * grid + j + 1
            tris.append([a, b, c])
            tris.append([b, d, c])
    return Mesh(np.array(verts), np.array(tris), np.array(colors), None)


def make_composite(rng: np.random.Generator) -> Mesh:
    """Union of 2-3 primitive parts with per-part colors (no CSG, just merge)."""
    palette = _palette(rng, 3)
    parts = [make_box(extents=rng.uniform(0.6, 1.4, size=3),
                      face_colors=[palette[0]] * 6)]
    n_extra = int(rng.integers(1, 3))
    for k in range(n_extra):
        kind = rng.integers(0, 3)
        if kind == 0:
            p = make_sphere(rng.uniform(0.25, 0.5), rings=8, segments=12,
                            color=palette[1 + k])
        elif kind == 1:
            p = make_torus(rng.uniform(0.4, 0.7), rng.uniform(0.12, 0.25),
                           segments=12, rings=8, color=palette[1 + k])
        else:
            p = make_capsule(rng.uniform(0.15, 0.3), rng.uniform(0.5, 1.0),
                             rings=5, segments=10, color=palette[1 + k])
        offset = rng.uniform(-0.6, 0.6, size=3)
        parts.append(Mesh(p.vertices + offset, p.triangles, p.colors, p.normals))
    return merge_meshes(parts)


def merge_meshes(parts: list[Mesh]) -> Mesh:
    verts = np.concatenate([p.vertices for p in parts])
    colors = np.concatenate([p.colors for p in parts])
    normals = np.concatenate([p.normals for p in parts])
    tris, base = [], 0
    for p in parts:
        tris.append(p.triangles + base)
        base += len(p.vertices)
    return Mesh(verts, np.concatenate(tris), colors, normals)


ZOO_KINDS = ("sphere", "box", "torus", "capsule", "terrain", "composite")


def make_zoo_mesh(index: int, seed: int = 0) -> Mesh:
    """Deterministic procedural mesh #index for a dataset of varied objects."""
    rng = np.random.default_rng([seed, index])
    kind = ZOO_KINDS[index % len(ZOO_KINDS)]
    color = rng.uniform(0.2, 0.95, size=3)
    if kind == "sphere":
        m = make_sphere(rng.uniform(0.6, 1.2), rings=10, segments=16, color=color)
    elif kind == "box":
        m = make_box(extents=rng.uniform(0.5, 1.6, size=3),
                     face_colors=_palette(rng, 6))
    elif kind == "torus":
        m = make_torus(rng.uniform(0.7, 1.1), rng.uniform(0.18, 0.4),
                       segments=16, rings=10, color=color)
    elif kind == "capsule":
        m = make_capsule(rng.uniform(0.25, 0.5), rng.uniform(0.7, 1.5),
                         rings=6, segments=12, color=color)
    elif kind == "terrain":
        m = make_terrain(rng.uniform(1.5, 2.5), grid=9,
                         roughness=rng.uniform(0.2, 0.5), rng=rng)
    else:
        m = make_composite(rng)
    # random orientation so axis-aligned shapes do not dominate
    angle = rng.uniform(0, 2 * np.pi)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    R = np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K
    return m.transformed(R, np.zeros(3))


# ---------------------------------------------------------------------------
# OBJ subset: `v x y z [r g b]`, `vn`, `f a//a b//b c//c` (triangles only)
# ---------------------------------------------------------------------------

def write_obj(mesh: Mesh, path) -> None:
    with open(path, "w") as f:
        f.write(obj_dumps(mesh))


def obj_dumps(mesh: Mesh) -> str:
    out = io.StringIO()
    for p, c in zip(mesh.vertices, mesh.colors):
        out.write(f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g} "
                  f"{c[0]:.17g} {c[1]:.17g} {c[2]:.17g}\n")
    for n in mesh.normals:
        out.write(f"vn {n[0]:.17g} {n[1]:.17g} {n[2]:.17g}\n")
    for t in mesh.triangles:
        out.write(f"f {t[0]+1}//{t[0]+1} {t[1]+1}//{t[1]+1} {t[2]+1}//{t[2]+1}\n")
    return out.getvalue()


def read_obj(path) -> Mesh:
    with open(path) as f:
        return obj_loads(f.read())


def obj_loads(text: str) -> Mesh:
    verts, colors, normals, tris = [], [], [], []
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            vals = [float(x) for x in parts[1:]]
            verts.append(vals[:3])
            colors.append(vals[3:6] if len(vals) >= 6 else [0.7, 0.7, 0.7])
        elif parts[0] == "vn":
            normals.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            if len(parts) != 4:
                raise EmptyMesh("only triangle faces are supported")
            idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
            tris.append(idx)
    if not verts or not tris:
        raise EmptyMesh("OBJ contains no usable geometry")
    normals_arr = np.array(normals) if len(normals) == len(verts) else None
    return Mesh(np.array(verts), np.array(tris), np.array(colors), normals_arr)
