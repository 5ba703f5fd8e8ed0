"""Domain geometry: an off-axis ball, its tetrahedral mesh, the (x1, r, theta, z)
frame, the front/back boundary partition and the boundary cutoffs.

The ball has radius ``rho`` and centre ``(0, d, 0)`` with ``d > rho``, so it never
meets the x1-axis and the cylindrical radius ``r = |x'|`` is bounded below by
``d - rho``.  The exterior point is the origin and the distinguished direction
is ``e_1``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

GAMMA_MIN = 1e-6


@dataclass(frozen=True)
class DomainSpec:
    center_offset: float = 2.0
    radius: float = 1.0
    refinement_level: int = 2
    dimension: int = 3
    base_divisions: int = 3

    def __post_init__(self):
        if self.dimension != 3:
            raise ConfigError(f"only n = 3 is supported, got n = {self.dimension}")
        if not self.radius > 0:
            raise ConfigError("radius must be positive")
        if not self.center_offset > self.radius:
            raise ConfigError(
                f"domain touches axis: center offset {self.center_offset} <= radius {self.radius}"
            )
        if self.refinement_level < 0 or self.base_divisions < 1:
            raise ConfigError("refinement level must be >= 0 and base divisions >= 1")

    @property
    def center(self) -> np.ndarray:
        return np.array([0.0, self.center_offset, 0.0])

    @property
    def divisions(self) -> int:
        return self.base_divisions * 2**self.refinement_level


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray  # (N, 3)
    tets: np.ndarray  # (T, 4), positively oriented
    boundary_faces: np.ndarray  # (F, 3), counter-clockwise seen from outside
    face_normals: np.ndarray  # (F, 3) outward unit normals
    face_areas: np.ndarray  # (F,)
    boundary_nodes: np.ndarray  # sorted vertex indices on the boundary
    interior_nodes: np.ndarray
    center: np.ndarray
    radius: float

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_boundary(self) -> int:
        return len(self.boundary_nodes)

    def tet_volumes(self) -> np.ndarray:
        p = self.vertices[self.tets]
        return np.einsum("ij,ij->i", np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), p[:, 3] - p[:, 0]) / 6.0

    def boundary_index(self) -> np.ndarray:
        """Map vertex index -> position in ``boundary_nodes`` (-1 for interior)."""
        idx = np.full(self.n_vertices, -1, dtype=np.int64)
        idx[self.boundary_nodes] = np.arange(self.n_boundary)
        return idx

    def vertex_normals(self) -> np.ndarray:
        """Exact sphere normals at the boundary vertices (boundary ordering)."""
        x = self.vertices[self.boundary_nodes] - self.center
        return x / np.linalg.norm(x, axis=1, keepdims=True)

    def to_json(self) -> dict:
        return {
            "vertices": self.vertices.tolist(),
            "tets": self.tets.tolist(),
            "boundary_faces": self.boundary_faces.tolist(),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))


def _cube_to_ball(p: np.ndarray) -> np.ndarray:
    # smooth map of [-1,1]^3 onto the closed unit ball; cube faces land on the sphere
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    x2, y2, z2 = x * x, y * y, z * z
    out = np.empty_like(p)
    out[:, 0] = x * np.sqrt(np.maximum(1 - y2 / 2 - z2 / 2 + y2 * z2 / 3, 0.0))
    out[:, 1] = y * np.sqrt(np.maximum(1 - z2 / 2 - x2 / 2 + z2 * x2 / 3, 0.0))
    out[:, 2] = z * np.sqrt(np.maximum(1 - x2 / 2 - y2 / 2 + x2 * y2 / 3, 0.0))
    return out


# Kuhn subdivision of the unit cube into six tetrahedra sharing the main diagonal.
_KUHN = [
    (0, 1, 3, 7), (0, 1, 5, 7), (0, 2, 3, 7),
    (0, 2, 6, 7), (0, 4, 5, 7), (0, 4, 6, 7),
]


def _finish_mesh(vertices: np.ndarray, tets: np.ndarray, center: np.ndarray, radius: float) -> Mesh:
    p = vertices[tets]
    vol = np.einsum("ij,ij->i", np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), p[:, 3] - p[:, 0])
    if np.any(np.abs(vol) < 1e-14 * radius**3):
        raise ConfigError("degenerate (zero-volume) tetrahedron in mesh")
    tets = tets.copy()
    neg = vol < 0
    tets[neg, 2], tets[neg, 3] = tets[neg, 3].copy(), tets[neg, 2].copy()

    # faces that belong to exactly one tet form the boundary
    local = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])
    faces = tets[:, local].reshape(-1, 3)
    key = np.sort(faces, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    bfaces = faces[counts[inv.ravel()] == 1]

    q = vertices[bfaces]
    cr = np.cross(q[:, 1] - q[:, 0], q[:, 2] - q[:, 0])
    area = 0.5 * np.linalg.norm(cr, axis=1)
    normals = cr / (2 * area[:, None])
    outward = np.einsum("ij,ij->i", normals, q.mean(axis=1) - center)
    if np.any(outward <= 0):
        raise ConfigError("boundary face orientation is inconsistent")
    bnodes = np.unique(bfaces)
    inodes = np.setdiff1d(np.arange(len(vertices)), bnodes)
    return Mesh(vertices, tets, bfaces, normals, area, bnodes, inodes, np.asarray(center, float), float(radius))


def build_ball_mesh(spec: DomainSpec) -> Mesh:
    """Structured tetrahedral mesh of the ball.

    A uniform grid on the cube is split into Kuhn tetrahedra and pushed onto the ball
    by a smooth cube-to-ball map.  Level ``l`` uses ``base_divisions * 2**l``
    cells per cube edge, so every coarse vertex is also a vertex of the finer mesh
    with identical coordinates.
    """
    n = spec.divisions
    t = np.linspace(-1.0, 1.0, n + 1)
    gx, gy, gz = np.meshgrid(t, t, t, indexing="ij")
    cube = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    ball = _cube_to_ball(cube)
    on_surface = np.max(np.abs(cube), axis=1) == 1.0
    ball[on_surface] /= np.linalg.norm(ball[on_surface], axis=1, keepdims=True)
    vertices = spec.center + spec.radius * ball

    def vid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    i, j, k = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    corners = np.stack(
        [vid(i + a, j + b, k + c) for a in (0, 1) for b in (0, 1) for c in (0, 1)], axis=1
    )
    tets = np.concatenate([corners[:, list(kt)] for kt in _KUHN], axis=0)
    return _finish_mesh(vertices, tets, spec.center, spec.radius)


def load_mesh(path, spec: DomainSpec) -> Mesh:
    doc = json.loads(Path(path).read_text())
    return _finish_mesh(
        np.asarray(doc["vertices"], float), np.asarray(doc["tets"], np.int64), spec.center, spec.radius
    )


@dataclass(frozen=True, eq=False)
class CoordinateFrame:
    x1: np.ndarray
    r: np.ndarray
    theta: np.ndarray  # in [0, 2*pi)
    z: np.ndarray  # x1 + i r
    zeta: np.ndarray  # z / (i d)
    z_scale: complex

    def weight(self, tau: float, barred: bool = False) -> np.ndarray:
        """Nodal values of zeta**tau (or conj(zeta)**tau), principal branch."""
        w = np.exp(tau * np.log(self.zeta))
        return np.conj(w) if barred else w


def compute_coordinates(mesh: Mesh, spec: DomainSpec) -> CoordinateFrame:
    v = mesh.vertices
    x1 = v[:, 0].copy()
    r = np.hypot(v[:, 1], v[:, 2])
    theta = np.mod(np.arctan2(v[:, 2], v[:, 1]), 2 * np.pi)
    z = x1 + 1j * r
    zc = 1j * spec.center_offset
    return CoordinateFrame(x1, r, theta, z, z / zc, zc)


@dataclass(frozen=True, eq=False)
class BoundaryPartition:
    """Front/back split of the boundary nodes (boundary ordering throughout).

    ``s = x . nu / |x|`` is the signed, scale-free obliquity.  Nodes with ``s >= 0``
    form the back face (where the weight |z| grows outward) and the rest the front.
    """

    s: np.ndarray
    gamma_plus: np.ndarray  # bool masks over boundary nodes
    gamma_minus: np.ndarray
    f_tilde: np.ndarray
    b_tilde: np.ndarray
    b_tilde_tilde: np.ndarray
    delta: float
    gamma: np.ndarray
    gamma_clamped: np.ndarray

    def side(self, sign: int) -> np.ndarray:
        return self.gamma_plus if sign > 0 else self.gamma_minus


def partition_boundary(mesh: Mesh, delta: float = 0.15) -> BoundaryPartition:
    xb = mesh.vertices[mesh.boundary_nodes]
    nu = mesh.vertex_normals()
    xn = np.einsum("ij,ij->i", xb, nu)
    s = xn / np.linalg.norm(xb, axis=1)
    if not 0 < delta < min(s.max(), -s.min()):
        raise ConfigError(f"mask margin delta={delta} makes a mask cover the whole boundary")
    plus = s >= 0
    gamma, gamma_c = carleman_weight(xb, nu)
    return BoundaryPartition(
        s=s,
        gamma_plus=plus,
        gamma_minus=~plus,
        f_tilde=s < delta,
        b_tilde=s > -delta,
        b_tilde_tilde=s > -delta / 2,
        delta=float(delta),
        gamma=gamma,
        gamma_clamped=gamma_c,
    )


def carleman_weight(xb: np.ndarray, nu: np.ndarray, gamma_min: float = GAMMA_MIN):
    """gamma = sqrt(|x . nu|) / |x| and its clamped version max(gamma, gamma_min)."""
    gamma = np.sqrt(np.abs(np.einsum("ij,ij->i", xb, nu))) / np.linalg.norm(xb, axis=1)
    return gamma, np.maximum(gamma, gamma_min)


def smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3 - 2 * t)


@dataclass(frozen=True, eq=False)
class CutoffPair:
    chi_plus: np.ndarray
    chi_minus: np.ndarray
    band: float
    plus_band: np.ndarray  # nodes strictly inside the chi_plus ramp
    minus_band: np.ndarray


def cutoff_functions(partition: BoundaryPartition, band: float = 0.06) -> CutoffPair:
    """C^1 ramps: chi_plus is 1 off B_tilde and 0 from s >= -delta + band on;
    chi_minus is 1 off F_tilde and 0 for s <= delta - band."""
    delta = partition.delta
    if not 0 < band < delta / 2:
        raise ConfigError(f"cutoff band {band} must lie in (0, delta/2) = (0, {delta / 2})")
    s = partition.s
    chi_plus = smoothstep((-delta + band - s) / band)
    chi_minus = smoothstep((s - delta + band) / band)
    return CutoffPair(
        chi_plus=chi_plus,
        chi_minus=chi_minus,
        band=float(band),
        plus_band=(s > -delta) & (s < -delta + band),
        minus_band=(s > delta - band) & (s < delta),
    )
