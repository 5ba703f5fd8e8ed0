"""P1 finite elements with lumped mass.

Fields are complex nodal vectors over all mesh vertices; boundary vectors are
nodal over ``mesh.boundary_nodes`` in that order.  The L2 inner products are
the lumped (diagonal) volume and boundary masses.  Diagonal masses commute with
the nodal weights zeta**tau, which is what makes the conjugated-operator
adjoint identities exact matrix identities rather than O(h) statements.

The discrete Laplacian on all rows is ``-M^{-1} K``; on interior rows it is the
usual Galerkin Laplacian, on boundary rows it carries the (scaled) flux.
"""
from __future__ import annotations

import csv
import hashlib
import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, NearSingular
from .geometry import CoordinateFrame, Mesh

NEAR_SINGULAR_COND = 1e12


@dataclass(eq=False)
class OperatorSet:
    mesh: Mesh
    K: sp.csr_matrix  # stiffness
    m: np.ndarray  # lumped volume mass (diagonal of M)
    mb: np.ndarray  # lumped boundary mass over boundary nodes
    M_consistent: sp.csr_matrix
    Dx: tuple  # nodal gradient recovery, one sparse matrix per Cartesian axis
    T: sp.csr_matrix  # trace selector, boundary x vertices
    _solvers: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def M(self) -> sp.dia_matrix:
        return sp.diags(self.m)

    @property
    def Mb(self) -> sp.dia_matrix:
        return sp.diags(self.mb)

    @property
    def interior(self) -> np.ndarray:
        return self.mesh.interior_nodes

    @property
    def boundary(self) -> np.ndarray:
        return self.mesh.boundary_nodes

    @property
    def n(self) -> int:
        return self.mesh.n_vertices

    def trace(self, u: np.ndarray) -> np.ndarray:
        return u[self.boundary]

    def extend(self, g: np.ndarray) -> np.ndarray:
        """Extension by zero of a boundary vector to a field."""
        u = np.zeros(self.n, dtype=np.result_type(g, float))
        u[self.boundary] = g
        return u

    def laplacian(self) -> sp.csr_matrix:
        return (-sp.diags(1.0 / self.m) @ self.K).tocsr()

    def norm(self, u: np.ndarray) -> float:
        """M-norm; for a 2-D array, the norm of all columns together."""
        m = self.m[:, None] if np.ndim(u) == 2 else self.m
        return float(np.sqrt(np.sum(m * np.abs(u) ** 2)))

    def inner(self, u: np.ndarray, v: np.ndarray) -> complex:
        """Sesquilinear M pairing <u, v> = v^H M u."""
        return complex(np.sum(self.m * u * np.conj(v)))

    def bnorm(self, g: np.ndarray, where=None) -> float:
        w = self.mb if where is None else self.mb * where
        return float(np.sqrt(np.sum(w * np.abs(g) ** 2)))

    def dirichlet(self, q: "Potential | None" = None) -> "DirichletSolver":
        key = "zero" if q is None else q.key
        with self._lock:
            solver = self._solvers.get(key)
            if solver is None:
                solver = DirichletSolver(self, None if q is None else q.values)
                self._solvers[key] = solver
        return solver


def assemble_operators(mesh: Mesh) -> OperatorSet:
    v, tets = mesh.vertices, mesh.tets
    n = len(v)
    p = v[tets]
    e = p[:, 1:] - p[:, :1]  # (T,3,3) rows are edge vectors
    det = np.linalg.det(e)
    vol = det / 6.0
    if np.any(vol <= 1e-14 * mesh.radius**3):
        raise ConfigError("degenerate (zero-volume) tetrahedron")
    inv = np.linalg.inv(e)  # columns give gradients of barycentrics 1..3
    grads = np.empty((len(tets), 4, 3))
    grads[:, 1:, :] = np.transpose(inv, (0, 2, 1))
    grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)
    ke = np.einsum("tid,tjd->tij", grads, grads) * vol[:, None, None]
    rows = np.repeat(tets, 4, axis=1).ravel()
    cols = np.tile(tets, (1, 4)).ravel()
    K = sp.csr_matrix((ke.ravel(), (rows, cols)), shape=(n, n))
    K = (K + K.T) * 0.5

    me = np.full((4, 4), 1.0 / 20.0) + np.eye(4) / 20.0
    Mc = sp.csr_matrix(((vol[:, None, None] * me).ravel(), (rows, cols)), shape=(n, n))
    m = np.bincount(tets.ravel(), weights=np.repeat(vol / 4.0, 4), minlength=n)

    bidx = mesh.boundary_index()
    fb = bidx[mesh.boundary_faces]
    mb = np.bincount(fb.ravel(), weights=np.repeat(mesh.face_areas / 3.0, 3), minlength=mesh.n_boundary)

    T = sp.csr_matrix(
        (np.ones(mesh.n_boundary), (np.arange(mesh.n_boundary), mesh.boundary_nodes)),
        shape=(mesh.n_boundary, n),
    )
    Dx = _gradient_recovery(v, tets)
    return OperatorSet(mesh, K.tocsr(), m, mb, Mc, Dx, T)


def _gradient_recovery(v: np.ndarray, tets: np.ndarray):
    """Vertex gradients by least squares over the edge-neighbour stencil (exact on linears)."""
    n = len(v)
    pairs = np.concatenate([tets[:, [a, b]] for a in range(4) for b in range(4) if a != b])
    adj = sp.csr_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    adj.sum_duplicates()
    rows, cols, vals = [], [], [[], [], []]
    for i in range(n):
        nb = adj.indices[adj.indptr[i]:adj.indptr[i + 1]]
        X = v[nb] - v[i]
        G = np.linalg.solve(X.T @ X, X.T)  # (3, deg)
        rows.extend([i] * (len(nb) + 1))
        cols.extend(nb.tolist() + [i])
        for d in range(3):
            vals[d].extend(G[d].tolist() + [-G[d].sum()])
    return tuple(sp.csr_matrix((vals[d], (rows, cols)), shape=(n, n)) for d in range(3))


@dataclass(frozen=True, eq=False)
class Potential:
    values: np.ndarray  # complex nodal values
    descriptor: dict

    @property
    def key(self) -> str:
        return hashlib.sha1(np.ascontiguousarray(self.values, dtype=complex).tobytes()).hexdigest()

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Analytic values at arbitrary points (for quadrature oracles)."""
        return evaluate_descriptor(self.descriptor, points)


def evaluate_descriptor(desc: dict, points: np.ndarray) -> np.ndarray:
    kind = desc.get("kind", "zero")
    points = np.atleast_2d(points)
    if kind == "zero":
        return np.zeros(len(points), complex)
    amp = desc.get("amplitude", [1.0, 0.0])
    amp = complex(amp[0], amp[1]) if isinstance(amp, (list, tuple)) else complex(amp)
    if kind == "constant":
        return np.full(len(points), amp)
    c = np.asarray(desc.get("center", [0.0, 2.0, 0.0]), float)
    d2 = np.sum((points - c) ** 2, axis=1)
    if kind == "gaussian":
        return amp * np.exp(-d2 / (2 * desc["width"] ** 2))
    if kind == "ball":
        return np.where(d2 <= desc["radius"] ** 2, amp, 0.0).astype(complex)
    raise ConfigError(f"potential kind {kind!r} has no analytic form")


def make_potential(mesh: Mesh, desc: dict | None) -> Potential:
    """Build a nodal potential from a JSON-style descriptor."""
    desc = dict(desc or {"kind": "zero"})
    kind = desc.get("kind", "zero")
    if kind == "nodal":
        vals = np.zeros(mesh.n_vertices, complex)
        with open(desc["file"]) as fh:
            for row in csv.reader(fh):
                if not row or not row[0].strip().lstrip("-").isdigit():
                    continue
                vals[int(row[0])] = complex(float(row[1]), float(row[2]))
    else:
        vals = evaluate_descriptor(desc, mesh.vertices)
    if not np.all(np.isfinite(vals)):
        raise ConfigError("potential must be bounded")
    return Potential(vals, desc)


def zero_potential(mesh: Mesh) -> Potential:
    return Potential(np.zeros(mesh.n_vertices, complex), {"kind": "zero"})


def nested_dissection(A: sp.spmatrix, coords: np.ndarray, leaf: int = 64) -> np.ndarray:
    """Fill-reducing order by recursive coordinate bisection; separators are numbered last."""
    G = (sp.csr_matrix(A) != 0).astype(np.int8).tocsr()
    order: list = []

    def split(idx):
        if len(idx) <= leaf:
            order.extend(idx)
            return
        x = coords[idx]
        ax = int(np.argmax(x.max(0) - x.min(0)))
        left = x[:, ax] < np.median(x[:, ax])
        if left.all() or not left.any():
            order.extend(idx)
            return
        sub = G[idx][:, idx]
        sep = (sub @ (~left).astype(np.int8)) > 0
        sep &= left
        split(idx[left & ~sep])
        split(idx[~left])
        order.extend(idx[sep])

    split(np.arange(A.shape[0]))
    return np.asarray(order)


class OrderedLU:
    """splu of P A P^T for a given symmetric permutation P; solves with A."""

    def __init__(self, A: sp.spmatrix, perm: np.ndarray):
        self.perm = perm
        self.lu = spla.splu(sp.csc_matrix(A)[perm][:, perm].tocsc(), permc_spec="NATURAL",
                            options=dict(SymmetricMode=True))
        self.nnz = self.lu.L.nnz + self.lu.U.nnz

    def solve(self, b: np.ndarray, trans: str = "N") -> np.ndarray:
        y = self.lu.solve(np.ascontiguousarray(b[self.perm]), trans=trans)
        out = np.empty_like(y)
        out[self.perm] = y
        return out


class DirichletSolver:
    """Factorised interior block of K + M diag(q)."""

    def __init__(self, ops: OperatorSet, q: np.ndarray | None):
        self.ops = ops
        q = np.zeros(ops.n) if q is None else np.asarray(q)
        if np.iscomplexobj(q) and not np.any(q.imag):
            q = q.real
        self.q = q
        self.A = (ops.K + sp.diags(ops.m * q)).tocsr()
        I = ops.interior
        self.A_II = self.A[I][:, I].tocsc()
        self.A_IB = self.A[I][:, ops.boundary].tocsc()
        try:
            self.lu = OrderedLU(self.A_II, nested_dissection(self.A_II, ops.mesh.vertices[I]))
        except RuntimeError as exc:  # exactly singular
            raise NearSingular(str(exc)) from exc
        self.condition = self._condest()
        if not np.isfinite(self.condition) or self.condition > NEAR_SINGULAR_COND:
            raise NearSingular(f"Dirichlet problem condition estimate {self.condition:.3e}")

    def _condest(self) -> float:
        n = self.A_II.shape[0]
        dtype = np.result_type(self.A_II.dtype, float)
        inv = spla.LinearOperator(
            (n, n),
            matvec=lambda x: self.lu.solve(np.asarray(x, dtype=dtype)),
            rmatvec=lambda x: self.lu.solve(np.asarray(x, dtype=dtype), trans="H"),
            dtype=dtype,
        )
        return float(spla.onenormest(self.A_II) * spla.onenormest(inv))

    def _solve(self, b: np.ndarray) -> np.ndarray:
        if np.iscomplexobj(b) and not np.iscomplexobj(self.A_II.data):
            return self.lu.solve(np.ascontiguousarray(b.real)) + 1j * self.lu.solve(np.ascontiguousarray(b.imag))
        return self.lu.solve(b)

    def solve(self, rhs: np.ndarray | None, bdata: np.ndarray) -> np.ndarray:
        """(-Delta + q) u = rhs on interior rows, tr(u) = bdata exactly.

        Works column-wise when ``bdata`` (and ``rhs``) are 2-D.
        """
        ops = self.ops
        I, B = ops.interior, ops.boundary
        bdata = np.asarray(bdata)
        b = -(self.A_IB @ bdata)
        if rhs is not None:
            rhs = np.asarray(rhs)
            mr = ops.m[:, None] * rhs if rhs.ndim == 2 else ops.m * rhs
            b = b + mr[I]
        shape = (ops.n,) + bdata.shape[1:]
        u = np.zeros(shape, dtype=np.result_type(b, bdata, complex))
        u[I] = self._solve(b)
        u[B] = bdata
        return u


def dirichlet_solve(ops: OperatorSet, q: Potential | None, rhs, bdata) -> np.ndarray:
    return ops.dirichlet(q).solve(rhs, bdata)


def poisson_project(ops: OperatorSet, q: Potential | None, g: np.ndarray) -> np.ndarray:
    """The discrete q-harmonic field with trace g (P_q; P_0 when q is None/zero)."""
    return ops.dirichlet(q).solve(None, g)


def h_norm(ops: OperatorSet, g: np.ndarray) -> float:
    """Discrete H(boundary) norm ||P_0 g||_M."""
    return ops.norm(poisson_project(ops, None, g))


def normal_derivative(ops: OperatorSet, u: np.ndarray, q: Potential | None = None, rhs=None) -> np.ndarray:
    """Weak conormal derivative: the boundary vector b with
    <tr w0, b>_{Mb} = w0^T (K + M_q) u - w0^T M rhs for every test field w0."""
    col = (lambda a: a[:, None]) if np.ndim(u) == 2 else (lambda a: a)
    mq = ops.m * (0.0 if q is None else q.values)
    res = ops.K @ u + col(mq) * u
    if rhs is not None:
        res = res - col(ops.m) * rhs
    return res[ops.boundary] / col(ops.mb)


def complex_derivatives(ops: OperatorSet, frame: CoordinateFrame, u: np.ndarray):
    """(d/dzbar u, d/dz u) with d/dzbar = (d_x1 + i d_r)/2."""
    dx1, dr = first_order_operators(ops, frame)
    return 0.5 * (dx1 @ u + 1j * (dr @ u)), 0.5 * (dx1 @ u - 1j * (dr @ u))


def first_order_operators(ops: OperatorSet, frame: CoordinateFrame):
    c = np.cos(frame.theta)
    s = np.sin(frame.theta)
    dr = sp.diags(c) @ ops.Dx[1] + sp.diags(s) @ ops.Dx[2]
    return ops.Dx[0], dr.tocsr()


def save_boundary_csv(path, values: np.ndarray, nodes: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vertex", "re", "im"])
        for i, val in zip(nodes, values):
            w.writerow([int(i), repr(float(np.real(val))), repr(float(np.imag(val)))])
