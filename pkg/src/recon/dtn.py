"""Dirichlet-to-Neumann maps, their difference, and the masked partial-data view."""
from __future__ import annotations

import csv
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .discretization import OperatorSet, OrderedLU, Potential, nested_dissection, poisson_project
from .errors import ConfigError, MaskViolation, NearSingular
from .geometry import BoundaryPartition

ALESSANDRINI_TOL = 1e-9
CHUNK = 512  # boundary columns per block solve


@dataclass(frozen=True, eq=False)
class DtnOperator:
    matrix: np.ndarray  # boundary x boundary
    tag: str
    ops: OperatorSet = field(repr=False)

    def __matmul__(self, f):
        return self.matrix @ f


def _dtn_from_stiffness(ops: OperatorSet, A: sp.spmatrix, tag: str) -> DtnOperator:
    """Columns: boundary residual of A applied to the A-harmonic lifts of e_j, scaled by M_b^{-1}."""
    I, B = ops.interior, ops.boundary
    A = sp.csr_matrix(A)
    A_II = A[I][:, I].tocsc()
    try:
        lu = OrderedLU(A_II, nested_dissection(A_II, ops.mesh.vertices[I]))
    except RuntimeError as exc:
        raise NearSingular(str(exc)) from exc
    A_IB, A_BI, A_BB = A[I][:, B].tocsc(), A[B][:, I].tocsr(), A[B][:, B].tocsc()
    dtype = complex if np.iscomplexobj(A_II.data) else float
    out = np.empty((len(B), len(B)), dtype=complex)
    for start in range(0, len(B), CHUNK):
        sl = slice(start, min(start + CHUNK, len(B)))
        U_I = lu.solve(-A_IB[:, sl].toarray().astype(dtype))
        out[:, sl] = (A_BI @ U_I + A_BB[:, sl].toarray()) / ops.mb[:, None]
    return DtnOperator(out, tag, ops)


def assemble_dtn(ops: OperatorSet, q: Potential | None = None) -> DtnOperator:
    """Lambda_q as a dense matrix on boundary nodal vectors (lifts solved in column blocks)."""
    solver = ops.dirichlet(q)  # raises NearSingular, caches the factorisation
    B = ops.boundary
    nb = len(B)
    mq = ops.m * (0.0 if q is None else q.values)
    out = np.empty((nb, nb), dtype=complex)
    for start in range(0, nb, CHUNK):
        k = min(CHUNK, nb - start)
        E = np.zeros((nb, k))
        E[start + np.arange(k), np.arange(k)] = 1.0
        U = solver.solve(None, E)
        out[:, start:start + k] = (ops.K @ U + mq[:, None] * U)[B] / ops.mb[:, None]
    tag = "zero" if q is None or q.is_zero else json.dumps(q.descriptor, sort_keys=True)
    return DtnOperator(out, tag, ops)


def conductivity_stiffness(ops: OperatorSet, sigma: np.ndarray) -> sp.csr_matrix:
    """P1 stiffness for div(sigma grad u) with sigma averaged over each tetrahedron."""
    mesh = ops.mesh
    v, tets = mesh.vertices, mesh.tets
    e = v[tets][:, 1:] - v[tets][:, :1]
    vol = np.linalg.det(e) / 6.0
    inv = np.linalg.inv(e)
    grads = np.empty((len(tets), 4, 3))
    grads[:, 1:, :] = np.transpose(inv, (0, 2, 1))
    grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)
    s_el = sigma[tets].mean(axis=1)
    ke = np.einsum("tid,tjd->tij", grads, grads) * (vol * s_el)[:, None, None]
    rows = np.repeat(tets, 4, axis=1).ravel()
    cols = np.tile(tets, (1, 4)).ravel()
    K = sp.csr_matrix((ke.ravel(), (rows, cols)), shape=(ops.n, ops.n))
    return ((K + K.T) * 0.5).tocsr()


def assemble_conductivity_dtn(ops: OperatorSet, sigma: np.ndarray) -> DtnOperator:
    """Lambda_sigma: Dirichlet data to sigma * normal derivative."""
    sigma = np.asarray(sigma, float)
    if np.any(sigma <= 0):
        raise ConfigError("conductivity must be strictly positive")
    return _dtn_from_stiffness(ops, conductivity_stiffness(ops, sigma), "conductivity")


def schrodinger_from_conductivity(B_sigma: DtnOperator, sigma_b: np.ndarray, dsigma_dnu: np.ndarray) -> DtnOperator:
    """Lambda_q = sigma^{-1/2} (Lambda_sigma + dsigma/dnu / 2) sigma^{-1/2} on the boundary."""
    sigma_b = np.asarray(sigma_b, float)
    if np.any(sigma_b <= 0):
        raise ConfigError("boundary conductivity must be strictly positive")
    s = sigma_b**-0.5
    mat = s[:, None] * (B_sigma.matrix + np.diag(0.5 * np.asarray(dsigma_dnu, float))) * s[None, :]
    return DtnOperator(mat, "from-conductivity", B_sigma.ops)


@dataclass(frozen=True, eq=False)
class DtnDifference:
    matrix: np.ndarray
    ops: OperatorSet = field(repr=False)
    q: Potential | None = field(default=None, repr=False)
    identity_residual: float = 0.0


def alessandrini_residual(ops: OperatorSet, q: Potential, D: np.ndarray, f: np.ndarray, g: np.ndarray) -> float:
    """Relative gap between g^T Mb D f and the volume form sum m (P_0 g) q (P_q f).

    Works column-wise for 2-D f, g (one pair per column); returns the worst pair.
    """
    lhs = np.sum(g * (ops.mb[:, None] * (D @ f) if f.ndim == 2 else ops.mb * (D @ f)), axis=0)
    u0 = poisson_project(ops, None, g)
    uq = poisson_project(ops, q, f)
    m_q = ops.m * q.values
    rhs = np.sum((m_q[:, None] if f.ndim == 2 else m_q) * u0 * uq, axis=0)
    scale = np.maximum(np.abs(rhs), np.abs(lhs))
    scale = np.where(scale > 0, scale, 1.0)
    return float(np.max(np.abs(lhs - rhs) / scale))


def random_boundary_pairs(n_boundary: int, count: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((n_boundary, count)) + 1j * rng.standard_normal((n_boundary, count))
    g = rng.standard_normal((n_boundary, count)) + 1j * rng.standard_normal((n_boundary, count))
    return f, g


def dtn_difference(Bq: DtnOperator, B0: DtnOperator, q: Potential | None = None, pairs: int = 10, seed: int = 0) -> DtnDifference:
    if Bq.ops is not B0.ops or Bq.matrix.shape != B0.matrix.shape:
        raise ConfigError("DtN operators live on different meshes")
    D = Bq.matrix - B0.matrix
    res = 0.0
    if q is not None and pairs > 0:
        f, g = random_boundary_pairs(D.shape[0], pairs, seed)
        res = alessandrini_residual(Bq.ops, q, D, f, g)
        if res > ALESSANDRINI_TOL:
            raise ConfigError(f"DtN difference fails the bilinear identity (residual {res:.2e})")
    return DtnDifference(D, Bq.ops, q, res)


class PartialDtnView:
    """Read access to D restricted to rows in F_tilde and columns in B_tilde.

    Every read is counted and logged; anything touching entries outside the mask
    raises MaskViolation.  This is the only form in which boundary data reaches
    the reconstruction.
    """

    def __init__(self, difference: DtnDifference, partition: BoundaryPartition):
        self._D = difference.matrix
        self.mb = difference.ops.mb
        self.rows = partition.f_tilde.copy()
        self.cols = partition.b_tilde.copy()
        self._lock = threading.Lock()
        self.access_count = 0
        self.violations = 0
        self.log: list[tuple[str, int, int]] = []

    def _tick(self, kind: str, nrows: int, ncols: int):
        with self._lock:
            self.access_count += 1
            self.log.append((kind, nrows, ncols))

    def _violation(self, msg: str):
        with self._lock:
            self.violations += 1
        raise MaskViolation(msg)

    def entry(self, i: int, j: int) -> complex:
        if not (self.rows[i] and self.cols[j]):
            self._violation(f"entry ({i}, {j}) lies outside the measurement mask")
        self._tick("entry", 1, 1)
        return complex(self._D[i, j])

    def block(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Dense sub-block D[rows][:, cols] for index arrays inside the masks."""
        rows, cols = np.asarray(rows), np.asarray(cols)
        if not (np.all(self.rows[rows]) and np.all(self.cols[cols])):
            self._violation("block request leaves the measurement mask")
        self._tick("block", len(rows), len(cols))
        return self._D[np.ix_(rows, cols)].copy()

    def apply(self, f: np.ndarray) -> np.ndarray:
        """(D f) on F_tilde (zero elsewhere) for f supported in B_tilde."""
        if np.any(f[~self.cols] != 0):
            self._violation("input is not supported in B_tilde")
        self._tick("apply", int(self.rows.sum()), int(self.cols.sum()))
        out = np.zeros(f.shape, dtype=complex)
        out[self.rows] = self._D[np.ix_(self.rows, self.cols)] @ f[self.cols]
        return out

    def pair(self, g: np.ndarray, f: np.ndarray) -> complex:
        """Bilinear boundary pairing g^T Mb D f (no conjugation)."""
        if np.any(g[~self.rows] != 0):
            self._violation("test function is not supported in F_tilde")
        Df = self.apply(f)
        return complex(np.sum(g * self.mb * Df))

    def export(self, path) -> None:
        """CSV of in-mask entries plus a JSON sidecar holding the masks."""
        path = Path(path)
        ri, ci = np.nonzero(self.rows)[0], np.nonzero(self.cols)[0]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "col", "re", "im"])
            for i in ri:
                for j in ci:
                    val = self._D[i, j]
                    w.writerow([int(i), int(j), repr(float(val.real)), repr(float(val.imag))])
        sidecar = path.with_suffix(".json")
        sidecar.write_text(json.dumps({"rows_f_tilde": ri.tolist(), "cols_b_tilde": ci.tolist()}))


def mask_partial(D: DtnDifference, partition: BoundaryPartition) -> PartialDtnView:
    return PartialDtnView(D, partition)


def save_dtn_csv(path, matrix: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "re", "im"])
        for (i, j), val in np.ndenumerate(matrix):
            w.writerow([i, j, repr(float(val.real)), repr(float(val.imag))])
