"""The single-layer operator S_tau and the boundary integral equation for tr(w_tau).

With E = M^{-1} Tr^T Mb (boundary functional -> volume source), the
M/Mb-weighted adjoints collapse to

    S_tau h = zeta^tau tr( G_tau E (zeta^{-tau} h) ).

G_tau reads a boundary-supported source only through the partner adjoint,
whose free trace side is Gamma_{-s}; so S_tau has nonzero columns only on
Gamma_{-s} and its output trace lives on Gamma_s.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .carleman import GreensBundle
from .discretization import OperatorSet, Potential, poisson_project
from .dtn import DtnDifference, PartialDtnView
from .errors import ConfigError, IllConditioned
from .geometry import BoundaryPartition

ILL_CONDITIONED = 1e10
CHUNK = 256


@dataclass(frozen=True, eq=False)
class SingleLayer:
    tau: float
    matrix: np.ndarray  # boundary x boundary
    convention: str  # "weighted" or "plain-transpose"
    bundle: GreensBundle

    def __matmul__(self, h):
        return self.matrix @ h


def _boundary_source(ops: OperatorSet, weighted: bool) -> np.ndarray:
    """Diagonal of the boundary-to-volume map: Mb/M (weighted adjoint) or 1 (plain transpose)."""
    return ops.mb / ops.m[ops.boundary] if weighted else np.ones(len(ops.boundary))


def assemble_single_layer(bundle: GreensBundle, weighted: bool = True) -> SingleLayer:
    ops = bundle.ops
    B = ops.boundary
    wb = bundle.L.weight[B]
    scale = _boundary_source(ops, weighted) / wb
    S = np.zeros((len(B), len(B)), dtype=complex)
    cols = np.nonzero(~bundle.part.side(bundle.sign))[0]  # Gamma_{-s}
    for start in range(0, len(cols), CHUNK):
        c = cols[start:start + CHUNK]
        X = np.zeros((ops.n, len(c)), dtype=complex)
        X[B[c], np.arange(len(c))] = scale[c]
        S[:, c] = wb[:, None] * bundle.apply(X)[B]
    return SingleLayer(bundle.tau, S, "weighted" if weighted else "plain-transpose", bundle)


def single_layer_intermediate(bundle: GreensBundle, h: np.ndarray) -> np.ndarray:
    """(tr o G)^* h = G^*(E h), a volume field."""
    ops = bundle.ops
    x = np.zeros(ops.n, dtype=complex)
    x[ops.boundary] = _boundary_source(ops, True) * h
    return bundle.adjoint(x)


def factorization_check(S: SingleLayer, D: DtnDifference, q: Potential) -> float:
    """Frobenius-relative gap between S (Lambda_q - Lambda_0) and tr zeta^tau G zeta^{-tau} q P_q."""
    bundle = S.bundle
    ops = bundle.ops
    B = ops.boundary
    w = bundle.L.weight
    lhs = S.matrix @ D.matrix
    num = den = 0.0
    eye = np.eye(len(B))
    for start in range(0, len(B), CHUNK):
        sl = slice(start, start + CHUNK)
        P = poisson_project(ops, q, eye[:, sl])
        rhs = w[B][:, None] * bundle.apply((q.values / w)[:, None] * P)[B]
        num += np.sum(np.abs(lhs[:, sl] - rhs) ** 2)
        den += np.sum(np.abs(rhs) ** 2)
    if den == 0:
        return float(np.sqrt(num))
    return float(np.sqrt(num / den))


@dataclass(frozen=True, eq=False)
class BieSystem:
    """One solve of h = u + S D h on the B_tilde subspace."""

    tau: float
    mode: str
    rhs: np.ndarray  # tr(u_tau), full boundary vector
    h: np.ndarray  # solution, full boundary vector supported in B_tilde
    condition: float
    residual: float


class BieOperator:
    """I - S[B_tilde, Gamma_{-s}] D[Gamma_{-s}, B_tilde], assembled through the guarded view and LU-factored."""

    def __init__(self, S: SingleLayer, partial: PartialDtnView, partition: BoundaryPartition):
        if S.bundle.sign < 0:
            raise ConfigError("the reconstruction BIE is posed for tau > 0")
        self.tau = S.tau
        self.cols = np.nonzero(partition.b_tilde)[0]
        src = np.nonzero(~partition.side(S.bundle.sign))[0]  # Gamma_minus, inside F_tilde
        data = partial.block(src, self.cols)
        self.matrix = np.eye(len(self.cols), dtype=complex) - S.matrix[np.ix_(self.cols, src)] @ data
        self.lu = sla.lu_factor(self.matrix)
        self.condition = _condition_1(self.matrix, self.lu)
        if not np.isfinite(self.condition) or self.condition > ILL_CONDITIONED:
            raise IllConditioned(f"BIE condition estimate {self.condition:.2e} at tau={self.tau}; increase tau")
        self._mask = partition.b_tilde

    def solve(self, u_trace: np.ndarray, mode: str = "") -> BieSystem:
        if np.any(u_trace[~self._mask] != 0):
            raise ConfigError("incident trace must be supported in B_tilde")
        rhs = u_trace[self.cols]
        hb = sla.lu_solve(self.lu, rhs)
        h = np.zeros(len(u_trace), dtype=complex)
        h[self.cols] = hb
        res = np.linalg.norm(self.matrix @ hb - rhs) / max(np.linalg.norm(rhs), 1e-300)
        return BieSystem(self.tau, mode, u_trace, h, self.condition, float(res))


def assemble_bie(S: SingleLayer, partial: PartialDtnView, partition: BoundaryPartition) -> BieOperator:
    return BieOperator(S, partial, partition)


def solve_bie(S: SingleLayer, partial: PartialDtnView, u_trace: np.ndarray, partition: BoundaryPartition, mode: str = "") -> BieSystem:
    """Solve h = u + S (Lambda_q - Lambda_0) h using masked data only."""
    return BieOperator(S, partial, partition).solve(u_trace, mode)


def _condition_1(A: np.ndarray, lu) -> float:
    n = A.shape[0]
    inv = spla.LinearOperator(
        (n, n),
        matvec=lambda x: sla.lu_solve(lu, x),
        rmatvec=lambda x: sla.lu_solve(lu, x, trans=2),
        dtype=complex,
    )
    return float(np.abs(A).sum(axis=0).max() * spla.onenormest(inv))


def isomorphism_check(bundle: GreensBundle, q: Potential, iters: int = 15, seed: int = 0) -> float:
    """Estimate of the smallest M-singular value of I - G_tau diag(q).

    Power iteration on (A^* A)^{-1}, with the Krylov solves for A and its M-adjoint
    I - conj(q) G^*.
    """
    ops = bundle.ops
    if q.is_zero:
        return 1.0
    qv = q.values
    n = ops.n
    A = spla.LinearOperator((n, n), matvec=lambda x: x.ravel() - bundle.apply(qv * x.ravel()), dtype=complex)
    Ah = spla.LinearOperator((n, n), matvec=lambda x: x.ravel() - np.conj(qv) * bundle.adjoint(x.ravel()), dtype=complex)
    x = np.random.default_rng(seed).standard_normal(n).astype(complex)
    growth = 1.0
    for _ in range(iters):
        x /= ops.norm(x)
        y, info = spla.gmres(Ah, x, rtol=1e-10, atol=0.0, restart=60, maxiter=20)
        z, info2 = spla.gmres(A, y, rtol=1e-10, atol=0.0, restart=60, maxiter=20)
        if info or info2:
            raise ConfigError("Krylov solve failed inside the isomorphism estimate")
        growth = ops.norm(z)
        x = z
    return float(1.0 / np.sqrt(growth))


def poisson_equivalence_check(S: SingleLayer, D: DtnDifference, q: Potential, f: np.ndarray) -> float:
    """Both directions of the b_q / b_0 equivalence for a boundary vector f.

    Solve [I - S D] h = f for h, then compare (I - zeta^tau G zeta^{-tau} q) P_q h
    with P_0 f; returns the relative M-norm gap.
    """
    bundle = S.bundle
    ops = bundle.ops
    A = np.eye(len(f), dtype=complex) - S.matrix @ D.matrix
    h = np.linalg.solve(A, f)
    w = bundle.L.weight
    Pq = poisson_project(ops, q, h)
    lhs = Pq - w * bundle.apply(q.values * Pq / w)
    rhs = poisson_project(ops, None, f)
    return ops.norm(lhs - rhs) / max(ops.norm(rhs), 1e-300)
