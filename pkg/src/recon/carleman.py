"""Conjugated Laplacians, kernel projections and the Carleman-weighted Green's operators.

Notation: ``tau`` is the real weight parameter, ``barred`` selects the weight
conj(z)**tau instead of z**tau, and ``s = sign(tau)``.  ``Gamma_s`` is the back
face for s = +1 and the front face for s = -1.

All operators act on nodal fields.  An equation ``L_tau u = f`` is imposed on
interior rows only; the boundary rows of the full-row matrix carry the discrete
normal derivative.  Adjoints are with respect to the lumped mass M.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import OperatorSet, OrderedLU, first_order_operators, nested_dissection, normal_derivative
from .errors import ConfigError, TauTooLarge
from .geometry import BoundaryPartition, CoordinateFrame

TAU_GUARD = 1e12


def _sign(tau: float) -> int:
    if tau == 0:
        raise ConfigError("tau must be nonzero")
    return 1 if tau > 0 else -1


@dataclass(eq=False)
class ConjugatedOperator:
    tau: float
    barred: bool
    A: sp.csr_matrix  # full-row matrix of W^{-1} Delta_h W
    weight: np.ndarray  # nodal W = zeta**tau (or its conjugate)
    mode: str = "conjugation"

    def apply(self, u: np.ndarray, interior_only: bool = True, ops: OperatorSet | None = None):
        out = self.A @ u
        if interior_only and ops is not None:
            out[ops.boundary] = 0
        return out


def check_tau(frame: CoordinateFrame, tau: float) -> np.ndarray:
    w = frame.weight(tau)
    big = max(np.abs(w).max(), (1 / np.abs(w)).max())
    if not np.isfinite(big) or big > TAU_GUARD:
        raise TauTooLarge(f"|zeta|^|tau| reaches {big:.3e} at tau={tau}")
    return w


def assemble_conjugated(
    ops: OperatorSet, frame: CoordinateFrame, tau: float, barred: bool = False, mode: str = "conjugation"
) -> ConjugatedOperator:
    w = check_tau(frame, tau)
    if barred:
        w = np.conj(w)
    if mode == "conjugation":
        A = sp.diags(-1.0 / (ops.m * w)) @ ops.K @ sp.diags(w)
    elif mode == "expanded":
        A = ops.laplacian() + tau * first_order_term(ops, frame, barred)
    else:
        raise ConfigError(f"unknown assembly mode {mode!r}")
    return ConjugatedOperator(float(tau), bool(barred), sp.csr_matrix(A), w, mode)


def first_order_term(ops: OperatorSet, frame: CoordinateFrame, barred: bool = False, n: int = 3):
    """diag(1/z) L with L = 4 d/dzbar - 2(n-2)/(z - zbar); conjugated for the barred weight."""
    dx1, dr = first_order_operators(ops, frame)
    z = frame.z
    if barred:
        L = 2 * (dx1 - 1j * dr) - sp.diags(2 * (n - 2) / (np.conj(z) - z))
        return sp.diags(1 / np.conj(z)) @ L
    L = 2 * (dx1 + 1j * dr) - sp.diags(2 * (n - 2) / (z - np.conj(z)))
    return sp.diags(1 / z) @ L


def profile_operator(ops: OperatorSet, frame: CoordinateFrame, n: int = 3) -> sp.csr_matrix:
    """The first-order operator L = 4 d/dzbar - 2(n-2)/(z - zbar) on nodal fields."""
    dx1, dr = first_order_operators(ops, frame)
    z = frame.z
    return (2 * (dx1 + 1j * dr) - sp.diags(2 * (n - 2) / (z - np.conj(z)))).tocsr()


class LeastNormSolver:
    """Weighted least-norm solutions of ``L u = f`` (interior rows) with traces fixed on
    ``Gamma_{-s}`` and free on ``Gamma_s``.

    With ``penalty=None`` the weight is the mass M and ``apply`` is H_tau: the unique
    solution with trace supported in Gamma_s that is M-orthogonal to the kernel
    N_tau = {L u = 0, tr u = 0 on Gamma_{-s}}.  ``project`` is the M-orthogonal
    projector onto N_tau.  A boundary ``penalty`` adds weight on the free trace
    (the product norm used for prescribed-boundary solves).
    """

    def __init__(self, ops: OperatorSet, part: BoundaryPartition, L: ConjugatedOperator, penalty=None):
        self.ops, self.part, self.L = ops, part, L
        self.sign = _sign(L.tau)
        side = part.side(self.sign)
        self.free_b = ops.boundary[side]
        self.fixed_b = ops.boundary[~side]
        self.side = side
        self.U = np.concatenate([ops.interior, self.free_b])
        I = ops.interior
        A_I = L.A[I]
        self.C = A_I[:, self.U].tocsc()
        self.C_fixed = A_I[:, self.fixed_b].tocsc()
        wU = ops.m[self.U].astype(float).copy()
        if penalty is not None:
            wU[len(I):] += penalty[side]
        self.wU = wU
        if L.mode == "conjugation":
            # C = P |D| K_IU diag(w_U) with D = diag(-1/(m_I w_I)) and P its phase, so
            # C W^{-1} C^H = P S_r P^H with S_r = |D| K_IU diag(|w_U|^2 / wU) K_UI |D| real SPD.
            K_IU = ops.K.tocsr()[I][:, self.U]
            absd = 1.0 / (ops.m[I] * np.abs(L.weight[I]))
            S_r = sp.diags(absd) @ K_IU @ sp.diags(np.abs(L.weight[self.U]) ** 2 / wU) @ K_IU.T @ sp.diags(absd)
            self._phase = -np.conj(L.weight[I]) / np.abs(L.weight[I])
            self.lu = OrderedLU(S_r, nested_dissection(S_r, ops.mesh.vertices[I]))
            self._real = True
        else:
            S = self.C @ sp.diags(1.0 / wU) @ self.C.conj().T
            self.lu = spla.splu(sp.csc_matrix(S))
            self._real = False

    def _solve(self, b):
        if not self._real:
            return self.lu.solve(np.ascontiguousarray(b, dtype=complex))
        p = self._phase[:, None] if b.ndim == 2 else self._phase
        r = np.conj(p) * b
        k = r.shape[1] if r.ndim == 2 else 1
        y = self.lu.solve(np.column_stack([r.real, r.imag]))
        y = y[:, :k] + 1j * y[:, k:]
        return p * (y if r.ndim == 2 else y[:, 0])

    def _embed_U(self, xU):
        out = np.zeros((self.ops.n,) + xU.shape[1:], dtype=complex)
        out[self.U] = xU
        return out

    def _wU(self, x):
        return self.wU[:, None] if x.ndim == 2 else self.wU

    def apply(self, f: np.ndarray) -> np.ndarray:
        """H f; only the interior rows of f are read."""
        if not np.any(f[self.ops.interior]):
            return np.zeros(f.shape, dtype=complex)
        lam = self._solve(f[self.ops.interior])
        xU = (self.C.conj().T @ lam) / self._wU(lam)
        return self._embed_U(xU)

    def solve_fixed(self, v: np.ndarray, v_fixed: np.ndarray) -> np.ndarray:
        """Least-norm u with (L u)_I = v_I and tr(u) = v_fixed on Gamma_{-s}."""
        b = v[self.ops.interior] - self.C_fixed @ v_fixed
        u = self.apply_b(b)
        u[self.fixed_b] = v_fixed
        return u

    def apply_b(self, b):
        lam = self._solve(b)
        return self._embed_U((self.C.conj().T @ lam) / self._wU(lam))

    def adjoint(self, x: np.ndarray) -> np.ndarray:
        """M-adjoint H* x = M^{-1} H^H M x (mass weight only)."""
        ops = self.ops
        y = self._solve(self.C @ x[self.U])
        m_I = ops.m[ops.interior]
        out = np.zeros((ops.n,) + x.shape[1:], dtype=complex)
        out[ops.interior] = y / (m_I[:, None] if y.ndim == 2 else m_I)
        return out

    def project(self, x: np.ndarray) -> np.ndarray:
        """M-orthogonal projection onto the kernel N_tau."""
        xU = x[self.U]
        lam = self._solve(self.C @ xU)
        return self._embed_U(xU - (self.C.conj().T @ lam) / self._wU(lam))


@dataclass(eq=False)
class KernelBasis:
    tau: float
    barred: bool
    columns: np.ndarray  # (N, |Gamma_s|)
    nodes: np.ndarray  # vertex indices of Gamma_s, one per column


def kernel_basis(ops: OperatorSet, part: BoundaryPartition, L: ConjugatedOperator) -> KernelBasis:
    """Column j: L u = 0 on interior rows, tr(u) = e_j on Gamma_s, 0 on Gamma_{-s}."""
    s = _sign(L.tau)
    nodes = ops.boundary[part.side(s)]
    I = ops.interior
    A_II = sp.csc_matrix(L.A[I][:, I])
    rhs = -L.A[I][:, nodes].toarray()
    cols = np.zeros((ops.n, len(nodes)), complex)
    cols[I] = spla.splu(A_II).solve(np.ascontiguousarray(rhs, dtype=complex))
    cols[nodes, np.arange(len(nodes))] = 1.0
    return KernelBasis(L.tau, L.barred, cols, nodes)


@dataclass(eq=False)
class Projector:
    """pi_tau from an explicit kernel basis (reference route; see LeastNormSolver.project)."""

    basis: np.ndarray
    gram_lu: tuple
    m: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        import scipy.linalg as sla

        mb = self.m[:, None] if x.ndim == 2 else self.m
        coef = sla.lu_solve(self.gram_lu, self.basis.conj().T @ (mb * x))
        return self.basis @ coef


def projector_from_basis(ops: OperatorSet, kb: KernelBasis) -> Projector:
    import scipy.linalg as sla

    B = kb.columns
    gram = B.conj().T @ (ops.m[:, None] * B)
    return Projector(B, sla.lu_factor(gram), ops.m)


@dataclass(eq=False)
class GreensBundle:
    """G_tau = H_tau + pi_tau H'^*, where H' is the least-norm operator for (-tau, not barred)."""

    tau: float
    barred: bool
    ops: OperatorSet
    part: BoundaryPartition
    L: ConjugatedOperator
    L_partner: ConjugatedOperator
    H: LeastNormSolver
    H_partner: LeastNormSolver
    norm_estimate: float | None = None
    _dense: np.ndarray | None = field(default=None, repr=False)

    @property
    def sign(self) -> int:
        return _sign(self.tau)

    def apply(self, f: np.ndarray) -> np.ndarray:
        if self._dense is not None:
            return self._dense @ f
        return self.H.apply(f) + self.H.project(self.H_partner.adjoint(f))

    def adjoint(self, x: np.ndarray) -> np.ndarray:
        """M-adjoint G* = H* + H' pi."""
        return self.H.adjoint(x) + self.H_partner.apply(self.H.project(x))

    def partner_apply(self, f: np.ndarray) -> np.ndarray:
        """The partner Green's operator built from the same two factorisations."""
        return self.H_partner.apply(f) + self.H_partner.project(self.H.adjoint(f))

    def T(self, f: np.ndarray) -> np.ndarray:
        """T_tau = H_tau (1 - pi'_{-tau})."""
        return self.H.apply(f - self.H_partner.project(f))

    def T_partner(self, f: np.ndarray) -> np.ndarray:
        return self.H_partner.apply(f - self.H.project(f))

    def dense(self) -> np.ndarray:
        """Dense N x N matrix of G (cached)."""
        if self._dense is None:
            eye = np.eye(self.ops.n, dtype=complex)
            self._dense = self.H.apply(eye) + self.H.project(self.H_partner.adjoint(eye))
        return self._dense

    def operator_norm(self, seed: int = 0, tol: float = 1e-6) -> float:
        """||G||_{M -> M} via Lanczos on M^{1/2} G* G M^{-1/2}."""
        if self.norm_estimate is None:
            sq = np.sqrt(self.ops.m)
            n = self.ops.n
            op = spla.LinearOperator(
                (n, n), matvec=lambda x: sq * self.adjoint(self.apply(x.ravel() / sq)), dtype=complex
            )
            v0 = np.random.default_rng(seed).standard_normal(n).astype(complex)
            val = spla.eigsh(op, k=1, which="LA", v0=v0, tol=tol, return_eigenvectors=False)
            self.norm_estimate = float(np.sqrt(abs(val[0])))
        return self.norm_estimate


def build_bundle(ops: OperatorSet, frame: CoordinateFrame, part: BoundaryPartition, tau: float, barred: bool = False):
    L = assemble_conjugated(ops, frame, tau, barred)
    Lp = assemble_conjugated(ops, frame, -tau, not barred)
    return GreensBundle(tau, barred, ops, part, L, Lp, LeastNormSolver(ops, part, L), LeastNormSolver(ops, part, Lp))


def solve_H(bundle: GreensBundle, f: np.ndarray) -> np.ndarray:
    return bundle.H.apply(f)


def greens_apply(bundle: GreensBundle, f: np.ndarray) -> np.ndarray:
    return bundle.apply(f)


def zero_trace_fields(ops: OperatorSet, count: int, seed: int = 0, degree: int = 3) -> np.ndarray:
    """Smooth random fields vanishing on the boundary: bubble * random complex polynomial."""
    rng = np.random.default_rng(seed)
    x = (ops.mesh.vertices - ops.mesh.center) / ops.mesh.radius
    bubble = 1.0 - np.sum(x**2, axis=1)
    bubble[ops.boundary] = 0.0
    powers = [(a, b, c) for a in range(degree + 1) for b in range(degree + 1) for c in range(degree + 1) if a + b + c <= degree]
    mono = np.column_stack([x[:, 0] ** a * x[:, 1] ** b * x[:, 2] ** c for a, b, c in powers])
    coef = rng.standard_normal((len(powers), count)) + 1j * rng.standard_normal((len(powers), count))
    return bubble[:, None] * (mono @ coef)


def carleman_check(ops: OperatorSet, part: BoundaryPartition, L: ConjugatedOperator, u: np.ndarray) -> float:
    """Ratio of the two sides of the Carleman estimate for a zero-trace field u."""
    if not np.any(u):
        raise ConfigError("Carleman ratio undefined for u = 0")
    if np.any(u[ops.boundary]):
        raise ConfigError("Carleman check needs a zero-trace field")
    tau = abs(L.tau)
    s = _sign(L.tau)
    Lu = L.A @ u
    Lu[ops.boundary] = 0
    dnu = normal_derivative(ops, u)
    gd = part.gamma * dnu
    side = part.side(s)
    num = tau**-0.5 * ops.bnorm(gd, side) + ops.norm(u)
    den = ops.norm(Lu) / tau + tau**-0.5 * ops.bnorm(gd, ~side)
    return num / den


def cutoff_test_fields(ops: OperatorSet, side_sign: int, count: int, seed: int = 0) -> np.ndarray:
    """Zero-trace fields that also vanish to second order near Gamma_{side_sign}.

    Random bubble fields times max(-side_sign * sigma, 0)^2, where sigma extends
    the boundary quantity x.nu/|x| into the ball.  Their discrete normal derivative
    on Gamma_{side_sign} is zero up to discretization error.
    """
    x = ops.mesh.vertices
    sigma = np.einsum("ij,ij->i", x, x - ops.mesh.center) / (ops.mesh.radius * np.linalg.norm(x, axis=1))
    cut = np.maximum(-side_sign * sigma, 0.0) ** 2
    return cut[:, None] * zero_trace_fields(ops, count, seed)


def _rel(a: np.ndarray, b: np.ndarray, ops: OperatorSet) -> float:
    return ops.norm(a) / max(ops.norm(b), 1e-300)


def greens_properties_report(
    bundle: GreensBundle,
    partner: GreensBundle,
    count: int = 5,
    seed: int = 0,
    with_norm: bool = True,
) -> dict:
    """Residuals of the Green's operator properties on seeded random fields.

    ``partner`` must be an independently built bundle for (-tau, not barred);
    the adjoint identity is checked against it rather than against
    ``bundle.adjoint``.  Property (v) uses cutoff test fields that vanish to
    second order near Gamma_{-s}, so its residual is a discretization error.
    """
    ops = bundle.ops
    I = ops.interior
    s = bundle.sign
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((ops.n, count)) + 1j * rng.standard_normal((ops.n, count))
    g = rng.standard_normal((ops.n, count)) + 1j * rng.standard_normal((ops.n, count))
    Gf = bundle.apply(f)
    r_right = np.linalg.norm((bundle.L.A @ Gf - f)[I]) / np.linalg.norm(f[I])
    off = ~bundle.part.side(s)
    r_trace = np.abs(Gf[ops.boundary][off]).max() / np.abs(Gf).max()
    lhs = np.sum(ops.m[:, None] * Gf * np.conj(g), axis=0)
    rhs = np.sum(ops.m[:, None] * f * np.conj(partner.apply(g)), axis=0)
    r_adj = float(np.max(np.abs(lhs - rhs)) / np.max(np.abs(lhs)))
    Tf = bundle.T(f)
    lhs_t = np.sum(ops.m[:, None] * Tf * np.conj(g), axis=0)
    rhs_t = np.sum(ops.m[:, None] * f * np.conj(partner.T(g)), axis=0)
    r_t = float(np.max(np.abs(lhs_t - rhs_t)) / np.max(np.abs(lhs_t)))
    Hf = bundle.H.apply(f)
    r_piH = _rel(bundle.H.project(Hf), Hf, ops)
    pf = bundle.H.project(f)
    r_idem = _rel(bundle.H.project(pf) - pf, pf, ops)
    lhs_p = np.sum(ops.m[:, None] * pf * np.conj(g), axis=0)
    rhs_p = np.sum(ops.m[:, None] * f * np.conj(bundle.H.project(g)), axis=0)
    r_self = float(np.max(np.abs(lhs_p - rhs_p)) / np.max(np.abs(lhs_p)))
    v = cutoff_test_fields(ops, -s, count, seed)
    Lv = bundle.L.A @ v
    Lv[ops.boundary] = 0
    r_left = _rel(bundle.apply(Lv) - v, v, ops)
    report = {
        "tau": bundle.tau,
        "barred": bundle.barred,
        "right_inverse": float(r_right),
        "trace_support": float(r_trace),
        "adjoint": r_adj,
        "left_inverse_on_cutoff_fields": float(r_left),
        "projector_annihilates_H": float(r_piH),
        "projector_idempotent": float(r_idem),
        "projector_self_adjoint": r_self,
        "T_adjoint": r_t,
        "seed": seed,
    }
    if with_norm:
        report["norm"] = bundle.operator_norm(seed=seed)
    return report
