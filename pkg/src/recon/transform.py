"""The scattering solution omega_tau, the transform t(tau, g) and its large-tau limit."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .carleman import GreensBundle
from .cgo import AngularMode, CgoHarmonic
from .discretization import OperatorSet, Potential
from .dtn import PartialDtnView
from .errors import ConfigError, NotContracting
from .geometry import Mesh

DENSE_LIMIT = 6000  # largest field size for the dense direct solve


@dataclass(frozen=True, eq=False)
class ScatteringSolution:
    tau: float
    mode: AngularMode
    omega: np.ndarray
    w: np.ndarray  # zeta^tau omega, solves (-Delta + q) w = 0
    method: str
    iterations: int
    residual: float  # ||omega - mu - G q omega||_M / ||mu||_M


def contraction_estimate(bundle: GreensBundle, q: Potential, iters: int = 30, seed: int = 0) -> float:
    """Power-iteration estimate of ||G_tau diag(q)||_M."""
    ops = bundle.ops
    x = np.random.default_rng(seed).standard_normal(ops.n).astype(complex)
    est = 0.0
    for _ in range(iters):
        x /= ops.norm(x)
        y = bundle.apply(q.values * x)
        est = ops.norm(y)
        x = bundle.adjoint(np.conj(q.values) * y)
    return est


def fixed_point_residual(bundle: GreensBundle, q: Potential, mu: np.ndarray, omega: np.ndarray) -> float:
    ops = bundle.ops
    r = omega - mu - bundle.apply(q.values * omega)
    return ops.norm(r) / max(ops.norm(mu), 1e-300)


def solve_omega(bundle: GreensBundle, q: Potential, mu: CgoHarmonic, method: str = "direct", tol: float = 1e-12, max_iter: int = 500) -> ScatteringSolution:
    """Solve omega = mu + G_tau q omega.

    ``direct`` factors I - G diag(q) densely when the field fits (else a Krylov
    solve to ``tol``); ``neumann`` runs the fixed-point iteration and requires
    ||G q|| < 1.
    """
    ops = bundle.ops
    qv = q.values
    if q.is_zero:
        omega, used, its = mu.mu.copy(), "exact", 0
    elif method == "neumann":
        rate = contraction_estimate(bundle, q)
        if rate >= 1:
            raise NotContracting(f"||G q|| ~ {rate:.3f} >= 1 at tau={bundle.tau}; raise tau or use direct mode")
        omega, used, its = mu.mu.copy(), "neumann", 0
        for its in range(1, max_iter + 1):
            new = mu.mu + bundle.apply(qv * omega)
            step = ops.norm(new - omega)
            omega = new
            if step <= tol * ops.norm(omega):
                break
    elif method == "direct":
        if ops.n <= DENSE_LIMIT:
            A = np.eye(ops.n, dtype=complex) - bundle.dense() * qv[None, :]
            omega, used, its = sla.solve(A, mu.mu), "dense", 1
        else:
            op = spla.LinearOperator((ops.n, ops.n), matvec=lambda x: x.ravel() - bundle.apply(qv * x.ravel()), dtype=complex)
            counter = []
            omega, info = spla.gmres(op, mu.mu, rtol=tol, atol=0.0, restart=80, maxiter=20, callback=counter.append, callback_type="pr_norm")
            if info != 0:
                raise ConfigError(f"Krylov solve for omega did not converge (info={info})")
            used, its = "krylov", len(counter)
    else:
        raise ConfigError(f"unknown omega solve method {method!r}")
    w = bundle.L.weight * omega
    return ScatteringSolution(bundle.tau, mu.mode, omega, w, used, its, fixed_point_residual(bundle, q, mu.mu, omega))


def transform_volume(nu: CgoHarmonic, q: Potential, omega: ScatteringSolution, ops: OperatorSet) -> complex:
    """t = sum m nu q omega (bilinear)."""
    if len(nu.mu) != ops.n or len(omega.omega) != ops.n:
        raise ConfigError("fields do not belong to this mesh")
    return complex(np.sum(ops.m * nu.mu * q.values * omega.omega))


def transform_boundary(v_trace: np.ndarray, partial: PartialDtnView, w_trace: np.ndarray) -> complex:
    """t = tr(v)^T Mb (Lambda_q - Lambda_0) tr(w) read through the masked view."""
    return partial.pair(v_trace, w_trace)


@dataclass(frozen=True)
class TransformSample:
    tau: float
    mode: str
    t_volume: complex
    t_boundary: complex
    oracle: complex
    limit_constant: complex = -0.5j  # (2i)^{-(n-2)} with n = 3

    @property
    def estimate(self) -> complex:
        """t / limit_constant from the boundary formula."""
        return self.t_boundary / self.limit_constant

    @property
    def consistency(self) -> float:
        return abs(self.t_volume - self.t_boundary) / max(abs(self.t_volume), 1e-300)


def mesh_quadrature(mesh: Mesh, func, order: int = 4) -> complex:
    """Integrate func(points) over the tetrahedral mesh with a product Gauss rule."""
    from scipy.special import roots_jacobi

    x, wx = roots_jacobi(order, 2, 0)
    y, wy = roots_jacobi(order, 1, 0)
    z, wz = roots_jacobi(order, 0, 0)
    a, b, c = (x + 1) / 2, (y + 1) / 2, (z + 1) / 2
    A, Bq, C = np.meshgrid(a, b, c, indexing="ij")
    W = (wx[:, None, None] * wy[None, :, None] * wz[None, None, :]).ravel() / 64.0
    u = A.ravel()
    v = Bq.ravel() * (1 - u)
    t = C.ravel() * (1 - u) * (1 - Bq.ravel())
    lam = np.column_stack([1 - u - v - t, u, v, t])  # barycentrics
    P = mesh.vertices[mesh.tets]  # (T, 4, 3)
    vol6 = np.abs(mesh.tet_volumes()) * 6.0
    pts = np.einsum("qa,tad->tqd", lam, P).reshape(-1, 3)
    vals = np.asarray(func(pts)).reshape(len(P), -1)
    return complex(np.sum(vals * W[None, :] * vol6[:, None]))


def ball_quadrature(center, radius: float, func, n_r: int = 24, n_polar: int = 48, n_az: int = 64) -> complex:
    """Integrate func over the exact ball with a Gauss-Legendre x Gauss-Legendre x trapezoid rule."""
    r, wr = np.polynomial.legendre.leggauss(n_r)
    r = (r + 1) * radius / 2
    wr = wr * radius / 2
    ct, wt = np.polynomial.legendre.leggauss(n_polar)
    ph = np.arange(n_az) * 2 * np.pi / n_az
    wp = np.full(n_az, 2 * np.pi / n_az)
    R, CT, PH = np.meshgrid(r, ct, ph, indexing="ij")
    ST = np.sqrt(1 - CT**2)
    # polar axis along e2 (towards the x1-axis-free direction); any axis works for a ball
    pts = np.column_stack([(R * ST * np.cos(PH)).ravel(), (R * CT).ravel(), (R * ST * np.sin(PH)).ravel()]) + center
    W = (wr[:, None, None] * R**2 * wt[None, :, None] * wp[None, None, :]).ravel()
    return complex(np.sum(func(pts) * W))


def reference_integral(q: Potential, mode: AngularMode, mesh: Mesh, n: int = 3, method: str = "mesh") -> complex:
    """int q g(theta) r^{-(n-2)} dV over the domain.

    ``mesh`` integrates the analytic q over the tetrahedra with a degree-7 rule;
    ``ball`` uses the exact ball instead.  Nodal q always uses lumped mesh quadrature.
    """

    def integrand(p):
        r = np.hypot(p[:, 1], p[:, 2])
        theta = np.mod(np.arctan2(p[:, 2], p[:, 1]), 2 * np.pi)
        return q.evaluate(p) * mode(theta) / r ** (n - 2)

    if q.descriptor.get("kind") == "nodal":
        v = mesh.vertices
        r = np.hypot(v[:, 1], v[:, 2])
        th = np.mod(np.arctan2(v[:, 2], v[:, 1]), 2 * np.pi)
        vol = np.abs(mesh.tet_volumes())
        m = np.bincount(mesh.tets.ravel(), weights=np.repeat(vol / 4, 4), minlength=len(v))
        return complex(np.sum(m * q.values * mode(th) / r ** (n - 2)))
    if method == "mesh":
        return mesh_quadrature(mesh, integrand)
    if method == "ball":
        return ball_quadrature(mesh.center, mesh.radius, integrand)
    raise ConfigError(f"unknown quadrature method {method!r}")


@dataclass(frozen=True)
class RadonEstimate:
    estimate: complex
    oracle: complex
    errors: list
    decreasing: bool
    relative_error: float


def radon_limit(samples: list[TransformSample]) -> RadonEstimate:
    if len(samples) < 2:
        raise ConfigError("radon_limit needs at least two tau samples")
    samples = sorted(samples, key=lambda s: s.tau)
    errors = [abs(s.estimate - s.oracle) for s in samples]
    last = samples[-1]
    rel = errors[-1] / abs(last.oracle) if abs(last.oracle) > 0 else float(errors[-1])
    return RadonEstimate(
        estimate=last.estimate,
        oracle=last.oracle,
        errors=errors,
        decreasing=bool(all(b < a for a, b in zip(errors, errors[1:]))),
        relative_error=float(rel),
    )


def save_samples_csv(path, samples: list[TransformSample]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "mode", "re_t_vol", "im_t_vol", "re_t_bdy", "im_t_bdy", "re_oracle", "im_oracle", "abs_error"])
        for s in samples:
            w.writerow(
                [s.tau, s.mode, repr(s.t_volume.real), repr(s.t_volume.imag), repr(s.t_boundary.real), repr(s.t_boundary.imag),
                 repr(s.oracle.real), repr(s.oracle.imag), repr(abs(s.estimate - s.oracle))]
            )


def save_trend_json(path, estimate: RadonEstimate) -> None:
    Path(path).write_text(
        json.dumps(
            {
                "estimate": [estimate.estimate.real, estimate.estimate.imag],
                "oracle": [estimate.oracle.real, estimate.oracle.imag],
                "errors": estimate.errors,
                "decreasing": estimate.decreasing,
                "relative_error": estimate.relative_error,
            },
            indent=2,
        )
    )
