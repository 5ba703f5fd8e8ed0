"""Incident profiles, the prescribed-boundary solver R_tau and the harmonic
solutions mu_tau (trace in B_tilde) and nu_{-tau} (trace in F_tilde)."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .carleman import ConjugatedOperator, LeastNormSolver, assemble_conjugated, profile_operator
from .discretization import OperatorSet
from .errors import ConfigError
from .geometry import BoundaryPartition, CoordinateFrame, CutoffPair

K_MAX = 4


@dataclass(frozen=True)
class AngularMode:
    """g(theta) = c0 + sum_k (a_k cos k theta + b_k sin k theta)."""

    c0: float = 0.0
    cos: tuple = ()
    sin: tuple = ()
    name: str = ""

    def __post_init__(self):
        if len(self.cos) > K_MAX or len(self.sin) > K_MAX:
            raise ConfigError(f"angular modes are limited to k <= {K_MAX}")
        if not all(np.isfinite([self.c0, *self.cos, *self.sin])):
            raise ConfigError("angular mode coefficients must be finite")

    @classmethod
    def parse(cls, label: str) -> "AngularMode":
        """'1', 'cos', 'sin', 'cos2', 'sin3', ..."""
        label = label.strip()
        if label == "1":
            return cls(1.0, name="1")
        for kind in ("cos", "sin"):
            if label.startswith(kind):
                k = int(label[3:] or 1)
                if not 1 <= k <= K_MAX:
                    raise ConfigError(f"mode {label!r}: k must be in 1..{K_MAX}")
                coef = tuple(1.0 if j == k - 1 else 0.0 for j in range(k))
                return cls(**{kind: coef}, name=label)
        raise ConfigError(f"unknown angular mode {label!r}")

    def __call__(self, theta: np.ndarray) -> np.ndarray:
        out = np.full(np.shape(theta), self.c0, dtype=float)
        for k, a in enumerate(self.cos, start=1):
            out += a * np.cos(k * theta)
        for k, b in enumerate(self.sin, start=1):
            out += b * np.sin(k * theta)
        return out

    def combine(self, alpha: float, other: "AngularMode", beta: float) -> "AngularMode":
        def mix(x, y):
            n = max(len(x), len(y))
            x = tuple(x) + (0.0,) * (n - len(x))
            y = tuple(y) + (0.0,) * (n - len(y))
            return tuple(alpha * a + beta * b for a, b in zip(x, y))

        return AngularMode(alpha * self.c0 + beta * other.c0, mix(self.cos, other.cos), mix(self.sin, other.sin))

    @property
    def label(self) -> str:
        return self.name or f"c0={self.c0},cos={list(self.cos)},sin={list(self.sin)}"


CONSTANT_MODE = AngularMode(1.0, name="1")


@dataclass(frozen=True, eq=False)
class IncidentProfile:
    h: np.ndarray
    laplacian: np.ndarray  # Delta_h h on all rows
    mode: AngularMode
    sign: int  # +1 for h_plus, -1 for h_minus


def incident_profile(ops: OperatorSet, frame: CoordinateFrame, mode: AngularMode = CONSTANT_MODE, sign: int = 1, n: int = 3) -> IncidentProfile:
    """h = (z - zbar)^{-(n-2)/2} g(theta); the minus profile always uses g = 1."""
    if sign < 0:
        mode = CONSTANT_MODE
    h = (frame.z - np.conj(frame.z)) ** (-(n - 2) / 2) * mode(frame.theta)
    return IncidentProfile(h, ops.laplacian() @ h, mode, 1 if sign > 0 else -1)


def profile_residual(ops: OperatorSet, frame: CoordinateFrame, profile: IncidentProfile) -> float:
    """||L h||_M over interior nodes, L = 4 d/dzbar - 2(n-2)/(z - zbar)."""
    Lh = profile_operator(ops, frame) @ profile.h
    Lh[ops.boundary] = 0
    return ops.norm(Lh)


def trace_penalty(ops: OperatorSet, part: BoundaryPartition, tau: float) -> np.ndarray:
    """Boundary weight tau^{-1} gamma^{-2} dS of the product norm."""
    return ops.mb / (abs(tau) * part.gamma_clamped**2)


class RSolver:
    """R_tau(v, v_minus): L u = v, tr u = v_minus on Gamma_{-s}, least product norm."""

    def __init__(self, ops: OperatorSet, part: BoundaryPartition, L: ConjugatedOperator):
        self.ops, self.part, self.L = ops, part, L
        self.solver = LeastNormSolver(ops, part, L, penalty=trace_penalty(ops, part, L.tau))

    @property
    def fixed_mask(self) -> np.ndarray:
        return ~self.part.side(self.solver.sign)

    def __call__(self, v: np.ndarray, v_minus: np.ndarray) -> np.ndarray:
        return self.solver.solve_fixed(v, v_minus)

    def product_norm(self, u: np.ndarray) -> float:
        """sqrt(||u||_M^2 + ||tr u||^2 over Gamma_s in the tau^{-1} gamma^{-2} weight)."""
        side = self.part.side(self.solver.sign)
        pen = trace_penalty(self.ops, self.part, self.L.tau)
        tr = u[self.ops.boundary]
        return float(np.sqrt(self.ops.norm(u) ** 2 + np.sum(pen[side] * np.abs(tr[side]) ** 2)))


def solve_R(ops: OperatorSet, part: BoundaryPartition, L: ConjugatedOperator, v: np.ndarray, v_minus: np.ndarray) -> np.ndarray:
    return RSolver(ops, part, L)(v, v_minus)


@dataclass(frozen=True, eq=False)
class CgoHarmonic:
    tau: float
    mode: AngularMode
    mu: np.ndarray  # weighted solution (mu_tau or nu_{-tau})
    u: np.ndarray  # unweighted harmonic field
    support: str  # "b_tilde" or "f_tilde"
    profile: IncidentProfile = field(repr=False)
    asymptotic_error: float = 0.0  # ||mu - h||_M

    def trace(self, ops: OperatorSet) -> np.ndarray:
        """Boundary trace of the harmonic field."""
        return self.u[ops.boundary]


def _build(ops, frame, part, cut: CutoffPair, tau: float, mode: AngularMode, sign: int):
    prof = incident_profile(ops, frame, mode, sign)
    L = assemble_conjugated(ops, frame, sign * tau)
    R = RSolver(ops, part, L)
    chi = cut.chi_plus if sign > 0 else cut.chi_minus
    h = prof.h
    # The interior source is the discrete L_tau h, which equals Delta_h h up to the
    # O(h) error of the profile identity and keeps L_tau mu = 0 exact.
    data = (chi * h[ops.boundary])[R.fixed_mask]
    mu = h - R(L.A @ h, data)
    u = frame.weight(sign * tau) * mu
    return CgoHarmonic(
        tau=float(tau),
        mode=prof.mode,
        mu=mu,
        u=u,
        support="b_tilde" if sign > 0 else "f_tilde",
        profile=prof,
        asymptotic_error=ops.norm(mu - h),
    )


def build_mu(ops, frame, part, cut, tau: float, mode: AngularMode = CONSTANT_MODE) -> CgoHarmonic:
    """mu_tau = h_+ - R_tau(L_tau h_+, chi_+ tr h_+); u_tau = zeta^tau mu_tau is harmonic."""
    if tau <= 0:
        raise ConfigError("build_mu needs tau > 0")
    return _build(ops, frame, part, cut, tau, mode, +1)


def build_nu(ops, frame, part, cut, tau: float) -> CgoHarmonic:
    """nu_{-tau} = h_- - R_{-tau}(L_{-tau} h_-, chi_- tr h_-); v = zeta^{-tau} nu is harmonic."""
    if tau <= 0:
        raise ConfigError("build_nu needs tau > 0 (it builds the -tau solution)")
    return _build(ops, frame, part, cut, tau, CONSTANT_MODE, -1)


def save_cgo(directory, cgo: CgoHarmonic, ops: OperatorSet, stem: str) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, values, nodes in (
        (f"{stem}_field.csv", cgo.mu, np.arange(ops.n)),
        (f"{stem}_trace.csv", cgo.mu[ops.boundary], ops.boundary),
    ):
        with open(directory / name, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["vertex", "re", "im"])
            for i, v in zip(nodes, values):
                w.writerow([int(i), repr(float(v.real)), repr(float(v.imag))])
    (directory / f"{stem}_summary.json").write_text(
        json.dumps({"tau": cgo.tau, "mode": cgo.mode.label, "support": cgo.support, "asymptotic_error": cgo.asymptotic_error}, indent=2)
    )
