import json

import numpy as np
import pytest

from recon.carleman import assemble_conjugated, kernel_basis, zero_trace_fields
from recon.cgo import (
    CONSTANT_MODE,
    AngularMode,
    RSolver,
    build_mu,
    build_nu,
    incident_profile,
    profile_residual,
    save_cgo,
    solve_R,
)
from recon.errors import ConfigError

from conftest import Setup


def _interior(ops, v):
    v = v.copy()
    v[ops.boundary] = 0
    return v


@pytest.fixture(scope="module")
def mu8(lvl1):
    return build_mu(lvl1.ops, lvl1.frame, lvl1.part, lvl1.cut, 8.0, AngularMode.parse("cos"))


@pytest.fixture(scope="module")
def nu8(lvl1):
    return build_nu(lvl1.ops, lvl1.frame, lvl1.part, lvl1.cut, 8.0)


def test_mode_parsing():
    assert AngularMode.parse("1") == CONSTANT_MODE
    m = AngularMode.parse("sin3")
    assert m.sin == (0.0, 0.0, 1.0) and m.cos == () and m.c0 == 0
    theta = np.linspace(0, 2 * np.pi, 7)
    assert np.allclose(AngularMode.parse("cos2")(theta), np.cos(2 * theta))
    for bad in ("tan", "cos5", "cos0", ""):
        with pytest.raises(ConfigError):
            AngularMode.parse(bad)
    with pytest.raises(ConfigError):
        AngularMode(cos=(1, 0, 0, 0, 1))
    with pytest.raises(ConfigError):
        AngularMode(c0=float("nan"))


def test_mode_combine_is_linear():
    a, b = AngularMode.parse("1"), AngularMode.parse("cos2")
    c = a.combine(2.0, b, -0.5)
    theta = np.linspace(0, 6, 11)
    assert np.allclose(c(theta), 2 * a(theta) - 0.5 * b(theta))


def test_constant_profile_formula(lvl1):
    p = incident_profile(lvl1.ops, lvl1.frame)
    assert np.allclose(p.h, (2j * lvl1.frame.r) ** -0.5, rtol=1e-14)
    assert incident_profile(lvl1.ops, lvl1.frame, AngularMode.parse("sin"), sign=-1).mode == CONSTANT_MODE


def test_profile_residual_decreases_under_refinement():
    res = []
    for level in (1, 2, 3):
        s = Setup(level)
        res.append(profile_residual(s.ops, s.frame, incident_profile(s.ops, s.frame, AngularMode.parse("cos"))))
    assert res[0] > res[1] > res[2]


def test_conjugated_action_on_profile_tends_to_laplacian():
    # compared weakly against smooth zero-trace fields: the lumped nodal Laplacian is only
    # consistent in the weak sense on this mesh, so a nodal norm of the gap does not converge
    gaps = []
    for level in (1, 2):
        s = Setup(level)
        p = incident_profile(s.ops, s.frame)
        L = assemble_conjugated(s.ops, s.frame, 8.0)
        phi = zero_trace_fields(s.ops, 10, seed=4)
        gap = _interior(s.ops, L.A @ p.h - p.laplacian)
        gaps.append(np.abs(phi.T @ (s.ops.m * gap)).max() / s.ops.norm(phi))
    assert gaps[1] < 0.5 * gaps[0]


def test_R_of_zero_is_zero(lvl1):
    L = assemble_conjugated(lvl1.ops, lvl1.frame, 8.0)
    R = RSolver(lvl1.ops, lvl1.part, L)
    u = R(np.zeros(lvl1.ops.n), np.zeros(R.fixed_mask.sum()))
    assert not np.any(u)


@pytest.mark.parametrize("tau", [8.0, -8.0])
def test_R_constraints_and_least_norm(lvl1, rng, tau):
    ops, part = lvl1.ops, lvl1.part
    L = assemble_conjugated(ops, lvl1.frame, tau)
    R = RSolver(ops, part, L)
    v = rng.standard_normal(ops.n) + 1j * rng.standard_normal(ops.n)
    vm = rng.standard_normal(R.fixed_mask.sum()) + 0j
    u = R(v, vm)
    assert np.linalg.norm(_interior(ops, L.A @ u - v)) < 1e-9 * np.linalg.norm(_interior(ops, v))
    assert np.array_equal(u[ops.boundary][R.fixed_mask], vm)
    assert np.allclose(solve_R(ops, part, L, v, vm), u, atol=1e-13 * np.abs(u).max())
    kb = kernel_basis(ops, part, L).columns
    base = R.product_norm(u)
    for _ in range(10):
        k = kb @ (rng.standard_normal(kb.shape[1]) + 1j * rng.standard_normal(kb.shape[1]))
        k *= 1e-3 * ops.norm(u) / ops.norm(k)
        assert R.product_norm(u + k) > base


def test_R_estimate_constant_is_tau_uniform(lvl2):
    ops, part = lvl2.ops, lvl2.part
    ratios = []
    for tau in (4.0, 8.0, 16.0, 24.0):
        L = assemble_conjugated(ops, lvl2.frame, tau)
        R = RSolver(ops, part, L)
        h = incident_profile(ops, lvl2.frame).h
        v = _interior(ops, L.A @ h)
        vm = (lvl2.cut.chi_plus * h[ops.boundary])[R.fixed_mask]
        u = R(v, vm)
        g = part.gamma_clamped[R.fixed_mask]
        bound = ops.norm(v) / tau + tau**-0.5 * np.sqrt(np.sum(ops.mb[R.fixed_mask] * np.abs(vm / g) ** 2))
        ratios.append(ops.norm(u) / bound)
    assert max(ratios) / min(ratios) < 3


def test_mu_support_and_harmonicity(lvl1, mu8):
    ops = lvl1.ops
    tr = mu8.mu[ops.boundary]
    assert not np.any(tr[lvl1.cut.chi_plus == 1])
    assert not np.any(tr[~lvl1.part.b_tilde])
    L = assemble_conjugated(ops, lvl1.frame, 8.0)
    assert np.linalg.norm(_interior(ops, L.A @ mu8.mu)) < 1e-9 * np.linalg.norm(_interior(ops, L.A @ mu8.profile.h))
    Ku = (ops.K @ mu8.u)[ops.interior]
    scale = (abs(ops.K) @ np.abs(mu8.u))[ops.interior]
    assert np.linalg.norm(Ku) < 1e-8 * np.linalg.norm(scale)
    assert mu8.support == "b_tilde" and np.array_equal(mu8.trace(ops), mu8.u[ops.boundary])


def test_nu_support_and_harmonicity(lvl1, nu8):
    ops = lvl1.ops
    tr = nu8.mu[ops.boundary]
    assert np.abs(tr[~lvl1.part.f_tilde]).max() < 1e-9 * np.abs(tr).max()
    L = assemble_conjugated(ops, lvl1.frame, -8.0)
    assert np.linalg.norm(_interior(ops, L.A @ nu8.mu)) < 1e-9 * np.linalg.norm(_interior(ops, L.A @ nu8.profile.h))
    Kv = (ops.K @ nu8.u)[ops.interior]
    assert np.linalg.norm(Kv) < 1e-8 * np.linalg.norm((abs(ops.K) @ np.abs(nu8.u))[ops.interior])
    assert nu8.support == "f_tilde" and nu8.mode == CONSTANT_MODE


def test_asymptotic_errors_decrease_on_resolved_taus(lvl2):
    s = lvl2
    mu = [build_mu(s.ops, s.frame, s.part, s.cut, t).asymptotic_error for t in (4.0, 8.0, 16.0)]
    nu = [build_nu(s.ops, s.frame, s.part, s.cut, t).asymptotic_error for t in (4.0, 8.0, 16.0)]
    assert mu[0] > mu[1] > mu[2] and nu[0] > nu[1] > nu[2]


def test_rejects_nonpositive_tau(lvl1):
    with pytest.raises(ConfigError):
        build_mu(lvl1.ops, lvl1.frame, lvl1.part, lvl1.cut, 0.0)
    with pytest.raises(ConfigError):
        build_nu(lvl1.ops, lvl1.frame, lvl1.part, lvl1.cut, -4.0)


def test_export(lvl1, mu8, tmp_path):
    save_cgo(tmp_path, mu8, lvl1.ops, "mu")
    rows = (tmp_path / "mu_trace.csv").read_text().splitlines()
    assert rows[0] == "vertex,re,im" and len(rows) == len(lvl1.ops.boundary) + 1
    i, re, im = rows[5].split(",")
    assert complex(float(re), float(im)) == mu8.mu[int(i)]
    summary = json.loads((tmp_path / "mu_summary.json").read_text())
    assert summary["mode"] == "cos" and summary["support"] == "b_tilde"
