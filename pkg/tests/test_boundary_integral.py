import numpy as np
import pytest

from recon.boundary_integral import (
    BieOperator,
    assemble_single_layer,
    factorization_check,
    isomorphism_check,
    poisson_equivalence_check,
    single_layer_intermediate,
    solve_bie,
)
from recon.carleman import build_bundle
from recon.cgo import build_mu
from recon.discretization import make_potential, zero_potential
from recon.dtn import DtnDifference, assemble_dtn, dtn_difference, mask_partial
from recon.errors import ConfigError, IllConditioned
from recon.transform import contraction_estimate, solve_omega

RANDOM_Q = {"kind": "gaussian", "amplitude": [2.0, -1.0], "center": [0.3, 2.8, 0.2], "width": 0.5}


@pytest.fixture(scope="module")
def sys8(lvl1):
    s = lvl1
    b = build_bundle(s.ops, s.frame, s.part, 8.0)
    S = assemble_single_layer(b)
    B0 = assemble_dtn(s.ops)
    D = dtn_difference(assemble_dtn(s.ops, s.q), B0, s.q)
    return b, S, B0, D


def test_columns_live_on_opposite_face(lvl1, sys8):
    _, S, _, _ = sys8
    minus = lvl1.part.side(-1)
    assert not np.any(S.matrix[:, ~minus])
    assert np.abs(S.matrix[:, minus]).max() > 0


def test_depends_only_on_f_tilde_values(lvl1, sys8, rng):
    _, S, _, _ = sys8
    nb = S.matrix.shape[0]
    h = rng.standard_normal(nb) + 1j * rng.standard_normal(nb)
    h2 = h.copy()
    out = ~lvl1.part.f_tilde
    h2[out] = rng.standard_normal(out.sum())
    a, b = S @ h, S @ h2
    assert np.abs(a - b).max() < 1e-10 * np.abs(a).max()


def test_output_supported_in_b_tilde(lvl1, sys8, rng):
    _, S, _, _ = sys8
    nb = S.matrix.shape[0]
    out = S @ (rng.standard_normal(nb) + 1j * rng.standard_normal(nb))
    assert np.linalg.norm(out[~lvl1.part.b_tilde]) < 1e-10 * np.linalg.norm(out)


def test_intermediate_vanishes_for_sources_off_b_tilde_tilde(lvl1, sys8, rng):
    b, _, _, _ = sys8
    nb = len(lvl1.ops.boundary)
    h = np.where(~lvl1.part.b_tilde_tilde, rng.standard_normal(nb), 0.0)
    assert np.abs(single_layer_intermediate(b, h)).max() < 1e-10 * np.abs(h).max()
    h_in = np.where(lvl1.part.gamma_plus, rng.standard_normal(nb), 0.0)
    assert np.abs(single_layer_intermediate(b, h_in)).max() > 1e-6


def test_factorization_identity(lvl1, sys8):
    _, S, _, D = sys8
    assert factorization_check(S, D, lvl1.q) < 1e-8


def test_factorization_identity_complex_q(lvl1, sys8):
    b, S, B0, _ = sys8
    q = make_potential(lvl1.mesh, RANDOM_Q)
    D = dtn_difference(assemble_dtn(lvl1.ops, q), B0, q)
    assert factorization_check(S, D, q) < 1e-8


def test_factorization_zero_potential(lvl1, sys8):
    _, S, B0, _ = sys8
    q0 = zero_potential(lvl1.mesh)
    assert factorization_check(S, dtn_difference(B0, B0, q0), q0) == 0


def test_plain_transpose_breaks_factorization(lvl1, sys8):
    b, _, _, D = sys8
    plain = assemble_single_layer(b, weighted=False)
    assert plain.convention == "plain-transpose"
    assert factorization_check(plain, D, lvl1.q) > 1e-2


def test_poisson_extension_equivalence(lvl1, sys8, rng):
    _, S, _, D = sys8
    nb = S.matrix.shape[0]
    for _ in range(3):
        f = rng.standard_normal(nb) + 1j * rng.standard_normal(nb)
        assert poisson_equivalence_check(S, D, lvl1.q, f) < 1e-8


@pytest.fixture(scope="module")
def bie16(lvl1):
    s = lvl1
    b = build_bundle(s.ops, s.frame, s.part, 16.0)
    S = assemble_single_layer(b)
    diff = dtn_difference(assemble_dtn(s.ops, s.q), assemble_dtn(s.ops), s.q)
    view = mask_partial(diff, s.part)
    mu = build_mu(s.ops, s.frame, s.part, s.cut, 16.0)
    return b, S, diff, view, mu


def test_bie_matches_interior_oracle(lvl1, bie16):
    b, S, _, view, mu = bie16
    ops = lvl1.ops
    op = BieOperator(S, view, lvl1.part)
    sol = op.solve(mu.trace(ops), "1")
    assert sol.residual < 1e-12 and sol.condition < 1e10
    om = solve_omega(b, lvl1.q, mu)
    ref = om.w[ops.boundary]
    assert ops.bnorm(sol.h - ref) < 1e-6 * ops.bnorm(ref)
    assert view.violations == 0
    assert all(kind == "block" for kind, _, _ in view.log)


def test_bie_zero_potential_returns_incident_trace(lvl1, bie16):
    b, S, _, _, mu = bie16
    B0 = assemble_dtn(lvl1.ops)
    view0 = mask_partial(dtn_difference(B0, B0), lvl1.part)
    u = mu.trace(lvl1.ops)
    sol = solve_bie(S, view0, u, lvl1.part)
    assert np.array_equal(sol.h, u)


def test_bie_ignores_data_outside_mask(lvl1, bie16):
    _, S, diff, _, mu = bie16
    part = lvl1.part
    u = mu.trace(lvl1.ops)
    h = solve_bie(S, mask_partial(diff, part), u, part).h
    D2 = diff.matrix.copy()
    D2[~part.f_tilde, :] += 5.0
    D2[:, ~part.b_tilde] -= 3.0j
    h2 = solve_bie(S, mask_partial(DtnDifference(D2, diff.ops), part), u, part).h
    assert np.abs(h2 - h).max() < 1e-12 * np.abs(h).max()


def test_bie_input_checks(lvl1, bie16, sys8):
    b, S, diff, view, mu = bie16
    op = BieOperator(S, view, lvl1.part)
    bad = np.ones(len(lvl1.ops.boundary))
    with pytest.raises(ConfigError):
        op.solve(bad)
    neg = assemble_single_layer(build_bundle(lvl1.ops, lvl1.frame, lvl1.part, -8.0))
    with pytest.raises(ConfigError):
        BieOperator(neg, view, lvl1.part)


def test_ill_conditioned_guard(lvl1, bie16):
    _, S, diff, _, _ = bie16
    # a data block that makes I - S D (nearly) singular on B_tilde
    part = lvl1.part
    cols = np.nonzero(part.b_tilde)[0]
    src = np.nonzero(~part.side(1))[0]
    Ssub = S.matrix[np.ix_(cols, src)]
    D = np.zeros_like(diff.matrix)
    D[np.ix_(src, cols)] = np.linalg.pinv(Ssub)
    with pytest.raises(IllConditioned):
        BieOperator(S, mask_partial(DtnDifference(D, diff.ops), part), part)


def test_isomorphism_estimate(lvl1, bie16):
    b, _, _, _, _ = bie16
    assert isomorphism_check(b, zero_potential(lvl1.mesh)) == 1.0
    smin = isomorphism_check(b, lvl1.q)
    rate = contraction_estimate(b, lvl1.q)
    assert rate < 1 and smin >= 1 - rate - 1e-6
