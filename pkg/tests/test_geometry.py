import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from recon.errors import ConfigError
from recon.geometry import (
    GAMMA_MIN,
    DomainSpec,
    build_ball_mesh,
    carleman_weight,
    compute_coordinates,
    cutoff_functions,
    load_mesh,
    partition_boundary,
    smoothstep,
)


@pytest.fixture(scope="module")
def d2():
    spec = DomainSpec(center_offset=2.0, refinement_level=2)
    mesh = build_ball_mesh(spec)
    return spec, mesh


def test_vertex_counts_are_frozen():
    # (3 * 2^level + 1)^3 lattice points mapped to the ball
    counts = [build_ball_mesh(DomainSpec(refinement_level=lv)).n_vertices for lv in range(3)]
    assert counts == [64, 343, 2197]


def test_rejects_domain_touching_axis():
    with pytest.raises(ConfigError, match="touches axis"):
        DomainSpec(center_offset=1.0, radius=1.0)


def test_rejects_other_dimensions():
    with pytest.raises(ConfigError):
        DomainSpec(dimension=4)


def test_mesh_invariants(d2):
    spec, mesh = d2
    n = mesh.face_normals
    assert np.allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-12)
    centroids = mesh.vertices[mesh.boundary_faces].mean(axis=1)
    assert np.all(np.einsum("ij,ij->i", n, centroids - mesh.center) > 0)
    r = np.hypot(mesh.vertices[:, 1], mesh.vertices[:, 2])
    assert r.min() >= spec.center_offset - spec.radius - 1e-12
    assert np.all(mesh.tet_volumes() > 0)
    edges = np.sort(np.concatenate([mesh.boundary_faces[:, [0, 1]], mesh.boundary_faces[:, [1, 2]], mesh.boundary_faces[:, [2, 0]]]), axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    assert np.all(counts == 2)


def test_volume_close_to_ball(d2):
    _, mesh = d2
    assert abs(mesh.tet_volumes().sum() / (4 * np.pi / 3) - 1) < 0.02


def test_refinement_is_nested():
    coarse = build_ball_mesh(DomainSpec(refinement_level=1)).vertices
    fine = build_ball_mesh(DomainSpec(refinement_level=2)).vertices
    d = np.linalg.norm(coarse[:, None, :] - fine[None, :, :], axis=2).min(axis=1)
    assert d.max() < 1e-12


def test_partition_of_inherited_vertices_is_preserved():
    coarse = build_ball_mesh(DomainSpec(refinement_level=1))
    fine = build_ball_mesh(DomainSpec(refinement_level=2))
    pc, pf = partition_boundary(coarse), partition_boundary(fine)
    xb_c = coarse.vertices[coarse.boundary_nodes]
    xb_f = fine.vertices[fine.boundary_nodes]
    idx = np.array([np.argmin(np.linalg.norm(xb_f - x, axis=1)) for x in xb_c])
    assert np.array_equal(pc.gamma_plus, pf.gamma_plus[idx])
    assert np.array_equal(pc.f_tilde, pf.f_tilde[idx])


def test_deterministic_and_json_roundtrip(tmp_path):
    spec = DomainSpec(refinement_level=1)
    a, b = build_ball_mesh(spec), build_ball_mesh(spec)
    assert np.array_equal(a.vertices, b.vertices) and np.array_equal(a.tets, b.tets)
    path = tmp_path / "mesh.json"
    a.save(path)
    doc = json.loads(path.read_text())
    assert set(doc) >= {"vertices", "tets", "boundary_faces"}
    c = load_mesh(path, spec)
    assert np.allclose(c.vertices, a.vertices) and np.array_equal(c.tets, a.tets)


def test_coordinates(d2):
    spec, mesh = d2
    fr = compute_coordinates(mesh, spec)
    assert np.all(fr.z.imag > 0)
    assert np.all((fr.theta >= 0) & (fr.theta < 2 * np.pi))
    i = np.argmin(np.linalg.norm(mesh.vertices - mesh.center, axis=1))
    assert np.allclose(mesh.vertices[i], mesh.center)
    assert np.isclose(fr.z[i], 2j) and np.isclose(fr.zeta[i], 1.0)
    assert abs(fr.r.min() - 1.0) < 1e-12
    # after branch alignment no element sees a theta jump larger than pi
    t = fr.theta[mesh.tets]
    jump = np.abs(t[:, :, None] - t[:, None, :])
    assert np.minimum(jump, 2 * np.pi - jump).max() < np.pi


def test_weight_at_zero_tau_is_one(d2):
    spec, mesh = d2
    fr = compute_coordinates(mesh, spec)
    assert np.allclose(fr.weight(0.0), 1.0)
    assert np.allclose(fr.weight(3.0, barred=True), np.conj(fr.weight(3.0)))


def test_partition_examples(d2):
    _, mesh = d2
    p = partition_boundary(mesh, 0.15)
    xb = mesh.vertices[mesh.boundary_nodes]
    top = np.argmin(np.linalg.norm(xb - [0, 3, 0], axis=1))
    assert p.gamma_plus[top] and p.b_tilde[top] and not p.f_tilde[top]
    assert np.all(p.gamma_plus | p.gamma_minus)
    assert not np.any(p.gamma_plus & p.gamma_minus)
    assert np.all(p.f_tilde[p.gamma_minus]) and np.all(p.b_tilde[p.gamma_plus])
    assert np.all(p.b_tilde[p.b_tilde_tilde])
    assert p.f_tilde.sum() + p.b_tilde.sum() > len(xb)
    eq = np.argmin(np.abs(p.s))
    assert p.f_tilde[eq] and p.b_tilde[eq]
    with pytest.raises(ConfigError):
        partition_boundary(mesh, 1.5)


@given(st.floats(0.02, 0.3), st.floats(0.02, 0.3))
@settings(max_examples=20, deadline=None)
def test_partition_monotone_in_delta(d1, d2_):
    mesh = build_ball_mesh(DomainSpec(refinement_level=1))
    lo, hi = sorted((d1, d2_))
    a, b = partition_boundary(mesh, lo), partition_boundary(mesh, hi)
    assert np.all(b.f_tilde[a.f_tilde]) and np.all(b.b_tilde[a.b_tilde])


def test_carleman_weight_examples():
    g, gc = carleman_weight(np.array([[0.0, 3.0, 0.0]]), np.array([[0.0, 1.0, 0.0]]))
    assert np.isclose(g[0], np.sqrt(3) / 3) and gc[0] == g[0]
    # equator point: x . nu = 0
    g0, gc0 = carleman_weight(np.array([[0.0, 1.0, 1.0]]), np.array([[1.0, 0.0, 0.0]]))
    assert g0[0] == 0 and gc0[0] == GAMMA_MIN


def test_gamma_squared_surface_integral():
    d = 2.0
    mesh = build_ball_mesh(DomainSpec(center_offset=d, refinement_level=2))
    p = partition_boundary(mesh)
    from recon.discretization import assemble_operators

    ops = assemble_operators(mesh)
    numeric = np.sum(ops.mb * p.gamma**2)
    # on the unit sphere around (0, d, 0): x . nu = 1 + d t, |x|^2 = d^2 + 1 + 2 d t with t = nu_2
    exact = 2 * np.pi * quad(lambda t: abs(1 + d * t) / (d * d + 1 + 2 * d * t), -1, 1, points=[-1 / d])[0]
    assert abs(numeric / exact - 1) < 0.02


def test_cutoffs(d2):
    _, mesh = d2
    p = partition_boundary(mesh, 0.15)
    c = cutoff_functions(p, 0.06)
    assert np.all(c.chi_plus[~p.b_tilde] == 1)
    assert np.all(c.chi_minus[~p.f_tilde] == 1)
    assert np.all(c.chi_plus[p.s >= 0] == 0) and np.all(c.chi_minus[p.s <= 0] == 0)
    classified = (c.chi_plus == 1) | (c.chi_plus == 0) | c.plus_band
    assert np.all(classified)
    assert np.all((c.chi_plus >= 0) & (c.chi_plus <= 1))
    with pytest.raises(ConfigError):
        cutoff_functions(p, 0.1)


def test_smoothstep_ramp():
    assert smoothstep(0.5) == 0.5
    assert smoothstep(-1.0) == 0.0 and smoothstep(2.0) == 1.0


@given(st.floats(-0.5, 1.5), st.floats(-0.5, 1.5))
def test_smoothstep_monotone(a, b):
    lo, hi = sorted((a, b))
    assert smoothstep(lo) <= smoothstep(hi)
