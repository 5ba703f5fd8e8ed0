import ast
import inspect
import json
import textwrap

import numpy as np
import pytest
from click.testing import CliRunner

import recon.pipeline as pl
from recon.cli import main
from recon.errors import ConfigError

SMALL = dict(
    refinement_level=1, taus=[8.0, 16.0], modes=["1", "cos"], greens_taus=[8.0], norm_taus=[8.0, 16.0],
    carleman_taus=[8.0, 16.0], carleman_fields=4, factorization_taus=[8.0], factorization_level=1,
    isomorphism_taus=[16.0], conductivity_levels=[0, 1], alessandrini_pairs=5,
)


def small(**changes):
    return pl.ExperimentConfig.from_dict({**SMALL, **changes})


@pytest.fixture(scope="module")
def small_reconstruction():
    return pl.run_reconstruction(small())


# --------------------------------------------------------------------------- config


def test_defaults_and_roundtrip():
    cfg = pl.ExperimentConfig()
    assert cfg.taus == (4.0, 8.0, 16.0, 24.0) and cfg.refinement_level == 3
    again = pl.ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    assert set(pl.config_schema()) == set(cfg.to_dict())


@pytest.mark.parametrize("bad", [
    {"bogus": 1},
    {"tolerances": {"nope": 1.0}},
    {"taus": [8.0, 4.0]},
    {"taus": []},
    {"taus": [0.0, 4.0]},
    {"modes": ["tan"]},
    {"delta": 1.5},
    {"band": 0.1},
    {"omega_method": "lu"},
    {"adjoint_convention": "other"},
    {"conductivity": {"kind": "constant"}, "potential": {"kind": "zero"}},
    {"refinement_level": 9},
    {"center_offset": 0.5},
    {"tolerances": {"identity": -1.0}},
    {"taus": "4,8"},
])
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        pl.ExperimentConfig.from_dict(bad)


def test_from_json_errors(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        pl.ExperimentConfig.from_json(p)
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        pl.ExperimentConfig.from_json(p)
    with pytest.raises(ConfigError):
        pl.ExperimentConfig.from_json(tmp_path / "missing.json")


def test_conductivity_config_drops_default_potential():
    cfg = pl.ExperimentConfig.from_dict({"conductivity": {"kind": "constant", "value": 1.0}})
    assert cfg.potential is None


def test_thread_count_env(monkeypatch):
    monkeypatch.setenv("RECON_THREADS", "3")
    assert pl.worker_count() == 3
    assert pl.ordered_map(lambda x: x * x, range(7)) == [x * x for x in range(7)]
    for bad in ("0", "two"):
        monkeypatch.setenv("RECON_THREADS", bad)
        with pytest.raises(ConfigError):
            pl.worker_count()


def test_workspace_bundle_cache_is_bounded():
    ws = pl.Workspace(small())
    first = ws.bundle(8.0)
    assert ws.bundle(8.0) is first
    for tau in (4.0, 12.0, 16.0, 20.0):
        ws.bundle(tau)
    assert len(ws._bundles) == pl.MAX_CACHED_BUNDLES
    assert ws.bundle(8.0) is not first


# --------------------------------------------------------------------------- reconstruction


def _names(node):
    for n in ast.walk(node):
        if isinstance(n, ast.Attribute):
            yield n.attr
        elif isinstance(n, ast.Name):
            yield n.id


def test_reconstruction_path_never_touches_interior_data():
    tree = ast.parse(textwrap.dedent(inspect.getsource(pl._reconstruct_tau)))
    used = set(_names(tree))
    assert not used & {"q", "potential", "conductivity", "dtn", "difference", "oracle", "matrix", "solve_omega"}


def test_reconstruction_report(small_reconstruction):
    rep = small_reconstruction
    assert rep.entry("mask.violations").value == 0
    header, rows = rep.tables["samples"]
    assert header[:2] == ["tau", "mode"] and len(rows) == 4
    for tau in (8, 16):
        assert rep.entry(f"mask.out_of_mask[tau={tau}]").status == "pass"
        assert rep.entry(f"bie.residual[tau={tau}]").status == "pass"
        assert rep.entry(f"transform.consistency[tau={tau},mode=1]").status == "pass"
    assert set(rep.extras["limits"]) == {"1", "cos"}


def test_csv_output_is_deterministic(small_reconstruction, tmp_path, monkeypatch):
    small_reconstruction.write(tmp_path / "a")
    monkeypatch.setenv("RECON_THREADS", "2")
    pl.run_reconstruction(small()).write(tmp_path / "b")
    for name in ("samples.csv", "trend.csv", "bie_traces.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_zero_potential_report():
    rep = pl.run_reconstruction(small(potential={"kind": "zero"}))
    _, rows = rep.tables["samples"]
    assert all(r[2] == r[3] == r[4] == r[5] == 0 for r in rows)
    for lab in ("1", "cos"):
        e = rep.entry(f"radon.error[mode={lab}]")
        assert e.threshold == "null oracle" and e.status == "pass"


def test_unit_conductivity_reproduces_zero_potential():
    modes = ["1", "sin"]
    a = pl.run_reconstruction(small(potential={"kind": "zero"}, modes=modes))
    b = pl.run_reconstruction(small(potential=None, conductivity={"kind": "constant", "value": 1.0}, modes=modes))
    for name in ("samples", "trend"):
        ra = np.array([r[2:] for r in a.tables[name][1]], float)
        rb = np.array([r[2:] for r in b.tables[name][1]], float)
        assert np.allclose(ra, rb, rtol=1e-10, atol=1e-10)
    assert [(e.name, e.status) for e in a.entries] == [(e.name, e.status) for e in b.entries]
    assert b.entry("radon.symmetry_null").status == "pass"


def test_single_tau_reports_insufficient_data():
    rep = pl.run_reconstruction(small(taus=[16.0], modes=["1"]))
    e = rep.entry("radon.error[mode=1]")
    assert e.status == "recorded" and e.detail["note"] == "insufficient data"
    assert rep.entry("cgo.nu_asymptotics").status == "recorded"


def test_small_suite_runs_every_stage():
    rep = pl.run_property_suite(small())
    assert not [e for e in rep.entries if e.name.endswith(".error")]
    for stage in ("greens", "norms", "carleman", "alessandrini", "factorization", "single_layer",
                  "least_norm", "neumann", "linearity", "isomorphism", "conductivity", "reconstruct"):
        assert stage in rep.timings
    assert rep.entry("dtn.alessandrini").status == "pass"
    assert rep.entry("bie.factorization[tau=8]").status == "pass"
    assert rep.entry("transform.mode_linearity[tau=16]").status == "pass"
    assert rep.entry("dtn.conductivity_identity").status == "pass"


def test_sweeps():
    with pytest.raises(ConfigError):
        pl.sweep(small(), "angle")
    with pytest.raises(ConfigError):
        pl.sweep(small(), "refinement", [0, 7])
    with pytest.raises(ConfigError):
        pl.sweep(small(), "delta", [0.9])
    rep = pl.sweep(small(), "refinement", [0, 1])
    assert [r[0] for r in rep.tables["refinement"][1]] == [0, 1]
    rep = pl.sweep(small(), "tau", [8.0, 16.0])
    assert [r[0] for r in rep.tables["norms"][1]] == [8.0, 16.0]


# --------------------------------------------------------------------------- CLI


def _write(tmp_path, **changes):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({**SMALL, **changes}))
    return str(p)


def test_cli_config_and_mesh(tmp_path):
    r = CliRunner().invoke(main, ["config"])
    assert r.exit_code == 0 and json.loads(r.output)["taus"] == [4.0, 8.0, 16.0, 24.0]
    out = tmp_path / "mesh"
    r = CliRunner().invoke(main, ["mesh", "--config", _write(tmp_path), "--out", str(out)])
    assert r.exit_code == 0
    summary = json.loads((out / "partition.json").read_text())
    assert summary["vertices"] == 343 and summary["gamma_plus"] + summary["gamma_minus"] == summary["boundary"]


def test_cli_dtn_export(tmp_path):
    out = tmp_path / "dtn"
    r = CliRunner().invoke(main, ["dtn", "--config", _write(tmp_path), "--out", str(out)])
    assert r.exit_code == 0
    assert (out / "dtn_partial.csv").exists() and not (out / "dtn_full_oracle.csv").exists()


def test_cli_reconstruct_exit_codes(tmp_path):
    out = tmp_path / "rec"
    r = CliRunner().invoke(main, ["reconstruct", "--config", _write(tmp_path), "--out", str(out)])
    assert r.exit_code in (0, 1)
    doc = json.loads((out / "report.json").read_text())
    assert r.exit_code == (0 if doc["passed"] else 1)
    strict = {"tolerances": {"out_of_mask": 1e-300, "bie_residual": 1e-300}}
    r = CliRunner().invoke(main, ["reconstruct", "--config", _write(tmp_path, **strict), "--out", str(out)])
    assert r.exit_code == 1 and "FAIL" in r.output


def test_cli_config_error_exits_2(tmp_path):
    r = CliRunner().invoke(main, ["reconstruct", "--config", _write(tmp_path, bogus=1)])
    assert r.exit_code == 2 and "unknown config keys" in r.output
    r = CliRunner().invoke(main, ["sweep", "--config", _write(tmp_path), "--axis", "tau", "--values", "a,b"])
    assert r.exit_code == 2


def test_cli_stage_error_exits_3(tmp_path):
    r = CliRunner().invoke(main, ["reconstruct", "--config", _write(tmp_path, taus=[500.0]), "--out", str(tmp_path / "x")])
    assert r.exit_code == 3 and "reconstruct" in r.output


def test_cli_bad_thread_env_exits_2(tmp_path, monkeypatch):
    monkeypatch.setenv("RECON_THREADS", "-1")
    r = CliRunner().invoke(main, ["reconstruct", "--config", _write(tmp_path), "--out", str(tmp_path / "x")])
    assert r.exit_code == 2
