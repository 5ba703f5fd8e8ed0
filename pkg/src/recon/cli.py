"""Command-line entry point: ``recon <subcommand> --config cfg.json --out dir/``.

Exit codes: 0 when every non-oracle check passes, 1 when a check fails,
2 for configuration or usage errors, 3 when a pipeline stage raises.
"""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import pipeline as pl
from .cgo import AngularMode, build_mu, build_nu, save_cgo
from .dtn import dtn_difference, mask_partial
from .errors import ConfigError, ReconError, StageError


def _load(config_path) -> pl.ExperimentConfig:
    if config_path is None:
        return pl.ExperimentConfig()
    return pl.ExperimentConfig.from_json(config_path)


def _out(cfg: pl.ExperimentConfig, out) -> Path:
    path = Path(out or cfg.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _finish(report: pl.ReportBundle, out: Path) -> None:
    report.write(out)
    failed = [e for e in report.entries if e.status == "fail"]
    for e in failed:
        click.echo(f"FAIL{' (oracle)' if e.oracle else ''} {e.name}: {e.value} (want {e.threshold})")
    click.echo(f"{len(report.entries)} entries, {len(failed)} failed; report in {out}")
    sys.exit(0 if report.passed else 1)


def _run(fn):
    """Map package errors onto exit codes."""
    try:
        fn()
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    except StageError as exc:
        click.echo(str(exc), err=True)
        sys.exit(3)
    except ReconError as exc:
        click.echo(f"{type(exc).__name__}: {exc}", err=True)
        sys.exit(3)


config_option = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
                             help="JSON config; omitted fields take their defaults.")
out_option = click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Partial-data reconstruction experiments on a ball mesh."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@main.command("config")
def config_cmd():
    """Print the default config (every field)."""
    click.echo(json.dumps(pl.config_schema(), indent=2))


@main.command()
@config_option
@out_option
def mesh(config_path, out):
    """Build the mesh and boundary partition."""

    def go():
        cfg = _load(config_path)
        path = _out(cfg, out)
        ws = pl.Workspace(cfg)
        ws.mesh.save(path / "mesh.json")
        summary = {
            "vertices": ws.ops.n,
            "boundary": int(len(ws.ops.boundary)),
            "gamma_plus": int(ws.part.gamma_plus.sum()),
            "gamma_minus": int(ws.part.gamma_minus.sum()),
            "f_tilde": int(ws.part.f_tilde.sum()),
            "b_tilde": int(ws.part.b_tilde.sum()),
        }
        (path / "partition.json").write_text(json.dumps(summary, indent=2))
        click.echo(json.dumps(summary))

    _run(go)


@main.command()
@config_option
@out_option
@click.option("--full", is_flag=True, help="Also write the full (unmasked) difference, labelled as oracle data.")
def dtn(config_path, out, full):
    """Assemble the DtN difference and export its masked view."""

    def go():
        cfg = _load(config_path)
        path = _out(cfg, out)
        ws = pl.Workspace(cfg)
        Bq, B0 = ws.dtn()
        D = dtn_difference(Bq, B0)
        mask_partial(D, ws.part).export(path / "dtn_partial.csv")
        if full:
            from .dtn import save_dtn_csv

            save_dtn_csv(path / "dtn_full_oracle.csv", D.matrix)
        click.echo(f"wrote {path / 'dtn_partial.csv'}")

    _run(go)


@main.command("greens-check")
@config_option
@out_option
def greens_check(config_path, out):
    """Green's operator identities and norm decay."""

    def go():
        cfg = _load(config_path)
        path = _out(cfg, out)
        ws = pl.Workspace(cfg)
        report = pl.ReportBundle("greens", cfg.to_dict())
        greens = pl.measure_greens(ws, cfg.greens_taus, cfg.seed)
        tol = cfg.tolerances
        for tau, rep in greens.items():
            for key in ("right_inverse", "adjoint", "trace_support", "projector_annihilates_H", "T_adjoint"):
                limit = tol.trace_support if key == "trace_support" else tol.identity
                report.entries.append(pl._entry(f"greens.{key}[tau={tau:g}]", key, rep[key], f"< {limit:g}", rep[key] < limit))
        norms = pl.measure_norms(ws, cfg.norm_taus, cfg.seed)
        report.tables["norms"] = (["tau", "norm"], [[t, n] for t, n in zip(norms["taus"], norms["norms"])])
        if norms["slope"] is not None:
            s = norms["slope"]
            report.entries.append(pl._entry("greens.norm_slope", "||G_tau|| = O(1/tau)", s,
                                            f"in [{tol.slope_min:g}, {tol.slope_max:g}]", tol.slope_min <= s <= tol.slope_max))
        report.extras["greens"] = {str(k): v for k, v in greens.items()}
        _finish(report, path)

    _run(go)


@main.command()
@config_option
@out_option
def cgo(config_path, out):
    """Build mu_tau for every mode and nu_{-tau} on the tau grid."""

    def go():
        cfg = _load(config_path)
        path = _out(cfg, out)
        ws = pl.Workspace(cfg)
        for tau in cfg.taus:
            for label in cfg.modes:
                mu = build_mu(ws.ops, ws.frame, ws.part, ws.cut, tau, AngularMode.parse(label))
                save_cgo(path, mu, ws.ops, f"mu_tau{tau:g}_{label}")
            save_cgo(path, build_nu(ws.ops, ws.frame, ws.part, ws.cut, tau), ws.ops, f"nu_tau{tau:g}")
        click.echo(f"wrote CGO fields to {path}")

    _run(go)


@main.command()
@config_option
@out_option
def reconstruct(config_path, out):
    """End-to-end reconstruction from masked data, with oracle comparisons."""

    def go():
        cfg = _load(config_path)
        _finish(pl.run_reconstruction(cfg), _out(cfg, out))

    _run(go)


@main.command()
@config_option
@out_option
def suite(config_path, out):
    """Every module invariant plus the reconstruction, as one report."""

    def go():
        cfg = _load(config_path)
        _finish(pl.run_property_suite(cfg), _out(cfg, out))

    _run(go)


@main.command("sweep")
@config_option
@out_option
@click.option("--axis", type=click.Choice(pl.SWEEP_AXES), required=True)
@click.option("--values", default=None, help="Comma-separated axis values (defaults depend on the axis).")
def sweep_cmd(config_path, out, axis, values):
    """Trend tables along tau, refinement level or mask margin."""

    def go():
        cfg = _load(config_path)
        vals = None
        if values:
            try:
                vals = [float(v) for v in values.split(",")]
            except ValueError as exc:
                raise ConfigError(f"bad --values {values!r}") from exc
        _finish(pl.sweep(cfg, axis, vals), _out(cfg, out))

    _run(go)


if __name__ == "__main__":  # pragma: no cover
    main()
