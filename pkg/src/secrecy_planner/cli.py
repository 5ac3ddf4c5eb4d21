"""Command-line entry point: ``secrecy-planner <verb> ...``."""

from __future__ import annotations

import csv
import sys
from pathlib import Path
from typing import Optional

import click
import numpy as np

from .cli_io import (
    TOOL_VERSION,
    LoadedScenario,
    bundled_scenario_path,
    csv_text,
    format_float,
    load_scenario_bundle,
    write_csv,
    write_manifest,
)
from .errors import SecrecyPlannerError
from .gradients import gradcheck_suite
from .montecarlo import MCConfig, RateStudyConfig, mc_instant_secrecy_ecdf, rate_study
from .optimizer import DEFAULT_MAX_CELLS, OptimizerConfig, algorithm2_alternating, grid_search, with_uav_antennas
from .rates import LN2, PowerAllocation

GRAD_TOL = 1e-5
TRAJECTORY_PREFIX = ["iter", "p_x", "p_y", "p_z"]
TRAJECTORY_SUFFIX = ["R_L_bits", "R_U_max_bits", "objective_bits"]


def _resolve(path: str) -> Path:
    """A scenario path, or the name of a bundled scenario such as ``fig4a``."""
    p = Path(path)
    if p.exists():
        return p
    bundled = bundled_scenario_path(path)
    return bundled if bundled.exists() else p


def _load(path: str, antennas: Optional[int]) -> LoadedScenario:
    loaded = load_scenario_bundle(_resolve(path))
    if antennas is not None:
        loaded = LoadedScenario(with_uav_antennas(loaded.scenario, antennas), loaded.optimizer,
                                loaded.mc, loaded.raw, loaded.digest, loaded.path)
    return loaded


def _mc(loaded: LoadedScenario, seed: Optional[int], samples: Optional[int]) -> MCConfig:
    return MCConfig(samples=int(samples if samples is not None else loaded.mc.get("samples", 100_000)),
                    seed=int(seed if seed is not None else loaded.mc.get("seed", 0)))


def _manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


def _fail(msg: str, code: int = 1):
    click.echo(msg, err=True)
    sys.exit(code)


scenario_opt = click.option("--scenario", "scenario", required=True,
                            help="Scenario JSON file or bundled scenario name (e.g. fig4a).")
antennas_opt = click.option("--antennas", "antennas", type=int, default=None,
                            help="Override the UAV antenna count K.")
seed_opt = click.option("--seed", type=int, default=None, help="Monte Carlo seed (default: scenario mc.seed).")
samples_opt = click.option("--samples", type=int, default=None,
                           help="Monte Carlo samples (default: scenario mc.samples).")


@click.group()
@click.version_option(version=TOOL_VERSION, prog_name="secrecy-planner")
def cli():
    """Secrecy-rate planning for a multi-antenna UAV transmitter."""


@cli.command("validate-rates")
@click.option("--scenario", "scenarios", multiple=True, required=True,
              help="Scenario file or bundled name; repeat for several configurations.")
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="ECDF CSV of relative errors.")
@seed_opt
@samples_opt
@click.option("--draws", type=int, default=1000, show_default=True, help="Random power allocations per configuration.")
@click.option("--legit-band", type=float, default=5e-2, show_default=True,
              help="Largest allowed median |relative error| of the legitimate lower bound.")
@click.option("--eav-band", type=float, default=5e-2, show_default=True,
              help="Largest allowed median |relative error| of the eavesdropper closed form.")
@click.option("--bound-fraction", type=float, default=0.99, show_default=True,
              help="Smallest fraction of draws where the lower bound sits below MC + 3 SE.")
def validate_rates(scenarios, out, seed, samples, draws, legit_band, eav_band, bound_fraction):
    """Closed-form rates against Monte Carlo over random power allocations."""
    out = Path(out)
    rows, failures, summary = [], [], {}
    for path in scenarios:
        loaded = _load(path, None)
        cid = Path(path).stem
        mc = _mc(loaded, seed, samples if samples is not None else 10_000)
        st = rate_study(RateStudyConfig(cid, loaded.scenario, None), mc, draws)
        tables = [(f"{cid}/R_L", (st["legit_closed"] - st["legit_mc"]) / st["legit_mc"], legit_band)]
        for t, (c, m) in enumerate(zip(st["eav_closed"], st["eav_mc"]), start=1):
            tables.append((f"{cid}/R_U{t}", (c - m) / m, eav_band))
        for name, err, band in tables:
            med = float(np.median(np.abs(err)))
            summary[name] = med
            click.echo(f"{name}: median |relative error| {med:.3e} (band {band:.1e})")
            if not med <= band:
                failures.append(f"{name}: median {med:.3e} exceeds {band:.1e}")
            v = np.sort(err, kind="stable")
            rows.extend((name, float(a), float(b)) for a, b in zip(v, np.arange(1, v.size + 1) / v.size))
        frac = float(np.mean(st["legit_closed"] <= st["legit_mc"] + 3.0 * st["legit_se"]))
        summary[f"{cid}/lower_bound_fraction"] = frac
        click.echo(f"{cid}: lower bound holds for {frac:.4f} of draws")
        if frac < bound_fraction:
            failures.append(f"{cid}: lower bound holds for {frac:.4f} < {bound_fraction}")
    write_csv(out, ["config_id", "error_value", "cumulative_probability"], rows)
    write_manifest(_manifest_path(out), "validate-rates", ",".join(load_scenario_bundle(_resolve(p)).digest
                                                                   for p in scenarios),
                   {"draws": draws, "samples": samples, "legit_band": legit_band, "eav_band": eav_band,
                    "bound_fraction": bound_fraction, "median_errors": summary}, seed)
    if failures:
        _fail("band violations:\n  " + "\n  ".join(failures))


@cli.command("gradcheck")
@scenario_opt
@antennas_opt
@click.option("--samples", type=int, default=100, show_default=True, help="Random check points.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--strict-paper", is_flag=True, help="Use the alpha = 2 location gradient.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Optional CSV of every check.")
def gradcheck(scenario, antennas, samples, seed, strict_paper, out):
    """Analytic derivatives against central finite differences."""
    loaded = _load(scenario, antennas)
    checks = gradcheck_suite(loaded.scenario, samples, seed, strict_paper)
    worst = sorted(checks, key=lambda c: c.relative_error, reverse=True)
    if out:
        write_csv(out, ["name", "point", "relative_error"], [(c.name, c.point, c.relative_error) for c in checks])
    click.echo(f"{len(checks)} checks, worst relative error {worst[0].relative_error:.3e}")
    bad = [c for c in worst if not c.relative_error <= GRAD_TOL]
    if bad:
        _fail("derivatives above tolerance:\n  " + "\n  ".join(
            f"{c.name} at point {c.point}: {c.relative_error:.3e}" for c in bad[:10]))


@cli.command("optimize")
@scenario_opt
@antennas_opt
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Trajectory CSV.")
@click.option("--strict-paper", is_flag=True, help="Use the alpha = 2 location gradient.")
@click.option("--max-outer-iters", type=int, default=None, help="Override the outer iteration cap.")
@seed_opt
@samples_opt
def optimize(scenario, antennas, out, strict_paper, max_outer_iters, seed, samples):
    """Alternating power and location optimization; writes the trajectory."""
    loaded = _load(scenario, antennas)
    opts = dict(loaded.optimizer)
    if strict_paper:
        opts["strict_paper_gradients"] = True
    if max_outer_iters is not None:
        opts["max_outer_iters"] = max_outer_iters
    cfg = OptimizerConfig.from_dict(opts)
    trace = algorithm2_alternating(loaded.scenario, cfg)
    K = loaded.scenario.K
    header = TRAJECTORY_PREFIX + [f"psi_{k + 1}" for k in range(K)] + TRAJECTORY_SUFFIX
    rows = [[rec.iteration, *map(float, rec.p_u), *map(float, rec.psi), rec.legit_bits, rec.eav_max_bits,
             rec.objective_bits] for rec in trace.records]
    out = Path(out)
    write_csv(out, header, rows)
    write_manifest(_manifest_path(out), "optimize", loaded.digest,
                   {"K": K, "optimizer": opts, "termination": trace.termination,
                    "inner_iterations": trace.inner_iterations}, None)
    final = trace.final
    click.echo(f"termination: {trace.termination}; outer iterations: {len(trace.records) - 1}")
    click.echo(f"final secrecy rate: {format_float(max(final.objective_bits, 0.0))} bits/s/Hz at "
               f"[{', '.join(format_float(v) for v in final.p_u)}]")
    improved = final.objective_bits > trace.initial.objective_bits
    if trace.termination == "iteration_cap" and cfg.max_outer_iters > 0 and not improved:
        _fail("iteration cap reached without any improvement")


def read_point(path) -> tuple:
    """Location and power allocation from the last row of a trajectory CSV."""
    path = Path(path)
    if not path.exists():
        raise click.UsageError(f"point file {path} does not exist")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise click.UsageError(f"point file {path} has no rows")
    last = rows[-1]
    p = np.array([float(last[k]) for k in ("p_x", "p_y", "p_z")])
    psi_keys = sorted((k for k in last if k.startswith("psi_")), key=lambda k: int(k[4:]))
    psi = np.array([float(last[k]) for k in psi_keys])
    return p, psi


@cli.command("ecdf")
@scenario_opt
@click.option("--point", "point", required=True, help="Trajectory CSV whose last row is the evaluated point.")
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="ECDF CSV.")
@seed_opt
@samples_opt
def ecdf(scenario, point, out, seed, samples):
    """ECDF of the instantaneous secrecy rate under random fading."""
    p, psi = read_point(point)
    loaded = _load(scenario, len(psi))
    mc = _mc(loaded, seed, samples)
    cid = Path(point).stem
    table = mc_instant_secrecy_ecdf(PowerAllocation(psi), p, loaded.scenario, mc, cid)
    out = Path(out)
    write_csv(out, ["config_id", "secrecy_bits", "cumulative_probability"], table.rows())
    write_manifest(_manifest_path(out), "ecdf", loaded.digest,
                   {"point": [format_float(v) for v in p], "psi": [format_float(v) for v in psi],
                    "samples": mc.samples, "summary": {k: format_float(v) for k, v in table.extras.items()}},
                   mc.seed)
    ex = table.extras
    click.echo(f"outage fraction: {format_float(ex['outage_fraction'])}")
    click.echo(f"mean secrecy rate: {format_float(ex['mean_bits'])} bits/s/Hz; "
               f"within +-2.5 bits: {format_float(ex['within_2_5_bits'])}")


@cli.command("grid-certify")
@scenario_opt
@antennas_opt
@click.option("--grid-step", type=float, default=1.0, show_default=True, help="Location lattice spacing in metres.")
@click.option("--simplex-step", type=float, default=0.05, show_default=True, help="Power lattice spacing.")
@click.option("--max-cells", type=int, default=DEFAULT_MAX_CELLS, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Comparison CSV.")
def grid_certify(scenario, antennas, grid_step, simplex_step, max_cells, out):
    """Compare the optimizer's result with a coarse exhaustive search."""
    loaded = _load(scenario, antennas)
    sc = loaded.scenario
    trace = algorithm2_alternating(sc, OptimizerConfig.from_dict(loaded.optimizer))
    grid = grid_search(sc, grid_step, simplex_step, max_cells)
    alg = trace.final
    gap = (grid.objective_bits - alg.objective_bits) / abs(grid.objective_bits) if grid.objective_bits else 0.0
    K = sc.K
    header = ["method", "objective_bits", "p_x", "p_y", "p_z"] + [f"psi_{k + 1}" for k in range(K)]
    rows = [["algorithm2", alg.objective_bits, *map(float, alg.p_u), *map(float, alg.psi)],
            ["grid", grid.objective_bits, *map(float, grid.p_u), *map(float, grid.psi)]]
    out = Path(out)
    write_csv(out, header, rows)
    write_manifest(_manifest_path(out), "grid-certify", loaded.digest,
                   {"K": K, "grid_step": grid_step, "simplex_step": simplex_step, "cells": grid.cells,
                    "relative_gap": format_float(gap)}, None)
    click.echo(f"algorithm 2: {format_float(alg.objective_bits)} bits/s/Hz; grid optimum: "
               f"{format_float(grid.objective_bits)} bits/s/Hz over {grid.cells} cells")
    click.echo(f"relative gap: {format_float(gap)}")


def main(argv=None):
    """Console entry point; library errors become a message and exit status 2."""
    try:
        rc = cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        _fail("aborted", 1)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except SecrecyPlannerError as exc:
        _fail(f"error: {exc}", 2)
    sys.exit(rc if isinstance(rc, int) else 0)


if __name__ == "__main__":
    main()
