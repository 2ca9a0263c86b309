"""Command-line entry points: batch analysis, simulation, and the service.

Reports are plain deterministic text: identical inputs produce
byte-identical output. Validation problems exit with status 2.
"""

from __future__ import annotations

import sys

import click
import numpy as np

from .compatible import compatible_bounds, compatible_bounds_adjustment
from .design_io import ValidatedDesign, load_design, load_scenario, read_stage_data
from .engine import advance_stage, apply_stop_decisions, efficient_multiple_adjustment, new_trial
from .errors import SeqGraphError, ValidationError
from .estimators import median_estimators
from .graph import initial_state
from .informative import isci_efficient_adjustment, isci_stagewise
from .simulate import (
    estimate_coverage,
    estimate_fwer,
    estimate_median_coverage,
    result_rows,
    write_results_csv,
)

PROCEDURES = ("gsd-r", "gsd-s", "adjust", "isci-r", "isci-s", "isci-adjust")
_ESTIMATOR_VARIANT = {
    "gsd-r": ("a", "r"),
    "gsd-s": ("a", "s"),
    "adjust": ("b", "r"),
    "isci-r": ("c", "r"),
    "isci-s": ("c", "s"),
    "isci-adjust": ("d", "r"),
}


def _fmt(x, none="-inf"):
    return none if np.isneginf(x) else f"{x:.6f}"


def _run_gsd(design, fam, data, lam, n_analyses):
    """Run the stagewise test following the recorded stop decisions."""
    state = new_trial(design.graph, design.n_stages)
    gs = initial_state(design.graph)
    for k in range(n_analyses):
        state, gs, _ = advance_stage(state, gs, fam, lam, design.alpha)
        stops = {j for j in range(design.m) if data.taus[j] == k} & state.collecting
        state = apply_stop_decisions(state, stops, lam=lam, stop_on_reject=True)
    return state


def run_analyze(design_path, data_path, procedure, stage, estimators) -> str:
    design = load_design(design_path)
    data = read_stage_data(data_path, design)
    fam = data.family(design)
    K = design.n_stages
    m = design.m
    n_analyses = data.last_stage + 1 if stage is None else stage
    if not 1 <= n_analyses <= K:
        raise ValidationError(f"--stage must be between 1 and {K}")
    alpha = design.alpha
    cfg = design.iteration_config()

    bracket = None
    gap = None
    if procedure in ("gsd-r", "gsd-s"):
        lam = procedure[-1]
        state = _run_gsd(design, fam, data, lam, n_analyses)
        rejected = set(state.history[-1])
        stages_vec = np.array([state.last_data_stage(j) for j in range(m)])
        lower = compatible_bounds(design.graph, state, fam, lam, alpha).lower
    elif procedure == "adjust":
        lam = "r"
        state = _run_gsd(design, fam, data, "s", n_analyses)
        r_s = set(state.history[-1])
        stages_vec = np.array([state.last_data_stage(j) for j in range(m)])
        p_r = np.array([fam.repeated(j, stages_vec[j]) for j in range(m)])
        rejected = set(
            efficient_multiple_adjustment(design.graph, r_s, stages_vec, p_r, alpha)
        )
        lower = compatible_bounds_adjustment(
            design.graph, r_s, rejected, stages_vec, fam, alpha
        ).lower
    elif procedure in ("isci-r", "isci-s"):
        lam = procedure[-1]
        res = _run_isci(design, fam, data, lam, n_analyses, cfg)
        idx = min(n_analyses, len(res.brackets)) - 1
        br = res.brackets[idx]
        rejected = set(res.rejections[idx])
        stages_vec = res.taus
        lower, bracket, gap = br.lower, br.upper, br.gap
    elif procedure == "isci-adjust":
        lam = "r"
        res = _run_isci(design, fam, data, "s", n_analyses, cfg)
        br = res.brackets[-1]
        stages_vec = res.taus
        lower, rej = isci_efficient_adjustment(
            design.graph, fam, br.lower, stages_vec, alpha, design.q
        )
        rejected = set(rej)
        gap = br.gap
    else:
        raise ValidationError(f"unknown procedure {procedure!r}")

    est = None
    if estimators:
        variant, est_lam = _ESTIMATOR_VARIANT[procedure]
        est = median_estimators(
            variant, design.graph, fam, stages_vec, lam=est_lam, cfg=cfg
        ).estimates

    lines = [
        f"procedure: {procedure}",
        f"stage: {n_analyses} of {K}",
        f"alpha: {alpha:g}",
        "",
    ]
    header = f"{'hypothesis':<12}{'rejected':<10}{'lower':>14}"
    if bracket is not None:
        header += f"{'upper':>14}{'gap':>12}"
    elif gap is not None:
        header += f"{'gap':>12}"
    if est is not None:
        header += f"{'estimate':>14}"
    lines.append(header)
    for j in range(m):
        row = f"{design.names[j]:<12}{'yes' if j in rejected else 'no':<10}{_fmt(lower[j]):>14}"
        if bracket is not None:
            row += f"{_fmt(bracket[j]):>14}{gap:>12.2e}"
        elif gap is not None:
            row += f"{gap:>12.2e}"
        if est is not None:
            row += f"{_fmt(est[j], none='n/a'):>14}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def _run_isci(design, fam, data, lam, n_analyses, cfg):
    taus = data.taus

    def stop_rule(k, rejected, lower):
        return {j for j in range(design.m) if taus[j] == k}

    return isci_stagewise(
        design.graph, fam, design.alpha, lam, n_analyses, cfg, stop_rule=stop_rule
    )


def run_simulate(scenario_path) -> list:
    spec, design, runs = load_scenario(scenario_path)
    cfg = design.iteration_config()
    rows = []
    for run in runs:
        metric = run.get("metric")
        if metric == "fwer":
            proc = run["procedure"]
            rate, se = estimate_fwer(spec, proc, design.alpha, cfg)
        elif metric == "coverage":
            proc = run["procedure"]
            stage = run.get("stage")
            rate, se = estimate_coverage(
                spec, proc, design.alpha, cfg, stage=None if stage is None else int(stage) - 1
            )
        elif metric == "median-coverage":
            proc = f"estimator-{run['variant']}"
            rate, se = estimate_median_coverage(
                spec, run["variant"], design.alpha, cfg, lam=run.get("lambda", "s")
            )
        else:
            raise ValidationError(
                "each run needs a metric: fwer, coverage, or median-coverage"
            )
        rows.append(result_rows(spec.name, proc, metric, f"{rate:.6f}", f"{se:.6f}", spec.n_reps))
    return rows


@click.group()
def main():
    """Group sequential graphical testing toolkit."""


@main.command()
@click.argument("design", type=click.Path(exists=True, dir_okay=False))
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@click.option("--procedure", type=click.Choice(PROCEDURES), default="gsd-s", show_default=True)
@click.option("--stage", type=int, default=None, help="1-based analysis stage (default: last observed).")
@click.option("--estimators", is_flag=True, help="Append median-conservative estimates.")
def analyze(design, data, procedure, stage, estimators):
    """Analyze a stage-data CSV under a design."""
    try:
        click.echo(run_analyze(design, data, procedure, stage, estimators), nl=False)
    except SeqGraphError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


@main.command()
@click.argument("scenario", type=click.Path(exists=True, dir_okay=False))
@click.option("--output", "-o", type=click.Path(dir_okay=False), required=True)
def simulate(scenario, output):
    """Run a simulation scenario and write a results CSV."""
    try:
        write_results_csv(output, run_simulate(scenario))
    except SeqGraphError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


@main.command()
@click.option("--port", type=int, default=8000, envvar="SEQGRAPH_PORT", show_default=True)
@click.option(
    "--data-dir",
    type=click.Path(file_okay=False),
    default="./seqgraph-sessions",
    envvar="SEQGRAPH_DATA_DIR",
    show_default=True,
)
@click.option("--timeout-ms", type=int, default=30_000, envvar="SEQGRAPH_TIMEOUT_MS", show_default=True)
@click.option(
    "--static-dir",
    type=click.Path(file_okay=False),
    default=None,
    envvar="SEQGRAPH_STATIC_DIR",
    help="Directory of UI assets to serve at /.",
)
def serve(port, data_dir, timeout_ms, static_dir):
    """Start the trial-monitoring HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(data_dir, timeout_ms, static_dir), host="127.0.0.1", port=port)


if __name__ == "__main__":
    main()
