"""Command-line driver: simulate, ladder, selfsim, stability, check.

Every subcommand reads one JSON config (--config), writes CSV artifacts
into an output directory (--out overrides the config), and reports through
exit codes: 0 success, 2 invalid config or data, 3 a run or solve aborted
midway (partial artifacts are kept), 4 an I/O failure. --seed overrides
the config seed for the perturbation noise of stability runs; with both
config and seed fixed, every output file is byte-identical across runs.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .core import NEUTRAL_CLASS
from .diagnostics import (
    energy_distance,
    energy_growth_fit,
    grain_count_bounds,
    invariant_report,
    lewis_means,
    tightness_envelope,
)
from .errors import (
    AdmissibilityLossError,
    ConfigError,
    GrainflowError,
    UnprojectableError,
)
from .initial import build_initial_state, project_polyhedral
from .io import (
    RunConfig,
    load_config,
    read_snapshot,
    with_overrides,
    write_mapping,
    write_snapshot,
    write_table,
    write_timeseries,
)
from .selfsim import lewis_asymptote, selfsim_moments
from .stepper import run_simulation, truncation_ladder

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORTED = 3
EXIT_IO = 4


def _say(quiet, message):
    if not quiet:
        print(message)


def _build_state(config: RunConfig):
    state = build_initial_state(config.params, config.initial_family,
                                **config.initial_params)
    if config.project:
        state = project_polyhedral(state, config.params)
    return state


def _write_run_artifacts(record, config: RunConfig, out: Path, quiet):
    """Time series, invariants, snapshots, and toggled diagnostics."""
    write_timeseries(out / "timeseries.csv", record)
    inv = invariant_report(record)
    write_mapping(out / "invariants.csv", {
        "area_drift": inv.area_drift,
        "imbalance_peak": inv.imbalance_peak,
        "count_violations": inv.count_violations,
        "min_node": inv.min_node,
        "flat_ratio": inv.flat_ratio,
        "coupling_den_floor": inv.coupling_den_floor,
    })
    if config.snapshot_every > 0:
        for idx in range(0, len(record.samples), config.snapshot_every):
            step = int(record.sample_steps[idx])
            write_snapshot(out / f"snapshot_{step:08d}.csv",
                           record.samples[idx], record.params)
    write_snapshot(out / "snapshot_final.csv", record.samples[-1],
                   record.params)

    if config.tightness:
        tight = tightness_envelope(record)
        rows = []
        for i, t in enumerate(tight.times):
            for j, alpha in enumerate(tight.alphas):
                rows.append((t, alpha,
                             tight.first[i, j], tight.first_bound[i, j],
                             tight.second[i, j], tight.second_bound[i, j]))
        write_table(out / "tightness.csv",
                    ("time", "alpha", "count_complement", "count_bound",
                     "facet_area_complement", "facet_area_bound"), rows)
    if config.bounds:
        report = grain_count_bounds(record)
        write_table(out / "count_bounds.csv",
                    ("time", "count", "implicit_bound", "coupling_sup",
                     "coupling_cap"),
                    zip(report.times, report.counts, report.implicit_bound,
                        report.coupling_sup, report.coupling_cap))
    if config.lewis:
        fit = lewis_means(record.samples[-1], record.params)
        write_table(out / "lewis_means.csv", ("n", "mean_area", "in_window"),
                    [(int(n), m, str(bool(u))) for n, m, u
                     in zip(fit.classes, fit.means, fit.used)])
        write_mapping(out / "lewis_fit.csv", {
            "slope": fit.slope, "intercept": fit.intercept,
            "window_lo": int(fit.window[0]), "window_hi": int(fit.window[1]),
        })
    _say(quiet, f"artifacts written to {out}")


def cmd_simulate(config: RunConfig, out: Path, quiet) -> int:
    config.require("model", "stepper", "t_final", "initial")
    state = _build_state(config)
    aborted = None
    try:
        record = run_simulation(state, config.t_final, config.stepper,
                                config.params)
    except AdmissibilityLossError as exc:
        if exc.record is None:
            raise
        record, aborted = exc.record, exc
    _write_run_artifacts(record, config, out, quiet)
    if aborted is not None:
        print(f"run aborted: {aborted}", file=sys.stderr)
        return EXIT_ABORTED
    return EXIT_OK


def cmd_ladder(config: RunConfig, out: Path, quiet) -> int:
    config.require("model", "stepper", "t_final", "initial", "ladder")
    state = _build_state(config)
    report = truncation_ladder(state, config.ladder_rungs, config.t_final,
                               config.stepper, config.params,
                               project=config.project)
    rows = [(int(ra), int(rb), s, sl, c, a, g)
            for ra, rb, s, sl, c, a, g in zip(
                report.rungs, report.rungs[1:], report.pair_sup,
                report.pair_sup_low, report.pair_count_sup,
                report.pair_area_sup, report.pair_coupling_sup)]
    write_table(out / "ladder.csv",
                ("rung_low", "rung_high", "sup_diff", "sup_diff_low_classes",
                 "count_diff", "area_diff", "coupling_diff"), rows)
    _say(quiet, f"ladder report written to {out}")
    return EXIT_OK


def cmd_selfsim(config: RunConfig, out: Path, quiet) -> int:
    config.require("selfsim")
    result = selfsim_moments(config.selfsim)
    write_table(out / "selfsim_moments.csv", ("n", "phi"),
                [(int(n), p) for n, p in zip(result.classes, result.moments)])
    slope, intercept = lewis_asymptote(config.selfsim.beta,
                                       max(result.coupling, 0.0))
    write_mapping(out / "selfsim_summary.csv", {
        "beta": config.selfsim.beta,
        "coupling": result.coupling,
        "coupling_num": result.coupling_num,
        "coupling_den": result.coupling_den,
        "converged": result.converged,
        "nonnegative": result.nonnegative,
        "iterations": result.iterations,
        "final_residual": (float(result.residuals[-1])
                           if result.iterations else 0.0),
        "lewis_slope": slope,
        "lewis_intercept": intercept,
    })
    _say(quiet, f"self-similar tables written to {out}")
    return EXIT_OK if result.converged else EXIT_ABORTED


def cmd_stability(config: RunConfig, out: Path, quiet) -> int:
    config.require("model", "stepper", "initial", "stability")
    t_final = config.stability_t_final or config.t_final
    if t_final is None:
        raise ConfigError("stability runs need t_final (top level or "
                          "stability section)")
    base_state = _build_state(config)
    base = run_simulation(base_state, t_final, config.stepper, config.params)
    rng = np.random.default_rng(config.seed)

    series_rows = []
    fit_rows = []
    for delta in config.stability_deltas:
        noise = rng.uniform(-1.0, 1.0, size=base_state.f.shape)
        perturbed = base_state.copy()
        perturbed.f *= 1.0 + delta * noise
        perturbed = project_polyhedral(perturbed, config.params)
        record = run_simulation(perturbed, t_final, config.stepper,
                                config.params)
        times = base.sample_times
        energies = np.array([
            energy_distance(sa, sb, config.params)
            for sa, sb in zip(base.samples, record.samples)])
        series_rows.extend(
            (delta, t, e) for t, e in zip(times, energies))
        rate, prefactor = energy_growth_fit(times, energies)
        fit_rows.append((delta, rate, prefactor,
                         float(energies[0]), float(energies.max())))
    write_table(out / "stability.csv", ("delta", "time", "energy"),
                series_rows)
    write_table(out / "stability_fit.csv",
                ("delta", "rate", "prefactor", "energy_initial",
                 "energy_peak"), fit_rows)
    _say(quiet, f"stability regression written to {out}")
    return EXIT_OK


def cmd_check(args, quiet) -> int:
    if (args.config is None) == (args.snapshot is None):
        raise ConfigError("check needs exactly one of --config or --snapshot")
    if args.config is not None:
        config = load_config(args.config)
        sections = [name for name in
                    ("params", "stepper", "t_final", "initial_family",
                     "ladder_rungs", "selfsim", "stability_deltas")
                    if getattr(config, name) is not None]
        _say(quiet, f"config OK; sections: {', '.join(sections)}")
        return EXIT_OK
    state, classes, nodes = read_snapshot(args.snapshot)
    if not np.all(np.isfinite(state.f)):
        raise ConfigError(f"{args.snapshot}: non-finite densities")
    if state.f.min() < 0.0:
        raise ConfigError(f"{args.snapshot}: negative densities")
    # Evolved states legitimately carry the trailing collision half-step's
    # gain at the inflow node, so boundary content is reported, not fatal;
    # a snapshot is reusable as initial data only when the sup is zero.
    growing = classes > NEUTRAL_CLASS
    boundary_sup = float(np.abs(state.f[growing, 0]).max()) if growing.any() else 0.0
    _say(quiet, f"snapshot OK; classes {classes[0]}..{classes[-1]}, "
                f"{nodes.size} nodes, a_max {nodes[-1]:g}, "
                f"growing-class boundary sup {boundary_sup:.3e}")
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grainflow",
        description="Kinetic grain-growth simulator and verification suite.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, config_required=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=config_required,
                       help="path to the JSON run configuration")
        p.add_argument("--out", default=None,
                       help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, default=None,
                       help="seed override for perturbation noise")
        p.add_argument("--quiet", action="store_true",
                       help="suppress informational output")
        return p

    add("simulate", "run one trajectory and write snapshots + series")
    add("ladder", "run the truncation ladder and write the rung table")
    add("selfsim", "solve the self-similar moment problem")
    add("stability", "run perturbed pairs and write the energy regression")
    check = add("check", "validate a config or a snapshot file",
                config_required=False)
    check.add_argument("--snapshot", default=None,
                       help="snapshot CSV to validate instead of a config")
    return parser


_COMMANDS = {
    "simulate": cmd_simulate,
    "ladder": cmd_ladder,
    "selfsim": cmd_selfsim,
    "stability": cmd_stability,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "check":
            return cmd_check(args, args.quiet)
        config = with_overrides(load_config(args.config),
                                out_dir=args.out, seed=args.seed)
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](config, out, args.quiet)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UnprojectableError as exc:
        print(f"error: initial data not projectable: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GrainflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORTED
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
