"""Command-line entry point.

Every subcommand reads a config file, writes CSV files plus ``manifest.json``
into ``--out-dir`` and echoes each written path on stdout.  Logs go to
stderr; ``MSOE_VERBOSITY`` (quiet, info, debug) sets their level.  Exit
status is 0 on success, 1 on invalid input or configuration and 2 on
runtime failures.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np

from .config import CONFIG_REFERENCE, AppConfig, ConfigError, load_config, parse_transition
from .experiments import (
    bias_variance_sweep,
    clt_study,
    independence_check,
    semimarkov_surface,
    true_rate,
    variance_lemma_check,
)
from .io import (
    write_csv,
    write_events,
    write_lasso_summary,
    write_manifest,
    write_oe_table,
    write_ratefit,
    read_cohort,
    transition_label,
)
from .oe import aggregate_1d, aggregate_2d, diagonal_slice, oe_rates
from .regularized import lasso_path, lasso_to_ratefit, tree_fit, tree_to_ratefit
from .simulate import SimConfig, simulate_cohort

__all__ = ["main", "build_parser", "VERBOSITY_ENV"]

logger = logging.getLogger("msoe")

VERBOSITY_ENV = "MSOE_VERBOSITY"
_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

COMMANDS = {
    "simulate": "simulate a cohort and export its event history",
    "estimate": "fit intensities on the configured grid (method from the estimation block)",
    "sweep": "variance and scaled bias of the OE estimate across bin counts",
    "clt": "normalized-error samples and their distance to a matched normal",
    "independence": "correlation of OE estimates at two distinct time bins",
    "lemma-check": "per-subject occurrence/exposure moments against first-order predictions",
    "surface": "2D time-duration OE surface, truth and diagonal slices",
    "lasso": "fused LASSO path for one transition",
    "tree": "Poisson regression tree for one transition",
    "slice": "diagonal slices of a 2D OE fit",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="msoe",
        description="Occurrence-exposure estimation for multi-state models.",
        epilog=CONFIG_REFERENCE,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(
            name,
            help=help_text,
            description=help_text,
            epilog=CONFIG_REFERENCE,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        p.add_argument("--config", required=True, help="YAML config file")
        p.add_argument("--out-dir", required=True, help="output directory (created if missing)")
        p.add_argument("--paper-scale", action="store_true", help="use full-scale sample sizes")
        p.add_argument("--seed", type=int, default=None, help="override simulation.master_seed")
        p.add_argument("--workers", type=int, default=None, help="override simulation.workers")
    return parser


def _setup_logging():
    level = _LEVELS.get(os.environ.get(VERBOSITY_ENV, "info").strip().lower(), logging.INFO)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("msoe")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False


class _Run:
    """State shared by one subcommand invocation."""

    def __init__(self, args, cfg: AppConfig):
        self.args = args
        self.cfg = cfg
        self.out_dir = args.out_dir
        self.files: list[str] = []
        os.makedirs(self.out_dir, exist_ok=True)
        sim = cfg.simulation
        self.seed = args.seed if args.seed is not None else (sim.master_seed if sim else None)
        self.workers = args.workers if args.workers is not None else (sim.workers if sim else 1)
        if self.workers < 1:
            raise UsageError("--workers must be at least 1")

    def path(self, name: str) -> str:
        p = os.path.join(self.out_dir, name)
        self.files.append(p)
        return p

    def need_model(self):
        if self.cfg.model is None:
            raise ConfigError(f"{self.cfg.path}: '{self.args.command}' needs a model block")
        return self.cfg.model

    def need_simulation(self):
        self.need_model()
        if self.cfg.simulation is None:
            raise ConfigError(f"{self.cfg.path}: '{self.args.command}' needs a simulation block")
        return self.cfg.simulation

    def simulated_cohort(self):
        sim = self.need_simulation()
        conf = SimConfig(
            self.cfg.model, sim.initial_state, sim.n, sim.horizon, sim.censoring, self.seed, sim.window
        )
        logger.info("simulating %d subjects (seed %d)", sim.n, self.seed)
        return simulate_cohort(conf, workers=self.workers)

    def cohort(self):
        """Ingested events if the config has an input block, else a simulated cohort."""
        cfg = self.cfg
        if cfg.events is not None:
            logger.info("reading events from %s", cfg.events)
            trans = cfg.model.transition_list if cfg.model is not None else None
            absorbing = cfg.input_absorbing or (cfg.model.absorbing if cfg.model is not None else ())
            states = cfg.input_states or (list(cfg.model.states) if cfg.model is not None else None)
            return read_cohort(cfg.events, states=states, absorbing=absorbing, transitions=trans), False
        return self.simulated_cohort(), True

    def grid(self):
        if self.cfg.grid is None:
            raise ConfigError(f"{self.cfg.path}: '{self.args.command}' needs a grid block")
        return self.cfg.grid

    def transition(self, cohort=None):
        est = self.cfg.estimation
        if est.transition is not None:
            return est.transition
        if self.cfg.model is not None:
            return self.cfg.model.transition_list[0]
        if cohort is not None and cohort.transitions:
            return cohort.transitions[0]
        raise ConfigError(f"{self.cfg.path}: set estimation.transition")


# -- subcommands --------------------------------------------------------------------


def cmd_simulate(run: _Run):
    cohort = run.simulated_cohort()
    write_events(cohort, run.path("events.csv"))
    if run.cfg.grid is not None:
        write_oe_table(aggregate_1d(cohort, run.cfg.grid, run.cfg.model.transition_list), run.path("oe_table.csv"))


def _truth_table(run: _Run, fit, path):
    model = run.cfg.model
    mids = fit.grid.midpoints
    rows = []
    for jk in fit.transitions:
        expr = model.transitions.get(tuple(jk))
        if expr is None or expr.uses_duration:
            continue
        vals = true_rate(model, *jk, mids)
        rows += [(transition_label(jk), m, mids[m], vals[m]) for m in range(len(mids))]
    write_csv(path, ("transition", "bin", "t_mid", "true_rate"), rows)


def cmd_estimate(run: _Run):
    method = run.cfg.estimation.method
    if method == "lasso":
        return cmd_lasso(run)
    if method == "tree":
        return cmd_tree(run)
    est = run.cfg.estimation
    cohort, simulated = run.cohort()
    grid = run.grid()
    trans = run.cfg.model.transition_list if run.cfg.model is not None else None
    if run.cfg.grid2 is not None:
        table = aggregate_2d(cohort, run.cfg.grid2, trans)
    else:
        table = aggregate_1d(cohort, grid, trans)
    write_oe_table(table, run.path("oe_table.csv"))
    fit = oe_rates(table, level=est.level, scale=est.interval_scale)
    write_ratefit(fit, run.path("rates.csv"))
    if simulated and run.cfg.grid2 is None:
        _truth_table(run, fit, run.path("truth.csv"))


def _oe_1d(run: _Run):
    cohort, _ = run.cohort()
    jk = run.transition(cohort)
    table = aggregate_1d(cohort, run.grid(), [jk])
    return jk, table.O(*jk).astype(float), table.E(jk[0])


def cmd_lasso(run: _Run):
    est = run.cfg.estimation
    jk, O, E = _oe_1d(run)
    fits = lasso_path(O, E, est.lambdas, grid=run.grid())
    for i, f in enumerate(fits):
        if not f.converged:
            logger.warning("lambda=%g: not converged (certificate %.3g)", f.lam, f.certificate)
        write_ratefit(lasso_to_ratefit(f, jk, est.level), run.path(f"lasso_{i:02d}.csv"))
    write_lasso_summary(fits, run.path("lasso_path.csv"))


def cmd_tree(run: _Run):
    est = run.cfg.estimation
    jk, O, E = _oe_1d(run)
    tree = tree_fit(O, E, est.max_depth, est.min_exposure, est.min_deviance_gain, grid=run.grid())
    write_ratefit(tree_to_ratefit(tree, jk, est.level), run.path("tree.csv"))
    write_csv(
        run.path("tree_splits.csv"),
        ("depth", "bin_lo", "bin_hi", "split_bin", "deviance_gain"),
        ((nd.depth, nd.lo, nd.hi, nd.split, nd.gain) for nd in tree.splits()),
    )


def _censoring(run: _Run):
    return run.need_simulation().censoring


def cmd_sweep(run: _Run):
    p = run.cfg.experiment_params("sweep", run.args.paper_scale)
    rows = bias_variance_sweep(
        run.need_model(), p["Ms"], p["n"], p["reps"], run.seed, p["t0"], parse_transition(p["transition"]),
        _censoring(run), run.workers,
    )
    cols = ("M", "delta", "var_Z", "scaled_abs_bias", "reps", "n", "mean_rate", "var_Z_from_rates", "n_undefined")
    write_csv(run.path("sweep.csv"), cols, ([getattr(r, c) for c in cols] for r in rows))


def cmd_clt(run: _Run):
    p = run.cfg.experiment_params("clt", run.args.paper_scale)
    samples = clt_study(
        run.need_model(), p["Ms"], p["n"], p["reps"], run.seed, p["t0"], parse_transition(p["transition"]),
        _censoring(run), run.workers,
    )
    write_csv(
        run.path("clt_summary.csv"),
        ("M", "delta", "matched_sd", "ks_distance", "n_undefined"),
        ((s.M, s.delta, s.matched_sd, s.ks_distance, s.n_undefined) for s in samples),
    )
    write_csv(
        run.path("clt_z.csv"),
        ("M", "replication", "z"),
        ((s.M, r, z) for s in samples for r, z in enumerate(s.z_values)),
    )


def cmd_independence(run: _Run):
    p = run.cfg.experiment_params("independence", run.args.paper_scale)
    res = independence_check(
        run.need_model(), p["s"], p["t"], p["M"], p["n"], p["reps"], run.seed, parse_transition(p["transition"]),
        None if p["duration_bin"] is None else tuple(p["duration_bin"]), _censoring(run),
        run.cfg.estimation.level, run.workers,
    )
    write_csv(
        run.path("independence.csv"),
        ("s", "t", "M", "n", "reps", "n_valid", "corr", "ci_lo", "ci_hi"),
        [(p["s"], p["t"], p["M"], p["n"], p["reps"], res.n_valid, res.corr, res.ci_lo, res.ci_hi)],
    )


def cmd_lemma_check(run: _Run):
    p = run.cfg.experiment_params("lemma-check", run.args.paper_scale)
    sim = run.need_simulation()
    rows, meta = variance_lemma_check(
        run.cfg.model, p["t"], p["delta"], p["n"], run.seed, parse_transition(p["transition"]), sim.censoring,
        sim.horizon, u=p["u"], delta_u=p["delta_u"], workers=run.workers,
    )
    write_csv(
        run.path("lemma.csv"),
        ("quantity", "estimate", "std_error", "prediction", "ratio"),
        ((r.quantity, r.estimate, r.std_error, r.prediction, r.ratio) for r in rows),
    )
    write_csv(run.path("lemma_plugins.csv"), ("name", "value"), sorted(meta.items()))


def _slices(p):
    return tuple((parse_transition(s["transition"]), float(s["d"])) for s in p["slices"])


def _write_slices(run: _Run, slices: dict):
    for (jk, d), pts in slices.items():
        name = f"slice_{jk[0]}-{jk[1]}_d{d:g}.csv"
        write_csv(run.path(name), ("t", "fitted", "true"), pts)


def cmd_surface(run: _Run):
    p = run.cfg.experiment_params("surface", run.args.paper_scale)
    sim = run.need_simulation()
    res = semimarkov_surface(
        run.cfg.model, p["n"], p["mesh"], run.seed, sim.horizon, sim.censoring, _slices(p),
        run.cfg.estimation.level, run.workers,
    )
    write_ratefit(res.fit, run.path("surface.csv"))
    g = res.fit.grid
    te, ue = g.time.edges, g.duration.edges
    write_csv(
        run.path("surface_truth.csv"),
        ("transition", "t_lo", "t_hi", "u_lo", "u_hi", "true_rate"),
        (
            (transition_label(jk), te[a], te[a + 1], ue[b], ue[b + 1], res.truth[i, a, b])
            for i, jk in enumerate(res.fit.transitions)
            for a in range(len(te) - 1)
            for b in range(len(ue) - 1)
        ),
    )
    _write_slices(run, res.slices)


def cmd_slice(run: _Run):
    p = run.cfg.experiment_params("slice", run.args.paper_scale)
    if run.cfg.grid2 is None:
        raise ConfigError(f"{run.cfg.path}: 'slice' needs grid.duration for a time-duration fit")
    cohort, simulated = run.cohort()
    trans = run.cfg.model.transition_list if run.cfg.model is not None else None
    fit = oe_rates(aggregate_2d(cohort, run.cfg.grid2, trans), level=run.cfg.estimation.level)
    out = {}
    for jk, d in _slices(p):
        pts = diagonal_slice(fit, d, jk)
        truth = [np.nan] * len(pts)
        if simulated and pts:
            ts = np.array([q[0] for q in pts])
            truth = np.atleast_1d(true_rate(run.cfg.model, *jk, ts, ts - d)).tolist()
        out[(jk, d)] = [(t, r, v) for (t, r), v in zip(pts, truth)]
    _write_slices(run, out)


HANDLERS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "sweep": cmd_sweep,
    "clt": cmd_clt,
    "independence": cmd_independence,
    "lemma-check": cmd_lemma_check,
    "surface": cmd_surface,
    "lasso": cmd_lasso,
    "tree": cmd_tree,
    "slice": cmd_slice,
}


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    start = time.perf_counter()
    try:
        cfg = load_config(args.config)
        run = _Run(args, cfg)
        HANDLERS[args.command](run)
        run.files.append(
            write_manifest(
                run.out_dir,
                args.command,
                cfg,
                run.seed,
                list(run.files),
                time.perf_counter() - start,
                {"paper_scale": bool(args.paper_scale), "workers": run.workers},
            )
        )
    except (UsageError, ValueError, KeyError) as exc:
        logger.error("%s", exc)
        return 1
    except Exception as exc:  # noqa: BLE001
        logger.error("runtime failure: %s: %s", type(exc).__name__, exc)
        return 2
    for f in run.files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
