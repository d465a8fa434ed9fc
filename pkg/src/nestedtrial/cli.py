"""Command-line interface for nested-trial estimation and simulation.

Exit codes: 0 success, 2 usage or configuration error, otherwise the
``exit_code`` of the raised :class:`~nestedtrial.errors.NestedTrialError`.
Errors are reported on stderr as a JSON object ``{"error": code, "message": ...}``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import sim
from .data import ColumnSpec, SubsamplingDesign, load_csv, read_columns, save_csv, summarize
from .errors import ConfigError, IOFailure, NestedTrialError, PreconditionError
from .estimator import analyze, attach_bootstrap, bootstrap
from .glm import DesignSpec
from .nuisance import FixedNuisance, NuisanceConfig, check_design_columns
from .parallel import default_threads


class UsageError(NestedTrialError):
    code = "usage"
    exit_code = 2


def _design(obj, default):
    if obj is None:
        return default
    return DesignSpec.from_dict(obj)


def nuisance_config(cfg: dict, data) -> NuisanceConfig:
    """Build working-model choices from the analysis config."""
    x = list(data.x1_names) + list(data.x2_names)
    arms = tuple(int(a) for a in cfg.get("arms", (1, 0)))
    samp = cfg.get("sampling", {"mode": "fitted"})
    mode = samp.get("mode", "fitted")
    if mode == "fitted":
        sdesign = _design(samp.get("design"), DesignSpec(tuple(data.x1_names)))
    elif mode == "design":
        if "subsampling" in samp:
            sdesign = SubsamplingDesign.from_dict(samp["subsampling"])
        elif "probabilities" in samp:
            sdesign = {"level_column": samp["level_column"], "probabilities": samp["probabilities"]}
        else:
            raise ConfigError("design sampling mode needs 'subsampling' or level 'probabilities'")
    else:
        sdesign = None
    treat = cfg.get("treatment", {"mode": "known"})
    tmode = treat.get("mode", "known")
    probs = treat.get("probabilities")
    if tmode == "known" and probs is None:
        probs = {a: 1.0 / len(arms) for a in arms}
    outcome = cfg.get("outcome", {})
    pseudo = cfg.get("pseudo_outcome", {})
    return NuisanceConfig(
        arms=arms,
        participation=_design(cfg.get("participation"), DesignSpec(tuple(x))),
        outcome=_design(outcome.get("design"), DesignSpec(tuple(x))),
        outcome_family=outcome.get("family", "linear"),
        pseudo=_design(pseudo.get("design"), None),
        pseudo_family=pseudo.get("family", "linear"),
        sampling_mode=mode,
        sampling_design=sdesign,
        treatment_mode=tmode,
        treatment_probs=None if probs is None else {int(k): float(v) for k, v in probs.items()},
        treatment_design=_design(treat.get("design"), None) if tmode == "fitted" else None,
    )


def _load(args):
    with open(args.config) as fh:
        cfg = json.load(fh)
    if "columns" not in cfg:
        raise ConfigError("config needs a 'columns' block")
    spec = ColumnSpec.from_dict(cfg["columns"])
    alpha = float(cfg.get("alpha", 0.05))
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    return cfg, spec, load_csv(args.data, spec)


def _fixed_nuisance(cfg, args, n_units):
    fixed = cfg["fixed_nuisance"]
    names = [fixed["c"], fixed["p"]]
    for key in ("e", "g", "b"):
        names += list(fixed[key].values())
    cols = read_columns(args.data, names)
    if any(len(v) != n_units for v in cols.values()):
        raise ConfigError("fixed nuisance columns do not align with the data")
    per_arm = {key: {int(a): cols[c] for a, c in fixed[key].items()} for key in ("e", "g", "b")}
    return FixedNuisance(c=cols[fixed["c"]], p=cols[fixed["p"]], **per_arm)


def cmd_estimate(args) -> int:
    cfg, spec, data = _load(args)
    config = nuisance_config(cfg, data)
    check_design_columns(config, data)
    contrasts = [tuple(int(v) for v in c) for c in cfg.get("contrasts", [])]
    nuisance = _fixed_nuisance(cfg, args, data.n_units) if "fixed_nuisance" in cfg else None
    result = analyze(data, config, contrasts=contrasts, alpha=float(cfg.get("alpha", 0.05)),
                     ic_mode=cfg.get("ic_mode", "centered"), nuisance=nuisance,
                     clip=cfg.get("clip_floor"))
    if "bootstrap" in cfg.get("se_methods", []):
        if nuisance is not None:
            raise ConfigError("bootstrap cannot refit fixed nuisance values")
        b = cfg.get("bootstrap", {})
        boot = bootstrap(data, config, int(b.get("B", 200)), int(b.get("seed", 0)),
                         contrasts=contrasts, alpha=result.alpha,
                         threads=int(b.get("threads", args.threads or default_threads())))
        attach_bootstrap(result, boot)
    _write_json(result.to_dict(), args.out)
    return 0


def cmd_validate(args) -> int:
    cfg, spec, data = _load(args)
    config = nuisance_config(cfg, data)
    check_design_columns(config, data)
    print(json.dumps({"valid": True, "summary": summarize(data, config.arms)}, indent=2))
    return 0


def cmd_solve_intercepts(args) -> int:
    gamma0 = sim.solve_participation_intercept(args.target_participation, args.z1,
                                               n_draws=args.draws, seed=args.seed)
    out = {"z1_kind": args.z1, "target_participation": args.target_participation,
           "gamma0": gamma0,
           "achieved_participation": sim.marginal_participation(gamma0, args.z1, args.draws,
                                                                args.seed)}
    if args.target_sampling:
        out["zeta0"] = {}
        for q in args.target_sampling:
            out["zeta0"][repr(q)] = sim.solve_sampling_intercept(q, gamma0, args.z1,
                                                                 n_draws=args.draws,
                                                                 seed=args.seed)
    print(json.dumps(out, indent=2))
    return 0


def cmd_simulate(args) -> int:
    if args.replicates < 1:
        raise UsageError("--replicates must be at least 1")
    if args.scenario:
        obj = json.loads(Path(args.scenario).read_text())
        items = obj if isinstance(obj, list) else [obj]
        scenarios = [sim.Scenario.from_dict(s) for s in items]
        name = Path(args.scenario).stem
    else:
        scenarios = sim.bundled_grid(args.grid)
        name = args.grid
    settings = sim.RunSettings(misspecification=args.misspecification)
    threads = args.threads or default_threads()
    rows = sim.run_grid(scenarios, args.replicates, args.seed, settings=settings, threads=threads)
    meta = {"source": name, "replicates": args.replicates, "seed": args.seed,
            "misspecification": args.misspecification,
            "variance_divisor": "R-1", "mse_divisor": "R",
            "scenarios": [s.to_dict() for s in scenarios]}
    sim.emit_tables(rows, args.out, layout=args.layout, metadata=meta)
    return 0


def cmd_generate(args) -> int:
    if args.grid_cell:
        z1, t, n, kind, q = args.grid_cell
        scenario = sim.published_scenario(z1, int(t), int(n), kind, float(q))
    else:
        scenario = sim.Scenario.from_dict(json.loads(Path(args.scenario).read_text()))
    cohort = sim.generate_cohort(scenario, np.random.default_rng(args.seed))
    spec = save_csv(cohort.data, args.out)
    if args.columns_out:
        Path(args.columns_out).write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    return 0


def _write_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nestedtrial", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate potential-outcome means from a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="-")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("validate", help="check a dataset against a config")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="run Monte Carlo scenarios")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", help="scenario JSON (object or list)")
    src.add_argument("--grid", help=f"bundled grid name ({', '.join(sorted(sim.BUNDLED_GRIDS))})")
    p.add_argument("--replicates", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--misspecification", choices=sim.MISSPECIFICATIONS, default="none")
    p.add_argument("--layout", choices=("long_csv", "appendix_grid", "both"), default="both")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("solve-intercepts", help="calibrate simulation intercepts")
    p.add_argument("--target-participation", type=float, required=True)
    p.add_argument("--target-sampling", type=float, nargs="*", default=[])
    p.add_argument("--z1", choices=("continuous", "binary"), default="continuous")
    p.add_argument("--draws", type=int, default=10_000_000)
    p.add_argument("--seed", type=int, default=20190101)
    p.set_defaults(func=cmd_solve_intercepts)

    p = sub.add_parser("generate", help="write one simulated cohort as CSV")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario")
    src.add_argument("--grid-cell", nargs=5, metavar=("Z1", "TRIAL", "N", "SAMPLING", "Q"))
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--columns-out")
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except NestedTrialError as exc:
        sys.stderr.write(json.dumps(exc.to_dict()) + "\n")
        return exc.exit_code
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        if isinstance(exc, OSError):
            err = IOFailure(f"{type(exc).__name__}: {exc}")
        elif isinstance(exc, ValueError):
            err = PreconditionError(str(exc))
        else:
            err = ConfigError(str(exc))
        sys.stderr.write(json.dumps(err.to_dict()) + "\n")
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
