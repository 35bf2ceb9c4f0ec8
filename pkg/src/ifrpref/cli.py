"""Command-line interface: ``ifrpref {fit,simulate,identify,invert-ci,summarize}``.

Global options may also be given in a ``key = value`` config file passed
with ``--config``; command-line flags win.  Exit codes: 0 success, 2 data
error, 3 convergence failure, 4 infeasible identification problem.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .errors import ConvergenceError, DataError, DomainError

EXIT_OK, EXIT_DATA, EXIT_CONVERGENCE, EXIT_IDENT = 0, 2, 3, 4

logger = logging.getLogger("ifrpref")

# global option -> (type, fallback when neither flag nor config sets it; None = command default)
GLOBAL_OPTIONS = {
    "seed": (int, 0),
    "chains": (int, None),
    "draws": (int, None),
    "burn_in": (float, None),
    "thin": (int, None),
    "lambda": (float, 0.05),
    "eta": (float, 0.1),
    "fixed_effects": (bool, False),
    "output_dir": (str, "."),
}


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment; dashes equal underscores."""
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"config line {n}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in GLOBAL_OPTIONS:
                raise DataError(f"config line {n}: unknown key {key!r}")
            out[key] = _convert(key, value, n)
    return out


def _convert(key, value, n):
    typ = GLOBAL_OPTIONS[key][0]
    if typ is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise DataError(f"config line {n}: {key} must be a boolean")
    try:
        return typ(value)
    except ValueError:
        raise DataError(f"config line {n}: bad value for {key}") from None


def _add_global_flags(p):
    g = p.add_argument_group("global options")
    g.add_argument("--config", help="key = value file with defaults for the global options")
    g.add_argument("--seed", type=int)
    g.add_argument("--chains", type=int, help="number of chains")
    g.add_argument("--draws", type=int, help="iterations per chain (before burn-in and thinning)")
    g.add_argument("--burn-in", dest="burn_in", type=float, help="burn-in fraction")
    g.add_argument("--thin", type=int)
    g.add_argument("--lambda", dest="lambda", type=float, help="rate of the exponential prior on gamma")
    g.add_argument("--eta", type=float, help="half-normal scale of the prior on tau")
    g.add_argument("--fixed-effects", dest="fixed_effects", action="store_const", const=True,
                   help="pin tau to 0")
    g.add_argument("--output-dir", dest="output_dir")
    g.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="ifrpref", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the large-P model to a dataset CSV")
    _add_global_flags(p)
    p.add_argument("--data", help="dataset CSV (default: bundled European data)")
    p.add_argument("--subset", choices=("all", "representative"), default="all",
                   help="'representative' keeps only groups with phi known to be 1, without covariates")
    p.add_argument("--no-covariates", action="store_true")
    p.add_argument("--prob", type=float, default=0.95)

    p = sub.add_parser("simulate", help="run the simulation study")
    _add_global_flags(p)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--gammas", type=float, nargs="+")
    p.add_argument("--lambdas", type=float, nargs="+")
    p.add_argument("--etas", type=float, nargs="+")
    p.add_argument("--models", nargs="+", choices=("M1", "M2", "M3"), default=["M1", "M2", "M3"])
    p.add_argument("--full", action="store_true", help="the complete 8 x 3 x 3 design")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("identify", help="identification intervals for the average IFR")
    _add_global_flags(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--signals", help="CSV with columns a,b,phi_lo,phi_hi")
    src.add_argument("--example", type=int, choices=(4, 11, 22),
                     help="bundled 12-group example at this gamma (IFR 0.02, phi bounds 1..40)")
    p.add_argument("--tau-bar", type=float, default=0.0)
    p.add_argument("--grid-step", type=float, default=1e-4)
    p.add_argument("--ddof", type=int, choices=(0, 1), default=1)
    p.add_argument("--refine", action="store_true", help="bisect endpoints below the grid step")

    p = sub.add_parser("invert-ci", help="effective (confirmed, tests) for a reported 95%% CI")
    _add_global_flags(p)
    p.add_argument("lower", type=float)
    p.add_argument("upper", type=float)

    p = sub.add_parser("summarize", help="posterior summaries of a draws CSV")
    _add_global_flags(p)
    p.add_argument("draws_csv")
    p.add_argument("--prob", type=float, default=0.95)
    return parser


def resolve_options(args) -> dict:
    cfg = read_config(args.config) if getattr(args, "config", None) else {}
    out = {}
    for key, (_, fallback) in GLOBAL_OPTIONS.items():
        v = getattr(args, key, None)
        out[key] = v if v is not None else cfg.get(key, fallback)
    return out


def _chain_config(opts, base):
    from .sampler import ChainConfig

    kw = asdict(base)
    if opts["chains"] is not None:
        kw["n_chains"] = opts["chains"]
    if opts["draws"] is not None:
        kw["total_draws"] = opts["draws"] * kw["n_chains"]
    if opts["burn_in"] is not None:
        kw["burn_in_fraction"] = opts["burn_in"]
    if opts["thin"] is not None:
        kw["thinning"] = opts["thin"]
    kw["seed"] = opts["seed"]
    kw["max_total_draws"] = max(kw["max_total_draws"], kw["total_draws"] * 2 ** kw["max_restarts"])
    return ChainConfig(**kw)


def _outdir(opts):
    d = Path(opts["output_dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_fit(args, opts):
    from .io import build_report, load_dataset, representative_only, write_draws_csv, write_interval_plot_data, write_json
    from .model import PriorConfig
    from .sampler import ChainConfig, LargePModel, run_chains

    groups = load_dataset(args.data, covariates=not args.no_covariates)
    if args.subset == "representative":
        groups = representative_only(groups)
        if not groups:
            raise DataError("no representative groups in the dataset")
    prior = PriorConfig(lam=opts["lambda"], eta=opts["eta"], fixed_effects=bool(opts["fixed_effects"]))
    config = _chain_config(opts, ChainConfig.european())
    model = LargePModel(groups, prior)
    result = run_chains(model, config)
    settings = dict(subset=args.subset, covariates=not args.no_covariates, n_groups=len(groups),
                    prior=asdict(prior), chains=asdict(config))
    report = build_report(result, model, prob=args.prob, settings=settings)
    out = _outdir(opts)
    write_json(report, out / "report.json")
    write_draws_csv(result, out / "draws.csv")
    write_interval_plot_data(report, out / "intervals.csv")
    overall = next(e for e in report["globals"] if e["parameter"] == "ifr_overall")
    print(f"overall IFR {overall['median']:.5f} "
          f"[{overall['hpd_lower']:.5f}, {overall['hpd_upper']:.5f}] "
          f"(max R-hat {report['max_rhat'] or float('nan'):.3f}, restarts {report['n_restarts']})")
    if not result.converged:
        logger.error("chains did not converge; report flagged")
        return EXIT_CONVERGENCE
    return EXIT_OK


def cmd_simulate(args, opts):
    from .simulation import FULL_GAMMA_GRID, FULL_PRIOR_GRID, SimScenario, aggregate, run_study
    from .sampler import ChainConfig

    if args.full:
        scen = SimScenario.full(n_reps=args.reps, seed=opts["seed"])
    else:
        scen = SimScenario(n_reps=args.reps, seed=opts["seed"])
    kw = {}
    if args.gammas:
        kw["gamma_grid"] = tuple(args.gammas)
    if args.lambdas:
        kw["lambda_grid"] = tuple(args.lambdas)
    if args.etas:
        kw["eta_grid"] = tuple(args.etas)
    if kw:
        scen = SimScenario(**{**asdict(scen), **kw})
    config = _chain_config(opts, ChainConfig(seed=opts["seed"]))
    records = run_study(scen, models=args.models, config=config, n_jobs=args.jobs)
    out = _outdir(opts)
    _write_dicts(out / "records.csv", [asdict(r) for r in records])
    summary = aggregate(records)
    _write_dicts(out / "summary.csv", summary)
    for row in summary:
        print(f"{row['model']} gamma={row['gamma']} lambda={row['lam']} eta={row['eta']} n={row['n']} "
              f"estimate={row['mean_estimate']:.4f} coverage={row['coverage']:.3f} width={row['mean_width']:.3f}")
    return EXIT_OK


def _write_dicts(path, rows):
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _read_signals(path):
    from .identification import GroupSignal

    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"a", "b", "phi_lo", "phi_hi"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise DataError("signals CSV needs columns a,b,phi_lo,phi_hi")
        for i, row in enumerate(reader, start=1):
            try:
                out.append(GroupSignal(float(row["a"]), float(row["b"]), float(row["phi_lo"]), float(row["phi_hi"])))
            except (ValueError, TypeError) as e:
                raise DataError(str(e), row=i) from None
            except DomainError as e:
                raise DataError(str(e), row=i) from None
    if not out:
        raise DataError("signals CSV has no rows")
    return out


def cmd_identify(args, opts):
    from .identification import GlobalProblem, example_signals, global_interval, group_interval

    signals = example_signals(args.example) if args.example is not None else _read_signals(args.signals)
    problem = GlobalProblem(signals, tau_bar=args.tau_bar, grid_step=args.grid_step, ddof=args.ddof,
                            refine=args.refine)
    groups = [group_interval(s) for s in signals]
    glob = global_interval(problem)

    def iv(x):
        return None if x.empty else [x.lower, x.upper]

    result = dict(tau_bar=args.tau_bar, grid_step=args.grid_step, ddof=args.ddof,
                  groups=[iv(g) for g in groups], global_interval=iv(glob))
    out = _outdir(opts)
    with open(out / "identification.json", "w") as fh:
        json.dump(result, fh, indent=2)
        fh.write("\n")
    with open(out / "identification_intervals.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "lower", "upper"])
        for k, g in enumerate(groups, start=1):
            w.writerow([k, g.lower, g.upper])
        w.writerow(["global", "" if glob.empty else glob.lower, "" if glob.empty else glob.upper])
    print(json.dumps(result))
    if glob.empty:
        logger.error("no average IFR is compatible with the bounds")
        return EXIT_IDENT
    return EXIT_OK


def cmd_invert_ci(args, opts):
    from .distributions import fit_beta_to_interval

    fit = fit_beta_to_interval(args.lower, args.upper)
    cc = int(round(fit.alpha))
    print(json.dumps(dict(confirmed=cc, tests=cc + int(round(fit.beta)) + 1, alpha=fit.alpha, beta=fit.beta,
                          residual=fit.residual)))
    return EXIT_OK


def cmd_summarize(args, opts):
    from .io import read_draws_csv, summarize_column

    names, draws = read_draws_csv(args.draws_csv)
    rows = [summarize_column(draws[:, :, j], n, args.prob) for j, n in enumerate(names)]
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "identify": cmd_identify,
            "invert-ci": cmd_invert_ci, "summarize": cmd_summarize}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = resolve_options(args)
        return COMMANDS[args.command](args, opts)
    except (DataError, FileNotFoundError) as e:
        logger.error("%s", e)
        return EXIT_DATA
    except ConvergenceError as e:
        logger.error("%s", e)
        return EXIT_CONVERGENCE
    except DomainError as e:
        logger.error("%s", e)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
