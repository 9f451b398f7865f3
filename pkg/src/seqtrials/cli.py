"""Command-line interface.

Subcommands:
  simulate  run a Monte-Carlo scenario comparison and write tables
  analyze   run the estimation pipelines on cohort CSV files
  truth     compute true marginal curves for a scenario
  oracle    check the 2-period non-parametric equivalences

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import importlib.metadata
import json
import os
import sys
import time

import numpy as np

from .errors import DataError, NumericalError, SeqTrialsError
from .cohort import load_cohort
from .estimators import MarginalResults, bootstrap_ci
from .oracle import (TreeCounts, np_msm_surv1, np_msm_surv2, np_seq_surv1,
                     np_seq_surv2, random_tree_counts)
from .simgen import (DEFAULT_HORIZONS, METHODS, SCENARIOS, ScenarioParams,
                     analyze_cohort, default_msm_spec, default_weight_spec,
                     generate_truth, run_scenario)


def _version() -> str:
    try:
        return "seqtrials-" + importlib.metadata.version("seqtrials")
    except importlib.metadata.PackageNotFoundError:
        return "seqtrials-dev"


def _outdir(args) -> str:
    out = args.out or os.environ.get("SEQTRIALS_OUTDIR") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _write(outdir: str, name: str, text: str) -> str:
    path = os.path.join(outdir, name)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


def _scenario_params(args, parser) -> ScenarioParams:
    if args.scenario_file:
        with open(args.scenario_file, encoding="utf-8") as fh:
            return ScenarioParams.from_json(fh.read())
    if args.scenario not in SCENARIOS:
        parser.error(f"unknown scenario {args.scenario}; choose from "
                     f"{sorted(SCENARIOS)} or pass --scenario-file")
    return SCENARIOS[args.scenario]


def _config_echo(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items())
            if k != "func" and v is not None}


def cmd_simulate(args, parser) -> int:
    params = _scenario_params(args, parser)
    methods = tuple(args.methods.split(","))
    unknown = set(methods) - set(METHODS)
    if unknown:
        parser.error(f"unknown methods {sorted(unknown)}")
    t0 = time.monotonic()
    truth = generate_truth(params, args.horizons, n_large=args.n_truth,
                           rng_seed=args.seed + 1_000_000)
    table = run_scenario(params, args.n, args.reps, methods, args.seed,
                         family=args.family, horizons=args.horizons,
                         truth=truth, truncation_percentile=args.truncate)
    outdir = _outdir(args)
    _write(outdir, "performance.csv", table.to_csv())
    _write(outdir, "weights_diag.csv", table.weights_csv())
    _write(outdir, "truth.csv", truth.to_csv())
    summary = {
        "version": _version(),
        "command": "simulate",
        "config": _config_echo(args),
        "results": table.to_json_dict(),
        "wall_time_seconds": time.monotonic() - t0,
    }
    _write(outdir, "summary.json", json.dumps(summary, indent=2, sort_keys=True)
           + "\n")
    print(f"wrote performance.csv, weights_diag.csv, truth.csv, summary.json "
          f"to {outdir}")
    return 0


def _plot_curves(results: dict, path: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    # deterministic element ids so repeated runs are byte-identical
    matplotlib.rcParams["svg.hashsalt"] = "seqtrials"
    import matplotlib.pyplot as plt

    fig, (ax_s, ax_rd) = plt.subplots(1, 2, figsize=(10, 4))
    for method, res in results.items():
        ax_s.step(res.s1.times, res.s1.values, where="post",
                  label=f"{method} always treated")
        ax_s.step(res.s0.times, res.s0.values, where="post", linestyle="--",
                  label=f"{method} never treated")
        ax_rd.plot(res.horizons, res.rd, marker="o", label=method)
        if res.rd_lower is not None:
            ax_rd.fill_between(res.horizons, res.rd_lower, res.rd_upper,
                               alpha=0.2)
    ax_s.set_xlabel("time")
    ax_s.set_ylabel("survival probability")
    ax_s.set_ylim(0, 1.02)
    ax_s.legend(fontsize=7)
    ax_rd.set_xlabel("time horizon")
    ax_rd.set_ylabel("risk difference")
    ax_rd.axhline(0.0, color="grey", linewidth=0.5)
    ax_rd.legend(fontsize=7)
    fig.tight_layout()
    # suppress the creation-date metadata so repeated runs are byte-identical
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def cmd_analyze(args, parser) -> int:
    methods = tuple(args.methods.split(","))
    unknown = set(methods) - set(METHODS)
    if unknown:
        parser.error(f"unknown methods {sorted(unknown)}")
    if args.bootstrap > 0 and args.seed is None:
        parser.error("--seed is required when --bootstrap > 0")
    cohort = load_cohort(args.visits, args.subjects, args.tau_max)
    results: dict[str, MarginalResults] = {}
    for m in methods:
        if args.bootstrap > 0:
            pipeline = "sequential" if m == "seq_trials" else "msm-iptw"
            res = bootstrap_ci(cohort, pipeline,
                               default_msm_spec(m, args.family, args.horizons),
                               default_weight_spec(m), args.bootstrap,
                               args.seed,
                               truncation_percentile=args.truncate)
        else:
            res = analyze_cohort(cohort, m, args.family, args.horizons,
                                 args.truncate)
        results[m] = res
    outdir = _outdir(args)
    lines = ["method,tau,S1,S0,RD,RD_lo,RD_hi"]
    diag_lines = ["method,interval,max,mean,p99,n_rows"]
    for m, res in results.items():
        for row in res.to_csv().splitlines()[1:]:
            lines.append(f"{m},{row}")
        for d in res.diagnostics:
            diag_lines.append(f"{m},{d.interval},{d.max!r},{d.mean!r},"
                              f"{d.p99!r},{d.n_rows}")
    _write(outdir, "curves.csv", "\n".join(lines) + "\n")
    _write(outdir, "weights_diag.csv", "\n".join(diag_lines) + "\n")
    _plot_curves(results, os.path.join(outdir, "curves.svg"))
    print(f"wrote curves.csv, weights_diag.csv, curves.svg to {outdir}")
    return 0


def cmd_truth(args, parser) -> int:
    params = _scenario_params(args, parser)
    truth = generate_truth(params, args.horizons, n_large=args.n_large,
                           rng_seed=args.seed)
    outdir = _outdir(args)
    _write(outdir, "truth.csv", truth.to_csv())
    print(f"wrote truth.csv to {outdir}")
    return 0


def _lattice_report(counts: TreeCounts) -> int:
    for a in (0, 1):
        try:
            msm1, seq1 = np_msm_surv1(counts, a), np_seq_surv1(counts, a)
            msm2, seq2 = np_msm_surv2(counts, a), np_seq_surv2(counts, a)
        except SeqTrialsError as exc:
            print(f"a={a}: {exc}")
            continue
        print(f"a={a}: period-1 IPW {float(msm1)!r} vs trials {float(seq1)!r}; "
              f"period-2 IPW {float(msm2)!r} vs trials {float(seq2)!r}")
    return 0


def cmd_oracle(args, parser) -> int:
    if args.lattice_file:
        with open(args.lattice_file, encoding="utf-8") as fh:
            data = json.load(fh)
        counts = TreeCounts(
            int(data["n"]), np.array(data["n_l0"]), np.array(data["n_l0a0"]),
            np.array(data["n_y1"]), np.array(data["n0_l1"]),
            np.array(data["n0_l1a1"]), np.array(data["n0_y2"]))
        return _lattice_report(counts)
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.lattices):
        counts = random_tree_counts(rng)
        for a in (0, 1):
            worst = max(worst,
                        abs(np_msm_surv1(counts, a) - np_seq_surv1(counts, a)),
                        abs(np_msm_surv2(counts, a) - np_seq_surv2(counts, a)))
        if args.lattices == 1:
            _lattice_report(counts)
    print(f"max absolute discrepancy over {args.lattices} lattices: "
          f"{float(worst)!r}")
    return 0


def _add_common_output(p):
    p.add_argument("--out", default=None,
                   help="output directory (default: $SEQTRIALS_OUTDIR or .)")


def _horizons(text: str):
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad horizons {text!r}")
    if not vals or min(vals) <= 0:
        raise argparse.ArgumentTypeError("horizons must be positive")
    return vals


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqtrials",
        description="Causal survival analysis: MSM-IPTW and sequential trials")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a Monte-Carlo scenario study")
    sim.add_argument("--scenario", type=int, default=1)
    sim.add_argument("--scenario-file", default=None)
    sim.add_argument("--n", type=int, default=1000)
    sim.add_argument("--reps", type=int, default=10)
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--methods", default=",".join(METHODS))
    sim.add_argument("--family", choices=("aalen", "cox"), default="aalen")
    sim.add_argument("--horizons", type=_horizons, default=DEFAULT_HORIZONS)
    sim.add_argument("--truncate", type=float, default=None,
                     help="weight truncation percentile")
    sim.add_argument("--n-truth", type=int, default=1_000_000)
    _add_common_output(sim)
    sim.set_defaults(func=cmd_simulate)

    ana = sub.add_parser("analyze", help="analyze a cohort from CSV files")
    ana.add_argument("--visits", required=True)
    ana.add_argument("--subjects", required=True)
    ana.add_argument("--tau-max", type=float, required=True)
    ana.add_argument("--methods", default="msm_iptw,seq_trials")
    ana.add_argument("--family", choices=("aalen", "cox"), default="aalen")
    ana.add_argument("--horizons", type=_horizons, default=DEFAULT_HORIZONS)
    ana.add_argument("--truncate", type=float, default=None)
    ana.add_argument("--bootstrap", type=int, default=0, metavar="B")
    ana.add_argument("--seed", type=int, default=None)
    _add_common_output(ana)
    ana.set_defaults(func=cmd_analyze)

    tru = sub.add_parser("truth", help="true curves for a scenario")
    tru.add_argument("--scenario", type=int, default=1)
    tru.add_argument("--scenario-file", default=None)
    tru.add_argument("--n-large", type=int, default=1_000_000)
    tru.add_argument("--seed", type=int, required=True)
    tru.add_argument("--horizons", type=_horizons, default=DEFAULT_HORIZONS)
    _add_common_output(tru)
    tru.set_defaults(func=cmd_truth)

    ora = sub.add_parser("oracle", help="2-period equivalence checks")
    ora.add_argument("--lattices", type=int, default=1000)
    ora.add_argument("--seed", type=int, default=12345)
    ora.add_argument("--lattice-file", default=None)
    ora.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except SeqTrialsError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
