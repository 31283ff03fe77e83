"""Command-line interface.

Subcommands mirror the pipeline stages (parse, sessions, sweep, measures,
gaming, reliability, validity, stepwise) plus the orchestrated `run` and
the synthetic-cohort `synth`.  Configuration comes from a key=value file
(--config, or the SESSION_MINER_CONFIG env var) overridden by --set pairs
and dedicated flags.  Error classes map to distinct exit codes.
"""

from __future__ import annotations

import argparse
import sys

import pandas as pd

from . import __version__
from .config import load_run_config
from .errors import (
    ConfigError,
    DegenerateVarianceError,
    InfiniteVIFError,
    InsufficientDataError,
    InvalidSpecError,
    MalformedHeaderError,
    PerfectFitError,
    RejectRateExceededError,
    SessionMinerError,
    SingularDesignError,
    UnknownAdapterError,
    UnknownRuleFieldError,
    ZeroVarianceError,
)

EXIT_CODES = {
    ConfigError: 2,
    InvalidSpecError: 2,
    UnknownRuleFieldError: 2,
    UnknownAdapterError: 3,
    MalformedHeaderError: 3,
    RejectRateExceededError: 3,
    InsufficientDataError: 4,
    DegenerateVarianceError: 4,
    ZeroVarianceError: 4,
    SingularDesignError: 5,
    PerfectFitError: 5,
    InfiniteVIFError: 5,
}


def _exit_code(exc: Exception) -> int:
    for cls, code in EXIT_CODES.items():
        if isinstance(exc, cls):
            return code
    if isinstance(exc, SessionMinerError):
        return 1
    if isinstance(exc, OSError):
        return 6
    return 1


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value config file (default: $SESSION_MINER_CONFIG)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--adapter", help="log format adapter")
    p.add_argument("--timezone", help="school timezone, e.g. America/New_York")
    p.add_argument("--gap", type=float, help="session gap threshold in minutes")


def _config_from(args) -> "RunConfig":
    overrides = {}
    for pair in args.set:
        if "=" not in pair:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    if getattr(args, "adapter", None):
        overrides["adapter"] = args.adapter
    if getattr(args, "timezone", None):
        overrides["timezone"] = args.timezone
    if getattr(args, "gap", None) is not None:
        overrides["gap_threshold_mins"] = args.gap
    if getattr(args, "out_dir", None):
        overrides["outdir"] = args.out_dir
    if getattr(args, "no_figures", False):
        overrides["figures"] = False
    return load_run_config(args.config, overrides)


def _parse_pooled(config, logs):
    from .pipeline import parse_logs

    return parse_logs(config, logs)


def cmd_parse(args) -> int:
    from .canonlog import write_canonical

    config = _config_from(args)
    tx, rejects, notes = _parse_pooled(config, args.logs)
    write_canonical(tx, args.out)
    if args.rejects:
        rejects.to_csv(args.rejects, index=False)
    for note in notes:
        print(note)
    print(f"wrote {args.out}: {len(tx)} transactions from {len(args.logs)} file(s)")
    return 0


def cmd_sessions(args) -> int:
    from .measures import session_measures
    from .pipeline import sessions_table

    config = _config_from(args)
    tx, _, _ = _parse_pooled(config, args.logs)
    _, sessions = session_measures(
        tx,
        gap_mins=config.gap_threshold_mins,
        idle_mins=config.idle_mins,
        min_class_size=config.min_active_students,
        school_start=config.school_start,
        school_end=config.school_end,
        timezone=config.timezone,
    )
    sessions_table(sessions).to_csv(args.out, index=False)
    n_cw = int((sessions["kind"] == "classwork").sum()) if len(sessions) else 0
    print(f"wrote {args.out}: {len(sessions)} sessions ({n_cw} classwork)")
    return 0


def cmd_sweep(args) -> int:
    from .sessionize import threshold_sweep

    config = _config_from(args)
    tx, _, _ = _parse_pooled(config, args.logs)
    thresholds = [float(t) for t in args.thresholds.split(",")] if args.thresholds else None
    kwargs = {"timezone": config.timezone}
    if thresholds is not None:
        kwargs["thresholds"] = thresholds
    sweep = threshold_sweep(tx, **kwargs)
    sweep.to_csv(args.out, index=False)
    if args.fig:
        from .figures import render_sweep

        render_sweep(sweep, args.fig)
        print(f"wrote {args.fig}")
    print(f"wrote {args.out}: {len(sweep)} thresholds")
    return 0


def cmd_measures(args) -> int:
    from .measures import monthly_panel, session_measures
    from .pipeline import _term_index

    config = _config_from(args)
    tx, _, _ = _parse_pooled(config, args.logs)
    measures, sessions = session_measures(
        tx,
        gap_mins=config.gap_threshold_mins,
        idle_mins=config.idle_mins,
        min_class_size=config.min_active_students,
        school_start=config.school_start,
        school_end=config.school_end,
        timezone=config.timezone,
    )
    if args.slices:
        measures.to_csv(args.slices, index=False)
        print(f"wrote {args.slices}: {len(measures)} student-session slices")
    panel = monthly_panel(measures, sessions)
    panel.insert(2, "term_index", _term_index(panel["month"], config.year_start_month))
    panel.to_csv(args.panel, index=False)
    print(f"wrote {args.panel}: {len(panel)} student-month rows")
    return 0


def cmd_gaming(args) -> int:
    from .gaming import detect_gaming, monthly_gaming
    from .pipeline import gaming_stage

    config = _config_from(args)
    if args.rules:
        with open(args.rules) as fh:
            config.rules = fh.read()
    tx, _, _ = _parse_pooled(config, args.logs)
    labels, monthly, model, notes = gaming_stage(config, tx)
    labels.to_csv(args.labels, index=False)
    print(f"wrote {args.labels}: {len(labels)} encounters, {int(labels['gamed'].sum())} gamed")
    if args.monthly:
        monthly.to_csv(args.monthly, index=False)
        print(f"wrote {args.monthly}: {len(monthly)} student-months")
    if args.tendency:
        if model is None:
            pd.DataFrame(columns=["student_id", "tendency", "se"]).to_csv(
                args.tendency, index=False
            )
        else:
            pd.DataFrame(
                {
                    "student_id": model.tendency.index,
                    "tendency": model.tendency.to_numpy(),
                    "se": model.se["student"].to_numpy(),
                }
            ).to_csv(args.tendency, index=False)
        print(f"wrote {args.tendency}")
    for note in notes:
        print(note)
    return 0


def _read_panel(path) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"student_id": str, "month": str})


def cmd_reliability(args) -> int:
    from .measures import MEASURE_COLUMNS
    from .pipeline import reliability_table

    panel = _read_panel(args.panel)
    columns = args.measures.split(",") if args.measures else [
        c for c in MEASURE_COLUMNS + ["gaming_rate"] if c in panel.columns
    ]
    table = reliability_table(panel, columns)
    table.to_csv(args.out, index=False)
    print(f"wrote {args.out}: {len(table)} measures")
    return 0


def _aggregate_from_panel(panel: pd.DataFrame) -> pd.DataFrame:
    from .measures import MEASURE_COLUMNS, student_aggregate

    cols = [c for c in MEASURE_COLUMNS + ["gaming_rate"] if c in panel.columns]
    return student_aggregate(panel, cols)


def cmd_validity(args) -> int:
    from .canonlog import read_outcomes
    from .pipeline import validity_stage

    panel = _read_panel(args.panel)
    outcomes = read_outcomes(args.outcomes)
    validity, _, notes = validity_stage(_aggregate_from_panel(panel), outcomes)
    validity.to_csv(args.out, index=False)
    for note in notes:
        print(note)
    print(f"wrote {args.out}: {max(len(validity) - 1, 0)} candidates")
    return 0


def cmd_stepwise(args) -> int:
    import json

    from .canonlog import read_outcomes
    from .pipeline import validity_stage

    panel = _read_panel(args.panel)
    outcomes = read_outcomes(args.outcomes)
    _, report, notes = validity_stage(_aggregate_from_panel(panel), outcomes)
    with open(args.out, "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
    for note in notes:
        print(note)
    print(f"wrote {args.out}")
    return 0


def cmd_run(args) -> int:
    from .pipeline import run_pipeline

    config = _config_from(args)
    if args.rules:
        with open(args.rules) as fh:
            config.rules = fh.read()
    report = run_pipeline(config, args.logs, outcomes_path=args.outcomes)
    for note in report.notes:
        print(note)
    s = report.summary
    print(
        f"run complete: {s['n_transactions']} transactions -> "
        f"{s['n_sessions']} sessions ({s['n_classwork_sessions']} classwork), "
        f"{s['n_panel_rows']} panel rows, {s['n_encounters']} encounters"
    )
    print(f"report bundle in {report.outdir}")
    return 0


def cmd_synth(args) -> int:
    from .synth import CohortSpec, generate_cohort, parse_cohort_spec, write_bundle

    spec = CohortSpec()
    if args.spec:
        with open(args.spec) as fh:
            spec = parse_cohort_spec(fh.read())
    if args.set:
        spec = parse_cohort_spec("\n".join(args.set), base=spec)
    if args.seed is not None:
        spec.seed = args.seed
    bundle = generate_cohort(spec)
    paths = write_bundle(bundle, args.out_dir, stem=args.stem)
    print(
        f"wrote {paths['log']}: {len(bundle.transactions)} transactions, "
        f"{len(bundle.outcomes)} students"
    )
    print(f"wrote {paths['outcomes']}")
    print(f"wrote {paths['ground_truth']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="session-miner",
        description="Mine learning-platform logs into sessions, engagement "
        "measures, gaming labels and reliability/validity reports.",
    )
    parser.add_argument("--version", action="version", version=f"session-miner {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="normalize raw logs into the canonical stream")
    _add_config_flags(p)
    p.add_argument("logs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--rejects", help="also write rejected rows here")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("sessions", help="infer and classify class sessions")
    _add_config_flags(p)
    p.add_argument("logs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sessions)

    p = sub.add_parser("sweep", help="session counts and lengths across gap thresholds")
    _add_config_flags(p)
    p.add_argument("logs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--thresholds", help="comma-separated minutes, e.g. 2,5,7.5,10,20,30")
    p.add_argument("--fig", help="also render the sweep figure to this PNG")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("measures", help="per-slice measures and the monthly panel")
    _add_config_flags(p)
    p.add_argument("logs", nargs="+")
    p.add_argument("--panel", required=True)
    p.add_argument("--slices", help="also write per-student-session measures here")
    p.set_defaults(func=cmd_measures)

    p = sub.add_parser("gaming", help="label gamed encounters and estimate tendency")
    _add_config_flags(p)
    p.add_argument("logs", nargs="+")
    p.add_argument("--labels", required=True)
    p.add_argument("--rules", help="file with one gaming rule per line")
    p.add_argument("--monthly", help="write per-student monthly gaming rates here")
    p.add_argument("--tendency", help="write per-student latent tendencies here")
    p.set_defaults(func=cmd_gaming)

    p = sub.add_parser("reliability", help="variance components and G/phi per measure")
    p.add_argument("--panel", required=True, help="panel.csv from `measures` or `run`")
    p.add_argument("--measures", help="comma-separated measure columns (default: all)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reliability)

    p = sub.add_parser("validity", help="incremental validity over the prior-score baseline")
    p.add_argument("--panel", required=True)
    p.add_argument("--outcomes", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_validity)

    p = sub.add_parser("stepwise", help="forward/backward BIC stepwise search")
    p.add_argument("--panel", required=True)
    p.add_argument("--outcomes", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stepwise)

    p = sub.add_parser("run", help="full pipeline with a reproducible manifest")
    _add_config_flags(p)
    p.add_argument("logs", nargs="+")
    p.add_argument("--outcomes")
    p.add_argument("--out-dir", dest="out_dir", help="report directory (config: outdir)")
    p.add_argument("--rules", help="file with one gaming rule per line")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="generate a synthetic cohort with ground truth")
    p.add_argument("--spec", help="key=value cohort spec file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one spec key (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--stem", default="cohort")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # map to documented exit codes
        if isinstance(exc, (SessionMinerError, OSError)):
            print(f"error: {exc}", file=sys.stderr)
            return _exit_code(exc)
        raise


if __name__ == "__main__":
    sys.exit(main())
