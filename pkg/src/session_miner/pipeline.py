"""End-to-end pipeline: logs in, report bundle out.

Stages run in order parse -> sessionize -> measures -> gaming ->
reliability -> validity -> stepwise; each stage's table lands in the
output directory (sessions.csv, panel.csv, reliability.csv, validity.csv,
stepwise.json, aggregate.csv) together with manifest.json recording the
config, input hashes, output hashes and tool version.  Reruns on
identical inputs produce byte-identical outputs; nothing time-dependent
is written.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .canonlog import _finalize, parse_log, read_outcomes
from .config import RunConfig
from .errors import (
    ConfigError,
    InsufficientDataError,
    PerfectFitError,
    SessionMinerError,
    SingularDesignError,
    ZeroVarianceError,
)
from .gaming import detect_gaming, estimate_tendency, monthly_gaming
from .measures import MEASURE_COLUMNS, monthly_panel, session_measures, student_aggregate
from .stats.moments import skewness_and_transform
from .stats.regression import add_one, ols, stepwise

RELIABILITY_COLUMNS = MEASURE_COLUMNS + ["gaming_rate"]
COLLINEARITY_CUTOFF = 0.95


@dataclass
class RunReport:
    outdir: Path
    paths: dict
    summary: dict
    notes: list = field(default_factory=list)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def parse_logs(config: RunConfig, log_paths) -> tuple[pd.DataFrame, pd.DataFrame, list]:
    """Parse every log file (thread pool capped by config.threads) and pool
    the canonical streams.  Returns (transactions, rejects, per-file notes)."""

    def one(path):
        try:
            return parse_log(
                path,
                config.adapter,
                timezone=config.timezone,
                reject_ceiling=config.reject_ceiling,
            )
        except SessionMinerError as exc:
            exc.args = (f"{path}: {exc}",)
            raise

    paths = [str(p) for p in log_paths]
    if len(paths) > 1 and config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(one, paths))
    else:
        results = [one(p) for p in paths]

    tx = _finalize(pd.concat([r.transactions for r in results], ignore_index=True))
    rejects = pd.concat([r.rejects.assign(source=p) for r, p in zip(results, paths)],
                        ignore_index=True)
    notes = [
        f"parsed {p}: {len(r.transactions)} transactions, {len(r.rejects)} rejected"
        for r, p in zip(results, paths)
    ]
    return tx, rejects, notes


def _term_index(month: pd.Series, year_start_month: int) -> pd.Series:
    if not len(month):
        return pd.Series(dtype=np.int64)
    m = month.str.slice(5, 7).astype(int)
    return (m - year_start_month) % 12


def gaming_stage(config: RunConfig, tx: pd.DataFrame):
    """Detect gamed encounters, aggregate monthly, fit the tendency model."""
    labels = detect_gaming(
        tx, config.rules, gap_mins=config.gap_threshold_mins, timezone=config.timezone
    )
    monthly = monthly_gaming(labels)
    model = None
    notes = []
    if len(labels):
        model = estimate_tendency(
            labels, tol=config.tendency_tol, max_iter=config.tendency_max_iter
        )
        if not model.converged:
            notes.append(
                f"gaming tendency model stopped at {model.n_iter} iterations before "
                f"reaching tol={config.tendency_tol}"
            )
    else:
        notes.append("no encounters found; gaming tendency skipped")
    return labels, monthly, model, notes


def reliability_table(panel: pd.DataFrame, columns=RELIABILITY_COLUMNS) -> pd.DataFrame:
    """One decomposition per measure; rows that cannot be estimated carry a
    note instead of numbers."""
    from .stats.gtheory import variance_components

    rows = []
    for col in columns:
        row = {"measure": col}
        try:
            if col not in panel.columns:
                raise InsufficientDataError(f"column {col!r} missing from panel")
            d = variance_components(panel, col)
            row.update(
                n_students=d.n_students,
                n_months=d.n_months,
                sigma2_student=d.sigma2_student,
                sigma2_month=d.sigma2_month,
                sigma2_residual=d.sigma2_residual,
                G=d.G,
                phi=d.phi,
                balanced=d.balanced,
                truncated=d.truncated,
                note="",
            )
        except SessionMinerError as exc:
            row.update(
                n_students=np.nan, n_months=np.nan, sigma2_student=np.nan,
                sigma2_month=np.nan, sigma2_residual=np.nan, G=np.nan, phi=np.nan,
                balanced="", truncated="", note=str(exc),
            )
        rows.append(row)
    return pd.DataFrame(rows)


def _zcol(v: np.ndarray) -> np.ndarray:
    sd = v.std()
    return (v - v.mean()) / sd if sd > 0 else np.zeros_like(v)


def prepare_regression_table(aggregate: pd.DataFrame, outcomes: pd.DataFrame):
    """Join aggregates to outcomes on the roster intersection, transform
    skewed candidates, standardize everything.

    Returns (table, candidates, transforms, dropped) where table holds the
    z-scored outcome, prior and candidate columns under their plain names.
    """
    candidates = [c for c in RELIABILITY_COLUMNS + ["gaming_tendency"] if c in aggregate.columns]
    data = aggregate.merge(outcomes, on="student_id", how="inner")
    dropped = {}

    usable = []
    for col in list(candidates):
        v = data[col].to_numpy(dtype=np.float64)
        if np.isnan(v).all():
            dropped[col] = "no observed values"
        else:
            usable.append(col)
    keep = ["student_id", "prior_score", "final_score"] + usable
    data = data[keep].dropna().reset_index(drop=True)

    transforms = {}
    table = pd.DataFrame({"student_id": data["student_id"]})
    for col in ("prior_score", "final_score"):
        table[col] = _zcol(data[col].to_numpy(dtype=np.float64))
    final_candidates = []
    for col in usable:
        v = data[col].to_numpy(dtype=np.float64)
        if v.std() == 0:
            dropped[col] = "constant across students"
            continue
        try:
            rep = skewness_and_transform(v, policy="auto")
            v, transforms[col] = rep.values, rep.transform
        except (ConfigError, ZeroVarianceError, InsufficientDataError):
            transforms[col] = "none"
        table[col] = _zcol(np.asarray(v, dtype=np.float64))
        final_candidates.append(col)
    return table, final_candidates, transforms, dropped


def _collinearity_filter(table: pd.DataFrame, candidates, baseline):
    """Among near-duplicate candidate pairs (|r| >= 0.95) keep the one whose
    single-predictor model has the lower BIC, then greedily drop any candidate
    that is an exact linear combination of the predictors kept before it so the
    backward search starts from a full-rank design."""
    solo_bic = {}
    for col in candidates:
        try:
            solo_bic[col] = add_one(table, baseline, col)[0].bic
        except (SingularDesignError, PerfectFitError, InsufficientDataError):
            solo_bic[col] = np.inf
    kept = list(candidates)
    dropped = {}
    i = 0
    while i < len(kept):
        j = i + 1
        while j < len(kept):
            a, b = kept[i], kept[j]
            r = np.corrcoef(table[a], table[b])[0, 1]
            if abs(r) >= COLLINEARITY_CUTOFF:
                loser = a if solo_bic[a] > solo_bic[b] else b
                winner = b if loser == a else a
                dropped[loser] = f"|r|={abs(r):.3f} with {winner}"
                kept.remove(loser)
                if loser == a:
                    j = i + 1
                    continue
            else:
                j += 1
        i += 1

    design = [np.ones(len(table))]
    design += [table[c].to_numpy(float) for c in baseline.predictors]
    full_rank = set()
    for col in sorted(kept, key=lambda c: (solo_bic[c], kept.index(c))):
        x = table[col].to_numpy(float)
        A = np.column_stack(design)
        resid = x - A @ np.linalg.lstsq(A, x, rcond=None)[0]
        if float(resid @ resid) > 1e-10 * max(float(x @ x), 1.0):
            design.append(x)
            full_rank.add(col)
        else:
            dropped[col] = "linearly dependent on kept predictors"
    kept = [c for c in kept if c in full_rank]
    return kept, dropped


def validity_stage(aggregate: pd.DataFrame, outcomes: pd.DataFrame):
    """Per-candidate incremental validity over the prior-score baseline,
    then stepwise searches in both directions."""
    table, candidates, transforms, dropped = prepare_regression_table(aggregate, outcomes)
    notes = []
    if len(table) < 5 or not candidates:
        notes.append(f"validity skipped: {len(table)} usable students")
        empty = pd.DataFrame(
            columns=["model", "n", "beta", "p_value", "r2", "bic", "delta_bic", "band", "transform"]
        )
        return empty, {"skipped": notes[-1], "dropped": dropped}, notes

    baseline = ols(table, "final_score", ("prior_score",))
    rows = [
        {
            "model": "baseline",
            "n": baseline.n,
            "beta": baseline.coefficients["prior_score"],
            "p_value": baseline.p_values["prior_score"],
            "r2": baseline.r2,
            "bic": baseline.bic,
            "delta_bic": np.nan,
            "band": "",
            "transform": "",
        }
    ]
    for col in candidates:
        row = {"model": col, "transform": transforms.get(col, "none")}
        try:
            fit, verdict = add_one(table, baseline, col)
            row.update(
                n=fit.n,
                beta=fit.coefficients[col],
                p_value=fit.p_values[col],
                r2=fit.r2,
                bic=fit.bic,
                delta_bic=verdict.delta_bic,
                band=verdict.band,
            )
        except SessionMinerError as exc:
            row.update(n=len(table), beta=np.nan, p_value=np.nan, r2=np.nan,
                       bic=np.nan, delta_bic=np.nan, band=f"error: {exc}")
        rows.append(row)
    validity = pd.DataFrame(rows)

    kept, collinear = _collinearity_filter(table, candidates, baseline)
    dropped.update(collinear)
    searches = {}
    for direction in ("forward", "backward"):
        try:
            result = stepwise(
                table, "final_score", kept, direction=direction, always=("prior_score",)
            )
            searches[direction] = result.report()
        except SessionMinerError as exc:
            searches[direction] = {"error": str(exc)}
            notes.append(f"{direction} stepwise failed: {exc}")
    stepwise_report = {
        "outcome": "final_score",
        "always": ["prior_score"],
        "candidates": kept,
        "dropped": dropped,
        "transforms": transforms,
        "n": int(len(table)),
        "forward": searches["forward"],
        "backward": searches["backward"],
    }
    return validity, stepwise_report, notes


def _iso(ms: pd.Series) -> np.ndarray:
    if not len(ms):
        return np.array([], dtype=object)
    return np.char.add(
        np.datetime_as_string(ms.to_numpy().astype("datetime64[ms]"), unit="ms"), "Z"
    )


def sessions_table(sessions: pd.DataFrame) -> pd.DataFrame:
    """Report-ready sessions frame with ISO start/end columns."""
    out = sessions.copy()
    out["start"] = _iso(out["start_ms"]) if len(out) else []
    out["end"] = _iso(out["end_ms"]) if len(out) else []
    cols = ["class_id", "session_index", "kind", "month", "start", "end",
            "size", "n_events", "session_length_mins"]
    if not len(out):
        return pd.DataFrame(columns=cols)
    return out[cols]


def run_pipeline(config: RunConfig, log_paths, outcomes_path=None) -> RunReport:
    outdir = Path(config.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    notes = []

    tx, rejects, parse_notes = parse_logs(config, log_paths)
    notes.extend(parse_notes)

    measures, sessions = session_measures(
        tx,
        gap_mins=config.gap_threshold_mins,
        idle_mins=config.idle_mins,
        min_class_size=config.min_active_students,
        school_start=config.school_start,
        school_end=config.school_end,
        timezone=config.timezone,
    )
    panel = monthly_panel(measures, sessions)
    panel.insert(2, "term_index", _term_index(panel["month"], config.year_start_month))

    labels, monthly, model, gaming_notes = gaming_stage(config, tx)
    notes.extend(gaming_notes)
    panel = panel.merge(monthly, on=["student_id", "month"], how="left")

    reliability = reliability_table(panel)

    aggregate = student_aggregate(panel, RELIABILITY_COLUMNS) if len(panel) else pd.DataFrame(
        columns=["student_id"] + RELIABILITY_COLUMNS
    )
    if model is not None:
        aggregate["gaming_tendency"] = aggregate["student_id"].map(model.tendency)

    if outcomes_path is not None:
        outcomes = read_outcomes(outcomes_path)
        validity, stepwise_report, validity_notes = validity_stage(aggregate, outcomes)
        notes.extend(validity_notes)
    else:
        validity = pd.DataFrame(
            columns=["model", "n", "beta", "p_value", "r2", "bic", "delta_bic", "band", "transform"]
        )
        stepwise_report = {"skipped": "no outcomes file supplied"}
        notes.append("no outcomes file supplied; validity and stepwise skipped")

    sessions_out = sessions_table(sessions)

    paths = {
        "sessions": outdir / "sessions.csv",
        "panel": outdir / "panel.csv",
        "reliability": outdir / "reliability.csv",
        "validity": outdir / "validity.csv",
        "aggregate": outdir / "aggregate.csv",
        "stepwise": outdir / "stepwise.json",
    }
    sessions_out.to_csv(paths["sessions"], index=False)
    panel.to_csv(paths["panel"], index=False)
    reliability.to_csv(paths["reliability"], index=False)
    validity.to_csv(paths["validity"], index=False)
    aggregate.to_csv(paths["aggregate"], index=False)
    with open(paths["stepwise"], "w") as fh:
        json.dump(stepwise_report, fh, indent=1, sort_keys=True)
        fh.write("\n")

    if config.figures:
        from . import figures

        fig_dir = outdir / "figures"
        fig_dir.mkdir(exist_ok=True)
        paths["fig_reliability"] = figures.render_reliability(
            reliability, fig_dir / "reliability.png"
        )
        paths["fig_validity"] = figures.render_validity(validity, fig_dir / "validity.png")
        paths["fig_sessions"] = figures.render_sessions(sessions_out, fig_dir / "sessions.png")

    summary = {
        "n_transactions": int(len(tx)),
        "n_rejected": int(len(rejects)),
        "n_sessions": int(len(sessions)),
        "n_classwork_sessions": int((sessions["kind"] == "classwork").sum()) if len(sessions) else 0,
        "n_students": int(tx["student_id"].nunique()) if len(tx) else 0,
        "n_panel_rows": int(len(panel)),
        "n_encounters": int(len(labels)),
        "gaming_converged": bool(model.converged) if model is not None else None,
        "notes": notes,
    }
    manifest = {
        "tool": "session-miner",
        "version": __version__,
        "config": config.as_dict(),
        "inputs": {
            str(p): _sha256(Path(p))
            for p in list(map(str, log_paths)) + ([str(outcomes_path)] if outcomes_path else [])
        },
        "outputs": {p.name: _sha256(p) for p in sorted(paths.values())},
        "summary": summary,
    }
    manifest_path = outdir / "manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    paths["manifest"] = manifest_path
    return RunReport(outdir=outdir, paths=paths, summary=summary, notes=notes)
