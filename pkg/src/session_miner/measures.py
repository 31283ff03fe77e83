"""Time-based engagement measures.

Per classwork session, a student who shows up owns a slice of the session
envelope: the minutes before their first event (delayed start), between
first and last event (session time), and after their last event (early
stop).  The three always sum to the session length.  Idle time sums the
within-slice gaps above the idle threshold.  Each of the four also has a
relative variant: a z-score against the other students in the same
session, which removes the session's own geometry (a late class start
inflates everyone's delayed start alike).

Monthly aggregation produces one row per (student, month) with twelve
measures; total_time_on_task and usage_time_ratio also count homework and
other out-of-class activity, so the ratio can exceed 1.
"""

from __future__ import annotations

from zoneinfo import ZoneInfo

import numpy as np
import pandas as pd

from .sessionize import (
    DEFAULT_GAP_MINS,
    DEFAULT_IDLE_MINS,
    DEFAULT_MIN_CLASS_SIZE,
    assign_sessions,
    classify_sessions,
    resolve_idle_threshold,
    slices_of_assigned,
)

#: Within-session measures, each with a within-session relative variant.
SESSION_MEASURES = ["delayed_start", "session_time", "early_stop", "idle_time"]

#: The full monthly measure set, in report order.
MEASURE_COLUMNS = [
    "delayed_start",
    "relative_delayed_start",
    "session_time",
    "relative_session_time",
    "early_stop",
    "relative_early_stop",
    "idle_time",
    "relative_idle_time",
    "total_time_on_task",
    "usage_time_ratio",
    "relative_usage_time_ratio",
    "attendance",
]


def month_key(ts_ms: pd.Series, timezone: str) -> pd.Series:
    dt = pd.to_datetime(ts_ms, unit="ms", utc=True).dt.tz_convert(ZoneInfo(timezone))
    return dt.dt.year.astype(str) + "-" + dt.dt.month.astype(str).str.zfill(2)


def _zscore_within(df: pd.DataFrame, keys: list[str], col: str) -> np.ndarray:
    """Population z within groups; a degenerate group (sd 0) maps to 0."""
    g = df.groupby(keys, sort=False)[col]
    mu = g.transform("mean")
    sd = g.transform("std", ddof=0)
    z = (df[col] - mu) / sd
    return np.where(sd.to_numpy() > 0, z.to_numpy(), 0.0)


def session_measures(
    transactions: pd.DataFrame,
    *,
    gap_mins: float = DEFAULT_GAP_MINS,
    idle_mins: float | str = DEFAULT_IDLE_MINS,
    min_class_size: int = DEFAULT_MIN_CLASS_SIZE,
    school_start: str = "07:00",
    school_end: str = "15:00",
    timezone: str = "UTC",
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Per-student per-session measures.

    Returns (measures, sessions).  measures has one row per
    (class_id, session_index, student_id) across sessions of every kind,
    with the four slice measures, their within-session relative variants,
    the session kind, month and session_length_mins.  Downstream monthly
    aggregation restricts to classwork where the measure demands it.
    """
    idle = resolve_idle_threshold(transactions, idle_mins)
    tx, sessions = assign_sessions(transactions, gap_mins=gap_mins, timezone=timezone)
    sessions = classify_sessions(
        sessions,
        min_class_size=min_class_size,
        school_start=school_start,
        school_end=school_end,
        timezone=timezone,
    )
    sessions = sessions.copy()
    sessions["month"] = (
        month_key(sessions["start_ms"], timezone) if len(sessions) else pd.Series(dtype=str)
    )
    sessions["session_length_mins"] = (sessions["end_ms"] - sessions["start_ms"]) / 60000.0

    slices = slices_of_assigned(tx, idle)
    m = slices.merge(
        sessions[["class_id", "session_index", "kind", "month", "start_ms", "end_ms", "session_length_mins"]],
        on=["class_id", "session_index"],
        how="left",
    )
    m["delayed_start"] = (m["first_ms"] - m["start_ms"]) / 60000.0
    m["session_time"] = (m["last_ms"] - m["first_ms"]) / 60000.0
    m["early_stop"] = (m["end_ms"] - m["last_ms"]) / 60000.0
    m["idle_time"] = m["idle_mins"]
    for col in SESSION_MEASURES:
        m["relative_" + col] = (
            _zscore_within(m, ["class_id", "session_index"], col) if len(m) else np.array([])
        )
    keep = (
        ["class_id", "session_index", "student_id", "kind", "month", "session_length_mins", "n_events"]
        + SESSION_MEASURES
        + ["relative_" + c for c in SESSION_MEASURES]
    )
    return m[keep], sessions


def monthly_panel(measures: pd.DataFrame, sessions: pd.DataFrame) -> pd.DataFrame:
    """Aggregate per-session measures to one row per (student, month).

    A row exists for every month in which any class the student belongs to
    (appears in at all) ran at least one classwork session.  A month the
    student sat out entirely keeps its row: attendance and total time are
    0, the per-session means are missing.
    """
    cols = ["student_id", "month"] + MEASURE_COLUMNS
    if not len(measures):
        return pd.DataFrame(columns=cols)

    members = measures[["student_id", "class_id"]].drop_duplicates()
    cw_sessions = sessions[sessions["kind"] == "classwork"]
    class_minutes = (
        cw_sessions.groupby(["class_id", "month"], sort=False)["session_length_mins"]
        .sum()
        .reset_index(name="class_minutes")
    )
    # Spine: (student, month, class, class share of the denominator).
    spine = members.merge(class_minutes, on="class_id")
    denom = spine.groupby(["student_id", "month"], sort=False)["class_minutes"].sum()
    panel = denom.reset_index().rename(columns={"class_minutes": "_denom"})

    cw = measures[measures["kind"] == "classwork"]
    per_session_cols = SESSION_MEASURES + ["relative_" + c for c in SESSION_MEASURES]
    means = cw.groupby(["student_id", "month"], sort=False)[per_session_cols].mean().reset_index()
    attendance = (
        cw.groupby(["student_id", "month"], sort=False)
        .size()
        .reset_index(name="attendance")
    )
    total = (
        measures.groupby(["student_id", "month"], sort=False)["session_time"]
        .sum()
        .reset_index(name="total_time_on_task")
    )

    panel = panel.merge(means, on=["student_id", "month"], how="left")
    panel = panel.merge(attendance, on=["student_id", "month"], how="left")
    panel = panel.merge(total, on=["student_id", "month"], how="left")
    panel["attendance"] = panel["attendance"].fillna(0).astype(np.int64)
    panel["total_time_on_task"] = panel["total_time_on_task"].fillna(0.0)
    panel["usage_time_ratio"] = panel["total_time_on_task"] / panel["_denom"]

    # Relative usage ratio: z against classmates in the same month; a
    # student in several classes averages their per-class z-scores.
    by_class = spine.merge(
        panel[["student_id", "month", "usage_time_ratio"]], on=["student_id", "month"]
    )
    by_class["_z"] = _zscore_within(by_class, ["class_id", "month"], "usage_time_ratio")
    rel = by_class.groupby(["student_id", "month"], sort=False)["_z"].mean().reset_index()
    panel = panel.merge(rel.rename(columns={"_z": "relative_usage_time_ratio"}),
                        on=["student_id", "month"], how="left")

    panel = panel.drop(columns=["_denom"])
    return panel[cols].sort_values(["student_id", "month"], kind="mergesort").reset_index(drop=True)


def student_aggregate(panel: pd.DataFrame, measure_columns: list[str] | None = None) -> pd.DataFrame:
    """Per-student means across months, plus standardized *_z copies.

    Missing months are skipped in the mean.  The _z columns standardize
    across students with the population SD; a degenerate column becomes 0.
    """
    measure_columns = list(measure_columns or MEASURE_COLUMNS)
    g = panel.groupby("student_id", sort=True)
    agg = g[measure_columns].mean()
    agg["n_months"] = g.size()
    for col in measure_columns:
        v = agg[col].to_numpy(dtype=np.float64)
        ok = ~np.isnan(v)
        sd = v[ok].std() if ok.any() else 0.0
        z = np.zeros_like(v)
        if sd > 0:
            z[ok] = (v[ok] - v[ok].mean()) / sd
        z[~ok] = np.nan
        agg[col + "_z"] = z
    return agg.reset_index()
