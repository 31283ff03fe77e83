"""Infer class sessions from the pooled per-class event stream.

A class's events are pooled across students and ordered by time; a new
session starts whenever the gap to the previous event exceeds the
threshold (strictly greater, ties stay in the same session) or the local
calendar day changes.  Sessions are then classified as classwork (enough
distinct students), homework (small and started outside school hours), or
non_classwork (small during school hours).
"""

from __future__ import annotations

from dataclasses import dataclass
from zoneinfo import ZoneInfo

import numpy as np
import pandas as pd

from .errors import ConfigError

SESSION_KINDS = ("classwork", "homework", "non_classwork")

DEFAULT_GAP_MINS = 7.5
DEFAULT_MIN_CLASS_SIZE = 5
DEFAULT_IDLE_MINS = 2.0
SWEEP_THRESHOLDS = (2.0, 5.0, 7.5, 10.0, 20.0, 30.0)


@dataclass(frozen=True)
class Session:
    class_id: str
    session_index: int  # 1-based, in time order within the class
    kind: str
    start_ms: int
    end_ms: int
    size: int  # distinct students active in the session

    @property
    def length_mins(self) -> float:
        return (self.end_ms - self.start_ms) / 60000.0


def _local_day(ts_ms: pd.Series, timezone: str) -> np.ndarray:
    dt = pd.to_datetime(ts_ms, unit="ms", utc=True).dt.tz_convert(ZoneInfo(timezone))
    return dt.dt.normalize().to_numpy()


def assign_sessions(
    transactions: pd.DataFrame, *, gap_mins: float = DEFAULT_GAP_MINS, timezone: str = "UTC"
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Label every transaction with its session and summarize the sessions.

    Returns (transactions + [session_index] columns, sessions frame with
    class_id, session_index, start_ms, end_ms, size, n_events).  Input must
    already be in canonical order (class_id, ts_ms).
    """
    if gap_mins <= 0:
        raise ConfigError(f"session gap threshold must be positive, got {gap_mins}")
    tx = transactions.reset_index(drop=True)
    if not len(tx):
        empty = pd.DataFrame(
            columns=["class_id", "session_index", "start_ms", "end_ms", "size", "n_events"]
        )
        out = tx.copy()
        out["session_index"] = pd.Series(dtype=np.int64)
        return out, empty

    ts = tx["ts_ms"].to_numpy()
    cls = tx["class_id"].to_numpy()
    day = _local_day(tx["ts_ms"], timezone)
    gap_ms = gap_mins * 60000.0

    new = np.ones(len(tx), dtype=bool)
    new[1:] = (cls[1:] != cls[:-1]) | ((ts[1:] - ts[:-1]) > gap_ms) | (day[1:] != day[:-1])
    sid = np.cumsum(new) - 1

    out = tx.copy()
    out["_sid"] = sid
    grouped = out.groupby("_sid", sort=True)
    sessions = grouped.agg(
        class_id=("class_id", "first"),
        start_ms=("ts_ms", "min"),
        end_ms=("ts_ms", "max"),
        size=("student_id", "nunique"),
        n_events=("ts_ms", "size"),
    ).reset_index(drop=True)
    sessions["session_index"] = sessions.groupby("class_id", sort=False).cumcount() + 1
    sessions = sessions[["class_id", "session_index", "start_ms", "end_ms", "size", "n_events"]]

    out["session_index"] = sessions["session_index"].to_numpy()[sid]
    out = out.drop(columns=["_sid"])
    return out, sessions


def infer_sessions(
    transactions: pd.DataFrame, *, gap_mins: float = DEFAULT_GAP_MINS, timezone: str = "UTC"
) -> pd.DataFrame:
    return assign_sessions(transactions, gap_mins=gap_mins, timezone=timezone)[1]


def _minutes_of_day(clock: str) -> int:
    try:
        hh, mm = clock.split(":")
        v = int(hh) * 60 + int(mm)
    except ValueError as e:
        raise ConfigError(f"expected HH:MM clock time, got {clock!r}") from e
    if not 0 <= v < 24 * 60:
        raise ConfigError(f"clock time out of range: {clock!r}")
    return v


def classify_sessions(
    sessions: pd.DataFrame,
    *,
    min_class_size: int = DEFAULT_MIN_CLASS_SIZE,
    school_start: str = "07:00",
    school_end: str = "15:00",
    timezone: str = "UTC",
) -> pd.DataFrame:
    """Add a 'kind' column.

    classwork: at least min_class_size distinct students.  Otherwise the
    session start decides: outside [school_start, school_end) local time is
    homework, inside is non_classwork.
    """
    lo = _minutes_of_day(school_start)
    hi = _minutes_of_day(school_end)
    out = sessions.copy()
    if not len(out):
        out["kind"] = pd.Series(dtype=str)
        return out
    start = pd.to_datetime(out["start_ms"], unit="ms", utc=True).dt.tz_convert(ZoneInfo(timezone))
    mins = start.dt.hour * 60 + start.dt.minute
    in_school = (mins >= lo) & (mins < hi)
    kind = np.where(
        out["size"] >= min_class_size, "classwork", np.where(in_school, "non_classwork", "homework")
    )
    out["kind"] = kind
    return out


def auto_idle_threshold(transactions: pd.DataFrame) -> float:
    """Idle threshold in minutes: mean + 3 SD of the duration distribution."""
    d = transactions["duration_s"].to_numpy(dtype=np.float64) / 60.0
    if not len(d):
        return DEFAULT_IDLE_MINS
    return float(d.mean() + 3.0 * d.std())


def resolve_idle_threshold(transactions: pd.DataFrame, idle_mins: float | str) -> float:
    if idle_mins == "auto":
        idle_mins = auto_idle_threshold(transactions)
    idle_mins = float(idle_mins)
    if idle_mins <= 0:
        raise ConfigError(f"idle threshold must be positive, got {idle_mins}")
    return idle_mins


def slice_students(
    transactions: pd.DataFrame,
    *,
    gap_mins: float = DEFAULT_GAP_MINS,
    idle_mins: float | str = DEFAULT_IDLE_MINS,
    timezone: str = "UTC",
) -> pd.DataFrame:
    """Per-student slices of each session.

    Returns one row per (class_id, session_index, student_id) with first_ms,
    last_ms, n_events and idle_mins: the sum of within-slice gaps between
    the student's consecutive events that exceed the idle threshold, the
    full gap counted.  idle_mins="auto" derives the threshold from the
    duration distribution.
    """
    idle_mins = resolve_idle_threshold(transactions, idle_mins)
    tx, sessions = assign_sessions(transactions, gap_mins=gap_mins, timezone=timezone)
    return slices_of_assigned(tx, idle_mins)


def slices_of_assigned(tx: pd.DataFrame, idle_mins: float) -> pd.DataFrame:
    """slice_students for a stream already labeled with session_index."""
    if not len(tx):
        return pd.DataFrame(
            columns=["class_id", "session_index", "student_id", "first_ms", "last_ms", "n_events", "idle_mins"]
        )

    # One int key per (session, student) so the heavy groupby runs on int64.
    sid = pd.factorize(tx["class_id"].astype(str) + "\x1f" + tx["session_index"].astype(str))[0]
    stu = pd.factorize(tx["student_id"])[0]
    key = sid.astype(np.int64) * (stu.max() + 1) + stu

    order = np.lexsort((tx["ts_ms"].to_numpy(), key))
    k = key[order]
    t = tx["ts_ms"].to_numpy()[order]
    same = np.zeros(len(k), dtype=bool)
    same[1:] = k[1:] == k[:-1]
    gaps = np.where(same, np.diff(t, prepend=t[0]), 0) / 60000.0
    idle = np.where(gaps > idle_mins, gaps, 0.0)

    g = pd.DataFrame(
        {
            "key": k,
            "class_id": tx["class_id"].to_numpy()[order],
            "session_index": tx["session_index"].to_numpy()[order],
            "student_id": tx["student_id"].to_numpy()[order],
            "ts_ms": t,
            "idle": idle,
        }
    ).groupby("key", sort=True)
    out = g.agg(
        class_id=("class_id", "first"),
        session_index=("session_index", "first"),
        student_id=("student_id", "first"),
        first_ms=("ts_ms", "min"),
        last_ms=("ts_ms", "max"),
        n_events=("ts_ms", "size"),
        idle_mins=("idle", "sum"),
    ).reset_index(drop=True)
    return out.sort_values(["class_id", "session_index", "student_id"], kind="mergesort").reset_index(
        drop=True
    )


def threshold_sweep(
    transactions: pd.DataFrame,
    thresholds=SWEEP_THRESHOLDS,
    *,
    timezone: str = "UTC",
) -> pd.DataFrame:
    """Session count and five-number summary of session length (minutes)
    for each candidate gap threshold."""
    rows = []
    for thr in thresholds:
        s = infer_sessions(transactions, gap_mins=thr, timezone=timezone)
        lengths = (s["end_ms"] - s["start_ms"]).to_numpy(dtype=np.float64) / 60000.0
        if len(lengths):
            q = np.quantile(lengths, [0.0, 0.25, 0.5, 0.75, 1.0])
        else:
            q = [np.nan] * 5
        rows.append((float(thr), len(s), q[0], q[1], q[2], q[3], q[4]))
    return pd.DataFrame(rows, columns=["threshold", "n", "min", "q1", "median", "q3", "max"])
