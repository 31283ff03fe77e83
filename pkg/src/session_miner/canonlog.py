"""Parse heterogeneous platform logs into a canonical transaction stream.

The canonical in-memory form is a pandas DataFrame with columns
``student_id, class_id, problem_id, action, ts_ms, duration_s`` sorted by
``(class_id, ts_ms, ...)``.  ``ts_ms`` is int64 UTC epoch milliseconds so
downstream gap arithmetic is exact; ``duration_s`` is quantized to
millisecond precision so the CSV export round-trips bit for bit.

Two adapters are registered: ``ct-style`` (delimited text with a header
row) and ``ir-style`` (JSON lines, one event object per line).  Malformed
rows are never silently dropped: they are counted, written to a reject
sidecar, and an over-ceiling reject rate raises RejectRateExceededError.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass, field
from zoneinfo import ZoneInfo

import numpy as np
import pandas as pd

from .errors import (
    MalformedHeaderError,
    RejectRateExceededError,
    UnknownAdapterError,
)

ACTIONS = ("attempt_correct", "attempt_incorrect", "hint_request", "other")

TRANSACTION_COLUMNS = ["student_id", "class_id", "problem_id", "action", "ts_ms", "duration_s"]

#: Exact canonical CSV export schema, in this order.
CANONICAL_COLUMNS = ["student_id", "class_id", "problem_id", "action", "timestamp_iso8601", "duration_s"]

OUTCOME_COLUMNS = ["student_id", "prior_score", "final_score"]

ADAPTERS = ("ct-style", "ir-style")

# Recognized header spellings per logical column (lower-cased match).
_COLUMN_ALIASES = {
    "student_id": ["student_id", "student", "anon_student_id", "user_id"],
    "class_id": ["class_id", "class", "section", "class_section"],
    "problem_id": ["problem_id", "problem", "problem_name"],
    "action": ["action", "action_type", "attempt_type", "outcome"],
    "timestamp": ["timestamp_iso8601", "timestamp", "time", "event_time"],
    "duration": ["duration_s", "duration", "duration_sec", "duration_seconds"],
}

_ACTION_MAP = {}
for _canon, _aliases in {
    "attempt_correct": ["attempt_correct", "correct", "correct_attempt", "right", "ok"],
    "attempt_incorrect": ["attempt_incorrect", "incorrect", "incorrect_attempt", "wrong", "error", "bug"],
    "hint_request": ["hint_request", "hint", "help", "help_request"],
}.items():
    for _a in _aliases:
        _ACTION_MAP[_a] = _canon


@dataclass(frozen=True)
class Transaction:
    """One normalized log event.

    ts_ms is UTC epoch milliseconds; duration_s is seconds since the
    student's previous event (0 if first), never negative.
    """

    student_id: str
    class_id: str
    problem_id: str
    action: str
    ts_ms: int
    duration_s: float


@dataclass(frozen=True)
class OutcomeRecord:
    student_id: str
    prior_score: float
    final_score: float | None  # None = dropout, no year-end score


@dataclass
class ParseResult:
    transactions: pd.DataFrame
    rejects: pd.DataFrame  # columns: row, reason, detail
    n_rows: int  # data rows seen (good + rejected)

    @property
    def reject_rate(self) -> float:
        return len(self.rejects) / self.n_rows if self.n_rows else 0.0


@dataclass(frozen=True)
class RosterReport:
    """Overlap between the transaction roster and the outcomes roster."""

    n_transactions_only: int
    n_outcomes_only: int
    n_both: int
    both: frozenset = field(default_factory=frozenset)


def transactions_to_frame(records: list[Transaction]) -> pd.DataFrame:
    df = pd.DataFrame(
        [(t.student_id, t.class_id, t.problem_id, t.action, t.ts_ms, t.duration_s) for t in records],
        columns=TRANSACTION_COLUMNS,
    )
    return _finalize(df)


def frame_to_transactions(df: pd.DataFrame) -> list[Transaction]:
    return [
        Transaction(r.student_id, r.class_id, r.problem_id, r.action, int(r.ts_ms), float(r.duration_s))
        for r in df.itertuples(index=False)
    ]


def _finalize(df: pd.DataFrame) -> pd.DataFrame:
    """Deterministic canonical order: class, time, then id tie-breaks."""
    df = df.astype(
        {"student_id": str, "class_id": str, "problem_id": str, "action": str, "ts_ms": np.int64, "duration_s": np.float64}
    )
    df = df.sort_values(
        ["class_id", "ts_ms", "student_id", "problem_id", "action"], kind="mergesort"
    ).reset_index(drop=True)
    return df[TRANSACTION_COLUMNS]


def _as_text_buffer(source) -> io.StringIO:
    if isinstance(source, os.PathLike) or (isinstance(source, str) and "\n" not in source):
        with open(source, "rb") as fh:
            raw = fh.read()
    elif isinstance(source, bytes):
        raw = source
    elif hasattr(source, "read"):
        raw = source.read()
        if isinstance(raw, str):
            return io.StringIO(raw)
    else:
        raw = str(source).encode("utf-8")
    return io.StringIO(raw.decode("utf-8"))


def _parse_timestamps(col: pd.Series, timezone: str) -> pd.Series:
    """Parse a raw timestamp column to tz-aware UTC; unparseable -> NaT.

    Numeric values are epoch seconds (|v| < 1e11) or epoch milliseconds;
    naive datetime strings are read in the school's local timezone.
    """
    out = pd.Series(pd.NaT, index=col.index, dtype="datetime64[ns, UTC]")
    num = pd.to_numeric(col, errors="coerce")
    is_num = num.notna()
    if is_num.any():
        v = num[is_num].astype(np.float64)
        ms = v.where(v.abs() >= 1e11, v * 1000.0)
        out.loc[is_num] = pd.to_datetime(ms.round().astype(np.int64), unit="ms", utc=True)
    rest = col[~is_num]
    if len(rest):
        try:
            dt = pd.to_datetime(rest, errors="coerce", format="ISO8601")
        except (ValueError, TypeError):
            dt = pd.to_datetime(rest, errors="coerce")
        if dt.dtype == object:
            # Mixed offsets within one file: normalize through UTC.
            dt = pd.to_datetime(rest, errors="coerce", utc=True)
        if getattr(dt.dtype, "tz", None) is None:
            dt = dt.dt.tz_localize(ZoneInfo(timezone), ambiguous="NaT", nonexistent="NaT")
        out.loc[~is_num] = dt.dt.tz_convert("UTC")
    return out


def _recomputed_durations(df: pd.DataFrame, cap_s: float) -> pd.Series:
    """Gap to the student's previous event, capped, 0 for a first event."""
    order = df.sort_values(["student_id", "ts_ms"], kind="mergesort")
    gap = order.groupby("student_id")["ts_ms"].diff() / 1000.0
    gap = gap.fillna(0.0).clip(lower=0.0, upper=cap_s)
    return gap.reindex(df.index)


def _resolve_columns(header: list[str], overrides: dict | None) -> dict:
    lower = {h.lower().strip(): h for h in header}
    resolved = {}
    overrides = overrides or {}
    for logical, aliases in _COLUMN_ALIASES.items():
        if logical in overrides:
            if overrides[logical] in header:
                resolved[logical] = overrides[logical]
            continue
        for alias in aliases:
            if alias in lower:
                resolved[logical] = lower[alias]
                break
    required = ["student_id", "class_id", "problem_id", "action", "timestamp"]
    missing = [c for c in required if c not in resolved]
    if missing:
        raise MalformedHeaderError(f"header {header!r} is missing columns for: {', '.join(missing)}")
    return resolved


def _read_ct(buf: io.StringIO, delimiter: str | None, columns: dict | None):
    head = buf.readline()
    if not head.strip():
        return pd.DataFrame(), pd.DataFrame(columns=["row", "reason", "detail"]), 0
    if delimiter is None:
        delimiter = "\t" if "\t" in head else ","
    header = [h.strip() for h in head.rstrip("\r\n").split(delimiter)]
    resolved = _resolve_columns(header, columns)

    body = buf.read()
    rejects = []
    n_fields = len(header)
    raw = pd.read_csv(
        io.StringIO(body),
        sep=delimiter,
        names=header,
        dtype=str,
        header=None,
        keep_default_na=False,
        on_bad_lines="skip",  # over-long rows; short rows pad with NaN
        engine="c",
    )
    # Clean files satisfy both counts exactly; anything else gets one slow
    # python pass that pins down rows with the wrong field count.  Over-long
    # rows were skipped by the reader; short rows were parsed padded.
    n_lines = body.count("\n") + (0 if body == "" or body.endswith("\n") else 1)
    clean = len(raw) == n_lines and body.count(delimiter) == (n_fields - 1) * len(raw)
    row_numbers = pd.RangeIndex(1, len(raw) + 1)
    if not clean:
        parsed_numbers, keep, found = [], [], []
        i = 0
        for ln in body.splitlines():
            if not ln.strip():
                continue
            i += 1
            cnt = len(ln.split(delimiter))
            if cnt > n_fields:
                found.append((i, "bad_field_count", ln[:200]))
            else:
                parsed_numbers.append(i)
                keep.append(cnt == n_fields)
                if cnt < n_fields:
                    found.append((i, "bad_field_count", ln[:200]))
        if len(parsed_numbers) == len(raw):
            rejects.extend(found)
            keep = np.asarray(keep, dtype=bool)
            raw = raw[keep]
            row_numbers = pd.Index(np.asarray(parsed_numbers, dtype=np.int64)[keep])
        # else: quoted delimiters made the naive split disagree with the
        # reader; trust the reader and keep positional row numbers.
    n_rows = len(raw) + len(rejects)

    df = pd.DataFrame(
        {
            "student_id": raw[resolved["student_id"]].str.strip() if len(raw) else pd.Series(dtype=str),
            "class_id": raw[resolved["class_id"]].str.strip() if len(raw) else pd.Series(dtype=str),
            "problem_id": raw[resolved["problem_id"]].str.strip() if len(raw) else pd.Series(dtype=str),
            "action": raw[resolved["action"]] if len(raw) else pd.Series(dtype=str),
            "_ts_raw": raw[resolved["timestamp"]] if len(raw) else pd.Series(dtype=str),
        }
    )
    if "duration" in resolved and len(raw):
        df["_dur_raw"] = raw[resolved["duration"]]
    df.index = row_numbers  # 1-based data row numbers
    rej = pd.DataFrame(rejects, columns=["row", "reason", "detail"])
    return df, rej, n_rows


def _read_ir(buf: io.StringIO, columns: dict | None):
    rows, rejects = [], []
    keys = None
    for i, line in enumerate(buf, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError("not an object")
        except ValueError:
            rejects.append((i, "bad_json", line.strip()[:200]))
            continue
        if keys is None:
            keys = _resolve_columns(list(obj.keys()), columns)
        rows.append(
            (
                i,
                str(obj.get(keys["student_id"], "")).strip(),
                str(obj.get(keys["class_id"], "")).strip(),
                str(obj.get(keys["problem_id"], "")).strip(),
                str(obj.get(keys["action"], "")),
                obj.get(keys["timestamp"]) if "timestamp" in keys else None,
                obj.get(keys["duration"]) if "duration" in keys else None,
            )
        )
    n_rows = len(rows) + len(rejects)
    df = pd.DataFrame(
        rows, columns=["row", "student_id", "class_id", "problem_id", "action", "_ts_raw", "_dur_raw"]
    )
    if len(df):
        df = df.set_index("row")
    else:
        df = df.drop(columns=["row"])
    if df.get("_dur_raw") is not None and df["_dur_raw"].isna().all():
        df = df.drop(columns=["_dur_raw"])
    rej = pd.DataFrame(rejects, columns=["row", "reason", "detail"])
    return df, rej, n_rows


def parse_log(
    source,
    adapter: str = "ct-style",
    *,
    timezone: str = "UTC",
    delimiter: str | None = None,
    columns: dict | None = None,
    reject_ceiling: float = 0.01,
    year_start: str | None = None,
    year_end: str | None = None,
    duration_cap_mins: float = 2.0,
) -> ParseResult:
    """Parse one log file into the canonical transaction stream.

    source may be a path, bytes, or a file-like object.  Returns a
    ParseResult whose frame is sorted by (class_id, ts_ms).  Raises
    RejectRateExceededError when more than ``reject_ceiling`` of the data
    rows fail validation; the rejects are still available on the error-free
    path via ``result.rejects`` (row number, reason, offending detail).
    """
    if adapter not in ADAPTERS:
        raise UnknownAdapterError(adapter)
    buf = _as_text_buffer(source)
    if adapter == "ct-style":
        df, rejects, n_rows = _read_ct(buf, delimiter, columns)
    else:
        df, rejects, n_rows = _read_ir(buf, columns)

    if len(df):
        ts = _parse_timestamps(df["_ts_raw"].astype(object), timezone)
        bad = pd.Series("", index=df.index, dtype=object)
        bad[ts.isna()] = "bad_timestamp"
        if year_start is not None:
            lo = pd.Timestamp(year_start, tz=ZoneInfo(timezone))
            bad[(bad == "") & (ts < lo)] = "before_school_year"
        if year_end is not None:
            hi = pd.Timestamp(year_end, tz=ZoneInfo(timezone)) + pd.Timedelta(days=1)
            bad[(bad == "") & (ts >= hi)] = "after_school_year"
        bad[(bad == "") & (df["student_id"] == "")] = "missing_student_id"
        bad[(bad == "") & (df["class_id"] == "")] = "missing_class_id"

        dur = None
        if "_dur_raw" in df.columns:
            dur = pd.to_numeric(df["_dur_raw"], errors="coerce")
            bad[(bad == "") & (dur < 0)] = "negative_duration"

        is_bad = bad != ""
        if is_bad.any():
            detail = df.loc[is_bad, "_ts_raw"].astype(str).str.slice(0, 200)
            more = pd.DataFrame(
                {"row": df.index[is_bad], "reason": bad[is_bad].values, "detail": detail.values}
            )
            rejects = pd.concat([rejects, more], ignore_index=True)

        good = df[~is_bad].copy()
        good["ts_ms"] = ts[~is_bad].astype("int64") // 10**6  # ns -> ms
        good["action"] = (
            good["action"].astype(str).str.strip().str.lower().map(_ACTION_MAP).fillna("other")
        )
        if dur is not None:
            d = dur[~is_bad]
            if d.isna().any():
                rec = _recomputed_durations(good, duration_cap_mins * 60.0)
                d = d.fillna(rec)
            good["duration_s"] = d
        else:
            good["duration_s"] = _recomputed_durations(good, duration_cap_mins * 60.0)
        good["duration_s"] = np.round(good["duration_s"].astype(np.float64) * 1000.0) / 1000.0
        out = _finalize(good[TRANSACTION_COLUMNS])
    else:
        out = _finalize(pd.DataFrame(columns=TRANSACTION_COLUMNS))

    rejects = rejects.sort_values("row", kind="mergesort").reset_index(drop=True)
    result = ParseResult(out, rejects, n_rows)
    if result.reject_rate > reject_ceiling:
        raise RejectRateExceededError(result.reject_rate, reject_ceiling)
    return result


def write_canonical(df: pd.DataFrame, path_or_buf) -> None:
    """Write the documented canonical CSV (exact columns, exact order)."""
    iso = np.datetime_as_string(df["ts_ms"].to_numpy().astype("datetime64[ms]"), unit="ms")
    out = pd.DataFrame(
        {
            "student_id": df["student_id"],
            "class_id": df["class_id"],
            "problem_id": df["problem_id"],
            "action": df["action"],
            "timestamp_iso8601": np.char.add(iso, "Z"),
            "duration_s": df["duration_s"].map(lambda v: f"{v:.3f}"),
        }
    )
    out.to_csv(path_or_buf, index=False, columns=CANONICAL_COLUMNS)


def read_canonical(source) -> pd.DataFrame:
    """Re-parse a canonical CSV export; inverse of write_canonical."""
    return parse_log(source, "ct-style", timezone="UTC").transactions


def read_outcomes(source) -> pd.DataFrame:
    """Outcomes CSV: student_id,prior_score,final_score (final may be empty)."""
    df = pd.read_csv(_as_text_buffer(source), dtype={"student_id": str})
    missing = [c for c in OUTCOME_COLUMNS if c not in df.columns]
    if missing:
        raise MalformedHeaderError(f"outcomes file is missing columns: {', '.join(missing)}")
    df["prior_score"] = pd.to_numeric(df["prior_score"], errors="coerce")
    df["final_score"] = pd.to_numeric(df["final_score"], errors="coerce")
    return df[OUTCOME_COLUMNS]


def write_outcomes(df: pd.DataFrame, path_or_buf) -> None:
    df[OUTCOME_COLUMNS].to_csv(path_or_buf, index=False)


def join_outcomes(transactions: pd.DataFrame, outcomes: pd.DataFrame) -> RosterReport:
    """Roster overlap report; regression downstream uses the intersection."""
    log_ids = set(transactions["student_id"].unique())
    out_ids = set(outcomes["student_id"].unique())
    both = log_ids & out_ids
    return RosterReport(
        n_transactions_only=len(log_ids - out_ids),
        n_outcomes_only=len(out_ids - log_ids),
        n_both=len(both),
        both=frozenset(both),
    )
