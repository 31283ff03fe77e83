"""Rule-based gaming detection over problem encounters.

An encounter is one student's run of transactions on one problem within
one session.  Detection rules are line-oriented: each non-comment line is
one rule of ``field comparator value`` clauses joined by ``and``; an
encounter is flagged as gamed when any rule matches any of its events.

Fields: ``action`` (canonical action string), ``duration`` (seconds),
``position`` (0-based index of the event within its encounter) and
``n_events`` (encounter size).  The default rule flags a hint request
fired within five seconds at the very start of a problem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..errors import ConfigError, UnknownRuleFieldError
from ..sessionize import DEFAULT_GAP_MINS, assign_sessions, classify_sessions
from ..measures import month_key

RULE_FIELDS = ("action", "duration", "position", "n_events")
_NUMERIC_FIELDS = ("duration", "position", "n_events")
_OPS = ("<=", ">=", "==", "!=", "<", ">")  # two-char ops first

DEFAULT_RULES = "action == hint_request and duration < 5 and position == 0"


@dataclass(frozen=True)
class GamingRule:
    clauses: tuple  # of (field, op, value)
    source: str


def _parse_clause(text: str):
    for op in _OPS:
        if op in text:
            field, value = text.split(op, 1)
            field, value = field.strip(), value.strip()
            if field not in RULE_FIELDS:
                raise UnknownRuleFieldError(field)
            if field in _NUMERIC_FIELDS:
                try:
                    value = float(value)
                except ValueError as e:
                    raise ConfigError(f"{field} needs a numeric bound, got {value!r}") from e
            elif op not in ("==", "!="):
                raise ConfigError(f"action only supports == and !=, got {op!r}")
            return field, op, value
    raise ConfigError(f"no comparator in clause {text!r}")


def parse_rules(text: str) -> list[GamingRule]:
    rules = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        clauses = tuple(_parse_clause(c) for c in line.split(" and "))
        rules.append(GamingRule(clauses, line))
    if not rules:
        raise ConfigError("rule text contains no rules")
    return rules


def _clause_mask(df: pd.DataFrame, field: str, op: str, value) -> np.ndarray:
    col = df[field]
    if op == "==":
        return (col == value).to_numpy()
    if op == "!=":
        return (col != value).to_numpy()
    if op == "<":
        return (col < value).to_numpy()
    if op == "<=":
        return (col <= value).to_numpy()
    if op == ">":
        return (col > value).to_numpy()
    return (col >= value).to_numpy()


def detect_gaming(
    transactions: pd.DataFrame,
    rules: str | list[GamingRule] | None = None,
    *,
    gap_mins: float = DEFAULT_GAP_MINS,
    timezone: str = "UTC",
) -> pd.DataFrame:
    """Label every encounter.

    Returns one row per (class_id, session_index, student_id, problem_id)
    with month, n_events and a boolean ``gamed``.  Sessions of every kind
    are scanned; the month is the owning session's month.
    """
    if rules is None:
        rules = DEFAULT_RULES
    if isinstance(rules, str):
        rules = parse_rules(rules)

    tx, sessions = assign_sessions(transactions, gap_mins=gap_mins, timezone=timezone)
    if not len(tx):
        return pd.DataFrame(
            columns=["class_id", "session_index", "student_id", "problem_id", "month", "n_events", "gamed"]
        )
    months = pd.Series(
        month_key(sessions["start_ms"], timezone).to_numpy(), name="month"
    )
    key_frame = sessions[["class_id", "session_index"]].assign(month=months)

    enc_keys = ["class_id", "session_index", "student_id", "problem_id"]
    order = tx.sort_values(enc_keys + ["ts_ms"], kind="mergesort").reset_index(drop=True)
    g = order.groupby(enc_keys, sort=False)
    order["position"] = g.cumcount()
    order["n_events"] = g["ts_ms"].transform("size")
    order = order.rename(columns={"duration_s": "duration"})

    matched = np.zeros(len(order), dtype=bool)
    for rule in rules:
        m = np.ones(len(order), dtype=bool)
        for field, op, value in rule.clauses:
            m &= _clause_mask(order, field, op, value)
        matched |= m
    order["_hit"] = matched

    enc = (
        order.groupby(enc_keys, sort=True)
        .agg(n_events=("ts_ms", "size"), gamed=("_hit", "max"))
        .reset_index()
    )
    enc = enc.merge(key_frame, on=["class_id", "session_index"], how="left")
    return enc[["class_id", "session_index", "student_id", "problem_id", "month", "n_events", "gamed"]]


def monthly_gaming(labels: pd.DataFrame) -> pd.DataFrame:
    """Fraction of a student's encounters flagged as gamed, per month."""
    if not len(labels):
        return pd.DataFrame(columns=["student_id", "month", "gaming_rate", "n_encounters"])
    g = labels.groupby(["student_id", "month"], sort=True)
    out = g.agg(gaming_rate=("gamed", "mean"), n_encounters=("gamed", "size")).reset_index()
    out["gaming_rate"] = out["gaming_rate"].astype(np.float64)
    return out
