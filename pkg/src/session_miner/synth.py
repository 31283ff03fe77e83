"""Synthetic cohort generator with planted ground truth.

Every downstream stage has an exact answer on these logs:

* sessions: one per class per school day, so the nearest neighbor of any
  session is hours away and every sweep threshold up to 30 minutes
  recovers the identical segmentation;
* envelopes: each session has one anchor student (rotating by session
  index) who opens at the exact start, closes at the exact end and never
  idles, so the session envelope equals the schedule and the pooled
  stream never gaps by more than the 90 s cadence ceiling;
* slice measures: non-anchor students get per-session delay and early
  stop drawn from their traits (plus a per-class delay offset) and the
  event walk is built to land exactly on those values, so measured
  delayed start / early stop / idle equal the planted draws;
* gaming: an encounter is planted as gamed by making its opening action
  a hint (first-on-problem events carry duration 0, well under the
  5-second rule bound), with per-student probability;
* outcomes: final scores follow a linear model on standardized traits
  with known coefficients.

Generation is fully deterministic per seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from datetime import datetime
from zoneinfo import ZoneInfo

import numpy as np
import pandas as pd

from .canonlog import TRANSACTION_COLUMNS, _finalize, write_canonical
from .errors import InvalidSpecError

# noise_sd completes the default coefficients to a unit-variance latent
# outcome (traits enter standardized and independent), so standardized
# regression downstream recovers coefficients on the planted scale
DEFAULT_OUTCOME_MODEL = {
    "prior": 0.47,
    "delay": -0.25,
    "stop": 0.0,
    "idle": 0.0,
    "gaming": -0.12,
    "noise_sd": 0.838,
}


@dataclass
class CohortSpec:
    n_classes: int = 2
    students_per_class: int = 10
    months: int = 3
    sessions_per_month: int = 4
    session_length_mins: float = 45.0
    length_jitter_mins: float = 10.0  # per-session length varies +/- this
    start_year: int = 2023
    start_month: int = 9  # school year begins this calendar month
    timezone: str = "UTC"

    # per-student trait distributions
    delay_mu: float = 6.0  # mean of per-student mean delayed start (mins)
    delay_mu_sd: float = 2.0
    delay_sd: float = 1.5  # session-to-session spread around the trait
    stop_mu: float = 5.0
    stop_mu_sd: float = 2.0
    stop_sd: float = 1.5
    class_delay_sd: float = 1.5  # per-class additive delay offset spread
    idle_rate: float = 0.8  # mean idle stretches per session
    gaming_prob_mu: float = 0.10
    gaming_prob_sd: float = 0.10

    # event texture
    cadence_s: tuple = (20, 90)
    idle_gap_s: tuple = (150, 360)
    problems_per_encounter: tuple = (2, 4)
    problem_pool: int = 60

    outcome_model: dict = field(default_factory=lambda: dict(DEFAULT_OUTCOME_MODEL))
    seed: int = 0
    detail: bool | str = "auto"  # per-slice truth records; auto caps by size


@dataclass
class SynthBundle:
    transactions: pd.DataFrame
    outcomes: pd.DataFrame
    ground_truth: dict


def _validate(spec: CohortSpec) -> None:
    for name in ("n_classes", "students_per_class", "months", "sessions_per_month"):
        if getattr(spec, name) < 1:
            raise InvalidSpecError(f"{name} must be >= 1")
    if spec.sessions_per_month > 20:
        raise InvalidSpecError("sessions_per_month must fit one per school day (<= 20)")
    if not 1 <= spec.start_month <= 12:
        raise InvalidSpecError("start_month must be 1..12")
    if spec.length_jitter_mins < 0:
        raise InvalidSpecError("length_jitter_mins must be >= 0")
    if spec.session_length_mins - spec.length_jitter_mins < 9:
        raise InvalidSpecError("session_length_mins too short to place delays and stops")
    if not 0.0 <= spec.gaming_prob_mu <= 1.0:
        raise InvalidSpecError("gaming_prob_mu must be a probability")
    for name in ("delay_mu", "delay_mu_sd", "delay_sd", "stop_mu", "stop_mu_sd",
                 "stop_sd", "class_delay_sd", "idle_rate", "gaming_prob_sd"):
        if getattr(spec, name) < 0:
            raise InvalidSpecError(f"{name} must be >= 0")
    lo, hi = spec.cadence_s
    if not 0 < lo <= hi:
        raise InvalidSpecError("cadence_s must be a positive (lo, hi) range")
    if spec.idle_gap_s[0] <= 120:
        raise InvalidSpecError("idle gaps must exceed the 2-minute idle threshold")
    unknown = set(spec.outcome_model) - set(DEFAULT_OUTCOME_MODEL)
    if unknown:
        raise InvalidSpecError(f"unknown outcome_model keys: {sorted(unknown)}")
    if spec.outcome_model.get("noise_sd", 0.0) < 0:
        raise InvalidSpecError("outcome noise_sd must be >= 0")


def _schedule(spec: CohortSpec):
    """(class_idx, month_str, start_ms) for every planned session, one per
    local school day per class, inside school hours."""
    zone = ZoneInfo(spec.timezone)
    step = max(1, 28 // spec.sessions_per_month)
    out = []
    for m in range(spec.months):
        month = (spec.start_month - 1 + m) % 12 + 1
        year = spec.start_year + (spec.start_month - 1 + m) // 12
        for k in range(spec.n_classes):
            for j in range(spec.sessions_per_month):
                day = 1 + (j * step + k % step if step > 1 else j)
                hour = 8 + (k % 5)
                start = datetime(year, month, day, hour, 0, tzinfo=zone)
                out.append((k, f"{year}-{month:02d}", int(start.timestamp() * 1000)))
    return out


def _zs(v: np.ndarray) -> np.ndarray:
    sd = v.std()
    return (v - v.mean()) / sd if sd > 0 else np.zeros_like(v)


def generate_cohort(spec: CohortSpec) -> SynthBundle:
    """Build (transactions, outcomes, ground_truth) for one seeded cohort."""
    _validate(spec)
    rng = np.random.default_rng(spec.seed)
    n_students = spec.n_classes * spec.students_per_class

    sids = np.array([f"s{i:04d}" for i in range(n_students)])
    cls_of = np.repeat(np.arange(spec.n_classes), spec.students_per_class)
    cids = np.array([f"c{k:02d}" for k in range(spec.n_classes)])

    delay_trait = np.maximum(rng.normal(spec.delay_mu, spec.delay_mu_sd, n_students), 0.0)
    stop_trait = np.maximum(rng.normal(spec.stop_mu, spec.stop_mu_sd, n_students), 0.0)
    idle_rate = np.maximum(rng.normal(spec.idle_rate, 0.3, n_students), 0.0)
    gaming_logit_noise = rng.normal(0.0, 1.0, n_students)
    gaming_prob = np.clip(
        spec.gaming_prob_mu + spec.gaming_prob_sd * gaming_logit_noise, 0.005, 0.95
    )
    ability = rng.normal(0.0, 1.0, n_students)
    class_offset = rng.normal(0.0, spec.class_delay_sd, spec.n_classes)
    problem_offset = rng.integers(0, spec.problem_pool, n_students)

    plan = _schedule(spec)
    jitter = rng.uniform(-spec.length_jitter_mins, spec.length_jitter_mins, len(plan))
    lengths_ms = np.round((spec.session_length_mins + jitter) * 60000).astype(np.int64)
    n_slices = len(plan) * spec.students_per_class
    detail = spec.detail if spec.detail != "auto" else n_slices <= 60_000

    cols = {c: [] for c in TRANSACTION_COLUMNS}
    sessions_truth = []
    slices_truth = []
    cad_lo, cad_hi = int(spec.cadence_s[0] * 1000), int(spec.cadence_s[1] * 1000)
    idle_lo, idle_hi = int(spec.idle_gap_s[0] * 1000), int(spec.idle_gap_s[1] * 1000)
    enc_lo, enc_hi = spec.problems_per_encounter
    action_names = np.array(["attempt_correct", "attempt_incorrect", "hint_request", "other"])

    for sess_counter, (k, month, start_ms) in enumerate(plan):
        L_ms = int(lengths_ms[sess_counter])
        cap_ms = L_ms // 3
        sessions_truth.append(
            {
                "class_id": cids[k],
                "month": month,
                "start_ms": start_ms,
                "end_ms": start_ms + L_ms,
                "size": spec.students_per_class,
            }
        )
        members = np.where(cls_of == k)[0]
        anchor = members[sess_counter % spec.students_per_class]
        for gi in members:
            if gi == anchor:
                delay_ms = stop_ms = 0
                n_idle = 0
            else:
                delay_ms = int(
                    np.clip(
                        round((rng.normal(delay_trait[gi], spec.delay_sd) + class_offset[k]) * 60000),
                        0,
                        cap_ms,
                    )
                )
                stop_ms = int(np.clip(round(rng.normal(stop_trait[gi], spec.stop_sd) * 60000), 0, cap_ms))
                n_idle = int(rng.poisson(idle_rate[gi]))
            span = L_ms - delay_ms - stop_ms

            idle_gaps = rng.integers(idle_lo, idle_hi + 1, size=n_idle)
            while idle_gaps.sum() > span // 2 and len(idle_gaps):
                idle_gaps = idle_gaps[:-1]
            target_c = span - int(idle_gaps.sum())
            est = max(target_c // ((cad_lo + cad_hi) // 2) + 8, 8)
            cad = rng.integers(cad_lo, cad_hi + 1, size=est)
            cum = np.cumsum(cad)
            while cum[-1] <= target_c:  # rare: top up the pool
                cad = np.concatenate([cad, rng.integers(cad_lo, cad_hi + 1, size=est)])
                cum = np.cumsum(cad)
            n_keep = int(np.searchsorted(cum, target_c, side="left"))
            gaps = cad[:n_keep]
            rem = target_c - (int(cum[n_keep - 1]) if n_keep else 0)
            if rem > 0:
                gaps = np.concatenate([gaps, [rem]])
            gaps = np.concatenate([gaps, idle_gaps])
            gaps = gaps[rng.permutation(len(gaps))]
            times = start_ms + delay_ms + np.concatenate([[0], np.cumsum(gaps)])
            n_ev = len(times)

            # encounters: contiguous runs of 2..4 events on one problem
            sizes = rng.integers(enc_lo, enc_hi + 1, size=n_ev // enc_lo + 2)
            bounds = np.concatenate([[0], np.cumsum(sizes)])
            bounds = bounds[bounds < n_ev]
            n_enc = len(bounds)
            enc_id = np.zeros(n_ev, dtype=np.int64)
            enc_id[bounds] = 1
            enc_id = np.cumsum(enc_id) - 1
            gamed = rng.random(n_enc) < gaming_prob[gi]

            actions = rng.choice(4, size=n_ev, p=[0.55, 0.30, 0.10, 0.05])
            first_of_enc = np.zeros(n_ev, dtype=bool)
            first_of_enc[bounds] = True
            opener = np.where(rng.random(n_enc) < 0.65, 0, 1)  # attempts only
            actions[first_of_enc] = np.where(gamed, 2, opener)  # hint when gamed

            # distinct problems within the session so planted encounters
            # never merge under the (class, session, student, problem) key
            problems = (problem_offset[gi] + np.arange(n_enc)) % max(spec.problem_pool, n_enc)
            durations = np.concatenate([[0], np.diff(times)]) / 1000.0
            durations[first_of_enc] = 0.0  # first action on a problem

            cols["student_id"].append(np.full(n_ev, sids[gi], dtype=object))
            cols["class_id"].append(np.full(n_ev, cids[k], dtype=object))
            cols["problem_id"].append(
                np.array([f"p{p:03d}" for p in problems], dtype=object)[enc_id]
            )
            cols["action"].append(action_names[actions])
            cols["ts_ms"].append(times)
            cols["duration_s"].append(durations)

            if detail:
                slices_truth.append(
                    {
                        "class_id": cids[k],
                        "month": month,
                        "session_start_ms": start_ms,
                        "student_id": sids[gi],
                        "delay_mins": delay_ms / 60000.0,
                        "stop_mins": stop_ms / 60000.0,
                        "idle_mins": float(idle_gaps.sum()) / 60000.0,
                        "n_encounters": int(n_enc),
                        "n_gamed": int(gamed.sum()),
                        "gamed_problems": [f"p{p:03d}" for p in problems[gamed]],
                    }
                )

    tx = _finalize(pd.DataFrame({c: np.concatenate(cols[c]) for c in TRANSACTION_COLUMNS}))

    model = dict(DEFAULT_OUTCOME_MODEL)
    model.update(spec.outcome_model)
    prior_z = _zs(0.8 * ability + 0.6 * rng.normal(0, 1, n_students))
    final_z = (
        model["prior"] * prior_z
        + model["delay"] * _zs(delay_trait)
        + model["stop"] * _zs(stop_trait)
        + model["idle"] * _zs(idle_rate)
        + model["gaming"] * _zs(gaming_prob)
        + model["noise_sd"] * rng.normal(0, 1, n_students)
    )
    outcomes = pd.DataFrame(
        {
            "student_id": sids,
            "prior_score": np.round(500 + 100 * prior_z, 1),
            "final_score": np.round(500 + 100 * final_z, 1),
        }
    )

    truth = {
        "spec": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(spec).items()},
        "outcome_model": model,
        "classes": {cids[k]: {"delay_offset_mins": float(class_offset[k])} for k in range(spec.n_classes)},
        "students": {
            sids[i]: {
                "class_id": cids[cls_of[i]],
                "delay_trait_mins": float(delay_trait[i]),
                "stop_trait_mins": float(stop_trait[i]),
                "idle_rate": float(idle_rate[i]),
                "gaming_prob": float(gaming_prob[i]),
                "ability": float(ability[i]),
                "prior_score": float(outcomes["prior_score"][i]),
                "final_score": float(outcomes["final_score"][i]),
            }
            for i in range(n_students)
        },
        "sessions": sessions_truth,
        "slices": slices_truth if detail else None,
    }
    return SynthBundle(transactions=tx, outcomes=outcomes, ground_truth=truth)


def write_bundle(bundle: SynthBundle, outdir, stem: str = "cohort") -> dict:
    """Write log.csv (canonical), outcomes.csv and ground_truth.json;
    returns the path map."""
    from pathlib import Path

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "log": outdir / f"{stem}_log.csv",
        "outcomes": outdir / f"{stem}_outcomes.csv",
        "ground_truth": outdir / f"{stem}_ground_truth.json",
    }
    write_canonical(bundle.transactions, paths["log"])
    bundle.outcomes.to_csv(paths["outcomes"], index=False)
    with open(paths["ground_truth"], "w") as fh:
        json.dump(bundle.ground_truth, fh, indent=1, default=str)
    return paths


def parse_cohort_spec(text: str, base: CohortSpec | None = None) -> CohortSpec:
    """Flat key=value lines -> CohortSpec.  Tuples are comma pairs
    (cadence_s=20,90); outcome coefficients use dotted keys
    (outcome.delay=-0.25).  # comments and blank lines are skipped.
    With ``base`` given, the lines override a copy of it."""
    from copy import deepcopy

    spec = deepcopy(base) if base is not None else CohortSpec()
    ints = {"n_classes", "students_per_class", "months", "sessions_per_month",
            "start_year", "start_month", "seed", "problem_pool"}
    tuples = {"cadence_s", "idle_gap_s", "problems_per_encounter"}
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        if "=" not in ln:
            raise InvalidSpecError(f"expected key=value, got {ln!r}")
        key, value = (s.strip() for s in ln.split("=", 1))
        if key.startswith("outcome."):
            coef = key.split(".", 1)[1]
            if coef not in DEFAULT_OUTCOME_MODEL:
                raise InvalidSpecError(f"unknown outcome coefficient {coef!r}")
            spec.outcome_model[coef] = float(value)
        elif key in tuples:
            parts = [float(p) for p in value.split(",")]
            if len(parts) != 2:
                raise InvalidSpecError(f"{key} needs two comma-separated numbers")
            setattr(spec, key, tuple(parts))
        elif key in ints:
            setattr(spec, key, int(value))
        elif key == "timezone":
            spec.timezone = value
        elif key == "detail":
            spec.detail = value.lower() in ("1", "true", "yes")
        elif hasattr(spec, key):
            setattr(spec, key, float(value))
        else:
            raise InvalidSpecError(f"unknown cohort spec key {key!r}")
    return spec
