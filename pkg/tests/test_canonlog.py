import io
import random

import numpy as np
import pandas as pd
import pytest

from session_miner.canonlog import (
    CANONICAL_COLUMNS,
    TRANSACTION_COLUMNS,
    join_outcomes,
    parse_log,
    read_canonical,
    read_outcomes,
    write_canonical,
)
from session_miner.errors import (
    MalformedHeaderError,
    RejectRateExceededError,
    UnknownAdapterError,
)


def _ct(rows, header="student_id,class_id,problem_id,action,timestamp_iso8601,duration_s"):
    return header + "\n" + "\n".join(rows) + ("\n" if rows else "")


def test_empty_file_parses_to_empty_stream():
    res = parse_log(io.StringIO(""), "ct-style")
    assert len(res.transactions) == 0
    assert len(res.rejects) == 0
    assert res.reject_rate == 0.0
    assert list(res.transactions.columns) == TRANSACTION_COLUMNS


def test_header_only_file_is_empty_not_an_error():
    res = parse_log(io.StringIO(_ct([])), "ct-style")
    assert len(res.transactions) == 0 and res.n_rows == 0


def test_unknown_adapter_raises():
    with pytest.raises(UnknownAdapterError):
        parse_log(io.StringIO(""), "xapi")


def test_missing_required_column_raises_malformed_header():
    with pytest.raises(MalformedHeaderError):
        parse_log(io.StringIO("student_id,action,timestamp\n"), "ct-style")


def test_out_of_order_rows_are_sorted_by_class_then_time():
    rows = [
        "s2,cB,p1,correct,2023-10-02T09:00:05Z,4.0",
        "s1,cA,p1,correct,2023-10-02T09:00:10Z,2.0",
        "s1,cA,p2,hint,2023-10-02T09:00:01Z,0.0",
    ]
    res = parse_log(io.StringIO(_ct(rows)), "ct-style")
    got = list(zip(res.transactions["class_id"], res.transactions["ts_ms"]))
    assert got == sorted(got)
    assert res.transactions.iloc[0]["problem_id"] == "p2"


def test_reject_rate_over_ceiling_raises_with_rate():
    good = [f"s{i},c1,p1,correct,2023-10-02T09:{i % 60:02d}:00Z,1.0" for i in range(98)]
    bad = ["s98,c1,p1,correct,not-a-time,1.0", "s99,c1,p1,correct,also bad,1.0"]
    with pytest.raises(RejectRateExceededError) as ei:
        parse_log(io.StringIO(_ct(good + bad)), "ct-style", reject_ceiling=0.01)
    assert ei.value.rate == pytest.approx(0.02)
    # A looser ceiling admits the same file and reports the same two rejects.
    res = parse_log(io.StringIO(_ct(good + bad)), "ct-style", reject_ceiling=0.05)
    assert len(res.transactions) == 98
    assert list(res.rejects["reason"]) == ["bad_timestamp", "bad_timestamp"]
    assert list(res.rejects["row"]) == [99, 100]


def test_reject_reasons_missing_ids_and_negative_duration():
    rows = [
        "s1,c1,p1,correct,2023-10-02T09:00:00Z,1.0",
        ",c1,p1,correct,2023-10-02T09:00:01Z,1.0",
        "s2,,p1,correct,2023-10-02T09:00:02Z,1.0",
        "s3,c1,p1,correct,2023-10-02T09:00:03Z,-4.0",
    ]
    res = parse_log(io.StringIO(_ct(rows)), "ct-style", reject_ceiling=1.0)
    assert sorted(res.rejects["reason"]) == [
        "missing_class_id",
        "missing_student_id",
        "negative_duration",
    ]
    assert len(res.transactions) == 1


def test_bad_field_count_rows_are_counted_with_row_numbers():
    rows = [
        "s1,c1,p1,correct,2023-10-02T09:00:00Z,1.0",
        "s1,c1,p1,correct",
        "s1,c1,p1,correct,2023-10-02T09:00:02Z,1.0",
    ]
    res = parse_log(io.StringIO(_ct(rows)), "ct-style", reject_ceiling=1.0)
    assert len(res.transactions) == 2
    assert list(res.rejects["reason"]) == ["bad_field_count"]
    assert list(res.rejects["row"]) == [2]


def test_school_year_window_rejects_outside_rows():
    rows = [
        "s1,c1,p1,correct,2023-06-01T09:00:00Z,1.0",
        "s1,c1,p1,correct,2023-10-02T09:00:00Z,1.0",
        "s1,c1,p1,correct,2024-08-01T09:00:00Z,1.0",
    ]
    res = parse_log(
        io.StringIO(_ct(rows)),
        "ct-style",
        year_start="2023-08-15",
        year_end="2024-06-15",
        reject_ceiling=1.0,
    )
    assert len(res.transactions) == 1
    assert sorted(res.rejects["reason"]) == ["after_school_year", "before_school_year"]


def test_action_normalization_and_other_bucket():
    rows = [
        "s1,c1,p1,CORRECT,2023-10-02T09:00:00Z,1.0",
        "s1,c1,p1,hint,2023-10-02T09:00:01Z,1.0",
        "s1,c1,p1,BUG,2023-10-02T09:00:02Z,1.0",
        "s1,c1,p1,resume,2023-10-02T09:00:03Z,1.0",
    ]
    res = parse_log(io.StringIO(_ct(rows)), "ct-style")
    assert list(res.transactions["action"]) == [
        "attempt_correct",
        "hint_request",
        "attempt_incorrect",
        "other",
    ]


def test_naive_timestamps_are_read_in_school_timezone():
    rows = ["s1,c1,p1,correct,2023-10-02 09:00:00,1.0"]
    utc = parse_log(io.StringIO(_ct(rows)), "ct-style", timezone="UTC").transactions
    ny = parse_log(io.StringIO(_ct(rows)), "ct-style", timezone="America/New_York").transactions
    # 09:00 EDT is 13:00 UTC: four hours later than the UTC reading.
    assert ny["ts_ms"].iloc[0] - utc["ts_ms"].iloc[0] == 4 * 3600 * 1000


def test_epoch_timestamps_seconds_and_millis():
    rows = [
        "s1,c1,p1,correct,1696237200,1.0",
        "s1,c1,p1,correct,1696237201500,1.0",
    ]
    res = parse_log(io.StringIO(_ct(rows)), "ct-style")
    assert list(res.transactions["ts_ms"]) == [1696237200000, 1696237201500]


def test_absent_duration_column_recomputes_capped_gaps():
    header = "student_id,class_id,problem_id,action,timestamp_iso8601"
    rows = [
        "s1,c1,p1,correct,2023-10-02T09:00:00Z",
        "s1,c1,p2,correct,2023-10-02T09:00:30Z",
        "s1,c1,p3,correct,2023-10-02T09:10:30Z",  # 10 min gap, capped at 2 min
        "s2,c1,p1,correct,2023-10-02T09:00:10Z",
    ]
    res = parse_log(io.StringIO(_ct(rows, header)), "ct-style", duration_cap_mins=2.0)
    df = res.transactions.set_index(["student_id", "problem_id"])
    assert df.loc[("s1", "p1"), "duration_s"] == 0.0
    assert df.loc[("s1", "p2"), "duration_s"] == 30.0
    assert df.loc[("s1", "p3"), "duration_s"] == 120.0
    assert df.loc[("s2", "p1"), "duration_s"] == 0.0


def test_blank_duration_cells_fall_back_to_recomputed_gap():
    rows = [
        "s1,c1,p1,correct,2023-10-02T09:00:00Z,5.5",
        "s1,c1,p2,correct,2023-10-02T09:00:30Z,",
    ]
    res = parse_log(io.StringIO(_ct(rows)), "ct-style")
    assert list(res.transactions["duration_s"]) == [5.5, 30.0]


def test_ir_style_json_lines_roundtrip_and_bad_json_rejected():
    lines = [
        '{"user_id": "s1", "section": "c1", "problem": "p1", "action_type": "hint", "time": "2023-10-02T09:00:00Z", "duration": 3.0}',
        "{broken",
        '{"user_id": "s1", "section": "c1", "problem": "p2", "action_type": "correct", "time": "2023-10-02T09:01:00Z", "duration": 60.0}',
    ]
    res = parse_log(io.StringIO("\n".join(lines)), "ir-style", reject_ceiling=0.5)
    assert len(res.transactions) == 2
    assert list(res.rejects["reason"]) == ["bad_json"]
    assert list(res.transactions["action"]) == ["hint_request", "attempt_correct"]


def test_tab_delimiter_is_autodetected():
    txt = "student_id\tclass_id\tproblem_id\taction\ttimestamp_iso8601\tduration_s\n" +\
          "s1\tc1\tp1\tcorrect\t2023-10-02T09:00:00Z\t1.0\n"
    res = parse_log(io.StringIO(txt), "ct-style")
    assert len(res.transactions) == 1


def test_canonical_csv_roundtrip_is_exact():
    rng = random.Random(7)
    rows = []
    for i in range(300):
        rows.append(
            "s%d,c%d,p%d,%s,2023-10-02T09:%02d:%02d.%03dZ,%d.%03d"
            % (
                rng.randrange(20),
                rng.randrange(3),
                rng.randrange(50),
                rng.choice(["correct", "incorrect", "hint"]),
                rng.randrange(60),
                rng.randrange(60),
                rng.randrange(1000),
                rng.randrange(120),
                rng.randrange(1000),
            )
        )
    first = parse_log(io.StringIO(_ct(rows)), "ct-style").transactions
    buf = io.StringIO()
    write_canonical(first, buf)
    buf.seek(0)
    assert buf.getvalue().splitlines()[0] == ",".join(CANONICAL_COLUMNS)
    second = read_canonical(io.StringIO(buf.getvalue()))
    pd.testing.assert_frame_equal(first, second)
    # And a second export is byte-identical.
    buf2 = io.StringIO()
    write_canonical(second, buf2)
    assert buf.getvalue() == buf2.getvalue()


def test_parse_is_deterministic_under_input_shuffle():
    rng = random.Random(11)
    rows = [
        f"s{rng.randrange(5)},c{rng.randrange(2)},p{rng.randrange(9)},correct,"
        f"2023-10-02T09:{i % 60:02d}:{rng.randrange(60):02d}Z,1.0"
        for i in range(200)
    ]
    a = parse_log(io.StringIO(_ct(rows)), "ct-style").transactions
    shuffled = rows[:]
    rng.shuffle(shuffled)
    b = parse_log(io.StringIO(_ct(shuffled)), "ct-style").transactions
    pd.testing.assert_frame_equal(a, b)


def test_join_outcomes_counts_roster_overlap():
    tx = parse_log(
        io.StringIO(_ct([f"s{i},c1,p1,correct,2023-10-02T09:00:{i:02d}Z,1.0" for i in range(10)])),
        "ct-style",
    ).transactions
    out = read_outcomes(
        io.StringIO(
            "student_id,prior_score,final_score\n"
            + "\n".join(f"s{i},{50 + i},{60 + i}" for i in range(4, 12))
        )
    )
    rep = join_outcomes(tx, out)
    # 10 log students (s0..s9), 8 outcome students (s4..s11), 6 shared.
    assert (rep.n_transactions_only, rep.n_outcomes_only, rep.n_both) == (4, 2, 6)
    assert rep.both == frozenset({f"s{i}" for i in range(4, 10)})


def test_outcomes_final_score_may_be_missing():
    out = read_outcomes(io.StringIO("student_id,prior_score,final_score\ns1,50,\ns2,60,70\n"))
    assert np.isnan(out["final_score"].iloc[0])
    assert out["final_score"].iloc[1] == 70.0
