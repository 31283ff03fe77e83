"""Reliability of monthly measures as a students x months G-study.

The two-way crossed random-effects decomposition splits a measure's
variance into student, month and residual components by the method of
moments.  On a balanced complete table the estimators are the classical
closed forms

    sigma2_res = MS_res
    sigma2_student = (MS_student - MS_res) / n_months
    sigma2_month = (MS_month - MS_res) / n_students

and with missing cells the per-facet counts are replaced by harmonic
means (the result is flagged balanced=False).  Negative estimates are
truncated at zero.  The reliability coefficients are

    G = sigma2_student / (sigma2_student + sigma2_res)
    phi = sigma2_student / (sigma2_student + sigma2_res + |sigma2_month|)

so phi <= G always holds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..errors import DegenerateVarianceError, InsufficientDataError


@dataclass(frozen=True)
class VarianceDecomposition:
    sigma2_student: float
    sigma2_month: float
    sigma2_residual: float
    n_students: int
    n_months: int
    balanced: bool
    truncated: bool
    G: float
    phi: float


def variance_components(
    panel: pd.DataFrame,
    value_col: str = "value",
    *,
    student_col: str = "student_id",
    month_col: str = "month",
) -> VarianceDecomposition:
    """Decompose one measure column of a (student, month) panel.

    Rows with a missing value are dropped; duplicate (student, month)
    cells are averaged first.  Requires at least 2 students, 2 months and
    a positive residual degrees-of-freedom count.
    """
    d = panel[[student_col, month_col, value_col]].dropna(subset=[value_col])
    d = d.groupby([student_col, month_col], sort=False)[value_col].mean().reset_index()
    students = d[student_col].unique()
    months = d[month_col].unique()
    n_s, n_m, n = len(students), len(months), len(d)
    if n_s < 2 or n_m < 2:
        raise InsufficientDataError(
            f"G-study needs >=2 students and >=2 months, got {n_s} x {n_m}"
        )
    df_res = n - n_s - n_m + 1
    if df_res <= 0:
        raise InsufficientDataError("not enough overlapping observations for a residual term")

    x = d[value_col].to_numpy(dtype=np.float64)
    grand = x.mean()
    si = d.groupby(student_col, sort=False)[value_col]
    mi = d.groupby(month_col, sort=False)[value_col]
    s_mean, s_n = si.mean(), si.size()
    m_mean, m_n = mi.mean(), mi.size()

    ss_student = float((s_n * (s_mean - grand) ** 2).sum())
    ss_month = float((m_n * (m_mean - grand) ** 2).sum())
    cell = (
        x
        - s_mean.reindex(d[student_col]).to_numpy()
        - m_mean.reindex(d[month_col]).to_numpy()
        + grand
    )
    ss_res = float((cell**2).sum())

    ms_student = ss_student / (n_s - 1)
    ms_month = ss_month / (n_m - 1)
    ms_res = ss_res / df_res

    balanced = n == n_s * n_m
    # Harmonic-mean counts; on a balanced table these are exactly n_m, n_s.
    h_months = n_s / float((1.0 / s_n).sum())
    h_students = n_m / float((1.0 / m_n).sum())

    raw_s = (ms_student - ms_res) / h_months
    raw_m = (ms_month - ms_res) / h_students
    truncated = raw_s < 0 or raw_m < 0
    s2_s = max(raw_s, 0.0)
    s2_m = max(raw_m, 0.0)
    s2_res = ms_res

    denom = s2_s + s2_res
    if denom == 0:
        raise DegenerateVarianceError("student and residual variance are both zero; G undefined")
    g = s2_s / denom
    phi = s2_s / (denom + abs(s2_m))
    return VarianceDecomposition(
        sigma2_student=s2_s,
        sigma2_month=s2_m,
        sigma2_residual=s2_res,
        n_students=n_s,
        n_months=n_m,
        balanced=balanced,
        truncated=truncated,
        G=g,
        phi=phi,
    )
