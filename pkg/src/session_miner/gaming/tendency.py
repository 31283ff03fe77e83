"""Latent gaming tendency via a crossed random-intercept logistic model.

Every encounter label is modeled as Bernoulli with
logit P(gamed) = b0 + u_class + u_student + u_problem, each family of
effects penalized as N(0, sigma2_family).  The fit alternates penalized
IRLS (the inner normal equations are solved by block Gauss-Seidel, one
bincount per family per sweep, so the cost is linear in encounters) with
EM-style variance updates that use the diagonal curvature:

    sigma2_f <- ( sum_j u_fj^2 + sum_j 1/(W_fj + 1/sigma2_f) ) / m_f

At the penalized optimum each family's effects sum to zero: the intercept
gradient gives sum(y - mu) = 0 and the family gradients give
sum_j u_fj = sigma2_f * sum(y - mu).

A degenerate label set (all gamed or none) carries no signal: every
effect is 0, variances are 0 and only the intercept reflects the rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ..errors import InsufficientDataError

FAMILIES = ("class", "student", "problem")
_FAMILY_COLS = {"class": "class_id", "student": "student_id", "problem": "problem_id"}

# Boundary handling: a variance component heading to 0 shrinks the EM
# update harmonically (1/sigma2 grows by roughly the summed IRLS weight
# per step) and would never meet a relative tolerance.  Such a component
# is detectable because its update is almost entirely the posterior
# carry-over term, with the squared-effects term contributing nothing;
# at a genuine interior optimum the squared effects carry a large share.
# When the signature appears (or the value is already negligible) the
# component clamps to exactly 0 and its effects freeze.
_VARIANCE_FLOOR = 1e-4
_BOUNDARY_CAP = 0.05  # only variances below this may be clamped early
_BOUNDARY_SHARE = 0.05  # max share of mean(u^2) in the update to clamp


@dataclass
class TendencyModel:
    beta0: float
    sigma2: dict
    effects: dict  # family -> pd.Series of effects indexed by level id
    se: dict  # family -> pd.Series, approximate posterior sd
    converged: bool
    n_iter: int
    degenerate: bool = False
    families: tuple = FAMILIES

    @property
    def tendency(self) -> pd.Series:
        """Per-student latent gaming tendency (log-odds scale)."""
        return self.effects["student"]


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -30, 30)))


def estimate_tendency(
    labels: pd.DataFrame,
    *,
    families: tuple = FAMILIES,
    tol: float = 1e-6,
    max_iter: int = 200,
    inner_sweeps: int = 5,
    fixed_variances: dict | None = None,
    init_variance: float = 0.5,
) -> TendencyModel:
    """Fit the crossed random-intercept model to encounter labels.

    labels needs the id columns for the requested families plus a boolean
    ``gamed``.  fixed_variances pins named family variances instead of
    updating them (useful for calibration studies).  Convergence is
    declared when the relative change of (b0, sigma2) drops below tol;
    the model is returned either way with ``converged`` set honestly.

    Encounters sharing one (class, student, problem) cell are collapsed
    into a binomial count first; the IRLS algebra is identical and the
    iteration cost stops scaling with the raw encounter count.
    """
    if not len(labels):
        raise InsufficientDataError("no encounters to fit the tendency model on")
    group_cols = [_FAMILY_COLS[f] for f in families]
    cells = (
        labels.groupby(group_cols, sort=True)
        .agg(_k=("gamed", "sum"), _n=("gamed", "size"))
        .reset_index()
    )
    k_cell = cells["_k"].to_numpy(dtype=np.float64)
    n_cell = cells["_n"].to_numpy(dtype=np.float64)
    n_total = float(n_cell.sum())
    idx, levels, counts = {}, {}, {}
    for f in families:
        codes, uniq = pd.factorize(cells[_FAMILY_COLS[f]], sort=True)
        idx[f], levels[f] = codes, uniq
        counts[f] = len(uniq)

    rate = float(k_cell.sum() / n_total)
    if rate in (0.0, 1.0):
        # Laplace-smoothed intercept keeps the rate finite on the
        # log-odds scale; everything else is exactly zero.
        k = k_cell.sum()
        p = (k + 0.5) / (n_total + 1.0)
        eff = {f: pd.Series(np.zeros(counts[f]), index=levels[f]) for f in families}
        ses = {f: pd.Series(np.zeros(counts[f]), index=levels[f]) for f in families}
        return TendencyModel(
            beta0=float(np.log(p / (1 - p))),
            sigma2={f: 0.0 for f in families},
            effects=eff,
            se=ses,
            converged=True,
            n_iter=0,
            degenerate=True,
            families=tuple(families),
        )

    fixed_variances = fixed_variances or {}
    beta0 = float(np.log(rate / (1 - rate)))
    u = {f: np.zeros(counts[f]) for f in families}
    sigma2 = {f: float(fixed_variances.get(f, init_variance)) for f in families}

    def _pack():
        return np.concatenate([[beta0], [sigma2[f] for f in families]] + [u[f] for f in families])

    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        prev = _pack()
        eta = beta0 + sum(u[f][idx[f]] for f in families)
        mu = _sigmoid(eta)
        v = np.maximum(mu * (1.0 - mu), 1e-10)
        w = n_cell * v
        z = eta + (k_cell / n_cell - mu) / v
        w_sum = w.sum()
        wf = {f: np.bincount(idx[f], weights=w, minlength=counts[f]) for f in families}

        for _ in range(inner_sweeps):
            resid = z - beta0 - sum(u[f][idx[f]] for f in families)
            beta0 = beta0 + float((w * resid).sum() / w_sum)
            for f in families:
                if sigma2[f] == 0.0:
                    u[f][:] = 0.0
                    continue
                r = z - beta0 - sum(u[g][idx[g]] for g in families if g != f)
                num = np.bincount(idx[f], weights=w * r, minlength=counts[f])
                u[f] = num / (wf[f] + 1.0 / sigma2[f])
            # project each family's mean into the intercept: the fit is
            # flat along (beta0 + c, u - c) except for the penalty, which
            # is minimal at mean-zero effects; jumping there directly
            # avoids a slow Gauss-Seidel crawl along that ridge
            for f in families:
                if sigma2[f] == 0.0:
                    continue
                c = float(u[f].mean())
                if c != 0.0:
                    u[f] -= c
                    beta0 += c

        for f in families:
            if f in fixed_variances or sigma2[f] == 0.0:
                continue
            s2_data = float((u[f] ** 2).sum() / counts[f])
            s2_carry = float((1.0 / (wf[f] + 1.0 / sigma2[f])).sum() / counts[f])
            s2 = s2_data + s2_carry
            if s2 < _VARIANCE_FLOOR or (
                s2 < _BOUNDARY_CAP and s2_data < _BOUNDARY_SHARE * s2_carry
            ):
                s2 = 0.0
                u[f][:] = 0.0
            sigma2[f] = s2
        cur = _pack()
        # relative change of the full parameter vector; a norm ratio so
        # that effects sitting numerically at zero cannot stall it
        if np.linalg.norm(cur - prev) < tol * (np.linalg.norm(prev) + 1e-12):
            converged = True
            break

    ses = {
        f: pd.Series(np.sqrt(1.0 / (wf[f] + 1.0 / max(sigma2[f], 1e-12))), index=levels[f])
        for f in families
    }
    eff = {f: pd.Series(u[f], index=levels[f]) for f in families}
    return TendencyModel(
        beta0=beta0,
        sigma2=sigma2,
        effects=eff,
        se=ses,
        converged=converged,
        n_iter=it,
        families=tuple(families),
    )


def penalized_deviance(model: TendencyModel, labels: pd.DataFrame) -> float:
    """Objective the fit minimizes at fixed variances; exposed for audits."""
    y = labels["gamed"].to_numpy(dtype=np.float64)
    eta = np.full(len(labels), model.beta0)
    for f in model.families:
        eta += model.effects[f].reindex(labels[_FAMILY_COLS[f]]).to_numpy()
    mu = _sigmoid(eta)
    dev = -2.0 * (y * np.log(mu) + (1 - y) * np.log(1 - mu)).sum()
    pen = sum(
        (model.effects[f].to_numpy() ** 2).sum() / model.sigma2[f]
        for f in model.families
        if model.sigma2[f] > 0
    )
    return float(dev + pen)
