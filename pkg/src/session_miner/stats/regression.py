"""OLS with a fully specified BIC convention, BIC-guided stepwise
selection, and VIF collinearity diagnostics.

BIC here is the Gaussian full-likelihood form

    BIC = n * (ln 2pi + ln(RSS/n) + 1) + (p + 2) * ln n

with p the number of slope terms (the +2 counts the intercept and the
noise variance), which makes model comparisons line up with mainstream
statistical environments.  Raftery's evidence bands classify a BIC drop:
under 2 weak, 2-6 positive, 6-10 strong, 10+ very strong.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats as sps

from ..errors import (
    InfiniteVIFError,
    InsufficientDataError,
    PerfectFitError,
    SingularDesignError,
)

BANDS = ("weak", "positive", "strong", "very_strong")


def bic_formula(n: int, rss: float, p: int) -> float:
    return n * (np.log(2 * np.pi) + np.log(rss / n) + 1.0) + (p + 2) * np.log(n)


def bic_band(delta: float) -> str:
    """Raftery band for a BIC improvement (negative deltas stay weak)."""
    if delta < 2:
        return "weak"
    if delta < 6:
        return "positive"
    if delta < 10:
        return "strong"
    return "very_strong"


@dataclass(frozen=True)
class BicVerdict:
    delta_bic: float
    band: str


@dataclass(frozen=True)
class RegressionFit:
    outcome: str
    predictors: tuple
    intercept: float
    coefficients: dict  # predictor -> slope
    n: int
    rss: float
    r2: float
    p_values: dict
    vif: dict
    df_resid: int

    @property
    def bic(self) -> float:
        if self.rss_is_zero:
            raise PerfectFitError(
                "RSS is zero: the model fits perfectly and its BIC is undefined"
            )
        return float(bic_formula(self.n, self.rss, len(self.predictors)))

    @property
    def rss_is_zero(self) -> bool:
        return self.rss <= 0.0


def _design(data: pd.DataFrame, predictors: tuple) -> np.ndarray:
    cols = [np.ones(len(data))] + [data[c].to_numpy(dtype=np.float64) for c in predictors]
    return np.column_stack(cols)


def ols(data: pd.DataFrame, outcome: str, predictors) -> RegressionFit:
    """Least squares of outcome on predictors plus an intercept.

    Standardize inputs upstream if standardized betas are wanted; this
    routine fits whatever columns it is given.  A perfect fit succeeds,
    but reading .bic then raises PerfectFitError.
    """
    predictors = tuple(predictors)
    n, p = len(data), len(predictors)
    if n <= p + 2:
        raise InsufficientDataError(f"need n > p+2, got n={n} with {p} predictors")
    y = data[outcome].to_numpy(dtype=np.float64)
    X = _design(data, predictors)
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        raise SingularDesignError(
            f"design matrix is rank deficient (rank {rank} < {X.shape[1]})"
        )
    resid = y - X @ beta
    rss = float(resid @ resid)
    tss = float(((y - y.mean()) ** 2).sum())
    # Perfect fits (relative to the outcome's own scale) are flagged so
    # BIC access fails loudly instead of returning -inf-ish garbage.
    if tss > 0 and rss <= 1e-12 * tss:
        rss = 0.0
    r2 = 1.0 - rss / tss if tss > 0 else 0.0

    df_resid = n - p - 1
    p_values = {}
    if rss > 0:
        sigma2 = rss / df_resid
        xtx_inv = np.linalg.inv(X.T @ X)
        se = np.sqrt(np.maximum(sigma2 * np.diag(xtx_inv), 0.0))
        t = np.divide(beta, se, out=np.zeros_like(beta), where=se > 0)
        pv = 2.0 * sps.t.sf(np.abs(t), df_resid)
        p_values = {name: float(pv[i + 1]) for i, name in enumerate(predictors)}
    else:
        p_values = {name: 0.0 for name in predictors}

    vifs = vif(data, predictors) if p >= 2 else {name: 1.0 for name in predictors}
    return RegressionFit(
        outcome=outcome,
        predictors=predictors,
        intercept=float(beta[0]),
        coefficients={name: float(beta[i + 1]) for i, name in enumerate(predictors)},
        n=n,
        rss=rss,
        r2=float(np.clip(r2, 0.0, 1.0)),
        p_values=p_values,
        vif=vifs,
        df_resid=df_resid,
    )


def vif(data: pd.DataFrame, predictors) -> dict:
    """VIF_j = 1/(1 - R2_j) of column j regressed on the other columns."""
    predictors = tuple(predictors)
    if len(predictors) < 2:
        raise InsufficientDataError("VIF needs at least 2 predictors")
    out = {}
    for j, name in enumerate(predictors):
        others = predictors[:j] + predictors[j + 1 :]
        yj = data[name].to_numpy(dtype=np.float64)
        Xj = _design(data, others)
        beta, _, _, _ = np.linalg.lstsq(Xj, yj, rcond=None)
        resid = yj - Xj @ beta
        rss = float(resid @ resid)
        tss = float(((yj - yj.mean()) ** 2).sum())
        if tss <= 0 or rss <= 1e-12 * tss:
            raise InfiniteVIFError(name)
        out[name] = float(1.0 / (rss / tss))
    return out


def add_one(data: pd.DataFrame, baseline: RegressionFit, candidate: str):
    """Fit baseline + one candidate and judge the BIC change.

    Returns (augmented fit, BicVerdict of BIC(baseline) - BIC(augmented)),
    positive delta meaning the candidate helped.
    """
    fit = ols(data, baseline.outcome, baseline.predictors + (candidate,))
    delta = baseline.bic - fit.bic
    return fit, BicVerdict(delta_bic=float(delta), band=bic_band(delta))


@dataclass(frozen=True)
class StepwiseStep:
    action: str  # "add" | "drop"
    predictor: str
    bic_before: float
    bic_after: float

    @property
    def delta_bic(self) -> float:
        return self.bic_before - self.bic_after

    @property
    def band(self) -> str:
        return bic_band(self.delta_bic)


@dataclass(frozen=True)
class StepwiseResult:
    direction: str
    fit: RegressionFit
    path: tuple = field(default_factory=tuple)  # of StepwiseStep

    def report(self) -> dict:
        """JSON-ready audit of the search."""
        return {
            "direction": self.direction,
            "path": [
                {
                    "action": s.action,
                    "predictor": s.predictor,
                    "bic_before": s.bic_before,
                    "bic_after": s.bic_after,
                    "delta_bic": s.delta_bic,
                    "band": s.band,
                }
                for s in self.path
            ],
            "final": {
                "predictors": list(self.fit.predictors),
                "coefficients": self.fit.coefficients,
                "intercept": self.fit.intercept,
                "p_values": self.fit.p_values,
                "vif": self.fit.vif,
                "r2": self.fit.r2,
                "bic": self.fit.bic,
                "n": self.fit.n,
            },
        }


def stepwise(
    data: pd.DataFrame,
    outcome: str,
    candidates,
    *,
    direction: str = "forward",
    always=(),
) -> StepwiseResult:
    """BIC stepwise selection; ``always`` columns are never dropped.

    forward: start from the always-set, repeatedly add the candidate with
    the largest BIC improvement while one improves.  backward: start from
    the full set, repeatedly drop the removable term whose removal most
    improves BIC.  Ties break on candidate name order, so reruns are
    reproducible.
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be forward or backward, got {direction!r}")
    always = tuple(always)
    candidates = tuple(sorted(set(candidates) - set(always)))

    if direction == "forward":
        current = always
        pool = list(candidates)
    else:
        current = always + candidates
        pool = list(candidates)

    fit = ols(data, outcome, current)
    path = []
    while True:
        best = None  # (bic, name, fit)
        if direction == "forward":
            for name in pool:
                try:
                    trial = ols(data, outcome, current + (name,))
                except SingularDesignError:
                    continue
                if best is None or trial.bic < best[0] - 1e-12:
                    best = (trial.bic, name, trial)
        else:
            for name in pool:
                kept = tuple(c for c in current if c != name)
                trial = ols(data, outcome, kept)
                if best is None or trial.bic < best[0] - 1e-12:
                    best = (trial.bic, name, trial)
        if best is None or best[0] >= fit.bic:
            break
        bic_before = fit.bic
        _, name, fit = best
        if direction == "forward":
            current = current + (name,)
        else:
            current = fit.predictors
        pool.remove(name)
        path.append(
            StepwiseStep(
                action="add" if direction == "forward" else "drop",
                predictor=name,
                bic_before=bic_before,
                bic_after=fit.bic,
            )
        )
        if not pool:
            break
    return StepwiseResult(direction=direction, fit=fit, path=tuple(path))
