import numpy as np
import pandas as pd
import pytest

from session_miner.errors import InsufficientDataError
from session_miner.gaming.tendency import (
    estimate_tendency,
    penalized_deviance,
)


def _labels(class_ids, student_ids, problem_ids, gamed):
    return pd.DataFrame(
        {
            "class_id": class_ids,
            "student_id": student_ids,
            "problem_id": problem_ids,
            "gamed": np.asarray(gamed, dtype=bool),
        }
    )


def _simulate(rng, n_students=120, n_problems=30, n_classes=4, beta0=-2.2,
              s2_class=0.2, s2_student=0.5, s2_problem=0.3):
    u_c = rng.normal(0, np.sqrt(s2_class), n_classes)
    u_s = rng.normal(0, np.sqrt(s2_student), n_students)
    u_p = rng.normal(0, np.sqrt(s2_problem), n_problems)
    cls_of = rng.integers(0, n_classes, n_students)
    s = np.repeat(np.arange(n_students), n_problems)
    p = np.tile(np.arange(n_problems), n_students)
    c = cls_of[s]
    eta = beta0 + u_c[c] + u_s[s] + u_p[p]
    y = rng.random(len(eta)) < 1 / (1 + np.exp(-eta))
    labels = _labels(
        [f"c{i}" for i in c], [f"s{i:04d}" for i in s], [f"p{i:03d}" for i in p], y
    )
    truth = pd.Series(u_s, index=[f"s{i:04d}" for i in range(n_students)])
    return labels, truth


def test_degenerate_all_clean_gives_zero_everything():
    labels = _labels(["c1"] * 6, ["s1", "s1", "s2", "s2", "s3", "s3"], list("pqrpqr"), [0] * 6)
    m = estimate_tendency(labels)
    assert m.degenerate and m.converged
    assert (m.tendency == 0).all()
    assert all(v == 0.0 for v in m.sigma2.values())
    assert m.beta0 < -2  # log-odds of a tiny smoothed rate


def test_degenerate_all_gamed_mirrors():
    labels = _labels(["c1"] * 4, ["s1", "s2", "s1", "s2"], list("ppqq"), [1] * 4)
    m = estimate_tendency(labels)
    assert m.degenerate and (m.tendency == 0).all() and m.beta0 > 2


def test_empty_labels_raise():
    with pytest.raises(InsufficientDataError):
        estimate_tendency(_labels([], [], [], []))


def test_effects_sum_to_zero_within_each_family():
    rng = np.random.default_rng(42)
    labels, _ = _simulate(rng, n_students=60, n_problems=20, n_classes=3)
    m = estimate_tendency(labels, tol=1e-10, max_iter=500)
    assert m.converged
    for f in m.families:
        e = m.effects[f].to_numpy()
        assert abs(e.sum()) < 1e-6 * max(1.0, np.abs(e).sum())


def _coordinate_oracle(labels, sigma2, n_sweeps=40):
    """Independent minimizer of the penalized deviance at fixed variances:
    cyclic per-coordinate ternary search, no IRLS anywhere."""
    fam_cols = {"class": "class_id", "student": "student_id", "problem": "problem_id"}
    y = labels["gamed"].to_numpy(dtype=np.float64)
    idx, counts = {}, {}
    for f, col in fam_cols.items():
        codes, uniq = pd.factorize(labels[col], sort=True)
        idx[f], counts[f] = codes, len(uniq)

    params = {"beta0": 0.0}
    for f in fam_cols:
        params.update({(f, j): 0.0 for j in range(counts[f])})

    def objective():
        eta = np.full(len(y), params["beta0"])
        for f in fam_cols:
            eta += np.array([params[(f, j)] for j in range(counts[f])])[idx[f]]
        mu = 1 / (1 + np.exp(-eta))
        mu = np.clip(mu, 1e-12, 1 - 1e-12)
        dev = -2 * (y * np.log(mu) + (1 - y) * np.log(1 - mu)).sum()
        pen = sum(
            params[(f, j)] ** 2 / sigma2[f] for f in fam_cols for j in range(counts[f])
        )
        return dev + pen

    def ternary(key, lo, hi, iters=70):
        for _ in range(iters):
            a = lo + (hi - lo) / 3
            b = hi - (hi - lo) / 3
            params[key] = a
            fa = objective()
            params[key] = b
            fb = objective()
            if fa < fb:
                hi = b
            else:
                lo = a
        params[key] = (lo + hi) / 2

    for _ in range(n_sweeps):
        for key in list(params):
            ternary(key, params[key] - 2.0, params[key] + 2.0)
    return params


def test_fit_matches_independent_coordinate_minimizer():
    rng = np.random.default_rng(7)
    n = 60
    labels = _labels(
        [f"c{i % 2}" for i in range(n)],
        [f"s{i % 5}" for i in range(n)],
        [f"p{(i * 7) % 3}" for i in range(n)],
        (rng.random(n) < 0.35).astype(int),
    )
    sigma2 = {"class": 0.4, "student": 0.6, "problem": 0.3}
    m = estimate_tendency(labels, fixed_variances=sigma2, tol=1e-12, max_iter=2000)
    oracle = _coordinate_oracle(labels, sigma2)

    assert m.beta0 == pytest.approx(oracle["beta0"], abs=2e-3)
    for f in ("class", "student", "problem"):
        levels = sorted(labels[{"class": "class_id", "student": "student_id", "problem": "problem_id"}[f]].unique())
        for j, lev in enumerate(levels):
            assert m.effects[f][lev] == pytest.approx(oracle[(f, j)], abs=2e-3)
    # and the objectives agree to tighter precision than the params
    assert penalized_deviance(m, labels) == pytest.approx(
        _oracle_objective_value(labels, sigma2, oracle), rel=1e-6
    )


def _oracle_objective_value(labels, sigma2, params):
    fam_cols = {"class": "class_id", "student": "student_id", "problem": "problem_id"}
    y = labels["gamed"].to_numpy(dtype=np.float64)
    eta = np.full(len(y), params["beta0"])
    for f, col in fam_cols.items():
        levels = sorted(labels[col].unique())
        lookup = {lev: params[(f, j)] for j, lev in enumerate(levels)}
        eta += labels[col].map(lookup).to_numpy()
    mu = np.clip(1 / (1 + np.exp(-eta)), 1e-12, 1 - 1e-12)
    dev = -2 * (y * np.log(mu) + (1 - y) * np.log(1 - mu)).sum()
    pen = sum(v ** 2 / sigma2[f] for (f, _j), v in
              ((k, v) for k, v in params.items() if isinstance(k, tuple)))
    return dev + pen


def test_recovers_planted_student_tendencies():
    rng = np.random.default_rng(2024)
    labels, truth = _simulate(rng, n_students=150, n_problems=40, n_classes=5)
    m = estimate_tendency(labels)
    assert m.converged
    est = m.tendency.reindex(truth.index)
    r = np.corrcoef(est.to_numpy(), truth.to_numpy())[0, 1]
    assert r > 0.7
    # variance estimate lands in the right ballpark
    assert 0.2 < m.sigma2["student"] < 1.0


def test_shrinkage_pulls_sparse_students_toward_zero():
    # one student gamed 3 of 3 encounters, another 30 of 30: the sparse
    # student's effect must be the smaller one
    rows = []
    for i in range(3):
        rows.append(("c1", "rare", f"p{i}", 1))
    for i in range(30):
        rows.append(("c1", "heavy", f"p{i}", 1))
    for s in range(8):  # background students keep the rate informative
        for i in range(30):
            rows.append(("c1", f"bg{s}", f"p{i}", 0))
    labels = _labels(*zip(*rows))
    m = estimate_tendency(labels)
    assert 0 < m.tendency["rare"] < m.tendency["heavy"]
    assert m.se["student"]["rare"] > m.se["student"]["heavy"] > 0


def test_non_convergence_is_reported_honestly():
    rng = np.random.default_rng(3)
    labels, _ = _simulate(rng, n_students=40, n_problems=10, n_classes=2)
    m = estimate_tendency(labels, max_iter=1)
    assert not m.converged and m.n_iter == 1
