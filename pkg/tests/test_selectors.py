import warnings

import numpy as np
import pytest

from dpsis.data import Dataset, SynthSpec, gen_instability_w1, gen_synth_fan, preprocess
from dpsis.selectors import (
    ConvergenceWarning,
    LassoParams,
    TwoStageParams,
    block_bounds,
    block_support_counts,
    correlation_scores,
    default_block_count,
    dp_sis,
    lasso_cd,
    lasso_topk,
    selection_indices,
    sis,
    top_k_indices,
    two_stage_select,
)


def _random_ds(n, d, seed, w=None, noise=0.0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    w = np.zeros(d) if w is None else np.asarray(w, dtype=float)
    y = X @ w + noise * rng.standard_normal(n)
    return preprocess(Dataset(X=X, y=y))


# ---- SIS ------------------------------------------------------------------

def test_sis_identity_example():
    ds = Dataset(X=[[1.0, 0.0], [0.0, 1.0]], y=[1.0, 0.0], preprocessed=True)
    assert list(sis(ds, 1)) == [0]
    assert list(sis(ds, 2)) == [0, 1]


def test_top_k_ties_go_to_lower_index():
    assert list(top_k_indices([1.0, 3.0, 3.0, 3.0], 2)) == [1, 2]
    assert list(top_k_indices([0.0, 0.0, 0.0], 2)) == [0, 1]


def test_sis_rejects_raw_data_and_bad_k():
    raw = Dataset(X=np.eye(3), y=[1.0, 0.0, 0.0])
    with pytest.raises(ValueError, match="preprocess"):
        sis(raw, 1)
    ds = preprocess(raw)
    with pytest.raises(ValueError):
        sis(ds, 0)
    with pytest.raises(ValueError):
        sis(ds, 4)


def test_standardized_sis_ranks_by_correlation():
    ds = _random_ds(60, 12, 1, w=[2, -1, 0.5] + [0] * 9, noise=0.3)
    corr = np.abs([np.corrcoef(ds.X[:, j], ds.y)[0, 1] for j in range(12)])
    assert list(sis(ds, 3, standardize=True)) == list(top_k_indices(corr, 3))


# ---- DP-SIS ---------------------------------------------------------------

def test_dp_sis_refuses_unpreprocessed_data():
    raw = Dataset(X=np.random.default_rng(0).normal(size=(10, 4)), y=np.arange(10.0))
    with pytest.raises(ValueError, match="preprocess"):
        dp_sis(raw, 2, 1.0, rng=0)


def test_dp_sis_matches_sis_in_noiseless_limit():
    ds = _random_ds(80, 30, 2, w=[1.5, -1.2, 1.0, 0.8] + [0] * 26, noise=0.2)
    scores = np.sort(correlation_scores(ds))[::-1]
    assert scores[3] > scores[4]
    expected = set(sis(ds, 4).tolist())
    agree = sum(dp_sis(ds, 4, 1e6, rng=s).indices == expected for s in range(1000))
    assert agree / 1000 >= 0.999


def test_dp_sis_result_fields():
    ds = _random_ds(30, 10, 3, w=[1] + [0] * 9)
    r = dp_sis(ds, 3, 2.0, gamma=0.3, rng=17)
    assert r.method == "dp-sis" and r.seed == 17
    assert r.params.gamma == 0.3 and len(r.indices) == 3
    assert list(selection_indices(r)) == sorted(r.indices)
    with pytest.raises(ValueError):
        dp_sis(ds, 10, 1.0, rng=0)


# ---- LASSO ----------------------------------------------------------------

def test_lasso_zero_above_lambda_max():
    ds = _random_ds(50, 20, 4, w=[1, 2] + [0] * 18, noise=0.1)
    lam_max = np.abs(ds.X.T @ ds.y).max() / ds.n
    for lam in (lam_max, 1.5 * lam_max):
        fit = lasso_cd(ds, LassoParams(lam=lam))
        assert np.all(fit.weights == 0.0) and fit.converged and fit.n_iter == 0
    assert np.any(lasso_cd(ds, LassoParams(lam=0.9 * lam_max)).weights != 0)


def test_lasso_matches_least_squares_at_zero_lambda():
    ds = _random_ds(120, 8, 5, w=np.linspace(-1, 1, 8), noise=0.5)
    fit = lasso_cd(ds, LassoParams(lam=0.0, tol=1e-12, max_iter=100_000))
    ls, *_ = np.linalg.lstsq(ds.X, ds.y, rcond=None)
    assert fit.converged
    assert np.max(np.abs(fit.weights - ls)) < 1e-3


def test_lasso_noiseless_support_recovery():
    w = np.zeros(50)
    w[[3, 17, 41]] = [1.0, -2.0, 1.5]
    ds = _random_ds(200, 50, 6, w=w)
    fit = lasso_cd(ds, LassoParams(lam=1e-3, tol=1e-8, max_iter=10_000))
    assert {3, 17, 41} <= set(fit.support().tolist())


@pytest.mark.filterwarnings("ignore::dpsis.selectors.ConvergenceWarning")
@pytest.mark.parametrize("seed", range(5))
def test_lasso_objective_monotone(seed):
    ds = _random_ds(40, 60, seed, w=[1, -1, 1] + [0] * 57, noise=0.5)
    for lam in (0.0, 0.001, 0.02):
        fit = lasso_cd(ds, LassoParams(lam=lam, tol=1e-10, max_iter=500))
        assert np.all(np.diff(fit.objective) <= 1e-12)


def test_lasso_flags_nonconvergence():
    ds = _random_ds(40, 60, 9, w=[1, -1, 1] + [0] * 57, noise=0.5)
    with pytest.warns(ConvergenceWarning):
        fit = lasso_cd(ds, LassoParams(lam=0.0, tol=1e-14, max_iter=2))
    assert not fit.converged and fit.n_iter == 2 and len(fit.objective) == 3


def test_lasso_params_validation():
    with pytest.raises(ValueError):
        LassoParams(lam=-1)
    with pytest.raises(ValueError):
        LassoParams(tol=0)
    with pytest.raises(ValueError):
        LassoParams(max_iter=0)


def test_lasso_topk_orders_by_magnitude():
    # Orthogonal design: the LASSO solution is the soft-thresholded X^T y / N.
    X = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0], [0, 0, 1.0, 0], [0, 0, 0, 1.0]]) * 2.0
    y = np.array([0.45, 0.0, 0.25, 0.0])
    ds = Dataset(X=X, y=y, preprocessed=True)
    w = lasso_cd(ds, LassoParams(lam=0.0, tol=1e-12)).weights
    assert np.allclose(w, [0.225, 0, 0.125, 0])
    assert list(lasso_topk(ds, LassoParams(lam=0.0), 2)) == [0, 2]


def test_lasso_topk_pads_with_warning():
    ds = _random_ds(30, 10, 7, w=[0, 0, 3] + [0] * 7, noise=0.01)
    lam = 0.8 * np.abs(ds.X.T @ ds.y).max() / ds.n
    with pytest.warns(UserWarning, match="padding"):
        chosen = lasso_topk(ds, LassoParams(lam=lam), 3)
    assert list(chosen) == [0, 1, 2]


def test_lasso_topk_recovers_fan_support_at_small_lambda():
    hits = 0
    for seed in range(30):
        ds = gen_synth_fan(SynthSpec(n=100, d=2000, seed=seed))
        hits += set(lasso_topk(ds, LassoParams(lam=0.01), 8).tolist()) == set(ds.true_support)
    assert hits > 15


@pytest.mark.xfail(strict=True, reason="lambda=0.1 exceeds ||X^T y||_inf / N on most max-norm "
                   "Fan datasets, so the fit is all-zero (0/100 seeds recover the support)")
def test_lasso_topk_recovers_fan_support_at_default_lambda():
    hits = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for seed in range(100):
            ds = gen_synth_fan(SynthSpec(n=100, d=2000, seed=seed))
            hits += set(lasso_topk(ds, LassoParams(lam=0.1), 8).tolist()) == set(ds.true_support)
    assert hits > 50


# ---- two-stage ------------------------------------------------------------

def test_block_bounds_are_contiguous_and_balanced():
    for n in (10, 17, 100, 101):
        for bc in range(1, 11):
            bounds = block_bounds(n, bc)
            assert bounds[0][0] == 0 and bounds[-1][1] == n
            assert all(a[1] == b[0] for a, b in zip(bounds, bounds[1:]))
            sizes = [hi - lo for lo, hi in bounds]
            assert max(sizes) - min(sizes) <= 1
    assert default_block_count(100) == 10 and default_block_count(99) == 9


def test_single_block_equals_one_lasso_fit():
    ds = _random_ds(60, 25, 8, w=[2, 0, -1.5, 0, 1] + [0] * 20, noise=0.2)
    lasso = LassoParams(lam=0.01)
    chosen = two_stage_select(ds, TwoStageParams(k=3, block_count=1, lasso=lasso))
    support = lasso_cd(ds, lasso).support()
    assert set(chosen.tolist()) <= set(support.tolist())
    counts = block_support_counts(ds, 1, lasso)
    assert set(np.flatnonzero(counts).tolist()) == set(support.tolist())


def test_counts_bounded_and_row_sensitivity_one():
    rng = np.random.default_rng(10)
    for trial in range(5):
        ds = _random_ds(36, 15, trial, w=[1, -1, 1] + [0] * 12, noise=0.5)
        lasso = LassoParams(lam=0.02)
        base = block_support_counts(ds, 6, lasso)
        assert np.all((base >= 0) & (base <= 6))
        for _ in range(4):
            row = int(rng.integers(ds.n))
            X, y = ds.X.copy(), ds.y.copy()
            X[row] = rng.uniform(-1, 1, ds.d)
            y[row] = rng.uniform(-1, 1)
            moved = block_support_counts(ds.replace(X=X, y=y), 6, lasso)
            assert np.max(np.abs(moved - base)) <= 1


def test_private_two_stage_noiseless_limit():
    ds = _random_ds(64, 20, 11, w=[1.5, -1, 1] + [0] * 17, noise=0.3)
    lasso = LassoParams(lam=0.01)
    counts = block_support_counts(ds, 8, lasso)
    if np.sort(counts)[::-1][2] == np.sort(counts)[::-1][3]:
        pytest.skip("tied counts at the k boundary")
    exact = set(two_stage_select(ds, TwoStageParams(k=3, block_count=8, lasso=lasso)).tolist())
    private = TwoStageParams(k=3, block_count=8, lasso=lasso, private_selection=True, epsilon=1e6)
    agree = sum(set(two_stage_select(ds, private, rng=s).tolist()) == exact for s in range(200))
    assert agree == 200


def test_two_stage_errors():
    ds = _random_ds(10, 5, 0, w=[1, 0, 0, 0, 0])
    with pytest.raises(ValueError, match="fewer blocks"):
        two_stage_select(ds, TwoStageParams(k=2, block_count=6))
    with pytest.raises(ValueError):
        TwoStageParams(k=2, private_selection=True)
    with pytest.raises(ValueError):
        TwoStageParams(k=0)
    raw = Dataset(X=np.eye(4), y=np.ones(4))
    with pytest.raises(ValueError, match="preprocess"):
        two_stage_select(raw, TwoStageParams(k=1, block_count=1))


def test_two_stage_less_stable_than_sis_on_w1():
    sis_hits = ts_hits = 0
    for seed in range(100):
        ds = preprocess(gen_instability_w1(seed))
        sis_hits += len(set(sis(ds, 5, standardize=True).tolist()) & set(range(5)))
        ts_hits += len(set(two_stage_select(ds, TwoStageParams(k=5)).tolist()) & set(range(5)))
    assert ts_hits < sis_hits


@pytest.mark.xfail(strict=True, reason="the four other unit-weight features dominate var(y); "
                   "joint recovery of all five is ~0.85, below 0.95")
def test_sis_jointly_recovers_w1_support():
    hits = 0
    for seed in range(1000):
        ds = preprocess(gen_instability_w1(seed))
        hits += tuple(sis(ds, 5, standardize=True)) == (0, 1, 2, 3, 4)
    assert hits / 1000 >= 0.95
