"""Feature selectors: SIS, DP-SIS, LASSO and the two-stage block baseline."""

import dataclasses
import math
import warnings

import numba
import numpy as np

from dpsis.data import standardize_columns
from dpsis.lipschitz import MechanismParams, ScoreVector, SelectionResult, lipschitz_topk
from dpsis.seeding import make_rng


class ConvergenceWarning(UserWarning):
    pass


@dataclasses.dataclass(frozen=True)
class LassoParams:
    lam: float = 0.1
    tol: float = 1e-4
    max_iter: int = 1000
    support_threshold: float = 1e-6

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclasses.dataclass(frozen=True)
class TwoStageParams:
    """Two-stage baseline settings; ``block_count=None`` means ``floor(sqrt(N))``."""

    k: int
    block_count: int = None
    lasso: LassoParams = LassoParams()
    private_selection: bool = False
    epsilon: float = None
    gamma: float = 0.5

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.block_count is not None and self.block_count < 1:
            raise ValueError("block_count must be at least 1")
        if self.private_selection and (self.epsilon is None or not self.epsilon > 0):
            raise ValueError("private selection needs a positive epsilon")


@dataclasses.dataclass(frozen=True)
class LassoFit:
    weights: np.ndarray
    n_iter: int
    converged: bool
    objective: np.ndarray  # value before the first sweep, then after each sweep

    def support(self, threshold=1e-6):
        return np.flatnonzero(np.abs(self.weights) > threshold)


def _require_preprocessed(ds, what):
    if not ds.preprocessed:
        raise ValueError(
            f"{what} needs a preprocessed dataset (centered columns, max-norm <= 1); "
            "call dpsis.data.preprocess first")


def top_k_indices(scores, k):
    """Indices of the ``k`` largest scores, ties to the smaller index."""
    return np.sort(np.argsort(-np.asarray(scores), kind="stable")[:k])


def correlation_scores(ds):
    """``|x_(i)^T y|`` for every column."""
    return np.abs(ds.X.T @ ds.y)


def sis(ds, k, standardize=False):
    """Non-private sure independence screening.

    With ``standardize=True`` columns are rescaled to unit variance before
    scoring, i.e. features are ranked by absolute sample correlation rather
    than by the max-norm-scaled inner product.
    """
    _require_preprocessed(ds, "sis")
    if not 1 <= k <= ds.d:
        raise ValueError(f"k must lie in [1, d={ds.d}], got {k}")
    if standardize:
        scores = np.abs(standardize_columns(ds.X).T @ ds.y)
    else:
        scores = correlation_scores(ds)
    return top_k_indices(scores, k)


def dp_sis(ds, k, epsilon, gamma=0.5, rng=None):
    """Epsilon-DP SIS: correlation scores with sensitivity 1 fed to the Lipschitz mechanism."""
    _require_preprocessed(ds, "dp_sis")
    params = MechanismParams(k=k, epsilon=epsilon, gamma=gamma)
    params.check(ds.d)
    result = lipschitz_topk(ScoreVector(correlation_scores(ds), 1.0), params, rng)
    return dataclasses.replace(result, method="dp-sis")


@numba.njit(cache=True)
def _cd_kernel(X, y, lam, tol, max_iter, w):
    n, d = X.shape
    r = y - X @ w
    sq = np.empty(d)
    for j in range(d):
        sq[j] = X[:, j] @ X[:, j] / n
    objective = np.empty(max_iter + 1)
    objective[0] = 0.5 * (r @ r) / n + lam * np.abs(w).sum()
    n_iter = 0
    converged = False
    for sweep in range(max_iter):
        max_step = 0.0
        for j in range(d):
            if sq[j] == 0.0:
                continue
            old = w[j]
            rho = X[:, j] @ r / n + sq[j] * old
            if rho > lam:
                new = (rho - lam) / sq[j]
            elif rho < -lam:
                new = (rho + lam) / sq[j]
            else:
                new = 0.0
            if new != old:
                r -= (new - old) * X[:, j]
                w[j] = new
                step = abs(new - old)
                if step > max_step:
                    max_step = step
        n_iter = sweep + 1
        objective[n_iter] = 0.5 * (r @ r) / n + lam * np.abs(w).sum()
        if max_step < tol:
            converged = True
            break
    return w, n_iter, converged, objective[:n_iter + 1]


def lasso_cd(ds, params=LassoParams()):
    """Minimizes ``(1/(2N)) ||y - Xw||^2 + lam ||w||_1`` by cyclic coordinate descent.

    Stops once a full sweep moves no coordinate by more than ``tol``. Hitting
    ``max_iter`` first emits a :class:`ConvergenceWarning`; the fit is still
    returned with ``converged=False``.
    """
    _require_preprocessed(ds, "lasso_cd")
    return _lasso(ds.X, ds.y, params)


def _lasso(X, y, params):
    n = X.shape[0]
    # KKT: w = 0 is optimal once lam reaches ||X^T y||_inf / N. Checked up
    # front so rounding inside the sweep cannot leave float dust.
    if params.lam >= np.abs(X.T @ y).max() / n:
        obj = 0.5 * float(y @ y) / n
        return LassoFit(weights=np.zeros(X.shape[1]), n_iter=0, converged=True,
                        objective=np.array([obj]))
    X = np.asfortranarray(X, dtype=float)
    w, n_iter, converged, objective = _cd_kernel(
        X, np.ascontiguousarray(y, dtype=float), float(params.lam), float(params.tol),
        int(params.max_iter), np.zeros(X.shape[1]))
    if not converged:
        warnings.warn(f"coordinate descent stopped after {n_iter} sweeps without "
                      f"reaching tol={params.tol}", ConvergenceWarning, stacklevel=3)
    return LassoFit(weights=w, n_iter=int(n_iter), converged=bool(converged),
                    objective=objective.copy())


def lasso_topk(ds, params, k):
    """The ``k`` largest-magnitude LASSO coefficients.

    When fewer than ``k`` coefficients are nonzero the set is padded with the
    lowest-index zero-coefficient features and a warning is issued.
    """
    if not 1 <= k <= ds.d:
        raise ValueError(f"k must lie in [1, d={ds.d}], got {k}")
    w = lasso_cd(ds, params).weights
    nonzero = int(np.sum(np.abs(w) > params.support_threshold))
    if nonzero < k:
        warnings.warn(f"only {nonzero} nonzero LASSO coefficients for k={k}; "
                      "padding with lowest-index features", stacklevel=2)
    return top_k_indices(np.abs(w), k)


def lasso_ranking(ds, params):
    """All features ordered by descending ``|w|`` (ties to the smaller index)."""
    w = lasso_cd(ds, params).weights
    return np.argsort(-np.abs(w), kind="stable")


def block_bounds(n, block_count):
    """Contiguous row blocks whose sizes differ by at most one."""
    edges = [int(n * b // block_count) for b in range(block_count + 1)]
    return list(zip(edges[:-1], edges[1:]))


def default_block_count(n):
    return max(1, math.isqrt(n))


def block_support_counts(ds, block_count=None, lasso=LassoParams()):
    """How many block-wise LASSO fits include each feature in their support."""
    _require_preprocessed(ds, "two-stage selection")
    block_count = block_count or default_block_count(ds.n)
    if ds.n < block_count:
        raise ValueError(f"{ds.n} rows cannot form {block_count} blocks")
    counts = np.zeros(ds.d, dtype=np.int64)
    for lo, hi in block_bounds(ds.n, block_count):
        if hi - lo < 2:
            raise ValueError(
                f"block of {hi - lo} row(s); use more rows or fewer blocks "
                f"(N={ds.n}, block_count={block_count})")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            fit = _lasso(ds.X[lo:hi], ds.y[lo:hi], lasso)
        counts[fit.support(lasso.support_threshold)] += 1
    return counts


def select_from_counts(counts, params, rng=None):
    """Top-k of the block counts, privately (sensitivity 1) or exactly."""
    if params.private_selection:
        mech = MechanismParams(k=params.k, epsilon=params.epsilon, gamma=params.gamma)
        return np.array(sorted(lipschitz_topk(ScoreVector(counts, 1.0), mech, rng).indices))
    return top_k_indices(counts, params.k)


def two_stage_select(ds, params, rng=None):
    """Block-LASSO support voting followed by top-k of the vote counts."""
    counts = block_support_counts(ds, params.block_count, params.lasso)
    if params.private_selection:
        MechanismParams(params.k, params.epsilon, params.gamma).check(ds.d)
    elif params.k > ds.d:
        raise ValueError(f"k={params.k} exceeds d={ds.d}")
    rng, _ = make_rng(rng)
    return select_from_counts(counts, params, rng)


def selection_indices(result):
    """Sorted index array from either a SelectionResult or an index array."""
    if isinstance(result, SelectionResult):
        return np.array(sorted(result.indices))
    return np.asarray(result)
