"""Canonical Lipschitz mechanism for epsilon-DP top-k selection.

A k-subset ``y`` of the score indices receives the value

    -(eps / 2) * LOSS(y | x) + F^{-1}(U_y),   F^{-1}(u) = -log(1 - u),

and the subset with the largest value is released. ``LOSS`` is the canonical
loss ``(1 - gamma) x[h+1] - gamma x[t]`` where, in rank space,

* ``h`` is the largest ``h < k`` with the top-``h`` ranks all in ``y``, and
* ``t`` is the worst rank in ``y`` (at least ``k``).

All subsets sharing ``(h, t)`` form a utility class: head ranks ``1..h``,
tail rank ``t``, and a body of ``k - h - 1`` ranks from ``h+2 .. t-1``. There
are ``k (d - k) + 1`` classes, so the mechanism only has to draw one maximal
noise value per class: the max of ``m`` iid uniforms has the law of
``U ** (1/m)``.

Ranks in this module are 1-based (``x[1] >= x[2] >= ...``); feature indices
are 0-based.
"""

import dataclasses
import itertools
import math
from typing import NamedTuple, Optional

import numpy as np

from dpsis.seeding import make_rng

EULER_GAMMA = 0.57721566490153286060651209
LN2 = float(np.log(2.0))
TAYLOR_CUTOFF = 1e-8
_EXACT_HARMONIC_LIMIT = 10**6
BRUTE_FORCE_LIMIT = 10**5
# Upper bound on noise values held in memory per scan chunk.
_CHUNK_BUDGET = 1 << 16


@dataclasses.dataclass(frozen=True)
class ScoreVector:
    """Per-feature scores normalized by their sensitivity.

    ``order[r]`` is the feature index holding rank ``r + 1``; ties are broken
    by ascending feature index.
    """

    raw_scores: np.ndarray
    sensitivity: float = 1.0

    def __post_init__(self):
        raw = np.array(self.raw_scores, dtype=float).ravel()
        if not self.sensitivity > 0:
            raise ValueError(f"sensitivity must be positive, got {self.sensitivity}")
        if not np.all(np.isfinite(raw)):
            raise ValueError("scores must be finite")
        normalized = raw / self.sensitivity
        order = np.argsort(-normalized, kind="stable")
        for arr in (raw, normalized, order):
            arr.setflags(write=False)
        object.__setattr__(self, "raw_scores", raw)
        object.__setattr__(self, "normalized", normalized)
        object.__setattr__(self, "order", order)

    @property
    def d(self):
        return self.normalized.shape[0]

    @property
    def sorted(self):
        """Descending order statistics ``x[1] >= ... >= x[d]``."""
        return self.normalized[self.order]

    def ranks(self):
        """Maps feature index to its 1-based rank."""
        r = np.empty(self.d, dtype=np.int64)
        r[self.order] = np.arange(1, self.d + 1)
        return r


@dataclasses.dataclass(frozen=True)
class MechanismParams:
    k: int
    epsilon: float
    gamma: float = 0.5

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be at least 1, got {self.k}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")

    @property
    def epsilon1(self):
        return (1.0 - self.gamma) * self.epsilon

    @property
    def epsilon2(self):
        return self.gamma * self.epsilon

    @property
    def loss_sensitivity(self):
        return 1.0

    def check(self, d):
        if d < 2:
            raise ValueError(f"need at least 2 scores, got d={d}")
        if not 1 <= self.k <= d - 1:
            raise ValueError(f"k must lie in [1, d-1] = [1, {d - 1}], got {self.k}")


class UtilityClass(NamedTuple):
    h: int
    t: int
    size: float


@dataclasses.dataclass(frozen=True)
class SelectionResult:
    indices: frozenset
    winning_class: tuple
    value: float
    params: Optional[MechanismParams] = None
    seed: Optional[int] = None
    method: str = "lipschitz"

    def sorted_indices(self):
        return sorted(self.indices)


def _as_scores(x):
    return x if isinstance(x, ScoreVector) else ScoreVector(x)


def utility_class_of(y, x):
    """Returns the ``(h, t)`` class of the k-subset ``y``."""
    x = _as_scores(x)
    y = {int(i) for i in y}
    k = len(y)
    if not 1 <= k <= x.d - 1:
        raise ValueError(f"subset size must lie in [1, d-1] = [1, {x.d - 1}], got {k}")
    if min(y) < 0 or max(y) >= x.d:
        raise ValueError("subset index out of range")
    rank = x.ranks()
    in_y = np.zeros(x.d + 2, dtype=bool)
    in_y[rank[list(y)]] = True
    h = 0
    while h < k - 1 and in_y[h + 1]:
        h += 1
    t = max(k, int(rank[list(y)].max()))
    return h, t


def canonical_loss(y, x, gamma=0.5):
    """Generalized canonical loss ``(1 - gamma) x[h+1] - gamma x[t]``."""
    x = _as_scores(x)
    h, t = utility_class_of(y, x)
    xs = x.sorted
    return (1.0 - gamma) * xs[h] - gamma * xs[t - 1]


def brute_force_loss_oracle(y, x):
    """Canonical loss at ``gamma = 1/2`` from its min-distance meaning.

    The closest vector whose top-k indices are ``y`` lifts every included
    score and lowers every excluded one to a common midpoint, so the loss is
    half the amount by which the best excluded score beats the worst
    included one.
    """
    x = _as_scores(x)
    y = sorted({int(i) for i in y})
    if not 1 <= len(y) <= x.d - 1:
        raise ValueError(f"subset size must lie in [1, d-1], got {len(y)}")
    mask = np.zeros(x.d, dtype=bool)
    mask[y] = True
    gap = x.normalized[~mask].max() - x.normalized[mask].min()
    return max(0.0, gap / 2.0)


def class_size(d, k, h, t):
    """Number of k-subsets in utility class ``(h, t)``."""
    if h == k - 1 and t == k:
        return 1
    return math.comb(t - h - 2, k - h - 1)


def enumerate_utility_classes(d, k):
    """All ``(h, t, size)`` classes in scan order; ``k (d - k) + 1`` of them."""
    MechanismParams(k, 1.0).check(d)
    classes = [UtilityClass(k - 1, k, 1.0)]
    for t in range(k + 1, d + 1):
        for h in range(k - 1, -1, -1):
            classes.append(UtilityClass(h, t, float(class_size(d, k, h, t))))
    return classes


def class_members(h, t, k, order=None):
    """Yields every member of class ``(h, t)`` as a frozenset.

    Members are expressed as ranks unless ``order`` (rank -> index, 0-based
    positions) is given.
    """
    head = list(range(1, h + 1))
    body_pool = range(h + 2, t)
    for body in itertools.combinations(body_pool, k - h - 1):
        ranks = head + list(body) + [t]
        if order is None:
            yield frozenset(ranks)
        else:
            yield frozenset(int(order[r - 1]) for r in ranks)


def _open_uniform(rng, size):
    # Strictly inside (0, 1): both endpoints make the noise infinite.
    bits = rng.integers(0, 1 << 53, size=size, dtype=np.int64)
    return (bits + 0.5) * (1.0 / (1 << 53))


def max_noise_from_uniform(u, m):
    """Evaluates ``-log(1 - u ** (1/m))`` without cancellation.

    With ``w = ln(u) / m`` the inner term is ``1 - exp(w)``. For ``1/m``
    below ``1e-8`` the second-order expansion ``-w - w**2 / 2`` is used,
    otherwise ``-expm1(w)``. Far in the lower tail (``w < -ln 2``) the
    logarithm switches to ``-log1p(-exp(w))`` so tiny noises keep their
    precision.
    """
    u = np.asarray(u, dtype=float)
    inv_m = 1.0 / np.asarray(m, dtype=float)
    w = inv_m * np.log(u)
    with np.errstate(divide="ignore", invalid="ignore"):
        gap = np.where(inv_m <= TAYLOR_CUTOFF, -w - 0.5 * w * w, -np.expm1(w))
        return np.where(w < -LN2, -np.log1p(-np.exp(w)), -np.log(gap))


def sample_max_noise(m, rng, size=None):
    """Draws the largest of ``m`` iid standard-exponential noises in one shot."""
    if np.any(np.asarray(m) < 1):
        raise ValueError("class size m must be at least 1")
    rng, _ = make_rng(rng)
    u = _open_uniform(rng, size)
    out = max_noise_from_uniform(u, m)
    return float(out) if size is None and np.ndim(out) == 0 else out


def harmonic(m):
    """``H_m = 1 + 1/2 + ... + 1/m``.

    Exact summation for integer ``m`` up to 10**6, the asymptotic expansion
    ``ln m + gamma + 1/(2m) - 1/(12 m^2)`` beyond that or for non-integer m.
    """
    if m < 1:
        raise ValueError(f"harmonic number needs m >= 1, got {m}")
    if float(m).is_integer() and m <= _EXACT_HARMONIC_LIMIT:
        terms = 1.0 / np.arange(int(m), 0, -1, dtype=float)
        return math.fsum(terms)
    m = float(m)
    return math.log(m) + EULER_GAMMA + 1.0 / (2.0 * m) - 1.0 / (12.0 * m * m)


def _chunk_class_sizes(t_values, k):
    """Class sizes for rows ``t`` and columns ``h = k-1, ..., 0``.

    Row-wise this is the running update ``m <- m (t-h-2) / (k-h-1)`` started
    from ``m = 1`` at ``h = k-1``.
    """
    h = np.arange(k - 1, -1, -1)
    factors = (t_values[:, None] - h[None, :] - 2) / (k - h[None, :] - 1.0).clip(min=1.0)
    factors[:, 0] = 1.0
    return np.cumprod(factors, axis=1)


def _scan_classes(xs, params, rng, size):
    """Runs the class scan for ``size`` independent draws.

    Returns arrays of winning ``h``, ``t`` and values. Scan order is ``(k-1, k)``
    first, then ``t`` ascending and ``h`` descending; a later class only wins
    on a strictly larger value.
    """
    d, k = xs.shape[0], params.k
    e1, e2 = params.epsilon1, params.epsilon2

    best_v = 0.5 * (e2 - e1) * xs[k - 1] + max_noise_from_uniform(_open_uniform(rng, size), 1.0)
    best_h = np.full(size, k - 1, dtype=np.int64)
    best_t = np.full(size, k, dtype=np.int64)

    h_cols = np.arange(k - 1, -1, -1)
    head_term = 0.5 * e1 * xs[h_cols]          # uses x[h+1]
    rows_per_chunk = max(1, _CHUNK_BUDGET // (k * size))
    runs = np.arange(size)
    for start in range(k + 1, d + 1, rows_per_chunk):
        t_values = np.arange(start, min(d, start + rows_per_chunk - 1) + 1)
        m = _chunk_class_sizes(t_values, k)
        utility = 0.5 * e2 * xs[t_values - 1][:, None] - head_term[None, :]
        u = _open_uniform(rng, (size,) + m.shape)
        values = utility[None] + max_noise_from_uniform(u, m[None])
        flat = values.reshape(size, -1)
        pos = np.argmax(flat, axis=1)
        v = flat[runs, pos]
        better = v > best_v
        best_v = np.where(better, v, best_v)
        best_t = np.where(better, t_values[pos // k], best_t)
        best_h = np.where(better, h_cols[pos % k], best_h)
    return best_h, best_t, best_v


def _sample_members(order, k, heads, tails, rng):
    """Draws a uniform member of each winning class, as sorted index rows."""
    size, d = heads.shape[0], order.shape[0]
    rank = np.arange(1, d + 1)[None, :]
    head = rank <= heads[:, None]
    tail = rank == tails[:, None]
    pool = (rank >= heads[:, None] + 2) & (rank <= tails[:, None] - 1)
    keys = np.where(pool, rng.random((size, d)), np.inf)
    # Rank of each key inside its row; the smallest k-h-1 pool keys win.
    key_rank = np.argsort(np.argsort(keys, axis=1, kind="stable"), axis=1, kind="stable")
    body = pool & (key_rank < (k - heads - 1)[:, None])
    chosen = head | tail | body
    positions = np.nonzero(chosen)[1].reshape(size, k)
    return np.sort(order[positions], axis=1)


def lipschitz_topk_batch(x, params, rng, size):
    """``size`` independent runs of the mechanism, vectorized.

    Returns ``(indices, h, t, values)`` with ``indices`` of shape ``(size, k)``.
    """
    x = _as_scores(x)
    params.check(x.d)
    rng, _ = make_rng(rng)
    xs = x.sorted
    out = []
    step = max(1, min(size, _CHUNK_BUDGET // max(1, x.d)))
    for start in range(0, size, step):
        n = min(step, size - start)
        h, t, v = _scan_classes(xs, params, rng, n)
        idx = _sample_members(x.order, params.k, h, t, rng)
        out.append((idx, h, t, v))
    return tuple(np.concatenate(parts) for parts in zip(*out))


def lipschitz_topk(x, params, rng=None):
    """Selects ``params.k`` indices with epsilon-DP from normalized scores ``x``.

    ``x`` is a :class:`ScoreVector` (or raw scores with sensitivity 1).
    ``rng`` is a seed or a :class:`numpy.random.Generator`; the same seed
    reproduces the same result.
    """
    rng, seed = make_rng(rng)
    idx, h, t, v = lipschitz_topk_batch(x, params, rng, 1)
    return SelectionResult(indices=frozenset(int(i) for i in idx[0]),
                           winning_class=(int(h[0]), int(t[0])), value=float(v[0]),
                           params=params, seed=seed)


def _all_subsets(d, k):
    total = math.comb(d, k)
    if total > BRUTE_FORCE_LIMIT:
        raise ValueError(f"C({d}, {k}) = {total} subsets exceeds the brute-force limit")
    return list(itertools.combinations(range(d), k))


def brute_force_batch(x, params, rng, size):
    """Exhaustive mechanism: one inverse-CDF noise draw per subset per run.

    Returns ``(subsets, winners)`` where ``winners[i]`` indexes ``subsets``.
    """
    x = _as_scores(x)
    params.check(x.d)
    rng, _ = make_rng(rng)
    subsets = _all_subsets(x.d, params.k)
    scale = params.epsilon / (2.0 * params.loss_sensitivity)
    utility = np.array([-scale * canonical_loss(y, x, params.gamma) for y in subsets])
    winners = np.empty(size, dtype=np.int64)
    step = max(1, _CHUNK_BUDGET // len(subsets))
    for start in range(0, size, step):
        n = min(step, size - start)
        u = rng.random((n, len(subsets)))
        values = utility[None, :] - np.log1p(-u)
        winners[start:start + n] = np.argmax(values, axis=1)
    return subsets, winners


def brute_force_mechanism(x, params, rng=None):
    """Reference implementation enumerating all ``C(d, k)`` subsets."""
    x = _as_scores(x)
    rng, seed = make_rng(rng)
    params.check(x.d)
    subsets = _all_subsets(x.d, params.k)
    scale = params.epsilon / (2.0 * params.loss_sensitivity)
    values = [-scale * canonical_loss(y, x, params.gamma) - math.log1p(-rng.random())
              for y in subsets]
    best = int(np.argmax(values))
    return SelectionResult(indices=frozenset(subsets[best]),
                           winning_class=utility_class_of(subsets[best], x),
                           value=float(values[best]), params=params, seed=seed,
                           method="brute-force")
