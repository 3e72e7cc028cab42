"""Selection quality scores and the exact-recovery probability bound."""

import dataclasses
import math

import numpy as np


@dataclasses.dataclass(frozen=True)
class RankedReference:
    """Reference features in descending importance; the first ``k`` are the targets."""

    ranked_indices: tuple
    k: int

    def __post_init__(self):
        ranked = tuple(int(i) for i in self.ranked_indices)
        if len(set(ranked)) != len(ranked):
            raise ValueError("reference ranking contains duplicate indices")
        if self.k < 1 or len(ranked) < self.k:
            raise ValueError(f"reference of length {len(ranked)} cannot rank k={self.k}")
        object.__setattr__(self, "ranked_indices", ranked)

    def top(self, count):
        return frozenset(self.ranked_indices[:count])


@dataclasses.dataclass(frozen=True)
class BoundInput:
    d: int
    k: int
    xi: float
    gamma: float
    epsilon: float

    def __post_init__(self):
        if not 1 <= self.k < self.d:
            raise ValueError(f"need 1 <= k < d, got k={self.k}, d={self.d}")
        if self.xi < 0:
            raise ValueError("gap xi must be non-negative")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


def topk_accuracy(selected, reference):
    """Fraction of the reference set that was selected."""
    selected, reference = set(int(i) for i in selected), set(int(i) for i in reference)
    if len(selected) != len(reference) or not reference:
        raise ValueError(f"size mismatch: selected {len(selected)}, reference {len(reference)}")
    return len(selected & reference) / len(reference)


def tgg_flags(selected, ref):
    """TOP / GREAT / GOOD order-statistic flags for one selection.

    GREAT requires the top ``ceil(k/10)`` reference features with everything
    else drawn from the top ``floor(11k/10)``; GOOD relaxes this to
    ``ceil(k/100)`` and ``floor(3k/2)``.
    """
    k = ref.k
    selected = frozenset(int(i) for i in selected)
    if len(selected) != k:
        raise ValueError(f"selected {len(selected)} features, reference k={k}")
    good_pool = (3 * k) // 2
    if len(ref.ranked_indices) < good_pool:
        raise ValueError(f"reference needs at least {good_pool} ranked features for k={k}")

    def tier(head, pool):
        return ref.top(head) <= selected and selected <= ref.top(pool)

    top = selected == ref.top(k)
    great = tier(-(-k // 10), (11 * k) // 10)
    good = tier(-(-k // 100), good_pool)
    return top, great, good


def log_comb(d, k):
    return math.lgamma(d + 1) - math.lgamma(k + 1) - math.lgamma(d - k + 1)


def c_dk(d, k, exact=False):
    """``C(d, k) k^k / d^k``; at most ``k`` for ``1 <= k < d``."""
    if exact:
        return math.comb(d, k) * k**k / d**k
    return math.exp(log_comb(d, k) + k * math.log(k) - k * math.log(d))


def recovery_bound(b, exact=False):
    """Lower bound on the probability that DP-SIS returns the exact top-k.

    ``1 - exp(k ln(d/k) + ln c_{d,k} - xi gamma eps / 2)``, clipped at 0.
    """
    log_c = math.log(c_dk(b.d, b.k, exact=exact))
    exponent = b.k * math.log(b.d / b.k) + log_c - b.xi * b.gamma * b.epsilon / 2.0
    if exponent >= 0:
        return 0.0
    return max(0.0, -math.expm1(exponent))


def score_gap(scores, k):
    """Gap between the k-th and (k+1)-th largest scores."""
    s = np.sort(np.asarray(scores, dtype=float))[::-1]
    return float(s[k - 1] - s[k])
