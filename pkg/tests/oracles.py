"""Independent reference computations used as test oracles."""

import math

import numpy as np

from mgw.laws import MarkedLaw
from mgw.limit_laws import mgw_tree_prob
from mgw.trees import enumerate_marked_trees, enumerate_plane_forests


def mark_count_series(law: MarkedLaw, upto: int) -> np.ndarray:
    """Coefficients of ``F(w) = sum_k p(k) (q(k) w + 1 - q(k)) F(w)^k``, i.e. ``P(M = n)``.

    Finite support only.  The linear dependence on the newest coefficient is
    split off so that each coefficient follows from the earlier ones.
    """
    kmax = law.support_max()
    pm, pu = law.arrays(kmax)
    f0 = 0.0
    for _ in range(100_000):
        nxt = sum(pu[k] * f0**k for k in range(kmax + 1))
        if abs(nxt - f0) < 1e-17:
            break
        f0 = nxt
    # Newton polish on f0 = l(f0)
    for _ in range(5):
        l = sum(pu[k] * f0**k for k in range(kmax + 1))
        dl = sum(k * pu[k] * f0 ** (k - 1) for k in range(1, kmax + 1))
        f0 -= (f0 - l) / (1 - dl)
    F = np.zeros(upto + 1)
    F[0] = f0
    d = sum(k * pu[k] * f0 ** (k - 1) for k in range(1, kmax + 1))
    for n in range(1, upto + 1):
        rhs = 0.0
        power = np.zeros(n + 1)
        power[0] = 1.0
        for k in range(kmax + 1):
            if k:
                power = np.convolve(power, F[: n + 1])[: n + 1]
            rhs += pu[k] * power[n] + pm[k] * power[n - 1]
        F[n] = rhs / (1 - d)
    return F


def forest_prob_by_enumeration(law: MarkedLaw, j: int, n: int) -> float:
    """``P(j independent trees have n nodes in total)`` summing over plane forests."""
    probs = law.prob(np.arange(n + 1))
    return math.fsum(math.prod(probs[k] for k in seq) for seq in enumerate_plane_forests(n, j, range(n)))


def conditional_laws_by_enumeration(law: MarkedLaw, max_size: int, degrees) -> dict:
    """Tree probabilities grouped by mark count, over all trees with at most ``max_size`` nodes."""
    out: dict = {}
    for t in enumerate_marked_trees(max_size, degrees):
        out.setdefault(t.mark_count, {})[t] = mgw_tree_prob(t, law)
    return out
