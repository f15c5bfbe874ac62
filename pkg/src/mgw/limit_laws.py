"""Ball and graft-set probabilities of the marked Kesten and condensation trees."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .laws import SUM_TOL, LawError, MarkedLaw
from .trees import MarkedTree, TreeError, Word, forest_above, subtree_below

INFINITE = math.inf
# log-probabilities below this are reported as exact zeros
LOG_UNDERFLOW = -745.0


def alpha(j, eta: int, law: MarkedLaw):
    """``q(j)`` if the grafting node is marked, ``1 - q(j)`` otherwise; ``q(inf)`` is the mark limit."""
    if isinstance(j, float) and math.isinf(j):
        qj = law.mark_limit
    else:
        qj = law.mark_prob(j)
    return qj if eta else 1.0 - qj


def log_tree_prob(t: MarkedTree, law: MarkedLaw, skip: int | None = None) -> float:
    """Log-probability that the marked GW tree equals ``t``.

    ``skip`` leaves the factor of one node (by preorder index) out of the product.
    """
    deg = np.asarray(t.degrees)
    marks = np.asarray(t.marks, dtype=bool)
    keep = np.ones(len(deg), dtype=bool)
    if skip is not None:
        keep[skip] = False
    total = 0.0
    for part, sel in (("marked", marks & keep), ("unmarked", ~marks & keep)):
        if not np.any(sel):
            continue
        ks, counts = np.unique(deg[sel], return_counts=True)
        probs = np.asarray(law.part_prob(ks, part), dtype=float)
        if np.any(probs <= 0):
            return -math.inf
        total += float(np.dot(counts, np.log(probs)))
    return total


def mgw_tree_prob(t: MarkedTree, law: MarkedLaw) -> float:
    lp = log_tree_prob(t, law)
    return 0.0 if lp < LOG_UNDERFLOW else math.exp(lp)


def mgw_forest_prob(forest: Sequence[MarkedTree], law: MarkedLaw) -> float:
    lp = sum(log_tree_prob(t, law) for t in forest)
    return 0.0 if lp < LOG_UNDERFLOW else math.exp(lp)


@dataclass(frozen=True)
class GraftQuery:
    """A base tree, a node ``x`` of it and a minimal degree ``k`` at ``x``."""

    base: MarkedTree
    x: Word = ()
    k: int = 0

    def __post_init__(self) -> None:
        if self.x not in self.base:
            raise TreeError(f"{self.x!r} is not a node of the base tree")
        if self.k < 0:
            raise ValueError("k must be nonnegative")

    @property
    def m(self) -> int:
        return self.base.mark_count

    @property
    def l(self) -> int:
        return self.base.degree(self.x)

    @property
    def eta(self) -> int:
        return self.base.mark(self.x)


def graft_constant_D(query: GraftQuery, law: MarkedLaw) -> float:
    """Probability of the base tree outside ``x``: ``P(tree = S^x) / (p(0)(1 - q(0)))``.

    Computed as the product over all nodes but ``x``, which stays defined when
    ``p(0)(1 - q(0)) = 0``.
    """
    below = subtree_below(query.base, query.x)
    lp = log_tree_prob(below, law, skip=below.index(query.x))
    return 0.0 if lp < LOG_UNDERFLOW else math.exp(lp)


def graft_constant_C(query: GraftQuery, law: MarkedLaw) -> float:
    """``D`` times the probability of the subtrees hanging from ``x``."""
    D = graft_constant_D(query, law)
    if query.l == 0:
        return D
    return D * mgw_forest_prob(forest_above(query.base, query.x), law)


def _part(eta: int) -> str:
    return "marked" if eta else "unmarked"


def kesten_graft_prob(query: GraftQuery, law: MarkedLaw) -> float:
    """Probability that the marked Kesten tree lies in the graft set of a leaf ``x``."""
    if abs(law.mean - 1.0) > 1e-10:
        raise LawError("the Kesten tree needs a critical offspring law", "critical")
    if query.l != 0:
        raise TreeError("x must be a leaf of the base tree")
    return graft_constant_D(query, law) * law.moment(1, part=_part(query.eta))


def condensation_graft_prob(query: GraftQuery, law: MarkedLaw) -> float:
    """Probability that the marked condensation tree lies in ``T_+(t, x, k)``."""
    mu = law.mean
    if not mu < 1.0 - SUM_TOL:
        raise LawError("the condensation tree needs a sub-critical offspring law", "subcritical")
    l, eta = query.l, query.eta
    start = max(query.k, l + 1)
    part = _part(eta)
    finite = law.moment(1, part=part, start=start) - l * law.moment(0, part=part, start=start)
    return graft_constant_C(query, law) * ((1.0 - mu) * alpha(INFINITE, eta, law) + finite)


def kesten_ball_limit(l: int, eta: int, law: MarkedLaw) -> float:
    """``E[(X - l)_+ alpha_X] + (1 - mu)(alpha_inf)``, the common limit of the ``B`` ratios."""
    part = _part(eta)
    start = l + 1
    finite = law.moment(1, part=part, start=start) - l * law.moment(0, part=part, start=start)
    return finite + (1.0 - law.mean) * alpha(INFINITE, eta, law)


# -------------------------------------------------------- size-biased laws
@dataclass(frozen=True)
class SizeBiasedLaw:
    """``p*(k) = k p(k) / mu`` and ``p_check(k) = k p(k)`` with ``p_check(inf) = 1 - mu``."""

    law: MarkedLaw

    def p_star(self, k):
        k = np.asarray(k)
        out = k * np.asarray(self.law.prob(k), dtype=float) / self.law.mean
        return out if out.shape else float(out)

    def p_check(self, k):
        if isinstance(k, float) and math.isinf(k):
            return self.infinite_mass
        k = np.asarray(k)
        out = k * np.asarray(self.law.prob(k), dtype=float)
        return out if out.shape else float(out)

    @property
    def infinite_mass(self) -> float:
        return max(0.0, 1.0 - self.law.mean)


def size_biased(law: MarkedLaw) -> SizeBiasedLaw:
    return SizeBiasedLaw(law)
