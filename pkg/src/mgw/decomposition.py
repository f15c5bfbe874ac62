"""Exact laws of the mark-count decomposition.

A marked tree splits into a skeleton (nodes without a marked strict ancestor)
and a forest indexed by marked nodes.  ``N`` counts marked leaves of the
skeleton, ``L`` all of its leaves, ``Z1``/``Z0`` are compound sums of ``N``
over the children of a marked/unmarked node, and ``S_n`` is the walk with
steps ``Z1``.  Everything here is computed with nonnegative arithmetic only
(no FFT, no cancellation), so tiny probabilities keep full relative accuracy.

The pgf ``H`` of ``N`` solves ``H = a + b s + Phi(H)`` with ``a = p(0)(1-q(0))``,
``b = E[q(X)]`` and ``Phi(h) = sum_{k>=1} p(k)(1-q(k)) h^k``.  Writing
``H = h0 + (1-h0) kappa`` turns this into ``kappa = s G(kappa)`` for a
power series ``G`` with nonnegative coefficients, so every quantity of the
form ``sum_j c_j H^j`` follows from Lagrange inversion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from math import gcd

import numpy as np
from scipy.stats import binom

from .laws import LawError, MarkedLaw
from .trees import enumerate_plane_forests

EPS_TAIL = 1e-12
FIXED_POINT_TOL = 1e-14


class LatticeError(ValueError):
    """The requested event has probability zero because of periodicity."""


@dataclass(frozen=True)
class Pmf:
    """Truncated probability mass function on ``0..len(weights)-1``."""

    weights: np.ndarray
    tail_mass: float = 0.0
    degenerate: bool = False

    @classmethod
    def from_weights(cls, w, degenerate: bool = False) -> "Pmf":
        w = np.clip(np.asarray(w, dtype=float), 0.0, None)
        tail = max(0.0, 1.0 - math.fsum(w))
        return cls(w, tail, degenerate)

    def __len__(self) -> int:
        return len(self.weights)

    def __getitem__(self, n: int) -> float:
        if n < 0:
            return 0.0
        if n >= len(self.weights):
            raise IndexError(f"index {n} beyond the truncation {len(self.weights) - 1}")
        return float(self.weights[n])

    @property
    def upto(self) -> int:
        return len(self.weights) - 1

    def mean(self) -> float:
        return math.fsum(np.arange(len(self.weights)) * self.weights)

    def variance(self) -> float:
        k = np.arange(len(self.weights), dtype=float)
        m = self.mean()
        return math.fsum(k * k * self.weights) - m * m

    def support_gcd(self) -> int:
        g = 0
        for k in np.nonzero(self.weights)[0]:
            g = gcd(g, int(k))
        return g


# ------------------------------------------------------------ array helpers
def conv_trunc(a: np.ndarray, b: np.ndarray, upto: int) -> np.ndarray:
    """First ``upto + 1`` coefficients of the product of two series."""
    out = np.convolve(a[: upto + 1], b[: upto + 1])[: upto + 1]
    if len(out) < upto + 1:
        out = np.pad(out, (0, upto + 1 - len(out)))
    return out


def conv_power(a: np.ndarray, n: int, upto: int) -> np.ndarray:
    """``a`` convolved with itself ``n`` times, truncated at ``upto``."""
    result = np.zeros(upto + 1)
    result[0] = 1.0
    base = np.asarray(a, dtype=float)[: upto + 1]
    while n:
        if n & 1:
            result = conv_trunc(result, base, upto)
        n >>= 1
        if n:
            base = conv_trunc(base, base, upto)
    return result


def thin(c: np.ndarray, keep: float, upto: int) -> np.ndarray:
    """Coefficients of ``sum_j c_j (1 - keep + keep z)^j`` up to ``z^upto``."""
    c = np.asarray(c, dtype=float)
    f = np.zeros(upto + 1)
    if keep >= 1.0:
        n = min(len(c), upto + 1)
        f[:n] = c[:n]
        return f
    if keep <= 0.0:
        f[0] = c.sum()
        return f
    sd_scale = math.sqrt(keep * (1.0 - keep))
    for j in np.nonzero(c)[0]:
        j = int(j)
        mean = j * keep
        w = int(15.0 * sd_scale * math.sqrt(j)) + 40
        lo = max(0, int(mean) - w)
        hi = min(j, int(mean) + w, upto)
        if lo > hi:
            continue
        ks = np.arange(lo, hi + 1)
        f[lo : hi + 1] += c[j] * binom.pmf(ks, j, keep)
    return f


def support_needed(upto: int, keep: float) -> int:
    """Largest ``j`` whose binomial thinning can reach ``upto``."""
    if keep >= 1.0:
        return upto
    m = (upto + 1) / keep
    return int(m + 15.0 * math.sqrt(m) + 60)


class LagrangeEngine:
    """Coefficients ``(1/n) [z^(n-1)] D(z) G(z)^n`` for ``n = 1..K``.

    Baby-step/giant-step on the powers of ``G`` keeps the cost near
    ``K^2.5`` multiply-adds with direct convolutions only.
    """

    def __init__(self, G: np.ndarray, K: int):
        self.K = K
        G = np.asarray(G, dtype=float)[: K + 1]
        if len(G) < K + 1:
            G = np.pad(G, (0, K + 1 - len(G)))
        B = max(1, math.isqrt(K + 1) + (0 if math.isqrt(K + 1) ** 2 == K + 1 else 1))
        self.B = B
        baby = [np.zeros(K + 1)]
        baby[0][0] = 1.0
        for _ in range(1, B):
            baby.append(conv_trunc(baby[-1], G, K))
        self.baby = baby
        step = conv_trunc(baby[-1], G, K)
        giant = [baby[0]]
        for _ in range(1, K // B + 1):
            giant.append(conv_trunc(giant[-1], step, K))
        self.giant = giant

    def apply(self, D: np.ndarray, upto: int | None = None) -> np.ndarray:
        K = self.K if upto is None else min(upto, self.K)
        D = np.asarray(D, dtype=float)[:K]
        out = np.zeros(K + 1)
        if not np.any(D):
            return out
        B = self.B
        for a in range(K // B + 1):
            n_lo = max(1, a * B)
            n_hi = min(K, a * B + B - 1)
            if n_lo > n_hi:
                continue
            U = np.convolve(D[:n_hi], self.giant[a][:n_hi])[:n_hi]
            for n in range(n_lo, n_hi + 1):
                R = self.baby[n - a * B]
                out[n] = np.dot(U[:n], R[n - 1 :: -1]) / n
        return out


class _Inversion:
    """Solution ``h0 + (1-h0) kappa`` of ``H = a + b s + Phi(H)`` up to ``s^K``."""

    def __init__(self, a: float, b: float, phi: np.ndarray, h0: float, K: int):
        self.K = K
        self.h0 = h0
        self.keep = 1.0 - h0
        beta = b / self.keep
        # c_hat[i] for i >= 1 stored at index i - 1: the series r(z)
        chat = thin(phi, self.keep, K + 1) / self.keep
        r = chat[1:]
        if r[0] >= 1.0:
            raise LawError("the skeleton law is not sub-critical", "condq")
        G = np.zeros(K + 1)
        G[0] = beta / (1.0 - r[0])
        inv = 1.0 / (1.0 - r[0])
        for m in range(1, K + 1):
            G[m] = inv * np.dot(r[1 : m + 1], G[m - 1 :: -1])
        self.G = G
        self.engine = LagrangeEngine(G, K)

    def compose(self, c: np.ndarray, upto: int | None = None) -> np.ndarray:
        """Coefficients of ``sum_j c_j H(s)^j`` up to ``s^upto``."""
        K = self.K if upto is None else min(upto, self.K)
        f = thin(c, self.keep, K + 1)
        D = np.arange(1, K + 2) * f[1 : K + 2]
        out = self.engine.apply(D, K)
        out[0] = f[0]
        return out


# ------------------------------------------------------------- reduced law
@dataclass(frozen=True)
class ReducedLaw:
    """Offspring law of the skeleton: marked nodes become leaves."""

    law: MarkedLaw

    @property
    def p0(self) -> float:
        return float(self.law.part_prob(0, "unmarked")) + self.law.moment(0, part="marked")

    def prob(self, k):
        k = np.asarray(k)
        out = np.where(k == 0, self.p0, self.law.part_prob(k, "unmarked"))
        return out if out.shape else float(out)

    @property
    def mean(self) -> float:
        return self.law.moment(1, part="unmarked")


def reduced_law(law: MarkedLaw) -> ReducedLaw:
    return ReducedLaw(law)


def no_mark_probability(law: MarkedLaw) -> float:
    """Smallest root of ``h = sum_k p(k)(1-q(k)) h^k``, i.e. ``P(M = 0)``."""
    l = lambda h: law.moment(0, h, "unmarked") if h > 0 else float(law.part_prob(0, "unmarked"))
    h = 0.0
    for _ in range(100_000):
        nxt = l(h)
        if nxt - h <= FIXED_POINT_TOL:
            h = nxt
            break
        h = nxt
    # one Newton step from below sharpens the last digits
    if 0 < h < 1:
        dl = law.moment(1, h, "unmarked") / h
        if dl < 1:
            cand = h + (l(h) - h) / (1.0 - dl)
            if cand >= h and cand < 1:
                h = cand
    return h


# ------------------------------------------------------------------ tables
@dataclass
class DecompositionTables:
    """Truncated exact pmfs of the decomposition, all indexed ``0..K``."""

    law: MarkedLaw
    K: int = 2000
    _walks: dict = field(default_factory=dict, repr=False)
    _W: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        law = self.law
        self.a = float(law.part_prob(0, "unmarked"))
        self.b = law.moment(0, part="marked")
        if not self.b > 0:
            raise LawError("no node can carry a mark", "condq")
        self.h0 = no_mark_probability(law)
        keep = 1.0 - self.h0
        top = support_needed(self.K + 1, keep)
        smax = law.support_max()
        if smax is not None:
            top = min(top, smax)
        self.kmax = max(top, 1)
        self._pq, self._pu = law.arrays(self.kmax)

    # ---- analytic values
    @property
    def mean_skeleton(self) -> float:
        return self.law.moment(1, part="unmarked")

    def closed_form_means(self) -> dict[str, float]:
        m0 = self.mean_skeleton
        b = self.b
        p0t = self.a + b
        out = {
            "L": p0t / (1.0 - m0),
            "N": b / (1.0 - m0),
            "Z1": self.law.moment(1, part="marked") / (1.0 - m0),
        }
        out["Z0"] = m0 * b / ((1.0 - m0) * (1.0 - b)) if b < 1 else 0.0
        return out

    # ---- engines
    @cached_property
    def _H(self) -> _Inversion:
        phi = self._pu.copy()
        phi[0] = 0.0
        return _Inversion(self.a, self.b, phi, self.h0, self.K)

    @cached_property
    def _skeleton(self) -> _Inversion:
        phi = self._pu.copy()
        phi[0] = 0.0
        return _Inversion(0.0, self.a + self.b, phi, 0.0, self.K)

    @cached_property
    def _forest(self) -> LagrangeEngine:
        return LagrangeEngine(self.pmf_Z1.weights, self.K)

    def compose(self, c) -> np.ndarray:
        """``[s^i] sum_j c_j H(s)^j`` for ``i = 0..K``."""
        return self._H.compose(np.asarray(c, dtype=float))

    # ---- pmfs
    @cached_property
    def pmf_L(self) -> Pmf:
        out = self._skeleton.compose(np.array([0.0, 1.0]))
        return Pmf.from_weights(out)

    @cached_property
    def pmf_N(self) -> Pmf:
        return Pmf.from_weights(self.compose(np.array([0.0, 1.0])))

    @cached_property
    def pmf_X1(self) -> Pmf:
        return Pmf.from_weights(self._pq[: self.K + 1] / self.b)

    @cached_property
    def pmf_X0(self) -> Pmf:
        if self.b >= 1.0:
            w = np.zeros(self.K + 1)
            w[0] = 1.0
            return Pmf(w, 0.0, True)
        return Pmf.from_weights(self._pu[: self.K + 1] / (1.0 - self.b))

    @cached_property
    def pmf_Z1(self) -> Pmf:
        return Pmf.from_weights(self.compose(self._pq / self.b))

    @cached_property
    def pmf_Z0(self) -> Pmf:
        # Z0 has pgf (H(s) - b s) / (1 - b)
        if self.b >= 1.0 or not np.any(self._pu[1:]):
            w = np.zeros(self.K + 1)
            w[0] = 1.0
            return Pmf(w, 0.0, True)
        w = self.pmf_N.weights.copy()
        w[1] -= self.b
        return Pmf.from_weights(np.clip(w, 0.0, None) / (1.0 - self.b))

    @cached_property
    def mark_count_pmf(self) -> Pmf:
        """``P(M = n)`` for ``n = 0..K``."""
        N = self.pmf_N.weights
        D = np.arange(1, self.K + 1) * N[1 : self.K + 1]
        out = self._forest.apply(D)
        out[0] = self.h0
        return Pmf.from_weights(out)

    @property
    def mu1(self) -> float:
        return self.closed_form_means()["Z1"]

    @cached_property
    def var1(self) -> float:
        return self.pmf_Z1.variance()

    @cached_property
    def period(self) -> int:
        return self.pmf_Z1.support_gcd()

    # ---- walks
    def walk_pmf(self, n: int) -> Pmf:
        """Law of ``S_n``, the sum of ``n`` independent copies of ``Z1``."""
        if n < 0:
            raise ValueError("n must be nonnegative")
        if n not in self._walks:
            self._walks[n] = Pmf.from_weights(conv_power(self.pmf_Z1.weights, n, self.K))
        return self._walks[n]

    def W_pmf(self, j: int) -> Pmf:
        """Law of ``W_j``, the sum of ``j`` independent copies of ``N``."""
        if j not in self._W:
            self._W[j] = Pmf.from_weights(conv_power(self.pmf_N.weights, j, self.K))
        return self._W[j]

    def _check_range(self, n: int) -> None:
        if n > self.K:
            raise ValueError(f"n={n} exceeds the table size K={self.K}")

    # ---- mark counts
    def prob_mark_count(self, n: int) -> float:
        """``P(M = n)`` for the tree."""
        return self.prob_mark_count_forest(1, n)

    def prob_mark_count_forest(self, j: int, n: int) -> float:
        """``P(M = n)`` for a forest of ``j`` independent trees."""
        if j < 1:
            raise ValueError("a forest needs at least one tree")
        if n == 0:
            return self.h0**j
        self._check_range(n)
        N = self.pmf_N.weights[: n + 1]
        kN = np.arange(n + 1) * N
        S = self.walk_pmf(n).weights[: n + 1]
        if j > 1:
            S = conv_trunc(S, self.W_pmf(j - 1).weights, n)
        return j / n * float(np.dot(kN[1:], S[n - 1 :: -1]))

    def dwass_rhs(self, j: int, n: int) -> float:
        """``(j/n) P(S_n = n - j)``."""
        self._check_range(n)
        return j / n * self.walk_pmf(n)[n - j]

    def forest_size_enumerated(self, j: int, n: int) -> float:
        """``P(j-tree forest with offspring Z1 has n nodes)`` by enumerating plane forests."""
        p1 = self.pmf_Z1.weights
        total = 0.0
        for seq in enumerate_plane_forests(n, j, range(min(n, len(p1)))):
            total += math.prod(p1[k] for k in seq)
        return total

    def dwass_check(self, j: int, n: int) -> tuple[float, float]:
        if not 1 <= j <= n:
            raise ValueError("need 1 <= j <= n")
        return self.forest_size_enumerated(j, n), self.dwass_rhs(j, n)

    def require_lattice(self, n: int) -> float:
        """``P(M = n)``, raising when it vanishes on the lattice."""
        pm = self.prob_mark_count(n)
        if pm <= 0.0:
            raise LatticeError(
                f"P(M={n}) = 0: the forest step law has period {self.period}; use n on its lattice"
            )
        return pm


def build_tables(law: MarkedLaw, K: int = 2000) -> DecompositionTables:
    return DecompositionTables(law, K)
