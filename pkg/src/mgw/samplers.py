"""Random marked trees: unconditioned, conditioned on the mark count, and restricted limit trees."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .laws import SUM_TOL, LawError, MarkedLaw, classify, tilt
from .trees import MarkedTree, RestrictedTree, TreeError

HEAD_SIZE = 1 << 16
BATCH_SIZE = 100_000


class SamplingBudgetError(RuntimeError):
    """Rejection sampling ran out of attempts."""

    def __init__(self, message: str, acceptance_rate: float):
        super().__init__(message)
        self.acceptance_rate = acceptance_rate


@dataclass(frozen=True)
class Overflow:
    """A draw that exceeded the node cap."""

    nodes_seen: int


@dataclass(frozen=True)
class SamplerConfig:
    seed: int = 0
    node_cap: int = 1_000_000
    attempt_cap: int = 10_000_000
    tilt: float | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        if self.node_cap < 1 or self.attempt_cap < 1:
            raise ValueError("caps must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for one independent stream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream])))


def default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def run_batches(fn: Callable, args: list, workers: int = 1) -> list:
    """Map ``fn`` over ``args`` keeping input order; the result never depends on ``workers``."""
    if workers <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*args)))


# ------------------------------------------------------------ degree draws
class DegreeSampler:
    """Draws ``(k, mark)`` with probability proportional to ``k**power * P(k children, mark)``.

    Small degrees come from a lookup table; a power tail is drawn exactly by
    rejection from a discretized Pareto envelope.
    """

    def __init__(self, law: MarkedLaw, power: int = 0, head: int = HEAD_SIZE):
        self.law = law
        self.power = power
        smax = law.support_max()
        H = smax + 1 if smax is not None else head
        self.H = H
        ks = np.arange(H)
        weight = ks.astype(float) ** power if power else np.ones(H)
        pm, pu = law.arrays(H - 1)
        joint = np.stack([pu * weight, pm * weight], axis=1).ravel()
        self._cum = np.cumsum(joint)
        head_mass = float(self._cum[-1])
        tail_mass = law.moment(power, start=H) if law.p.has_tail else 0.0
        self.total = head_mass + tail_mass
        self.tail_prob = tail_mass / self.total
        if law.p.has_tail and tail_mass > 0:
            s0 = 1.0 + law.p.alpha - power
            if s0 <= 1:
                raise LawError("the weighted tail is not summable", "condp")
            self._a = s0 - 1.0
            ratio = law.theta / law.p.decay
            wmax = max(1.0, law.c)
            amp = law.p.constant / law.theta * ratio**H * wmax
            # the Pareto cell mass is only bounded below by a H^a (k+1)^-(a+1)
            self._M = amp * (1.0 + 1.0 / H) ** (1.0 + self._a) / (self._a * H**self._a)

    def _tail(self, rng: np.random.Generator, size: int) -> np.ndarray:
        out = np.empty(size, dtype=np.int64)
        filled = 0
        H, a = self.H, self._a
        while filled < size:
            want = int((size - filled) * 1.2) + 8
            u = rng.random(want)
            k = np.floor(H * u ** (-1.0 / a))
            ok = k < 2**62
            k = k[ok]
            env = (H / k) ** a - (H / (k + 1)) ** a
            f = k**self.power * np.asarray(self.law.prob(k.astype(np.int64)), dtype=float)
            acc = rng.random(len(k)) * self._M * env < f
            got = k[acc].astype(np.int64)[: size - filled]
            out[filled : filled + len(got)] = got
            filled += len(got)
        return out

    def sample(self, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
        u = rng.random(size)
        idx = np.searchsorted(self._cum, u * self.total, side="right")
        tail = idx >= len(self._cum)
        deg = idx // 2
        mark = (idx % 2).astype(bool)
        n_tail = int(tail.sum())
        if n_tail:
            kt = self._tail(rng, n_tail)
            deg[tail] = kt
            mark[tail] = rng.random(n_tail) < np.asarray(self.law.mark_prob(kt), dtype=float)
        return deg.astype(np.int64), mark


# ------------------------------------------------------------- MGW trees
def _check_not_supercritical(law: MarkedLaw) -> None:
    if law.mean > 1.0 + SUM_TOL:
        raise LawError("super-critical offspring law: trees are not a.s. finite", "subcritical")


def _segments(sampler: DegreeSampler, rng: np.random.Generator, count: int, node_cap: int):
    """Split one Lukasiewicz stream into ``count`` consecutive trees.

    Yields ``(degrees, marks, starts, stops)`` chunks, where tree ``i`` of the
    chunk is ``degrees[starts[i]:stops[i]]``, or an ``Overflow`` for a tree
    whose walk exceeded ``node_cap`` (its remaining nodes are never drawn).
    """
    carry_d = np.empty(0, dtype=np.int64)
    carry_m = np.empty(0, dtype=bool)
    chunk = max(1024, 4 * count)
    left = count
    while left:
        d, m = sampler.sample(rng, chunk)
        d = np.concatenate([carry_d, d])
        m = np.concatenate([carry_m, m])
        walk = np.cumsum(d - 1)
        runmin = np.minimum.accumulate(np.concatenate([[0], walk]))[:-1]
        stops = np.nonzero(walk < runmin)[0][:left] + 1
        starts = np.concatenate([[0], stops[:-1]]).astype(np.int64)
        big = stops - starts > node_cap
        for i in np.nonzero(big)[0]:
            yield Overflow(int(stops[i] - starts[i]))
        keep = ~big
        if np.any(keep):
            yield d, m, starts[keep], stops[keep]
        left -= len(stops)
        if not left:
            return
        tail = int(stops[-1]) if len(stops) else 0
        if len(d) - tail > node_cap:
            yield Overflow(int(len(d) - tail))
            left -= 1
            carry_d, carry_m = carry_d[:0], carry_m[:0]
        else:
            carry_d, carry_m = d[tail:], m[tail:]


def sample_mgw_batch(
    law: MarkedLaw, count: int, rng: np.random.Generator, node_cap: int = 1_000_000, sampler: DegreeSampler | None = None
) -> list[MarkedTree | Overflow]:
    """``count`` independent marked GW trees read off one Lukasiewicz stream."""
    _check_not_supercritical(law)
    sampler = sampler or DegreeSampler(law)
    out: list[MarkedTree | Overflow] = []
    for seg in _segments(sampler, rng, count, node_cap):
        if isinstance(seg, Overflow):
            out.append(seg)
            continue
        d, m, starts, stops = seg
        dl, ml = d.tolist(), m.astype(int).tolist()
        out.extend(MarkedTree(tuple(dl[a:b]), tuple(ml[a:b])) for a, b in zip(starts.tolist(), stops.tolist()))
    return out


def sample_mgw(law: MarkedLaw, cfg: SamplerConfig, count: int = 1) -> list[MarkedTree | Overflow]:
    """Independent marked GW trees, reproducible from ``cfg.seed`` whatever ``cfg.workers``."""
    batches = [(law, min(BATCH_SIZE, count - s), cfg.seed, i, cfg.node_cap) for i, s in enumerate(range(0, count, BATCH_SIZE))]
    parts = run_batches(_mgw_batch_job, batches, cfg.workers)
    return [t for part in parts for t in part]


def _mgw_batch_job(law, count, seed, stream, node_cap):
    return sample_mgw_batch(law, count, make_rng(seed, stream), node_cap)


# ----------------------------------------------------- conditioned trees
@dataclass
class ConditionedResult:
    trees: list[MarkedTree]
    attempts: int
    overflows: int
    theta: float

    @property
    def acceptance_rate(self) -> float:
        return len(self.trees) / self.attempts if self.attempts else 0.0


def default_tilt(law: MarkedLaw) -> float | None:
    """``theta_c`` for a generic law, ``theta_s`` for a non-generic one, nothing when critical."""
    c = classify(law)
    if c.verdict == "Generic":
        return c.theta_c
    if c.verdict == "NonGeneric" and math.isfinite(c.theta_s) and c.theta_s_admissible and c.theta_s != 1.0:
        return c.theta_s
    return None


def sample_conditioned(law: MarkedLaw, n: int, cfg: SamplerConfig, count: int = 1) -> ConditionedResult:
    """Rejection draws of the tree conditioned on ``n`` marks, optionally from a tilted law."""
    theta = 1.0
    source = law
    if cfg.tilt is not None and cfg.tilt != 1.0:
        source = tilt(law, cfg.tilt)
        theta = cfg.tilt
    _check_not_supercritical(source)
    sampler = DegreeSampler(source)
    rng = make_rng(cfg.seed, 0)
    trees: list[MarkedTree] = []
    attempts = overflows = 0
    while len(trees) < count:
        if attempts >= cfg.attempt_cap:
            rate = len(trees) / attempts
            raise SamplingBudgetError(
                f"attempt cap {cfg.attempt_cap} reached with {len(trees)} of {count} trees", rate
            )
        batch = min(1 << 16, cfg.attempt_cap - attempts)
        # trees are only built when their mark count matches
        for seg in _segments(sampler, rng, batch, cfg.node_cap):
            if len(trees) == count:
                break
            if isinstance(seg, Overflow):
                attempts += 1
                overflows += 1
                continue
            d, m, starts, stops = seg
            cm = np.concatenate([[0], np.cumsum(m, dtype=np.int64)])
            hits = np.nonzero(cm[stops] - cm[starts] == n)[0]
            need = count - len(trees)
            if len(hits) >= need:
                # stop counting attempts at the tree that completes the sample
                attempts += int(hits[need - 1]) + 1
                hits = hits[:need]
            else:
                attempts += len(starts)
            for i in hits:
                a, b = int(starts[i]), int(stops[i])
                trees.append(MarkedTree(tuple(d[a:b].tolist()), tuple(m[a:b].astype(int).tolist())))
    return ConditionedResult(trees, attempts, overflows, theta)


class ExactConditionedSampler:
    """Exact draws of restrictions of the tree conditioned on ``n`` marks.

    Marks are split top-down: a node that must carry ``i`` marks in its
    subtree draws its degree and mark from their exact conditional law, then
    shares the remaining marks among its children using the convolution
    powers ``P_k(M = i)`` of the mark-count law.
    """

    def __init__(self, law: MarkedLaw, n: int, tables=None):
        from .decomposition import DecompositionTables

        self.law = law
        self.n = n
        self.tables = tables or DecompositionTables(law, max(n, 8))
        if self.tables.K < n:
            raise ValueError("decomposition tables are too small for n")
        M = self.tables.mark_count_pmf.weights[: n + 1]
        smax = law.support_max()
        kmax = smax if smax is not None else self.tables.kmax
        powers = np.zeros((kmax + 1, n + 1))
        powers[0, 0] = 1.0
        for k in range(1, kmax + 1):
            powers[k] = np.convolve(powers[k - 1], M)[: n + 1]
        self.powers = powers
        self.kmax = kmax
        self._pm, self._pu = law.arrays(kmax)
        self._cum: dict[int, np.ndarray] = {}
        if self.prob_marks() <= 0:
            raise TreeError(f"no tree has exactly {n} marks")

    def prob_marks(self) -> float:
        return float(self.powers[1, self.n])

    def _root_cum(self, i: int) -> np.ndarray:
        if i not in self._cum:
            wu = self._pu * self.powers[:, i]
            wm = self._pm * self.powers[:, i - 1] if i >= 1 else np.zeros_like(wu)
            self._cum[i] = np.cumsum(np.stack([wu, wm], axis=1).ravel())
        return self._cum[i]

    def root_law(self) -> dict[tuple[int, int], float]:
        """Exact ``P(root degree k, root mark | M = n)``."""
        cum = self._root_cum(self.n)
        joint = np.diff(np.concatenate([[0.0], cum])) / cum[-1]
        return {(int(j // 2), int(j % 2)): float(joint[j]) for j in np.nonzero(joint)[0]}

    def _draw_root(self, rng, i: int) -> tuple[int, int]:
        cum = self._root_cum(i)
        idx = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), len(cum) - 1)
        return idx // 2, idx % 2

    def _split(self, rng, k: int, i: int) -> list[int]:
        """Share ``i`` marks among ``k`` subtrees conditioned on their total."""
        parts = []
        left = i
        M = self.powers[1]
        for r in range(k, 1, -1):
            w = M[: left + 1] * self.powers[r - 1, left::-1]
            c = np.cumsum(w)
            j = min(int(np.searchsorted(c, rng.random() * c[-1], side="right")), left)
            parts.append(j)
            left -= j
        parts.append(left)
        return parts

    def sample_restricted(self, rng, h: int, window: str = "height") -> RestrictedTree:
        degrees: list[int] = []
        marks: list[int] = []
        truncated: list[tuple[int, ...]] = []

        def rec(word: tuple[int, ...], i: int) -> None:
            k, mk = self._draw_root(rng, i)
            if len(word) == h:
                degrees.append(0)
                marks.append(0)
                if k:
                    truncated.append(word)
                return
            visible = min(k, h) if window == "norm" else k
            if visible < k:
                truncated.append(word)
            degrees.append(visible)
            marks.append(mk)
            if visible:
                shares = self._split(rng, k, i - mk)
                for c in range(visible):
                    rec(word + (c + 1,), shares[c])

        rec((), self.n)
        return RestrictedTree(MarkedTree(tuple(degrees), tuple(marks)), window, h, frozenset(truncated))

    def sample_root(self, rng, size: int) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized draws of the root ``(degree, mark)`` pair."""
        cum = self._root_cum(self.n)
        idx = np.searchsorted(cum, rng.random(size) * cum[-1], side="right")
        idx = np.minimum(idx, len(cum) - 1)
        return idx // 2, idx % 2


# -------------------------------------------------- restricted limit trees
def _restricted_mgw(sampler: DegreeSampler, rng, depth: int, h: int, window: str, word, deg, marks, truncated) -> None:
    k, mk = sampler.sample(rng, 1)
    k, mk = int(k[0]), int(mk[0])
    if depth == h:
        deg.append(0)
        marks.append(0)
        if k:
            truncated.append(word)
        return
    visible = min(k, h) if window == "norm" else k
    if visible < k:
        truncated.append(word)
    deg.append(visible)
    marks.append(mk)
    for c in range(visible):
        _restricted_mgw(sampler, rng, depth + 1, h, window, word + (c + 1,), deg, marks, truncated)


def _spine_tree(
    law: MarkedLaw, rng, h: int, window: str, special: DegreeSampler, normal: DegreeSampler, infinite_mass: float
) -> tuple[RestrictedTree, dict]:
    deg: list[int] = []
    marks: list[int] = []
    truncated: list[tuple[int, ...]] = []
    info = {"infinite_depth": None, "spine": []}

    def rec(word: tuple[int, ...], is_special: bool) -> None:
        depth = len(word)
        if not is_special:
            _restricted_mgw(normal, rng, depth, h, window, word, deg, marks, truncated)
            return
        info["spine"].append(word)
        infinite = infinite_mass > 0 and rng.random() < infinite_mass
        if infinite:
            k = math.inf
            mk = int(rng.random() < law.mark_limit)
            info["infinite_depth"] = depth
            chosen = None
        else:
            kk, mm = special.sample(rng, 1)
            k, mk = int(kk[0]), int(mm[0])
            chosen = int(rng.integers(1, k + 1))
        if depth == h:
            deg.append(0)
            marks.append(0)
            truncated.append(word)
            return
        visible = min(k, h) if window == "norm" else k
        if math.isinf(visible):
            raise TreeError("the infinite vertex needs the norm window")
        visible = int(visible)
        if visible < k:
            truncated.append(word)
        deg.append(visible)
        marks.append(mk)
        for c in range(1, visible + 1):
            rec(word + (c,), c == chosen)

    rec((), True)
    tree = MarkedTree(tuple(deg), tuple(marks))
    return RestrictedTree(tree, window, h, frozenset(truncated)), info


def sample_kesten_restricted(law: MarkedLaw, h: int, rng, window: str = "height") -> RestrictedTree:
    """Restriction to height ``h`` of the marked Kesten tree of a critical law."""
    if abs(law.mean - 1.0) > 1e-10:
        raise LawError("the Kesten tree needs a critical offspring law", "critical")
    special = DegreeSampler(law, power=1)
    normal = DegreeSampler(law)
    return _spine_tree(law, rng, h, window, special, normal, 0.0)[0]


def sample_condensation_restricted(law: MarkedLaw, h: int, rng) -> RestrictedTree:
    """Norm-``h`` restriction of the marked condensation tree of a sub-critical law."""
    mu = law.mean
    if not mu < 1.0 - SUM_TOL:
        raise LawError("the condensation tree needs a sub-critical offspring law", "subcritical")
    special = DegreeSampler(law, power=1)
    normal = DegreeSampler(law)
    return _spine_tree(law, rng, h, "norm", special, normal, 1.0 - mu)[0]


@dataclass
class LimitTreeSampler:
    """Reusable sampler for restrictions of a limit tree (Kesten or condensation)."""

    law: MarkedLaw
    kind: str
    h: int
    window: str = "height"
    _special: DegreeSampler = field(init=False, repr=False)
    _normal: DegreeSampler = field(init=False, repr=False)

    def __post_init__(self) -> None:
        mu = self.law.mean
        if self.kind == "kesten":
            if abs(mu - 1.0) > 1e-10:
                raise LawError("the Kesten tree needs a critical offspring law", "critical")
            self._inf = 0.0
        elif self.kind == "condensation":
            if not mu < 1.0 - SUM_TOL:
                raise LawError("the condensation tree needs a sub-critical offspring law", "subcritical")
            self._inf = 1.0 - mu
            self.window = "norm"
        else:
            raise ValueError("kind must be 'kesten' or 'condensation'")
        self._special = DegreeSampler(self.law, power=1)
        self._normal = DegreeSampler(self.law)

    def sample(self, rng) -> RestrictedTree:
        return _spine_tree(self.law, rng, self.h, self.window, self._special, self._normal, self._inf)[0]

    def sample_with_info(self, rng) -> tuple[RestrictedTree, dict]:
        return _spine_tree(self.law, rng, self.h, self.window, self._special, self._normal, self._inf)

    def root_draws(self, rng, size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized root draws ``(degree, mark, infinite)``; infinite roots carry degree -1."""
        k, mk = self._special.sample(rng, size)
        inf = np.zeros(size, dtype=bool)
        if self._inf > 0:
            inf = rng.random(size) < self._inf
            mk = np.where(inf, rng.random(size) < self.law.mark_limit, mk)
            k = np.where(inf, -1, k)
        return k, mk.astype(int), inf

    def root_balls(self, rng, size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized depth-1 restrictions: ``(visible degree, root mark, root truncated)``."""
        if self.h != 1:
            raise ValueError("vectorized draws are for h = 1")
        k, mk, inf = self.root_draws(rng, size)
        k = np.where(inf, np.iinfo(np.int64).max, k)
        trunc = np.zeros(size, dtype=bool)
        if self.window == "norm":
            trunc = k > 1
            k = np.minimum(k, 1)
        return k, mk, trunc


def with_seed(cfg: SamplerConfig, seed: int) -> SamplerConfig:
    return replace(cfg, seed=seed)
