"""Exact finite-n conditional probabilities and their convergence to the limit trees."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .decomposition import DecompositionTables, LatticeError
from .laws import LawError, MarkedLaw, classify, tilt
from .limit_laws import (
    GraftQuery,
    condensation_graft_prob,
    graft_constant_C,
    kesten_ball_limit,
    kesten_graft_prob,
)
from .samplers import ExactConditionedSampler, LimitTreeSampler, make_rng, run_batches


class PreconditionError(ValueError):
    """The law falls outside the regime where a limit statement applies."""


@dataclass
class DiagnosticReport:
    """Values along an ``n`` grid with the limit they should approach."""

    quantity: str
    n_grid: list[int]
    values: list[float]
    predicted_limit: float
    limit_source: str = ""
    ci: list[float] | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ValueError("the n grid must be strictly increasing")
        if len(self.values) != len(self.n_grid):
            raise ValueError("one value per grid point")

    @property
    def residuals(self) -> list[float]:
        return [abs(v - self.predicted_limit) for v in self.values]

    def decreasing(self, allowed_bumps: int = 0) -> bool:
        r = self.residuals
        bumps = sum(1 for a, b in zip(r, r[1:]) if b >= a)
        return bumps <= allowed_bumps

    def to_json_obj(self) -> dict:
        obj = {
            "quantity": self.quantity,
            "n_grid": list(self.n_grid),
            "values": list(self.values),
            "predicted_limit": self.predicted_limit,
            "limit_source": self.limit_source,
            "residuals": self.residuals,
        }
        if self.ci is not None:
            obj["ci_halfwidth"] = list(self.ci)
        if self.extra:
            obj["extra"] = self.extra
        return obj


# ------------------------------------------------------------ exact events
def _graft_series(tables: DecompositionTables, l: int, eta: int, jmin: int, n: int) -> float:
    """``sum_{j >= jmin} p(j) alpha_j P_{j-l}(M = n)`` for a forest of ``j - l`` trees."""
    law = tables.law
    part = "marked" if eta else "unmarked"
    top = tables.kmax
    c = np.zeros(max(top - l + 1, 1))
    lo = max(jmin, l)
    if lo <= top:
        js = np.arange(lo, top + 1)
        c[lo - l :] = np.asarray(law.part_prob(js, part), dtype=float)
    if n == 0:
        return float(np.dot(c, tables.h0 ** np.arange(len(c))))
    comp = tables.compose(c)[: n + 1]
    S = tables.walk_pmf(n).weights[: n + 1]
    i = np.arange(1, n + 1)
    return float(np.dot(i * comp[1:], S[n - 1 :: -1])) / n


def graft_event_prob(query: GraftQuery, tables: DecompositionTables, n: int) -> float:
    """``P(tree in T_+(t, x, k), M = n)`` computed exactly."""
    m = query.m
    if n < m:
        return 0.0
    tables._check_range(n - m)
    C = graft_constant_C(query, tables.law)
    return C * _graft_series(tables, query.l, query.eta, query.k, n - m)


def conditional_graft_prob_exact(query: GraftQuery, tables: DecompositionTables, n: int) -> float:
    """``P(tree in T_+(t, x, k) | M = n)`` from the walk pmfs, with no sampling."""
    if n < query.m:
        return 0.0
    pm = tables.require_lattice(n)
    return graft_event_prob(query, tables, n) / pm


# ---------------------------------------------------------- diagnostics
def diagnostic_delta(tables: DecompositionTables, n: int, m: int) -> float:
    """``P(M = n - m) / P(M = n)``."""
    return tables.prob_mark_count(n - m) / tables.require_lattice(n)


def diagnostic_a(tables: DecompositionTables, n: int, j: int, i: int = 0) -> float:
    """``P_{j-i}(M = n) / ((j - i) P(M = n))``, the normalized forest ratio."""
    r = j - i
    if r < 1:
        raise ValueError("need j > i")
    return tables.prob_mark_count_forest(r, n) / (r * tables.require_lattice(n))


def diagnostic_B(tables: DecompositionTables, n: int, l: int, eta: int) -> float:
    """``sum_{j > l} p(j) alpha_j (j - l) a_{n,j}``."""
    return _graft_series(tables, l, eta, l + 1, n) / tables.require_lattice(n)


def predicted_limit(kind: str, law: MarkedLaw, l: int = 0, eta: int = 0) -> float:
    if kind in ("delta", "a"):
        return 1.0
    if kind == "B":
        return kesten_ball_limit(l, eta, law)
    raise ValueError(f"unknown diagnostic {kind!r}")


def diagnostic_report(kind: str, tables: DecompositionTables, n_grid: Sequence[int], **kw) -> DiagnosticReport:
    law = tables.law
    if kind == "delta":
        vals = [diagnostic_delta(tables, n, kw.get("m", 0)) for n in n_grid]
        lim, src = 1.0, "ratio of mark-count probabilities"
    elif kind == "a":
        vals = [diagnostic_a(tables, n, kw.get("j", 1), kw.get("i", 0)) for n in n_grid]
        lim, src = 1.0, "forest ratio"
    elif kind == "B":
        l, eta = kw.get("l", 0), kw.get("eta", 0)
        vals = [diagnostic_B(tables, n, l, eta) for n in n_grid]
        lim, src = predicted_limit("B", law, l, eta), "E[(X-l)_+ alpha_X] + (1-mu) alpha_inf"
    else:
        raise ValueError(f"unknown diagnostic {kind!r}")
    return DiagnosticReport(kind, list(n_grid), vals, lim, src, extra=dict(kw))


# -------------------------------------------------------- strong ratios
def _heavy_tailed(law: MarkedLaw) -> bool:
    return law.p.has_tail and law.radius <= 1.0


def strong_ratio_check(tables: DecompositionTables, n_grid: Sequence[int], m: int = 0, u: int = 0) -> DiagnosticReport:
    """``P(S_{n+m} = n - u) / P(S_n = n)`` along a grid."""
    mu1 = tables.mu1
    if abs(mu1 - 1.0) > 1e-10 and not _heavy_tailed(tables.law):
        raise PreconditionError(
            "the forest step law is light-tailed with mean below 1: ratios of walk probabilities "
            "decay exponentially and need not tend to 1"
        )
    vals = []
    for n in n_grid:
        tables._check_range(n + m)
        den = tables.walk_pmf(n)[n]
        if den <= 0:
            raise LatticeError(f"P(S_{n} = {n}) = 0 (period {tables.period})")
        vals.append(tables.walk_pmf(n + m)[n - u] / den)
    return DiagnosticReport("strong_ratio", list(n_grid), vals, 1.0, "strong ratio limit", extra={"m": m, "u": u})


# -------------------------------------------------------- tail constants
@dataclass(frozen=True)
class TailTarget:
    exponent: float
    scale: float
    constant: float


@dataclass(frozen=True)
class TailConstants:
    aleph: float
    c_N: float
    c_Z0: float
    N: TailTarget
    Z1: TailTarget
    Z0: TailTarget
    consistency: dict

    def to_json_obj(self) -> dict:
        return {
            "aleph": self.aleph,
            "c_N": self.c_N,
            "c_Z0": self.c_Z0,
            "targets": {k: vars(getattr(self, k)) for k in ("N", "Z1", "Z0")},
            "consistency": self.consistency,
        }


def tail_constants(law: MarkedLaw, tables: DecompositionTables | None = None) -> TailConstants:
    """Closed-form tail constants of ``N``, ``Z1`` and ``Z0`` for a power-law offspring law."""
    if not law.p.has_tail or law.p.decay != 1.0 or law.theta != 1.0:
        raise LawError("tail constants need an untilted pure power-law offspring law", "power-law")
    b = law.moment(0, part="marked")
    if not b > 0:
        raise LawError("no node can carry a mark", "condq")
    alpha_ = law.p.alpha
    C = law.p.constant
    mu = law.mean
    m0 = law.moment(1, part="unmarked")
    mq = law.moment(1, part="marked")
    EN = b / (1.0 - m0)
    q = law.q
    if q.beta is None:
        ell = q.limit
        c_N = (1.0 - ell) * EN**alpha_ / (1.0 - m0)
        aleph = EN**alpha_ / b * (mq + ell * (1.0 - mu)) / (1.0 - m0)
        c_Z0 = EN**alpha_ / ((1.0 - b) * (1.0 - m0)) if b < 1 else math.nan
        n_target = TailTarget(1.0 + alpha_, C, c_N)
        z0_target = TailTarget(1.0 + alpha_, C, (1.0 - ell) * c_Z0)
    else:
        ell = 1.0
        ab = alpha_ + q.beta
        c_N = EN**ab / (1.0 - m0)
        aleph = EN**alpha_ / b
        c_Z0 = EN**ab / ((1.0 - b) * (1.0 - m0)) if b < 1 else math.nan
        n_target = TailTarget(1.0 + ab, C * q.scale, c_N)
        z0_target = TailTarget(1.0 + ab, C * q.scale, c_Z0)
    mu1 = mq / (1.0 - m0)
    ratio_N = c_N / aleph if q.beta is None else 0.0
    long_form = EN + (1.0 - mu1) * ratio_N
    short_form = b / (mq + ell * (1.0 - mu))
    consistency = {
        "N_ratio_limit_long": long_form,
        "N_ratio_limit_short": short_form,
        "agree": bool(abs(long_form - short_form) <= 1e-10 * max(1.0, abs(short_form))),
    }
    if tables is not None:
        consistency["mean_N_table"] = tables.pmf_N.mean()
        consistency["mean_N_closed"] = EN
    return TailConstants(aleph, c_N, c_Z0, n_target, TailTarget(1.0 + alpha_, C, aleph), z0_target, consistency)


def tail_check(pmf, exponent: float, constant: float, n_grid: Sequence[int], scale: float = 1.0) -> DiagnosticReport:
    """``n**exponent * pmf(n) / scale`` against the predicted constant."""
    vals = [n**exponent * pmf[n] / scale for n in n_grid]
    return DiagnosticReport("tail", list(n_grid), vals, constant, "tail constant", extra={"exponent": exponent})


# --------------------------------------------------- limit for a given law
@dataclass(frozen=True)
class LimitChoice:
    kind: str
    law: MarkedLaw
    window: str
    verdict: str


def limit_for(law: MarkedLaw) -> LimitChoice:
    """The local limit of the conditioned tree: Kesten, tilted Kesten, or condensation."""
    c = classify(law)
    if c.verdict == "Critical":
        return LimitChoice("kesten", law, "height", c.verdict)
    if c.verdict == "Generic":
        return LimitChoice("kesten", tilt(law, c.theta_c), "height", c.verdict)
    return LimitChoice("condensation", law, "norm", c.verdict)


def limit_graft_prob(query: GraftQuery, law: MarkedLaw) -> float:
    choice = limit_for(law)
    if choice.kind == "kesten":
        return kesten_graft_prob(query, choice.law)
    return condensation_graft_prob(query, choice.law)


# ------------------------------------------------------------------- TV
# Balls are compared through the restricted tree alone: the truncation flags
# carry information the restriction itself does not reveal.
def _root_codes(deg: np.ndarray, mark: np.ndarray) -> np.ndarray:
    return deg.astype(np.int64) * 2 + mark.astype(np.int64)


@lru_cache(maxsize=8)
def _conditioned_sampler(law: MarkedLaw, n: int) -> ExactConditionedSampler:
    return ExactConditionedSampler(law, n)


def _cond_batch(law, n, h, window, count, seed, stream):
    sampler = _conditioned_sampler(law, n)
    rng = make_rng(seed, stream)
    if h == 1:
        k, mk = sampler.sample_root(rng, count)
        if window == "norm":
            k = np.minimum(k, 1)
        return Counter(_root_codes(k, mk).tolist())
    return Counter(sampler.sample_restricted(rng, h, window).tree.to_text() for _ in range(count))


def _limit_batch(law, kind, h, count, seed, stream):
    sampler = LimitTreeSampler(law, kind, h)
    rng = make_rng(seed, stream)
    if h == 1:
        k, mk, _ = sampler.root_balls(rng, count)
        return Counter(_root_codes(k, mk).tolist())
    return Counter(sampler.sample(rng).tree.to_text() for _ in range(count))


def _merge(parts: list[Counter]) -> Counter:
    out: Counter = Counter()
    for p in parts:
        out.update(p)
    return out


def tv_distance(a: Counter, b: Counter) -> float:
    na, nb = sum(a.values()), sum(b.values())
    keys = set(a) | set(b)
    return 0.5 * math.fsum(abs(a.get(k, 0) / na - b.get(k, 0) / nb) for k in keys)


def _exact_root_tv(law: MarkedLaw, choice: LimitChoice, n: int, tables) -> float:
    """Exact TV between depth-1 restrictions (possible because only the root shows)."""
    cond = ExactConditionedSampler(law, n, tables).root_law()
    lim_law = choice.law
    window = choice.window

    def code(k, m):
        return (min(k, 1), m) if window == "norm" else (k, m)

    p: Counter = Counter()
    for (k, m), w in cond.items():
        p[code(k, m)] += w
    q: Counter = Counter()
    smax = lim_law.support_max()
    top = smax if smax is not None else tables.kmax
    ks = np.arange(top + 1)
    pm, pu = lim_law.arrays(top)
    mu = lim_law.mean
    for k in ks[1:]:
        q[code(int(k), 1)] += k * pm[k] / mu
        q[code(int(k), 0)] += k * pu[k] / mu
    if choice.kind == "condensation":
        # the infinite vertex and degrees beyond the table both show one child
        rest = 1.0 - math.fsum(q.values())
        ell = lim_law.mark_limit
        inf = 1.0 - mu
        q[(1, 1)] += ell * inf + max(rest - inf, 0.0) * ell
        q[(1, 0)] += (1 - ell) * inf + max(rest - inf, 0.0) * (1 - ell)
    keys = set(p) | set(q)
    return 0.5 * math.fsum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def tv_convergence_experiment(
    law: MarkedLaw,
    h: int,
    n_grid: Sequence[int],
    samples: int = 1_000_000,
    seed: int = 0,
    workers: int = 1,
    batch: int = 100_000,
) -> DiagnosticReport:
    """Monte Carlo total variation between restrictions of the conditioned tree and of its limit."""
    choice = limit_for(law)
    n_grid = list(n_grid)
    if h == 0:
        return DiagnosticReport("tv", n_grid, [0.0] * len(n_grid), 0.0, f"{choice.kind} limit", [0.0] * len(n_grid),
                                {"limit": choice.kind, "verdict": choice.verdict, "h": h})
    chunks = [min(batch, samples - s) for s in range(0, samples, batch)]
    lim_counts = _merge(
        run_batches(_limit_batch, [(choice.law, choice.kind, h, c, seed, 10**6 + i) for i, c in enumerate(chunks)], workers)
    )
    values, ci, exact = [], [], []
    tables = DecompositionTables(law, max(max(n_grid), 8))
    flagged = False
    for g, n in enumerate(n_grid):
        cond_counts = _merge(
            run_batches(_cond_batch, [(law, n, h, choice.window, c, seed, (g + 1) * 10**4 + i) for i, c in enumerate(chunks)], workers)
        )
        values.append(tv_distance(cond_counts, lim_counts))
        cells = set(cond_counts) | set(lim_counts)
        hw = 0.5 * sum(
            math.sqrt(cnt.get(k, 0) / samples * (1 - cnt.get(k, 0) / samples) / samples)
            for cnt in (cond_counts, lim_counts)
            for k in cells
        )
        if len(cells) > samples / 10:
            flagged = True
        ci.append(hw)
        if h == 1:
            exact.append(_exact_root_tv(law, choice, n, tables))
    extra = {"limit": choice.kind, "verdict": choice.verdict, "h": h, "samples": samples, "widened": flagged}
    if exact:
        extra["exact_tv"] = exact
    return DiagnosticReport("tv", n_grid, values, 0.0, f"{choice.kind} limit", ci, extra)
