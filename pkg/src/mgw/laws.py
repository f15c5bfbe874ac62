"""Offspring laws, mark functions, tilting and the generic/non-generic classifier."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy.special import zeta

SUM_TOL = 1e-12
SERIES_TOL = 1e-14
MAX_SERIES_TERMS = 10_000_000
_CHUNK = 1 << 16


class LawError(ValueError):
    """A law violates one of the standing conditions."""

    def __init__(self, message: str, condition: str = "law"):
        super().__init__(message)
        self.condition = condition


class AdmissibilityError(LawError):
    """The tilt parameter lies outside the admissible set."""

    def __init__(self, message: str):
        super().__init__(message, "admissible-theta")


def power_sum(s: float, z: float, start: int) -> float:
    """``sum_{k >= start} k**(-s) * z**k`` for ``0 <= z <= 1``; ``inf`` if divergent."""
    if start < 1:
        raise ValueError("power sums start at k >= 1")
    if z > 1.0 + 1e-15:
        return math.inf
    if z >= 1.0 - 1e-15:
        return float(zeta(s, start)) if s > 1 else math.inf
    if z == 0.0:
        return 0.0
    total = 0.0
    k0 = start
    logz = math.log(z)
    while True:
        ks = np.arange(k0, k0 + _CHUNK, dtype=float)
        total += float(np.sum(np.exp(-s * np.log(ks) + ks * logz)))
        k0 += _CHUNK
        bound = math.exp(-s * math.log(k0) + k0 * logz) / (1.0 - z)
        if bound <= SERIES_TOL * max(total, 1e-300) or k0 - start >= MAX_SERIES_TERMS:
            if s > 1:
                bound = min(bound, float(zeta(s, k0)) * math.exp(k0 * logz))
            return total + (bound if bound > SERIES_TOL * max(total, 1e-300) else 0.0)


# ---------------------------------------------------------------- components
@dataclass(frozen=True)
class OffspringLaw:
    """Offspring distribution: an explicit head plus an optional power tail.

    For ``k >= len(head)`` the law is ``constant * k**-(1 + alpha) * decay**-k``.
    ``decay`` is the radius of convergence of the generating function; it is 1
    for a pure power law and ``inf`` for finite support.
    """

    head: tuple[float, ...]
    constant: float = 0.0
    alpha: float | None = None
    decay: float = 1.0

    @classmethod
    def finite(cls, probs) -> "OffspringLaw":
        probs = [float(x) for x in probs]
        while len(probs) > 1 and probs[-1] == 0.0:
            probs.pop()
        return cls(tuple(probs))

    @classmethod
    def power_law(cls, alpha: float, constant: float, p0: float | None = None, decay: float = 1.0) -> "OffspringLaw":
        """``p(k) = constant * k**-(1+alpha) * decay**-k`` for ``k >= 1``; ``p(0)`` fills the rest by default."""
        if alpha is None or constant <= 0:
            raise LawError("a power law needs alpha and a positive constant", "condp")
        if decay < 1:
            raise LawError("decay must be at least 1", "condp")
        if p0 is None:
            p0 = 1.0 - constant * power_sum(1 + alpha, 1.0 / decay, 1)
        return cls((float(p0),), float(constant), float(alpha), float(decay))

    @property
    def has_tail(self) -> bool:
        return self.constant > 0

    @property
    def radius(self) -> float:
        return self.decay if self.has_tail else math.inf

    def tail_value(self, k):
        k = np.asarray(k, dtype=float)
        return self.constant * np.exp(-(1 + self.alpha) * np.log(k) - k * math.log(self.decay))

    def to_json_obj(self) -> dict:
        if not self.has_tail:
            return {"kind": "finite", "probs": list(self.head)}
        obj = {"kind": "power", "alpha": self.alpha, "constant": self.constant, "p0": self.head[0]}
        if self.decay != 1.0:
            obj["decay"] = self.decay
        return obj


@dataclass(frozen=True)
class MarkFunction:
    """Mark probabilities ``q(k)``: a finite table followed by a tail rule.

    The tail is the constant ``limit`` or, when ``beta`` is given (which
    requires ``limit == 1``), ``1 - scale * k**-beta``.
    """

    values: tuple[float, ...] = ()
    limit: float = 0.0
    beta: float | None = None
    scale: float = 0.0

    def __post_init__(self) -> None:
        if any(not 0.0 <= v <= 1.0 for v in self.values):
            raise LawError("mark probabilities must lie in [0, 1]", "condq")
        if not 0.0 <= self.limit <= 1.0:
            raise LawError("the mark limit must lie in [0, 1]", "condq")
        if self.beta is not None:
            if self.limit != 1.0:
                raise LawError("a power tail for q requires limit 1", "defqlim1")
            if self.beta < 2:
                raise LawError("beta must be at least 2", "defqlim1")
            first = max(len(self.values), 1)
            if not 0 < self.scale <= first**self.beta:
                raise LawError("tail scale puts q outside [0, 1]", "defqlim1")

    @classmethod
    def constant(cls, value: float) -> "MarkFunction":
        return cls((), float(value))

    def __call__(self, k):
        k = np.asarray(k)
        out = np.empty(k.shape, dtype=float)
        n = len(self.values)
        small = k < n
        if np.any(small):
            out[small] = np.asarray(self.values, dtype=float)[k[small].astype(int)]
        big = ~small
        if np.any(big):
            if self.beta is None:
                out[big] = self.limit
            else:
                out[big] = 1.0 - self.scale * np.power(k[big].astype(float), -self.beta)
        return out if out.shape else float(out)

    def to_json_obj(self) -> dict:
        if not self.values and self.beta is None:
            return {"kind": "constant", "value": self.limit}
        obj: dict[str, Any] = {"kind": "table", "values": list(self.values), "limit": self.limit}
        if self.beta is not None:
            obj.update(beta=self.beta, scale=self.scale)
        return obj


# ------------------------------------------------------------------- the pair
_PARTS = ("all", "marked", "unmarked")


@dataclass(frozen=True)
class MarkedLaw:
    """An offspring law together with its mark function, possibly tilted.

    ``theta`` and ``c`` describe a tilt applied to the base pair: the
    probability of ``k`` children with a mark is ``c * theta**(k-1) * p(k) q(k)``
    and without a mark ``theta**(k-1) * p(k) (1 - q(k))``.
    """

    p: OffspringLaw
    q: MarkFunction
    theta: float = 1.0
    c: float = 1.0
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.validate and self.theta == 1.0 and self.c == 1.0:
            self._check_conditions()

    # ---- validation
    def _check_conditions(self) -> None:
        head = np.asarray(self.p.head, dtype=float)
        if np.any(head < 0) or not np.all(np.isfinite(head)):
            raise LawError("offspring probabilities must be nonnegative", "condp")
        if self.p.has_tail and (self.p.alpha is None or self.p.alpha <= 2) and self.p.decay == 1.0:
            raise LawError("the power tail needs alpha > 2 for a finite second moment", "condp")
        total = self.moment(0)
        if abs(total - 1.0) > SUM_TOL:
            raise LawError(f"offspring probabilities sum to {total!r}, not 1", "condp")
        p0 = self.prob(0)
        if not p0 > 0:
            raise LawError("p(0) must be positive", "condp")
        if not p0 + self.prob(1) < 1:
            raise LawError("p(0) + p(1) must be below 1", "condp")
        if not math.isfinite(self.moment(2)):
            raise LawError("the offspring law needs a finite second moment", "condp")
        if not self.moment(0, part="marked") - self.prob(0) * float(self.q(0)) > 0:
            raise LawError("some k >= 1 with p(k) q(k) > 0 is required", "condq")

    # ---- pointwise values
    @property
    def _cut(self) -> int:
        """First index from which both p and q follow their tail rules."""
        return max(len(self.p.head), len(self.q.values))

    def base_prob(self, k):
        k = np.asarray(k)
        out = np.zeros(k.shape, dtype=float)
        n = len(self.p.head)
        small = k < n
        if np.any(small):
            out[small] = np.asarray(self.p.head, dtype=float)[k[small].astype(int)]
        if self.p.has_tail:
            big = ~small
            if np.any(big):
                out[big] = self.p.tail_value(k[big])
        return out

    def part_prob(self, k, part: str = "all"):
        """Probability of ``k`` children together with a given mark state."""
        k = np.asarray(k)
        base = self.base_prob(k)
        qk = np.asarray(self.q(k), dtype=float)
        if self.theta != 1.0:
            # theta**(k-1) can overflow where p(k) underflows; combine in log space
            with np.errstate(divide="ignore"):
                logs = (k.astype(float) - 1.0) * math.log(self.theta) + np.log(base)
            base = np.where(base > 0, np.exp(logs), 0.0)
        marked = self.c * base * qk
        unmarked = base * (1.0 - qk)
        if part == "marked":
            out = marked
        elif part == "unmarked":
            out = unmarked
        else:
            out = marked + unmarked
        return out if out.shape else float(out)

    def prob(self, k):
        return self.part_prob(k, "all")

    def mark_prob(self, k):
        """Mark probability of a node with ``k`` children (0 where ``p(k) = 0``)."""
        k = np.asarray(k)
        qk = np.asarray(self.q(k), dtype=float)
        qt = self.c * qk / (self.c * qk + 1.0 - qk)
        out = np.where(self.base_prob(k) > 0, qt, 0.0)
        return out if out.shape else float(out)

    def arrays(self, kmax: int) -> tuple[np.ndarray, np.ndarray]:
        """``(p(k) q(k), p(k) (1 - q(k)))`` for ``k = 0..kmax``."""
        ks = np.arange(kmax + 1)
        return self.part_prob(ks, "marked"), self.part_prob(ks, "unmarked")

    # ---- series
    def _tail_terms(self, part: str) -> list[tuple[float, float]]:
        """Tail of the part as ``sum coef * k**-s * (theta/decay)**k`` (base, untilted)."""
        if not self.p.has_tail:
            return []
        C, s = self.p.constant, 1.0 + self.p.alpha
        q = self.q
        if q.beta is None:
            ell = q.limit
            table = {"all": [(C, s)], "marked": [(C * ell, s)], "unmarked": [(C * (1 - ell), s)]}
        else:
            table = {
                "all": [(C, s)],
                "marked": [(C, s), (-C * q.scale, s + q.beta)],
                "unmarked": [(C * q.scale, s + q.beta)],
            }
        return [(a, b) for a, b in table[part] if a != 0.0]

    def _base_moment(self, j: int, theta: float, part: str, start: int) -> float:
        cut = self._cut if self.p.has_tail else len(self.p.head)
        total = 0.0
        if start < cut:
            ks = np.arange(start, cut)
            base = self.base_prob(ks)
            qk = np.asarray(self.q(ks), dtype=float)
            w = {"all": np.ones_like(qk), "marked": qk, "unmarked": 1.0 - qk}[part]
            total += float(np.sum(base * w * np.power(theta, ks.astype(float)) * np.power(ks.astype(float), j)))
        if self.p.has_tail:
            z = theta / self.p.decay
            for coef, s in self._tail_terms(part):
                val = power_sum(s - j, z, max(cut, start, 1))
                if math.isinf(val):
                    return math.inf
                total += coef * val
        return total

    def moment(self, j: int = 0, theta: float = 1.0, part: str = "all", start: int = 0) -> float:
        """``sum_{k >= start} theta**k k**j P(k children, mark state)``."""
        if part not in _PARTS:
            raise ValueError(f"part must be one of {_PARTS}")
        if part == "all":
            a = self.moment(j, theta, "marked", start)
            b = self.moment(j, theta, "unmarked", start)
            return a + b
        val = self._base_moment(j, theta * self.theta, part, start)
        if part == "marked":
            return self.c / self.theta * val
        return val / self.theta

    # ---- basic characteristics
    @property
    def radius(self) -> float:
        """Radius of convergence of the generating function."""
        return self.p.radius / self.theta

    @property
    def radius_l(self) -> float:
        """Radius of convergence of ``l(s) = E[s^X (1 - q(X))]``."""
        if not self.p.has_tail or not self._tail_terms("unmarked"):
            return math.inf
        return self.radius

    @property
    def mean(self) -> float:
        return self.moment(1)

    @property
    def mark_limit(self) -> float:
        """``lim q(k)``; tilting maps ``ell`` to ``c ell / (c ell + 1 - ell)``."""
        ell = self.q.limit
        return self.c * ell / (self.c * ell + 1.0 - ell)

    @property
    def is_finite_support(self) -> bool:
        return not self.p.has_tail

    def support_max(self) -> int | None:
        if self.p.has_tail:
            return None
        return len(self.p.head) - 1

    def tilt(self, theta: float) -> "MarkedLaw":
        return tilt(self, theta)

    # ---- io
    def to_json_obj(self) -> dict:
        obj = {"offspring": self.p.to_json_obj(), "mark": self.q.to_json_obj()}
        if self.theta != 1.0:
            obj["tilt"] = {"theta": self.theta, "c": self.c}
        return obj

    def describe(self) -> str:
        return json.dumps(self.to_json_obj())


# ------------------------------------------------------------ constructors
def binary_law(p0: float, q) -> MarkedLaw:
    """``p(0) = p0``, ``p(2) = 1 - p0`` with a constant or tabulated mark function."""
    p = OffspringLaw.finite([p0, 0.0, 1.0 - p0])
    mark = MarkFunction.constant(q) if np.isscalar(q) else MarkFunction(tuple(q), float(q[-1]))
    return MarkedLaw(p, mark)


def law_from_json_obj(obj: dict) -> MarkedLaw:
    try:
        off = obj["offspring"]
        mark = obj["mark"]
    except (KeyError, TypeError):
        raise LawError("law files need 'offspring' and 'mark' entries", "format") from None
    kind = off.get("kind", "finite")
    if kind == "finite":
        p = OffspringLaw.finite(off["probs"])
    elif kind == "power":
        p = OffspringLaw.power_law(off["alpha"], off["constant"], off.get("p0"), off.get("decay", 1.0))
    else:
        raise LawError(f"unknown offspring kind {kind!r}", "format")
    mkind = mark.get("kind", "constant" if "value" in mark else "table")
    if mkind == "constant":
        q = MarkFunction.constant(mark["value"])
    elif mkind == "table":
        values = tuple(float(v) for v in mark.get("values", ()))
        limit = float(mark.get("limit", values[-1] if values else 0.0))
        q = MarkFunction(values, limit, mark.get("beta"), float(mark.get("scale", 0.0)))
    else:
        raise LawError(f"unknown mark kind {mkind!r}", "format")
    law = MarkedLaw(p, q)
    if "tilt" in obj:
        law = tilt(law, float(obj["tilt"]["theta"]))
    return law


def load_law(path: str | Path) -> MarkedLaw:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise LawError(f"law file is not valid JSON: {exc}", "format") from None
    return law_from_json_obj(obj)


# -------------------------------------------------------- analytic quantities
@dataclass(frozen=True)
class GeneratingValues:
    g: float
    dg: float
    l: float
    dl: float

    @property
    def divergent(self) -> bool:
        return math.isinf(self.g)


def generating_values(law: MarkedLaw, theta: float) -> GeneratingValues:
    """``g(theta)``, ``g'(theta)``, ``l(theta)`` and ``l'(theta)``; ``inf`` flags divergence."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    g = law.moment(0, theta)
    dg = law.moment(1, theta) / theta
    l = law.moment(0, theta, "unmarked")
    dl = law.moment(1, theta, "unmarked") / theta
    return GeneratingValues(g, dg, l, dl)


def in_admissible_set(law: MarkedLaw, theta: float) -> bool:
    """``theta`` is admissible when ``g(theta)`` is finite and ``l(theta) < theta``."""
    if theta <= 0:
        return False
    g = law.moment(0, theta)
    if not math.isfinite(g):
        return False
    if not law.moment(0, theta, "marked") > 0:
        return False
    return law.moment(0, theta, "unmarked") < theta


def _c_unchecked(law: MarkedLaw, theta: float) -> float:
    l = law.moment(0, theta, "unmarked")
    a = law.moment(0, theta, "marked")
    return (theta - l) / a


def c_theta(law: MarkedLaw, theta: float) -> float:
    """Normalizer of the tilted pair."""
    if not in_admissible_set(law, theta):
        raise AdmissibilityError(f"theta={theta!r} is not admissible")
    return _c_unchecked(law, theta)


def tilt(law: MarkedLaw, theta: float) -> MarkedLaw:
    """The tilted pair ``(p_theta, q_theta)``; tilts compose multiplicatively."""
    c = c_theta(law, theta)
    if theta == 1.0 and abs(c - 1.0) < 1e-15:
        return law
    return MarkedLaw(law.p, law.q, law.theta * theta, law.c * c, validate=False)


def _tilted_mean_unchecked(law: MarkedLaw, theta: float) -> float:
    c = _c_unchecked(law, theta)
    return (c * law.moment(1, theta, "marked") + law.moment(1, theta, "unmarked")) / theta


def tilted_mean(law: MarkedLaw, theta: float) -> float:
    """Mean of the tilted offspring law."""
    if not in_admissible_set(law, theta):
        raise AdmissibilityError(f"theta={theta!r} is not admissible")
    return _tilted_mean_unchecked(law, theta)


def mark_ratio(law: MarkedLaw, s: float) -> float:
    """``G(s) = E[X s^(X-1) q(X)] / E[s^X q(X)]``."""
    return law.moment(1, s, "marked") / (s * law.moment(0, s, "marked"))


# ---------------------------------------------------------------- classifier
@dataclass(frozen=True)
class Classification:
    verdict: str
    theta_c: float | None
    theta_s: float
    theta_s_admissible: bool
    branch: str
    diagnostics: dict = field(default_factory=dict)

    @property
    def admissible_interval(self) -> str:
        if math.isinf(self.theta_s):
            return "(0, inf)"
        close = "]" if self.theta_s_admissible else ")"
        return f"(0, {self.theta_s!r}{close}"

    def to_json_obj(self) -> dict:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return "inf" if v > 0 else "-inf"
            return v

        obj = {"verdict": self.verdict, "branch": self.branch, "I": self.admissible_interval}
        if self.theta_c is not None:
            obj["theta_c"] = self.theta_c
        obj["theta_s"] = clean(self.theta_s)
        obj["diagnostics"] = {k: clean(v) for k, v in self.diagnostics.items()}
        return obj


def _bisect(pred, lo: float, hi: float, tol: float = 1e-12, max_iter: int = 200) -> tuple[float, float]:
    """Shrink ``[lo, hi]`` keeping ``pred(lo)`` true and ``pred(hi)`` false."""
    for _ in range(max_iter):
        if hi - lo <= tol * max(1.0, lo):
            break
        mid = 0.5 * (lo + hi)
        if pred(mid):
            lo = mid
        else:
            hi = mid
    return lo, hi


def admissible_sup(law: MarkedLaw) -> tuple[float, bool]:
    """``(sup I, whether sup I belongs to I)``, searching ``theta >= 1``."""
    rho = law.radius
    if math.isfinite(rho):
        if in_admissible_set(law, rho):
            return rho, True
        lo, hi = _bisect(lambda t: in_admissible_set(law, t), 1.0, rho)
        return hi, False
    hi = 2.0
    while in_admissible_set(law, hi):
        if hi > 1e12:
            return math.inf, False
        hi *= 2.0
    lo, hi = _bisect(lambda t: in_admissible_set(law, t), hi / 2.0, hi)
    return hi, False


def classify(law: MarkedLaw) -> Classification:
    """Critical, generic sub-critical (with ``theta_c``) or non-generic (with ``theta_s``)."""
    mu = law.mean
    if mu > 1.0 + SUM_TOL:
        raise LawError(f"super-critical offspring law (mean {mu!r})", "subcritical")
    rho = law.radius
    diag: dict[str, Any] = {"mean": mu, "rho": rho, "rho_l": law.radius_l}
    if abs(mu - 1.0) <= SUM_TOL:
        theta_s, s_in = admissible_sup(law) if rho > 1 else (1.0, True)
        return Classification("Critical", 1.0, theta_s, s_in, "mean=1", diag)
    if rho <= 1.0:
        diag["tilted_mean_at_theta_s"] = mu
        return Classification("NonGeneric", None, 1.0, True, "rho=1", diag)

    theta_s, s_in = admissible_sup(law)
    diag["theta_s_admissible"] = s_in
    if math.isfinite(rho):
        dl_rho = law.moment(1, rho, "unmarked") / rho
        diag["dl_rho"] = dl_rho
        diag["dg_rho"] = law.moment(1, rho) / rho
        branch = "rho finite, l'(rho)>=1" if dl_rho >= 1 else "rho finite, l'(rho)<1"
    else:
        branch = "rho=inf"

    if s_in:
        mean_s = _tilted_mean_unchecked(law, theta_s)
        diag["tilted_mean_at_theta_s"] = mean_s
        G = mark_ratio(law, theta_s)
        l_s = law.moment(0, theta_s, "unmarked")
        dl_s = law.moment(1, theta_s, "unmarked") / theta_s
        threshold = (1.0 - dl_s) / (theta_s - l_s)
        diag.update(G_theta_s=G, threshold=threshold, inequality_holds=bool(G < threshold))
        if mean_s < 1.0:
            return Classification("NonGeneric", None, theta_s, True, branch, diag)

    def below(t: float) -> bool:
        return in_admissible_set(law, t) and _tilted_mean_unchecked(law, t) < 1.0

    hi = theta_s
    if math.isinf(hi):
        hi = 2.0
        while below(hi):
            hi *= 2.0
            if hi > 1e12:
                raise LawError("could not bracket the critical tilt", "classifier")
    lo, hi = _bisect(below, 1.0, hi)
    theta_c = 0.5 * (lo + hi)
    diag["tilted_mean_at_theta_c"] = _tilted_mean_unchecked(law, theta_c)
    return Classification("Generic", theta_c, theta_s, s_in, branch, diag)
