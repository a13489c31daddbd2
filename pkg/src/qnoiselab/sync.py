"""Error-synchronization grading, the pairwise-correlation tail lemma and its LP check."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq, linprog
from scipy.special import gammaln

from .channels import ErrorMaskDistribution, WeightSpectrum, mask_correlation

GRADES = ("independent-like", "synchronized", "strong", "very-strong")


@dataclass(frozen=True)
class SyncParams:
    epsilon: float = 0.1
    factor: float = 10.0
    delta: float = 0.1
    substantial: float = 0.01
    min_weight: int = 2


@dataclass
class SyncVerdict:
    grade: str
    rate: float
    evidence: dict
    satisfied: dict
    params: dict = field(default_factory=dict)

    def at_least(self, grade: str) -> bool:
        return GRADES.index(self.grade) >= GRADES.index(grade)

    def to_dict(self):
        return asdict(self)


def classify(spectrum: WeightSpectrum, params: SyncParams | None = None) -> SyncVerdict:
    """Grade a weight spectrum by its tail masses f(>= w).

    * independent-like: f(>= (a + eps) n) < 2^(-eps n)
    * synchronized:     f(>= max(c a n, (a + eps) n, w_min)) >= sigma0
    * strong:           f(>= (1/2 - delta) n) >= sigma0
    * very-strong:      f(>= (3/4 - delta) n) >= sigma0

    The highest satisfied synchronization grade wins; otherwise the spectrum
    is independent-like (``satisfied["exp_decay"]`` records whether the
    exponential bound actually held).  The floor ``w_min`` keeps a single
    isolated error from counting as synchronized when c a n < 1.
    """
    p = params or SyncParams()
    n, a = spectrum.n, spectrum.rate
    probes = {
        "exp_decay": (a + p.epsilon) * n,
        "synchronized": max(p.factor * a * n, (a + p.epsilon) * n, p.min_weight),
        "strong": (0.5 - p.delta) * n,
        "very-strong": (0.75 - p.delta) * n,
    }
    tails = {k: spectrum.tail(w) for k, w in probes.items()}
    sat = {
        "exp_decay": tails["exp_decay"] < 2.0 ** (-p.epsilon * n),
        "synchronized": tails["synchronized"] >= p.substantial,
        "strong": tails["strong"] >= p.substantial,
        "very-strong": tails["very-strong"] >= p.substantial,
    }
    grade = "independent-like"
    for g in ("synchronized", "strong", "very-strong"):
        if sat[g]:
            grade = g
    evidence = {"thresholds": probes, "tails": tails}
    return SyncVerdict(grade, a, evidence, sat, asdict(p))


# ---------------------------------------------------------------------------
# permutation-symmetric mask distributions

def _log_comb(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


@dataclass(frozen=True)
class SymmetricMaskDistribution:
    """Mask distribution invariant under qubit permutations; ``q[k]`` is the mass of weight class k."""

    n: int
    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).copy()
        if q.shape != (self.n + 1,):
            raise ValueError(f"need n+1 = {self.n + 1} class masses, got {q.shape}")
        if q.min() < -1e-12 or abs(q.sum() - 1) > 1e-12:
            raise ValueError("class masses must form a probability vector")
        q = np.clip(q, 0, None)
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    def rate(self) -> float:
        return float(np.dot(self.q, np.arange(self.n + 1)) / self.n)

    def pair_moment(self) -> float:
        k = np.arange(self.n + 1)
        return float(np.dot(self.q, k * (k - 1)) / (self.n * (self.n - 1)))

    def correlation(self) -> float:
        p = self.rate()
        var = p * (1 - p)
        if var <= 1e-24:
            return 0.0
        return (self.pair_moment() - p * p) / var

    def tail(self, threshold: float) -> float:
        """Prob(sum x_i > threshold)."""
        return float(self.q[np.arange(self.n + 1) > threshold].sum())

    def rates(self) -> np.ndarray:
        return np.full(self.n, self.rate())

    def min_correlation(self) -> float:
        return self.correlation()

    def to_table(self) -> ErrorMaskDistribution:
        return ErrorMaskDistribution.from_weight_classes(self.q)

    @classmethod
    def binomial(cls, n, p):
        k = np.arange(n + 1)
        if p <= 0 or p >= 1:
            return cls(n, (k == round(n * p)).astype(float))
        q = np.exp(_log_comb(n, k) + k * np.log(p) + (n - k) * np.log1p(-p))
        return cls(n, q / q.sum())

    @classmethod
    def mixture(cls, parts):
        n = parts[0][1].n
        return cls(n, sum(w * d.q for w, d in parts))


def _rates_and_min_corr(dist):
    if isinstance(dist, SymmetricMaskDistribution):
        return dist.rates(), dist.correlation()
    rates = dist.rates()
    corr = min(
        (mask_correlation(dist, i, j) for i in range(dist.n) for j in range(i + 1, dist.n)),
        default=1.0,
    )
    return rates, corr


def lemma1_hypothesis_check(dist, t: float, s: float) -> bool:
    """True iff t < 1/20, s > 4t, every p_i >= t and every c_ij >= s."""
    if not (t < 1 / 20 and s > 4 * t):
        return False
    rates, corr = _rates_and_min_corr(dist)
    return bool(np.all(rates >= t - 1e-12) and corr >= s - 1e-12)


def lemma1_conclusion(dist, s: float) -> float:
    """Prob(sum_i x_i > s n / 2), computed exactly."""
    return dist.tail(s * dist.n / 2)


@dataclass
class LPResult:
    n: int
    t: float
    s: float
    status: str
    optimum: float | None
    bound: float
    distribution: SymmetricMaskDistribution | None

    @property
    def holds(self) -> bool | None:
        if self.optimum is None:
            return None
        return self.optimum >= self.bound - 1e-9

    def to_dict(self):
        return {
            "n": self.n, "t": self.t, "s": self.s, "status": self.status,
            "optimum": self.optimum, "bound": self.bound, "holds": self.holds,
            "q": None if self.distribution is None else self.distribution.q.tolist(),
        }


def lemma1_lp_oracle(n: int, t: float, s: float, *, enforce_regime: bool = True) -> LPResult:
    """Minimize Prob(sum x > sn/2) over symmetric D with p_i = t and c_ij >= s.

    Variables are the class masses q_0..q_n.  With p fixed at t the
    correlation constraint is linear: E[x_i x_j] >= t^2 + s t (1 - t).
    """
    if n < 2 or n > 200:
        raise ValueError("LP oracle supports 2 <= n <= 200")
    if enforce_regime and not (t < 1 / 20 and s > 4 * t):
        raise ValueError(f"(t, s) = ({t}, {s}) is outside the lemma regime t < 1/20, s > 4t")
    k = np.arange(n + 1)
    c = (k > s * n / 2).astype(float)
    a_eq = np.vstack([np.ones(n + 1), k / n])
    b_eq = np.array([1.0, t])
    a_ub = -(k * (k - 1) / (n * (n - 1)))[None, :]
    b_ub = np.array([-(t * t + s * t * (1 - t))])
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=[(0, None)] * (n + 1), method="highs")
    bound = s * t / 4
    if res.status != 0:
        return LPResult(n, t, s, "infeasible" if res.status == 2 else res.message, None, bound, None)
    q = np.clip(res.x, 0, None)
    return LPResult(n, t, s, "optimal", float(res.fun), bound, SymmetricMaskDistribution(n, q / q.sum()))


@dataclass
class ExtremalConstruction:
    n: int
    t: float
    s: float
    primary: SymmetricMaskDistribution
    modified: SymmetricMaskDistribution

    def summary(self) -> dict:
        out = {}
        for name, d in (("primary", self.primary), ("modified", self.modified)):
            out[name] = {
                "rate": d.rate(),
                "correlation": d.correlation(),
                "tail": lemma1_conclusion(d, self.s),
                "hypothesis_holds": lemma1_hypothesis_check(d, self.t, self.s),
            }
        out["bound"] = self.s * self.t / 4
        return out


def extremal_distribution(n: int, t: float, s: float) -> ExtremalConstruction:
    """The two mixtures from the lemma's proof.

    primary:  all ones w.p. ts/4; a uniform random set of size floor(sn/2)
              w.p. p2; all zeros otherwise; p2 chosen so p_i = t.
    modified: all ones w.p. st/4; iid Bernoulli(s/2) w.p. 2t/s - t/2;
              all zeros otherwise.
    """
    size = math.floor(s * n / 2)
    if size < 1:
        raise ValueError(f"floor(sn/2) = {size}: the construction needs a nonempty random set")
    p1 = t * s / 4
    p2 = (t - p1) * n / size
    p0 = 1 - p1 - p2
    if min(p1, p2, p0) < 0:
        raise ValueError(f"calibration infeasible: masses ({p0}, {p1}, {p2})")
    q = np.zeros(n + 1)
    q[0] += p0
    q[n] += p1
    q[size] += p2
    primary = SymmetricMaskDistribution(n, q)

    m1 = s * t / 4
    m2 = 2 * t / s - t / 2
    m0 = 1 - m1 - m2
    if min(m0, m1, m2) < 0:
        raise ValueError(f"modified calibration infeasible: masses ({m0}, {m1}, {m2})")
    modified = SymmetricMaskDistribution.mixture([
        (m0, SymmetricMaskDistribution.binomial(n, 0.0)),
        (m1, SymmetricMaskDistribution.binomial(n, 1.0)),
        (m2, SymmetricMaskDistribution.binomial(n, s / 2)),
    ])
    return ExtremalConstruction(n, t, s, primary, modified)


def curie_weiss_distribution(n: int, beta: float, h: float) -> SymmetricMaskDistribution:
    """q(k) proportional to C(n, k) exp(beta k^2 / n + h k)."""
    k = np.arange(n + 1)
    logq = _log_comb(n, k) + beta * k * k / n + h * k
    logq -= logq.max()
    q = np.exp(logq)
    return SymmetricMaskDistribution(n, q / q.sum())


def curie_weiss_field_for_rate(n: int, beta: float, rate: float) -> float:
    """External field h giving per-qubit rate ``rate`` at coupling ``beta``."""
    if not 0 < rate < 1:
        raise ValueError("rate must lie strictly between 0 and 1")
    f = lambda h: curie_weiss_distribution(n, beta, h).rate() - rate
    lo, hi = -50.0 - 2 * abs(beta), 50.0 + 2 * abs(beta)
    return brentq(f, lo, hi, xtol=1e-14)
