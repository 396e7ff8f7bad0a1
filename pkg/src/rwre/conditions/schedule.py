"""Scalar machinery: L-dependent parameter schedules, constant audits and
factorial tail bounds.  Everything here is closed-form and exact up to
floating point."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from ..geometry import ScaleSchedule

E_E = math.e**math.e


class ScheduleError(ValueError):
    """Parameters outside the regime where the schedule is defined."""


def lnln(L: float) -> float:
    return math.log(math.log(L))


def effective_gamma(L: float) -> float:
    """gamma_L = ln 2 / lnln L."""
    return math.log(2.0) / lnln(L)


def epsilon_of(L: float) -> float:
    """epsilon(L) = 1 / (lnln L)^2."""
    return 1.0 / lnln(L) ** 2


def c1_of(d: int, kappa: float) -> float:
    """c_1 = -2d ln kappa."""
    return -2.0 * d * math.log(kappa)


@dataclass(frozen=True)
class ParameterSchedule:
    L: float
    d: int
    kappa: float
    gamma_L: float
    epsilon_L: float
    beta1: float
    alpha: float
    a: float
    n_L: int
    betas: tuple[float, ...]
    c1: float
    parallelogram_n: int

    def beta(self, j: int) -> float:
        return self.betas[j - 1]

    def log_threshold(self, j: int) -> float:
        """ln of 1/2 exp(-c_1 L^beta_j)."""
        return -math.log(2.0) - self.c1 * self.L ** self.beta(j)

    def to_json(self) -> dict:
        return {
            "L": self.L, "d": self.d, "kappa": self.kappa, "gamma_L": self.gamma_L,
            "epsilon_L": self.epsilon_L, "beta1": self.beta1, "alpha": self.alpha, "a": self.a,
            "n_L": self.n_L, "betas": list(self.betas), "c1": self.c1,
            "parallelogram_n": self.parallelogram_n,
        }


def parameter_schedule(L: float, d: int, kappa: float) -> ParameterSchedule:
    if not L > E_E:
        raise ScheduleError(f"L must exceed e^e, got {L}")
    if not 0 < kappa < 1:
        raise ScheduleError("kappa must lie in (0, 1)")
    c1 = c1_of(d, kappa)
    if not c1 > 1:
        raise ScheduleError(
            f"c1 = -2d ln kappa = {c1:.6g} is not > 1; need kappa < exp(-1/(2d)) = {math.exp(-1 / (2 * d)):.6g}"
        )
    g = effective_gamma(L)
    eps = epsilon_of(L)
    beta1 = g / 2
    alpha = g / 3
    n_L = math.ceil(4 * (1 - g / 2) / g) + 1
    betas = tuple(beta1 + (j - 1) * g / 4 for j in range(1, n_L + 1))
    if not betas[-1] > 1:
        raise ScheduleError(f"beta_n = {betas[-1]} is not > 1")
    return ParameterSchedule(
        L=float(L), d=d, kappa=kappa, gamma_L=g, epsilon_L=eps, beta1=beta1, alpha=alpha,
        a=L ** (-alpha), n_L=n_L, betas=betas, c1=c1, parallelogram_n=math.floor(L**eps),
    )


# ---------------------------------------------------------------------------
# constants audit


@dataclass
class ConstantAudit:
    d: int
    N0: int
    terms: int
    cprime: list[float]
    cprime_inf: float
    cprime_tail_bound: float
    cprime_inf_lower: float
    series_partial: float
    series_claimed_bound: float
    series_claim_holds: bool
    constants_sufficient: bool
    minimal_lnN0: float
    side_constants: list[float]
    side_inf: float
    back_constants: list[float] | None = None
    back_inf: float | None = None
    kappa: float | None = None
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def _series_term(j: int, N0: int, d: int) -> float:
    return 12 * d * math.log(90 * (j + N0)) / 2**j


def cprime_sequence(d: int, N0: int, terms: int) -> list[float]:
    """c'_0 = (12d + 2/3) ln N0 and c'_k = c'_{k-1} - ln((90(k+N0))^{12d}) / 2^k."""
    out = [(12 * d + 2 / 3) * math.log(N0)]
    for k in range(1, terms + 1):
        out.append(out[-1] - _series_term(k, N0, d))
    return out


def series_tail_bound(d: int, N0: int, K: int) -> float:
    """Upper bound on sum_{j>K} 12d ln(90(j+N0)) / 2^j.

    Uses ln(90(j+N0)) <= ln(90(K+N0)) + (j-K)/(K+N0).
    """
    return 12 * d * 2.0**-K * (math.log(90 * (K + N0)) + 2.0 / (K + N0))


def direct_requirement(x: float, d: int, terms: int = 200) -> float:
    """(2/3)x - 12d ln 90 - 12d sum_j log1p(j e^-x)/2^j, where x = ln N0.

    This is c'_0 minus the full series, written in log space; the recursion
    keeps every c'_k >= 1 exactly when it is at least 1.
    """
    j = np.arange(1, terms + 1, dtype=np.float64)
    s = float(np.sum(np.log1p(j * math.exp(-x)) / 2.0**j))
    return (2 / 3) * x - 12 * d * math.log(90) - 12 * d * s


def minimal_log_N0(d: int, target: float = 1.0, tol: float = 1e-10) -> float:
    lo, hi = 0.0, 1.0
    while direct_requirement(hi, d) < target:
        hi *= 2
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if direct_requirement(mid, d) >= target:
            hi = mid
        else:
            lo = mid
    return hi


def side_constants(N0: int, terms: int) -> list[float]:
    """c'_k = 5 ln N0 / N0 - sum_{j<=k} ln(30 (N0+j)^4) / N_{j-1} (quenched side exits)."""
    sch = ScaleSchedule(N0)
    out = [5 * math.log(N0) / N0]
    for j in range(1, terms + 1):
        num = math.log(30) + 4 * math.log(N0 + j)
        out.append(out[-1] - math.exp(math.log(num) - math.log(sch.scale(j - 1))))
    return out


def back_constants(N0: int, terms: int, d: int, kappa: float) -> list[float]:
    """c''_k of the quenched back-exit recursion."""
    sch = ScaleSchedule(N0)
    c1 = c1_of(d, kappa)
    lk = math.log(kappa)
    out = [5 * math.log(N0) / N0]
    for j in range(1, terms + 1):
        log_prev = math.log(sch.scale(j - 1))
        log_cur = math.log(sch.scale(j))
        ratio = 1.0 / (3 * (N0 + j - 1) ** 2)  # N_{j-1} / N_j
        term = math.exp(math.log(4 * math.log(3)) - log_prev)
        term += (2 + 3 * math.log(3) - 3 * c1 * lk) * ratio + math.exp(math.log(2 * math.log(6)) - log_cur)
        out.append(out[-1] - term)
    return out


def constants_audit(d: int, N0: int, series_terms: int = 64, kappa: float | None = None) -> ConstantAudit:
    ScaleSchedule(N0)
    if N0 < 6:
        raise ScheduleError("N0 must be at least 6")
    if series_terms < 32:
        raise ScheduleError("series_terms must be at least 32")
    cp = cprime_sequence(d, N0, series_terms)
    tail = series_tail_bound(d, N0, series_terms)
    partial = math.fsum(_series_term(j, N0, d) for j in range(1, series_terms + 1))
    claimed = (12 * d + 0.5) * math.log(N0)
    inf_lower = min(cp) - tail
    sufficient = inf_lower >= math.log(N0) / 6 and math.log(N0) / 6 > 1
    side_terms = min(series_terms, 12)
    side = side_constants(N0, side_terms)
    audit = ConstantAudit(
        d=d, N0=N0, terms=series_terms, cprime=cp, cprime_inf=min(cp), cprime_tail_bound=tail,
        cprime_inf_lower=inf_lower, series_partial=partial, series_claimed_bound=claimed,
        series_claim_holds=partial <= claimed, constants_sufficient=sufficient,
        minimal_lnN0=minimal_log_N0(d), side_constants=side, side_inf=min(side), kappa=kappa,
    )
    if kappa is not None:
        back = back_constants(N0, side_terms, d, kappa)
        audit.back_constants = back
        audit.back_inf = min(back)
    if not audit.series_claim_holds:
        audit.notes.append(
            f"series sum {partial:.6g} exceeds (12d+1/2) ln N0 = {claimed:.6g}: the bound needs a larger N0"
        )
    return audit


# ---------------------------------------------------------------------------
# factorial tail bounds


@dataclass(frozen=True)
class BinomialTail:
    n: int
    k: int
    log_exact: float
    log_bound: float

    @property
    def exact(self) -> float:
        return math.exp(self.log_exact)

    @property
    def bound(self) -> float:
        return math.exp(self.log_bound)

    @property
    def holds(self) -> bool:
        return self.log_exact <= self.log_bound + 1e-12


def binomial_tail(n: int, k: int) -> BinomialTail:
    """P(Y >= k) for Y ~ Binomial(n, 1/n) and the bound e/k!, both in log space."""
    if not 0 <= k <= n:
        raise ValueError("need 0 <= k <= n")
    j = np.arange(k, n + 1, dtype=np.float64)
    logpmf = (
        special.gammaln(n + 1) - special.gammaln(j + 1) - special.gammaln(n - j + 1)
        - j * math.log(n) + special.xlog1py(n - j, -1.0 / n)
    )
    log_exact = min(0.0, float(special.logsumexp(logpmf)))
    return BinomialTail(n, k, log_exact, 1.0 - math.lgamma(k + 1))


def log_factorial_bound(d: int, K: int) -> float:
    """ln(5^d e / K!)."""
    return d * math.log(5) + 1.0 - math.lgamma(K + 1)


def quenched_tail_count(L: float, beta: float, d: int) -> int:
    """K = ceil(L^(beta - epsilon(L)) / 5^d)."""
    return math.ceil(L ** (beta - epsilon_of(L)) / 5**d)
