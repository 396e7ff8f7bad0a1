"""The effective criterion: rho moments over sampled environments, the
criterion product, the schedule decomposition of E[rho^a], and quenched
exit tails."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special

from ..environment import EnvironmentLaw, ExplicitEnvironment, LawError, environment_for_trial
from ..geometry import DirectionFrame, FrameBox, Label, box_specification, build_frame
from ..solver import exit_field
from ..stats import Estimate, mean_interval, wilson_interval
from ..walk import ExitSet, FirstOf, StepCap, run_batch, trial_keys
from .schedule import ParameterSchedule, c1_of, epsilon_of, log_factorial_bound, quenched_tail_count

FRONT = Label.FRONT.value


class RhoError(ArithmeticError):
    """A sampled environment has zero frontal exit probability."""


@dataclass
class RhoSamples:
    """Per-environment rho and quenched frontal exit probability from the origin."""

    rho: np.ndarray
    frontal: np.ndarray
    mode: str
    region: FrameBox

    def moment(self, a: float) -> Estimate:
        return moment_estimate(self.rho, a, exact=self.mode == "exact_single")


def _rho_from_frontal(front: float, total: float = 1.0) -> float:
    if front <= 0.0:
        raise RhoError("zero frontal exit probability; the kernel is not uniformly elliptic")
    return max(total - front, 0.0) / front


def _rho_exact(env, region: FrameBox, origin) -> tuple[float, float]:
    dist = exit_field(env, region).at(origin)
    front = dist[FRONT]
    return _rho_from_frontal(front), front


def moment_estimate(rho: np.ndarray, a: float, exact: bool = False) -> Estimate:
    vals = np.power(rho, a)
    if exact:
        return Estimate.exact_value(float(vals[0]))
    return mean_interval(vals)


def rho_samples(
    law: EnvironmentLaw,
    region: FrameBox,
    env_samples: int,
    seed: int,
    mode: str = "exact_per_env",
    walk_trials: int = 10_000,
    step_cap: int = 1_000_000,
    threads: int = 1,
) -> RhoSamples:
    """rho(omega) = P(non-frontal exit) / P(frontal exit) from the origin, per sampled environment.

    ``exact_per_env`` solves each environment; ``mc_per_env`` uses the ratio of
    walk counts in each environment (censored walks count as non-frontal).
    A constant law needs a single exact solve.
    """
    if env_samples < 1:
        raise ValueError("env_samples must be positive")
    origin = np.zeros(region.d, dtype=np.int64)
    if law.kind == "constant" and mode == "exact_per_env":
        r, f = _rho_exact(environment_for_trial(law, seed, 0), region, origin)
        return RhoSamples(np.array([r]), np.array([f]), "exact_single", region)

    if mode == "exact_per_env":
        def one(t):
            return _rho_exact(environment_for_trial(law, seed, t), region, origin)
    elif mode == "mc_per_env":
        spec = FirstOf(ExitSet(region), StepCap(step_cap))

        def one(t):
            env = environment_for_trial(law, seed, t)
            _, wk = trial_keys(seed, walk_trials, stream_tag=3000 + t)
            res = run_batch(law, env.key, wk, origin, spec)
            front = np.zeros(walk_trials, dtype=bool)
            done = ~res.censored
            if done.any():
                front[np.flatnonzero(done)] = region.boundary_labels(res.positions[done]) == FRONT
            f = front.mean()
            return _rho_from_frontal(f), f
    else:
        raise ValueError(f"unknown mode {mode!r}")

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        pairs = list(pool.map(one, range(env_samples)))
    rho, front = (np.array(v) for v in zip(*pairs))
    return RhoSamples(rho, front, mode, region)


def rho_moment(
    law: EnvironmentLaw,
    region: FrameBox,
    a: float,
    env_samples: int,
    seed: int,
    mode: str = "exact_per_env",
    **kw,
) -> Estimate:
    """Estimate of E[rho^a] with a normal-approximation interval."""
    if not 0.0 <= a <= 1.0:
        raise ValueError("a must lie in [0, 1]")
    return rho_samples(law, region, env_samples, seed, mode, **kw).moment(a)


def rho_moment_enumerated(law: EnvironmentLaw, region: FrameBox, a: float, max_sites: int = 16) -> float:
    """Exact E[rho^a] for a two-point law by summing over every environment on the region."""
    if law.kind != "two_point":
        raise LawError("enumeration needs a two-point law")
    sites = [tuple(int(c) for c in p) for p in region.lattice_points()]
    if len(sites) > max_sites:
        raise ValueError(f"{len(sites)} sites exceed the enumeration limit {max_sites}")
    d2 = 2 * law.d
    prm = law.param_array()
    ka, kb, p = prm[:d2], prm[d2:2 * d2], prm[-1]
    origin = (0,) * law.d
    logs, vals = [], []
    for choice in itertools.product((True, False), repeat=len(sites)):
        n_a = sum(choice)
        weight = special.xlogy(n_a, p) + special.xlogy(len(sites) - n_a, 1 - p)
        if not np.isfinite(weight):
            continue
        env = ExplicitEnvironment({s: (ka if c else kb) for s, c in zip(sites, choice)}, ka, law.d)
        r, _ = _rho_exact(env, region, origin)
        logs.append(weight)
        vals.append(r**a)
    w = np.exp(np.array(logs))
    return float(np.dot(w, vals))


# ---------------------------------------------------------------------------
# criterion


def criterion_prefactor(d: int, kappa: float, L: float, Ltilde: float, c3: float = 1.0) -> float:
    """c3 (ln 1/kappa)^{3(d-1)} Ltilde^{d-1} L^{3(d-1)+1}."""
    return c3 * math.log(1 / kappa) ** (3 * (d - 1)) * Ltilde ** (d - 1) * L ** (3 * (d - 1) + 1)


def effective_criterion_value(d: int, kappa: float | None, L: float, Ltilde: float, moment: float, c3: float = 1.0) -> float:
    if moment == 0.0:
        return 0.0
    if kappa is None or not 0 < kappa < 1:
        raise LawError("the criterion value needs an ellipticity constant in (0, 1)")
    return criterion_prefactor(d, kappa, L, Ltilde, c3) * moment


@dataclass
class CriterionCell:
    L: float
    Ltilde: float
    a: float
    moment: Estimate
    value: float
    value_lo: float
    value_hi: float

    def to_json(self) -> dict:
        return {"L": self.L, "Ltilde": self.Ltilde, "a": self.a, "moment": self.moment.value,
                "moment_ci": [self.moment.lo, self.moment.hi], "value": self.value,
                "ci": [self.value_lo, self.value_hi]}


@dataclass
class EffectiveCriterionReport:
    direction: tuple[float, ...]
    c3: float
    c2: float | None
    kappa: float | None
    cells: list[CriterionCell]
    best: CriterionCell
    satisfied: bool
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"direction": list(self.direction), "c3": self.c3, "c2": self.c2, "kappa": self.kappa,
                "cells": [c.to_json() for c in self.cells], "best": self.best.to_json(),
                "satisfied": self.satisfied, "notes": self.notes}


def _ltilde(rule, L: float) -> float:
    if rule is None:
        return L**3 - 1
    if callable(rule):
        return float(rule(L))
    return float(rule)


def effective_criterion(
    law: EnvironmentLaw,
    l: Sequence[float] | DirectionFrame,
    L_grid: Sequence[float],
    Ltilde_rule: Callable[[float], float] | float | None = None,
    a_grid: Sequence[float] = (1.0,),
    c3: float = 1.0,
    c2: float | None = None,
    env_samples: int = 100,
    seed: int = 0,
    mode: str = "exact_per_env",
    kappa: float | None = None,
    threads: int = 1,
    **kw,
) -> EffectiveCriterionReport:
    """Minimise the criterion product over the (L, a) grid; satisfied iff the
    smallest upper confidence limit is below 1."""
    frame = l if isinstance(l, DirectionFrame) else build_frame(l)
    kappa = kappa if kappa is not None else law.kappa
    notes = ["c2 is not enforced: no lower bound on L is checked"]
    if c2 is not None and any(L <= c2 for L in L_grid):
        notes.append(f"some L do not exceed the configured c2 = {c2}")
    cells = []
    for L in L_grid:
        Lt = _ltilde(Ltilde_rule, L)
        if frame.dimension > 1 and not Lt < L**3:
            raise ValueError("Ltilde must be below L^3")
        region = box_specification(frame, L, Lt)
        samples = rho_samples(law, region, env_samples, seed, mode, threads=threads, **kw)
        for a in a_grid:
            m = samples.moment(a)
            vals = [effective_criterion_value(frame.dimension, kappa, L, Lt, max(x, 0.0), c3)
                    for x in (m.value, m.lo, m.hi)]
            cells.append(CriterionCell(float(L), Lt, float(a), m, *vals))
    best = min(cells, key=lambda c: (c.value_hi, c.value))
    return EffectiveCriterionReport(tuple(frame.l), c3, c2, kappa, cells, best, best.value_hi < 1.0, notes)


# ---------------------------------------------------------------------------
# decomposition of E[rho^a] along the parameter schedule


@dataclass
class RhoDecomposition:
    parts: list[float]  # E_0, E_1, ..., E_{n-1}, E_n
    counts: list[int]
    total: float
    log_thresholds: list[float]

    @property
    def identity_gap(self) -> float:
        return abs(math.fsum(self.parts) - self.total)

    def to_json(self) -> dict:
        return {"parts": self.parts, "counts": self.counts, "total": self.total,
                "log_thresholds": self.log_thresholds}


def rho_decomposition(rho_a, frontal, schedule: ParameterSchedule, log_frontal: bool = False) -> RhoDecomposition:
    """Split the sample mean of rho^a by which threshold band the frontal probability falls in.

    Band 0: f > t_1; band j (1 <= j < n): t_{j+1} < f <= t_j; band n: f <= t_n,
    with t_j = exp(-c1 L^beta_j) / 2, all compared in log space.  Pass
    ``log_frontal=True`` to give ln f directly when f underflows.
    """
    rho_a = np.asarray(rho_a, dtype=np.float64)
    frontal = np.asarray(frontal, dtype=np.float64)
    if rho_a.shape != frontal.shape or rho_a.size == 0:
        raise ValueError("need matching nonempty sample arrays")
    if log_frontal:
        logf = frontal
    else:
        with np.errstate(divide="ignore"):
            logf = np.log(frontal)
    floor = -schedule.c1 * schedule.L
    if np.any(logf <= floor):
        raise RhoError("a sample violates the uniform-ellipticity floor exp(-c1 L)")
    n = schedule.n_L
    lt = np.array([schedule.log_threshold(j) for j in range(1, n + 1)])
    # thresholds decrease in j, so the band index counts thresholds at or above log f
    band = np.searchsorted(-lt, -logf, side="right")
    N = rho_a.size
    parts = [math.fsum(rho_a[band == j]) / N for j in range(n + 1)]
    counts = [int(np.sum(band == j)) for j in range(n + 1)]
    return RhoDecomposition(parts, counts, math.fsum(rho_a) / N, lt.tolist())


# ---------------------------------------------------------------------------
# quenched tails


@dataclass
class QuenchedTailReport:
    L: float
    beta: float
    epsilon: float
    log_threshold: float
    trials: int
    estimate: Estimate
    count: int
    log_bound: float
    precondition_ok: bool
    region: dict

    @property
    def bound(self) -> float:
        return math.exp(self.log_bound) if self.log_bound < 700 else math.inf

    @property
    def vacuous(self) -> bool:
        return self.log_bound >= 0.0

    @property
    def consistent(self) -> bool:
        return self.estimate.value <= self.bound

    def to_json(self) -> dict:
        return {"L": self.L, "beta": self.beta, "epsilon": self.epsilon, "log_threshold": self.log_threshold,
                "trials": self.trials, "value": self.estimate.value,
                "ci": [self.estimate.lo, self.estimate.hi], "factorial_count": self.count,
                "bound": self.bound, "log_bound": self.log_bound, "vacuous": self.vacuous,
                "consistent": self.consistent, "precondition_ok": self.precondition_ok, "region": self.region}


def quenched_tail_experiment(
    law: EnvironmentLaw,
    L: float,
    beta: float,
    env_trials: int,
    seed: int,
    l: Sequence[float] | DirectionFrame | None = None,
    Ltilde: float | None = None,
    kappa: float | None = None,
    threads: int = 1,
) -> QuenchedTailReport:
    """Fraction of environments whose quenched frontal exit probability from the
    origin falls at or below exp(-c1 L^beta) / 2, against 5^d e / K!.

    The box is the criterion box of size L; ``Ltilde`` overrides its transverse
    half-width (L^3 - 1 by default) to keep the exact solves affordable.
    """
    d = law.d
    kappa = kappa if kappa is not None else law.require_elliptic("quenched_tail_experiment")
    frame = l if isinstance(l, DirectionFrame) else build_frame(l if l is not None else [1.0] + [0.0] * (d - 1))
    region = box_specification(frame, L, Ltilde if Ltilde is not None else L**3 - 1)
    eps = epsilon_of(L)
    log_t = -math.log(2.0) - c1_of(d, kappa) * L**beta
    samples = rho_samples(law, region, env_trials, seed, threads=threads)
    below = np.log(samples.frontal) <= log_t
    if samples.mode == "exact_single":
        est = Estimate.exact_value(float(below[0]))
    else:
        est = wilson_interval(int(below.sum()), env_trials)
    K = quenched_tail_count(L, beta, d)
    return QuenchedTailReport(float(L), beta, eps, log_t, env_trials, est, K, log_factorial_bound(d, K),
                              beta > eps, region.to_json())
