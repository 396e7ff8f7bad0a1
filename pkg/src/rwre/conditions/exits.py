"""Annealed exit estimators: box condition checks, backtracking decay curves
and slab exits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..environment import EnvironmentLaw, environment_for_trial
from ..geometry import (
    BoxFamily,
    DirectionFrame,
    FrameBox,
    Label,
    ScaleSchedule,
    build_frame,
    make_slab,
)
from ..solver import exit_field
from ..stats import CONFIDENCE, Estimate, mean_interval, wilson_interval, _z
from ..walk import DirectionalEnter, ExitSet, FirstOf, StepCap, run_batch, trial_keys
from .schedule import effective_gamma

DEFAULT_STEP_CAP = 1_000_000


@dataclass
class StartEstimate:
    start: tuple[int, ...]
    estimate: Estimate
    censored: int = 0

    @property
    def exact(self) -> bool:
        return self.estimate.exact


def _is_degenerate(law: EnvironmentLaw) -> bool:
    return law.kind == "constant"


def estimate_nonfrontal_annealed(
    law: EnvironmentLaw,
    region: FrameBox,
    start_set,
    trials: int,
    seed: int,
    mode: str = "mc",
    step_cap: int = DEFAULT_STEP_CAP,
    threads: int = 1,
    env_trials: int | None = None,
) -> list[StartEstimate]:
    """P_x(walk leaves ``region`` other than through its frontal part), per start.

    ``mc`` samples an independent (environment, walk) pair per trial; censored
    trials count as non-frontal, so estimates err upwards.  ``exact`` solves
    the quenched exit system for ``env_trials`` sampled environments and
    averages; a constant law needs only one solve and the result is exact.
    """
    starts = np.atleast_2d(np.asarray(start_set, dtype=np.int64))
    if starts.size == 0:
        raise ValueError("empty start set")
    if not region.contains(starts).all():
        raise ValueError("every start must lie inside the region")
    if mode == "exact":
        return _nonfrontal_exact(law, region, starts, seed, env_trials or trials)
    if mode != "mc":
        raise ValueError(f"unknown mode {mode!r}")
    spec = FirstOf(ExitSet(region), StepCap(step_cap))
    out = []
    for i, x in enumerate(starts):
        ek, wk = trial_keys(seed, trials, stream_tag=i + 1)
        res = run_batch(law, ek, wk, x, spec, threads=threads)
        front = np.zeros(trials, dtype=bool)
        done = ~res.censored
        if done.any():
            labels = region.boundary_labels(res.positions[done])
            front[np.flatnonzero(done)] = labels == Label.FRONT.value
        bad = int(trials - front.sum())
        out.append(StartEstimate(tuple(int(c) for c in x), wilson_interval(bad, trials), int(res.censored.sum())))
    return out


def _nonfrontal_exact(law, region, starts, seed, env_trials) -> list[StartEstimate]:
    n_env = 1 if _is_degenerate(law) else env_trials
    samples = np.empty((n_env, len(starts)))
    for t in range(n_env):
        f = exit_field(environment_for_trial(law, seed, t), region)
        idx = [f.index_of(x) for x in starts]
        samples[t] = 1.0 - f.part(Label.FRONT.value)[idx]
    out = []
    for j, x in enumerate(starts):
        est = Estimate.exact_value(samples[0, j]) if n_env == 1 else mean_interval(samples[:, j])
        out.append(StartEstimate(tuple(int(c) for c in x), est))
    return out


# ---------------------------------------------------------------------------
# box condition


@dataclass
class PboxVerdict:
    N0: int
    M: float
    l: tuple[float, ...]
    estimates: list[StartEstimate]
    sup_estimate: Estimate
    sup_start: tuple[int, ...]
    threshold: float
    verdict: str
    partial: bool
    recommended_trials: int | None = None
    geometry: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "N0": self.N0, "M": self.M, "l": list(self.l), "sup": self.sup_estimate.value,
            "sup_ci": [self.sup_estimate.lo, self.sup_estimate.hi], "sup_start": list(self.sup_start),
            "threshold": self.threshold, "verdict": self.verdict, "partial": self.partial,
            "recommended_trials": self.recommended_trials, "geometry": self.geometry,
        }


def box_start_set(family: BoxFamily, budget: int) -> tuple[np.ndarray, bool]:
    """Middle frontal part of B(0, 0), or a deterministic subgrid plus corners."""
    mid = family.box((0,) * family.d, 0).middle
    lo, hi = mid.bounding_box()
    size = int(np.prod((hi - lo + 1).astype(object)))
    if size <= 4 * budget:
        pts = mid.lattice_points()
        if len(pts) <= budget:
            return pts, False
    # deterministic subgrid: evenly spaced along every axis plus all corners
    per_axis = max(2, int(budget ** (1 / family.d)))
    axes = [np.unique(np.linspace(a, b, per_axis).round().astype(np.int64)) for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, family.d)
    grid = grid[mid.contains(grid)]
    return np.unique(grid, axis=0), True


def decide(est: Estimate, threshold: float) -> str:
    if est.hi < threshold:
        return "Pass"
    if est.lo >= threshold:
        return "Fail"
    return "Inconclusive"


def recommended_trials(p: float, threshold: float, confidence: float = CONFIDENCE) -> int | None:
    gap = abs(p - threshold)
    if gap == 0:
        return None
    q = max(p, threshold)
    return int(math.ceil(_z(confidence) ** 2 * q * (1 - q) / gap**2))


def check_pbox(
    law: EnvironmentLaw,
    N0: int,
    M: float,
    l: Sequence[float],
    budget: int = 64,
    trials: int = 100_000,
    seed: int = 0,
    mode: str = "auto",
    overrides: dict | None = None,
    step_cap: int = DEFAULT_STEP_CAP,
    threads: int = 1,
    env_trials: int = 200,
) -> PboxVerdict:
    """Test sup over the middle frontal part of B(0,0) of the annealed non-frontal
    exit probability against N0^-M.

    ``mode="auto"`` solves exactly for constant laws on enumerable boxes and
    uses Monte Carlo otherwise.  When the start set is subsampled the sup is a
    lower bound: a Fail stays sound and a Pass is flagged partial.
    """
    if M <= 0:
        raise ValueError("M must be positive")
    law.warn_if_not_elliptic("check_pbox")
    frame = l if isinstance(l, DirectionFrame) else build_frame(l)
    family = BoxFamily.create(ScaleSchedule(N0), frame, overrides)
    box = family.box((0,) * frame.dimension, 0)
    starts, partial = box_start_set(family, budget)
    if mode == "auto":
        mode = "exact" if _is_degenerate(law) and _enumerable(box.region) else "mc"
    ests = estimate_nonfrontal_annealed(law, box.region, starts, trials, seed, mode, step_cap, threads, env_trials)
    threshold = float(N0) ** (-M)
    best = max(ests, key=lambda s: (s.estimate.value, s.estimate.hi))
    verdicts = [decide(s.estimate, threshold) for s in ests]
    if "Fail" in verdicts:
        verdict = "Fail"
    elif all(v == "Pass" for v in verdicts):
        verdict = "Pass"
    else:
        verdict = "Inconclusive"
    rec = None
    if verdict == "Inconclusive":
        rec = recommended_trials(best.estimate.value, threshold)
    return PboxVerdict(
        N0, M, tuple(frame.l), ests, best.estimate, best.start, threshold, verdict, partial, rec,
        {"box": box.to_json(), "mode": mode, "starts": len(starts)},
    )


def _enumerable(region: FrameBox, limit: int = 2_000_000) -> bool:
    try:
        lo, hi = region.bounding_box()
    except Exception:
        return False
    return int(np.prod((hi - lo + 1).astype(object))) <= limit


# ---------------------------------------------------------------------------
# backtracking decay curves


@dataclass
class DecayPoint:
    L: float
    estimate: Estimate
    censored: int

    @property
    def below_resolution(self) -> bool:
        return self.estimate.value == 0.0


@dataclass
class DecayCurve:
    direction: tuple[float, ...]
    b: float
    points: list[DecayPoint]
    polynomial_exponent: float | None
    stretched_exponent: float | None
    local_polynomial_slopes: list[float]

    def to_json(self) -> dict:
        return {
            "direction": list(self.direction), "b": self.b,
            "points": [
                {"L": p.L, "value": p.estimate.value, "ci": [p.estimate.lo, p.estimate.hi],
                 "trials": p.estimate.trials, "censored": p.censored,
                 "note": f"< {1 / p.estimate.trials:g}" if p.below_resolution else ""}
                for p in self.points
            ],
            "polynomial_exponent": self.polynomial_exponent,
            "stretched_exponent": self.stretched_exponent,
        }


def fit_exponents(Ls, ps) -> tuple[float | None, float | None, list[float]]:
    """Least-squares slopes of -ln p and ln(-ln p) against ln L over points with 0 < p < 1."""
    Ls = np.asarray(Ls, dtype=np.float64)
    ps = np.asarray(ps, dtype=np.float64)
    ok = (ps > 0) & (ps < 1)
    x = np.log(Ls[ok])
    poly = stretched = None
    local = []
    if ok.sum() >= 2:
        poly = float(-np.polyfit(x, np.log(ps[ok]), 1)[0])
        stretched = float(np.polyfit(x, np.log(-np.log(ps[ok])), 1)[0])
        y = np.log(ps[ok])
        local = [float(-(y[i + 1] - y[i]) / (x[i + 1] - x[i])) for i in range(len(x) - 1)]
    return poly, stretched, local


def decay_curve(
    law: EnvironmentLaw,
    direction: Sequence[float],
    b: float,
    L_list: Sequence[float],
    trials: int,
    seed: int,
    step_cap: int = DEFAULT_STEP_CAP,
    threads: int = 1,
) -> DecayCurve:
    """Annealed P_0(walk passes below -bL along l' before passing above L)."""
    if b <= 0:
        raise ValueError("b must be positive")
    L_list = [float(L) for L in L_list]
    if any(b2 <= a2 for a2, b2 in zip(L_list, L_list[1:])):
        raise ValueError("L values must be strictly increasing")
    law.warn_if_not_elliptic("decay_curve")
    v = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(v) - 1) > 1e-9:
        raise ValueError("direction must be a unit vector")
    start = np.zeros(law.d, dtype=np.int64)
    pts = []
    for i, L in enumerate(L_list):
        spec = FirstOf(DirectionalEnter(-v, b * L), DirectionalEnter(v, L), StepCap(step_cap))
        ek, wk = trial_keys(seed, trials, stream_tag=1000 + i)
        res = run_batch(law, ek, wk, start, spec, threads=threads)
        bad = int(np.sum(res.stop_index == 0) + res.censored.sum())
        pts.append(DecayPoint(L, wilson_interval(bad, trials), int(res.censored.sum())))
    poly, stretched, local = fit_exponents([p.L for p in pts], [p.estimate.value for p in pts])
    return DecayCurve(tuple(v.tolist()), b, pts, poly, stretched, local)


@dataclass
class SlabDecay:
    L: float
    estimate: Estimate
    censored: int
    gamma_hat: float | None
    gamma_target: float
    region: dict

    def to_json(self) -> dict:
        return {
            "L": self.L, "value": self.estimate.value, "ci": [self.estimate.lo, self.estimate.hi],
            "trials": self.estimate.trials, "censored": self.censored, "gamma_hat": self.gamma_hat,
            "gamma_target": self.gamma_target, "region": self.region,
        }


def slab_decay(
    law: EnvironmentLaw,
    l: Sequence[float],
    L: float,
    trials: int,
    seed: int,
    halfwidth: float | None = None,
    step_cap: int = DEFAULT_STEP_CAP,
    threads: int = 1,
) -> SlabDecay:
    """Annealed probability of leaving the slab D_L other than through its front."""
    law.warn_if_not_elliptic("slab_decay")
    frame = l if isinstance(l, DirectionFrame) else build_frame(l)
    slab = make_slab("D", frame, L, halfwidth=halfwidth)
    spec = FirstOf(ExitSet(slab), StepCap(step_cap))
    ek, wk = trial_keys(seed, trials, stream_tag=2000)
    res = run_batch(law, ek, wk, np.zeros(law.d, dtype=np.int64), spec, threads=threads)
    front = np.zeros(trials, dtype=bool)
    done = ~res.censored
    if done.any():
        front[np.flatnonzero(done)] = slab.boundary_labels(res.positions[done]) == Label.FRONT.value
    est = wilson_interval(int(trials - front.sum()), trials)
    g = None
    if 0 < est.value < 1:
        g = math.log(-math.log(est.value)) / math.log(L)
    return SlabDecay(float(L), est, int(res.censored.sum()), g, effective_gamma(L), slab.to_json())
