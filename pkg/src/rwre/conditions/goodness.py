"""Good and bad boxes across scales, with certificates, a brute-force
cross-check, and the empirical goodness experiment."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from ..environment import EnvironmentLaw, environment_for_trial
from ..geometry import Box, BoxFamily, DirectionFrame, Label, ScaleSchedule, build_frame, regions_intersect
from ..solver import exit_field
from ..stats import Estimate, wilson_interval

DEFAULT_BUDGET = 10_000


class GoodnessBudgetError(RuntimeError):
    """Classification would need more sub-box evaluations than allowed."""


@dataclass
class GoodnessCertificate:
    anchor: tuple[int, ...]
    level: int
    good: bool
    # level 0
    inf_frontal: float | None = None
    threshold: float | None = None
    worst_start: tuple[int, ...] | None = None
    # level >= 1
    sub_anchors: list[tuple[int, ...]] = field(default_factory=list)
    bad_anchors: list[tuple[int, ...]] = field(default_factory=list)
    witness: tuple[int, ...] | None = None
    refutation: dict = field(default_factory=dict)
    disjoint_bad_pair: tuple | None = None

    @property
    def verdict(self) -> str:
        return "good" if self.good else "bad"

    def to_json(self) -> dict:
        out = {"anchor": list(self.anchor), "level": self.level, "verdict": self.verdict}
        if self.level == 0:
            out.update(inf_frontal=self.inf_frontal, threshold=self.threshold,
                       worst_start=list(self.worst_start) if self.worst_start else None)
        else:
            out.update(sub_boxes=len(self.sub_anchors), bad=[list(a) for a in self.bad_anchors],
                       witness=list(self.witness) if self.witness else None,
                       disjoint_bad_pair=[list(a) for a in self.disjoint_bad_pair] if self.disjoint_bad_pair else None)
        return out


def level0_frontal(env, box: Box) -> tuple[float, tuple[int, ...]]:
    """Smallest quenched frontal exit probability over the middle frontal part, and where."""
    f = exit_field(env, box.region)
    mids = box.middle.lattice_points()
    front = f.part(Label.FRONT.value)[[f.index_of(x) for x in mids]]
    i = int(np.argmin(front))
    return float(front[i]), tuple(int(c) for c in mids[i])


def good_given_bad(subs: Sequence[Box], bad: Sequence[bool], intersects=None):
    """Search for Q among ``subs`` meeting every bad sub-box.

    Returns (good, witness_anchor, refutation) where refutation maps each
    candidate anchor to a bad anchor it misses.
    """
    intersects = intersects or (lambda a, b: regions_intersect(a.region, b.region))
    bad_boxes = [b for b, is_bad in zip(subs, bad) if is_bad]
    if not bad_boxes:
        return True, subs[0].anchor if subs else None, {}
    refutation = {}
    for q in subs:
        miss = next((b for b in bad_boxes if not intersects(q, b)), None)
        if miss is None:
            return True, q.anchor, {}
        refutation[q.anchor] = miss.anchor
    return False, None, refutation


def _disjoint_pair(bad_boxes: Sequence[Box]):
    for i, a in enumerate(bad_boxes):
        for b in bad_boxes[i + 1:]:
            if not regions_intersect(a.region, b.region):
                return a.anchor, b.anchor
    return None


class _Counter:
    def __init__(self, budget: int):
        self.left = budget

    def spend(self, n: int) -> None:
        self.left -= n
        if self.left < 0:
            raise GoodnessBudgetError("sub-box budget exceeded")


def classify_goodness(
    env,
    box: Box,
    k: int,
    family: BoxFamily,
    budget: int = DEFAULT_BUDGET,
    base: Callable[[Box], bool] | Mapping | None = None,
    memo: dict | None = None,
) -> GoodnessCertificate:
    """Classify B(x,k) as good or bad.

    Level 0 is decided by the exact quenched solve, or by ``base`` when given
    (a predicate or a map from anchor to goodness, used to build instances).
    Level k >= 1 is good iff some level-(k-1) box Q intersecting B_k meets every
    bad level-(k-1) box intersecting B_k.
    """
    memo = {} if memo is None else memo
    return _classify(env, box, k, family, _Counter(budget), base, memo)


def _classify(env, box, k, family, counter, base, memo) -> GoodnessCertificate:
    key = (box.anchor, k)
    if key in memo:
        return memo[key]
    if k == 0:
        counter.spend(1)
        if base is not None:
            good = bool(base(box) if callable(base) else base.get(box.anchor, True))
            cert = GoodnessCertificate(box.anchor, 0, good)
        else:
            t = 1.0 - float(family.schedule.N0) ** -5
            inf, worst = level0_frontal(env, box)
            cert = GoodnessCertificate(box.anchor, 0, inf >= t, inf, t, worst)
    else:
        subs = family.boxes_intersecting(box.region, k - 1)
        counter.spend(len(subs))
        certs = [_classify(env, s, k - 1, family, counter, base, memo) for s in subs]
        bad = [not c.good for c in certs]
        good, witness, refutation = good_given_bad(subs, bad)
        bad_boxes = [s for s, b in zip(subs, bad) if b]
        cert = GoodnessCertificate(
            box.anchor, k, good, sub_anchors=[s.anchor for s in subs],
            bad_anchors=[s.anchor for s in bad_boxes], witness=witness, refutation=refutation,
            disjoint_bad_pair=None if good else _disjoint_pair(bad_boxes),
        )
    memo[key] = cert
    return cert


def brute_force_goodness(subs: Sequence[Box], bad: Sequence[bool]) -> bool:
    """Goodness by explicit lattice-point intersection of every (Q, bad box) pair."""
    sets = [frozenset(map(tuple, s.region.lattice_points().tolist())) for s in subs]
    bad_sets = [s for s, b in zip(sets, bad) if b]
    return any(all(q & b for b in bad_sets) for q in sets)


# ---------------------------------------------------------------------------
# experiment


@dataclass
class GoodnessExperiment:
    k: int
    N0: int
    env_trials: int
    estimate: Estimate
    bound: float
    bad_any: int
    union_sum: float
    union_counts: list[int]
    markov_sum: float
    chain_holds: bool
    geometry: dict

    def to_json(self) -> dict:
        return {"k": self.k, "N0": self.N0, "env_trials": self.env_trials, "value": self.estimate.value,
                "ci": [self.estimate.lo, self.estimate.hi], "bound": self.bound, "bad": self.bad_any,
                "union_sum": self.union_sum, "markov_sum": self.markov_sum, "chain_holds": self.chain_holds,
                "geometry": self.geometry}


def goodness_experiment(
    law: EnvironmentLaw,
    k: int,
    N0: int,
    env_trials: int,
    seed: int,
    l: Sequence[float] | DirectionFrame | None = None,
    overrides: Mapping | None = None,
    budget: int = DEFAULT_BUDGET,
) -> GoodnessExperiment:
    """Fraction of sampled environments in which B(0,k) is good.

    At level 0 the per-start non-frontal probabilities q_x are kept, so the
    chain 1 - p0 <= sum_x #{q_x >= N0^-5}/n <= N0^5 sum_x mean(q_x) is
    evaluated on the same samples.
    """
    if env_trials < 1:
        raise ValueError("env_trials must be positive")
    law.warn_if_not_elliptic("goodness_experiment")
    frame = l if isinstance(l, DirectionFrame) else build_frame(l if l is not None else [1.0] + [0.0] * (law.d - 1))
    family = BoxFamily.create(ScaleSchedule(N0), frame, overrides)
    box = family.box((0,) * law.d, k)
    t = float(N0) ** -5
    good = np.zeros(env_trials, dtype=bool)
    q_rows = []
    for i in range(env_trials):
        env = environment_for_trial(law, seed, i, stream_tag=4000 + k)
        if k == 0:
            f = exit_field(env, box.region)
            mids = box.middle.lattice_points()
            q = 1.0 - f.part(Label.FRONT.value)[[f.index_of(x) for x in mids]]
            q_rows.append(q)
            good[i] = bool(np.all(q <= t))
        else:
            good[i] = classify_goodness(env, box, k, family, budget).good
    est = wilson_interval(int(good.sum()), env_trials)
    union_sum = markov = math.nan
    counts: list[int] = []
    chain = True
    if k == 0:
        q = np.array(q_rows)
        counts = [int(c) for c in (q >= t).sum(axis=0)]
        union_sum = sum(counts) / env_trials
        markov = float(q.mean(axis=0).sum()) / t
        chain = 1 - est.value <= union_sum + 1e-12 and union_sum <= markov + 1e-12
    return GoodnessExperiment(
        k, N0, env_trials, est, -math.expm1(-(2.0**k)), int((~good).sum()), union_sum, counts, markov,
        chain, box.to_json(),
    )
