import math

import numpy as np
import pytest

from rwre.environment import biased_1d, deterministic_right, EnvironmentLaw
from rwre.geometry import BoxFamily, ScaleSchedule, axis_frame, interval_region
from rwre.conditions.exits import (
    box_start_set,
    check_pbox,
    decay_curve,
    decide,
    estimate_nonfrontal_annealed,
    fit_exponents,
    recommended_trials,
    slab_decay,
)
from rwre.stats import Estimate


def ruin_left(p, a, b, x):
    """P_x(hit a before b) for a walk stepping +1 with probability p."""
    r = (1 - p) / p
    return (r**(x - a) - r**(b - a)) / (1 - r**(b - a))


def test_deterministic_right_never_exits_elsewhere():
    ests = estimate_nonfrontal_annealed(deterministic_right(1), interval_region(-6, 12), [[0], [5]], 500, 0)
    assert all(e.estimate.value == 0.0 for e in ests)


def test_exact_mode_matches_ruin_formula():
    region = interval_region(-6, 12)
    ests = estimate_nonfrontal_annealed(biased_1d(0.6), region, [[0], [4], [11]], 1, 0, mode="exact")
    for e in ests:
        assert e.exact
        assert e.estimate.value == pytest.approx(ruin_left(0.6, -6, 12, e.start[0]), abs=1e-10)


def test_estimates_decrease_towards_the_front():
    region = interval_region(-6, 12)
    ests = estimate_nonfrontal_annealed(biased_1d(0.6), region, [[0], [6], [11]], 20_000, 3)
    vals = [e.estimate.value for e in ests]
    assert vals[0] > vals[1] > vals[2]


def test_mc_covers_exact():
    region = interval_region(-6, 12)
    est = estimate_nonfrontal_annealed(biased_1d(0.6), region, [[4]], 50_000, 1)[0].estimate
    assert est.lo <= ruin_left(0.6, -6, 12, 4) <= est.hi


def test_start_outside_region_rejected():
    with pytest.raises(ValueError):
        estimate_nonfrontal_annealed(biased_1d(0.6), interval_region(-6, 12), [[12]], 10, 0)


def test_box_start_set_full_and_subsampled():
    fam1 = BoxFamily.create(ScaleSchedule(12), axis_frame(1))
    pts, partial = box_start_set(fam1, 64)
    assert not partial and sorted(pts[:, 0].tolist()) == list(range(4, 12))
    fam2 = BoxFamily.create(ScaleSchedule(12), axis_frame(2))
    pts, partial = box_start_set(fam2, 16)
    assert partial and len(pts) <= 64
    assert fam2.box((0, 0), 0).middle.contains(pts).all()


def test_decide_and_recommendation():
    assert decide(Estimate(0.01, 0.005, 0.02, 100), 0.05) == "Pass"
    assert decide(Estimate(0.1, 0.06, 0.2, 100), 0.05) == "Fail"
    assert decide(Estimate(0.05, 0.03, 0.07, 100), 0.05) == "Inconclusive"
    n = recommended_trials(0.04, 0.05)
    assert n is not None and n > 1000
    assert recommended_trials(0.05, 0.05) is None


class TestPbox:
    def test_exact_pass_at_M1(self):
        v = check_pbox(biased_1d(0.6), 12, 1.0, [1.0])
        assert v.verdict == "Pass"
        assert v.sup_estimate.exact
        assert v.sup_estimate.value == pytest.approx(0.016676, abs=1e-6)
        assert v.sup_start == (4,)

    def test_inconclusive_reports_trials(self):
        # threshold 12^-1.64 = 0.01696 sits inside the CI of a small run
        v = check_pbox(biased_1d(0.6), 12, 1.64, [1.0], trials=2000, mode="mc", seed=2)
        assert v.verdict == "Inconclusive"
        assert v.recommended_trials > 2000

    def test_bad_M(self):
        with pytest.raises(ValueError):
            check_pbox(biased_1d(0.6), 12, 0.0, [1.0])


class TestDecay:
    def test_ordering_and_resolution_note(self):
        c = decay_curve(biased_1d(0.8), [1.0], 1.0, [2, 6, 30], 2000, 0)
        vals = [p.estimate.value for p in c.points]
        assert vals[0] >= vals[1] >= vals[2]
        assert c.points[-1].below_resolution
        assert c.to_json()["points"][-1]["note"] == "< 0.0005"

    def test_decay_matches_ruin(self):
        c = decay_curve(biased_1d(0.6), [1.0], 1.0, [5], 50_000, 4)
        # hit -5 (i.e. below -bL) before passing above L: ruin between -6 and 6
        exact = ruin_left(0.6, -6, 6, 0)
        assert exact == pytest.approx(0.080706, abs=1e-6)
        assert c.points[0].estimate.lo <= exact <= c.points[0].estimate.hi

    def test_argument_validation(self):
        with pytest.raises(ValueError):
            decay_curve(biased_1d(0.6), [1.0], 1.0, [10, 5], 10, 0)
        with pytest.raises(ValueError):
            decay_curve(biased_1d(0.6), [2.0], 1.0, [5], 10, 0)

    def test_fit_recovers_power_law(self):
        Ls = np.array([10.0, 20.0, 40.0])
        poly, _, local = fit_exponents(Ls, Ls**-2.5)
        assert poly == pytest.approx(2.5)
        assert np.allclose(local, 2.5)
        _, stretched, _ = fit_exponents(Ls, np.exp(-(Ls**0.7)))
        assert stretched == pytest.approx(0.7)


def test_slab_decay_covers_ruin_value():
    s = slab_decay(biased_1d(0.6), [1.0], 10, 50_000, 0)
    assert s.estimate.lo <= 0.011561 <= s.estimate.hi
    assert s.gamma_target == pytest.approx(math.log(2) / math.log(math.log(10)))
