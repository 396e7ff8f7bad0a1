import numpy as np
import pytest

from rwre.environment import EnvironmentLaw, deterministic_right, sample_environment
from rwre.geometry import BoxFamily, ScaleSchedule, axis_frame
from rwre.conditions.goodness import (
    GoodnessBudgetError,
    brute_force_goodness,
    classify_goodness,
    goodness_experiment,
    good_given_bad,
    level0_frontal,
)

DESK_1D = {1: {"scale": 24}}
DESK_2D = {0: {"halfwidth": 3, "middle_halfwidth": 2, "spacing_transverse": 4},
           1: {"scale": 18, "halfwidth": 6, "middle_halfwidth": 3}}


def desk(d):
    return BoxFamily.create(ScaleSchedule(6), axis_frame(d), DESK_1D if d == 1 else DESK_2D)


def level1(d):
    fam = desk(d)
    box = fam.box((0,) * d, 1)
    return fam, box, fam.boxes_intersecting(box.region, 0)


def test_deterministic_right_level0_is_good():
    fam = BoxFamily.create(ScaleSchedule(12), axis_frame(2), {0: (3, 2)})
    env = sample_environment(deterministic_right(2), 0)
    box = fam.box((0, 0), 0)
    inf, _ = level0_frontal(env, box)
    assert inf == pytest.approx(1.0)
    cert = classify_goodness(env, box, 0, fam)
    assert cert.good and cert.threshold == pytest.approx(1 - 12.0**-5)


def test_all_good_gives_first_anchor_as_witness():
    fam, box, subs = level1(1)
    cert = classify_goodness(None, box, 1, fam, base=lambda b: True)
    assert cert.good and cert.witness == subs[0].anchor


def test_far_apart_bad_pair_is_bad():
    fam, box, subs = level1(1)
    a = [s.anchor for s in subs]
    assert len(a) == 21 and a[0] == (-16,) and a[-1] == (24,)
    bad = {a[1]: False, a[-2]: False}
    cert = classify_goodness(None, box, 1, fam, base=bad)
    assert not cert.good
    assert cert.disjoint_bad_pair == ((-14,), (22,))
    assert set(cert.refutation) == set(a)
    assert not brute_force_goodness(subs, [s.anchor in bad for s in subs])


def test_nearby_bad_pair_is_good():
    fam, box, subs = level1(1)
    a = [s.anchor for s in subs]
    cert = classify_goodness(None, box, 1, fam, base={a[3]: False, a[8]: False})
    assert cert.good and cert.witness == (-6,)


@pytest.mark.parametrize("d", [1, 2])
def test_random_patterns_agree_with_brute_force(d):
    fam, box, subs = level1(d)
    assert len(subs) <= 50
    rng = np.random.default_rng(d)
    for _ in range(20):
        bad = rng.random(len(subs)) < rng.choice([0.05, 0.1, 0.2])
        good, witness, _ = good_given_bad(subs, bad)
        assert good == brute_force_goodness(subs, bad)
        if good and bad.any():
            q = next(s for s in subs if s.anchor == witness)
            qs = set(map(tuple, q.region.lattice_points().tolist()))
            for s, b in zip(subs, bad):
                if b:
                    assert qs & set(map(tuple, s.region.lattice_points().tolist()))


def test_budget_is_enforced():
    fam, box, _ = level1(1)
    with pytest.raises(GoodnessBudgetError):
        classify_goodness(None, box, 1, fam, budget=5, base=lambda b: True)


def test_memo_reuses_certificates():
    fam, box, subs = level1(1)
    memo = {}
    classify_goodness(None, box, 1, fam, base=lambda b: True, memo=memo)
    assert len(memo) == len(subs) + 1


class TestExperiment:
    def test_chain_holds(self):
        law = EnvironmentLaw.perturbed_srw([0.6], 0.7)
        exp = goodness_experiment(law, 0, 12, 100, 0)
        assert exp.chain_holds
        assert 1 - exp.estimate.value <= exp.union_sum <= exp.markov_sum

    def test_more_noise_is_not_better(self):
        vals = [goodness_experiment(EnvironmentLaw.perturbed_srw([0.6], eps), 0, 12, 100, 1).estimate.value
                for eps in (0.1, 0.5, 0.9)]
        assert vals[0] >= vals[1] >= vals[2]

    def test_level1_runs_on_desk_geometry(self):
        with pytest.warns(UserWarning, match="ellipticity"):
            exp = goodness_experiment(deterministic_right(1), 1, 6, 3, 0, overrides=DESK_1D)
        assert exp.estimate.value == 1.0
