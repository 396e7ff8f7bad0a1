import math

import numpy as np
import pytest

from rwre.environment import (
    EnvironmentLaw,
    LawError,
    Regime,
    Transience,
    TransitionKernel,
    biased_1d,
    law_from_json,
    sample_environment,
    simple_symmetric,
    solomon_classify,
)

LAWS = [
    EnvironmentLaw.two_point([0.9, 0.1], [0.4, 0.6], 0.5),
    EnvironmentLaw.dirichlet([1.0, 2.0, 1.5, 1.5]),
    EnvironmentLaw.perturbed_srw([0.2, 0.0], 0.5),
    simple_symmetric(3),
]


def test_kernel_validation():
    with pytest.raises(LawError):
        TransitionKernel((0.5, 0.6))
    with pytest.raises(LawError):
        TransitionKernel((1.2, -0.2))
    assert TransitionKernel((0.25, 0.75)).weight((-1,)) == 0.75


@pytest.mark.parametrize("law", LAWS, ids=lambda l: l.kind)
def test_sampled_kernels_are_normalised_and_respect_the_floor(law):
    env = sample_environment(law, 3)
    pts = np.random.default_rng(0).integers(-500, 500, (10_000, law.d))
    k = env.kernels(pts)
    assert np.allclose(k.sum(axis=1), 1.0, atol=1e-12)
    assert (k >= -1e-15).all()
    if law.kappa is not None:
        assert k.min() >= law.kappa - 1e-15


def test_constant_law_is_constant():
    env = sample_environment(biased_1d(0.7), 99)
    k = env.kernels(np.arange(-50, 50)[:, None])
    assert np.allclose(k, [0.7, 0.3])


def test_site_determinism_across_query_orders():
    law = LAWS[0]
    pts = np.random.default_rng(5).integers(-1000, 1000, (1000, 1))
    a = sample_environment(law, 11).kernels(pts)
    env = sample_environment(law, 11)
    b = np.array([env.kernel_at(p).as_array() for p in pts[::-1]])[::-1]
    assert np.array_equal(a, b)
    assert sample_environment(law, 11).digest([-20], [20]) == env.digest([-20], [20])
    assert sample_environment(law, 12).digest([-20], [20]) != env.digest([-20], [20])


def test_two_point_frequency():
    law = EnvironmentLaw.two_point([0.9, 0.1], [0.4, 0.6], 0.5)
    k = sample_environment(law, 4).kernels(np.arange(100_000)[:, None])
    freq = np.mean(k[:, 0] == 0.9)
    assert abs(freq - 0.5) < 3 * math.sqrt(0.25 / 100_000)


def test_perturbed_kernel_mean_drift():
    law = EnvironmentLaw.perturbed_srw([0.2, 0.0], 0.5)
    k = sample_environment(law, 8).kernels(np.random.default_rng(1).integers(-99, 99, (20_000, 2)))
    # mean kernel is (1 - eps) q + eps / (2d)
    q = np.array([0.35, 0.15, 0.25, 0.25])
    assert np.allclose(k.mean(axis=0), 0.5 * q + 0.5 / 4, atol=0.01)


def test_declared_kappa_above_floor_is_rejected():
    with pytest.raises(LawError):
        EnvironmentLaw.dirichlet([1.0, 1.0], kappa=0.1)
    with pytest.raises(LawError):
        EnvironmentLaw.two_point([0.9, 0.1], [0.4, 0.6], 0.5, kappa=0.2)


def test_law_json_round_trip():
    for law in LAWS:
        assert law_from_json(law.to_json()).params == law.params


class TestSolomon:
    def test_biased_walk_speed(self):
        rep = solomon_classify(biased_1d(0.75))
        assert rep.transience is Transience.RIGHT
        assert rep.velocity == pytest.approx(0.5)

    def test_two_point_ballistic(self):
        rep = solomon_classify(law_from_json({"kind": "two_point", "right": [0.9, 0.4], "p": 0.5}))
        assert rep.E_ln_rho == pytest.approx(0.8959, abs=1e-4)
        assert rep.E_rho_inv == pytest.approx(0.80556, abs=1e-5)
        assert rep.velocity == pytest.approx(0.10769, abs=1e-5)
        assert rep.regime is Regime.BALLISTIC_RIGHT

    def test_two_point_zero_speed(self):
        rep = solomon_classify(law_from_json({"kind": "two_point", "right": [0.9, 0.25], "p": 0.5}))
        assert rep.transience is Transience.RIGHT
        assert rep.regime is Regime.ZERO_SPEED and rep.velocity == 0.0
        assert rep.E_rho == pytest.approx(4.6667, abs=1e-4)

    def test_mirror_symmetry(self):
        right = solomon_classify(law_from_json({"kind": "two_point", "right": [0.9, 0.4], "p": 0.5}))
        left = solomon_classify(law_from_json({"kind": "two_point", "right": [0.1, 0.6], "p": 0.5}))
        assert left.velocity == pytest.approx(-right.velocity)

    def test_symmetric_oscillates(self):
        rep = solomon_classify(simple_symmetric(1))
        assert rep.transience is Transience.OSCILLATING and rep.velocity == 0.0

    def test_dirichlet_refused(self):
        with pytest.raises(LawError):
            solomon_classify(EnvironmentLaw.dirichlet([1.0, 1.0]))
