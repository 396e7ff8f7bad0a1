import io
import json
import math

import numpy as np
import pytest
from scipy import stats

from rwre.environment import EnvironmentLaw, biased_1d, deterministic_right, sample_environment, simple_symmetric
from rwre.geometry import BoxFamily, Label, ScaleSchedule, axis_frame, classify_point, interval_region
from rwre.walk import (
    DirectionalEnter,
    EnterSet,
    ExitSet,
    FirstOf,
    StepCap,
    count_frontal_run,
    nearest_neighbour_path,
    rescale_trajectory,
    run_batch,
    simulate_until,
    trial_keys,
    walk_key,
    write_trajectory_jsonl,
)


def test_deterministic_right_directional_stop():
    env = sample_environment(deterministic_right(1), 0)
    out = simulate_until(env, [0], DirectionalEnter([1.0], 5), walk_key(0, 0))
    assert out.steps == 6 and tuple(out.end) == (6,)
    assert not out.censored


def test_paths_are_reproducible_and_nearest_neighbour():
    env = sample_environment(EnvironmentLaw.dirichlet([1.0, 1.0, 1.0, 1.0]), 4)
    spec = FirstOf(DirectionalEnter([1.0, 0.0], 8), StepCap(5000))
    a = simulate_until(env, [0, 0], spec, walk_key(1, 2))
    b = simulate_until(env, [0, 0], spec, walk_key(1, 2))
    assert np.array_equal(a.path, b.path)
    assert nearest_neighbour_path(a.path)


def test_stopping_time_is_first_hit():
    env = sample_environment(simple_symmetric(2), 9)
    spec = FirstOf(DirectionalEnter([1.0, 0.0], 4), DirectionalEnter([0.0, -1.0], 3), StepCap(10_000))
    for i in range(50):
        out = simulate_until(env, [0, 0], spec, walk_key(2, i))
        hits = (out.path[:, 0] > 4) | (-out.path[:, 1] > 3)
        first = int(np.argmax(hits)) if hits.any() else None
        if out.censored:
            assert first is None
        else:
            assert first == out.steps


def test_symmetric_hitting_is_fair():
    law = simple_symmetric(1)
    spec = FirstOf(EnterSet(np.array([[-3]])), EnterSet(np.array([[3]])), StepCap(10**6))
    n = 100_000
    ek, wk = trial_keys(5, n)
    res = run_batch(law, ek[0], wk, [0], spec)
    p = np.mean(res.stop_index == 1)
    assert abs(p - 0.5) < 3 * math.sqrt(0.25 / n)


def test_one_step_frequencies_match_kernel():
    law = EnvironmentLaw.dirichlet([1.0, 2.0, 1.0, 2.0])
    env = sample_environment(law, 7)
    n = 100_000
    _, wk = trial_keys(3, n)
    res = run_batch(law, env.key, wk, [0, 0], StepCap(1))
    counts = [np.sum(np.all(res.positions == e, axis=1)) for e in ([1, 0], [-1, 0], [0, 1], [0, -1])]
    expected = env.kernel_at((0, 0)).as_array() * n
    assert stats.chisquare(counts, expected).pvalue > 0.001


def test_thread_count_does_not_change_results():
    law = EnvironmentLaw.two_point([0.9, 0.1], [0.4, 0.6], 0.5)
    ek, wk = trial_keys(8, 3000)
    spec = FirstOf(ExitSet(interval_region(-10, 10)), StepCap(10**5))
    a = run_batch(law, ek, wk, [0], spec, threads=1)
    b = run_batch(law, ek, wk, [0], spec, threads=8, chunk=97)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.steps, b.steps)


def test_callable_target_matches_native():
    env = sample_environment(biased_1d(0.6), 0)
    region = interval_region(-4, 6)
    native = simulate_until(env, [0], ExitSet(region), walk_key(3, 1))
    python = simulate_until(env, [0], ExitSet(lambda x: -4 < x[0] < 6), walk_key(3, 1))
    assert np.array_equal(native.path, python.path)


def test_censoring_is_flagged():
    env = sample_environment(simple_symmetric(1), 0)
    out = simulate_until(env, [0], FirstOf(ExitSet(interval_region(-1000, 1000)), StepCap(10)), walk_key(0, 0))
    assert out.censored and out.steps == 10


class TestRescaling:
    def family(self):
        return BoxFamily.create(ScaleSchedule(12), axis_frame(2))

    def test_deterministic_right_rescaled_walk(self):
        fam = self.family()
        env = sample_environment(deterministic_right(2), 0)
        out = simulate_until(env, [0, 0], StepCap(60), walk_key(0, 0))
        r = rescale_trajectory(out, 0, fam)
        assert r.anchors[0] == fam.assign((0, 0), 0)
        first = fam.box(r.anchors[0], 0)
        assert (r.Y[1] - np.array(r.anchors[0]))[0] >= 12
        assert classify_point(first, tuple(r.Y[1])) is Label.FRONT
        assert count_frontal_run(r) == len(r.exit_labels)

    def test_labels_are_consistent_with_boxes(self):
        fam = self.family()
        env = sample_environment(EnvironmentLaw.perturbed_srw([0.4, 0.0], 0.3), 2)
        out = simulate_until(env, [0, 0], StepCap(3000), walk_key(5, 0))
        r = rescale_trajectory(out, 0, fam)
        for j, lab in enumerate(r.exit_labels):
            box = fam.box(r.anchors[j], 0)
            assert classify_point(box, tuple(r.Y[j + 1])).value == lab
            if lab == Label.FRONT.value:
                # the front of a scale-0 box sits N_0 ahead of its anchor
                assert r.Y[j + 1][0] - r.anchors[j][0] >= 12

    def test_stuck_walk_gives_empty_sequence(self):
        fam = self.family()
        env = sample_environment(simple_symmetric(2), 0)
        out = simulate_until(env, [0, 0], StepCap(1), walk_key(0, 0))
        r = rescale_trajectory(out, 0, fam)
        assert r.empty and r.censored

    @pytest.mark.parametrize("labels,expected", [
        (["FrontBoundary", "FrontBoundary", "BackBoundary"], 2),
        ([], 0),
        (["FrontBoundary"] * 4, 4),
    ])
    def test_frontal_run(self, labels, expected):
        assert count_frontal_run(labels) == expected


def test_trajectory_jsonl():
    env = sample_environment(deterministic_right(1), 0)
    out = simulate_until(env, [0], StepCap(3), walk_key(0, 0))
    buf = io.StringIO()
    write_trajectory_jsonl(out, buf)
    rows = [json.loads(line) for line in buf.getvalue().splitlines()]
    assert [r["site"] for r in rows] == [[0], [1], [2], [3]]
