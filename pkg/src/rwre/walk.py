"""Quenched trajectory simulation, stopping rules and the rescaled walk.

A stopping rule is a tree of :class:`EnterSet`, :class:`ExitSet`,
:class:`DirectionalEnter`, :class:`StepCap` and :class:`FirstOf` nodes.  It is
flattened into leaves and, when every target is a region or an explicit
point list, compiled into arrays consumed by a jitted batch walker.  Each
trajectory draws its steps from its own counter-based stream, so batches can
be split across threads without changing any result.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence, TextIO, Union

import numba as nb
import numpy as np

from . import rng
from .environment import Environment, EnvironmentLaw, directions, kernel_into
from .geometry import BoxFamily, FrameBox, Label

DEFAULT_STEP_CAP = 100_000_000

T_ENTER_REGION = 0
T_EXIT_REGION = 1
T_HALFSPACE = 2
T_ENTER_POINTS = 3
T_EXIT_POINTS = 4


# ---------------------------------------------------------------------------
# stopping specifications

Target = Union[FrameBox, np.ndarray, Sequence[Sequence[int]], Callable]


@dataclass(frozen=True)
class EnterSet:
    """Fires at the first n >= 0 with X_n in the target."""

    target: object


@dataclass(frozen=True)
class ExitSet:
    """Fires at the first n >= 0 with X_n outside the target."""

    target: object


@dataclass(frozen=True)
class DirectionalEnter:
    """Fires at the first n >= 0 with X_n . direction > level."""

    direction: tuple
    level: float

    def __init__(self, direction, level):
        object.__setattr__(self, "direction", tuple(float(c) for c in np.ravel(direction)))
        object.__setattr__(self, "level", float(level))


@dataclass(frozen=True)
class StepCap:
    n_max: int

    def __post_init__(self):
        if self.n_max < 1:
            raise ValueError("StepCap needs n_max >= 1")


@dataclass(frozen=True)
class FirstOf:
    specs: tuple

    def __init__(self, *specs):
        if len(specs) == 1 and isinstance(specs[0], (list, tuple)):
            specs = tuple(specs[0])
        if not specs:
            raise ValueError("FirstOf needs at least one rule")
        object.__setattr__(self, "specs", tuple(specs))


StoppingSpec = Union[EnterSet, ExitSet, DirectionalEnter, StepCap, FirstOf]


def flatten(spec) -> list:
    if isinstance(spec, FirstOf):
        out = []
        for s in spec.specs:
            out.extend(flatten(s))
        return out
    if not isinstance(spec, (EnterSet, ExitSet, DirectionalEnter, StepCap)):
        raise TypeError(f"not a stopping rule: {spec!r}")
    return [spec]


@dataclass
class CompiledSpec:
    leaves: list
    types: np.ndarray
    params: np.ndarray
    points: np.ndarray
    ranges: np.ndarray
    cap: int
    cap_leaf: int
    native: bool


def compile_spec(spec, d: int) -> CompiledSpec:
    leaves = flatten(spec)
    width = 5 * d + d * d
    conds = [(i, s) for i, s in enumerate(leaves) if not isinstance(s, StepCap)]
    caps = [(s.n_max, i) for i, s in enumerate(leaves) if isinstance(s, StepCap)]
    cap, cap_leaf = min(caps) if caps else (DEFAULT_STEP_CAP, -1)
    types = np.zeros(len(conds), dtype=np.int64)
    params = np.zeros((len(conds), width))
    ranges = np.zeros((len(conds), 2), dtype=np.int64)
    pts = []
    count = 0
    native = True
    for row, (_, s) in enumerate(conds):
        if isinstance(s, DirectionalEnter):
            if len(s.direction) != d:
                raise ValueError("direction dimension mismatch")
            types[row] = T_HALFSPACE
            params[row, :d] = s.direction
            params[row, d] = s.level
            continue
        enter = isinstance(s, EnterSet)
        tgt = s.target
        if isinstance(tgt, FrameBox):
            types[row] = T_ENTER_REGION if enter else T_EXIT_REGION
            anchor, frame, lo, hi, loc, hic = tgt.arrays()
            params[row] = np.concatenate([anchor, frame.ravel(), lo, hi, loc.astype(float), hic.astype(float)])
        elif callable(tgt):
            native = False
        else:
            p = np.atleast_2d(np.asarray(tgt, dtype=np.int64))
            if p.shape[1] != d:
                raise ValueError("point set dimension mismatch")
            types[row] = T_ENTER_POINTS if enter else T_EXIT_POINTS
            ranges[row] = (count, count + len(p))
            pts.append(p)
            count += len(p)
    points = np.concatenate(pts) if pts else np.zeros((0, d), dtype=np.int64)
    return CompiledSpec(leaves, types, params, points, ranges, int(cap), cap_leaf, native)


# ---------------------------------------------------------------------------
# jitted walker


@nb.njit(cache=True, nogil=True)
def _in_region(row, x, d):
    for a in range(d):
        u = 0.0
        for j in range(d):
            u += (x[j] - row[j]) * row[d + a * d + j]
        lo = row[d + d * d + a]
        hi = row[2 * d + d * d + a]
        if row[3 * d + d * d + a] != 0.0:
            if u < lo:
                return False
        elif u <= lo:
            return False
        if row[4 * d + d * d + a] != 0.0:
            if u > hi:
                return False
        elif u >= hi:
            return False
    return True


@nb.njit(cache=True, nogil=True)
def _in_points(points, start, stop, x, d):
    for i in range(start, stop):
        same = True
        for j in range(d):
            if points[i, j] != x[j]:
                same = False
                break
        if same:
            return True
    return False


@nb.njit(cache=True, nogil=True)
def _fired(types, params, points, ranges, x, d):
    for c in range(types.shape[0]):
        t = types[c]
        if t == T_ENTER_REGION:
            hit = _in_region(params[c], x, d)
        elif t == T_EXIT_REGION:
            hit = not _in_region(params[c], x, d)
        elif t == T_HALFSPACE:
            s = 0.0
            for j in range(d):
                s += x[j] * params[c, j]
            hit = s > params[c, d]
        elif t == T_ENTER_POINTS:
            hit = _in_points(points, ranges[c, 0], ranges[c, 1], x, d)
        else:
            hit = not _in_points(points, ranges[c, 0], ranges[c, 1], x, d)
        if hit:
            return c
    return -1


@nb.njit(cache=True, nogil=True)
def _choose(kern, u, m):
    acc = 0.0
    for i in range(m - 1):
        acc += kern[i]
        if u < acc:
            return i
    # remaining mass, guarded against zero-weight tail directions
    for i in range(m - 1, -1, -1):
        if kern[i] > 0.0:
            return i
    return m - 1


@nb.njit(cache=True, nogil=True)
def _walk_batch(code, lparams, d, env_keys, walk_keys, starts, types, params, points, ranges, cap,
                out_pos, out_steps, out_stop):
    m = 2 * d
    kern = np.empty(m)
    x = np.empty(d, dtype=np.int64)
    const = code == 0
    if const:
        for i in range(m):
            kern[i] = lparams[i]
    for t in range(starts.shape[0]):
        for j in range(d):
            x[j] = starts[t, j]
        steps = 0
        stop = -1
        ek = env_keys[t]
        wk = walk_keys[t]
        while True:
            stop = _fired(types, params, points, ranges, x, d)
            if stop >= 0 or steps >= cap:
                break
            if not const:
                kernel_into(code, lparams, d, rng.site_key(ek, x), kern)
            e = _choose(kern, rng.uniform(wk, steps), m)
            if e % 2 == 0:
                x[e // 2] += 1
            else:
                x[e // 2] -= 1
            steps += 1
        for j in range(d):
            out_pos[t, j] = x[j]
        out_steps[t] = steps
        out_stop[t] = stop


@nb.njit(cache=True, nogil=True)
def _walk_path(code, lparams, d, env_key, walk_key, start, types, params, points, ranges, cap):
    m = 2 * d
    kern = np.empty(m)
    if code == 0:
        for i in range(m):
            kern[i] = lparams[i]
    size = 1024
    path = np.empty((size, d), dtype=np.int64)
    x = start.copy()
    path[0] = x
    steps = 0
    stop = -1
    while True:
        stop = _fired(types, params, points, ranges, x, d)
        if stop >= 0 or steps >= cap:
            break
        if code != 0:
            kernel_into(code, lparams, d, rng.site_key(env_key, x), kern)
        e = _choose(kern, rng.uniform(walk_key, steps), m)
        if e % 2 == 0:
            x[e // 2] += 1
        else:
            x[e // 2] -= 1
        steps += 1
        if steps >= size:
            grown = np.empty((2 * size, d), dtype=np.int64)
            grown[:size] = path
            path = grown
            size *= 2
        path[steps] = x
    return path[: steps + 1].copy(), stop


# ---------------------------------------------------------------------------
# public API


@dataclass
class TrajectoryOutcome:
    path: np.ndarray
    stop_index: int
    steps: int
    censored: bool
    fired: object = None

    @property
    def end(self) -> np.ndarray:
        return self.path[-1]

    def shifted(self, k: int) -> np.ndarray:
        """The path of the walk shifted by k time units."""
        return self.path[k:]


@dataclass
class BatchResult:
    positions: np.ndarray
    steps: np.ndarray
    stop_index: np.ndarray
    censored: np.ndarray
    leaves: list


def walk_key(master_seed: int, index: int) -> int:
    return rng.derive_key(master_seed, rng.STREAM_WALK, index)


def trial_keys(master_seed: int, count: int, offset: int = 0, stream_tag: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Environment and walk keys of annealed trials ``offset .. offset+count-1``."""
    idx = np.arange(offset, offset + count)
    env = rng.derive_keys(master_seed, rng.STREAM_ENV, stream_tag, count=offset + count)[idx]
    wk = rng.derive_keys(master_seed, rng.STREAM_WALK, stream_tag, count=offset + count)[idx]
    return env, wk


def _leaf_index(cs: CompiledSpec, row: int) -> int:
    if row < 0:
        return cs.cap_leaf
    conds = [i for i, s in enumerate(cs.leaves) if not isinstance(s, StepCap)]
    return conds[row]


def simulate_until(env: Environment, start, spec, stream: int) -> TrajectoryOutcome:
    """Run one quenched trajectory from ``start`` until ``spec`` fires.

    ``stream`` is the 64-bit key of the trajectory's step stream (see
    :func:`walk_key`).
    """
    d = env.d
    start = np.asarray(start, dtype=np.int64).reshape(d)
    cs = compile_spec(spec, d)
    if not cs.native:
        return _simulate_python(env, start, cs, stream)
    path, row = _walk_path(env.law.code, env.law.param_array(), d, np.uint64(env.key), np.uint64(stream),
                           start, cs.types, cs.params, cs.points, cs.ranges, cs.cap)
    leaf = _leaf_index(cs, row)
    return TrajectoryOutcome(path, leaf, len(path) - 1, row < 0, cs.leaves[leaf] if leaf >= 0 else None)


def _simulate_python(env: Environment, start, cs: CompiledSpec, stream: int) -> TrajectoryOutcome:
    d = env.d
    dirs = directions(d)
    key = np.uint64(stream)
    x = start.copy()
    path = [x.copy()]
    conds = [(i, s) for i, s in enumerate(cs.leaves) if not isinstance(s, StepCap)]
    steps = 0
    while True:
        for i, s in conds:
            if _python_fires(s, x):
                return TrajectoryOutcome(np.array(path), i, steps, False, s)
        if steps >= cs.cap:
            return TrajectoryOutcome(np.array(path), cs.cap_leaf, steps, True,
                                     cs.leaves[cs.cap_leaf] if cs.cap_leaf >= 0 else None)
        kern = env.kernels(x[None, :])[0]
        e = _choose(kern, rng.uniform(key, steps), 2 * d)
        x = x + dirs[e]
        steps += 1
        path.append(x.copy())


def _python_fires(s, x) -> bool:
    if isinstance(s, DirectionalEnter):
        return float(np.dot(x, s.direction)) > s.level
    tgt = s.target
    if isinstance(tgt, FrameBox):
        inside = x in tgt
    elif callable(tgt):
        inside = bool(tgt(tuple(int(c) for c in x)))
    else:
        inside = any(np.array_equal(x, p) for p in np.atleast_2d(tgt))
    return inside if isinstance(s, EnterSet) else not inside


def run_batch(
    law: EnvironmentLaw,
    env_keys,
    walk_keys,
    starts,
    spec,
    threads: int = 1,
    chunk: int = 4096,
) -> BatchResult:
    """Simulate many trajectories; trajectory i uses env_keys[i] and walk_keys[i].

    The result does not depend on ``threads``: every trajectory is a pure
    function of its own keys and start.
    """
    d = law.d
    cs = compile_spec(spec, d)
    if not cs.native:
        raise ValueError("batch simulation needs region or point-set targets")
    starts = np.ascontiguousarray(np.atleast_2d(np.asarray(starts, dtype=np.int64)))
    n = len(walk_keys)
    if len(starts) == 1 and n > 1:
        starts = np.ascontiguousarray(np.repeat(starts, n, axis=0))
    env_keys = np.asarray(env_keys, dtype=np.uint64)
    if env_keys.ndim == 0 or env_keys.size == 1:
        env_keys = np.full(n, np.uint64(env_keys.ravel()[0]), dtype=np.uint64)
    walk_keys = np.asarray(walk_keys, dtype=np.uint64)
    if not (len(env_keys) == len(starts) == n):
        raise ValueError("keys and starts must have equal length")
    pos = np.empty((n, d), dtype=np.int64)
    steps = np.empty(n, dtype=np.int64)
    stop = np.empty(n, dtype=np.int64)
    lp = law.param_array()

    def work(a, b):
        _walk_batch(law.code, lp, d, env_keys[a:b], walk_keys[a:b], starts[a:b], cs.types, cs.params,
                    cs.points, cs.ranges, cs.cap, pos[a:b], steps[a:b], stop[a:b])

    bounds = [(a, min(a + chunk, n)) for a in range(0, n, chunk)]
    if threads <= 1 or len(bounds) <= 1:
        for a, b in bounds:
            work(a, b)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda ab: work(*ab), bounds))
    conds = [i for i, s in enumerate(cs.leaves) if not isinstance(s, StepCap)]
    leaf = np.array([conds[r] if r >= 0 else cs.cap_leaf for r in stop], dtype=np.int64) if n else stop
    return BatchResult(pos, steps, leaf, stop < 0, cs.leaves)


# ---------------------------------------------------------------------------
# rescaled walk


@dataclass
class RescaledTrajectory:
    level: int
    tau: list[int]
    Y: np.ndarray
    anchors: list[tuple[int, ...]]
    exit_labels: list[Label]
    censored: bool

    @property
    def empty(self) -> bool:
        return len(self.tau) == 0


def _first_exit(region: FrameBox, path: np.ndarray, t: int) -> int:
    """First index s >= t with path[s] outside ``region``, or -1."""
    n = len(path)
    size = 256
    s = t
    while s < n:
        e = min(n, s + size)
        inside = region.contains(path[s:e])
        out = np.flatnonzero(~inside)
        if out.size:
            return s + int(out[0])
        s = e
        size *= 2
    return -1


def rescale_trajectory(outcome: TrajectoryOutcome, k: int, family: BoxFamily) -> RescaledTrajectory:
    """Observe the walk at successive exit times of scale-k boxes.

    Y_0 is the start; Y_{n+1} is the exit point of the box whose middle
    frontal part holds Y_n (lexicographically smallest anchor on ties).
    """
    path = outcome.path
    tau = [0]
    ys = [path[0]]
    anchors: list = []
    labels: list[Label] = []
    t = 0
    censored = False
    while True:
        anchor = family.assign(ys[-1], k)
        box = family.box(anchor, k)
        s = _first_exit(box.region, path, t)
        if s < 0:
            censored = True
            break
        anchors.append(anchor)
        labels.append(box.classify_point(path[s]))
        tau.append(s)
        ys.append(path[s])
        t = s
    return RescaledTrajectory(k, tau[1:], np.array(ys), anchors, labels, censored or outcome.censored)


def count_frontal_run(rescaled) -> int:
    """Length of the leading run of frontal exits."""
    labels = rescaled.exit_labels if hasattr(rescaled, "exit_labels") else rescaled
    n = 0
    for lab in labels:
        if Label(lab) is not Label.FRONT:
            break
        n += 1
    return n


def write_trajectory_jsonl(outcome: TrajectoryOutcome, fp: TextIO, trajectory: int = 0) -> None:
    for i, site in enumerate(outcome.path):
        fp.write(json.dumps({"trajectory": trajectory, "step": i, "site": [int(c) for c in site]}) + "\n")


def nearest_neighbour_path(path: np.ndarray) -> bool:
    if len(path) < 2:
        return True
    return bool(np.all(np.abs(np.diff(path, axis=0)).sum(axis=1) == 1))
