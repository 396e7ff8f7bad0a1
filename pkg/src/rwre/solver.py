"""Exact quenched exit probabilities by absorbing-chain linear solves.

For a finite region A and a quenched environment, the probability h_P(x) of
leaving A through the boundary part P solves h = P h on A with h = 1 on P and
0 on the other parts.  Small systems use a sparse LU factorisation (one
factorisation, one right-hand side per part); large ones use Gauss-Seidel
sweeps in a fixed order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .environment import Environment, directions
from .geometry import FrameBox

DIRECT_LIMIT = 50_000
GS_TOL = 1e-10
# sweep updates must be far below the residual target: errors are updates / spectral gap
GS_SWEEP_TOL = 1e-14
GS_MAX_SWEEPS = 1_000_000
NORMALIZATION_TOL = 1e-9
MAX_DRIFT_STATES = 1_000_000


class SolverError(RuntimeError):
    """Singular or non-convergent exit system."""


@dataclass
class ExitField:
    """Exit probabilities by boundary part for every interior site of a region."""

    region: FrameBox
    points: np.ndarray
    parts: tuple[str, ...]
    values: np.ndarray  # (n_points, n_parts)
    method: str
    residual: float

    def index_of(self, x) -> int:
        x = np.asarray(x, dtype=np.int64)
        hit = np.flatnonzero(np.all(self.points == x, axis=1))
        if hit.size == 0:
            raise KeyError(f"{tuple(x)} is not an interior site")
        return int(hit[0])

    def at(self, x) -> "ExitDistribution":
        i = self.index_of(x)
        probs = {p: float(self.values[i, j]) for j, p in enumerate(self.parts)}
        return ExitDistribution(self.region, tuple(int(c) for c in np.ravel(x)), probs,
                                abs(1.0 - float(self.values[i].sum())), self.method)

    def part(self, name: str) -> np.ndarray:
        return self.values[:, self.parts.index(name)]


@dataclass
class ExitDistribution:
    region: FrameBox
    start: tuple[int, ...]
    probabilities: dict[str, float]
    residual: float
    method: str = "direct"
    meta: dict = field(default_factory=dict)

    def __getitem__(self, part: str) -> float:
        return self.probabilities.get(part, 0.0)


def exit_field(env: Environment, region: FrameBox, method: str = "auto") -> ExitField:
    """Exit probabilities by boundary part from every interior site of ``region``."""
    pts = region.lattice_points()
    n = len(pts)
    if n == 0:
        raise SolverError("region has no lattice points")
    d = region.d
    lo = pts.min(axis=0) - 1
    shape = pts.max(axis=0) + 2 - lo
    lookup = np.full(int(np.prod(shape)), -1, dtype=np.int64)
    lookup[np.ravel_multi_index((pts - lo).T, shape)] = np.arange(n)

    dirs = directions(d)
    kern = env.kernels(pts)
    rows, cols, vals = [], [], []
    parts = tuple(p.value for p in region.parts)
    rhs = np.zeros((n, len(parts)))
    for e_idx, e in enumerate(dirs):
        nb_pts = pts + e
        nb_idx = lookup[np.ravel_multi_index((nb_pts - lo).T, shape)]
        w = kern[:, e_idx]
        inside = nb_idx >= 0
        sel = inside & (w > 0)
        rows.append(np.flatnonzero(sel))
        cols.append(nb_idx[sel])
        vals.append(w[sel])
        out = np.flatnonzero(~inside & (w > 0))
        if out.size:
            labels = region.boundary_labels(nb_pts[out])
            for j, p in enumerate(parts):
                m = labels == p
                np.add.at(rhs[:, j], out[m], w[out[m]])
    P = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    if method == "auto":
        method = "direct" if n <= DIRECT_LIMIT else "gauss_seidel"
    if method == "direct":
        A = (sparse.identity(n, format="csc") - P.tocsc()).tocsc()
        try:
            lu = spla.splu(A)
            h = lu.solve(rhs)
        except RuntimeError as exc:
            raise SolverError(f"exit system is singular: {exc}") from exc
    elif method == "gauss_seidel":
        h = np.empty_like(rhs)
        for j in range(rhs.shape[1]):
            h[:, j], ok = _gauss_seidel(P.indptr, P.indices, P.data, rhs[:, j], GS_SWEEP_TOL, GS_MAX_SWEEPS)
            if not ok:
                raise SolverError("Gauss-Seidel did not reach the residual tolerance")
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.all(np.isfinite(h)):
        raise SolverError("exit system produced non-finite values")
    lin_res = float(np.max(np.abs(h - P @ h - rhs)))
    if lin_res > GS_TOL:
        raise SolverError(f"linear residual {lin_res:.3e} above {GS_TOL}")
    norm_res = float(np.max(np.abs(1.0 - h.sum(axis=1))))
    if norm_res > NORMALIZATION_TOL:
        raise SolverError(
            f"exit probabilities do not sum to one (defect {norm_res:.3e}); "
            "the walk may be trapped in the region"
        )
    np.clip(h, 0.0, 1.0, out=h)
    return ExitField(region, pts, parts, h, method, max(lin_res, norm_res))


@nb.njit(cache=True, nogil=True)
def _gauss_seidel(indptr, indices, data, b, tol, max_sweeps):
    n = b.shape[0]
    h = np.zeros(n)
    for sweep in range(max_sweeps):
        delta = 0.0
        for i in range(n):
            s = b[i]
            diag = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                if j == i:
                    diag += data[k]
                else:
                    s += data[k] * h[j]
            v = s / (1.0 - diag)
            dv = abs(v - h[i])
            if dv > delta:
                delta = dv
            h[i] = v
        if delta < tol:
            return h, True
    return h, False


def quenched_exit_split(env: Environment, region: FrameBox, start, method: str = "auto") -> ExitDistribution:
    """Distribution of the boundary part through which the walk from ``start`` leaves ``region``."""
    start = tuple(int(c) for c in np.ravel(start))
    if start not in region:
        raise ValueError(f"start {start} is not inside the region")
    return exit_field(env, region, method).at(start)


def ruin_probability(p: float, a: int, b: int) -> float:
    """P(hit +b before -a) from 0 for the walk stepping +1 w.p. p, -1 w.p. 1-p."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if a < 1 or b < 1:
        raise ValueError("a and b must be at least 1")
    if p == 0.5:
        return a / (a + b)
    log_lam = math.log((1.0 - p) / p)
    # (1 - lam^a)/(1 - lam^(a+b)) written with expm1 for lam near 1
    return math.expm1(a * log_lam) / math.expm1((a + b) * log_lam)


# ---------------------------------------------------------------------------
# one-dimensional drift walk with two step sizes


@dataclass(frozen=True)
class DriftWalkSpec:
    """Integer walk jumping +right_step w.p. right_prob and -left_step otherwise.

    Inside the closed band [band_lo, band_hi] the right-jump probability is
    ``band_right_prob`` instead.
    """

    right_step: int
    left_step: int
    right_prob: float
    band_lo: int | None = None
    band_hi: int | None = None
    band_right_prob: float | None = None

    def __post_init__(self):
        if self.right_step < 1 or self.left_step < 1:
            raise ValueError("step sizes must be at least 1")
        for q in (self.right_prob, self.band_right_prob):
            if q is not None and not 0.0 <= q <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if (self.band_lo is None) != (self.band_hi is None):
            raise ValueError("band needs both endpoints")
        if self.band_lo is not None and self.band_right_prob is None:
            raise ValueError("band needs its right-jump probability")

    def right_prob_at(self, x: np.ndarray) -> np.ndarray:
        p = np.full(x.shape, self.right_prob, dtype=np.float64)
        if self.band_lo is not None:
            p[(x >= self.band_lo) & (x <= self.band_hi)] = self.band_right_prob
        return p


def drift_walk_hitting(
    spec: DriftWalkSpec,
    start: int,
    left_absorb: int,
    right_absorb: int,
    absorbing=(),
    after_first_step: bool = False,
) -> float:
    """Probability that the walk reaches [right_absorb, inf) before (-inf, left_absorb].

    ``absorbing`` lists extra interior points where the walk is stopped
    (counted as not reaching the right side).  With ``after_first_step`` the
    extra points only stop the walk from time 1 on, which is how return-to-y
    events are expressed.  Overshooting jumps are absorbed at the threshold
    they cross.
    """
    if not left_absorb < right_absorb:
        raise ValueError("left threshold must lie below the right one")
    lo, hi = left_absorb + 1, right_absorb - 1
    n = hi - lo + 1
    if n > MAX_DRIFT_STATES:
        raise SolverError(f"drift walk needs {n} states (limit {MAX_DRIFT_STATES})")
    if start >= right_absorb:
        return 1.0
    if start <= left_absorb:
        return 0.0
    stops = {int(a) for a in absorbing if lo <= a <= hi}
    h = _drift_solve(spec, lo, hi, stops)
    if not after_first_step and start in stops:
        return 0.0
    if after_first_step:
        p = float(spec.right_prob_at(np.array([start]))[0])
        return p * _value(h, lo, hi, start + spec.right_step, stops) + (1 - p) * _value(
            h, lo, hi, start - spec.left_step, stops
        )
    return float(h[start - lo])


def _value(h, lo, hi, x, stops) -> float:
    if x > hi:
        return 1.0
    if x < lo:
        return 0.0
    if x in stops:
        return 0.0
    return float(h[x - lo])


def _drift_solve(spec: DriftWalkSpec, lo: int, hi: int, stops: set) -> np.ndarray:
    n = hi - lo + 1
    xs = np.arange(lo, hi + 1)
    p = spec.right_prob_at(xs)
    free = np.ones(n, dtype=bool)
    for s in stops:
        free[s - lo] = False
    rows, cols, vals = [np.arange(n)], [np.arange(n)], [np.ones(n)]
    b = np.zeros(n)
    for step, w in ((spec.right_step, p), (-spec.left_step, 1 - p)):
        y = xs + step
        inside = (y >= lo) & (y <= hi)
        sel = free & inside & (w > 0)
        rows.append(np.flatnonzero(sel))
        cols.append(y[sel] - lo)
        vals.append(-w[sel])
        if step > 0:
            b += np.where(free & ~inside, w, 0.0)
    A = sparse.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    try:
        h = spla.spsolve(A, b)
    except RuntimeError as exc:
        raise SolverError(str(exc)) from exc
    h = np.atleast_1d(h)
    if not np.all(np.isfinite(h)):
        raise SolverError("drift-walk system is singular")
    return np.clip(h, 0.0, 1.0)


@dataclass
class GeometricRatioCheck:
    y: int
    lose: float
    d_plus: float
    d_minus: float
    ratio: float
    holds: bool


def geometric_ratio_check(spec: DriftWalkSpec, y: int, left_absorb: int, right_absorb: int) -> GeometricRatioCheck:
    """Compare P_y(left before right) with P_y(D-)/P_y(D+).

    D+ (D-) is the event of reaching the right (left) threshold before
    returning to y.  Renewal at returns to y gives
    P_y(left first) = P(D-)/(P(D+) + P(D-)) <= P(D-)/P(D+).
    """
    lose = 1.0 - drift_walk_hitting(spec, y, left_absorb, right_absorb)
    d_plus = drift_walk_hitting(spec, y, left_absorb, right_absorb, absorbing=(y,), after_first_step=True)
    mirrored = _left_hitting(spec, y, left_absorb, right_absorb)
    ratio = math.inf if d_plus == 0 else mirrored / d_plus
    return GeometricRatioCheck(y, lose, d_plus, mirrored, ratio, lose <= ratio * (1 + 1e-12) + 1e-15)


def _left_hitting(spec, y, left_absorb, right_absorb) -> float:
    # reflect the walk: reaching the left threshold becomes reaching the right one
    mirrored = DriftWalkSpec(
        spec.left_step,
        spec.right_step,
        1.0 - spec.right_prob,
        None if spec.band_hi is None else -spec.band_hi,
        None if spec.band_lo is None else -spec.band_lo,
        None if spec.band_right_prob is None else 1.0 - spec.band_right_prob,
    )
    return drift_walk_hitting(mirrored, -y, -right_absorb, -left_absorb, absorbing=(-y,), after_first_step=True)
