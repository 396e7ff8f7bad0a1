"""Lattice geometry: direction frames, scales, boxes, anchor lattices, slabs,
parallelograms and the 5^d coloring of parallelogram anchors.

All regions are "frame boxes": sets of lattice points ``y`` whose coordinates
``u_i = (y - anchor) . l_i`` in the orthonormal frame ``l_1 = l, ..., l_d`` lie
in per-axis intervals with explicit open/closed ends.  Their outer boundary is
split into a frontal part, an optional back part, and the rest.
"""

from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numba as nb
import numpy as np

ORTHO_TOL = 1e-12
UNIT_TOL = 1e-9
MAX_ENUMERATION = 20_000_000


class GeometryError(ValueError):
    """Raised for inconsistent or infeasible geometry requests."""


class Label(str, enum.Enum):
    INTERIOR = "Interior"
    MIDDLE_FRONTAL = "MiddleFrontal"
    FRONT = "FrontBoundary"
    BACK = "BackBoundary"
    SIDE = "SideBoundary"
    OTHER = "BoundaryOther"
    OUTSIDE = "Outside"


# ---------------------------------------------------------------------------
# frames


@dataclass(frozen=True)
class DirectionFrame:
    """Orthonormal frame ``l_1 = l, l_2, ..., l_d`` stored as matrix rows."""

    basis: tuple[tuple[float, ...], ...]

    @property
    def dimension(self) -> int:
        return len(self.basis)

    @property
    def l(self) -> np.ndarray:
        return np.array(self.basis[0])

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.basis, dtype=np.float64)

    def is_axis_aligned(self) -> bool:
        m = self.matrix
        return bool(np.all((m == 0.0) | (np.abs(m) == 1.0)) and np.all(np.count_nonzero(m, axis=1) == 1))

    def project(self, x) -> np.ndarray:
        """pi_l: orthogonal projection onto the span of l."""
        x = np.asarray(x, dtype=np.float64)
        return (x @ self.l)[..., None] * self.l

    def project_perp(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return x - self.project(x)

    def to_json(self) -> list[list[float]]:
        return [list(v) for v in self.basis]


def build_frame(l: Sequence[float], d: int | None = None) -> DirectionFrame:
    """Complete the unit vector ``l`` to an orthonormal basis.

    Standard basis vectors are orthogonalized against the current basis in
    index order; near-parallel ones are skipped.  Each completed vector has its
    first nonzero coordinate positive.
    """
    v = np.asarray(l, dtype=np.float64).ravel()
    if d is None:
        d = v.size
    if d < 1 or v.size != d:
        raise GeometryError(f"direction has {v.size} coordinates, expected d={d}")
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise GeometryError("direction is the zero vector")
    if abs(norm - 1.0) > UNIT_TOL:
        raise GeometryError(f"direction is not a unit vector (norm {norm!r})")
    basis = [v]
    for i in range(d):
        if len(basis) == d:
            break
        w = np.zeros(d)
        w[i] = 1.0
        for b in basis:
            w = w - (w @ b) * b
        n = np.linalg.norm(w)
        if n < 1e-6:
            continue
        w = w / n
        # second pass keeps the frame orthogonal to machine precision
        for b in basis:
            w = w - (w @ b) * b
        w = w / np.linalg.norm(w)
        w[np.abs(w) < 1e-15] = 0.0
        nz = np.flatnonzero(w)
        if w[nz[0]] < 0:
            w = -w
        basis.append(w)
    frame = DirectionFrame(tuple(tuple(float(c) for c in b) for b in basis))
    _check_frame(frame, v)
    return frame


def _check_frame(frame: DirectionFrame, l: np.ndarray) -> None:
    m = frame.matrix
    gram = m @ m.T
    if np.max(np.abs(gram - np.eye(len(m)))) > ORTHO_TOL:
        raise GeometryError("frame completion lost orthonormality")
    if not np.array_equal(m[0], l):
        raise GeometryError("first frame vector must equal l exactly")


def axis_frame(d: int, axis: int = 0) -> DirectionFrame:
    e = np.zeros(d)
    e[axis] = 1.0
    return build_frame(e, d)


# ---------------------------------------------------------------------------
# scales


@dataclass(frozen=True)
class ScaleSchedule:
    """Scales N_{k+1} = 3 (N_0 + k)^2 N_k with N_{-1} = 2 N_0 / 3."""

    N0: int

    def __post_init__(self):
        if not isinstance(self.N0, (int, np.integer)) or self.N0 <= 0 or self.N0 % 6:
            raise GeometryError(f"N0 must be a positive multiple of 6, got {self.N0!r}")

    @property
    def Nminus1(self) -> int:
        return 2 * self.N0 // 3

    def scale(self, k: int) -> int:
        return scale(self, k)

    def scales(self, kmax: int) -> list[int]:
        return [scale(self, k) for k in range(kmax + 1)]


def scale(schedule: ScaleSchedule, k: int) -> int:
    """Exact N_k (Python integers, so no overflow)."""
    if k < -1:
        raise GeometryError("scale index must be >= -1")
    if k == -1:
        v = Fraction(2 * schedule.N0, 3)
        return int(v) if v.denominator == 1 else v
    n = schedule.N0
    for j in range(k):
        n = 3 * (schedule.N0 + j) ** 2 * n
    return n


# ---------------------------------------------------------------------------
# jitted membership kernels


@nb.njit(cache=True, nogil=True)
def _coords(points, anchor, frame):
    m, d = points.shape
    out = np.empty((m, d))
    for i in range(m):
        for a in range(d):
            s = 0.0
            for j in range(d):
                s += (points[i, j] - anchor[j]) * frame[a, j]
            out[i, a] = s
    return out


@nb.njit(cache=True, nogil=True)
def _inside(u, lo, hi, loc, hic):
    for a in range(u.shape[0]):
        x = u[a]
        if loc[a]:
            if x < lo[a]:
                return False
        elif x <= lo[a]:
            return False
        if hic[a]:
            if x > hi[a]:
                return False
        elif x >= hi[a]:
            return False
    return True


@nb.njit(cache=True, nogil=True)
def _contains_many(points, anchor, frame, lo, hi, loc, hic):
    u = _coords(points, anchor, frame)
    out = np.empty(points.shape[0], dtype=np.bool_)
    for i in range(points.shape[0]):
        out[i] = _inside(u[i], lo, hi, loc, hic)
    return out


# ---------------------------------------------------------------------------
# frame boxes


@dataclass(frozen=True)
class FrameBox:
    """Lattice points with frame coordinates in per-axis intervals.

    ``front_at``/``front_closed`` give the frontal rule ``u_1 >= front_at``
    (``>`` when open); ``back_at`` likewise ``u_1 <= back_at``.  Both parts
    also require every transverse ``|u_j|`` below ``part_halfwidth``
    (``<=`` when ``part_closed``).  Boundary points matching neither are
    ``SIDE`` if a back part exists, else ``OTHER``.
    """

    frame: DirectionFrame
    anchor: tuple
    lo: tuple
    hi: tuple
    lo_closed: tuple
    hi_closed: tuple
    front_at: float
    front_closed: bool
    part_halfwidth: float
    part_closed: bool
    back_at: float | None = None
    back_closed: bool = True
    kind: str = "region"
    meta: tuple = ()
    nonconforming: bool = False

    @property
    def d(self) -> int:
        return self.frame.dimension

    @property
    def parts(self) -> tuple[Label, ...]:
        if self.back_at is None:
            return (Label.FRONT, Label.OTHER)
        return (Label.FRONT, Label.BACK, Label.SIDE)

    def arrays(self):
        return (
            np.asarray(self.anchor, dtype=np.float64),
            self.frame.matrix,
            np.asarray(self.lo, dtype=np.float64),
            np.asarray(self.hi, dtype=np.float64),
            np.asarray(self.lo_closed, dtype=np.bool_),
            np.asarray(self.hi_closed, dtype=np.bool_),
        )

    def coords(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return _coords(p, np.asarray(self.anchor, dtype=np.float64), self.frame.matrix)

    def contains(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return _contains_many(p, *self.arrays())

    def __contains__(self, y) -> bool:
        return bool(self.contains(np.asarray(y)[None, :])[0])

    def on_boundary(self, points) -> np.ndarray:
        """Outer boundary: outside the region with a nearest neighbour inside."""
        p = np.atleast_2d(np.asarray(points, dtype=np.int64))
        out = ~self.contains(p)
        near = np.zeros(len(p), dtype=bool)
        for a in range(self.d):
            for s in (1, -1):
                q = p.copy()
                q[:, a] += s
                near |= self.contains(q)
        return out & near

    def _part_rule(self, u, at, closed, front):
        if front:
            cond = u[:, 0] >= at if closed else u[:, 0] > at
        else:
            cond = u[:, 0] <= at if closed else u[:, 0] < at
        if self.d > 1:
            t = np.abs(u[:, 1:])
            tcond = np.all(t <= self.part_halfwidth if self.part_closed else t < self.part_halfwidth, axis=1)
            cond = cond & tcond
        return cond

    def boundary_labels(self, points) -> np.ndarray:
        """Part labels for points already known to lie on the outer boundary."""
        u = self.coords(points)
        labels = np.full(len(u), (Label.OTHER if self.back_at is None else Label.SIDE).value, dtype=object)
        if self.back_at is not None:
            labels[self._part_rule(u, self.back_at, self.back_closed, False)] = Label.BACK.value
        labels[self._part_rule(u, self.front_at, self.front_closed, True)] = Label.FRONT.value
        return labels

    def classify_many(self, points) -> list[Label]:
        p = np.atleast_2d(np.asarray(points, dtype=np.int64))
        inside = self.contains(p)
        bd = self.on_boundary(p)
        out = [Label.OUTSIDE] * len(p)
        for i in np.flatnonzero(inside):
            out[i] = Label.INTERIOR
        if bd.any():
            labs = self.boundary_labels(p[bd])
            for i, lab in zip(np.flatnonzero(bd), labs):
                out[i] = Label(lab)
        return out

    def classify(self, y) -> Label:
        return self.classify_many(np.asarray(y)[None, :])[0]

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer bounding box of the region (boundary not included)."""
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise GeometryError(f"{self.kind} region is unbounded")
        m = self.frame.matrix
        corners = np.array(list(itertools.product(*zip(lo, hi))))
        pts = corners @ m + np.asarray(self.anchor, dtype=np.float64)
        return np.floor(pts.min(axis=0)).astype(np.int64), np.ceil(pts.max(axis=0)).astype(np.int64)

    def lattice_points(self, limit: int = MAX_ENUMERATION) -> np.ndarray:
        """All lattice points of the region in lexicographic order."""
        lo, hi = self.bounding_box()
        sizes = hi - lo + 1
        total = int(np.prod(sizes.astype(object)))
        if total > limit:
            raise GeometryError(
                f"{self.kind} region needs {total} enumeration cells (limit {limit}); "
                "use a transverse-width override"
            )
        axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.d)
        return grid[self.contains(grid)]

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "anchor": [float(a) if not float(a).is_integer() else int(a) for a in self.anchor],
            "frame": self.frame.to_json(),
            "lo": list(self.lo),
            "hi": list(self.hi),
            "meta": dict(self.meta),
            "nonconforming": self.nonconforming,
        }


def _open_box(frame, anchor, lo1, hi1, half, **kw) -> FrameBox:
    d = frame.dimension
    return FrameBox(
        frame=frame,
        anchor=tuple(anchor),
        lo=(lo1,) + (-half,) * (d - 1),
        hi=(hi1,) + (half,) * (d - 1),
        lo_closed=(False,) * d,
        hi_closed=(False,) * d,
        **kw,
    )


def regions_intersect(a: FrameBox, b: FrameBox) -> bool:
    """Whether two regions in the same frame share a lattice point."""
    if a.frame != b.frame:
        raise GeometryError("intersection test needs a common frame")
    shift = (np.asarray(b.anchor, float) - np.asarray(a.anchor, float)) @ a.frame.matrix.T
    for ax in range(a.d):
        alo, ahi = a.lo[ax], a.hi[ax]
        blo, bhi = b.lo[ax] + shift[ax], b.hi[ax] + shift[ax]
        lo, hi = max(alo, blo), min(ahi, bhi)
        if lo > hi:
            return False
        if lo == hi:
            lo_c = (a.lo_closed[ax] if alo >= blo else True) and (b.lo_closed[ax] if blo >= alo else True)
            hi_c = (a.hi_closed[ax] if ahi <= bhi else True) and (b.hi_closed[ax] if bhi <= ahi else True)
            if not (lo_c and hi_c):
                return False
    if a.frame.is_axis_aligned():
        # per-axis integer ranges are exact for axis-aligned frames
        return _axis_aligned_overlap(a, b)
    small = a if _volume(a) <= _volume(b) else b
    other = b if small is a else a
    pts = small.lattice_points()
    return bool(len(pts) and other.contains(pts).any())


def _volume(r: FrameBox) -> float:
    return float(np.prod(np.asarray(r.hi, float) - np.asarray(r.lo, float)))


def _int_range(anchor_c, lo, hi, loc, hic, sign):
    # integer y with lo <(=) sign*(y - anchor_c) <(=) hi
    if sign > 0:
        a, b, ac, bc = anchor_c + lo, anchor_c + hi, loc, hic
    else:
        a, b, ac, bc = anchor_c - hi, anchor_c - lo, hic, loc
    ya = math.ceil(a) if ac or not float(a).is_integer() else int(a) + 1
    yb = math.floor(b) if bc or not float(b).is_integer() else int(b) - 1
    return ya, yb


def _axis_aligned_overlap(a: FrameBox, b: FrameBox) -> bool:
    m = a.frame.matrix
    for ax in range(a.d):
        j = int(np.flatnonzero(m[ax])[0])
        s = int(m[ax, j])
        a0, a1 = _int_range(float(a.anchor[j]), a.lo[ax], a.hi[ax], a.lo_closed[ax], a.hi_closed[ax], s)
        b0, b1 = _int_range(float(b.anchor[j]), b.lo[ax], b.hi[ax], b.lo_closed[ax], b.hi_closed[ax], s)
        if max(a0, b0) > min(a1, b1):
            return False
    return True


# ---------------------------------------------------------------------------
# anchor lattices


@dataclass(frozen=True)
class AnchorLattice:
    """Points floor(sum_k j_k l_k) with j_1 in n_1 Z and j_2..j_d in n_2 Z.

    Spacings may be non-integer (the parallelogram lattice uses
    n^3 lnln n / ln n transversally); the floor keeps members on Z^d.
    """

    spacing_l: float
    spacing_transverse: float
    frame: DirectionFrame

    def __post_init__(self):
        if self.spacing_l <= 0 or self.spacing_transverse <= 0:
            raise GeometryError("lattice spacings must be positive")

    @property
    def spacings(self) -> np.ndarray:
        d = self.frame.dimension
        return np.array([self.spacing_l] + [self.spacing_transverse] * (d - 1), dtype=np.float64)

    def point(self, index: Sequence[int]) -> tuple[int, ...]:
        return tuple(int(v) for v in self.points(np.asarray(index)[None, :])[0])

    def points(self, indices) -> np.ndarray:
        idx = np.atleast_2d(np.asarray(indices, dtype=np.float64))
        real = (idx * self.spacings) @ self.frame.matrix
        return np.floor(real).astype(np.int64)

    def index_ranges_near(self, u_lo, u_hi) -> list[range]:
        """Index ranges whose points can have frame coordinates in [u_lo, u_hi]."""
        slack = math.sqrt(self.frame.dimension)
        out = []
        for lo, hi, s in zip(u_lo, u_hi, self.spacings):
            out.append(range(math.floor((lo - slack) / s), math.ceil((hi + slack) / s) + 1))
        return out


def covering_anchors(lattice: AnchorLattice, middle_at_origin: FrameBox, x) -> list[tuple[int, ...]]:
    """Anchors y of ``lattice`` with x in the translate of ``middle_at_origin`` by y."""
    x = np.asarray(x, dtype=np.int64)
    u = middle_at_origin.coords(x[None, :])[0]  # anchor of template is the origin
    ranges = lattice.index_ranges_near(u - np.asarray(middle_at_origin.hi), u - np.asarray(middle_at_origin.lo))
    idx = np.array(list(itertools.product(*ranges)), dtype=np.int64)
    ys = lattice.points(idx)
    anchor, frame, lo, hi, loc, hic = middle_at_origin.arrays()
    ok = _contains_many((x[None, :] - ys).astype(np.float64), anchor, frame, lo, hi, loc, hic)
    found = {tuple(int(c) for c in y) for y in ys[ok]}
    return sorted(found)


# ---------------------------------------------------------------------------
# boxes of the renormalisation scheme


@dataclass(frozen=True)
class Box:
    """B(x,k) with its middle frontal part and boundary partition."""

    anchor: tuple[int, ...]
    level: int
    frame: DirectionFrame
    schedule: ScaleSchedule
    region: FrameBox
    middle: FrameBox

    @property
    def nonconforming(self) -> bool:
        return self.region.nonconforming

    def classify_point(self, y) -> Label:
        return classify_point(self, y)

    def to_json(self) -> dict:
        return {
            "kind": "box",
            "anchor": list(self.anchor),
            "level": self.level,
            "N0": self.schedule.N0,
            "frame": self.frame.to_json(),
            "halfwidth": self.region.hi[1] if self.frame.dimension > 1 else None,
            "middle_halfwidth": self.middle.hi[1] if self.frame.dimension > 1 else None,
            "nonconforming": self.nonconforming,
        }


def classify_point(box: Box, y) -> Label:
    lab = box.region.classify(y)
    if lab is Label.INTERIOR and y in box.middle:
        return Label.MIDDLE_FRONTAL
    return lab


@dataclass(frozen=True)
class LevelOverride:
    """Desk-scale replacements for one level; any field left as None keeps the exact value."""

    halfwidth: float | None = None
    middle_halfwidth: float | None = None
    scale: int | None = None
    spacing_l: float | None = None
    spacing_transverse: float | None = None

    @classmethod
    def parse(cls, value) -> "LevelOverride":
        if isinstance(value, LevelOverride):
            return value
        if isinstance(value, Mapping):
            return cls(**value)
        outer, middle = value
        return cls(float(outer), float(middle))


@dataclass(frozen=True)
class BoxFamily:
    """Boxes of every scale for one (schedule, frame).

    ``overrides`` maps a level to a :class:`LevelOverride` (or an
    ``(outer, middle)`` half-width pair).  Boxes built from overridden levels
    are flagged nonconforming.
    """

    schedule: ScaleSchedule
    frame: DirectionFrame
    overrides: tuple = ()

    @classmethod
    def create(cls, schedule, frame, overrides: Mapping | None = None):
        ov = tuple(sorted((int(k), LevelOverride.parse(v)) for k, v in (overrides or {}).items()))
        for _, o in ov:
            if o.halfwidth is not None and o.middle_halfwidth is not None and not 0 < o.middle_halfwidth <= o.halfwidth:
                raise GeometryError("override half-widths need 0 < middle <= outer")
            if o.scale is not None and o.scale <= 0:
                raise GeometryError("override scale must be positive")
        return cls(schedule, frame, ov)

    @property
    def d(self) -> int:
        return self.frame.dimension

    def override(self, k: int) -> LevelOverride | None:
        for kk, o in self.overrides:
            if kk == k:
                return o
        return None

    def is_overridden(self, k: int) -> bool:
        return self.override(k) is not None

    def scale(self, k: int):
        o = self.override(k)
        if o is not None and o.scale is not None:
            return o.scale
        return self.schedule.scale(k)

    def widths(self, k: int) -> tuple[float, float]:
        n = self.scale(k)
        outer, middle = float(25 * n**3), float(n**3)
        o = self.override(k)
        if o is not None:
            outer = o.halfwidth if o.halfwidth is not None else outer
            middle = o.middle_halfwidth if o.middle_halfwidth is not None else min(middle, outer)
        return outer, middle

    def box(self, anchor, k: int) -> Box:
        anchor = tuple(int(a) for a in anchor)
        if len(anchor) != self.d:
            raise GeometryError("anchor dimension mismatch")
        n = self.scale(k)
        nprev = self.scale(k - 1)
        w, wm = self.widths(k)
        flag = self.is_overridden(k)
        meta = (("level", k), ("N", n))
        region = _open_box(
            self.frame, anchor, -n / 2, float(n), w,
            front_at=float(n), front_closed=True, part_halfwidth=w, part_closed=False,
            back_at=-n / 2, back_closed=True, kind="box", meta=meta, nonconforming=flag,
        )
        d = self.d
        middle = FrameBox(
            frame=self.frame, anchor=anchor,
            lo=(float(n - nprev),) + (-wm,) * (d - 1), hi=(float(n),) + (wm,) * (d - 1),
            lo_closed=(True,) + (False,) * (d - 1), hi_closed=(False,) * d,
            front_at=float(n), front_closed=True, part_halfwidth=wm, part_closed=False,
            kind="middle_frontal", meta=meta, nonconforming=flag,
        )
        return Box(anchor, k, self.frame, self.schedule, region, middle)

    def lattice(self, k: int, spacing_l: float | None = None, spacing_transverse: float | None = None) -> AnchorLattice:
        """Anchor lattice of scale-k boxes: L_{N_{k-1}-2, 2W-2} with W the middle half-width."""
        _, wm = self.widths(k)
        o = self.override(k)
        if spacing_l is None:
            spacing_l = o.spacing_l if o is not None and o.spacing_l is not None else self.scale(k - 1) - 2
        if spacing_transverse is None:
            spacing_transverse = (
                o.spacing_transverse if o is not None and o.spacing_transverse is not None else 2 * wm - 2
            )
        return AnchorLattice(float(spacing_l), float(spacing_transverse), self.frame)

    def covering_anchors(self, x, k: int, lattice: AnchorLattice | None = None) -> list[tuple[int, ...]]:
        lat = lattice or self.lattice(k)
        return covering_anchors(lat, self.box((0,) * self.d, k).middle, x)

    def assign(self, x, k: int) -> tuple[int, ...]:
        return assign_box(x, k, self)

    def boxes_intersecting(self, target: FrameBox, k: int) -> list[Box]:
        """All scale-k boxes of the family intersecting ``target``, ordered by anchor."""
        lat = self.lattice(k)
        tmpl = self.box((0,) * self.d, k).region
        lo, hi = target.bounding_box()
        corners = np.array(list(itertools.product(*zip(lo - 1, hi + 1))), dtype=np.float64)
        u = corners @ self.frame.matrix.T
        ranges = lat.index_ranges_near(u.min(axis=0) - np.asarray(tmpl.hi), u.max(axis=0) - np.asarray(tmpl.lo))
        count = math.prod(len(r) for r in ranges)
        if count > MAX_ENUMERATION:
            raise GeometryError("too many candidate sub-boxes; use overrides")
        idx = np.array(list(itertools.product(*ranges)), dtype=np.int64)
        anchors = sorted({tuple(int(c) for c in y) for y in lat.points(idx)})
        out = []
        for a in anchors:
            b = self.box(a, k)
            if regions_intersect(b.region, target):
                out.append(b)
        return out


def assign_box(x, k: int, family: BoxFamily) -> tuple[int, ...]:
    """pi_k(x): lexicographically smallest anchor whose middle frontal part holds x."""
    found = family.covering_anchors(x, k)
    if not found:
        raise GeometryError(f"no scale-{k} box covers {tuple(x)}; geometry misconfigured")
    return found[0]


@dataclass
class CoverReport:
    covered: bool
    checked: int
    witnesses: list = field(default_factory=list)


def cover_check(
    k: int,
    family: BoxFamily,
    window_lo: Sequence[int],
    window_hi: Sequence[int],
    spacing_l: float | None = None,
    spacing_transverse: float | None = None,
    max_witnesses: int = 20,
) -> CoverReport:
    """Check that middle frontal parts of scale-k boxes cover an integer window."""
    lat = family.lattice(k, spacing_l, spacing_transverse)
    mid = family.box((0,) * family.d, k).middle
    axes = [np.arange(a, b + 1) for a, b in zip(window_lo, window_hi)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, family.d)
    covered = _covered_mask(pts, lat, mid)
    bad = pts[~covered]
    return CoverReport(bool(covered.all()), len(pts), [tuple(int(c) for c in p) for p in bad[:max_witnesses]])


def _covered_mask(pts: np.ndarray, lat: AnchorLattice, mid: FrameBox) -> np.ndarray:
    d = lat.frame.dimension
    u = mid.coords(pts)
    slack = math.sqrt(d)
    s = lat.spacings
    lo = np.floor((u - np.asarray(mid.hi) - slack) / s).astype(np.int64)
    hi = np.ceil((u - np.asarray(mid.lo) + slack) / s).astype(np.int64)
    span = int((hi - lo).max()) + 1
    offsets = np.array(list(itertools.product(range(span), repeat=d)), dtype=np.int64)
    anchor, frame, mlo, mhi, loc, hic = mid.arrays()
    covered = np.zeros(len(pts), dtype=bool)
    for off in offsets:
        idx = lo + off
        valid = np.all(idx <= hi, axis=1)
        ys = lat.points(idx)
        ok = _contains_many((pts - ys).astype(np.float64), anchor, frame, mlo, mhi, loc, hic)
        covered |= ok & valid
    return covered


# ---------------------------------------------------------------------------
# slabs and strips


def _lnln_ratio(L: float) -> float:
    return math.log(math.log(L)) / math.log(L)


def slab_transverse_bound(L: float) -> float:
    return L**3 * _lnln_ratio(L)


def make_slab(
    kind: str,
    frame: DirectionFrame,
    L: float,
    schedule: ScaleSchedule | None = None,
    halfwidth: float | None = None,
) -> FrameBox:
    """Slab D_L (``kind="D"``) or strip S_L (``kind="S"``).

    ``halfwidth`` replaces the transverse bound (flagged nonconforming).
    In d = 1 there is no transverse bound, so D_L only needs L > 0.
    """
    d = frame.dimension
    if kind == "D":
        if d > 1 and halfwidth is None and L <= math.e**math.e:
            raise GeometryError(f"slab D_L needs L > e^e, got {L}")
        if L <= 0:
            raise GeometryError("slab length must be positive")
        lo1, hi1 = -float(L), 10.0 * L
        bound = halfwidth if halfwidth is not None else (slab_transverse_bound(L) if d > 1 else math.inf)
        meta = (("L", L),)
    elif kind == "S":
        if schedule is None:
            raise GeometryError("strip S_L needs a scale schedule")
        kL = strip_level(schedule, L)
        nk, nk1 = schedule.scale(kL), schedule.scale(kL + 1)
        n0 = schedule.N0
        lo1, hi1 = -float(nk), 11.0 * nk1
        bound = halfwidth if halfwidth is not None else float(3000 * nk**3 * (n0 + kL - 1) ** 2 * (n0 + kL) ** 2)
        meta = (("L", L), ("k_L", kL))
    else:
        raise GeometryError(f"unknown slab kind {kind!r}")
    if d == 1:
        bound = math.inf
    return FrameBox(
        frame=frame, anchor=(0,) * d,
        lo=(lo1,) + (-bound,) * (d - 1), hi=(hi1,) + (bound,) * (d - 1),
        lo_closed=(True,) * d, hi_closed=(True,) * d,
        front_at=hi1, front_closed=False, part_halfwidth=bound, part_closed=True,
        kind=f"slab_{kind}", meta=meta, nonconforming=halfwidth is not None,
    )


def strip_level(schedule: ScaleSchedule, L: float) -> int:
    """k_L with N_{k_L} + 1 < L <= N_{k_L + 1} + 1."""
    if L <= schedule.N0 + 1:
        raise GeometryError("strip needs L > N0 + 1")
    k = 0
    while not (L <= schedule.scale(k + 1) + 1):
        k += 1
    return k


def slab_classify(slab: FrameBox, y) -> Label:
    return slab.classify(y)


# ---------------------------------------------------------------------------
# parallelograms


def parallelogram_width(n: int) -> float:
    """n^3 lnln n / ln n."""
    return n**3 * _lnln_ratio(n)


@dataclass(frozen=True)
class Parallelogram:
    anchor: tuple[int, ...]
    n: int
    region: FrameBox
    central: FrameBox

    def classify_point(self, y) -> Label:
        lab = self.region.classify(y)
        return lab


def make_parallelogram(x, n: int, frame: DirectionFrame, halfwidth: float | None = None) -> Parallelogram:
    if n < 3:
        raise GeometryError("parallelograms need n >= 3")
    w = halfwidth if halfwidth is not None else parallelogram_width(n)
    anchor = tuple(int(a) for a in x)
    meta = (("n", n),)
    flag = halfwidth is not None
    region = _open_box(
        frame, anchor, -2.0 * n, 2.0 * n, 2.0 * w,
        front_at=2.0 * n, front_closed=True, part_halfwidth=w + 1, part_closed=False,
        kind="parallelogram", meta=meta, nonconforming=flag,
    )
    central = _open_box(
        frame, anchor, -n - 1.0, n + 1.0, w + 1,
        front_at=n + 1.0, front_closed=True, part_halfwidth=w + 1, part_closed=False,
        kind="parallelogram_central", meta=meta, nonconforming=flag,
    )
    return Parallelogram(anchor, n, region, central)


def parallelogram_lattice(n: int, frame: DirectionFrame) -> AnchorLattice:
    """The lattice of parallelogram anchors, spacings (n, n^3 lnln n / ln n)."""
    return AnchorLattice(float(n), parallelogram_width(n), frame)


@dataclass
class ColoringPartition:
    n: int
    classes: list[list[tuple[int, ...]]]
    checked_pairs: int = 0

    @property
    def nonempty(self) -> int:
        return sum(1 for c in self.classes if c)


def color_classes(
    n: int,
    frame: DirectionFrame,
    index_lo: Sequence[int],
    index_hi: Sequence[int],
    verify: bool = True,
) -> ColoringPartition:
    """Split window anchors into 5^d classes by lattice index mod 5.

    With ``verify`` every same-class pair is checked for disjointness; a
    violation raises :class:`GeometryError`.
    """
    d = frame.dimension
    lat = parallelogram_lattice(n, frame)
    classes: list[list] = [[] for _ in range(5**d)]
    members: list[list] = [[] for _ in range(5**d)]
    for idx in itertools.product(*[range(a, b + 1) for a, b in zip(index_lo, index_hi)]):
        cid = sum((i % 5) * 5**a for a, i in enumerate(idx))
        y = lat.point(idx)
        classes[cid].append(y)
        members[cid].append(idx)
    checked = 0
    if verify:
        for cls in classes:
            regs = [make_parallelogram(y, n, frame).region for y in cls]
            for i in range(len(regs)):
                for j in range(i + 1, len(regs)):
                    checked += 1
                    if regions_intersect(regs[i], regs[j]):
                        raise GeometryError(
                            f"parallelograms at {cls[i]} and {cls[j]} share a class but intersect"
                        )
    return ColoringPartition(n, classes, checked)


# ---------------------------------------------------------------------------
# effective-criterion box specifications


def box_specification(frame: DirectionFrame, L: float, Ltilde: float) -> FrameBox:
    """The box {x : x in R((-(L-2), L+2) x (-Ltilde, Ltilde)^{d-1})}, R e_1 = l."""
    d = frame.dimension
    if d > 1 and not (3 * math.sqrt(d) <= Ltilde):
        raise GeometryError("Ltilde must be at least 3 sqrt(d)")
    return _open_box(
        frame, (0,) * d, -(L - 2.0), L + 2.0, float(Ltilde) if d > 1 else math.inf,
        front_at=L + 2.0, front_closed=True, part_halfwidth=float(Ltilde) if d > 1 else math.inf,
        part_closed=False, kind="box_spec", meta=(("L", L), ("Ltilde", Ltilde)),
    )


def interval_region(a: int, b: int, frame: DirectionFrame | None = None) -> FrameBox:
    """1D interval with interior a < x < b; front part {>= b}, back part {<= a}."""
    frame = frame or axis_frame(1)
    return FrameBox(
        frame=frame, anchor=(0,), lo=(float(a),), hi=(float(b),),
        lo_closed=(False,), hi_closed=(False,),
        front_at=float(b), front_closed=True, part_halfwidth=math.inf, part_closed=False,
        back_at=float(a), back_closed=True, kind="interval", meta=(("a", a), ("b", b)),
    )


def rectangle_region(frame: DirectionFrame, lo1: float, hi1: float, halfwidth: float, anchor=None) -> FrameBox:
    """Open frame-aligned box with front/back/side parts; used for desk experiments."""
    d = frame.dimension
    return _open_box(
        frame, anchor if anchor is not None else (0,) * d, lo1, hi1, halfwidth,
        front_at=hi1, front_closed=True, part_halfwidth=halfwidth, part_closed=False,
        back_at=lo1, back_closed=True, kind="rectangle",
        meta=(("lo", lo1), ("hi", hi1), ("halfwidth", halfwidth)),
    )


def region_json(region) -> str:
    """Canonical JSON text for a region description."""
    obj = region.to_json() if hasattr(region, "to_json") else region
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, float) and math.isinf(o):
        return "inf" if o > 0 else "-inf"
    raise TypeError(type(o))


def window_points(lo: Iterable[int], hi: Iterable[int]) -> np.ndarray:
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
