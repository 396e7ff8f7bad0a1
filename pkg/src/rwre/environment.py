"""Environment laws, site-keyed quenched environments and the 1D speed oracle.

Kernels are stored as arrays of length 2d in the direction order
``(+e_1, -e_1, +e_2, -e_2, ...)``.  The kernel at site ``x`` is a pure
function of ``(seed, x, law)``; it is recomputed on demand inside the
simulation kernels and never has to be materialised for a whole region.
"""

from __future__ import annotations

import enum
import hashlib
import math
import threading
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numba as nb
import numpy as np

from . import rng

SUM_TOL = 1e-12

KIND_CONSTANT = 0
KIND_TWO_POINT = 1
KIND_DIRICHLET = 2
KIND_PERTURBED = 3

_KIND_CODES = {
    "constant": KIND_CONSTANT,
    "two_point": KIND_TWO_POINT,
    "dirichlet": KIND_DIRICHLET,
    "perturbed_srw": KIND_PERTURBED,
}


class LawError(ValueError):
    """Invalid environment law or a law used outside its assumptions."""


class EllipticityWarning(UserWarning):
    """A law without a uniform ellipticity constant was used where one is assumed."""


def directions(d: int) -> np.ndarray:
    """Unit vectors in kernel order, shape (2d, d)."""
    out = np.zeros((2 * d, d), dtype=np.int64)
    for i in range(d):
        out[2 * i, i] = 1
        out[2 * i + 1, i] = -1
    return out


@dataclass(frozen=True)
class TransitionKernel:
    probabilities: tuple[float, ...]

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        if p.size == 0 or p.size % 2:
            raise LawError("a kernel needs 2d weights")
        if np.any(p < 0):
            raise LawError("kernel weights must be nonnegative")
        if abs(p.sum() - 1.0) > SUM_TOL:
            raise LawError(f"kernel weights sum to {p.sum()!r}, not 1")

    @property
    def d(self) -> int:
        return len(self.probabilities) // 2

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probabilities, dtype=np.float64)

    def weight(self, e: Sequence[int]) -> float:
        e = tuple(int(c) for c in e)
        for i, u in enumerate(directions(self.d)):
            if tuple(u) == e:
                return self.probabilities[i]
        raise LawError(f"{e} is not a nearest-neighbour step")

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {tuple(int(c) for c in u): p for u, p in zip(directions(self.d), self.probabilities)}

    def min_weight(self) -> float:
        return min(self.probabilities)


def _kernel(p) -> TransitionKernel:
    if isinstance(p, TransitionKernel):
        return p
    return TransitionKernel(tuple(float(v) for v in p))


@dataclass(frozen=True)
class EnvironmentLaw:
    """An i.i.d. law of site kernels.

    ``kappa`` is the ellipticity constant used by the theory-facing
    operations.  It defaults to the analytic lower bound of the law's kernel
    weights; ``None`` means the law is not uniformly elliptic.
    """

    kind: str
    d: int
    params: tuple[float, ...]
    kappa: float | None
    description: Mapping = field(default_factory=dict, compare=False, hash=False)

    @property
    def code(self) -> int:
        return _KIND_CODES[self.kind]

    @property
    def uniformly_elliptic(self) -> bool:
        return self.kappa is not None and self.kappa > 0

    def param_array(self) -> np.ndarray:
        return np.asarray(self.params, dtype=np.float64)

    def require_elliptic(self, operation: str) -> float:
        if not self.uniformly_elliptic:
            raise LawError(f"{operation} needs a uniformly elliptic law (kappa > 0)")
        return float(self.kappa)

    def warn_if_not_elliptic(self, operation: str) -> None:
        if not self.uniformly_elliptic:
            warnings.warn(f"{operation}: law has no ellipticity constant", EllipticityWarning, stacklevel=3)

    def to_json(self) -> dict:
        out = dict(self.description)
        out.setdefault("kind", self.kind)
        out["kappa"] = self.kappa
        return out

    # constructors

    @classmethod
    def constant(cls, kernel, kappa: float | None = None) -> "EnvironmentLaw":
        k = _kernel(kernel)
        return cls._make("constant", k.d, k.probabilities, k.min_weight(), kappa,
                         {"kind": "constant", "kernel": list(k.probabilities)})

    @classmethod
    def two_point(cls, kernel_a, kernel_b, p: float, kappa: float | None = None) -> "EnvironmentLaw":
        a, b = _kernel(kernel_a), _kernel(kernel_b)
        if a.d != b.d:
            raise LawError("two-point kernels differ in dimension")
        if not 0.0 <= p <= 1.0:
            raise LawError("mixing probability must lie in [0, 1]")
        weights = [w for w, q in ((a, p), (b, 1 - p)) if q > 0]
        floor = min(k.min_weight() for k in weights)
        return cls._make("two_point", a.d, a.probabilities + b.probabilities + (float(p),), floor, kappa,
                         {"kind": "two_point", "kernel_a": list(a.probabilities),
                          "kernel_b": list(b.probabilities), "p": p})

    @classmethod
    def dirichlet(cls, alpha: Sequence[float], kappa: float | None = None) -> "EnvironmentLaw":
        alpha = tuple(float(a) for a in alpha)
        if len(alpha) % 2 or len(alpha) == 0 or min(alpha) <= 0:
            raise LawError("Dirichlet law needs 2d positive concentrations")
        return cls._make("dirichlet", len(alpha) // 2, alpha, 0.0, kappa,
                         {"kind": "dirichlet", "alpha": list(alpha)})

    @classmethod
    def perturbed_srw(cls, delta: Sequence[float], eps: float, kappa: float | None = None) -> "EnvironmentLaw":
        """(1 - eps) q + eps D with q(+-e_i) = 1/(2d) +- delta_i/2 and D ~ Dirichlet(1,...,1)."""
        delta = np.asarray(delta, dtype=np.float64)
        d = delta.size
        if not 0.0 <= eps <= 1.0:
            raise LawError("perturbation eps must lie in [0, 1]")
        q = np.empty(2 * d)
        q[0::2] = 1 / (2 * d) + delta / 2
        q[1::2] = 1 / (2 * d) - delta / 2
        if np.any(q < 0):
            raise LawError("drift too large: base kernel has negative weight")
        floor = (1 - eps) * float(q.min())
        return cls._make("perturbed_srw", d, tuple(q) + (float(eps),), floor, kappa,
                         {"kind": "perturbed_srw", "delta": delta.tolist(), "eps": eps})

    @classmethod
    def _make(cls, kind, d, params, floor, kappa, desc) -> "EnvironmentLaw":
        if kappa is None:
            kappa = floor if floor > 0 else None
        elif not 0 < kappa <= floor + 1e-15:
            raise LawError(
                f"declared kappa={kappa} is not attained by the law (kernel weights can reach {floor})"
            )
        return cls(kind, int(d), tuple(float(v) for v in params), kappa, desc)


def deterministic_right(d: int) -> EnvironmentLaw:
    """Every site jumps along +e_1 with probability one."""
    k = np.zeros(2 * d)
    k[0] = 1.0
    return EnvironmentLaw.constant(k)


def simple_symmetric(d: int) -> EnvironmentLaw:
    return EnvironmentLaw.constant(np.full(2 * d, 1 / (2 * d)))


def biased_1d(p_right: float) -> EnvironmentLaw:
    return EnvironmentLaw.constant([p_right, 1 - p_right])


def law_from_json(spec: Mapping) -> EnvironmentLaw:
    """Build a law from its JSON description.

    Accepted kinds: ``constant`` (``kernel`` or 1D ``p_right``),
    ``two_point`` (``kernel_a``/``kernel_b`` or 1D ``right: [pa, pb]``; ``p``),
    ``dirichlet`` (``alpha``), ``perturbed_srw`` (``delta``, ``eps``),
    ``deterministic_right`` and ``symmetric`` (``d``).
    """
    kind = spec.get("kind")
    kappa = spec.get("kappa")
    if kind == "constant":
        if "p_right" in spec:
            p = float(spec["p_right"])
            return EnvironmentLaw.constant([p, 1 - p], kappa)
        return EnvironmentLaw.constant(spec["kernel"], kappa)
    if kind == "two_point":
        if "right" in spec:
            pa, pb = (float(v) for v in spec["right"])
            return EnvironmentLaw.two_point([pa, 1 - pa], [pb, 1 - pb], float(spec.get("p", 0.5)), kappa)
        return EnvironmentLaw.two_point(spec["kernel_a"], spec["kernel_b"], float(spec.get("p", 0.5)), kappa)
    if kind == "dirichlet":
        return EnvironmentLaw.dirichlet(spec["alpha"], kappa)
    if kind == "perturbed_srw":
        return EnvironmentLaw.perturbed_srw(spec["delta"], float(spec["eps"]), kappa)
    if kind == "deterministic_right":
        return deterministic_right(int(spec.get("d", 1)))
    if kind == "symmetric":
        return simple_symmetric(int(spec.get("d", 1)))
    raise LawError(f"unknown law kind {kind!r}")


# ---------------------------------------------------------------------------
# jitted kernel evaluation


@nb.njit(cache=True, nogil=True)
def kernel_into(code, params, d, key, out):
    """Write the kernel of the site with key ``key`` into ``out``."""
    m = 2 * d
    if code == KIND_CONSTANT:
        for i in range(m):
            out[i] = params[i]
    elif code == KIND_TWO_POINT:
        off = 0 if rng.uniform(key, 0) < params[2 * m] else m
        for i in range(m):
            out[i] = params[off + i]
    elif code == KIND_DIRICHLET:
        counter = 0
        s = 0.0
        for i in range(m):
            g, counter = rng.gamma_variate(key, counter, params[i])
            out[i] = g
            s += g
        for i in range(m):
            out[i] /= s
    else:
        eps = params[m]
        s = 0.0
        for i in range(m):
            g = -np.log(1.0 - rng.uniform(key, i))
            out[i] = g
            s += g
        for i in range(m):
            out[i] = (1.0 - eps) * params[i] + eps * out[i] / s


@nb.njit(cache=True, nogil=True)
def kernels_at(code, params, d, env_key, points):
    n = points.shape[0]
    out = np.empty((n, 2 * d))
    for j in range(n):
        kernel_into(code, params, d, rng.site_key(env_key, points[j]), out[j])
    return out


# ---------------------------------------------------------------------------
# quenched environments


class Environment:
    """A quenched environment: kernels are a pure function of (seed, site).

    Single-site lookups are cached; the cache only ever stores the value the
    pure function returns, so concurrent fills are harmless.
    """

    def __init__(self, law: EnvironmentLaw, master_seed: int, key: int | None = None):
        self.law = law
        self.master_seed = int(master_seed)
        self.key = int(key) if key is not None else rng.derive_key(self.master_seed, rng.STREAM_ENV)
        self._params = law.param_array()
        self._cache: dict[tuple[int, ...], TransitionKernel] = {}
        self._lock = threading.Lock()

    @property
    def d(self) -> int:
        return self.law.d

    def kernel_at(self, x) -> TransitionKernel:
        x = tuple(int(c) for c in x)
        found = self._cache.get(x)
        if found is None:
            arr = self.kernels(np.asarray(x, dtype=np.int64)[None, :])[0]
            found = TransitionKernel(tuple(float(v) for v in arr))
            with self._lock:
                found = self._cache.setdefault(x, found)
        return found

    def kernels(self, points) -> np.ndarray:
        """Kernels at many sites, shape (n, 2d)."""
        pts = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=np.int64)))
        if pts.shape[1] != self.d:
            raise LawError("site dimension does not match the law")
        return kernels_at(self.law.code, self._params, self.d, np.uint64(self.key), pts)

    def digest(self, lo: Sequence[int], hi: Sequence[int]) -> str:
        """SHA-256 of the kernels over the integer window [lo, hi]."""
        axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
        return hashlib.sha256(self.kernels(pts).tobytes()).hexdigest()


def sample_environment(law: EnvironmentLaw, master_seed: int) -> Environment:
    return Environment(law, master_seed)


def environment_for_trial(law: EnvironmentLaw, master_seed: int, trial: int, stream_tag: int = 0) -> Environment:
    """The environment used by annealed trial number ``trial``."""
    return Environment(law, master_seed, rng.derive_key(master_seed, rng.STREAM_ENV, stream_tag, trial))


def kernel_at(env: Environment, x) -> TransitionKernel:
    return env.kernel_at(x)


# ---------------------------------------------------------------------------
# one-dimensional speed oracle


class Transience(str, enum.Enum):
    RIGHT = "Right"
    OSCILLATING = "Oscillating"
    LEFT = "Left"


class Regime(str, enum.Enum):
    BALLISTIC_RIGHT = "BallisticRight"
    ZERO_SPEED = "ZeroSpeed"
    BALLISTIC_LEFT = "BallisticLeft"


@dataclass(frozen=True)
class SolomonReport:
    E_ln_rho: float
    E_rho: float
    E_rho_inv: float
    transience: Transience
    velocity: float
    regime: Regime

    def to_json(self) -> dict:
        return {
            "E_ln_rho": self.E_ln_rho,
            "E_rho": self.E_rho,
            "E_rho_inv": self.E_rho_inv,
            "transience": self.transience.value,
            "velocity": self.velocity,
            "regime": self.regime.value,
        }


def rho_support(law: EnvironmentLaw) -> list[tuple[float, float]]:
    """Atoms (probability, rho) of rho = w(+1)/w(-1) for laws with finite support."""
    if law.d != 1:
        raise LawError("rho moments are defined for one-dimensional laws")
    p = law.params
    if law.kind == "constant" or (law.kind == "perturbed_srw" and p[2] == 0.0):
        return [(1.0, _ratio(p[0], p[1]))]
    if law.kind == "two_point":
        atoms = [(p[4], _ratio(p[0], p[1])), (1 - p[4], _ratio(p[2], p[3]))]
        return [a for a in atoms if a[0] > 0]
    raise LawError(f"no closed-form rho moments for the {law.kind} law")


def _ratio(right: float, left: float) -> float:
    if left == 0.0:
        return math.inf
    return right / left


def solomon_classify(law: EnvironmentLaw, tol: float = 1e-12) -> SolomonReport:
    """Recurrence/transience and limiting speed of a 1D i.i.d. walk.

    ``rho = w(+1)/w(-1)``.  Transient to the right iff E ln rho > 0; speed
    (1 - E rho^-1)/(1 + E rho^-1) when E rho^-1 < 1, -(1 - E rho)/(1 + E rho)
    when E rho < 1, and zero otherwise.
    """
    atoms = rho_support(law)
    if any(r in (0.0, math.inf) for _, r in atoms):
        raise LawError("rho moments need both one-step weights positive")
    e_ln = math.fsum(q * math.log(r) for q, r in atoms)
    e_rho = math.fsum(q * r for q, r in atoms)
    e_inv = math.fsum(q / r for q, r in atoms)
    if e_ln > tol:
        transience = Transience.RIGHT
    elif e_ln < -tol:
        transience = Transience.LEFT
    else:
        transience = Transience.OSCILLATING
    if e_inv < 1:
        regime, v = Regime.BALLISTIC_RIGHT, (1 - e_inv) / (1 + e_inv)
    elif e_rho < 1:
        regime, v = Regime.BALLISTIC_LEFT, -(1 - e_rho) / (1 + e_rho)
    else:
        regime, v = Regime.ZERO_SPEED, 0.0
    return SolomonReport(e_ln, e_rho, e_inv, transience, v, regime)


class ExplicitEnvironment:
    """Environment given by a site -> kernel table with a default kernel elsewhere.

    Used by enumeration oracles and hand-built test instances; it offers the
    same ``kernels``/``kernel_at`` interface the solvers read.
    """

    def __init__(self, table: Mapping, default, d: int | None = None):
        default = np.asarray(default, dtype=np.float64)
        self.default = default
        self.table = {tuple(int(c) for c in k): np.asarray(v, dtype=np.float64) for k, v in table.items()}
        self._d = d if d is not None else default.size // 2
        self.law = None

    @property
    def d(self) -> int:
        return self._d

    def kernels(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.int64))
        out = np.tile(self.default, (len(pts), 1))
        if self.table:
            for i, p in enumerate(map(tuple, pts.tolist())):
                k = self.table.get(p)
                if k is not None:
                    out[i] = k
        return out

    def kernel_at(self, x) -> TransitionKernel:
        return TransitionKernel(tuple(float(v) for v in self.kernels(np.asarray(x)[None, :])[0]))
