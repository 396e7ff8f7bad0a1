"""Result records and their CSV / JSONL serialisation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .. import __version__
from ..stats import Estimate

CSV_COLUMNS = ("experiment", "quantity", "value", "ci_lo", "ci_hi", "exact", "trials", "seed")

# quantity anchor -> what the number is
ANCHORS = {
    "velocity": "limiting speed of the one-dimensional walk",
    "displacement-rate": "X_n.l / n after a fixed number of steps",
    "exit-part": "probability of leaving a region through one boundary part",
    "pbox-start": "annealed non-frontal exit probability from one start of the middle frontal part",
    "pbox-sup": "largest annealed non-frontal exit probability over evaluated starts",
    "backtrack-decay": "annealed probability of backtracking bL before advancing L",
    "decay-exponent": "fitted polynomial or stretched exponent of a decay curve",
    "slab-exit": "annealed probability of leaving the slab other than through its front",
    "rho-moment": "mean of rho^a over sampled environments",
    "criterion-value": "effective criterion product for one (L, a) cell",
    "schedule-parameter": "one value of the L-dependent parameter schedule",
    "audit-constant": "one quantity of the constant audit",
    "goodness-probability": "fraction of sampled environments with a good box",
    "goodness-chain": "union or Markov bound on the bad-box frequency",
    "coloring-class": "number of anchors in one coloring class",
    "quenched-tail": "fraction of environments with atypically small frontal exit probability",
    "factorial-bound": "factorial tail bound value",
    "binomial-tail": "exact binomial tail probability",
}


@dataclass
class ResultRecord:
    experiment: str
    quantity: str
    anchor: str
    value: float
    ci_lo: float
    ci_hi: float
    exact: bool
    trials: int
    seed: int
    config_digest: str = ""
    censored: int = 0
    wall_time: float = 0.0
    version: str = __version__
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.anchor not in ANCHORS:
            raise ValueError(f"undocumented anchor {self.anchor!r}")

    @classmethod
    def from_estimate(cls, experiment: str, quantity: str, anchor: str, est: Estimate, seed: int, **kw) -> "ResultRecord":
        return cls(experiment, quantity, anchor, est.value, est.lo, est.hi, est.exact, est.trials, seed, **kw)

    @classmethod
    def exact_value(cls, experiment: str, quantity: str, anchor: str, value: float, seed: int, **kw) -> "ResultRecord":
        return cls(experiment, quantity, anchor, float(value), float(value), float(value), True, 0, seed, **kw)

    def to_json(self) -> dict:
        return {k: _jsonable(v) for k, v in asdict(self).items()}

    @classmethod
    def from_json(cls, obj: dict) -> "ResultRecord":
        obj = dict(obj)
        for key in ("value", "ci_lo", "ci_hi"):
            obj[key] = _float(obj[key])
        return cls(**obj)


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _float(v) -> float:
    return float(v) if isinstance(v, str) else v


def write_jsonl(records: Iterable[ResultRecord], fp: TextIO) -> None:
    for r in records:
        fp.write(json.dumps(r.to_json(), sort_keys=True, default=_default) + "\n")


def read_jsonl(fp: TextIO) -> list[ResultRecord]:
    return [ResultRecord.from_json(json.loads(line)) for line in fp if line.strip()]


def write_csv(records: Iterable[ResultRecord], fp: TextIO) -> None:
    w = csv.writer(fp, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([r.experiment, r.quantity, repr(float(r.value)), repr(float(r.ci_lo)), repr(float(r.ci_hi)),
                    int(r.exact), r.trials, r.seed])


def export(records: list[ResultRecord], path: str | Path | None, fmt: str, fallback: TextIO | None = None) -> None:
    if not records:
        raise ValueError("nothing to export")
    writer = write_csv if fmt == "csv" else write_jsonl
    if path is None:
        writer(records, fallback)
        return
    with open(path, "w", newline="") as fh:
        writer(records, fh)


def _default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))
