"""Error rates for presentation attack detection.

Scores are "higher = more bonafide"; a sample is accepted iff score >= threshold.
All rates are percentages. APCER is pooled over attack species.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Iterable, List, Sequence, Tuple

import numpy as np

BONAFIDE = "bonafide"
ATTACK = "attack"

REPORT_COLUMNS = ["protocol", "occlusion", "extractor", "threshold", "far", "frr", "hter",
                  "apcer", "bpcer", "acer", "n_bonafide", "n_attack", "unoccluded_fallback"]


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreEntry:
    sample_id: str
    score: float
    label: str
    partition: str = "test"


def _split(scores) -> Tuple[np.ndarray, np.ndarray]:
    """Accept ScoreEntry iterables or a ``(scores, is_bonafide)`` pair."""
    if isinstance(scores, tuple) and len(scores) == 2:
        s = np.asarray(scores[0], dtype=np.float64)
        bona = np.asarray(scores[1], dtype=bool)
    else:
        entries = list(scores)
        s = np.array([e.score for e in entries], dtype=np.float64)
        bona = np.array([e.label == BONAFIDE for e in entries], dtype=bool)
    if s.size == 0:
        raise MetricsError("empty score set")
    if not np.all(np.isfinite(s)):
        raise MetricsError("non-finite score")
    gen, imp = s[bona], s[~bona]
    if gen.size == 0 or imp.size == 0:
        raise MetricsError("both bonafide and attack samples are required")
    return gen, imp


def far_frr(scores, threshold: float) -> Tuple[float, float]:
    gen, imp = _split(scores)
    far = 100.0 * np.count_nonzero(imp >= threshold) / imp.size
    frr = 100.0 * np.count_nonzero(gen < threshold) / gen.size
    return float(far), float(frr)


def candidate_thresholds(scores) -> np.ndarray:
    """Midpoints between adjacent unique scores plus -inf / +inf sentinels."""
    gen, imp = _split(scores)
    u = np.unique(np.concatenate([gen, imp]))
    mids = (u[:-1] + u[1:]) / 2
    return np.concatenate([[-math.inf], mids, [math.inf]])


def eer_threshold(dev) -> Tuple[float, float]:
    """Threshold minimizing |FAR - FRR| (smallest on ties) and the EER there."""
    gen, imp = _split(dev)
    cands = candidate_thresholds((np.concatenate([gen, imp]),
                                  np.r_[np.ones(gen.size, bool), np.zeros(imp.size, bool)]))
    gs, is_ = np.sort(gen), np.sort(imp)
    far = 100.0 * (imp.size - np.searchsorted(is_, cands, side="left")) / imp.size
    frr = 100.0 * np.searchsorted(gs, cands, side="left") / gen.size
    gap = np.abs(far - frr)
    k = int(np.flatnonzero(gap == gap.min())[0])
    return float(cands[k]), float((far[k] + frr[k]) / 2)


def hter(far: float, frr: float) -> float:
    return (far + frr) / 2


def acer(apcer: float, bpcer: float) -> float:
    return (apcer + bpcer) / 2


def apcer_bpcer_acer(test, threshold: float) -> Tuple[float, float, float]:
    apcer, bpcer = far_frr(test, threshold)
    return apcer, bpcer, acer(apcer, bpcer)


@dataclass
class MetricsReport:
    threshold: float
    far: float
    frr: float
    hter: float
    apcer: float
    bpcer: float
    acer: float
    n_bonafide: int
    n_attack: int
    protocol: str = "grandtest"
    occlusion: str = "none"
    extractor: str = ""
    unoccluded_fallback: int = 0
    dev_eer: float = float("nan")

    def row(self) -> dict:
        d = asdict(self)
        for k in ("far", "frr", "hter", "apcer", "bpcer", "acer"):
            d[k] = format_rate(d[k])
        d["threshold"] = format(self.threshold, ".9g")
        return {k: d[k] for k in REPORT_COLUMNS}


def evaluate(dev, test, **meta) -> MetricsReport:
    tau, eer = eer_threshold(dev)
    far, frr = far_frr(test, tau)
    gen, imp = _split(test)
    return MetricsReport(threshold=tau, far=far, frr=frr, hter=hter(far, frr),
                         apcer=far, bpcer=frr, acer=acer(far, frr),
                         n_bonafide=int(gen.size), n_attack=int(imp.size), dev_eer=eer, **meta)


def format_rate(x: float) -> str:
    return str(Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN))


def write_report_csv(path: str | os.PathLike, reports: Iterable[MetricsReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        wr.writeheader()
        for r in reports:
            wr.writerow(r.row())


def read_report_csv(path: str | os.PathLike) -> List[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def det_points(scores) -> List[Tuple[float, float, float]]:
    """Raw (threshold, FAR, FRR) triples over the candidate set."""
    return [(float(t), *far_frr(scores, t)) for t in candidate_thresholds(scores)]
