"""Binary soft-margin SVM trained with Platt's SMO.

Labels are +1 (bonafide) and -1 (attack). Decision function::

    f(x) = sum_i dual_coef_i * K(sv_i, z(x)) + bias

where ``z`` is the per-dimension z-score fitted on the training set.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

STD_FLOOR = 1e-8
ALPHA_EPS = 1e-9
C_GRID = (0.1, 1.0, 10.0, 100.0)
GAMMA_MULTIPLIERS = (1.0, 0.25, 4.0)


class SvmError(ValueError):
    pass


@dataclass
class LabeledSet:
    vectors: np.ndarray
    labels: np.ndarray
    partition: str = "train"

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.float64).ravel()
        if len(self.vectors) != len(self.labels):
            raise SvmError("vectors and labels differ in length")
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise SvmError("labels must be +1 or -1")


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, v: np.ndarray) -> np.ndarray:
        return (np.asarray(v, dtype=np.float64) - self.mean) / self.std


def normalize_fit(train: LabeledSet | np.ndarray) -> NormStats:
    x = train.vectors if isinstance(train, LabeledSet) else np.atleast_2d(train)
    if len(x) == 0:
        raise SvmError("cannot fit normalization on an empty set")
    return NormStats(x.mean(axis=0), np.maximum(x.std(axis=0), STD_FLOOR))


def normalize_apply(stats: NormStats, v: np.ndarray) -> np.ndarray:
    return stats.apply(v)


def kernel_matrix(a: np.ndarray, b: np.ndarray, kernel: str, gamma: Optional[float]) -> np.ndarray:
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    dot = a @ b.T
    if kernel == "linear":
        return dot
    if kernel == "rbf":
        sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2 * dot
        return np.exp(-gamma * np.maximum(sq, 0.0))
    raise SvmError(f"unknown kernel {kernel!r}")


def default_gamma(z: np.ndarray) -> float:
    """1 / (dim * var) of the normalized training matrix."""
    var = float(np.var(z))
    return 1.0 / (z.shape[1] * (var if var > 0 else 1.0))


@dataclass
class SvmModel:
    kernel: str
    C: float
    bias: float
    norm: NormStats
    support_vectors: np.ndarray
    dual_coefs: np.ndarray
    gamma: Optional[float] = None
    info: dict = field(default_factory=dict)

    def decision(self, vectors: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        if x.shape[1] != self.support_vectors.shape[1]:
            raise SvmError(f"dimension mismatch: model expects {self.support_vectors.shape[1]}, "
                           f"got {x.shape[1]}")
        k = kernel_matrix(self.norm.apply(x), self.support_vectors, self.kernel, self.gamma)
        return k @ self.dual_coefs + self.bias

    def to_dict(self) -> dict:
        d = {"kernel": self.kernel, "C": self.C, "bias": self.bias,
             "norm_stats": {"mean": self.norm.mean.tolist(), "std": self.norm.std.tolist()},
             "support_vectors": self.support_vectors.tolist(),
             "dual_coefs": self.dual_coefs.tolist()}
        if self.gamma is not None:
            d["gamma"] = self.gamma
        info = {k: v for k, v in self.info.items() if k != "alpha"}
        if info:
            d["info"] = info
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModel":
        return cls(kernel=d["kernel"], C=float(d["C"]), bias=float(d["bias"]),
                   norm=NormStats(np.array(d["norm_stats"]["mean"], dtype=np.float64),
                                  np.array(d["norm_stats"]["std"], dtype=np.float64)),
                   support_vectors=np.array(d["support_vectors"], dtype=np.float64),
                   dual_coefs=np.array(d["dual_coefs"], dtype=np.float64),
                   gamma=d.get("gamma"), info=d.get("info", {}))

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "SvmModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def svm_score(model: SvmModel, v: np.ndarray) -> float:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise SvmError("svm_score takes a single vector")
    return float(model.decision(v[None, :])[0])


class _Smo:
    """Working state of one SMO run (error cache over a precomputed kernel)."""

    def __init__(self, K, y, C, tol, eps, rng, trace):
        self.K, self.y, self.C, self.tol, self.eps = K, y, C, tol, eps
        self.rng = rng
        n = len(y)
        self.alpha = np.zeros(n)
        self.b = 0.0
        self.f = np.zeros(n)  # decision value incl. bias
        self.trace = trace

    def objective(self) -> float:
        ay = self.alpha * self.y
        return float(self.alpha.sum() - 0.5 * ay @ self.K @ ay)

    def take_step(self, i1: int, i2: int) -> bool:
        if i1 == i2:
            return False
        y, K, C = self.y, self.K, self.C
        a1, a2 = self.alpha[i1], self.alpha[i2]
        y1, y2 = y[i1], y[i2]
        e1, e2 = self.f[i1] - y1, self.f[i2] - y2
        s = y1 * y2
        if s < 0:
            lo, hi = max(0.0, a2 - a1), min(C, C + a2 - a1)
        else:
            lo, hi = max(0.0, a1 + a2 - C), min(C, a1 + a2)
        if hi - lo <= 0:
            return False
        k11, k12, k22 = K[i1, i1], K[i1, i2], K[i2, i2]
        eta = k11 + k22 - 2 * k12
        lin = y2 * (e1 - e2)
        if eta > 0:
            a2n = min(max(a2 + lin / eta, lo), hi)
        else:
            # objective gain along the constraint line: lin*d - eta*d^2/2
            gain = [lin * (t - a2) - 0.5 * eta * (t - a2) ** 2 for t in (lo, hi)]
            if gain[0] > gain[1] + self.eps:
                a2n = lo
            elif gain[1] > gain[0] + self.eps:
                a2n = hi
            else:
                return False
        if a2n < ALPHA_EPS * C:
            a2n = 0.0
        elif a2n > C * (1 - ALPHA_EPS):
            a2n = C
        if abs(a2n - a2) < self.eps * (a2n + a2 + self.eps):
            return False
        a1n = a1 + s * (a2 - a2n)
        if a1n < ALPHA_EPS * C:
            a1n = 0.0
        elif a1n > C * (1 - ALPHA_EPS):
            a1n = C

        d1, d2 = y1 * (a1n - a1), y2 * (a2n - a2)
        b1 = self.b - e1 - d1 * k11 - d2 * k12
        b2 = self.b - e2 - d1 * k12 - d2 * k22
        if 0 < a1n < C:
            bn = b1
        elif 0 < a2n < C:
            bn = b2
        else:
            bn = 0.5 * (b1 + b2)
        self.f += d1 * K[i1] + d2 * K[i2] + (bn - self.b)
        self.b = bn
        self.alpha[i1], self.alpha[i2] = a1n, a2n
        if self.trace is not None:
            self.trace.append((self.objective(), float(self.alpha @ self.y)))
        return True

    def examine(self, i2: int) -> bool:
        y2, a2 = self.y[i2], self.alpha[i2]
        e2 = self.f[i2] - y2
        r2 = e2 * y2
        if not ((r2 < -self.tol and a2 < self.C) or (r2 > self.tol and a2 > 0)):
            return False
        n = len(self.y)
        nonbound = np.flatnonzero((self.alpha > 0) & (self.alpha < self.C))
        if len(nonbound) > 1:
            err = self.f[nonbound] - self.y[nonbound]
            i1 = int(nonbound[np.argmax(np.abs(err - e2))])
            if self.take_step(i1, i2):
                return True
        if len(nonbound):
            start = int(self.rng.integers(len(nonbound)))
            for i1 in np.roll(nonbound, -start):
                if self.take_step(int(i1), i2):
                    return True
        start = int(self.rng.integers(n))
        for i1 in np.roll(np.arange(n), -start):
            if self.take_step(int(i1), i2):
                return True
        return False


def svm_train(data: LabeledSet, kernel: str = "rbf", C: float = 1.0,
              gamma: Optional[float] = None, tol: float = 1e-3, max_passes: int = 1000,
              seed: int = 0, eps: float = 1e-10, trace: Optional[list] = None) -> SvmModel:
    """Fit normalization and a soft-margin SVM on ``data``.

    ``max_passes`` bounds the number of outer SMO sweeps; ``info["converged"]``
    reports whether the KKT conditions were met within ``tol`` before that.
    If ``trace`` is a list, ``(dual objective, sum alpha*y)`` is appended after
    every successful step.
    """
    y = data.labels
    if len(np.unique(y)) < 2:
        raise SvmError("training data must contain both classes")
    if not C > 0:
        raise SvmError("C must be > 0")
    norm = normalize_fit(data)
    z = norm.apply(data.vectors)
    if kernel == "rbf" and gamma is None:
        gamma = default_gamma(z)
    if kernel == "rbf" and not gamma > 0:
        raise SvmError("gamma must be > 0")
    K = kernel_matrix(z, z, kernel, gamma)
    smo = _Smo(K, y, C, tol, eps, np.random.default_rng(seed), trace)

    passes, changed, examine_all = 0, 0, True
    converged = False
    while passes < max_passes:
        changed = 0
        if examine_all:
            for i in range(len(y)):
                changed += smo.examine(i)
        else:
            for i in np.flatnonzero((smo.alpha > 0) & (smo.alpha < C)):
                changed += smo.examine(int(i))
        passes += 1
        if examine_all and changed == 0:
            converged = True
            break
        if examine_all:
            examine_all = False
        elif changed == 0:
            examine_all = True

    sv = smo.alpha > ALPHA_EPS
    if not sv.any():
        sv[:] = True  # degenerate: keep everything so the model stays well-formed
    return SvmModel(kernel=kernel, C=float(C), bias=float(smo.b), norm=norm,
                    support_vectors=z[sv], dual_coefs=(smo.alpha * y)[sv],
                    gamma=None if kernel == "linear" else float(gamma),
                    info={"converged": converged, "passes": passes,
                          "alpha": smo.alpha.tolist()})


def kkt_violations(model: SvmModel, data: LabeledSet, tol: float = 1e-3) -> List[int]:
    """Indices whose multiplier/margin pair breaks the KKT conditions beyond ``tol``."""
    alpha = np.asarray(model.info["alpha"])
    yf = data.labels * model.decision(data.vectors)
    C = model.C
    bad = []
    for i, (a, m) in enumerate(zip(alpha, yf)):
        if a == 0 and m < 1 - tol:
            bad.append(i)
        elif 0 < a < C and abs(m - 1) > tol:
            bad.append(i)
        elif a == C and m > 1 + tol:
            bad.append(i)
    return bad


def hyperparameter_grid(z: np.ndarray, kernel: str) -> List[Tuple[float, Optional[float]]]:
    if kernel == "linear":
        return [(c, None) for c in C_GRID]
    g0 = default_gamma(z)
    return [(c, g0 * m) for c in C_GRID for m in GAMMA_MULTIPLIERS]
