"""Weighted covariance and overlap-corrected Gaussian mutual information.

For jointly Gaussian X, Y::

    I(X;Y) = 1/2 log2(|Sx| |Sy| / |Sxy|) * (1 - omega_avg / 2)

Determinants are taken in log space through a Cholesky factor so large
feature dimensions do not overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .modal import Corpus, UsageError

MODALITY_WEIGHTS = {"S": 0.2, "M": 0.8, "V": 1.0}
REG_SCALE = 1e-8
PIVOT_FLOOR = 1e-12


class NumericalError(ArithmeticError):
    pass


@dataclass
class ModalityFeatureSet:
    modality: str
    vectors: np.ndarray  # (n, d)
    weights: np.ndarray | None = None  # per-vector, e.g. from overlap_weight_plan
    modality_weight: float | None = None

    def __post_init__(self):
        if self.modality not in MODALITY_WEIGHTS:
            raise ValueError(f"unknown modality {self.modality!r}")
        self.vectors = _as_matrix(self.vectors)
        if self.weights is None:
            self.weights = np.ones(len(self.vectors))
        self.weights = np.asarray(self.weights, dtype=float)
        if self.modality_weight is None:
            self.modality_weight = MODALITY_WEIGHTS[self.modality]
        if self.modality_weight <= 0:
            raise ValueError("modality weight must be positive")

    def scaled(self) -> np.ndarray:
        """Vectors scaled by sqrt(modality weight), so covariance scales by the weight."""
        return self.vectors * math.sqrt(self.modality_weight)


@dataclass(frozen=True)
class MIResult:
    i_bits: float
    raw_bits: float
    omega_avg: float
    logdet_x: float
    logdet_y: float
    logdet_xy: float
    epsilon: float = 0.0  # ridge added before factorization; 0 when none was needed

    @property
    def det_x(self) -> float:
        return math.exp(self.logdet_x)

    @property
    def det_y(self) -> float:
        return math.exp(self.logdet_y)

    @property
    def det_xy(self) -> float:
        return math.exp(self.logdet_xy)

    def to_dict(self) -> dict:
        return {
            "i_bits": self.i_bits,
            "raw_bits": self.raw_bits,
            "omega_avg": self.omega_avg,
            "logdet_x": self.logdet_x,
            "logdet_y": self.logdet_y,
            "logdet_xy": self.logdet_xy,
            "epsilon": self.epsilon,
        }


def _as_matrix(vectors) -> np.ndarray:
    try:
        x = np.asarray(vectors, dtype=float)
    except ValueError as exc:  # ragged input
        raise ValueError(f"feature dimension mismatch: {exc}") from None
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError(f"expected an (n, d) matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite feature values")
    return x


def weighted_covariance(vectors, weights=None) -> np.ndarray:
    """sum_i w_i (x_i - mu)(x_i - mu)^T / sum_i w_i with the weighted mean mu."""
    x = _as_matrix(vectors)
    w = np.ones(len(x)) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (len(x),):
        raise ValueError(f"{len(w)} weights for {len(x)} vectors")
    if np.any(w < 0):
        raise ValueError("negative weight")
    if np.count_nonzero(w) < 2:
        raise ValueError("need at least two vectors with positive weight")
    w = w / w.sum()
    mu = w @ x
    xc = x - mu
    cov = (xc * w[:, None]).T @ xc
    return (cov + cov.T) / 2


def _logdet(mat: np.ndarray) -> float:
    L = np.linalg.cholesky(mat)
    pivots = np.diag(L) ** 2
    # A pivot this small means the matrix is singular up to rounding.
    if pivots.min() <= PIVOT_FLOOR * max(float(np.trace(mat)) / len(mat), np.finfo(float).tiny):
        raise np.linalg.LinAlgError("numerically singular")
    return float(np.sum(np.log(pivots)))


def _factor_all(mats: Sequence[np.ndarray], eps: float) -> list[float]:
    return [_logdet(m + eps * np.eye(len(m))) if eps else _logdet(m) for m in mats]


def gaussian_mi(sx, sy, sxy, omega_avg: float = 0.0) -> MIResult:
    sx, sy, sxy = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (sx, sy, sxy))
    if not 0.0 <= omega_avg <= 1.0:
        raise ValueError(f"omega_avg {omega_avg} outside [0, 1]")
    dx, dy = len(sx), len(sy)
    if sxy.shape != (dx + dy, dx + dy):
        raise ValueError(f"joint covariance shape {sxy.shape}, expected {(dx + dy, dx + dy)}")
    scale = max(1.0, float(np.max(np.abs(sxy))))
    if (not np.allclose(sxy[:dx, :dx], sx, rtol=0, atol=1e-9 * scale)
            or not np.allclose(sxy[dx:, dx:], sy, rtol=0, atol=1e-9 * scale)):
        raise ValueError("joint covariance diagonal blocks do not match the marginals")

    eps = 0.0
    try:
        logs = _factor_all((sx, sy, sxy), 0.0)
    except np.linalg.LinAlgError:
        trace = float(np.trace(sxy))
        eps = REG_SCALE * trace / (dx + dy) if trace > 0 else REG_SCALE
        try:
            logs = _factor_all((sx, sy, sxy), eps)
        except np.linalg.LinAlgError:
            eig = np.linalg.eigvalsh(sxy)
            raise NumericalError(
                f"joint covariance not positive definite after ridge {eps:.3g}: "
                f"eigenvalues in [{eig.min():.3g}, {eig.max():.3g}]") from None
    ldx, ldy, ldxy = logs
    raw = max(0.0, 0.5 * (ldx + ldy - ldxy) / math.log(2))
    return MIResult(raw * (1.0 - omega_avg / 2.0), raw, omega_avg, ldx, ldy, ldxy, eps)


def mi_from_samples(x, y, weights=None, omega_avg: float = 0.0) -> MIResult:
    """MI between paired rows of x and y using the weighted joint covariance."""
    x, y = _as_matrix(x), _as_matrix(y)
    if len(x) != len(y):
        raise ValueError(f"{len(x)} x rows paired with {len(y)} y rows")
    joint = weighted_covariance(np.hstack([x, y]), weights)
    dx = x.shape[1]
    return gaussian_mi(joint[:dx, :dx], joint[dx:, dx:], joint, omega_avg)


def mi_between(a: ModalityFeatureSet, b: ModalityFeatureSet, omega_avg: float = 0.0) -> MIResult:
    if len(a.vectors) != len(b.vectors):
        raise ValueError("feature sets are not paired")
    weights = np.minimum(a.weights, b.weights)
    return mi_from_samples(a.scaled(), b.scaled(), weights, omega_avg)


def omega_average(pairs: Iterable[tuple[tuple[str, str], float]]) -> float:
    """Mean omega over overlapping scene pairs; 0 when no pair overlaps."""
    values = [omega for _, omega in pairs if omega > 0]
    return float(np.mean(values)) if values else 0.0


@dataclass(frozen=True)
class OrderingResult:
    i_sv: MIResult
    i_sm: MIResult

    @property
    def ordered(self) -> bool:
        return self.i_sv.i_bits > self.i_sm.i_bits

    def to_dict(self) -> dict:
        return {"i_sv": self.i_sv.to_dict(), "i_sm": self.i_sm.to_dict(), "ordered": self.ordered}


def check_ordering(
    s_feats: Mapping[str, np.ndarray],
    m_feats: Mapping[str, Sequence[float]],
    v_feats: Mapping[str, Sequence[float]],
    omega_avg: float = 0.0,
    weights: Mapping[str, float] | None = None,
) -> OrderingResult:
    """Compare I(S;V) and I(S;M) over scenes; S rows are averaged per scene first."""
    scenes = sorted(v_feats)
    missing = [(sid, mod) for sid in scenes for mod, src in (("S", s_feats), ("M", m_feats))
               if sid not in src]
    if missing:
        sid, mod = missing[0]
        raise UsageError(f"scene {sid} has no {mod} features ({len(missing)} missing in total)")
    s = np.array([np.mean(_as_matrix(s_feats[sid]), axis=0) for sid in scenes])
    m = np.array([np.asarray(m_feats[sid], dtype=float) for sid in scenes])
    v = np.array([np.asarray(v_feats[sid], dtype=float) for sid in scenes])
    w = None if weights is None else np.array([weights.get(sid, 1.0) for sid in scenes])
    sets = {
        "S": ModalityFeatureSet("S", s, w),
        "M": ModalityFeatureSet("M", m, w),
        "V": ModalityFeatureSet("V", v, w),
    }
    return OrderingResult(mi_between(sets["S"], sets["V"], omega_avg),
                          mi_between(sets["S"], sets["M"], omega_avg))


def corpus_features(corpus: Corpus):
    """Extract (S, M, V) feature dicts from a corpus; raises when any are absent."""
    s_feats: dict[str, list] = {}
    for x in corpus.statics:
        if x.frame.feature is None:
            raise UsageError(f"static {x.source_ordinal} of {x.scene_id} has no feature vector")
        s_feats.setdefault(x.scene_id, []).append(x.frame.feature)
    m_feats = {}
    for m in corpus.multis:
        if m.feature is None:
            raise UsageError(f"multi-image sample of {m.scene_id} has no feature vector")
        m_feats[m.scene_id] = m.feature
    v_feats = {}
    for v in corpus.videos:
        if v.feature is None:
            raise UsageError(f"video {v.scene_id} has no feature vector")
        v_feats[v.scene_id] = v.feature
    return {k: np.asarray(x) for k, x in s_feats.items()}, m_feats, v_feats
