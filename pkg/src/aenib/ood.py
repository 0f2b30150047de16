"""Score functions over model outputs and latents, plus detection metrics.

Scores are oriented so that higher means more in-distribution. The detection
metrics treat in-distribution as the positive class.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import UnsupportedConfigurationError
from .latent import LatentPair, nuisance_log_likelihood
from .losses import EPS_P

__all__ = ["ScoreKind", "msp_score", "dirichlet_score", "combined_score",
           "score_samples", "DetectionResult", "detection_metrics",
           "auroc_exact", "auroc_threshold_sweep"]

DIRICHLET_ALPHA_DEFAULT = 0.05


class ScoreKind(str, Enum):
    MSP = "msp"
    DIRICHLET = "dirichlet"
    NUISANCE = "nuisance"
    COMBINED = "combined"


def _check_probs(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    rows = probs.sum(axis=-1)
    if np.any(probs < -1e-9) or not np.all(np.isfinite(probs)):
        raise ValueError("malformed probability distribution")
    if np.any(np.abs(rows - 1.0) > 1e-6):
        raise ValueError("probability rows must sum to 1 within 1e-6")
    return probs


def msp_score(class_probs) -> np.ndarray | float:
    """Maximum softmax probability max_y p(y|x)."""
    probs = _check_probs(class_probs)
    out = probs.max(axis=-1)
    return float(out) if out.ndim == 0 else out


def dirichlet_score(class_probs, alpha: float = DIRICHLET_ALPHA_DEFAULT) -> np.ndarray | float:
    """Symmetric-Dirichlet log-likelihood (alpha - 1) sum_i log y_i, normalizer
    dropped. Probabilities are clamped at 1e-12 before the log; with alpha < 1
    peaked predictions score higher than diffuse ones."""
    if not 0 < alpha < 1:
        raise ValueError("dirichlet alpha must lie in (0, 1)")
    probs = _check_probs(class_probs)
    out = (alpha - 1.0) * np.log(np.clip(probs, EPS_P, None)).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def combined_score(class_probs, z_n, alpha: float = DIRICHLET_ALPHA_DEFAULT
                   ) -> np.ndarray | float:
    """Dirichlet score plus the nuisance log-likelihood, as an unweighted sum.

    Requires a dense nuisance payload; a vector-quantized nuisance has no
    Gaussian likelihood and is rejected.
    """
    if isinstance(z_n, LatentPair):
        if z_n.is_vq:
            raise UnsupportedConfigurationError(
                "combined score needs a dense nuisance vector; the VQ path has "
                "no Gaussian nuisance likelihood")
        z_n = z_n.z_n.data
    return dirichlet_score(class_probs, alpha) + nuisance_log_likelihood(z_n)


def score_samples(kind: ScoreKind, class_probs, z_n=None,
                  alpha: float = DIRICHLET_ALPHA_DEFAULT) -> np.ndarray:
    kind = ScoreKind(kind)
    if kind is ScoreKind.MSP:
        return np.atleast_1d(msp_score(class_probs))
    if kind is ScoreKind.DIRICHLET:
        return np.atleast_1d(dirichlet_score(class_probs, alpha))
    if kind is ScoreKind.NUISANCE:
        if z_n is None:
            raise ValueError("nuisance score needs z_n")
        return np.atleast_1d(nuisance_log_likelihood(z_n))
    if z_n is None:
        raise ValueError("combined score needs z_n")
    return np.atleast_1d(combined_score(class_probs, z_n, alpha))


@dataclass
class DetectionResult:
    auroc: float
    aupr: float
    fpr_at_95tpr: float
    n_in: int
    n_out: int

    def __post_init__(self):
        for name in ("auroc", "aupr", "fpr_at_95tpr"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.n_in <= 0 or self.n_out <= 0:
            raise ValueError("sample counts must be positive")

    def as_dict(self) -> dict:
        return {"auroc": self.auroc, "aupr": self.aupr,
                "fpr_at_95tpr": self.fpr_at_95tpr,
                "n_in": self.n_in, "n_out": self.n_out}


def auroc_exact(scores_in, scores_out) -> float:
    """P(score_in > score_out) + 0.5 P(tie), via the rank-sum statistic with
    average ranks (identical to exhaustive pair counting)."""
    s_in = np.asarray(scores_in, dtype=np.float64)
    s_out = np.asarray(scores_out, dtype=np.float64)
    n_in, n_out = s_in.size, s_out.size
    if n_in == 0 or n_out == 0:
        raise ValueError("both score lists must be nonempty")
    allscores = np.concatenate([s_in, s_out])
    order = np.argsort(allscores, kind="mergesort")
    ranks = np.empty(allscores.size, dtype=np.float64)
    sorted_scores = allscores[order]
    i = 0
    while i < sorted_scores.size:
        j = i
        while j + 1 < sorted_scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    rank_sum_in = ranks[:n_in].sum()
    u = rank_sum_in - n_in * (n_in + 1) / 2.0
    return float(u / (n_in * n_out))


def _roc_points(s_in: np.ndarray, s_out: np.ndarray):
    """ROC points (fpr, tpr) at every distinct threshold, ties grouped, plus
    the (0,0) origin, sweeping thresholds from high to low."""
    thresholds = np.unique(np.concatenate([s_in, s_out]))[::-1]
    tpr = [0.0]
    fpr = [0.0]
    for t in thresholds:
        tpr.append(float(np.mean(s_in >= t)))
        fpr.append(float(np.mean(s_out >= t)))
    return np.array(fpr), np.array(tpr)


def auroc_threshold_sweep(scores_in, scores_out) -> float:
    """AUROC by trapezoidal integration of the threshold-sweep ROC curve."""
    s_in = np.asarray(scores_in, dtype=np.float64)
    s_out = np.asarray(scores_out, dtype=np.float64)
    fpr, tpr = _roc_points(s_in, s_out)
    return float(np.trapezoid(tpr, fpr))


def _average_precision(s_in: np.ndarray, s_out: np.ndarray) -> float:
    """Step-wise average precision with in-distribution as the positive class."""
    thresholds = np.unique(np.concatenate([s_in, s_out]))[::-1]
    n_in = s_in.size
    ap = 0.0
    recall_prev = 0.0
    for t in thresholds:
        tp = int(np.sum(s_in >= t))
        fp = int(np.sum(s_out >= t))
        recall = tp / n_in
        precision = tp / (tp + fp) if tp + fp else 1.0
        ap += (recall - recall_prev) * precision
        recall_prev = recall
    return float(ap)


def fpr_at_tpr(scores_in, scores_out, tpr_target: float = 0.95) -> float:
    """FPR at the largest threshold whose TPR reaches the target (step rule,
    no interpolation): the threshold is the ceil(target * n_in)-th largest
    in-distribution score."""
    s_in = np.sort(np.asarray(scores_in, dtype=np.float64))[::-1]
    s_out = np.asarray(scores_out, dtype=np.float64)
    k = int(np.ceil(tpr_target * s_in.size))
    k = min(max(k, 1), s_in.size)
    threshold = s_in[k - 1]
    return float(np.mean(s_out >= threshold))


def detection_metrics(scores_in, scores_out) -> DetectionResult:
    """AUROC (exact pairwise), AUPR (in-distribution positive), and FPR@95TPR."""
    s_in = np.asarray(scores_in, dtype=np.float64)
    s_out = np.asarray(scores_out, dtype=np.float64)
    if s_in.size == 0 or s_out.size == 0:
        raise ValueError("both score lists must be nonempty")
    return DetectionResult(
        auroc=auroc_exact(s_in, s_out),
        aupr=_average_precision(s_in, s_out),
        fpr_at_95tpr=fpr_at_tpr(s_in, s_out),
        n_in=int(s_in.size),
        n_out=int(s_out.size),
    )
