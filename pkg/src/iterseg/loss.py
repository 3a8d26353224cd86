"""
Surface-weighted soft FP/FN segmentation loss plus label and completeness terms.

Every function returns analytic gradients with respect to the predictions
so the network can backpropagate without an autodiff framework.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distance import distance_to_surface

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 8.0
    sigma: float = 6.0
    lambda_min: float = 0.1
    n_max: int = 100_000

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if not 0 < self.lambda_min <= 1:
            raise ValueError("lambda_min must be in (0, 1]")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")


@dataclass(frozen=True)
class Targets:
    """Training targets for one patch.

    ``t`` is the binary target instance, ``label`` its anatomical label (0 for
    an empty patch), ``complete`` whether it is fully visible, ``weights``
    the surface weight map.
    """

    t: np.ndarray
    label: int
    complete: int
    weights: np.ndarray


@dataclass(frozen=True)
class LossBreakdown:
    fp_soft: float
    fn_soft: float
    lam: float
    seg_loss: float
    label_loss: float
    completeness_loss: float
    total: float


@dataclass(frozen=True)
class LossGradients:
    """d(total)/d(prediction) for each prediction component."""

    S: np.ndarray
    L: float
    C: float


def weight_map(d: np.ndarray, cfg: LossConfig = LossConfig()) -> np.ndarray:
    """``gamma * exp(-d^2 / sigma^2) + 1``; infinite distances give 1."""
    d = np.asarray(d, dtype=np.float64)
    return cfg.gamma * np.exp(-(d * d) / cfg.sigma**2) + 1.0


def make_targets(t: np.ndarray, label: int, complete: bool, spacing=(1.0, 1.0, 1.0),
                 cfg: LossConfig = LossConfig()) -> Targets:
    t = np.asarray(t, dtype=bool)
    w = weight_map(distance_to_surface(t, spacing), cfg)
    return Targets(t.astype(np.float64), int(label), int(bool(complete)), w)


def soft_counts(p, t, w):
    """Soft false positives/negatives and their gradients with respect to ``p``.

    Returns ``(fp, fn, dfp_dp, dfn_dp)``.
    """
    p, t, w = (np.asarray(a, dtype=np.float64) for a in (p, t, w))
    if not (p.shape == t.shape == w.shape):
        raise ValueError(f"shape mismatch: p {p.shape}, t {t.shape}, w {w.shape}")
    dfp = w * (1.0 - t)
    dfn = -w * t
    fp = float(np.sum(dfp * p))
    fn = float(np.sum(w * t * (1.0 - p)))
    return fp, fn, dfp, dfn


def lambda_schedule(n: int, cfg: LossConfig = LossConfig()) -> float:
    """Sigmoid ramp of the false-positive weight from ``lambda_min`` towards 1."""
    if n < 0:
        raise ValueError("iteration count must be non-negative")
    theta = (n - cfg.n_max / 2) / (cfg.n_max / 10)
    return cfg.lambda_min + (1.0 - cfg.lambda_min) / (1.0 + np.exp(-theta))


def label_loss(p_label: float, t_label: float) -> tuple[float, float]:
    diff = float(p_label) - float(t_label)
    return abs(diff), float(np.sign(diff))


def completeness_loss(p_c: float, t_c: float) -> tuple[float, float]:
    """Binary cross entropy on the clamped probability and its derivative."""
    p = float(np.clip(p_c, PROB_EPS, 1.0 - PROB_EPS))
    loss = -t_c * np.log(p) - (1.0 - t_c) * np.log(1.0 - p)
    if p_c <= PROB_EPS or p_c >= 1.0 - PROB_EPS:
        grad = 0.0
    else:
        grad = (p - t_c) / (p * (1.0 - p))
    return float(loss), float(grad)


def total_loss(S, L: float, C: float, targets: Targets, n: int,
               cfg: LossConfig = LossConfig()) -> tuple[LossBreakdown, LossGradients]:
    """Unweighted sum of segmentation, labeling and completeness errors.

    ``S`` is the probability patch, ``L`` the (non-negative) label output and
    ``C`` the completeness probability.
    """
    fp, fn, dfp, dfn = soft_counts(S, targets.t, targets.weights)
    lam = lambda_schedule(n, cfg)
    seg = lam * fp + fn
    l_loss, dl = label_loss(L, targets.label)
    c_loss, dc = completeness_loss(C, targets.complete)
    total = seg + l_loss + c_loss
    breakdown = LossBreakdown(fp, fn, lam, seg, l_loss, c_loss, total)
    return breakdown, LossGradients(lam * dfp + dfn, dl, dc)
