"""Occupancy fields, feature gating and masked focal losses with analytic gradients.

The convolutional blocks that produce occupancy logits are outside this
package; everything here starts from logits or probabilities supplied by the
caller.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .labels import FREE, OCCUPIED, UNKNOWN, OccupancyLabelGrid

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.25
    gamma: float = 2.0
    lam: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.gamma < 0.0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")


class FocalLossResult(NamedTuple):
    loss: float
    grad: np.ndarray
    num_known: int

    @property
    def all_unknown(self) -> bool:
        return self.num_known == 0


def sigmoid_field(logits) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    # exp of a non-positive argument only, so nothing overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid_backward(occ, grad_out) -> np.ndarray:
    occ = np.asarray(occ, dtype=np.float64)
    return np.asarray(grad_out) * occ * (1.0 - occ)


def _broadcast_occ(features: np.ndarray, occ: np.ndarray) -> np.ndarray:
    if occ.ndim == features.ndim and occ.shape[-1] == 1:
        occ = occ[..., 0]
    if occ.shape != features.shape[:-1]:
        raise ValueError(f"occupancy shape {occ.shape} does not match feature grid {features.shape[:-1]}")
    return occ


def gate_features(features, occ) -> np.ndarray:
    """Hadamard gating ``out[..., c] = occ[...] * features[..., c]``.

    ``features`` has a trailing channel axis; ``occ`` has the grid shape,
    optionally with a trailing singleton axis.
    """
    f = np.asarray(features, dtype=np.float64)
    o = _broadcast_occ(f, np.asarray(occ, dtype=np.float64))
    return o[..., None] * f


def gate_features_backward(features, occ, grad_out):
    """Gradients of a scalar w.r.t. ``features`` and ``occ`` given d(scalar)/d(out)."""
    f = np.asarray(features, dtype=np.float64)
    o = _broadcast_occ(f, np.asarray(occ, dtype=np.float64))
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != f.shape:
        raise ValueError(f"grad_out shape {g.shape} does not match features {f.shape}")
    grad_occ = np.sum(g * f, axis=-1)
    if np.ndim(occ) == f.ndim:
        grad_occ = grad_occ[..., None]
    return o[..., None] * g, grad_occ


def focal_loss_masked(pred, label, cfg: LossConfig = LossConfig()) -> FocalLossResult:
    """Mean focal loss over known cells, with its gradient w.r.t. ``pred``.

    ``label`` is an OccupancyLabelGrid or an array in {-1, 0, 1} of the same
    shape as ``pred`` (a trailing singleton axis on ``pred`` is accepted).
    Predictions are clamped to ``[1e-7, 1 - 1e-7]``; the gradient is zero
    where the clamp is active and at every unknown cell.
    """
    p_in = np.asarray(pred, dtype=np.float64)
    lab = label.values if isinstance(label, OccupancyLabelGrid) else np.asarray(label)
    p = p_in[..., 0] if p_in.ndim == lab.ndim + 1 and p_in.shape[-1] == 1 else p_in
    if p.shape != lab.shape:
        raise ValueError(f"prediction shape {p_in.shape} does not match label shape {lab.shape}")

    pos = lab == OCCUPIED
    neg = lab == FREE
    n = int(np.count_nonzero(pos) + np.count_nonzero(neg))
    grad = np.zeros_like(p)
    if n == 0:
        return FocalLossResult(0.0, grad.reshape(p_in.shape), 0)

    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    active = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    a, g = cfg.alpha, cfg.gamma

    pp = pc[pos]
    q = 1.0 - pp
    loss_pos = a * q ** g * -np.log(pp)
    grad_pos = a * (g * q ** (g - 1.0) * np.log(pp) - q ** g / pp) if g != 0 else -a / pp

    pn = pc[neg]
    qn = 1.0 - pn
    loss_neg = (1.0 - a) * pn ** g * -np.log(qn)
    grad_neg = (1.0 - a) * (g * pn ** (g - 1.0) * -np.log(qn) + pn ** g / qn) if g != 0 else (1.0 - a) / qn

    # fixed-order summation keeps the result independent of threading
    total = float(np.sum(loss_pos, dtype=np.float64) + np.sum(loss_neg, dtype=np.float64))
    grad[pos] = grad_pos / n
    grad[neg] = grad_neg / n
    grad[~active] = 0.0
    grad[lab == UNKNOWN] = 0.0
    return FocalLossResult(total / n, grad.reshape(p_in.shape), n)


def occupancy_loss_total(loss_fru: float, loss_3d: float) -> float:
    return loss_fru + loss_3d


def total_loss(l_org: float, l_occupancy: float, cfg: LossConfig = LossConfig()) -> float:
    """Detection/depth loss plus the weighted occupancy loss."""
    return l_org + cfg.lam * l_occupancy


def finite_difference_check(fn: Callable[[np.ndarray], tuple[float, np.ndarray]], point,
                            step: float = 1e-6, floor: float = 1e-12) -> float:
    """Max relative error between ``fn``'s analytic gradient and central differences.

    ``fn(x)`` returns ``(value, gradient)``. Relative error per coordinate is
    ``|numeric - analytic| / max(|numeric|, |analytic|, floor)``.
    """
    x = np.array(point, dtype=np.float64)
    _, analytic = fn(x.copy())
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    flat = x.reshape(-1)
    numeric = np.empty_like(analytic)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp, _ = fn(x.copy())
        flat[i] = orig - step
        fm, _ = fn(x.copy())
        flat[i] = orig
        numeric[i] = (fp - fm) / (2.0 * step)
    denom = np.maximum(np.maximum(np.abs(numeric), np.abs(analytic)), floor)
    return float(np.max(np.abs(numeric - analytic) / denom)) if flat.size else 0.0
