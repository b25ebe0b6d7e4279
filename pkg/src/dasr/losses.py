"""Training losses: pixel MAE, adversarial cross-entropies, the texture
prior loss over Sobel magnitudes, and the noise repulsion loss.

Sign conventions, in terms of what each optimizer minimizes:

  * generator total  =  mae + alpha * noise (+ adv_g when enabled)
  * discriminator total = -(spre + beta * trans), where ``spre`` is the
    log-likelihood the discriminator maximizes (the negative of
    ``l_adversarial_d``), so minimizing the total maximizes both the
    real/fake separation and the texture-prior distance.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .imaging import SOBEL_H, SOBEL_V
from .models import DiscTrans
from .tensor import Tensor

TRANS_MODES = ("raw-sobel", "prior-branch")

LOG_COLUMNS = ("step", "mae", "adv_g", "noise", "trans", "spre",
               "total_g", "total_d")


@dataclass
class LossWeights:
    """alpha scales the noise loss, beta the texture prior loss."""

    alpha: float = 0.1
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(
                f"loss weights must be >= 0, got alpha={self.alpha} "
                f"beta={self.beta}")


@dataclass
class LossBreakdown:
    """Per-step scalars for logging."""

    mae: float = 0.0
    adv_g: float = 0.0
    noise: float = 0.0
    trans: float = 0.0
    spre: float = 0.0
    total_g: float = 0.0
    total_d: float = 0.0

    def csv_row(self, step: int) -> str:
        vals = [f"{getattr(self, f.name):.6f}" for f in fields(self)]
        return ",".join([str(step)] + vals)

    @staticmethod
    def csv_header() -> str:
        return ",".join(LOG_COLUMNS)


def l_mae(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error over all elements."""
    return T.reduce_mean_abs_diff(pred, target)


def l_adversarial_d(real_logit: Tensor, fake_logit: Tensor) -> Tensor:
    """-[log sig(real) + log(1 - sig(fake))], averaged over the batch.

    The binary cross-entropy a discriminator minimizes; equivalently the
    negative of the value it maximizes in the minimax game.
    """
    return T.add(T.mean(T.softplus(T.scale(real_logit, -1.0))),
                 T.mean(T.softplus(fake_logit)))


def l_adversarial_g(fake_logit: Tensor, saturating: bool = False) -> Tensor:
    """Generator-side adversarial loss.

    Default is the non-saturating -log sig(fake); ``saturating=True`` gives
    the literal minimax term log(1 - sig(fake)) for analytic checks.
    """
    if saturating:
        return T.scale(T.mean(T.softplus(fake_logit)), -1.0)
    return T.mean(T.softplus(T.scale(fake_logit, -1.0)))


def _corr_valid_depthwise(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Valid 3x3 cross-correlation per channel on [N,C,H,W], float64."""
    win = np.lib.stride_tricks.sliding_window_view(x, (3, 3), axis=(2, 3))
    return np.einsum("nchwij,ij->nchw", win, k)


def sobel_l1(pred: Tensor, target: Tensor) -> Tensor:
    """Mean |S_pred - S_target| over the valid region, where S is the Sobel
    edge magnitude sqrt((Gh*I)^2 + (Gv*I)^2).

    Computed in float64 end to end (magnitudes, difference, mean) so it
    matches scalar oracles tightly; differentiable in both images.
    """
    if pred.shape != target.shape:
        raise ValueError(
            f"sobel_l1: shape mismatch {pred.shape} vs {target.shape}")
    if pred.data.ndim != 4:
        raise ValueError(f"sobel_l1: expected [N,C,H,W], got {pred.shape}")
    h, w = pred.shape[2], pred.shape[3]
    if h < 3 or w < 3:
        raise ValueError(f"sobel_l1: image {h}x{w} smaller than 3x3")

    eps2 = 1e-24  # keeps the magnitude differentiable at exact zero
    saved = {}
    for tag, t in (("p", pred), ("t", target)):
        x64 = t.data.astype(np.float64)
        gh = _corr_valid_depthwise(x64, SOBEL_H)
        gv = _corr_valid_depthwise(x64, SOBEL_V)
        s = np.sqrt(gh * gh + gv * gv + eps2)
        saved[tag] = (gh, gv, s)
    diff = saved["p"][2] - saved["t"][2]
    n = diff.size
    acc = float(np.abs(diff).sum() / n)
    sign = np.sign(diff)

    def grad_into(t: Tensor, gh, gv, s, sgn, g):
        # d mean|.| / d magnitude, then chain through sqrt and the two
        # fixed valid correlations (transpose = full correlation with the
        # flipped kernel)
        dmag = sgn * (g / n)
        dgh = dmag * gh / s
        dgv = dmag * gv / s
        pad = ((0, 0), (0, 0), (2, 2), (2, 2))
        dx = (_corr_valid_depthwise(np.pad(dgh, pad), SOBEL_H[::-1, ::-1])
              + _corr_valid_depthwise(np.pad(dgv, pad), SOBEL_V[::-1, ::-1]))
        t.accumulate_grad(dx.astype(np.float32))

    def backward(g):
        g = float(g.reshape(()))
        if pred.requires_grad:
            grad_into(pred, *saved["p"], sign, g)
        if target.requires_grad:
            grad_into(target, *saved["t"], -sign, g)

    out = T._make(T._ACTIVE_DTYPE(acc), (pred, target), backward, "sobel_l1")
    out.hires = acc
    return out


def l_trans(pred_img: Tensor, target_img: Tensor, d: Optional[DiscTrans],
            mode: str = "prior-branch") -> Tensor:
    """Texture prior loss between prediction and target.

    ``raw-sobel`` compares Sobel magnitudes of the two images directly (the
    literal formula; carries no discriminator parameters). ``prior-branch``
    compares the discriminator's prior-branch latents, so the term also
    trains the discriminator.
    """
    if mode not in TRANS_MODES:
        raise ValueError(f"l_trans: mode must be one of {TRANS_MODES}, "
                         f"got {mode!r}")
    if pred_img.shape != target_img.shape:
        raise ValueError(
            f"l_trans: shape mismatch {pred_img.shape} vs {target_img.shape}")
    if mode == "raw-sobel":
        return sobel_l1(pred_img, target_img)
    if d is None:
        raise ValueError("l_trans: prior-branch mode needs a discriminator")
    return T.reduce_mean_abs_diff(d.prior_branch(pred_img),
                                  d.prior_branch(target_img))


def l_noise(pred_features: Sequence[Tensor], noise_features: Sequence[Tensor],
            w: Sequence[float]) -> Tensor:
    """Noise repulsion: minus the weighted mean L1 distance between feature
    pyramids; always <= 0, and minimizing it pushes the prediction's
    features away from the noise pattern's."""
    if len(pred_features) != len(noise_features) or len(pred_features) != len(w):
        raise ValueError(
            f"l_noise: got {len(pred_features)} prediction stages, "
            f"{len(noise_features)} noise stages, {len(w)} weights")
    total = None
    for pf, nf, wk in zip(pred_features, noise_features, w):
        term = T.scale(T.reduce_mean_abs_diff(pf, nf), -float(wk))
        total = term if total is None else T.add(total, term)
    return total


def combine_g(mae: Tensor, noise: Optional[Tensor], adv_g: Optional[Tensor],
              weights: LossWeights, adv_enabled: bool) -> Tensor:
    """Generator objective: mae + alpha * noise (+ adv_g when enabled)."""
    total = mae
    if noise is not None:
        total = T.add(total, T.scale(noise, weights.alpha))
    if adv_enabled:
        if adv_g is None:
            raise ValueError("combine_g: adv_enabled but adv_g is None")
        total = T.add(total, adv_g)
    return total


def combine_d(spre: Tensor, trans: Optional[Tensor],
              weights: LossWeights) -> Tensor:
    """Discriminator objective: -(spre + beta * trans).

    ``spre`` is the log-likelihood value the discriminator maximizes; the
    optimizer minimizes the returned negation.
    """
    inner = spre
    if trans is not None:
        inner = T.add(inner, T.scale(trans, weights.beta))
    return T.scale(inner, -1.0)
