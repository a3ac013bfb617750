"""Training objective: adversarial, scaled-pattern, and masked cycle terms.

All functions accept NCHW tensors and return scalar tensors, so they
are differentiable pieces of the training graph; the trainer converts
them to floats for logging. Masks use 1 for "predicted defect"
(excluded from the masked cycle term) and 0 for "kept".
"""

from __future__ import annotations

from dataclasses import dataclass
from math import isfinite

import torch

from .config import LossWeights
from .errors import NonFiniteLossError

# Sigmoid probabilities are clamped to this band before log so a
# saturated discriminator cannot produce infinities.
PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossBreakdown:
    """One step's loss components, as plain floats for logging."""

    gan_g: float
    gan_f: float
    cyc: float
    sp: float
    total: float
    d_y: float
    d_x: float

    def as_dict(self) -> dict:
        return {
            "gan_g": self.gan_g,
            "gan_f": self.gan_f,
            "cyc": self.cyc,
            "sp": self.sp,
            "total": self.total,
            "d_y": self.d_y,
            "d_x": self.d_x,
        }


def sp_target(normal: torch.Tensor, alpha: float = 0.005, beta: float = 0.995) -> torch.Tensor:
    """Invisible pattern: the normal image scaled into a near-black band.

    I_s = normal * alpha - beta. With the default constants every pixel
    lands in [-1, -0.99], visually black but still structured.
    """
    return normal * alpha - beta


def sp_loss(prediction: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over all elements."""
    if prediction.shape != target.shape:
        raise ValueError(f"shape mismatch: {prediction.shape} vs {target.shape}")
    return (prediction - target).abs().mean()


def _clamped_sigmoid(logits: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(logits).clamp(PROB_EPS, 1.0 - PROB_EPS)


def adversarial_d_loss(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    """Discriminator loss: -1/2 E[log s(real)] - 1/2 E[log(1 - s(fake))]."""
    p_real = _clamped_sigmoid(real_logits)
    p_fake = _clamped_sigmoid(fake_logits)
    return -0.5 * p_real.log().mean() - 0.5 * (1.0 - p_fake).log().mean()


def adversarial_g_loss(fake_logits: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator loss: -E[log s(fake)].

    The literal minimax form has vanishing gradients while the
    discriminator is winning, which is the whole early phase.
    """
    return -_clamped_sigmoid(fake_logits).log().mean()


def dynamic_mask(m_o: torch.Tensor) -> torch.Tensor:
    """Binary mask of the generator's own defect prediction.

    Positive (1) where the channel mean of M_o is above the tanh
    midpoint. Computed under no_grad and detached: the indicator is not
    differentiable, so it is treated as a constant of the step.
    """
    with torch.no_grad():
        mask = (m_o.mean(dim=1, keepdim=True) > 0).to(m_o.dtype)
    return mask


def dmcc_loss(x: torch.Tensor, recovered: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Cycle reconstruction L1 restricted to pixels outside `mask`.

    The sum of absolute differences over kept pixels is normalized by
    (kept pixel count x channels), so the value does not shrink just
    because the predicted defect grew. All pixels masked -> 0.
    """
    if x.shape != recovered.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {recovered.shape}")
    if mask.dim() == 3:
        mask = mask.unsqueeze(1)
    keep = 1.0 - mask.to(x.dtype)
    kept_pixels = keep.sum()
    if kept_pixels.item() == 0:
        return torch.zeros((), dtype=x.dtype, device=x.device)
    channels = x.shape[1]
    return ((x - recovered).abs() * keep).sum() / (kept_pixels * channels)


def mask_free_cycle(y: torch.Tensor, y_roundtrip: torch.Tensor) -> torch.Tensor:
    """Plain mean absolute difference for the mask-domain cycle."""
    if y.shape != y_roundtrip.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_roundtrip.shape}")
    return (y_roundtrip - y).abs().mean()


def weighted_total(gan_g, gan_f, cyc, sp, weights: LossWeights):
    """Total generator objective; works on tensors (autograd) or floats."""
    return gan_g + gan_f + weights.lambda_cyc * cyc + weights.lambda_sp * sp


def total_generator_loss(
    components: dict, weights: LossWeights, d_y: float = 0.0, d_x: float = 0.0
) -> LossBreakdown:
    """Assemble a LossBreakdown from float components, checking finiteness.

    `components` must provide gan_g, gan_f, cyc, and sp. A non-finite
    component aborts with the offender named, since continuing would
    poison every parameter on the next optimizer step.
    """
    values = {}
    for name in ("gan_g", "gan_f", "cyc", "sp"):
        if name not in components:
            raise ValueError(f"missing loss component {name!r}")
        value = float(components[name])
        if not isfinite(value):
            raise NonFiniteLossError(f"loss component {name} is non-finite: {value!r}")
        values[name] = value
    for name, value in (("d_y", float(d_y)), ("d_x", float(d_x))):
        if not isfinite(value):
            raise NonFiniteLossError(f"loss component {name} is non-finite: {value!r}")
    total = weighted_total(values["gan_g"], values["gan_f"], values["cyc"], values["sp"], weights)
    return LossBreakdown(
        gan_g=values["gan_g"],
        gan_f=values["gan_f"],
        cyc=values["cyc"],
        sp=values["sp"],
        total=total,
        d_y=float(d_y),
        d_x=float(d_x),
    )
