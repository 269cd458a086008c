"""Objective terms for the semi-supervised generator and the discriminator.

The generator total is

    total = percep_sup + lambda * adv_g_sup + eta * l1_sup
          + alpha * cons_percep + gamma * adv_g_unsup + beta * cons_l1

where the supervised triple compares G(LR) against the paired HR image and the
consistency pair compares the unpaired LR input against its super-resolved
output degraded back down to LR. Pixel and feature distances are mean absolute
differences over all elements (height, width, and channels averaged together),
so a constant gap of 0.5 scores 0.5 regardless of channel count. Setting
alpha = beta = 0 drops the whole consistency loss; alpha = 0 alone drops only
its perceptual half. Both ablations run the identical code path with zeroed
weights.

All functions are pure and shape-checked; probabilities are clamped at 1e-12
before any log for numerical safety.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import torch

from . import imaging
from .errors import ConfigError, DomainError, ShapeError
from .models import FeatureExtractor, replicate_channels

PROB_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Coefficients of the generator total; defaults are the trained values."""

    lambda_sup_adv: float = 2.5e-3
    eta_sup_l1: float = 1e-2
    alpha_cons_percep: float = 1e-1
    gamma_unsup_adv: float = 2.5e-3
    beta_cons_l1: float = 5e-3

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"loss weight {f.name} must be >= 0")

    @classmethod
    def ablation1(cls, **kw) -> "LossWeights":
        """No consistency loss at all (alpha = beta = 0)."""
        return cls(alpha_cons_percep=0.0, beta_cons_l1=0.0, **kw)

    @classmethod
    def ablation2(cls, **kw) -> "LossWeights":
        """Consistency keeps only its pixel half (alpha = 0)."""
        return cls(alpha_cons_percep=0.0, **kw)


# One scalar per objective term; None marks a term absent at this stage
# (warmup logs only l1_sup and total_g).
@dataclass
class LossReport:
    l1_sup: float | None = None
    percep_sup: float | None = None
    adv_g_sup: float | None = None
    adv_g_unsup: float | None = None
    cons_l1: float | None = None
    cons_percep: float | None = None
    total_g: float | None = None
    d_loss: float | None = None

    FIELDS = ("l1_sup", "percep_sup", "adv_g_sup", "adv_g_unsup", "cons_l1", "cons_percep", "total_g", "d_loss")

    def to_record(self, step: int, stage: str) -> dict:
        rec = {"step": step, "stage": stage}
        rec.update({name: getattr(self, name) for name in self.FIELDS})
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "LossReport":
        return cls(**{name: rec.get(name) for name in cls.FIELDS})


def _check_same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def l1_pixel(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean absolute pixel difference; zero iff the batches are equal."""
    _check_same_shape(a, b)
    return (a - b).abs().mean()


def perceptual(a: torch.Tensor, b: torch.Tensor, extractor: FeatureExtractor) -> torch.Tensor:
    """Mean absolute difference between tap-layer feature maps of a and b."""
    _check_same_shape(a, b)
    fa = extractor(a)
    fb = extractor(b)
    return (fa - fb).abs().mean()


def _check_probs(p: torch.Tensor, name: str) -> None:
    if p.numel() == 0:
        raise DomainError(f"{name}: empty probability batch")
    if bool((p < 0).any()) or bool((p > 1).any()):
        raise DomainError(f"{name}: values outside [0, 1]")


def adv_generator(d_on_fake: torch.Tensor) -> torch.Tensor:
    """Generator adversarial term: mean of -log D(G(.)) over the batch."""
    _check_probs(d_on_fake, "adv_generator")
    return -torch.log(d_on_fake.clamp(min=PROB_EPS)).mean()


def adv_discriminator(d_on_real: torch.Tensor, d_on_fake: torch.Tensor) -> torch.Tensor:
    """Discriminator loss: mean -log p_real plus mean -log(1 - p_fake).

    Real and fake batches may differ in length (the fake side is the union of
    paired and unpaired SR outputs); each side is averaged separately.
    """
    _check_probs(d_on_real, "adv_discriminator(real)")
    _check_probs(d_on_fake, "adv_discriminator(fake)")
    real_term = -torch.log(d_on_real.clamp(min=PROB_EPS)).mean()
    fake_term = -torch.log((1.0 - d_on_fake).clamp(min=PROB_EPS)).mean()
    return real_term + fake_term


def consistency(
    unpaired_lr: torch.Tensor,
    sr_u: torch.Tensor,
    spec: imaging.DegradationSpec,
    extractor: FeatureExtractor | None = None,
) -> tuple[torch.Tensor, torch.Tensor | None]:
    """Downsample-consistency terms for unpaired inputs.

    Degrades ``sr_u`` back to LR through the in-graph operator and returns
    ``(cons_l1, cons_percep)`` against ``unpaired_lr``. Gradients flow through
    the degradation into ``sr_u``. Single-channel batches are replicated to 3
    channels for the perceptual half; pass ``extractor=None`` to skip it
    (cons_percep is then None).
    """
    if sr_u.shape[-2] != unpaired_lr.shape[-2] * spec.scale or sr_u.shape[-1] != unpaired_lr.shape[-1] * spec.scale:
        raise ShapeError(
            f"sr dims {tuple(sr_u.shape[-2:])} are not {spec.scale}x the "
            f"lr dims {tuple(unpaired_lr.shape[-2:])}"
        )
    lr_back = imaging.degrade_batch(sr_u, spec)
    cons_l1 = l1_pixel(unpaired_lr, lr_back)
    if extractor is None:
        return cons_l1, None
    cons_percep = perceptual(
        replicate_channels(unpaired_lr), replicate_channels(lr_back), extractor
    )
    return cons_l1, cons_percep


def total_generator(components: LossReport, w: LossWeights):
    """Weighted sum of the generator terms; absent components count as zero.

    Accepts float or 0-dim tensor components, so the same function serves the
    training graph and the logged-report check.
    """
    terms = [
        (components.percep_sup, 1.0),
        (components.adv_g_sup, w.lambda_sup_adv),
        (components.l1_sup, w.eta_sup_l1),
        (components.cons_percep, w.alpha_cons_percep),
        (components.adv_g_unsup, w.gamma_unsup_adv),
        (components.cons_l1, w.beta_cons_l1),
    ]
    total = None
    for value, weight in terms:
        if value is None:
            continue
        contrib = weight * value
        total = contrib if total is None else total + contrib
    if total is None:
        raise ConfigError("total_generator needs at least one component")
    return total
