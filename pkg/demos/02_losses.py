"""Every objective term, assembled into the weighted generator total.

Run: python demos/02_losses.py
"""

import math

import torch

from semisr import imaging, losses, models
from semisr.losses import LossReport, LossWeights

rule = "-" * 64

ext = models.FeatureExtractor(models.FeatureExtractorSpec(tap=(2, 2), weights="random:0"))

print("Pixel L1 is a plain mean absolute difference:")
a = torch.full((1, 3, 8, 8), 0.2)
b = torch.full((1, 3, 8, 8), 0.7)
print(f"  l1(0.2-const, 0.7-const) = {losses.l1_pixel(a, b).item():.4f}  (|0.2-0.7| = 0.5)")

print(rule)
print("Perceptual distance compares frozen tap-layer feature maps:")
g = torch.Generator().manual_seed(0)
x = torch.rand(1, 3, 8, 8, generator=g)
y = torch.rand(1, 3, 8, 8, generator=g)
print(f"  perceptual(x, y)  = {losses.perceptual(x, y, ext).item():.4f}")
print(f"  perceptual(x, x)  = {losses.perceptual(x, x.clone(), ext).item():.4f}")

print(rule)
print("Adversarial terms:")
half = torch.full((4,), 0.5)
print(f"  generator, D(fake)=0.5     -> {losses.adv_generator(half).item():.4f}  (ln 2 = {math.log(2):.4f})")
print(f"  discriminator at the saddle -> {losses.adv_discriminator(half, half).item():.4f}  (2 ln 2)")
print(f"  perfect discriminator       -> {losses.adv_discriminator(torch.ones(4), torch.zeros(4)).item():.4f}")

print(rule)
print("Consistency: degrade the SR output back to LR and compare with the input.")
lr_u = torch.rand(2, 3, 8, 8, generator=g)
spec = imaging.DegradationSpec(scale=4, kernel="average-pool")
perfect_sr = imaging.upsample_naive_batch(lr_u, 4)
c1, cp = losses.consistency(lr_u, perfect_sr, spec, ext)
print(f"  an exact right inverse of F gives ({c1.item():.1f}, {cp.item():.1f})")
noisy_sr = (perfect_sr + 0.1 * torch.randn(perfect_sr.shape, generator=g)).clamp(0, 1)
c1, cp = losses.consistency(lr_u, noisy_sr, spec, ext)
print(f"  a perturbed SR gives        ({c1.item():.4f}, {cp.item():.4f})")

print(rule)
print("The generator total is the weighted sum of six terms.")
weights = LossWeights()
print(f"  weights: lambda={weights.lambda_sup_adv}, eta={weights.eta_sup_l1}, "
      f"alpha={weights.alpha_cons_percep}, gamma={weights.gamma_unsup_adv}, beta={weights.beta_cons_l1}")
unit = LossReport(l1_sup=1.0, percep_sup=1.0, adv_g_sup=1.0,
                  adv_g_unsup=1.0, cons_l1=1.0, cons_percep=1.0)
print(f"  all six components at 1.0 -> total {losses.total_generator(unit, weights):.4f}")
print(f"  ablation 1 (no consistency):      total {losses.total_generator(unit, LossWeights.ablation1()):.4f}")
print(f"  ablation 2 (pixel-only consist.): total {losses.total_generator(unit, LossWeights.ablation2()):.4f}")
