"""The degradation operator F: HR/SR -> LR, in both of its forms.

Run: python demos/01_degradation.py
"""

import numpy as np
import torch

from semisr import imaging
from semisr.imaging import DegradationSpec, ImageTensor

rule = "-" * 64

print("A 256x256 constant image is a fixed point of every kernel:")
img = ImageTensor(np.full((256, 256, 3), 0.5, dtype=np.float32))
for kernel in imaging.KERNELS:
    out = imaging.degrade(img, DegradationSpec(scale=4, kernel=kernel))
    print(f"  {kernel:<13} -> shape {out.data.shape}, max deviation {np.abs(out.data - 0.5).max():.2e}")

print(rule)
print("Block replication is the exact right inverse of average pooling:")
rng = np.random.default_rng(0)
x = ImageTensor(rng.random((6, 6, 3)))
up = imaging.upsample_naive(x, 4)
back = imaging.degrade(up, DegradationSpec(scale=4, kernel="average-pool"))
print(f"  x -> upsample_naive(4) -> degrade(average-pool, 4): max |round trip - x| = "
      f"{np.abs(back.data - x.data).max():.2e}")

print(rule)
print("The in-graph form is the same math, and gradients flow through it.")
spec = DegradationSpec(scale=2, kernel="bicubic")
xt = torch.rand(1, 3, 8, 8, dtype=torch.float64, requires_grad=True)
y = imaging.degrade_batch(xt, spec)
y.sum().backward()
print(f"  degrade_batch: {tuple(xt.shape)} -> {tuple(y.shape)}")
print(f"  d(sum)/dx is a {tuple(xt.grad.shape)} tensor; each column of the resize matrix "
      f"sums to 1, so the gradient rows sum to {xt.grad.sum(dim=(0, 1)).mean():.4f} per pixel block")

single = imaging.degrade(ImageTensor(xt.detach().squeeze(0).permute(1, 2, 0).numpy()), spec)
batch = y.detach().squeeze(0).permute(1, 2, 0).numpy()
print(f"  numpy form vs torch form: max difference {np.abs(single.data - batch).max():.2e}")

print(rule)
print("Bicubic overshoot on a hard edge is clamped back into [0, 1]:")
arr = np.zeros((16, 16, 1))
arr[:, 8:] = 1.0
out = imaging.degrade(ImageTensor(arr), DegradationSpec(scale=4, kernel="bicubic"))
print(f"  output range: [{out.data.min():.4f}, {out.data.max():.4f}]")
