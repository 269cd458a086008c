"""Evaluation: Frechet distance between feature Gaussians, and MOS aggregation.

Run: python demos/05_fid_and_mos.py
"""

import json
import tempfile
import warnings
from pathlib import Path

import numpy as np

from semisr import imaging, metrics

rule = "-" * 64

print("Frechet distance has a closed form for scalar Gaussians:")
a = metrics.GaussianStats(np.array([0.0]), np.array([[1.0]]))
b = metrics.GaussianStats(np.array([2.0]), np.array([[1.0]]))
print(f"  N(0,1) vs N(2,1): d = {metrics.frechet_distance(a, b):.4f}   ((mu_a-mu_b)^2 = 4)")
c = metrics.GaussianStats(np.array([0.0]), np.array([[4.0]]))
print(f"  N(0,1) vs N(0,4): d = {metrics.frechet_distance(a, c):.4f}   ((1-2)^2 = 1)")
print(f"  d(a, a) = {metrics.frechet_distance(a, a)}")

print(rule)
print("Directory-level FID with the desk-scale feature network:")
root = Path(tempfile.mkdtemp(prefix="semisr-demo-"))
rng = np.random.default_rng(0)
for name, offset in [("real", 0.0), ("fake", 0.08)]:
    d = root / name
    d.mkdir()
    for i in range(48):
        arr = np.clip(rng.random((32, 32, 3)) * 0.5 + 0.25 + offset, 0, 1)
        imaging.save_image(imaging.ImageTensor(arr.astype(np.float32)), d / f"{i:03d}.png")
with warnings.catch_warnings():
    warnings.simplefilter("ignore")  # 48 samples < 128-dim features: shrinkage applies
    same = metrics.fid(root / "real", root / "real")
    diff = metrics.fid(root / "real", root / "fake")
print(f"  fid(real, real) = {same:.2e}")
print(f"  fid(real, fake-with-brightness-shift) = {diff:.4f}")

print(rule)
print("MOS aggregation from a ratings log:")
ratings = root / "ratings.jsonl"
rows = []
for i, s in enumerate([5, 5, 4, 4, 5]):
    rows.append({"rater_id": f"r{i}", "image_id": "img-0", "method_id": "m-ours", "score": s})
for i, s in enumerate([2, 3, 2, 1, 3]):
    rows.append({"rater_id": f"r{i}", "image_id": "img-0", "method_id": "m-base", "score": s})
ratings.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
for res in metrics.mos_table(metrics.load_ratings(ratings)):
    print(f"  {res.method_id:<8} mean {res.mean:.3f} +/- {res.stddev:.3f}  (n={res.count})")
