"""The full blinded rating-study loop, scripted end to end in one process.

Export a bundle for two mock methods, serve it, rate every item through the
HTTP API exactly as the browser UI would, and aggregate the MOS.

Run: python demos/06_rating_study.py
"""

import tempfile
from pathlib import Path

import numpy as np
from fastapi.testclient import TestClient

from semisr import datasets, imaging, metrics, study
from semisr.service import create_app

rule = "-" * 64

root = Path(tempfile.mkdtemp(prefix="semisr-demo-"))
hr = root / "hr"
hr.mkdir(parents=True)
rng = np.random.default_rng(1)
for i in range(8):
    imaging.save_image(
        imaging.ImageTensor(rng.random((16, 16, 3)).astype(np.float32)), hr / f"img_{i}.png"
    )
manifest = datasets.build_split(root, n_paired=2, n_unpaired=3, n_test=3, seed=0)

# mock "methods": brightness-shifted copies standing in for model renders
methods = []
for name, shift in [("crisp", 0.06), ("washed", -0.06)]:
    d = root / name
    d.mkdir()
    for item in manifest.test:
        img = imaging.load_image(f"{manifest.root}/{item.hr}")
        imaging.save_image(imaging.ImageTensor(np.clip(img.data + shift, 0, 1)), d / Path(item.hr).name)
    methods.append((name, str(d)))

bundle = study.export_study(methods, manifest, root / "study", n_images=3, seed=7)
print(f"Exported a blinded bundle: {len(bundle.images)} images x {len(methods)} methods "
      f"= {len(bundle.items)} rateable items")
print(f"  study.json never names a method; the key file is {study.KEY_FILENAME} (mode 0600)")

print(rule)
app = create_app(root / "study", root / "ratings.jsonl", session_seed=0)
client = TestClient(app)
key = study.load_method_key(root / "study")

session = client.get("/session/demo-rater").json()
sid = session["session_id"]
print(f"Rater session {sid}: {session['done']}/{session['total']} done")

# a rater who likes bright images: 5 for 'crisp' outputs, 2 for 'washed'
for _ in range(session["total"]):
    item = client.get(f"/session/{sid}/next").json()
    score = 5 if key[item["item_id"]] == "crisp" else 2
    client.post(f"/session/{sid}/rating", json={"item_id": item["item_id"], "score": score})
print(f"Completion: {client.get(f'/session/{sid}/next').json()}")

print(rule)
records = metrics.load_ratings(root / "ratings.jsonl")
print("De-blinded MOS table:")
for res in metrics.mos_table(records):
    print(f"  {res.method_id:<8} mean {res.mean:.3f}  (n={res.count})")
