"""Blinded rating-study bundles.

``export_study`` renders each method's outputs for a set of test images,
assigns every rendered candidate an opaque item id, shuffles presentation
order per image with a recorded seed, and writes a bundle:

    <out>/study.json            item/reference listing, no method identities
    <out>/references/*.png      HR reference images
    <out>/items/*.png           blinded candidates
    <out>/.method-key.json      item id -> method name, mode 0600, never served

Method sources are either training checkpoints (rendered through the
generator) or directories of pre-rendered outputs keyed by the HR file stem.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imaging, models, trainer
from .datasets import SplitManifest
from .errors import ConfigError, FormatError

STUDY_FORMAT = "semisr-study"
STUDY_VERSION = 1
KEY_FILENAME = ".method-key.json"


@dataclass(frozen=True)
class StudyItem:
    item_id: str
    image_id: str
    file: str  # bundle-relative candidate path


@dataclass
class StudyBundle:
    root: Path
    seed: int
    images: list[dict]  # {"image_id", "reference", "candidates": [StudyItem-dicts]}

    @property
    def items(self) -> list[StudyItem]:
        out = []
        for img in self.images:
            for c in img["candidates"]:
                out.append(StudyItem(item_id=c["item_id"], image_id=img["image_id"], file=c["file"]))
        return out


def _render_from_checkpoint(ckpt_path: Path, hr: imaging.ImageTensor, degradation: imaging.DegradationSpec) -> imaging.ImageTensor:
    data = models.load_checkpoint(ckpt_path)
    gen_cfg = models.GeneratorConfig(**data["configs"]["generator"])
    gen = models.Generator(gen_cfg)
    gen.load_state_dict(data["gen_state"])
    if hr.channels != gen_cfg.img_channels:
        raise ConfigError(
            f"checkpoint {ckpt_path} expects {gen_cfg.img_channels}-channel images, got {hr.channels}"
        )
    lr = imaging.degrade(hr, degradation)
    return trainer.infer(gen, lr)


def export_study(
    methods: list[tuple[str, str]],
    manifest: SplitManifest,
    out_dir: str | Path,
    n_images: int = 10,
    hr_size: int = 256,
    seed: int = 0,
) -> StudyBundle:
    """Build a blinded study bundle from (method_name, source) pairs.

    A source ending in ``.pt`` is treated as a checkpoint; anything else must
    be a directory containing ``<hr-stem>.png`` for every selected test image.
    """
    if not methods:
        raise ConfigError("export_study needs at least one method")
    if not manifest.test:
        raise ConfigError("manifest has no test images")
    if n_images > len(manifest.test):
        raise ConfigError(f"requested {n_images} study images but manifest has {len(manifest.test)} test items")

    out = Path(out_dir)
    (out / "references").mkdir(parents=True, exist_ok=True)
    (out / "items").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    root = Path(manifest.root)
    degradation = imaging.DegradationSpec(scale=manifest.scale)

    chosen = [manifest.test[i] for i in rng.permutation(len(manifest.test))[:n_images]]
    key: dict[str, str] = {}
    images = []
    for idx, item in enumerate(chosen):
        image_id = f"img-{idx:03d}"
        hr = imaging.load_image(root / item.hr)
        hr = imaging.resize_image(imaging.center_crop_square(hr), (hr_size, hr_size))
        ref_rel = f"references/{image_id}.png"
        imaging.save_image(hr, out / ref_rel)

        candidates = []
        for name, source in methods:
            src = Path(source)
            if src.suffix == ".pt":
                sr = _render_from_checkpoint(src, hr, degradation)
            else:
                candidate_file = src / (Path(item.hr).stem + ".png")
                if not candidate_file.exists():
                    raise FormatError(f"method {name!r}: missing rendered output {candidate_file}")
                sr = imaging.load_image(candidate_file)
            item_id = f"it-{rng.integers(0, 16**8):08x}-{idx:03d}{len(candidates)}"
            file_rel = f"items/{item_id}.png"
            imaging.save_image(sr, out / file_rel)
            key[item_id] = name
            candidates.append({"item_id": item_id, "file": file_rel})
        # per-image presentation order, recorded through the bundle seed
        order = rng.permutation(len(candidates))
        candidates = [candidates[i] for i in order]
        images.append({"image_id": image_id, "reference": ref_rel, "candidates": candidates})

    doc = {"format": STUDY_FORMAT, "version": STUDY_VERSION, "seed": seed, "images": images}
    (out / "study.json").write_text(json.dumps(doc, indent=2, sort_keys=True))

    key_path = out / KEY_FILENAME
    key_path.write_text(json.dumps(key, indent=2, sort_keys=True))
    os.chmod(key_path, 0o600)
    return StudyBundle(root=out, seed=seed, images=images)


def load_study(study_dir: str | Path) -> StudyBundle:
    root = Path(study_dir)
    doc = json.loads((root / "study.json").read_text())
    if doc.get("format") != STUDY_FORMAT:
        raise FormatError(f"{root} does not contain a {STUDY_FORMAT} bundle")
    return StudyBundle(root=root, seed=doc["seed"], images=doc["images"])


def load_method_key(study_dir: str | Path) -> dict[str, str]:
    """Server-side item id -> method name mapping (never exposed to clients)."""
    return json.loads((Path(study_dir) / KEY_FILENAME).read_text())
