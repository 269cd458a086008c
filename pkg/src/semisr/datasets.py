"""Split construction and mixed-minibatch assembly for semi-supervised training.

A split manifest partitions one image pool into paired, unpaired, and test
subsets with a recorded seed. Paired and test records carry an HR path (and an
LR path when the dataset ships real LR files; otherwise LR is synthesised from
HR through the shared degradation operator at load time). Unpaired records
carry only the path of the image that will be served as LR -- they never
expose an HR reference, so nothing downstream can accidentally pair them.

Batches mix ``n_sup`` paired examples with ``n_unsup`` unpaired LR images per
step. Sampling is without replacement within an epoch, and the whole batch
sequence is a pure function of ``(seed, batch_index)``: resuming at step k
reproduces exactly the batches an uninterrupted run would have seen.

Directory convention: ``<root>/hr/*.png`` holds the pool, with an optional
``<root>/lr/*.png`` of same-named real LR files.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import imaging
from .errors import CapacityError, ConfigError, FormatError, ShapeError
from .imaging import IMAGE_EXTENSIONS

MANIFEST_FORMAT = "semisr-split"
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class PairedItem:
    hr: str
    lr: str | None = None  # None -> synthesise LR from HR at load time


@dataclass(frozen=True)
class UnpairedItem:
    path: str
    degrade_on_load: bool = True  # False when `path` is already LR-sized


@dataclass
class SplitManifest:
    paired: list[PairedItem]
    unpaired: list[UnpairedItem]
    test: list[PairedItem]
    seed: int
    scale: int = 4
    root: str = "."

    @property
    def counts(self) -> dict:
        return {"paired": len(self.paired), "unpaired": len(self.unpaired), "test": len(self.test)}


def _list_pool(root: Path) -> tuple[list[Path], dict[str, Path]]:
    hr_dir = root / "hr"
    if not hr_dir.is_dir():
        raise CapacityError(f"no hr/ directory under {root}")
    pool = sorted(p for p in hr_dir.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)
    lr_dir = root / "lr"
    lr_by_name = {}
    if lr_dir.is_dir():
        lr_by_name = {p.name: p for p in lr_dir.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS}
    return pool, lr_by_name


def build_split(
    hr_dir: str | Path,
    n_paired: int,
    n_unpaired: int | None = None,
    n_test: int = 0,
    seed: int = 0,
    scale: int = 4,
) -> SplitManifest:
    """Seeded random split of the pool under ``hr_dir`` (a `<root>` directory).

    ``n_unpaired=None`` takes every image left after test and paired selection.
    Raises CapacityError (listing the available count) when the pool is too
    small. The same seed always reproduces the identical manifest.
    """
    root = Path(hr_dir)
    pool, lr_by_name = _list_pool(root)
    want_unpaired = n_unpaired if n_unpaired is not None else max(0, len(pool) - n_test - n_paired)
    needed = n_test + n_paired + want_unpaired
    if needed > len(pool):
        raise CapacityError(
            f"requested {n_test} test + {n_paired} paired + {want_unpaired} unpaired "
            f"images but only {len(pool)} are available under {root / 'hr'}"
        )

    order = np.random.default_rng(seed).permutation(len(pool))
    picks = [pool[i] for i in order]

    def rel(p: Path) -> str:
        return p.relative_to(root).as_posix()

    def paired_item(p: Path) -> PairedItem:
        lr = lr_by_name.get(p.name)
        return PairedItem(hr=rel(p), lr=rel(lr) if lr else None)

    def unpaired_item(p: Path) -> UnpairedItem:
        lr = lr_by_name.get(p.name)
        if lr is not None:
            return UnpairedItem(path=rel(lr), degrade_on_load=False)
        return UnpairedItem(path=rel(p), degrade_on_load=True)

    test = [paired_item(p) for p in picks[:n_test]]
    paired = [paired_item(p) for p in picks[n_test : n_test + n_paired]]
    unpaired = [unpaired_item(p) for p in picks[n_test + n_paired : n_test + n_paired + want_unpaired]]
    return SplitManifest(paired=paired, unpaired=unpaired, test=test, seed=seed, scale=scale, root=str(root))


def save_manifest(manifest: SplitManifest, path: str | Path) -> None:
    """Write the manifest as line-delimited JSON with a header line."""
    path = Path(path)
    header = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "seed": manifest.seed,
        "scale": manifest.scale,
        "counts": manifest.counts,
        "root": manifest.root,
    }
    lines = [json.dumps(header, sort_keys=True)]
    for it in manifest.paired:
        lines.append(json.dumps({"kind": "paired", "lr": it.lr, "hr": it.hr}, sort_keys=True))
    for it in manifest.unpaired:
        # No "hr" key here, ever: unpaired records must not reference HR.
        lines.append(
            json.dumps({"kind": "unpaired", "path": it.path, "degrade_on_load": it.degrade_on_load}, sort_keys=True)
        )
    for it in manifest.test:
        lines.append(json.dumps({"kind": "test", "lr": it.lr, "hr": it.hr}, sort_keys=True))
    path.write_text("\n".join(lines) + "\n")


def load_manifest(path: str | Path) -> SplitManifest:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise FormatError(f"{path} is empty")
    header = json.loads(lines[0])
    if header.get("format") != MANIFEST_FORMAT:
        raise FormatError(f"{path} is not a {MANIFEST_FORMAT} file")
    paired, unpaired, test = [], [], []
    for line in lines[1:]:
        if not line.strip():
            continue
        rec = json.loads(line)
        kind = rec.get("kind")
        if kind == "paired":
            paired.append(PairedItem(hr=rec["hr"], lr=rec["lr"]))
        elif kind == "unpaired":
            unpaired.append(UnpairedItem(path=rec["path"], degrade_on_load=rec["degrade_on_load"]))
        elif kind == "test":
            test.append(PairedItem(hr=rec["hr"], lr=rec["lr"]))
        else:
            raise FormatError(f"unknown record kind {kind!r} in {path}")
    m = SplitManifest(
        paired=paired, unpaired=unpaired, test=test,
        seed=header["seed"], scale=header["scale"], root=header.get("root", "."),
    )
    if m.counts != header["counts"]:
        raise FormatError(f"{path} header counts {header['counts']} != body counts {m.counts}")
    return m


@dataclass
class SampleBatch:
    """One training step's worth of data (NCHW tensors in [0,1])."""

    paired_lr: torch.Tensor
    paired_hr: torch.Tensor
    unpaired_lr: torch.Tensor
    scale: int = 4

    def __post_init__(self) -> None:
        if self.paired_lr.shape[0] != self.paired_hr.shape[0]:
            raise ShapeError("paired_lr and paired_hr batch lengths differ")
        if self.paired_lr.shape[0] > 0:
            lh, lw = self.paired_lr.shape[-2:]
            hh, hw = self.paired_hr.shape[-2:]
            if (hh, hw) != (lh * self.scale, lw * self.scale):
                raise ShapeError(
                    f"hr dims {(hh, hw)} are not scale={self.scale} times lr dims {(lh, lw)}"
                )

    @property
    def n_sup(self) -> int:
        return int(self.paired_lr.shape[0])

    @property
    def n_unsup(self) -> int:
        return int(self.unpaired_lr.shape[0])


def _epoch_perm(seed: int, stream: str, epoch: int, n: int) -> np.ndarray:
    ss = np.random.SeedSequence([seed, {"paired": 0, "unpaired": 1}[stream], epoch])
    return np.random.default_rng(ss).permutation(n)


def _stream_indices(seed: int, stream: str, n_items: int, start: int, count: int) -> list[int]:
    """Items occupying global positions [start, start+count) of the stream.

    Positions run through one seeded permutation per epoch, so every item
    appears exactly once per epoch regardless of batch size.
    """
    out = []
    for pos in range(start, start + count):
        epoch, offset = divmod(pos, n_items)
        out.append(int(_epoch_perm(seed, stream, epoch, n_items)[offset]))
    return out


class MixedBatchSampler:
    """Deterministic paired+unpaired batch stream over a split manifest.

    ``batch(k)`` is a pure function of the index, which is what makes
    checkpoint resume bit-exact. ``prefetch_workers`` only parallelises image
    loading; the emitted sequence is identical for any worker count.
    """

    def __init__(
        self,
        manifest: SplitManifest,
        batch_spec: tuple[int, int] = (8, 8),
        seed: int = 0,
        hr_size: int = 256,
        degradation: imaging.DegradationSpec | None = None,
        dtype: torch.dtype = torch.float32,
        prefetch_workers: int = 1,
        cache_items: bool = True,
    ):
        n_sup, n_unsup = batch_spec
        if n_sup > 0 and not manifest.paired:
            raise ConfigError("batch_spec requests paired samples but the manifest has none")
        if n_unsup > 0 and not manifest.unpaired:
            raise ConfigError("batch_spec requests unpaired samples but the manifest has none")
        if hr_size % manifest.scale != 0:
            raise ConfigError(f"hr_size {hr_size} not divisible by scale {manifest.scale}")
        self.manifest = manifest
        self.n_sup, self.n_unsup = n_sup, n_unsup
        self.seed = seed
        self.hr_size = hr_size
        self.lr_size = hr_size // manifest.scale
        self.degradation = degradation or imaging.DegradationSpec(scale=manifest.scale)
        if self.degradation.scale != manifest.scale:
            raise ConfigError("degradation scale differs from manifest scale")
        self.dtype = dtype
        self.prefetch_workers = max(1, prefetch_workers)
        self._root = Path(manifest.root)
        self._cache: dict | None = {} if cache_items else None
        self._pool = ThreadPoolExecutor(self.prefetch_workers) if self.prefetch_workers > 1 else None

    # -- index plumbing (exposed for coverage tests; no pixel work) --

    def paired_indices(self, k: int) -> list[int]:
        return _stream_indices(self.seed, "paired", len(self.manifest.paired), k * self.n_sup, self.n_sup)

    def unpaired_indices(self, k: int) -> list[int]:
        return _stream_indices(self.seed, "unpaired", len(self.manifest.unpaired), k * self.n_unsup, self.n_unsup)

    # -- image preparation --

    def _prep_hr(self, path: str) -> imaging.ImageTensor:
        img = imaging.load_image(self._root / path)
        img = imaging.center_crop_square(img)
        return imaging.resize_image(img, (self.hr_size, self.hr_size))

    def _load_pair(self, item: PairedItem) -> tuple[np.ndarray, np.ndarray]:
        hr = self._prep_hr(item.hr)
        if item.lr is not None:
            lr = imaging.load_image(self._root / item.lr)
            lr = imaging.resize_image(lr, (self.lr_size, self.lr_size))
        else:
            lr = imaging.degrade(hr, self.degradation)
        return (lr.data, hr.data)

    def _load_paired(self, idx: int) -> tuple[np.ndarray, np.ndarray]:
        key = ("p", idx)
        if self._cache is not None and key in self._cache:
            return self._cache[key]
        pair = self._load_pair(self.manifest.paired[idx])
        if self._cache is not None:
            self._cache[key] = pair
        return pair

    def _load_unpaired(self, idx: int) -> np.ndarray:
        key = ("u", idx)
        if self._cache is not None and key in self._cache:
            return self._cache[key]
        item = self.manifest.unpaired[idx]
        if item.degrade_on_load:
            lr = imaging.degrade(self._prep_hr(item.path), self.degradation)
        else:
            lr = imaging.load_image(self._root / item.path)
            lr = imaging.resize_image(lr, (self.lr_size, self.lr_size))
        if self._cache is not None:
            self._cache[key] = lr.data
        return lr.data

    def batch(self, k: int) -> SampleBatch:
        """Assemble batch k; pure in k given the sampler's configuration."""
        p_idx = self.paired_indices(k) if self.n_sup else []
        u_idx = self.unpaired_indices(k) if self.n_unsup else []
        if self._pool is not None:
            pairs = list(self._pool.map(self._load_paired, p_idx))
            unpaired = list(self._pool.map(self._load_unpaired, u_idx))
        else:
            pairs = [self._load_paired(i) for i in p_idx]
            unpaired = [self._load_unpaired(i) for i in u_idx]

        def stack(arrs: list[np.ndarray], size: int) -> torch.Tensor:
            if not arrs:
                ch = pairs[0][0].shape[2] if pairs else 1
                return torch.zeros((0, ch, size, size), dtype=self.dtype)
            a = np.stack(arrs).transpose(0, 3, 1, 2)
            return torch.from_numpy(np.ascontiguousarray(a)).to(self.dtype)

        return SampleBatch(
            paired_lr=stack([p[0] for p in pairs], self.lr_size),
            paired_hr=stack([p[1] for p in pairs], self.hr_size),
            unpaired_lr=stack(unpaired, self.lr_size),
            scale=self.manifest.scale,
        )

    def next_batch(self, k: int | None = None) -> SampleBatch:
        """Iterator-style access: consecutive calls yield batch 0, 1, 2, ..."""
        if k is None:
            k = getattr(self, "_cursor", 0)
            self._cursor = k + 1
        return self.batch(k)

    def test_batch(self, n: int | None = None) -> SampleBatch:
        """The first n test pairs as one batch (evaluation, not training)."""
        items = self.manifest.test if n is None else self.manifest.test[:n]
        pairs = []
        for i, item in enumerate(items):
            key = ("t", i)
            if self._cache is not None and key in self._cache:
                pairs.append(self._cache[key])
                continue
            pair = self._load_pair(item)
            if self._cache is not None:
                self._cache[key] = pair
            pairs.append(pair)

        def stack(arrs: list[np.ndarray], size: int) -> torch.Tensor:
            if not arrs:
                return torch.zeros((0, 1, size, size), dtype=self.dtype)
            a = np.stack(arrs).transpose(0, 3, 1, 2)
            return torch.from_numpy(np.ascontiguousarray(a)).to(self.dtype)

        return SampleBatch(
            paired_lr=stack([p[0] for p in pairs], self.lr_size),
            paired_hr=stack([p[1] for p in pairs], self.hr_size),
            unpaired_lr=torch.zeros((0, 1, self.lr_size, self.lr_size), dtype=self.dtype),
            scale=self.manifest.scale,
        )
