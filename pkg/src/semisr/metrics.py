"""Evaluation: Frechet distance between feature Gaussians, and mean opinion
scores from human rating records.

The Frechet distance between N(mu_a, C_a) and N(mu_b, C_b) is

    ||mu_a - mu_b||^2 + Tr(C_a + C_b - 2 (C_a C_b)^{1/2})

The matrix square root goes through an eigendecomposition of the symmetrised
product C_a^{1/2} C_b C_a^{1/2} with eigenvalues clipped at 0 -- the standard
numerical hazard here is small negative eigenvalues from near-singular
covariances. Results with magnitude below 1e-9 snap to exactly 0.0 so that
d(a, a) == 0 holds despite ~1e-13 eigensolver residue.

Feature networks: ``tiny`` is a small frozen seeded conv net (canonical input
64x64, 128-d pooled features) meant for desk-scale runs and CI; full-scale
evaluation can use ``inception-v3`` pooled features (2048-d) when torchvision
weights are available on disk or in the torch hub cache.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import imaging
from .errors import ConfigError, DomainError, FormatError, ShapeError

COV_SHRINKAGE_EPS = 1e-6
ZERO_SNAP = 1e-9


@dataclass
class GaussianStats:
    """Sample mean and covariance of a feature matrix."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise ShapeError(f"cov shape {self.cov.shape} does not match mean dim {d}")
        if not np.allclose(self.cov, self.cov.T, atol=1e-8):
            raise ShapeError("cov is not symmetric within 1e-8")


def gaussian_stats(features: np.ndarray) -> GaussianStats:
    """Sample mean and unbiased (n-1) covariance, symmetrised."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected an n x d matrix, got shape {x.shape}")
    n = x.shape[0]
    if n < 2:
        raise DomainError(f"need at least 2 samples for covariance, got {n}")
    mean = x.mean(axis=0)
    cov = np.cov(x, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    cov = 0.5 * (cov + cov.T)
    return GaussianStats(mean=mean, cov=cov)


def _sqrtm_psd(sym: np.ndarray) -> np.ndarray:
    """Matrix square root of a symmetric PSD matrix; eigenvalues clipped at 0."""
    vals, vecs = np.linalg.eigh(0.5 * (sym + sym.T))
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def sqrtm_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(a b)^{1/2} for symmetric PSD a, b via the symmetrised-product trick.

    With s = a^{1/2}, the product satisfies a b = s (s b s) s^{-1}, so its
    square root is s (s b s)^{1/2} s^{-1}; s b s is symmetric PSD. Requires a
    to be nonsingular for the conjugation (pinv is used, so PSD-singular a
    degrades gracefully instead of raising).
    """
    s = _sqrtm_psd(a)
    inner = _sqrtm_psd(s @ b @ s)
    return s @ inner @ np.linalg.pinv(s)


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """Squared Wasserstein-2 distance between two Gaussians; always >= 0."""
    if a.mean.shape != b.mean.shape:
        raise ShapeError(f"dimension mismatch: {a.mean.shape} vs {b.mean.shape}")
    diff = float(np.sum((a.mean - b.mean) ** 2))
    s = _sqrtm_psd(a.cov)
    inner = s @ b.cov @ s
    vals = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    tr_sqrt = float(np.sqrt(np.clip(vals, 0.0, None)).sum())
    val = diff + float(np.trace(a.cov) + np.trace(b.cov)) - 2.0 * tr_sqrt
    if abs(val) < ZERO_SNAP:
        return 0.0
    return max(val, 0.0)


class TinyFeatureNetwork(nn.Module):
    """Frozen seeded conv net for desk-scale FID: 64x64 input, 128-d features."""

    input_size = 64
    feature_dim = 128

    def __init__(self, seed: int = 1234):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, 32, 3, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(32, 64, 3, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(64, 128, 3, 2, 1), nn.LeakyReLU(0.2),
            nn.AdaptiveAvgPool2d(1), nn.Flatten(),
        )
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            for m in self.net:
                if isinstance(m, nn.Conv2d):
                    nn.init.kaiming_normal_(m.weight)
                    nn.init.zeros_(m.bias)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x * 2.0 - 1.0)


class InceptionFeatureNetwork(nn.Module):
    """Pooled penultimate InceptionV3 features (2048-d); needs weights on disk."""

    input_size = 299
    feature_dim = 2048

    def __init__(self):
        super().__init__()
        try:
            from torchvision.models import Inception_V3_Weights, inception_v3
        except ImportError as exc:
            raise ConfigError("inception-v3 backbone requires torchvision") from exc
        try:
            net = inception_v3(weights=Inception_V3_Weights.IMAGENET1K_V1)
        except Exception as exc:
            raise ConfigError(
                "inception-v3 weights unavailable (offline?); use the 'tiny' backbone "
                "or place the torchvision checkpoint in the torch hub cache"
            ) from exc
        net.fc = nn.Identity()
        net.aux_logits = False
        net.AuxLogits = None
        self.net = net
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # torchvision inception expects ImageNet-normalised input.
        mean = torch.tensor([0.485, 0.456, 0.406], device=x.device).view(1, 3, 1, 1)
        std = torch.tensor([0.229, 0.224, 0.225], device=x.device).view(1, 3, 1, 1)
        return self.net((x - mean) / std)


def build_feature_network(backbone: str = "tiny") -> nn.Module:
    if backbone == "tiny":
        return TinyFeatureNetwork()
    if backbone == "inception-v3":
        return InceptionFeatureNetwork()
    raise ConfigError(f"unknown FID backbone {backbone!r}")


def _list_images(directory: str | Path) -> list[Path]:
    d = Path(directory)
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in imaging.IMAGE_EXTENSIONS)
    if not files:
        raise DomainError(f"no images found in {d}")
    return files


def extract_directory_features(
    directory: str | Path, network: nn.Module, n_max: int | None = None, batch_size: int = 32
) -> np.ndarray:
    """Pooled features for every image in a directory, in stable name order."""
    files = _list_images(directory)
    if n_max is not None:
        files = files[:n_max]
    size = network.input_size
    feats = []
    with torch.no_grad():
        for start in range(0, len(files), batch_size):
            chunk = files[start : start + batch_size]
            imgs = []
            for f in chunk:
                try:
                    img = imaging.load_image(f)
                except FormatError as exc:
                    raise FormatError(f"feature extraction failed for {f}: {exc}") from exc
                img = imaging.resize_image(img, (size, size))
                imgs.append(img)
            x = imaging.to_batch(imgs) if len({i.channels for i in imgs}) == 1 else None
            if x is None:
                x = torch.cat(
                    [imaging.to_batch([i if i.channels == 3 else _gray_to_rgb(i)]) for i in imgs]
                )
            if x.shape[1] == 1:
                x = x.expand(-1, 3, -1, -1)
            feats.append(network(x).cpu().numpy())
    return np.concatenate(feats, axis=0).astype(np.float64)


def _gray_to_rgb(img: imaging.ImageTensor) -> imaging.ImageTensor:
    return imaging.ImageTensor(np.repeat(img.data, 3, axis=2), range=img.range)


def stats_with_shrinkage(features: np.ndarray) -> GaussianStats:
    """Gaussian stats; adds eps*I to the covariance when n <= d (singular)."""
    st = gaussian_stats(features)
    n, d = features.shape
    if n < d:
        warnings.warn(
            f"only {n} samples for {d}-dim features: covariance is singular, "
            f"adding {COV_SHRINKAGE_EPS}*I shrinkage",
            stacklevel=2,
        )
        st = GaussianStats(st.mean, st.cov + COV_SHRINKAGE_EPS * np.eye(d))
    return st


def fid(
    real_dir: str | Path,
    fake_dir: str | Path,
    network: nn.Module | str = "tiny",
    n_max: int | None = None,
) -> float:
    """FID between two image directories; deterministic given file names."""
    if isinstance(network, str):
        network = build_feature_network(network)
    real = extract_directory_features(real_dir, network, n_max=n_max)
    fake = extract_directory_features(fake_dir, network, n_max=n_max)
    return frechet_distance(stats_with_shrinkage(real), stats_with_shrinkage(fake))


# -- mean opinion score --


@dataclass(frozen=True)
class RatingRecord:
    """One rater's 1-5 score for one blinded model output."""

    rater_id: str
    image_id: str
    method_id: str
    score: int
    presented_at: str = ""

    def __post_init__(self) -> None:
        if not isinstance(self.score, int) or not 1 <= self.score <= 5:
            raise DomainError(f"score must be an integer in 1..5, got {self.score!r}")


def load_ratings(path: str | Path) -> list[RatingRecord]:
    """Read line-delimited rating records; duplicate keys are an error."""
    records = []
    seen = set()
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        rec = json.loads(line)
        r = RatingRecord(
            rater_id=str(rec["rater_id"]),
            image_id=str(rec["image_id"]),
            method_id=str(rec["method_id"]),
            score=int(rec["score"]),
            presented_at=str(rec.get("presented_at", "")),
        )
        key = (r.rater_id, r.image_id, r.method_id)
        if key in seen:
            raise FormatError(f"{path}:{ln}: duplicate rating for {key}")
        seen.add(key)
        records.append(r)
    return records


@dataclass(frozen=True)
class MosResult:
    method_id: str
    mean: float
    stddev: float
    count: int


def mos(records: list[RatingRecord], method: str) -> MosResult:
    """Arithmetic mean (with sample stddev and count) of one method's scores."""
    scores = [r.score for r in records if r.method_id == method]
    if not scores:
        raise DomainError(f"no rating records for method {method!r}")
    arr = np.asarray(scores, dtype=np.float64)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return MosResult(method_id=method, mean=float(arr.mean()), stddev=std, count=len(arr))


def mos_table(records: list[RatingRecord]) -> list[MosResult]:
    """Per-method MOS, sorted by descending mean."""
    methods = sorted({r.method_id for r in records})
    results = [mos(records, m) for m in methods]
    return sorted(results, key=lambda r: -r.mean)
