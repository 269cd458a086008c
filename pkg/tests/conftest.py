import numpy as np
import pytest
import torch

from semisr import imaging, losses, models, trainer


def make_shape_image(
    rng: np.random.Generator, size: int = 32, channels: int = 3, kind: str = "rect"
) -> np.ndarray:
    """Smooth synthetic image with a few random soft-edged shapes."""
    img = np.full((size, size, channels), rng.uniform(0.2, 0.8), dtype=np.float64)
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(rng.integers(2, 5)):
        col = rng.uniform(0.0, 1.0, size=channels)
        if kind == "ellipse":
            cy, cx = rng.uniform(4, size - 4, size=2)
            ry, rx = rng.uniform(2, size / 3, size=2)
            mask = (((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0).astype(np.float64)
        else:
            r0, c0 = rng.integers(0, size - 4, size=2)
            h, w = rng.integers(3, max(4, size // 2), size=2)
            mask = ((yy >= r0) & (yy < r0 + h) & (xx >= c0) & (xx < c0 + w)).astype(np.float64)
        for c in range(channels):
            img[:, :, c] = img[:, :, c] * (1 - 0.8 * mask) + col[c] * 0.8 * mask
    # light blur keeps gradients informative after bicubic downsampling
    k = np.array([0.25, 0.5, 0.25])
    for c in range(channels):
        img[:, :, c] = np.apply_along_axis(lambda v: np.convolve(v, k, mode="same"), 0, img[:, :, c])
        img[:, :, c] = np.apply_along_axis(lambda v: np.convolve(v, k, mode="same"), 1, img[:, :, c])
    return np.clip(img, 0.0, 1.0)


def write_shape_pool(
    root, n: int, size: int = 32, channels: int = 3, seed: int = 0, kind: str = "rect", prefix: str = "shape"
) -> None:
    """Write n synthetic HR images under <root>/hr/."""
    hr = root / "hr"
    hr.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n):
        img = imaging.ImageTensor(
            make_shape_image(rng, size=size, channels=channels, kind=kind).astype(np.float32)
        )
        imaging.save_image(img, hr / f"{prefix}_{i:04d}.png")


@pytest.fixture
def shapes_root(tmp_path):
    write_shape_pool(tmp_path, n=24, size=32, seed=7)
    return tmp_path


def tiny_train_config(**kw) -> trainer.TrainConfig:
    """Small config for fast CPU tests: 8x8 LR -> 32x32 HR, 2 RRDB blocks."""
    defaults = dict(
        warmup_batches=2,
        max_batches=4,
        batch_spec=(2, 2),
        hr_size=32,
        seed=0,
        checkpoint_every=0,
        generator=models.GeneratorConfig(
            n_rrdb_blocks=2, base_channels=12, growth_channels=6, scale=4
        ),
        discriminator=models.DiscriminatorConfig(
            input_size=32, base_channels=12, n_downsample_stages=3
        ),
        features=models.FeatureExtractorSpec(tap=(2, 2), weights="random:0"),
        degradation=imaging.DegradationSpec(scale=4),
        weights=losses.LossWeights(),
    )
    defaults.update(kw)
    return trainer.TrainConfig(**defaults)


def small_extractor(tap=(2, 2), seed: int = 0, dtype=torch.float32) -> models.FeatureExtractor:
    ext = models.FeatureExtractor(models.FeatureExtractorSpec(tap=tap, weights=f"random:{seed}"))
    return ext.to(dtype)
