"""Image I/O, value-range handling, and the SR -> LR degradation operator.

Images live in [0, 1] as H x W x C float arrays (C is 1 or 3). The degradation
operator exists in two forms with identical math: :func:`degrade` works on
numpy ``ImageTensor`` values for data preparation (no gradient tracking), and
:func:`degrade_batch` works on torch NCHW batches inside the loss graph, where
gradients flow through it. Both are built from the same separable resampling
matrices, so the two forms agree to machine precision.

Downscaling kernels:

* ``bicubic`` -- cubic convolution with a = -0.5; when ``antialias`` is set the
  kernel is stretched by the scale factor (the standard imaging-pipeline
  behaviour). Window taps that fall outside the image fold onto the edge pixel.
* ``average-pool`` -- block mean; the exact left-inverse of
  :func:`upsample_naive`.
* ``nearest`` -- the sample nearest the block centre (ties resolve rightward).

Blur and additive noise are deliberately not modelled; ``DegradationSpec`` is
the extension point if they are ever needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import FormatError, ShapeError

KERNELS = ("bicubic", "average-pool", "nearest")

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")

UNIT_RANGE = (0.0, 1.0)


@dataclass
class ImageTensor:
    """An H x W x C image with a declared value range.

    Invariants: ``data.ndim == 3``, channels in {1, 3}, and every value lies
    inside ``range`` after any operation in this module.
    """

    data: np.ndarray
    range: tuple[float, float] = UNIT_RANGE

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ShapeError(f"image must be HxWxC, got ndim={arr.ndim}")
        if arr.shape[2] not in (1, 3):
            raise ShapeError(f"channels must be 1 or 3, got {arr.shape[2]}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"empty image: shape {arr.shape}")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class DegradationSpec:
    """How SR/HR images are mapped down to LR."""

    scale: int = 4
    kernel: str = "bicubic"
    antialias: bool = True

    def __post_init__(self) -> None:
        if self.scale < 1:
            raise ShapeError(f"scale must be >= 1, got {self.scale}")
        if self.kernel not in KERNELS:
            raise FormatError(f"unknown kernel {self.kernel!r}, expected one of {KERNELS}")


def load_image(path: str | Path, range: tuple[float, float] = UNIT_RANGE) -> ImageTensor:
    """Decode a PNG/JPEG file into an ImageTensor.

    Channel order is RGB for colour images. 8-bit values are divided by 255,
    16-bit by 65535, so pure white maps to the top of the declared range.
    """
    try:
        img = Image.open(path)
        img.load()
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read image {path}: {exc}") from exc

    if img.mode in ("P", "RGBA", "CMYK", "YCbCr"):
        img = img.convert("RGB")
    elif img.mode in ("LA", "1"):
        img = img.convert("L")

    if img.mode == "I;16":
        arr = np.asarray(img, dtype=np.float32) / 65535.0
    elif img.mode in ("L", "RGB"):
        arr = np.asarray(img, dtype=np.float32) / 255.0
    else:
        raise FormatError(f"unsupported image mode {img.mode!r} in {path}")

    lo, hi = range
    arr = lo + arr * (hi - lo)
    return ImageTensor(arr.astype(np.float32), range=range)


def save_image(img: ImageTensor, path: str | Path) -> None:
    """Write an ImageTensor as an 8-bit PNG."""
    lo, hi = img.range
    arr = (np.clip(img.data, lo, hi) - lo) / (hi - lo)
    arr8 = np.round(arr * 255.0).astype(np.uint8)
    if arr8.shape[2] == 1:
        pil = Image.fromarray(arr8[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(arr8, mode="RGB")
    pil.save(Path(path), format="PNG")


def _cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Cubic convolution kernel (Keys), parameter a."""
    ax = np.abs(x)
    out = np.zeros_like(ax)
    m1 = ax <= 1.0
    m2 = (ax > 1.0) & (ax < 2.0)
    out[m1] = (a + 2.0) * ax[m1] ** 3 - (a + 3.0) * ax[m1] ** 2 + 1.0
    out[m2] = a * ax[m2] ** 3 - 5.0 * a * ax[m2] ** 2 + 8.0 * a * ax[m2] - 4.0 * a
    return out


def _resample_rows(n_in: int, spec: DegradationSpec) -> np.ndarray:
    """Dense (n_in/scale, n_in) matrix applying the 1-D downscale along an axis.

    Rows sum to exactly 1, so constant signals are fixed points. Taps whose
    source index falls outside [0, n_in) are folded onto the edge sample.
    """
    s = spec.scale
    if n_in % s != 0:
        raise ShapeError(f"scale {s} does not divide size {n_in}")
    n_out = n_in // s
    mat = np.zeros((n_out, n_in), dtype=np.float64)

    if spec.kernel == "average-pool":
        for i in range(n_out):
            mat[i, i * s : (i + 1) * s] = 1.0 / s
        return mat

    if spec.kernel == "nearest":
        for i in range(n_out):
            idx = min(int(np.floor((i + 0.5) * s)), n_in - 1)
            mat[i, idx] = 1.0
        return mat

    # bicubic
    stretch = float(s) if (spec.antialias and s > 1) else 1.0
    support = 2.0 * stretch
    for i in range(n_out):
        center = (i + 0.5) * s - 0.5
        k_lo = int(np.floor(center - support)) + 1
        k_hi = int(np.floor(center + support)) + 1
        taps = np.arange(k_lo, k_hi)
        w = _cubic((taps - center) / stretch)
        w = w / w.sum()
        for k, wk in zip(taps, w):
            mat[i, min(max(k, 0), n_in - 1)] += wk
    return mat


_MATRIX_CACHE: dict[tuple, torch.Tensor] = {}


def _resample_matrix(n_in: int, spec: DegradationSpec, dtype: torch.dtype, device: torch.device) -> torch.Tensor:
    key = (n_in, spec.scale, spec.kernel, spec.antialias, dtype, str(device))
    hit = _MATRIX_CACHE.get(key)
    if hit is None:
        hit = torch.from_numpy(_resample_rows(n_in, spec)).to(dtype=dtype, device=device)
        _MATRIX_CACHE[key] = hit
    return hit


def degrade_batch(x: torch.Tensor, spec: DegradationSpec, range: tuple[float, float] = UNIT_RANGE) -> torch.Tensor:
    """In-graph degradation of an NCHW batch; gradients flow through.

    Output is (N, C, H/scale, W/scale), clamped to ``range``. The operation is
    a fixed linear map followed by clamping, so it is deterministic and
    differentiable almost everywhere.
    """
    if x.ndim != 4:
        raise ShapeError(f"expected NCHW batch, got ndim={x.ndim}")
    if spec.scale == 1 and spec.kernel != "bicubic":
        return x.clamp(*range)
    n, c, h, w = x.shape
    r_h = _resample_matrix(h, spec, x.dtype, x.device)
    r_w = _resample_matrix(w, spec, x.dtype, x.device)
    out = r_h @ x @ r_w.T
    return out.clamp(*range)


def degrade(img: ImageTensor, spec: DegradationSpec) -> ImageTensor:
    """Data-preparation degradation: ImageTensor in, ImageTensor out, no grad.

    Same math as :func:`degrade_batch` (shared resampling matrices).
    """
    with torch.no_grad():
        x = torch.from_numpy(np.ascontiguousarray(img.data, dtype=np.float64))
        x = x.permute(2, 0, 1).unsqueeze(0)
        y = degrade_batch(x, spec, range=img.range)
        arr = y.squeeze(0).permute(1, 2, 0).numpy()
    return ImageTensor(arr.astype(img.data.dtype), range=img.range)


def upsample_naive_batch(x: torch.Tensor, scale: int) -> torch.Tensor:
    """Replicate every pixel of an NCHW batch into a scale x scale block."""
    if scale < 1:
        raise ShapeError(f"scale must be >= 1, got {scale}")
    if x.ndim != 4:
        raise ShapeError(f"expected NCHW batch, got ndim={x.ndim}")
    return x.repeat_interleave(scale, dim=2).repeat_interleave(scale, dim=3)


def upsample_naive(img: ImageTensor, scale: int) -> ImageTensor:
    """Block-replication upsampling; exact right-inverse of average-pool degrade."""
    if scale < 1:
        raise ShapeError(f"scale must be >= 1, got {scale}")
    arr = np.repeat(np.repeat(img.data, scale, axis=0), scale, axis=1)
    return ImageTensor(arr, range=img.range)


def center_crop_square(img: ImageTensor) -> ImageTensor:
    """Crop to the largest centred square (data preparation for mixed-size sets)."""
    side = min(img.height, img.width)
    top = (img.height - side) // 2
    left = (img.width - side) // 2
    return ImageTensor(img.data[top : top + side, left : left + side, :], range=img.range)


def resize_image(img: ImageTensor, size: tuple[int, int]) -> ImageTensor:
    """Bicubic resize to (height, width); data preparation only, no gradients.

    Integer-factor downscales go through :func:`degrade` so prepared data and
    the in-graph operator share one kernel; everything else resizes per
    channel in float via PIL (cubic a = -0.5, antialiased).
    """
    h, w = size
    if img.height == h and img.width == w:
        return img
    if img.height % h == 0 and img.width % w == 0 and img.height // h == img.width // w:
        return degrade(img, DegradationSpec(scale=img.height // h, kernel="bicubic", antialias=True))
    lo, hi = img.range
    chans = []
    for c in range(img.channels):
        pil = Image.fromarray(img.data[:, :, c].astype(np.float32), mode="F")
        chans.append(np.asarray(pil.resize((w, h), resample=Image.BICUBIC), dtype=np.float32))
    arr = np.stack(chans, axis=2)
    return ImageTensor(np.clip(arr, lo, hi), range=img.range)


def to_batch(images: list[ImageTensor] | ImageTensor, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Stack ImageTensors into an NCHW torch batch."""
    if isinstance(images, ImageTensor):
        images = [images]
    shapes = {im.data.shape for im in images}
    if len(shapes) != 1:
        raise ShapeError(f"non-uniform shapes in batch: {sorted(shapes)}")
    arr = np.stack([im.data for im in images]).transpose(0, 3, 1, 2)
    return torch.from_numpy(np.ascontiguousarray(arr)).to(dtype)


def from_batch(x: torch.Tensor, range: tuple[float, float] = UNIT_RANGE) -> list[ImageTensor]:
    """Split an NCHW torch batch back into ImageTensors."""
    if x.ndim != 4:
        raise ShapeError(f"expected NCHW batch, got ndim={x.ndim}")
    arr = x.detach().cpu().numpy().transpose(0, 2, 3, 1)
    return [ImageTensor(a.astype(np.float32), range=range) for a in arr]
