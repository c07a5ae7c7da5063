"""Images as 2D regression functions.

Pixel ``(row, col)`` of an ``H x W`` image maps to the input
``(2 row / (H - 1) - 1, 2 col / (W - 1) - 1)`` (first coordinate = row), and
intensity ``v`` in 0..255 maps to ``v / 255 - 0.5``.  A one-pixel-wide axis
maps to -1.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .model import Episode, stack_episodes

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


class IDXError(ValueError):
    pass


@dataclass
class ImageDataset:
    images: np.ndarray  # [count, height, width, channels], uint8
    split: str = "train"

    def __post_init__(self):
        images = np.asarray(self.images)
        if images.ndim == 3:
            images = images[..., None]
        if images.ndim != 4:
            raise ValueError(f"images must be [count, H, W, C], got shape {images.shape}")
        if images.dtype != np.uint8:
            if images.min() < 0 or images.max() > 255:
                raise ValueError("intensities must lie in [0, 255]")
            images = images.astype(np.uint8)
        self.images = images

    def __len__(self):
        return len(self.images)

    @property
    def height(self) -> int:
        return self.images.shape[1]

    @property
    def width(self) -> int:
        return self.images.shape[2]

    @property
    def channels(self) -> int:
        return self.images.shape[3]


# IDX ------------------------------------------------------------------------

def _open(path, mode):
    return gzip.open(path, mode) if str(path).endswith(".gz") else open(path, mode)


def load_idx(path, split: str = "train") -> ImageDataset:
    """Read an IDX3 unsigned-byte image file (optionally gzipped)."""
    with _open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise IDXError(f"{path}: truncated header at byte offset {len(raw)}")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != IDX_IMAGES:
        kind = " (label file)" if magic == IDX_LABELS else ""
        raise IDXError(f"{path}: expected magic 0x{IDX_IMAGES:08x}, found 0x{magic:08x}{kind}")
    if len(raw) < 16:
        raise IDXError(f"{path}: truncated dimensions at byte offset {len(raw)}")
    count, rows, cols = struct.unpack(">III", raw[4:16])
    need = 16 + count * rows * cols
    if len(raw) < need:
        raise IDXError(f"{path}: truncated pixel data at byte offset {len(raw)}, expected {need} bytes")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=count * rows * cols, offset=16)
    return ImageDataset(pixels.reshape(count, rows, cols, 1).copy(), split)


def write_idx(path, images) -> None:
    """Write single-channel images ``[count, H, W]`` (or ``[..., 1]``) as IDX3."""
    images = np.asarray(images)
    if images.ndim == 4:
        if images.shape[3] != 1:
            raise ValueError("IDX image files hold a single channel")
        images = images[..., 0]
    if images.ndim != 3:
        raise ValueError(f"expected [count, H, W], got {images.shape}")
    count, rows, cols = images.shape
    with _open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES, count, rows, cols))
        f.write(np.ascontiguousarray(images, dtype=np.uint8).tobytes())


# coordinates ----------------------------------------------------------------

def _axis_coord(index, size: int) -> np.ndarray:
    index = np.asarray(index, dtype=float)
    if size == 1:
        return np.full_like(index, -1.0)
    return 2.0 * index / (size - 1) - 1.0


def _axis_index(coord, size: int) -> np.ndarray:
    coord = np.asarray(coord, dtype=float)
    if size == 1:
        return np.zeros(coord.shape, dtype=int)
    return np.rint((coord + 1.0) * (size - 1) / 2.0).astype(int)


def pixel_coords(rows, cols, height: int, width: int) -> np.ndarray:
    return np.stack([_axis_coord(rows, height), _axis_coord(cols, width)], axis=-1)


def image_to_regression(image: np.ndarray, indices) -> tuple[np.ndarray, np.ndarray]:
    """Inputs ``[k, 2]`` and outputs ``[k, C]`` for flat (row-major) pixel ``indices``."""
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[..., None]
    height, width = image.shape[:2]
    indices = np.asarray(indices, dtype=int).reshape(-1)
    if indices.size and (indices.min() < 0 or indices.max() >= height * width):
        raise IndexError(f"pixel index out of range for a {height}x{width} image")
    rows, cols = np.divmod(indices, width)
    x = pixel_coords(rows, cols, height, width)
    y = image[rows, cols].astype(float) / 255.0 - 0.5
    return x, y


def regression_to_pixels(x, y, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`image_to_regression`: flat indices and uint8 intensities."""
    x = np.asarray(x, dtype=float)
    rows = _axis_index(x[:, 0], height)
    cols = _axis_index(x[:, 1], width)
    values = np.clip(np.rint((np.asarray(y, dtype=float) + 0.5) * 255.0), 0, 255).astype(np.uint8)
    return rows * width + cols, values


def make_grid(height: int, width: int) -> np.ndarray:
    """All ``height * width`` pixel inputs in row-major order."""
    if height < 1 or width < 1:
        raise ValueError("grid dimensions must be >= 1")
    rows, cols = np.divmod(np.arange(height * width), width)
    return pixel_coords(rows, cols, height, width)


# episodes -------------------------------------------------------------------

@dataclass(frozen=True)
class PixelEpisodeSpec:
    min_context: int = 3
    max_points: int = 200

    def __post_init__(self):
        if self.min_context < 3 or self.max_points < self.min_context:
            raise ValueError("need 3 <= min_context <= max_points")

    def draw_sizes(self, rng: np.random.Generator) -> tuple[int, int]:
        n = int(rng.integers(self.min_context, self.max_points + 1))
        m = n + int(rng.integers(0, self.max_points - n + 1))
        return n, m


def sample_pixel_episode(dataset: ImageDataset, spec: PixelEpisodeSpec, rng: np.random.Generator,
                         sizes: tuple[int, int] | None = None) -> Episode:
    """Random image; ``m`` distinct random pixels as targets, the first ``n`` of them as contexts."""
    pixels = dataset.height * dataset.width
    if spec.max_points > pixels:
        raise ValueError(f"episode spec asks for up to {spec.max_points} points but images have {pixels} pixels")
    n, m = sizes if sizes is not None else spec.draw_sizes(rng)
    image = dataset.images[int(rng.integers(len(dataset)))]
    chosen = rng.choice(pixels, size=m, replace=False)
    x, y = image_to_regression(image, chosen)
    return Episode(x[:n].copy(), y[:n].copy(), x, y, np.arange(n))


def sample_pixel_batch(dataset: ImageDataset, spec: PixelEpisodeSpec, rng: np.random.Generator, batch_size: int) -> Episode:
    n, m = spec.draw_sizes(rng)
    return stack_episodes([sample_pixel_episode(dataset, spec, rng, sizes=(n, m)) for _ in range(batch_size)])


def top_half_episode(image: np.ndarray) -> Episode:
    """Contexts: every pixel with ``row < H / 2``; targets: the full image."""
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[..., None]
    height, width = image.shape[:2]
    all_idx = np.arange(height * width)
    x, y = image_to_regression(image, all_idx)
    ctx = np.flatnonzero(all_idx // width < height / 2)
    return Episode(x[ctx].copy(), y[ctx].copy(), x, y, ctx)


# synthetic shapes -------------------------------------------------------------

def synthetic_shapes(count: int, size: int = 8, seed: int = 0, split: str = "train") -> ImageDataset:
    """Seeded ``size x size`` greyscale images, each one filled rectangle or disc on black."""
    rng = np.random.Generator(np.random.PCG64(seed))
    images = np.zeros((count, size, size, 1), dtype=np.uint8)
    rr, cc = np.mgrid[0:size, 0:size]
    for i in range(count):
        if rng.random() < 0.5:
            h, w = rng.integers(2, size - 1, size=2)
            top = rng.integers(0, size - h + 1)
            left = rng.integers(0, size - w + 1)
            mask = (rr >= top) & (rr < top + h) & (cc >= left) & (cc < left + w)
        else:
            radius = rng.uniform(1.5, size / 2.5)
            cy, cx = rng.uniform(radius - 0.5, size - radius - 0.5, size=2)
            mask = (rr - cy) ** 2 + (cc - cx) ** 2 <= radius**2
        images[i, mask, 0] = 255
    return ImageDataset(images, split)
