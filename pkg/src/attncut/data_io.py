"""Unpaired image folders: discovery, deterministic preprocessing, batching."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


class EmptyDomainError(ValueError):
    pass


class ImageDecodeError(ValueError):
    pass


def normalize_image(pixels) -> np.ndarray:
    """Map pixel values in [0, 255] to floats in [-1, 1] via ``v / 127.5 - 1``."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise ValueError(f"pixel values must lie in [0, 255], got [{arr.min()}, {arr.max()}]")
    return (arr / 127.5 - 1.0).astype(np.float32)


def denormalize_image(values) -> np.ndarray:
    """Inverse of :func:`normalize_image`, rounded and clipped to uint8."""
    arr = np.asarray(values, dtype=np.float64)
    return np.clip(np.rint((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)


def list_images(root) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"image directory not found: {root}")
    return sorted(p for p in root.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS)


def resize_center_crop(img: Image.Image, size: int) -> Image.Image:
    w, h = img.size
    scale = size / min(w, h)
    nw, nh = max(size, round(w * scale)), max(size, round(h * scale))
    img = img.resize((nw, nh), Image.BICUBIC)
    left, top = (nw - size) // 2, (nh - size) // 2
    return img.crop((left, top, left + size, top + size))


def load_image(path, size: int | None = None) -> np.ndarray:
    """Decode to an ``H x W x 3`` uint8 array, optionally resized and centre-cropped."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if size is not None:
                im = resize_center_crop(im, size)
            return np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageDecodeError(f"cannot decode image {path}: {exc}") from exc


def to_tensor(arr: np.ndarray) -> torch.Tensor:
    """uint8 ``H x W x 3`` -> float ``3 x H x W`` in [-1, 1]."""
    return torch.from_numpy(normalize_image(arr)).permute(2, 0, 1).contiguous()


def to_uint8(img: torch.Tensor) -> np.ndarray:
    """float ``3 x H x W`` in [-1, 1] -> uint8 ``H x W x 3``."""
    return denormalize_image(img.detach().cpu().permute(1, 2, 0).numpy())


@dataclass(frozen=True)
class UnpairedDataset:
    domain_x_paths: tuple[Path, ...]
    domain_y_paths: tuple[Path, ...]
    image_size: int
    seed: int = 0
    random_crop: bool = False

    def __post_init__(self):
        if not self.domain_x_paths or not self.domain_y_paths:
            raise EmptyDomainError("both domains need at least one image")
        if self.image_size < 8:
            raise ValueError(f"image_size must be >= 8, got {self.image_size}")

    def __len__(self) -> int:
        """Samples per epoch: the larger domain is seen once, the smaller cycles."""
        return max(len(self.domain_x_paths), len(self.domain_y_paths))

    def steps_per_epoch(self, batch_size: int = 1) -> int:
        return -(-len(self) // batch_size)

    def epoch_order(self, epoch: int) -> tuple[np.ndarray, np.ndarray]:
        """Independent shuffles of X and Y, a pure function of (seed, epoch)."""
        rng = np.random.default_rng([self.seed, epoch])
        n = len(self)
        ix = np.concatenate([rng.permutation(len(self.domain_x_paths)) for _ in range(-(-n // len(self.domain_x_paths)))])
        iy = np.concatenate([rng.permutation(len(self.domain_y_paths)) for _ in range(-(-n // len(self.domain_y_paths)))])
        return ix[:n], iy[:n]

    def _load(self, path: Path, epoch: int, index: int) -> torch.Tensor:
        if not self.random_crop:
            return to_tensor(load_image(path, self.image_size))
        # random crop after resizing the shorter edge to 286/256 of the target
        big = load_image(path, round(self.image_size * 286 / 256))
        rng = np.random.default_rng([self.seed, epoch, index])
        top, left = rng.integers(0, big.shape[0] - self.image_size + 1, size=2)
        return to_tensor(big[top : top + self.image_size, left : left + self.image_size])

    def load_x(self, i: int, epoch: int = 0) -> torch.Tensor:
        return self._load(self.domain_x_paths[i], epoch, i)

    def load_y(self, i: int, epoch: int = 0) -> torch.Tensor:
        return self._load(self.domain_y_paths[i], epoch, i)

    def batches(self, epoch: int, batch_size: int = 1, start: int = 0) -> Iterator[tuple[torch.Tensor, torch.Tensor]]:
        """Yield ``(x, y)`` batches for one epoch, beginning at batch ``start``."""
        ix, iy = self.epoch_order(epoch)
        for b in range(start, self.steps_per_epoch(batch_size)):
            sl = slice(b * batch_size, (b + 1) * batch_size)
            x = torch.stack([self.load_x(int(i), epoch) for i in ix[sl]])
            y = torch.stack([self.load_y(int(i), epoch) for i in iy[sl]])
            yield x, y


def load_unpaired_dataset(root_x, root_y, image_size: int, seed: int = 0, random_crop: bool = False) -> UnpairedDataset:
    """Collect PNG/JPEG files from two folders (sorted by name) and check that
    each one decodes."""
    if image_size < 8:
        raise ValueError(f"image_size must be >= 8, got {image_size}")
    domains = []
    for root in (root_x, root_y):
        paths = list_images(root)
        if not paths:
            raise EmptyDomainError(f"empty domain: no PNG/JPEG images in {root}")
        for p in paths:
            try:
                with Image.open(p) as im:
                    im.verify()
            except (UnidentifiedImageError, OSError) as exc:
                raise ImageDecodeError(f"cannot decode image {p}: {exc}") from exc
        domains.append(tuple(paths))
    return UnpairedDataset(domains[0], domains[1], image_size, seed, random_crop)


def split_dirs(root, phase: str = "train") -> tuple[Path, Path]:
    """``root/{phase}X`` and ``root/{phase}Y``."""
    root = Path(root)
    return root / f"{phase}X", root / f"{phase}Y"


# ---------------------------------------------------------------------------
# synthetic two-domain data


def _draw_scene(rng: np.random.Generator, size: int) -> np.ndarray:
    """Random filled circles and rectangles on a dark, slightly noisy background."""
    yy, xx = np.mgrid[0:size, 0:size]
    img = np.empty((size, size, 3))
    img[:] = rng.uniform(10, 50, size=3)
    img += rng.normal(0, 4, size=img.shape)
    for _ in range(rng.integers(2, 5)):
        color = rng.uniform(0, 255, size=3)
        color[0] = rng.uniform(170, 255)  # shapes lean red in the source domain
        cy, cx = rng.uniform(0.15, 0.85, size=2) * size
        r = rng.uniform(0.08, 0.2) * size
        if rng.random() < 0.5:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r**2
        else:
            mask = (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r * rng.uniform(0.5, 1.5))
        img[mask] = color
    return np.clip(img, 0, 255)


def domain_shift(img: np.ndarray) -> np.ndarray:
    """Deterministic X -> Y appearance change: rotate colour channels
    (R->G->B->R) and invert brightness of the background."""
    shifted = img[..., [2, 0, 1]]
    return np.clip(255.0 - 0.6 * shifted, 0, 255)


def make_toy_images(n: int, size: int, seed: int, domain: str) -> list[np.ndarray]:
    rng = np.random.default_rng([seed, 0 if domain == "x" else 1])
    out = []
    for _ in range(n):
        scene = _draw_scene(rng, size)
        if domain == "y":
            scene = domain_shift(scene)
        out.append(np.rint(scene).astype(np.uint8))
    return out


def write_toy_dataset(root, n_train: int = 200, n_test: int = 64, size: int = 64, seed: int = 0) -> Path:
    """Write ``root/{trainX,trainY,testX,testY}`` PNG folders.

    The two domains are drawn from independent streams, so no image in X has
    a counterpart in Y.
    """
    root = Path(root)
    plan = [
        ("trainX", n_train, seed, "x"),
        ("trainY", n_train, seed + 1, "y"),
        ("testX", n_test, seed + 2, "x"),
        ("testY", n_test, seed + 3, "y"),
    ]
    for name, n, s, dom in plan:
        d = root / name
        os.makedirs(d, exist_ok=True)
        for i, arr in enumerate(make_toy_images(n, size, s, dom)):
            Image.fromarray(arr).save(d / f"{i:05d}.png")
    return root
