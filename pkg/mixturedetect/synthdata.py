"""
Synthetic annotated scenes

Bright blob "nuclei" (including touching pairs) on a textured, noisy
background, the point-set dilation used for training targets, patch
cropping and the on-disk dataset format:

    <dir>/manifest.txt          image_path,csv_path,split  (one line per image)
    <dir>/images/<id>.png       8-bit grayscale
    <dir>/images/<id>.csv       x,y integer pixel centers, no header

Pixel coordinates are (x, y) with origin top-left and x = column.
"""


import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage
from skimage import color, io
from tqdm import tqdm

from .mderror import ConfigurationError, FormatError, GenerationError
from .mixture import TargetSet


# importorator
__all__ = ['SceneConfig', 'AnnotatedImage', 'PatchRecord', 'generate_image',
           'synthesize_dataset', 'dilate_points', 'tile_offsets', 'crop_patches',
           'patches_for', 'drop_annotations', 'split_halves', 'write_dataset',
           'read_dataset', 'read_image', 'write_image', 'read_centers_csv',
           'write_centers_csv']

logger = logging.getLogger(__name__)

MANIFEST = 'manifest.txt'

# touching pairs sit at this multiple of the sum of their radii
TOUCH_RANGE = (0.8, 1.2)


@dataclass
class SceneConfig:
    image_size: int = 500
    blob_count: tuple = (60, 120)
    blob_radius: tuple = (4.0, 8.0)
    blob_intensity: tuple = (0.55, 0.9)
    background_intensity: tuple = (0.1, 0.2)
    touching_fraction: float = 0.2
    noise_level: float = 0.03
    texture_amplitude: float = 0.05
    seed: int = 0
    max_retries: int = 500

    def __post_init__(self):
        self.blob_count = tuple(int(v) for v in self.blob_count)
        self.blob_radius = tuple(float(v) for v in self.blob_radius)
        self.blob_intensity = tuple(float(v) for v in self.blob_intensity)
        self.background_intensity = tuple(float(v) for v in self.background_intensity)

    def validate(self, patch_size=1):
        if self.image_size < max(patch_size, 3):
            raise ConfigurationError(
                'image_size', f'{self.image_size} is smaller than the patch size {patch_size}')
        for name in ('blob_count', 'blob_radius', 'blob_intensity', 'background_intensity'):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigurationError(name, f'range ({lo}, {hi}) is not ordered')
        if self.blob_count[0] < 0:
            raise ConfigurationError('blob_count', 'counts must be >= 0')
        if self.blob_radius[0] <= 0:
            raise ConfigurationError('blob_radius', 'radii must be > 0')
        for name in ('blob_intensity', 'background_intensity'):
            lo, hi = getattr(self, name)
            if lo < 0 or hi > 1:
                raise ConfigurationError(name, 'intensities must lie in [0, 1]')
        if not 0.0 <= self.touching_fraction <= 1.0:
            raise ConfigurationError('touching_fraction', 'must lie in [0, 1]')
        if self.noise_level < 0 or self.texture_amplitude < 0:
            raise ConfigurationError('noise_level', 'noise and texture must be >= 0')
        if self.max_retries < 1:
            raise ConfigurationError('max_retries', 'must be >= 1')
        return self


@dataclass
class AnnotatedImage:
    image_id: str
    pixels: np.ndarray
    centers: np.ndarray
    split: str = 'train'


@dataclass
class PatchRecord:
    """
    One training/inference patch

    raw_centers are global pixel (x, y); targets are the dilated points in
    normalized patch coordinates; offset is (row, col) in the parent image.
    """
    pixels: np.ndarray
    targets: TargetSet = field(default_factory=TargetSet)
    raw_centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    offset: tuple = (0, 0)
    parent_id: str = ''


def _place_blobs(config, rng):
    size = config.image_size
    margin = 1
    count = int(rng.integers(config.blob_count[0], config.blob_count[1] + 1))
    centers = []
    radii = []

    for _ in range(count):
        radius = float(rng.uniform(*config.blob_radius))
        for _attempt in range(config.max_retries):
            partner = None
            if centers and rng.random() < config.touching_fraction:
                partner = int(rng.integers(len(centers)))
                angle = rng.uniform(0.0, 2.0 * np.pi)
                dist = rng.uniform(*TOUCH_RANGE) * (radius + radii[partner])
                cand = np.rint(centers[partner] + dist * np.array([np.cos(angle), np.sin(angle)]))
            else:
                cand = rng.integers(margin, size - margin, size=2).astype(np.float64)

            if cand.min() < margin or cand.max() > size - 1 - margin:
                continue
            if centers:
                placed = np.asarray(centers)
                d = np.hypot(*(placed - cand).T)
                sums = np.asarray(radii) + radius
                if np.any(d < TOUCH_RANGE[0] * sums):
                    continue
                if partner is not None and d[partner] > TOUCH_RANGE[1] * sums[partner]:
                    continue
            centers.append(cand)
            radii.append(radius)
            break
        else:
            raise GenerationError(
                'generate_image', f'could not place blob {len(centers) + 1} of {count} '
                                  f'after {config.max_retries} tries')

    return np.asarray(centers, dtype=np.int64).reshape(-1, 2), np.asarray(radii)


def generate_image(config):
    """
    Renders one synthetic scene

    Each blob is a Gaussian dome of its own peak intensity composited with
    max() over the background, so without pixel noise every listed center
    is a local intensity maximum belonging to exactly one blob.

    :param config: SceneConfig (the seed fixes the whole scene)
    :returns: (image (size, size) float in [0, 1], centers (N, 2) int x,y)
    :raises GenerationError: if the blobs cannot be placed
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    size = config.image_size

    centers, radii = _place_blobs(config, rng)

    background = np.full((size, size), rng.uniform(*config.background_intensity))
    if config.texture_amplitude > 0:
        texture = ndimage.gaussian_filter(rng.normal(size=(size, size)), sigma=8.0)
        texture /= max(texture.std(), 1e-12)
        background += config.texture_amplitude * texture

    blobs = np.zeros((size, size))
    for (x, y), radius in zip(centers, radii):
        peak = rng.uniform(*config.blob_intensity)
        reach = int(math.ceil(3 * radius))
        r0, r1 = max(0, y - reach), min(size, y + reach + 1)
        c0, c1 = max(0, x - reach), min(size, x + reach + 1)
        rows, cols = np.ogrid[r0:r1, c0:c1]
        dome = peak * np.exp(-((rows - y) ** 2 + (cols - x) ** 2) / (2.0 * (radius / 2.0) ** 2))
        blobs[r0:r1, c0:c1] = np.maximum(blobs[r0:r1, c0:c1], dome)

    image = np.maximum(background, blobs)
    if config.noise_level > 0:
        image += config.noise_level * rng.normal(size=(size, size))
    return np.clip(image, 0.0, 1.0), centers


def split_halves(images):
    """First half (rounded up) of the list is 'train', the rest 'test'."""
    n_train = (len(images) + 1) // 2
    for i, image in enumerate(images):
        image.split = 'train' if i < n_train else 'test'
    return images


def synthesize_dataset(config, n_images, progress=False):
    """
    Generates n_images scenes with per-image seeds derived from config.seed
    """
    config.validate()
    children = np.random.SeedSequence(config.seed).spawn(n_images)
    images = []
    for i, child in enumerate(tqdm(children, desc='synth', disable=not progress)):
        scene = replace(config, seed=int(child.generate_state(1)[0]))
        pixels, centers = generate_image(scene)
        images.append(AnnotatedImage(image_id=f'img_{i:04d}', pixels=pixels, centers=centers))
    return split_halves(images)


def dilate_points(centers, n_samples=10, radius_px=6.0, seed=None, patch_size=50,
                  include_centers=False):
    """
    Replaces each center by points sampled around it

    Samples come from an isotropic Gaussian on the center with
    std = radius_px / 3, redrawn until they fall within radius_px.

    :param centers: (N, 2) patch-local pixel (x, y)
    :param n_samples: points per center, >= 1
    :param radius_px: truncation radius in pixels
    :param seed: int seed or numpy Generator
    :param patch_size: pixels per normalized unit
    :param include_centers: also emit each center itself, ahead of its samples
    :returns: TargetSet in normalized patch coordinates (clipped to [0, 1])
    """
    if n_samples < 1:
        raise ConfigurationError('n_samples', f'must be >= 1, got {n_samples}')
    rng = np.random.default_rng(seed)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    std = radius_px / 3.0

    points = []
    for center in centers:
        if include_centers:
            points.append(center[np.newaxis])
        kept = np.zeros((0, 2))
        while len(kept) < n_samples:
            draw = center + rng.normal(scale=std, size=(n_samples, 2))
            inside = np.sum((draw - center) ** 2, axis=1) <= radius_px ** 2
            kept = np.vstack([kept, draw[inside]])
        points.append(kept[:n_samples])

    if not points:
        return TargetSet()
    return TargetSet(np.clip(np.vstack(points) / patch_size, 0.0, 1.0))


def tile_offsets(height, width, patch_size, stride):
    """
    Row-major (row, col) tile origins covering the image

    The last tile in each direction is clamped to the border when the
    stride does not land on it exactly.
    """
    def starts(extent):
        positions = list(range(0, extent - patch_size + 1, stride))
        if positions[-1] != extent - patch_size:
            positions.append(extent - patch_size)
        return positions

    if height < patch_size or width < patch_size:
        raise ConfigurationError(
            'image', f'{height}x{width} image is smaller than the {patch_size} px patch')
    if not 1 <= stride <= patch_size:
        raise ConfigurationError('stride', f'must lie in [1, {patch_size}], got {stride}')
    return [(r, c) for r in starts(height) for c in starts(width)]


def crop_patches(image, centers, patch_size=50, stride=None, n_samples=10, radius_px=6.0,
                 seed=None, parent_id='', include_centers=True):
    """
    Cuts an annotated image into patches with dilated targets

    A center belongs to every patch whose half-open window
    [offset, offset + size) contains it. Empty patches are kept.

    :param image: (H, W) grayscale image
    :param centers: (N, 2) global pixel (x, y)
    :param stride: tile step, defaults to patch_size
    :returns: list of PatchRecord, row-major
    :raises ConfigurationError: if the image is smaller than a patch
    """
    image = np.asarray(image, dtype=np.float64)
    stride = patch_size if stride is None else stride
    rng = np.random.default_rng(seed)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)

    records = []
    for row, col in tile_offsets(image.shape[0], image.shape[1], patch_size, stride):
        inside = ((centers[:, 0] >= col) & (centers[:, 0] < col + patch_size)
                  & (centers[:, 1] >= row) & (centers[:, 1] < row + patch_size))
        raw = centers[inside]
        if len(raw):
            targets = dilate_points(raw - (col, row), n_samples, radius_px, rng,
                                    patch_size, include_centers)
        else:
            targets = TargetSet()
        records.append(PatchRecord(pixels=image[row:row + patch_size, col:col + patch_size].copy(),
                                   targets=targets, raw_centers=raw, offset=(row, col),
                                   parent_id=parent_id))
    return records


def patches_for(images, patch_size=50, stride=None, n_samples=10, radius_px=6.0, seed=0):
    """crop_patches over a list of AnnotatedImage with per-image derived seeds."""
    children = np.random.SeedSequence(seed).spawn(len(images))
    records = []
    for image, child in zip(images, children):
        records.extend(crop_patches(image.pixels, image.centers, patch_size, stride,
                                    n_samples, radius_px, np.random.default_rng(child),
                                    image.image_id))
    return records


def drop_annotations(dataset, fraction=0.3, seed=None):
    """
    Removes floor(fraction * N) centers chosen uniformly over the dataset

    :param dataset: list of AnnotatedImage (pixels untouched)
    :param fraction: share of centers to remove, 0 <= fraction < 1
    :returns: new list of AnnotatedImage
    """
    if not 0.0 <= fraction < 1.0:
        raise ConfigurationError('fraction', f'must lie in [0, 1), got {fraction}')
    counts = [len(image.centers) for image in dataset]
    total = sum(counts)
    n_drop = int(math.floor(fraction * total + 1e-9))

    rng = np.random.default_rng(seed)
    keep = np.ones(total, dtype=bool)
    if n_drop:
        keep[rng.choice(total, size=n_drop, replace=False)] = False
    logger.info('dropping %d of %d annotations', n_drop, total)

    out = []
    start = 0
    for image, count in zip(dataset, counts):
        mask = keep[start:start + count]
        centers = np.asarray(image.centers).reshape(-1, 2)[mask]
        out.append(replace(image, centers=centers))
        start += count
    return out


def write_image(path, pixels, bits=8):
    """Saves a [0, 1] grayscale array as an 8- or 16-bit PNG."""
    scale, dtype = (255, np.uint8) if bits == 8 else (65535, np.uint16)
    data = np.rint(np.clip(pixels, 0.0, 1.0) * scale).astype(dtype)
    io.imsave(str(path), data, check_contrast=False)


def read_image(path):
    """Loads an image as a float grayscale array in [0, 1]."""
    data = io.imread(str(path))
    if data.ndim == 3:
        data = color.rgb2gray(data[..., :3])
        return data.astype(np.float64)
    if data.dtype == np.uint16:
        return data.astype(np.float64) / 65535.0
    if data.dtype == np.uint8:
        return data.astype(np.float64) / 255.0
    return data.astype(np.float64)


def write_centers_csv(path, centers):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        for x, y in np.asarray(centers).reshape(-1, 2):
            writer.writerow([int(round(x)), int(round(y))])


def read_centers_csv(path):
    """Reads 'x,y' rows (no header) into an (N, 2) array."""
    rows = []
    with open(path, newline='') as f:
        for n, row in enumerate(csv.reader(f), 1):
            if not row:
                continue
            try:
                x, y = (float(v) for v in row[:2])
            except ValueError as ex:
                raise FormatError(path, f'line {n}: expected x,y') from ex
            rows.append((x, y))
    return np.asarray(rows, dtype=np.float64).reshape(-1, 2)


def write_dataset(images, out_dir):
    """
    Writes PNG/CSV pairs and the manifest

    :returns: path of the manifest
    """
    out = Path(out_dir)
    (out / 'images').mkdir(parents=True, exist_ok=True)
    lines = []
    for image in images:
        png = f'images/{image.image_id}.png'
        centers = f'images/{image.image_id}.csv'
        write_image(out / png, image.pixels)
        write_centers_csv(out / centers, image.centers)
        lines.append(f'{png},{centers},{image.split}')

    manifest = out / MANIFEST
    manifest.write_text(''.join(line + '\n' for line in lines))
    return manifest


def read_dataset(dataset_dir, split=None):
    """
    Loads a dataset written by write_dataset

    :param split: keep only images of this split ('train' / 'test')
    :raises FileNotFoundError: if the manifest is missing
    :raises FormatError: on malformed manifest lines
    """
    root = Path(dataset_dir)
    manifest = root / MANIFEST
    if not manifest.is_file():
        raise FileNotFoundError(2, 'manifest not found', str(manifest))

    images = []
    for n, line in enumerate(manifest.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split(',')]
        if len(parts) != 3:
            raise FormatError(manifest, f'line {n}: expected image_path,csv_path,split')
        image_path, csv_path, image_split = parts
        if split is not None and image_split != split:
            continue
        images.append(AnnotatedImage(image_id=Path(image_path).stem,
                                     pixels=read_image(root / image_path),
                                     centers=read_centers_csv(root / csv_path),
                                     split=image_split))
    return images
