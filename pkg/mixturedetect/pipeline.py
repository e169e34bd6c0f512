"""
Image-wide inference

tile -> predict per patch -> gate/alpha filter -> render per-patch mixture
maps -> stitch (mean over covering patches) -> local maxima.

Probability maps are rendered in normalized-patch density units and
evaluated at pixel centers ((col + 0.5) / size, (row + 0.5) / size).
"""


import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from skimage import draw, io

from .mderror import ConfigurationError, FormatError
from .mdresult import Detection, DetectionSet, ProbabilityMap
from .mixture import constrain
from .network import MDNetwork
from .synthdata import tile_offsets, write_image


# importorator
__all__ = ['PipelineConfig', 'Component', 'filter_components', 'render_probmap',
           'tile_and_predict', 'stitch', 'find_peaks', 'detect', 'save_probmap_png',
           'save_probmap_csv', 'save_detections_csv', 'load_detections_csv',
           'export_gate_scores', 'save_overlay']

logger = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    stride: int = 50
    e_thresh: float = 0.5
    alpha_thresh: float = 0.001
    min_distance_px: float = 6.0

    # absolute peak threshold; when None it is peak_rel * map maximum
    peak_threshold: float = None
    peak_rel: float = 0.05

    workers: int = 1
    batch_size: int = 64

    def validate(self, patch_size=None):
        if not 0.0 <= self.e_thresh <= 1.0:
            raise ConfigurationError('e_thresh', f'must lie in [0, 1], got {self.e_thresh}')
        if not 0.0 <= self.alpha_thresh <= 1.0:
            raise ConfigurationError('alpha_thresh', f'must lie in [0, 1], got {self.alpha_thresh}')
        if self.min_distance_px < 0:
            raise ConfigurationError('min_distance_px', 'must be >= 0')
        if self.peak_threshold is not None and self.peak_threshold < 0:
            raise ConfigurationError('peak_threshold', 'must be >= 0')
        if not 0.0 <= self.peak_rel <= 1.0:
            raise ConfigurationError('peak_rel', 'must lie in [0, 1]')
        if self.stride < 1 or (patch_size is not None and self.stride > patch_size):
            raise ConfigurationError('stride', f'must lie in [1, patch size], got {self.stride}')
        if self.workers < 1 or self.batch_size < 1:
            raise ConfigurationError('workers', 'workers and batch_size must be >= 1')
        return self


@dataclass(frozen=True)
class Component:
    alpha: float
    mu: tuple
    sigma: float


def filter_components(params, e_thresh=0.5, alpha_thresh=0.001):
    """
    Components worth rendering

    :returns: [] when gate_e < e_thresh, else the components with
        alpha >= alpha_thresh in their original order
    """
    if params.gate_e < e_thresh:
        return []
    return [Component(float(a), (float(mu[0]), float(mu[1])), float(s))
            for a, mu, s in zip(params.alphas, params.mus, params.sigmas)
            if a >= alpha_thresh]


def render_probmap(components, patch_size=50):
    """
    Mixture density of the kept components at every pixel center

    Alphas are not renormalized after filtering.
    """
    grid = np.zeros((patch_size, patch_size))
    if not components:
        return grid

    coords = (np.arange(patch_size) + 0.5) / patch_size
    for comp in components:
        dx2 = (coords - comp.mu[0]) ** 2
        dy2 = (coords - comp.mu[1]) ** 2
        d2 = dy2[:, np.newaxis] + dx2[np.newaxis, :]
        grid += comp.alpha * np.exp(-d2 / (2.0 * comp.sigma ** 2)) / (2.0 * np.pi * comp.sigma ** 2)
    return grid


def _patch_stack(image, offsets, patch_size):
    if image.ndim == 2:
        return np.stack([image[r:r + patch_size, c:c + patch_size] for r, c in offsets])
    return np.stack([image[r:r + patch_size, c:c + patch_size].transpose(2, 0, 1)
                     for r, c in offsets])


def tile_and_predict(image, checkpoint, stride=None, workers=1, batch_size=64):
    """
    One MixtureParams per tile

    :param image: (H, W) grayscale (or (H, W, 3) for 3-channel networks)
    :param checkpoint: Checkpoint
    :param stride: tile step, defaults to the patch size
    :param workers: threads evaluating batches of patches concurrently
    :returns: list of ((row, col), MixtureParams), row-major
    """
    network = MDNetwork.from_checkpoint(checkpoint)
    size = checkpoint.config.patch_size
    K = checkpoint.config.K
    image = np.asarray(image, dtype=np.float64)

    offsets = tile_offsets(image.shape[0], image.shape[1], size, stride or size)
    patches = _patch_stack(image, offsets, size)
    chunks = [slice(i, i + batch_size) for i in range(0, len(offsets), batch_size)]

    def run(chunk):
        return [constrain(raw, K) for raw in network.forward(patches[chunk])]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(chunk) for chunk in chunks]

    params = [p for chunk in results for p in chunk]
    return list(zip(offsets, params))


def stitch(grids, offsets, image_shape):
    """
    Per-pixel mean over the patches that cover each pixel

    Patches are accumulated in offset order, so the result does not depend on
    the order they are passed in.
    """
    height, width = image_shape[:2]
    total = np.zeros((height, width))
    coverage = np.zeros((height, width), dtype=np.int64)

    for idx in sorted(range(len(offsets)), key=lambda i: tuple(offsets[i])):
        (row, col), grid = offsets[idx], grids[idx]
        ph, pw = grid.shape
        if row < 0 or col < 0 or row + ph > height or col + pw > width:
            raise ConfigurationError('stitch', f'patch at {(row, col)} leaves the image')
        total[row:row + ph, col:col + pw] += grid
        coverage[row:row + ph, col:col + pw] += 1

    if np.any(coverage == 0):
        raise ConfigurationError('stitch', 'tiling leaves pixels uncovered')
    return ProbabilityMap(grid=total / coverage, coverage=coverage)


def find_peaks(probmap, min_distance_px=6.0, peak_threshold=None, peak_rel=0.05):
    """
    Local maxima of a probability map

    A pixel is a candidate when it equals the maximum over the disk of
    radius min_distance_px around it and exceeds the threshold. Candidates
    are then accepted by descending score (row-major first on ties) unless
    closer than min_distance_px to an accepted peak.

    :param probmap: ProbabilityMap or 2-D array
    :param peak_threshold: absolute threshold, default peak_rel * map maximum
    :returns: DetectionSet sorted by descending score
    """
    grid = probmap.grid if isinstance(probmap, ProbabilityMap) else np.asarray(probmap, dtype=np.float64)
    threshold = peak_rel * float(grid.max()) if peak_threshold is None else peak_threshold

    reach = int(np.ceil(min_distance_px))
    yy, xx = np.ogrid[-reach:reach + 1, -reach:reach + 1]
    footprint = yy ** 2 + xx ** 2 <= min_distance_px ** 2
    local_max = ndimage.maximum_filter(grid, footprint=footprint, mode='constant', cval=-np.inf)

    rows, cols = np.nonzero((grid == local_max) & (grid > threshold))
    scores = grid[rows, cols]
    order = np.argsort(-scores, kind='stable')

    accepted = []
    for i in order:
        point = np.array([cols[i], rows[i]], dtype=np.float64)
        if accepted:
            d2 = np.sum((np.asarray(accepted)[:, :2] - point) ** 2, axis=1)
            if np.any(d2 < min_distance_px ** 2):
                continue
        accepted.append((cols[i], rows[i], scores[i]))

    return DetectionSet([Detection(int(x), int(y), float(s)) for x, y, s in accepted])


def detect(image, checkpoint, config=None):
    """
    Full inference on one image

    tile_and_predict -> filter_components -> render_probmap -> stitch -> find_peaks

    :returns: DetectionSet carrying the stitched probmap and patch predictions
    """
    config = (config or PipelineConfig()).validate(checkpoint.config.patch_size)
    image = np.asarray(image, dtype=np.float64)
    size = checkpoint.config.patch_size

    predictions = tile_and_predict(image, checkpoint, config.stride, config.workers,
                                   config.batch_size)
    grids = [render_probmap(filter_components(params, config.e_thresh, config.alpha_thresh), size)
             for _, params in predictions]
    probmap = stitch(grids, [offset for offset, _ in predictions], image.shape)

    detections = find_peaks(probmap, config.min_distance_px, config.peak_threshold,
                            config.peak_rel)
    detections.probmap = probmap
    detections.predictions = predictions
    logger.debug('%d detections from %d patches', len(detections), len(predictions))
    return detections


def _sidecar(path):
    path = Path(path)
    return path.with_name(path.stem + '.max.txt')


def save_probmap_png(probmap, path):
    """16-bit PNG scaled by the map maximum; the maximum goes to <stem>.max.txt."""
    peak = float(probmap.grid.max())
    scaled = probmap.grid / peak if peak > 0 else np.zeros_like(probmap.grid)
    write_image(path, scaled, bits=16)
    _sidecar(path).write_text(f'{peak!r}\n')


def save_probmap_csv(probmap, path):
    np.savetxt(path, probmap.grid, delimiter=',', fmt='%.10g')


def save_detections_csv(detections, path):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['x', 'y', 'score'])
        for d in detections:
            writer.writerow([d.x, d.y, f'{d.score:.10g}'])


def load_detections_csv(path):
    """Reads 'x,y,score' (header optional, score optional)."""
    detections = []
    with open(path, newline='') as f:
        for n, row in enumerate(csv.reader(f), 1):
            if not row:
                continue
            if n == 1 and row[0].strip().lower() == 'x':
                continue
            try:
                x, y = float(row[0]), float(row[1])
                score = float(row[2]) if len(row) > 2 else 1.0
            except (ValueError, IndexError) as ex:
                raise FormatError(path, f'line {n}: expected x,y[,score]') from ex
            detections.append(Detection(x, y, score))
    return DetectionSet(detections)


def export_gate_scores(predictions, path):
    """Writes 'row,col,gate_e', one line per patch."""
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['row', 'col', 'gate_e'])
        for (row, col), params in predictions:
            writer.writerow([row, col, f'{params.gate_e:.6f}'])


def save_overlay(image, detections, gts, path, radius=6):
    """RGB PNG: ground truth as yellow circles, detections as red dots."""
    gray = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    rgb = np.rint(np.repeat(gray[..., np.newaxis], 3, axis=2) * 255).astype(np.uint8)
    shape = gray.shape[:2]

    for x, y in np.asarray(gts, dtype=np.float64).reshape(-1, 2):
        rr, cc = draw.circle_perimeter(int(round(y)), int(round(x)), int(radius), shape=shape)
        rgb[rr, cc] = (255, 255, 0)
    for d in detections:
        rr, cc = draw.disk((d.y, d.x), 1.5, shape=shape)
        rgb[rr, cc] = (255, 0, 0)
    io.imsave(str(path), rgb, check_contrast=False)
