"""
Detection evaluation

Point matching within a radius, micro-averaged precision/recall/F1, and
the training experiments built on them (full vs. sparse annotations,
two-fold evaluation).
"""


import csv
import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from . import network
from .mderror import ConfigurationError
from .mdresult import DetectionSet, MatchResult, MetricsReport, PairedReport
from .pipeline import detect, filter_components
from .runconfig import RunConfig
from .synthdata import drop_annotations, patches_for


# importorator
__all__ = ['GateStats', 'match', 'metrics', 'train_on', 'evaluate_images',
           'gate_accuracy', 'kept_sigma_ratio', 'sparse_experiment',
           'two_fold_evaluation', 'metrics_table', 'write_metrics_csv']

logger = logging.getLogger(__name__)


def _points(value):
    if isinstance(value, DetectionSet):
        return value.points()
    return np.asarray(value, dtype=np.float64).reshape(-1, 2)


def _greedy_pairs(dist, within, det, gt):
    # globally greedy by ascending distance; ties go by coordinates, not by
    # list position, so relabeling the inputs never changes the pairing
    candidates = sorted((dist[i, j], *det[i], *gt[j], i, j) for i, j in zip(*np.nonzero(within)))
    used_det, used_gt = set(), set()
    pairs = []
    for d, *_, i, j in candidates:
        if i in used_det or j in used_gt:
            continue
        used_det.add(i)
        used_gt.add(j)
        pairs.append((int(i), int(j), float(d)))
    return pairs


def _optimal_pairs(dist, within, radius_px):
    # out-of-radius pairs cost more than any set of in-radius pairs can save,
    # so the assignment maximizes the pair count first, then minimizes distance
    penalty = min(dist.shape) * radius_px + 1.0
    cost = np.where(within, dist, penalty)
    rows, cols = linear_sum_assignment(cost)
    return [(int(i), int(j), float(dist[i, j])) for i, j in zip(rows, cols) if within[i, j]]


def match(detections, gts, radius_px=6.0, method='optimal'):
    """
    One-to-one matching of detections to ground truth within a radius

    A pair counts when its distance is <= radius_px.

    :param detections: DetectionSet or (N, 2) x, y
    :param gts: (M, 2) x, y in the same frame
    :param method: 'optimal' (maximum number of pairs, then minimum total
        distance) or 'greedy' (ascending distance, ties broken by detection
        then ground-truth coordinates)
    :returns: MatchResult with pairs sorted by detection index
    """
    det = _points(detections)
    gt = _points(gts)

    pairs = []
    if len(det) and len(gt):
        dist = cdist(det, gt)
        within = dist <= radius_px
        if method == 'greedy':
            pairs = _greedy_pairs(dist, within, det, gt)
        elif method == 'optimal':
            pairs = _optimal_pairs(dist, within, radius_px) if within.any() else []
        else:
            raise ConfigurationError('method', f'unknown matching method {method!r}')
    elif method not in ('greedy', 'optimal'):
        raise ConfigurationError('method', f'unknown matching method {method!r}')

    pairs.sort()
    matched_det = {i for i, _, _ in pairs}
    matched_gt = {j for _, j, _ in pairs}
    return MatchResult(pairs=pairs,
                       unmatched_detections=[i for i in range(len(det)) if i not in matched_det],
                       unmatched_gts=[j for j in range(len(gt)) if j not in matched_gt])


def _ratio(num, den):
    return num / den if den else 0.0


def metrics(match_results, method='MDN'):
    """
    Micro-averaged precision, recall and F1

    :param match_results: dict image id -> MatchResult, or a list of them
    """
    if not isinstance(match_results, dict):
        match_results = dict(enumerate(match_results))

    per_image = {key: (r.tp, r.fp, r.fn) for key, r in match_results.items()}
    tp = sum(v[0] for v in per_image.values())
    fp = sum(v[1] for v in per_image.values())
    fn = sum(v[2] for v in per_image.values())

    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2 * precision * recall, precision + recall)
    return MetricsReport(precision=precision, recall=recall, f1=f1, tp=tp, fp=fp, fn=fn,
                         per_image=per_image, method=method)


@dataclass
class GateStats:
    empty_ok: int = 0
    empty_total: int = 0
    object_ok: int = 0
    object_total: int = 0

    def __add__(self, other):
        return GateStats(self.empty_ok + other.empty_ok, self.empty_total + other.empty_total,
                         self.object_ok + other.object_ok, self.object_total + other.object_total)

    @property
    def empty_rate(self):
        return self.empty_ok / self.empty_total if self.empty_total else float('nan')

    @property
    def object_rate(self):
        return self.object_ok / self.object_total if self.object_total else float('nan')


def gate_accuracy(predictions, centers, patch_size, e_thresh=0.5):
    """
    How often the gate separates empty patches from patches with objects

    :param predictions: list of ((row, col), MixtureParams) for one image
    :param centers: ground-truth (N, 2) x, y of that image
    :returns: GateStats
    """
    centers = _points(centers)
    stats = GateStats()
    for (row, col), params in predictions:
        inside = ((centers[:, 0] >= col) & (centers[:, 0] < col + patch_size)
                  & (centers[:, 1] >= row) & (centers[:, 1] < row + patch_size))
        if inside.any():
            stats.object_total += 1
            stats.object_ok += params.gate_e >= e_thresh
        else:
            stats.empty_total += 1
            stats.empty_ok += params.gate_e < e_thresh
    return stats


def kept_sigma_ratio(predictions, patch_size, e_thresh=0.5, alpha_thresh=0.001):
    """max / min sigma (pixels) over all rendered components; nan if none."""
    sigmas = [comp.sigma * patch_size
              for _, params in predictions
              for comp in filter_components(params, e_thresh, alpha_thresh)]
    if not sigmas:
        return float('nan')
    return max(sigmas) / min(sigmas)


def train_on(images, config, progress=False):
    """Crops, dilates and trains on a list of AnnotatedImage."""
    net = config.network
    patches = patches_for(images, net.patch_size, net.patch_size, config.n_samples,
                          config.dilation_radius, config.seed)
    logger.info('training on %d patches from %d images', len(patches), len(images))
    return network.train(patches, net, progress)


def evaluate_images(images, checkpoint, pipeline_config, radius_px=6.0, method='MDN',
                    match_method='optimal'):
    """
    Detects on every image and matches against its centers

    :param method: display name of the report
    :param match_method: 'optimal' or 'greedy', see match

    :returns: (MetricsReport, {image id: DetectionSet})
    """
    results = {}
    detection_sets = {}
    for image in images:
        found = detect(image.pixels, checkpoint, pipeline_config)
        result = match(found, image.centers, radius_px, match_method)
        found.label_with(result)
        results[image.image_id] = result
        detection_sets[image.image_id] = found
    return metrics(results, method), detection_sets


def _halves(dataset):
    train = [image for image in dataset if image.split == 'train']
    test = [image for image in dataset if image.split == 'test']
    if not train or not test:
        raise ConfigurationError('dataset', 'needs both train and test images')
    return train, test


def sparse_experiment(dataset, drop_fraction=0.3, config=None, progress=False):
    """
    Trains on full and on sparsified training annotations, evaluates both on
    the untouched test half

    :param dataset: list of AnnotatedImage with 'train'/'test' splits
    :param drop_fraction: share of training centers removed
    :param config: RunConfig, defaults when None
    :returns: PairedReport
    """
    config = config or RunConfig()
    train, test = _halves(dataset)

    sparse_train = drop_annotations(train, drop_fraction, config.seed)
    full_ckpt, _ = train_on(train, config, progress)
    sparse_ckpt, _ = train_on(sparse_train, config, progress)

    full, _ = evaluate_images(test, full_ckpt, config.pipeline, config.radius, 'MDN (full)',
                              config.match_method)
    sparse, _ = evaluate_images(test, sparse_ckpt, config.pipeline, config.radius,
                                f'MDN (sparse {drop_fraction:g})', config.match_method)
    return PairedReport(full=full, sparse=sparse, drop_fraction=drop_fraction)


def two_fold_evaluation(dataset, config, progress=False):
    """
    Train on one half and test on the other, then swap; counts of both folds
    are pooled before the ratios are taken
    """
    first, second = _halves(dataset)
    results = {}
    for train, test in ((first, second), (second, first)):
        ckpt, _ = train_on(train, config, progress)
        for image in test:
            found = detect(image.pixels, ckpt, config.pipeline)
            results[image.image_id] = match(found, image.centers, config.radius,
                                            config.match_method)
    return metrics(results, 'MDN (two-fold)')


def metrics_table(reports):
    """Text table with Method, Precision, Recall, F1 columns."""
    width = max([len('Method')] + [len(r.method) for r in reports])
    lines = [f'{"Method":<{width}}  Precision  Recall  F1']
    for r in reports:
        lines.append(f'{r.method:<{width}}  {r.precision:<9.3f}  {r.recall:<6.3f}  {r.f1:.3f}')
    return '\n'.join(lines)


def write_metrics_csv(reports, path):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['method', 'precision', 'recall', 'f1', 'tp', 'fp', 'fn'])
        for r in reports:
            writer.writerow([r.method, f'{r.precision:.6f}', f'{r.recall:.6f}', f'{r.f1:.6f}',
                             r.tp, r.fp, r.fn])
