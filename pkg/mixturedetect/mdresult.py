"""
Result records returned by the pipeline and the evaluation
"""


from dataclasses import dataclass, field

import numpy as np


# importorator
__all__ = ['Detection', 'DetectionSet', 'ProbabilityMap', 'MatchResult',
           'MetricsReport', 'PairedReport']


@dataclass(frozen=True)
class Detection:
    # global pixel coordinates, x = column
    x: float
    y: float
    score: float


@dataclass
class ProbabilityMap:
    grid: np.ndarray
    # number of patches that covered each pixel
    coverage: np.ndarray

    @property
    def shape(self):
        return self.grid.shape


@dataclass
class DetectionSet:
    detections: list = field(default_factory=list)

    # 'TP' / 'FP' per detection once matched against ground truth
    labels: list = None

    # inference by-products, kept for export
    probmap: ProbabilityMap = None
    predictions: list = None

    def __len__(self):
        return len(self.detections)

    def __iter__(self):
        return iter(self.detections)

    def points(self):
        """(N, 2) array of x, y."""
        return np.array([(d.x, d.y) for d in self.detections], dtype=np.float64).reshape(-1, 2)

    def scores(self):
        return np.array([d.score for d in self.detections], dtype=np.float64)

    def label_with(self, match_result):
        matched = {det for det, _, _ in match_result.pairs}
        self.labels = ['TP' if i in matched else 'FP' for i in range(len(self.detections))]
        return self


@dataclass
class MatchResult:
    # (detection index, gt index, distance)
    pairs: list = field(default_factory=list)

    # unmatched detections (false positives) and gts (false negatives)
    unmatched_detections: list = field(default_factory=list)
    unmatched_gts: list = field(default_factory=list)

    @property
    def tp(self):
        return len(self.pairs)

    @property
    def fp(self):
        return len(self.unmatched_detections)

    @property
    def fn(self):
        return len(self.unmatched_gts)


@dataclass
class MetricsReport:
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0

    # counts
    tp: int = 0
    fp: int = 0
    fn: int = 0

    # image id -> (tp, fp, fn)
    per_image: dict = field(default_factory=dict)

    # display name in tables
    method: str = 'MDN'


@dataclass
class PairedReport:
    full: MetricsReport
    sparse: MetricsReport
    drop_fraction: float = 0.0

    @property
    def delta(self):
        """sparse minus full, for precision, recall and f1."""
        return {
            'precision': self.sparse.precision - self.full.precision,
            'recall': self.sparse.recall - self.full.recall,
            'f1': self.sparse.f1 - self.full.f1,
        }
