import math

import numpy as np
import pytest

from mixturedetect.evaluation import (GateStats, gate_accuracy, kept_sigma_ratio, match,
                                      metrics, metrics_table, sparse_experiment,
                                      two_fold_evaluation, write_metrics_csv)
from mixturedetect.mderror import ConfigurationError
from mixturedetect.mdresult import MatchResult, MetricsReport
from mixturedetect.mixture import MixtureParams
from mixturedetect.network import NetworkConfig
from mixturedetect.pipeline import PipelineConfig
from mixturedetect.runconfig import RunConfig
from mixturedetect.synthdata import SceneConfig, synthesize_dataset


# matching

def test_match_within_radius():
    assert match([(0, 0)], [(3, 4)], radius_px=6).tp == 1
    assert match([(0, 0)], [(3, 4)], radius_px=4).tp == 0
    # the radius is inclusive
    assert match([(0, 0)], [(3, 4)], radius_px=5).tp == 1


def test_one_ground_truth_two_detections():
    result = match([(0, 0), (1, 0)], [(0.5, 0)], radius_px=6)
    assert (result.tp, result.fp, result.fn) == (1, 1, 0)


def test_empty_sides():
    result = match(np.zeros((0, 2)), [(1, 1), (2, 2)])
    assert (result.tp, result.fp, result.fn) == (0, 0, 2)
    result = match([(1, 1)], np.zeros((0, 2)))
    assert (result.tp, result.fp, result.fn) == (0, 1, 0)


def test_optimal_beats_greedy_on_chains():
    det, gt = [(0, 0), (5, 0)], [(4, 0), (9.5, 0)]
    assert match(det, gt, 6, method='greedy').tp == 1
    optimal = match(det, gt, 6)
    assert optimal.tp == 2
    assert optimal.pairs == [(0, 0, 4.0), (1, 1, 4.5)]


def test_unknown_method():
    with pytest.raises(ConfigurationError):
        match([(0, 0)], [(0, 0)], method='nearest')


def _brute_force(det, gt, radius):
    # (pair count, total distance) of the best matching by exhaustive search
    best = [0, 0.0]

    def visit(i, used, count, total):
        if (count, -total) > (best[0], -best[1]):
            best[:] = [count, total]
        if i == len(det):
            return
        visit(i + 1, used, count, total)
        for j in range(len(gt)):
            d = math.dist(det[i], gt[j])
            if j not in used and d <= radius:
                visit(i + 1, used | {j}, count + 1, total + d)

    visit(0, frozenset(), 0, 0.0)
    return tuple(best)


def test_matching_agrees_with_exhaustive_search():
    rng = np.random.default_rng(42)
    for _ in range(200):
        det = [tuple(p) for p in rng.uniform(0, 30, size=(rng.integers(0, 7), 2))]
        gt = [tuple(p) for p in rng.uniform(0, 30, size=(rng.integers(0, 7), 2))]
        result = match(np.array(det).reshape(-1, 2), np.array(gt).reshape(-1, 2), radius_px=6)

        count, total = _brute_force(det, gt, 6)
        assert result.tp == count
        assert sum(d for _, _, d in result.pairs) == pytest.approx(total, abs=1e-9)
        assert result.tp + result.fp == len(det)
        assert result.tp + result.fn == len(gt)
        assert all(d <= 6 for _, _, d in result.pairs)


@pytest.mark.parametrize('method', ['optimal', 'greedy'])
def test_matching_ignores_point_order(method):
    # integer grids make equal distances common
    rng = np.random.default_rng(7)
    for _ in range(500):
        det = rng.integers(0, 9, size=(rng.integers(1, 7), 2)).astype(float)
        gt = rng.integers(0, 9, size=(rng.integers(1, 7), 2)).astype(float)
        result = match(det, gt, radius_px=3, method=method)
        shuffled = match(det[rng.permutation(len(det))], gt[rng.permutation(len(gt))],
                         radius_px=3, method=method)
        assert shuffled.tp == result.tp
        assert sum(d for *_, d in shuffled.pairs) == pytest.approx(sum(d for *_, d in result.pairs))


def test_greedy_tie_goes_to_the_lower_coordinate():
    for det in ([(0, 0), (2, 0)], [(2, 0), (0, 0)]):
        result = match(det, [(1, 0)], radius_px=6, method='greedy')
        assert [tuple(det[i]) for i, _, _ in result.pairs] == [(0, 0)]


# metrics

def test_micro_average():
    results = {
        'a': MatchResult(pairs=[(0, 0, 1.0), (1, 1, 1.0)], unmatched_gts=[2]),
        'b': MatchResult(unmatched_detections=[0, 1]),
    }
    report = metrics(results)
    assert (report.tp, report.fp, report.fn) == (2, 2, 1)
    assert report.precision == pytest.approx(0.5)
    assert report.recall == pytest.approx(2 / 3)
    assert report.f1 == pytest.approx(2 * 0.5 * (2 / 3) / (0.5 + 2 / 3))
    assert report.per_image == {'a': (2, 0, 1), 'b': (0, 2, 0)}


def test_counts_of_eight_two_two():
    result = MatchResult(pairs=[(i, i, 0.0) for i in range(8)], unmatched_detections=[8, 9],
                         unmatched_gts=[8, 9])
    report = metrics([result])
    assert (report.precision, report.recall) == pytest.approx((0.8, 0.8))
    assert report.f1 == pytest.approx(0.8)


def test_nothing_to_count():
    report = metrics([MatchResult()])
    assert (report.precision, report.recall, report.f1) == (0.0, 0.0, 0.0)


def test_self_match_is_perfect():
    points = np.random.default_rng(0).uniform(0, 100, size=(30, 2))
    report = metrics([match(points, points)])
    assert (report.precision, report.recall, report.f1) == (1.0, 1.0, 1.0)


def test_f1_lies_between_precision_and_recall():
    rng = np.random.default_rng(1)
    for _ in range(50):
        det = rng.uniform(0, 30, size=(rng.integers(1, 10), 2))
        gt = rng.uniform(0, 30, size=(rng.integers(1, 10), 2))
        r = metrics([match(det, gt)])
        assert 0.0 <= r.f1 <= 1.0
        if r.tp:
            assert min(r.precision, r.recall) - 1e-12 <= r.f1 <= max(r.precision, r.recall) + 1e-12


def _merge(results):
    # one MatchResult for several images, indices shifted past the earlier images
    merged = MatchResult()
    n_det = n_gt = 0
    for r in results:
        merged.pairs += [(i + n_det, j + n_gt, d) for i, j, d in r.pairs]
        merged.unmatched_detections += [i + n_det for i in r.unmatched_detections]
        merged.unmatched_gts += [j + n_gt for j in r.unmatched_gts]
        n_det += r.tp + r.fp
        n_gt += r.tp + r.fn
    return merged


def test_metrics_do_not_depend_on_image_grouping():
    rng = np.random.default_rng(3)
    results = [match(rng.uniform(0, 40, size=(rng.integers(0, 8), 2)),
                     rng.uniform(0, 40, size=(rng.integers(0, 8), 2)), radius_px=6)
               for _ in range(12)]
    per_image = metrics(results)
    regrouped = metrics({'first': _merge(results[:5]), 'rest': _merge(results[5:])})
    single = metrics([_merge(results)])

    for report in (regrouped, single):
        assert (report.tp, report.fp, report.fn) == (per_image.tp, per_image.fp, per_image.fn)
        assert (report.precision, report.recall, report.f1) == pytest.approx(
            (per_image.precision, per_image.recall, per_image.f1))


def test_table_and_csv(tmp_path):
    reports = [MetricsReport(0.5, 0.25, 1 / 3, 1, 1, 3, method='MDN (full)'),
               MetricsReport(1.0, 1.0, 1.0, 4, 0, 0, method='other')]
    table = metrics_table(reports).splitlines()
    assert table[0].split() == ['Method', 'Precision', 'Recall', 'F1']
    assert table[1].startswith('MDN (full)')
    assert table[2].split()[-1] == '1.000'

    path = tmp_path / 'metrics.csv'
    write_metrics_csv(reports, path)
    assert path.read_text().splitlines() == [
        'method,precision,recall,f1,tp,fp,fn',
        'MDN (full),0.500000,0.250000,0.333333,1,1,3',
        'other,1.000000,1.000000,1.000000,4,0,0',
    ]


# gate and component diagnostics

def _params(gate_e, sigmas=(0.1,)):
    k = len(sigmas)
    return MixtureParams(alphas=np.full(k, 1.0 / k), mus=np.full((k, 2), 0.5),
                         sigmas=np.asarray(sigmas), gate_e=gate_e)


def test_gate_accuracy():
    predictions = [((0, 0), _params(0.9)), ((0, 50), _params(0.8)),
                   ((50, 0), _params(0.1)), ((50, 50), _params(0.6))]
    stats = gate_accuracy(predictions, [(10, 10), (60, 10)], patch_size=50)
    assert (stats.object_ok, stats.object_total) == (2, 2)
    assert (stats.empty_ok, stats.empty_total) == (1, 2)
    assert stats.empty_rate == 0.5

    total = stats + GateStats(empty_ok=1, empty_total=2)
    assert total.empty_rate == 0.5 and total.object_rate == 1.0


def test_kept_sigma_ratio():
    predictions = [((0, 0), _params(0.9, (0.02, 0.04))), ((0, 50), _params(0.1, (0.5,)))]
    assert kept_sigma_ratio(predictions, 50) == pytest.approx(2.0)
    assert math.isnan(kept_sigma_ratio(predictions[1:], 50))


# experiments

@pytest.fixture
def tiny_run():
    config = RunConfig(
        scene=SceneConfig(image_size=40, blob_count=(2, 4), blob_radius=(3.0, 4.0), seed=5),
        network=NetworkConfig(K=2, patch_size=20, conv_blocks=((2, 3, 2),), fc_hidden=4,
                              epochs=1, batch_size=4, seed=5),
        pipeline=PipelineConfig(stride=20),
        n_samples=3, seed=5)
    return config.validate(), synthesize_dataset(config.scene, 2)


def test_sparse_experiment_without_dropping_changes_nothing(tiny_run):
    config, dataset = tiny_run
    paired = sparse_experiment(dataset, 0.0, config)
    assert paired.delta == {'precision': 0.0, 'recall': 0.0, 'f1': 0.0}
    assert (paired.full.tp, paired.full.fp, paired.full.fn) == \
        (paired.sparse.tp, paired.sparse.fp, paired.sparse.fn)


def test_two_fold_covers_every_image(tiny_run):
    config, dataset = tiny_run
    report = two_fold_evaluation(dataset, config)
    assert set(report.per_image) == {image.image_id for image in dataset}
    assert report.tp + report.fn == sum(len(image.centers) for image in dataset)


def test_experiments_need_both_halves(tiny_run):
    config, dataset = tiny_run
    for image in dataset:
        image.split = 'train'
    with pytest.raises(ConfigurationError):
        sparse_experiment(dataset, 0.3, config)
