import numpy as np
import pytest
from scipy.spatial.distance import pdist, squareform

from mixturedetect.mderror import ConfigurationError, GenerationError
from mixturedetect.synthdata import (AnnotatedImage, SceneConfig, crop_patches, dilate_points,
                                     drop_annotations, generate_image, read_dataset,
                                     split_halves, synthesize_dataset, tile_offsets,
                                     write_dataset)


def scene(**kwargs):
    values = dict(image_size=120, blob_count=(8, 12), seed=3)
    values.update(kwargs)
    return SceneConfig(**values)


# scenes

def test_empty_scene():
    image, centers = generate_image(scene(blob_count=(0, 0)))
    assert centers.shape == (0, 2)
    assert image.shape == (120, 120)
    assert 0.0 <= image.min() and image.max() <= 1.0


def test_same_seed_same_scene():
    a_image, a_centers = generate_image(scene())
    b_image, b_centers = generate_image(scene())
    assert np.array_equal(a_image, b_image)
    assert np.array_equal(a_centers, b_centers)

    _, other = generate_image(scene(seed=4))
    assert not np.array_equal(a_centers, other)


def test_centers_are_integer_and_inside():
    config = scene()
    image, centers = generate_image(config)
    assert centers.dtype.kind == 'i'
    assert 8 <= len(centers) <= 12
    assert centers.min() >= 0 and centers.max() < config.image_size


def test_centers_are_local_maxima_without_noise():
    config = scene(noise_level=0.0, blob_count=(15, 20))
    image, centers = generate_image(config)
    padded = np.pad(image, 1, constant_values=-1.0)
    for x, y in centers:
        window = padded[y:y + 3, x:x + 3]
        assert image[y, x] == window.max()


@pytest.mark.parametrize('overrides', [
    {},
    {'touching_fraction': 1.0},
    {'texture_amplitude': 0.0, 'blob_radius': (4.0, 4.0)},
])
def test_default_scenes_have_their_centers_on_maxima_without_noise(overrides):
    for seed in range(3):
        config = SceneConfig(noise_level=0.0, seed=seed, **overrides)
        image, centers = generate_image(config)
        assert config.blob_count[0] <= len(centers) <= config.blob_count[1]
        padded = np.pad(image, 1, constant_values=-1.0)
        for x, y in centers:
            assert image[y, x] == padded[y:y + 3, x:x + 3].max()


def test_touching_pairs():
    config = scene(touching_fraction=1.0, blob_count=(10, 10), image_size=200)
    _, centers = generate_image(config)
    dist = squareform(pdist(centers.astype(float)))
    np.fill_diagonal(dist, np.inf)
    lo, hi = config.blob_radius
    # rounding to integer pixels moves a center by at most sqrt(0.5)
    assert dist.min() >= 0.8 * 2 * lo - 1.5
    assert np.all(dist[1:].min(axis=1) <= 1.2 * 2 * hi + 1.5)


def test_crowded_scene_fails_to_place():
    config = scene(image_size=20, blob_count=(200, 200), blob_radius=(8.0, 8.0), max_retries=5)
    with pytest.raises(GenerationError):
        generate_image(config)


def test_dataset_seeds_and_splits():
    first = synthesize_dataset(scene(), 3)
    second = synthesize_dataset(scene(), 3)
    assert [i.image_id for i in first] == ['img_0000', 'img_0001', 'img_0002']
    assert [i.split for i in first] == ['train', 'train', 'test']
    assert all(np.array_equal(a.centers, b.centers) for a, b in zip(first, second))
    assert not np.array_equal(first[0].pixels, first[1].pixels)


def test_split_halves_rounds_up():
    images = [AnnotatedImage(str(i), None, np.zeros((0, 2))) for i in range(5)]
    assert [i.split for i in split_halves(images)] == ['train'] * 3 + ['test'] * 2


# dilation

def test_dilation_stays_within_radius():
    targets = dilate_points([(25, 25), (10, 40)], n_samples=10, radius_px=6, seed=0)
    assert len(targets) == 20
    points = targets.points * 50
    assert np.all(np.hypot(*(points[:10] - (25, 25)).T) <= 6 + 1e-9)
    assert np.all(np.hypot(*(points[10:] - (10, 40)).T) <= 6 + 1e-9)


def test_dilation_is_centered():
    targets = dilate_points([(25, 24)], n_samples=10000, radius_px=6, seed=5)
    mean = targets.points.mean(axis=0) * 50
    assert np.hypot(*(mean - (25, 24))) < 0.3


def test_zero_radius_repeats_the_center():
    targets = dilate_points([(20, 30)], n_samples=4, radius_px=0, seed=0)
    assert np.allclose(targets.points, [(0.4, 0.6)] * 4)


def test_dilation_can_include_the_centers():
    targets = dilate_points([(20, 30)], n_samples=4, radius_px=6, seed=0, include_centers=True)
    assert len(targets) == 5
    assert np.allclose(targets.points[0], (0.4, 0.6))


def test_dilation_clips_to_the_patch():
    targets = dilate_points([(0, 0)], n_samples=50, radius_px=6, seed=1)
    assert targets.points.min() >= 0.0


def test_dilation_edge_cases():
    assert not dilate_points(np.zeros((0, 2)), seed=0).has_object
    with pytest.raises(ConfigurationError):
        dilate_points([(1, 1)], n_samples=0)


def test_dilation_is_seeded():
    a = dilate_points([(25, 25)], seed=11)
    b = dilate_points([(25, 25)], seed=11)
    assert np.array_equal(a.points, b.points)


# tiling and cropping

@pytest.mark.parametrize('height, width, size, stride, expected', [
    (500, 500, 50, 50, 100),
    (50, 50, 50, 50, 1),
    (500, 500, 50, 25, 361),
])
def test_tile_counts(height, width, size, stride, expected):
    assert len(tile_offsets(height, width, size, stride)) == expected


def test_last_tile_is_clamped():
    offsets = tile_offsets(120, 50, 50, 50)
    assert offsets == [(0, 0), (50, 0), (70, 0)]


def test_tiling_rejects_small_images():
    with pytest.raises(ConfigurationError):
        tile_offsets(40, 500, 50, 50)
    with pytest.raises(ConfigurationError):
        tile_offsets(500, 500, 50, 60)


def test_crop_translates_centers():
    image = np.zeros((500, 500))
    records = crop_patches(image, [(60, 60)], n_samples=5, seed=0)
    assert len(records) == 100

    owner = [r for r in records if r.targets.has_object]
    assert len(owner) == 1
    assert owner[0].offset == (50, 50)
    assert np.allclose(owner[0].targets.points[0], (0.2, 0.2))
    assert len(owner[0].targets) == 6
    assert np.array_equal(owner[0].raw_centers, [(60, 60)])


def test_crop_keeps_every_center_once():
    config = scene(image_size=200, blob_count=(20, 30))
    image, centers = generate_image(config)
    records = crop_patches(image, centers, patch_size=50, seed=0)
    kept = np.vstack([r.raw_centers for r in records])
    assert sorted(map(tuple, kept)) == sorted(map(tuple, centers.astype(float)))
    for r in records:
        assert r.pixels.shape == (50, 50)
        assert np.array_equal(r.pixels, image[r.offset[0]:r.offset[0] + 50,
                                              r.offset[1]:r.offset[1] + 50])


# annotation dropping

def _images(counts):
    rng = np.random.default_rng(0)
    return [AnnotatedImage(f'img_{i}', np.zeros((4, 4)), rng.integers(0, 100, size=(n, 2)))
            for i, n in enumerate(counts)]


def test_drop_counts():
    images = _images([40, 30, 30])
    sparse = drop_annotations(images, 0.3, seed=0)
    assert sum(len(i.centers) for i in sparse) == 70
    assert all(s.pixels is i.pixels for s, i in zip(sparse, images))
    for s, i in zip(sparse, images):
        original = set(map(tuple, i.centers))
        assert set(map(tuple, s.centers)) <= original


def test_drop_nothing():
    images = _images([5, 7])
    sparse = drop_annotations(images, 0.0, seed=0)
    assert all(np.array_equal(s.centers, i.centers) for s, i in zip(sparse, images))


@pytest.mark.parametrize('fraction', [1.0, -0.1])
def test_drop_fraction_range(fraction):
    with pytest.raises(ConfigurationError):
        drop_annotations(_images([3]), fraction)


# on-disk datasets

def test_dataset_round_trip(tmp_path):
    images = synthesize_dataset(scene(image_size=60, blob_count=(2, 4)), 3)
    manifest = write_dataset(images, tmp_path)
    assert manifest.read_text().splitlines() == [
        'images/img_0000.png,images/img_0000.csv,train',
        'images/img_0001.png,images/img_0001.csv,train',
        'images/img_0002.png,images/img_0002.csv,test',
    ]

    loaded = read_dataset(tmp_path)
    assert [i.image_id for i in loaded] == ['img_0000', 'img_0001', 'img_0002']
    for original, copy in zip(images, loaded):
        assert np.array_equal(copy.centers, original.centers)
        assert np.abs(copy.pixels - original.pixels).max() <= 0.5 / 255 + 1e-12
        assert copy.split == original.split

    assert [i.image_id for i in read_dataset(tmp_path, split='test')] == ['img_0002']


def test_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError, match='manifest'):
        read_dataset(tmp_path)
