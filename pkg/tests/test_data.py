import numpy as np
import pytest

from dmslearn.data import (
    ARCHETYPES,
    SLOTS_PER_DAY,
    gen_synthetic_load,
    household_features,
    kmeans,
    window_dataset,
)


def test_archetype_curves_have_48_slots():
    for arch in ARCHETYPES:
        curve = arch.daily_curve()
        assert curve.shape == (SLOTS_PER_DAY,)
        assert np.all(curve > 0)


def test_archetype_names():
    assert tuple(a.name for a in ARCHETYPES) == ("morning", "evening", "business")


def test_generator_is_deterministic():
    a = gen_synthetic_load(5, 3, seed=42)
    b = gen_synthetic_load(5, 3, seed=42)
    for pa, pb in zip(a, b):
        assert pa.archetype == pb.archetype
        assert np.array_equal(pa.series, pb.series)
    c = gen_synthetic_load(5, 3, seed=43)
    assert any(not np.array_equal(pa.series, pc.series) for pa, pc in zip(a, c))


def test_noise_free_series_is_weekly_periodic():
    profiles = gen_synthetic_load(4, 14, seed=0, noise_scale=0.0)
    for p in profiles:
        days = p.series.reshape(14, SLOTS_PER_DAY)
        for day in range(7):
            assert np.array_equal(days[day], days[day + 7])


def test_weekends_scale_whole_days():
    (p,) = gen_synthetic_load(1, 7, seed=1, noise_scale=0.0)
    days = p.series.reshape(7, SLOTS_PER_DAY)
    arch = next(a for a in ARCHETYPES if a.name == p.archetype)
    # days 5 and 6 of a week starting Monday
    assert np.allclose(days[5], days[0] * arch.weekend_factor)
    assert np.allclose(days[6], days[0] * arch.weekend_factor)
    assert np.array_equal(days[5], days[6])


def test_series_nonnegative():
    profiles = gen_synthetic_load(10, 5, seed=3, noise_scale=0.5)
    for p in profiles:
        assert np.all(p.series >= 0)


def test_generator_rejects_empty():
    with pytest.raises(ValueError):
        gen_synthetic_load(0, 5, seed=0)
    with pytest.raises(ValueError):
        gen_synthetic_load(5, 0, seed=0)


def test_household_features_shape():
    profiles = gen_synthetic_load(7, 4, seed=5)
    feats = household_features(profiles)
    assert feats.shape == (7, SLOTS_PER_DAY)
    assert np.allclose(feats[0], profiles[0].series.reshape(4, -1).mean(axis=0))


def test_kmeans_recovers_separated_blobs():
    rng = np.random.default_rng(0)
    blobs = np.concatenate(
        [
            rng.normal(0.0, 0.05, size=(20, 3)),
            rng.normal(5.0, 0.05, size=(20, 3)),
            rng.normal(-5.0, 0.05, size=(20, 3)),
        ]
    )
    result = kmeans(blobs, 3, seed=1)
    labels = result.labels
    assert len(set(labels[:20])) == 1
    assert len(set(labels[20:40])) == 1
    assert len(set(labels[40:])) == 1
    assert len({labels[0], labels[20], labels[40]}) == 3


def test_kmeans_inertia_decreases():
    rng = np.random.default_rng(2)
    feats = rng.uniform(size=(50, 4))
    result = kmeans(feats, 4, seed=0)
    hist = result.inertia_history
    assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))
    assert result.inertia == pytest.approx(hist[-1])
    assert result.iterations >= 1


def test_kmeans_deterministic_per_seed():
    rng = np.random.default_rng(4)
    feats = rng.uniform(size=(30, 5))
    a = kmeans(feats, 3, seed=9)
    b = kmeans(feats, 3, seed=9)
    assert np.array_equal(a.labels, b.labels)
    assert np.array_equal(a.centroids, b.centroids)


def test_kmeans_on_real_features_groups_archetypes():
    profiles = gen_synthetic_load(60, 14, seed=11, noise_scale=0.02)
    feats = household_features(profiles)
    result = kmeans(feats, 3, seed=0)
    # Most households of one archetype should land in one cluster.
    agree = 0
    for name in ("morning", "evening", "business"):
        members = [i for i, p in enumerate(profiles) if p.archetype == name]
        if not members:
            continue
        counts = np.bincount(result.labels[members], minlength=3)
        agree += counts.max()
    assert agree >= 0.9 * len(profiles)


def test_window_minimal_series():
    series = np.arange(10.0)
    splits = window_dataset(series, lookback=6, horizon=4)
    assert len(splits.train) == 1
    assert len(splits.val) == 0
    assert len(splits.test) == 0
    assert np.allclose(splits.train.targets[0], series[6:])


def test_window_split_sizes_and_order():
    series = np.arange(100.0)
    lookback, horizon = 10, 1
    splits = window_dataset(series, lookback, horizon)
    n = 100 - lookback - horizon + 1  # 90
    assert len(splits.train) == 63
    assert len(splits.val) == 13
    assert len(splits.test) == n - 63 - 13
    # chronological: every val target comes after every train target
    assert splits.train.targets.max() < splits.val.targets.min()
    assert splits.val.targets.max() < splits.test.targets.min()


def test_window_normalization_uses_train_stats_only():
    series = np.arange(100.0)
    splits = window_dataset(series, 10, 1)
    # train inputs span [0, 71]; normalized train range is exactly [0, 1]
    assert splits.lo == 0.0
    assert splits.hi == 71.0
    assert splits.train.features.min() == 0.0
    assert splits.train.features.max() == 1.0
    # later windows exceed 1 after the same affine map
    assert splits.test.features.max() > 1.0
    # targets keep raw units
    assert splits.test.targets.max() == 99.0


def test_window_zero_range_guard():
    splits = window_dataset(np.ones(50), 8, 1)
    assert np.all(splits.train.features == 0.0)
    assert np.all(splits.val.features == 0.0)


def test_window_too_short_rejected():
    with pytest.raises(ValueError):
        window_dataset(np.arange(5.0), lookback=4, horizon=2)


def test_window_accepts_profile_objects():
    (p,) = gen_synthetic_load(1, 3, seed=0)
    splits = window_dataset(p, lookback=48, horizon=1)
    total = len(splits.train) + len(splits.val) + len(splits.test)
    assert total == p.series.size - 48
