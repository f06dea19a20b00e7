import math

import numpy as np
import pytest

from cqfield.grid import GridSpec
from cqfield.scene import SceneDef
from cqfield.stats import (STATS_HEADER, KeySet, MonitorSet, ProbeGeometry, StatsCollector, StatsRow, UniqueAccumulator,
                           consistency_probe, count_ratios, count_unique, export_stats, float_keys, neighbor_views,
                           read_stats)


def test_keyset_counts_new_keys():
    ks = KeySet(np.int64)
    assert ks.add(np.array([3, 1, 3])) == 2
    assert ks.add(np.array([1, 2])) == 1
    assert len(ks) == 3


def test_float_keys_fold_negative_zero():
    k = float_keys(np.array([[0.0, -0.0, 1.0], [-0.0, 0.0, 1.0], [0.0, 0.0, np.nextafter(1.0, 2.0)]]))
    assert k[0] == k[1] and k[0] != k[2]


def test_repeating_an_iteration_changes_nothing():
    g = GridSpec(-1, 1, 16)
    pts = np.random.default_rng(0).uniform(-1, 1, (500, 3))
    acc = count_unique(pts, g)
    first = (len(acc.continuous), len(acc.discrete))
    count_unique(pts, g, acc)
    assert (len(acc.continuous), len(acc.discrete)) == first


def test_continuous_count_equals_sample_count():
    pts = np.random.default_rng(1).uniform(-1, 1, (20_000, 3))
    acc = count_unique(pts, GridSpec(-1, 1, 64))
    assert len(acc.continuous) == 20_000
    assert len(acc.discrete) <= len(acc.continuous)


def test_discrete_count_matches_python_sets():
    g = GridSpec(-1, 1, 8)
    rng = np.random.default_rng(2)
    acc = UniqueAccumulator(g)
    cont, disc = set(), set()
    for _ in range(5):
        pts = rng.uniform(-1, 1, (300, 3))
        acc.add(pts)
        cont |= {tuple(p) for p in pts}
        disc |= {tuple(v) for v in g.voxel_index(pts)}
        assert (len(acc.continuous), len(acc.discrete)) == (len(cont), len(disc))


def test_accumulator_grid_mismatch():
    acc = UniqueAccumulator(GridSpec(-1, 1, 8))
    with pytest.raises(ValueError):
        count_unique(np.zeros((1, 3)), GridSpec(-1, 1, 16), acc)


def test_huge_grid_counts():
    acc = count_unique(np.array([[0.1, 0.2, 0.3], [0.1, 0.2, 0.3], [0.1, 0.2, 0.30001]]), GridSpec(-1, 1, 2**30))
    assert len(acc.discrete) == 2


def _geom(n):
    z = np.zeros((n, 3))
    return ProbeGeometry(z, z, np.ones(n, bool), z, z, z, np.ones(n, bool))


def test_coincident_samples_trigger_both_modes():
    scene = SceneDef()
    g = GridSpec(-1, 1, 256)
    p = np.array([0.5, 0.0, 0.0])  # on the sphere
    pts1 = np.stack([p + [0, 0.3, 0], p, p + [0, 0.6, 0]])[None]
    pts2 = np.stack([p + [0, 0, 0.5], p + [0, 0, 0.7], p])[None]
    assert consistency_probe(_geom(1), pts1, pts2, scene, g) == (1, 1)


def test_offset_beyond_voxel_blocks_discrete_trigger():
    scene = SceneDef()
    g = GridSpec(-1, 1, 256)
    p = np.array([0.5, 0.0, 0.0])
    q = p + 1.1 * g.interval * np.array([0.0, 1.0, 1.0])
    q *= 0.5 / np.linalg.norm(q)  # keep it on the surface
    assert abs(np.linalg.norm(q) - 0.5) < 1e-15
    assert np.any(g.voxel_index(p) != g.voxel_index(q))
    assert consistency_probe(_geom(1), p[None, None], q[None, None], scene, g)[1] == 0


def test_continuous_threshold():
    scene, g = SceneDef(), GridSpec(-1, 1, 256)
    p = np.array([0.0, 0.5, 0.0])
    near = p + [0.4 * g.interval / 16, 0, 0]
    far = p + [1.5 * g.interval / 16, 0, 0]
    assert consistency_probe(_geom(1), p[None, None], near[None, None], scene, g)[0] == 1
    assert consistency_probe(_geom(1), p[None, None], far[None, None], scene, g)[0] == 0


def test_off_surface_samples_never_trigger():
    scene, g = SceneDef(), GridSpec(-1, 1, 256)
    p = np.array([[[0.1, 0.1, 0.1]]])
    assert consistency_probe(_geom(1), p, p, scene, g) == (0, 0)


def test_neighbor_views_nearest_azimuth():
    from cqfield.scene import make_rig

    nb = neighbor_views(make_rig(6))
    assert nb.tolist() == [1, 0, 1, 2, 3, 0]


def test_monitor_set_is_seeded(small_dataset):
    a, b = MonitorSet.draw(small_dataset, 50, 3), MonitorSet.draw(small_dataset, 50, 3)
    assert np.array_equal(a.view, b.view) and np.array_equal(a.pixel, b.pixel)
    with pytest.raises(ValueError):
        MonitorSet.draw(small_dataset, 0, 3)


def test_collector_rows_are_monotone_and_dominated(small_dataset):
    rows = StatsCollector(small_dataset, GridSpec(-1, 1, 64), 128, 32, seed=2).run(12)
    for prev, row in zip(rows, rows[1:]):
        assert row.unique_continuous >= prev.unique_continuous
        assert row.consistency_discrete >= prev.consistency_discrete
    assert all(r.unique_discrete <= r.unique_continuous for r in rows)


def test_export_empty_rows(tmp_path):
    export_stats([], tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text() == ",".join(STATS_HEADER) + "\n"


def test_export_round_trip_and_logs(tmp_path):
    rows = [StatsRow(1, 10, 5, 0, 1), StatsRow(2, 20, 7, 3, 9)]
    path = tmp_path / "s.csv"
    export_stats(rows, path)
    assert read_stats(path) == rows
    lines = path.read_text().splitlines()
    assert len(lines[0].split(",")) == 9
    vals = [float(x) for x in lines[2].split(",")]
    assert vals[3] == pytest.approx(math.log(20), abs=1e-12)
    assert vals[7] == pytest.approx(math.log(3), abs=1e-12)
    assert [float(x) for x in lines[1].split(",")][7] == 0.0  # ln(max(0, 1))


def test_ratios():
    r = count_ratios(StatsRow(5, 100, 25, 2, 8))
    assert r == {"unique_ratio": 4.0, "consistency_ratio": 0.25}
